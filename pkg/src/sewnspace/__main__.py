"""
Entry point for the sewnspace command line.
"""

from .cli import app


def main():
    """Main entry point for the command line."""
    app()


if __name__ == "__main__":
    main()
