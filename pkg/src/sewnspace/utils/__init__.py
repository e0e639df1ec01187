"""
Utility modules for caching, output files and row chunking.
"""

from .cache import ResultCache, parameter_hash
from .chunker import RowBlock, RowChunker
from .file_handler import FileHandler

__all__ = ["ResultCache", "parameter_hash", "RowChunker", "RowBlock", "FileHandler"]
