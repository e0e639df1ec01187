"""
Command-line front end: tunnel, sew, pull, probe, converge and serve.

Every command prints one JSON document on stdout; logs go to stderr.
"""

from pathlib import Path
from typing import Any, Dict, Optional

import typer
from mcp.server.fastmcp.utilities.logging import configure_logging, get_logger
from pydantic import ValidationError

from .config import load_config
from .errors import AcceptanceError, ParameterError, SewnSpaceError
from .runner import ExperimentRunner

logger = get_logger(__name__)

app = typer.Typer(
    name="sewnspace",
    help="Tunnels, sewing and pulled-string experiments on sampled 3-spheres.",
    add_completion=False,
    no_args_is_help=True,
)
runner = ExperimentRunner()

ConfigOpt = typer.Option(None, "--config", help="TOML run configuration; flags override it")
OutOpt = typer.Option(None, "--out", help="Output directory")


@app.callback()
def _root(log_level: str = typer.Option("WARNING", "--log-level", help="DEBUG, INFO, WARNING or ERROR")):
    configure_logging(log_level.upper())


def _execute(command: str, config_path: Optional[Path], out: Optional[Path], section: Dict[str, Any]) -> None:
    try:
        config = load_config(config_path, {"out": out, command: section})
        typer.echo(runner._format_result(runner.run(command, config)))
    except ValidationError as e:
        typer.echo(runner._error_response(f"invalid configuration: {e}", command, ParameterError.exit_code))
        raise typer.Exit(ParameterError.exit_code)
    except AcceptanceError as e:
        typer.echo(runner._error_response(str(e), command, e.exit_code, e.checks))
        raise typer.Exit(e.exit_code)
    except SewnSpaceError as e:
        logger.error("%s failed: %s", command, e)
        typer.echo(runner._error_response(str(e), command, e.exit_code))
        raise typer.Exit(e.exit_code)
    except Exception as e:
        logger.exception("%s failed", command)
        typer.echo(runner._error_response(f"{command} failed: {str(e)}", command, SewnSpaceError.exit_code))
        raise typer.Exit(SewnSpaceError.exit_code)


@app.command()
def tunnel(
    K: Optional[float] = typer.Option(None, "--K", help="Ambient curvature in (0, 1]"),
    delta0: Optional[float] = typer.Option(None, "--delta0", help="Inner ball radius"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Outer radius (default 10 delta0)"),
    alpha_bend: Optional[float] = typer.Option(None, "--alpha-bend", help="Final-bend coefficient"),
    smooth_width: Optional[float] = typer.Option(None, "--smooth-width", help="Transition width (0 = step profile)"),
    step: Optional[float] = typer.Option(None, "--step", help="Sample spacing of the curve"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="Relative tunnel volume tolerance"),
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
):
    """Build and summarise one tunnel curve."""
    _execute("tunnel", config, out, {
        "K": K, "delta0": delta0, "delta": delta, "alpha_bend": alpha_bend,
        "smooth_width": smooth_width, "step": step, "epsilon": epsilon,
    })


@app.command()
def sew(
    n: Optional[int] = typer.Option(None, "--n", help="Number of tunnels"),
    delta: Optional[float] = typer.Option(None, "--delta", help="Ball radius"),
    delta0: Optional[float] = typer.Option(None, "--delta0", help="Inner tunnel radius (default delta/10)"),
    shell_width: Optional[float] = typer.Option(None, "--shell-width", help="Shell thickness (default delta/4)"),
    rho_connect: Optional[float] = typer.Option(None, "--rho-connect", help="Graph connection radius"),
    N: Optional[int] = typer.Option(None, "--N", help="Sample size"),
    K: Optional[float] = typer.Option(None, "--K", help="Curvature"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Threads for shortest paths"),
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
):
    """Sew the sampled sphere along a great circle."""
    _execute("sew", config, out, {
        "n": n, "delta": delta, "delta0": delta0, "shell_width": shell_width,
        "rho_connect": rho_connect, "N": N, "K": K, "seed": seed, "workers": workers,
    })


@app.command()
def pull(
    K_set: Optional[str] = typer.Option(None, "--K-set", help="Set to pull; 'geodesic' is the great circle"),
    N: Optional[int] = typer.Option(None, "--N", help="Sample size"),
    K: Optional[float] = typer.Option(None, "--K", help="Curvature"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed"),
    a_tube_factor: Optional[float] = typer.Option(None, "--a-tube-factor", help="Pulled tube radius in string spacings"),
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
):
    """Pull the great circle of the sampled sphere to a point."""
    _execute("pull", config, out, {
        "K_set": K_set, "N": N, "K": K, "seed": seed, "a_tube_factor": a_tube_factor,
    })


@app.command()
def probe(
    space: Optional[str] = typer.Option(None, "--space", help="sphere, pulled or a .npz container"),
    r: Optional[str] = typer.Option(None, "--r", help="Radii: a:b:h or a,b,c"),
    at: Optional[str] = typer.Option(None, "--at", help="all, p0 or a node index"),
    N: Optional[int] = typer.Option(None, "--N", help="Sample size"),
    K: Optional[float] = typer.Option(None, "--K", help="Curvature"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed"),
    max_centers: Optional[int] = typer.Option(None, "--max-centers", help="Cap on probe centres with --at all"),
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
):
    """Estimate scalar curvature from ball volumes."""
    _execute("probe", config, out, {
        "space": space, "r": r, "at": at, "N": N, "K": K, "seed": seed, "max_centers": max_centers,
    })


@app.command()
def converge(
    schedule: Optional[str] = typer.Option(None, "--schedule", help="default, default:LEN or delta@n,..."),
    r: Optional[str] = typer.Option(None, "--r", help="Radii for ball volumes at p0"),
    N: Optional[int] = typer.Option(None, "--N", help="Sample size"),
    K: Optional[float] = typer.Option(None, "--K", help="Curvature"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Threads for row scans"),
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
):
    """Run a sewing schedule against the pulled-string space."""
    _execute("converge", config, out, {
        "schedule": schedule, "r": r, "N": N, "K": K, "seed": seed, "workers": workers,
    })


@app.command()
def serve():
    """Run the MCP server on stdio."""
    from .server import app as mcp_app

    mcp_app.run()
