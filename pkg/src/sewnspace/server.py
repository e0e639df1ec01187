"""
MCP server exposing the sewn-space experiments as tools.
"""

import asyncio
from typing import Any, Dict, Optional

from mcp.server.fastmcp import FastMCP
from pydantic import ValidationError

from .config import load_config
from .errors import AcceptanceError, ParameterError, SewnSpaceError
from .runner import ExperimentRunner

# Create FastMCP app
app = FastMCP("Sewn Space Lab")

runner = ExperimentRunner()


async def _run(command: str, out_dir: str, config_file: Optional[str], section: Dict[str, Any]) -> str:
    try:
        config = load_config(config_file, {"out": out_dir, command: section})
        result = await asyncio.to_thread(runner.run, command, config)
        return runner._format_result(result)
    except ValidationError as e:
        return runner._error_response(f"invalid configuration: {e}", command, ParameterError.exit_code)
    except AcceptanceError as e:
        return runner._error_response(str(e), command, e.exit_code, e.checks)
    except SewnSpaceError as e:
        return runner._error_response(str(e), command, e.exit_code)
    except Exception as e:
        return runner._error_response(f"{command} failed: {str(e)}", command, 1)


@app.tool()
async def build_tunnel_curve(
    out_dir: str,
    delta0: float = 0.01,
    K: float = 1.0,
    alpha_bend: float = None,
    smooth_width: float = None,
    config_file: str = None,
) -> str:
    """Build a positive-scalar-curvature tunnel curve and summarise its geometry.

    Args:
        out_dir: Directory for curve.csv, profile.json and summary.json
        delta0: Inner ball radius
        K: Ambient curvature in (0, 1]
        alpha_bend: Final-bend coefficient
        smooth_width: Transition width (0 keeps the step profile)
        config_file: Optional TOML configuration

    Returns:
        JSON string with the summary and acceptance checks
    """
    return await _run("tunnel", out_dir, config_file, {
        "delta0": delta0, "K": K, "alpha_bend": alpha_bend, "smooth_width": smooth_width,
    })


@app.tool()
async def sew_sphere(
    out_dir: str,
    n: int = 3,
    delta: float = 0.2,
    N: int = 8000,
    seed: int = 0,
    config_file: str = None,
) -> str:
    """Sew a sampled unit 3-sphere along a great circle with n tunnels.

    Args:
        out_dir: Directory for plan.json, volume.json and sewn.npz
        n: Number of tunnels
        delta: Ball radius
        N: Sample size
        seed: Sampling seed
        config_file: Optional TOML configuration

    Returns:
        JSON string with the edited-region diameter, its bound and the volume defect
    """
    return await _run("sew", out_dir, config_file, {"n": n, "delta": delta, "N": N, "seed": seed})


@app.tool()
async def pull_string(out_dir: str, N: int = 20000, seed: int = 0, config_file: str = None) -> str:
    """Pull the great circle of a sampled 3-sphere to a single point.

    Args:
        out_dir: Directory for pulled.json
        N: Sample size
        seed: Sampling seed
        config_file: Optional TOML configuration

    Returns:
        JSON string with the pulled space size, p0 and the mass bookkeeping
    """
    return await _run("pull", out_dir, config_file, {"N": N, "seed": seed})


@app.tool()
async def probe_scalar_curvature(
    out_dir: str,
    space: str = "sphere",
    r: str = "0.3:0.6:0.05",
    at: str = "all",
    N: int = 20000,
    seed: int = 0,
    config_file: str = None,
) -> str:
    """Estimate scalar curvature from ball-volume deficits.

    Args:
        out_dir: Directory for probe.csv and probe.json
        space: 'sphere', 'pulled' or a .npz container
        r: Radii ('a:b:h' or 'a,b,c')
        at: 'all', 'p0' or a node index
        N: Sample size
        seed: Sampling seed
        config_file: Optional TOML configuration

    Returns:
        JSON string with scal_est per radius
    """
    return await _run("probe", out_dir, config_file, {"space": space, "r": r, "at": at, "N": N, "seed": seed})


@app.tool()
async def run_convergence(
    out_dir: str,
    schedule: str = "default",
    r: str = "0.2:0.6:0.1",
    N: int = 8000,
    seed: int = 0,
    config_file: str = None,
) -> str:
    """Run a sewing schedule and measure convergence to the pulled-string space.

    Args:
        out_dir: Directory for convergence.csv, ball_vol_j*.csv and report.json
        schedule: 'default', 'default:LEN' or 'delta@n,...'
        r: Radii for the ball volumes at p0
        N: Sample size
        seed: Sampling seed
        config_file: Optional TOML configuration

    Returns:
        JSON string with per-step distortions and trend flags
    """
    return await _run("converge", out_dir, config_file, {"schedule": schedule, "r": r, "N": N, "seed": seed})


@app.tool()
async def get_cache_stats() -> str:
    """Report the runner's cache of sampled and pulled spaces.

    Returns:
        JSON string with cache statistics
    """
    return runner._format_result({"success": True, "operation": "cache_stats", **runner.cache.get_stats()})
