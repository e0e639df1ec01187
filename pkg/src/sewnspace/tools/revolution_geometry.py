"""
Hypersurfaces of revolution over tunnel curves and the assembled tunnel.

Rotating the plane curve (x0(s), x1(s)) about the x0 axis in R^4 sweeps a
hypersurface whose slice at s is a round 2-sphere of radius x1(s). The
assembled tunnel glues two spherical collars B(p, delta/2) minus B(p, delta0)
to two copies of that piece.
"""

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger

from ..errors import ConstructionError, ParameterError
from .tunnel_curve import (
    DEFAULT_ALPHA_BEND,
    CurvatureProfile,
    PlaneCurve,
    build_step_profile,
    integrate_curve,
    smooth_profile,
    verify_bend_condition,
)

logger = get_logger(__name__)

DEFAULT_SMOOTH_FRACTION = 0.05
DEFAULT_STEP_FRACTION = 1.0 / 2000.0


def geodesic_ball_volume(rho, K: float = 1.0):
    """Volume of a geodesic ball of radius rho in the 3-sphere of curvature K."""
    sk = math.sqrt(K)
    rho = np.asarray(rho, dtype=float)
    value = math.pi / K ** 1.5 * (2.0 * sk * rho - np.sin(2.0 * sk * rho))
    return float(value) if value.ndim == 0 else value


def tube_volume(r, K: float = 1.0):
    """Volume of the radius-r tube around a closed geodesic of the curvature-K 3-sphere."""
    r = np.asarray(r, dtype=float)
    value = 2.0 * math.pi ** 2 * np.sin(math.sqrt(K) * r) ** 2 / K ** 1.5
    return float(value) if value.ndim == 0 else value


def scalar_curvature_profile(c: PlaneCurve) -> np.ndarray:
    """Scalar curvature of the revolution hypersurface at every sample."""
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.sin(c.theta) / c.x1
        return 2.0 * q * (q - 2.0 * c.k)


def scalar_curvature(c: PlaneCurve, i: int) -> float:
    """
    Scalar curvature (2 sin(theta)/x1)(sin(theta)/x1 - 2k) at sample i.

    Raises:
        ParameterError: If x1 is not positive at sample i
    """
    if not c.x1[i] > 0.0:
        raise ParameterError(f"x1 must be positive at sample {i}, got {c.x1[i]}")
    q = math.sin(c.theta[i]) / c.x1[i]
    return 2.0 * q * (q - 2.0 * c.k[i])


def volume_Uprime(c: PlaneCurve) -> float:
    """Volume of the revolution piece: trapezoid rule for the integral of 4 pi x1^2 ds."""
    if c.n_samples < 2:
        return 0.0
    y = 4.0 * math.pi * c.x1 ** 2
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * c.ds))


@dataclass(frozen=True)
class TunnelSurface:
    """
    A tunnel built over one smoothed tunnel curve.

    Attributes:
        curve: Integrated tunnel curve.
        K: Ambient curvature.
        delta: Outer radius; the tunnel replaces B(p, delta/2).
        delta0: Inner radius the curve starts from.
        profile: Curvature profile the curve was integrated from, if known.
    """
    curve: PlaneCurve
    K: float
    delta: float
    delta0: float
    profile: Optional[CurvatureProfile] = None

    def __post_init__(self):
        if not 0.0 < self.delta0 < self.delta / 2.0 < 1.0:
            raise ParameterError(
                f"need 0 < delta0 < delta/2 < 1, got delta0={self.delta0}, delta={self.delta}"
            )


@dataclass(frozen=True)
class GeometrySummary:
    """Scalar-curvature, volume and diameter estimates of one tunnel."""
    min_scal: float
    volume_Uprime: float
    volume_U: float
    diam_upper: float
    neck_area: float
    vol_bound_ok: bool
    delta: float
    delta0: float
    epsilon: float
    ball_target: float
    bend_margin: float
    suggested_delta0: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def build_tunnel(
    K: float,
    delta: float,
    delta0: Optional[float] = None,
    alpha_bend: float = DEFAULT_ALPHA_BEND,
    smooth_fraction: float = DEFAULT_SMOOTH_FRACTION,
    step: Optional[float] = None,
    tail_length: Optional[float] = None,
) -> TunnelSurface:
    """
    Build, smooth and integrate the tunnel curve for radii (delta, delta0).

    Args:
        K: Ambient curvature
        delta: Outer radius
        delta0: Inner radius (default delta / 10)
        alpha_bend: Final-bend coefficient
        smooth_fraction: Smoothing width as a fraction of the shortest step
            segment (0 keeps the step profile)
        step: Sample spacing (default delta0 / 2000)
        tail_length: Horizontal tail length (default delta0 / 10)

    Returns:
        TunnelSurface
    """
    delta0 = delta / 10.0 if delta0 is None else delta0
    if not 0.0 < delta0 < delta / 2.0 < 1.0:
        raise ParameterError(f"need 0 < delta0 < delta/2 < 1, got delta0={delta0}, delta={delta}")
    if not 0.0 <= smooth_fraction < 1.0:
        raise ParameterError(f"smooth_fraction must lie in [0, 1), got {smooth_fraction}")

    profile = build_step_profile(K, delta0, alpha_bend, tail_length)
    profile = smooth_profile(profile, smooth_fraction * min(profile.lengths))
    curve = integrate_curve(profile, step or delta0 * DEFAULT_STEP_FRACTION)
    return TunnelSurface(curve=curve, K=K, delta=delta, delta0=delta0, profile=profile)


def _volume_U(K: float, delta: float, delta0: float, volume_piece: float) -> float:
    return 2.0 * (geodesic_ball_volume(delta / 2.0, K) - geodesic_ball_volume(delta0, K)) + 2.0 * volume_piece


def _volume_within(K: float, delta: float, delta0: float, epsilon: float, **build_kwargs) -> bool:
    tunnel = build_tunnel(K, delta, delta0, **build_kwargs)
    target = 2.0 * geodesic_ball_volume(delta / 2.0, K)
    volume = _volume_U(K, delta, delta0, volume_Uprime(tunnel.curve))
    return (1.0 - epsilon) * target <= volume <= (1.0 + epsilon) * target


def search_delta0(K: float, delta: float, epsilon: float, iterations: int = 25, **build_kwargs) -> float:
    """
    Largest delta0 <= delta/10 whose tunnel volume is within (1 +- epsilon) of 2 V_ball(delta/2).

    Raises:
        ConstructionError: If no admissible delta0 is found by halving
    """
    hi = delta / 10.0
    if _volume_within(K, delta, hi, epsilon, **build_kwargs):
        return hi

    lo = hi
    for _ in range(30):
        lo /= 2.0
        if _volume_within(K, delta, lo, epsilon, **build_kwargs):
            break
    else:
        raise ConstructionError(f"no delta0 <= {delta / 10.0} satisfies the volume bound for epsilon={epsilon}")

    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if _volume_within(K, delta, mid, epsilon, **build_kwargs):
            lo = mid
        else:
            hi = mid
    return lo


def tunnel_summary(t: TunnelSurface, epsilon: float = 0.05, search: bool = True) -> GeometrySummary:
    """
    Scalar curvature, volume and diameter bound of an assembled tunnel.

    diam_upper = pi*delta + delta + 2L is the tunnel length h(delta).

    Args:
        t: Tunnel to summarise
        epsilon: Relative volume tolerance
        search: Bisect for an admissible delta0 when the bound fails

    Raises:
        ConstructionError: If the scalar curvature is not positive everywhere
    """
    if epsilon <= 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    c = t.curve
    scal = scalar_curvature_profile(c)
    min_scal = float(np.min(scal))
    if not min_scal > 0.0:
        raise ConstructionError(f"tunnel has nonpositive scalar curvature {min_scal:.3e} at sample {int(np.argmin(scal))}")

    piece = volume_Uprime(c)
    volume_U = _volume_U(t.K, t.delta, t.delta0, piece)
    target = 2.0 * geodesic_ball_volume(t.delta / 2.0, t.K)
    ok = (1.0 - epsilon) * target <= volume_U <= (1.0 + epsilon) * target

    suggested = None
    if not ok and search:
        alpha = t.profile.alpha_bend if t.profile is not None else DEFAULT_ALPHA_BEND
        suggested = search_delta0(t.K, t.delta, epsilon, alpha_bend=alpha)
        logger.info("volume bound fails at delta0=%g; largest admissible delta0=%g", t.delta0, suggested)

    return GeometrySummary(
        min_scal=min_scal,
        volume_Uprime=piece,
        volume_U=volume_U,
        diam_upper=math.pi * t.delta + t.delta + 2.0 * c.L,
        neck_area=4.0 * math.pi * float(np.min(c.x1)) ** 2,
        vol_bound_ok=ok,
        delta=t.delta,
        delta0=t.delta0,
        epsilon=epsilon,
        ball_target=target,
        bend_margin=verify_bend_condition(c).min_margin,
        suggested_delta0=suggested,
    )


@lru_cache(maxsize=128)
def tunnel_length(delta: float, K: float = 1.0, delta0: Optional[float] = None) -> float:
    """Tunnel traversal length h(delta) with the default tunnel construction."""
    return tunnel_summary(build_tunnel(K, delta, delta0), search=False).diam_upper
