"""
Bending curvature profiles and the plane curves they integrate to.

A tunnel curve starts on the sphere of radius delta0 around the excised ball
centre, follows the round metric for a short arc, then bends through a chain
of constant-curvature segments until its normal angle reaches pi/4, makes one
final bend to pi/2 and leaves horizontally. Rotating it about the x0 axis
gives a hypersurface of positive scalar curvature whenever the bend condition
k < sin(theta) / (2 x1) holds along the curve.

Segment lengths are carried explicitly next to the breakpoints: the inductive
segments shrink geometrically, and past a few dozen steps their lengths fall
below the float resolution of the absolute arclength.
"""

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger
from scipy.integrate import cumulative_trapezoid, quad
from scipy.optimize import brentq

from ..errors import ConstructionError, ParameterError

logger = get_logger(__name__)

ALPHA_MIN = (2.0 - math.sqrt(2.0)) / 2.0
ALPHA_MAX = math.sqrt(2.0) / 4.0
DEFAULT_ALPHA_BEND = 0.32
# b_i / b_{i-1} never exceeds this along the inductive bend
CONTRACTION_BOUND = 1.0 + 0.25 * math.sin(-math.pi / 4 + math.cos(-math.pi / 4) / 8)
MAX_INDUCTIVE_STEPS = 10_000
TRANSITION_SAMPLES = 16
TAIL_SNAP = 1e-9

CURVE_CSV_HEADER = ("s", "x0", "x1", "phi", "theta", "k")


def _template_scalar(x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    f = math.exp(-1.0 / x)
    h = math.exp(-1.0 / (1.0 - x))
    return f / (f + h)


def transition_template(x) -> np.ndarray:
    """
    Smooth nondecreasing step g with g = 0 on (-inf, 0] and g = 1 on [1, inf).

    g(x) = f(x) / (f(x) + f(1 - x)) with f(x) = exp(-1/x) for x > 0 and 0
    otherwise. g(x) + g(1 - x) = 1, so the template has mass 1/2 on [0, 1].
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    y = 1.0 - x
    f = np.exp(-1.0 / np.where(x > 0, x, 1.0)) * (x > 0)
    h = np.exp(-1.0 / np.where(y > 0, y, 1.0)) * (y > 0)
    return f / (f + h)


@lru_cache(maxsize=None)
def _template_integral_scalar(x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return x - 0.5
    if x > 0.5:
        return x - 0.5 + _template_integral_scalar(1.0 - x)
    value, _ = quad(_template_scalar, 0.0, x, epsabs=1e-15, epsrel=1e-13, limit=200)
    return value


def template_integral(x) -> np.ndarray:
    """G(x) = integral of the transition template from 0 to x (vectorised)."""
    arr = np.asarray(x, dtype=float)
    flat = [_template_integral_scalar(float(v)) for v in arr.ravel()]
    return np.array(flat, dtype=float).reshape(arr.shape)


def _segment_turn(k_prev: float, k_cur: float, length: float, width: float) -> float:
    """Integral of the (possibly smoothed) curvature over one segment."""
    if width <= 0.0:
        return k_cur * length
    return k_prev * width + (k_cur - k_prev) * width * 0.5 + k_cur * (length - width)


def propagate_arc(x0, x1, phi, k: float, ds):
    """
    Exact endpoint of a constant-curvature stretch of length ds.

    Uses the chord form 2 sin(k ds / 2) / k, which stays accurate as k ds -> 0
    and reduces to the straight step for k = 0.
    """
    ds = np.asarray(ds, dtype=float)
    half = 0.5 * k * ds
    chord = ds * np.sinc(half / np.pi)
    mid = phi + half
    return x0 + chord * np.cos(mid), x1 + chord * np.sin(mid), phi + k * ds


@dataclass(frozen=True)
class CurvatureProfile:
    """
    Piecewise curvature function k(s) of a tunnel curve.

    Segment j covers [s_breaks[j], s_breaks[j+1]] with value k_values[j]. On a
    smoothed profile (beta > 0) every segment j >= 1 is entered through the
    transition template over smooth_width, except the compensation segment
    (index len(k_values) - 2) which falls from the final bend value to zero
    across its full width beta.

    Attributes:
        K: Curvature of the ambient sphere.
        delta0: Radius of the inner ball the curve starts on.
        s_breaks: Increasing breakpoints [0, s0, s1, ..., s_{n+1}, L].
        k_values: Curvature per segment; first -sqrt(K), last 0.
        alpha_bend: Final-bend coefficient, k_{n+1} = alpha_bend / b_n.
        smooth_width: Transition width of the smoothing (0 for step profiles).
        beta: Width of the compensation segment (0 for step profiles).
        lengths: Segment lengths; derived from s_breaks when not given.
        b_values: Heights b_0..b_n of the curve at s_0..s_n.
        theta_values: Normal angles theta_0..theta_n at s_0..s_n.
        contraction_ratios: b_i / b_{i-1} over full inductive steps.
    """
    K: float
    delta0: float
    s_breaks: Tuple[float, ...]
    k_values: Tuple[float, ...]
    alpha_bend: float = DEFAULT_ALPHA_BEND
    smooth_width: float = 0.0
    beta: float = 0.0
    lengths: Tuple[float, ...] = ()
    b_values: Tuple[float, ...] = ()
    theta_values: Tuple[float, ...] = ()
    contraction_ratios: Tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("s_breaks", "k_values", "lengths", "b_values", "theta_values", "contraction_ratios"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

        if len(self.s_breaks) != len(self.k_values) + 1:
            raise ParameterError("s_breaks must have exactly one more entry than k_values")
        if self.s_breaks[0] != 0.0:
            raise ParameterError("s_breaks must start at 0")
        if not self.lengths:
            object.__setattr__(self, "lengths", tuple(float(v) for v in np.diff(self.s_breaks)))
        if len(self.lengths) != len(self.k_values) or min(self.lengths) <= 0.0:
            raise ParameterError("segment lengths must be positive, one per segment")
        if self.smooth_width < 0.0 or self.beta < 0.0:
            raise ParameterError("smooth_width and beta must be nonnegative")

    @property
    def L(self) -> float:
        return self.s_breaks[-1]

    @property
    def sqrt_K(self) -> float:
        return math.sqrt(self.K)

    @property
    def is_smooth(self) -> bool:
        return self.beta > 0.0

    @property
    def n_steps(self) -> int:
        """Number of inductive segments."""
        return max(len(self.b_values) - 1, 0)

    @property
    def compensation_index(self) -> Optional[int]:
        return len(self.k_values) - 2 if self.is_smooth else None

    @property
    def start_point(self) -> Tuple[float, float]:
        return 0.0, math.sin(self.delta0) / self.sqrt_K

    @property
    def phi_start(self) -> float:
        return self.delta0 - math.pi / 2

    @property
    def theta_start(self) -> float:
        return self.delta0

    def transition_widths(self) -> np.ndarray:
        """Width of the entry transition of every segment (0 = jump)."""
        widths = np.zeros(len(self.k_values))
        if self.is_smooth:
            comp = self.compensation_index
            widths[1:comp] = self.smooth_width
            widths[comp] = self.beta
        return widths

    def segment_turns(self) -> np.ndarray:
        widths = self.transition_widths()
        ks = self.k_values
        return np.array([
            _segment_turn(ks[j - 1] if j else ks[0], ks[j], self.lengths[j], widths[j])
            for j in range(len(ks))
        ])

    def total_turn(self) -> float:
        """Integral of k over [0, L]."""
        return math.fsum(self.segment_turns())

    def evaluate(self, s) -> np.ndarray:
        """Evaluate the (smoothed) curvature at arclengths s."""
        s = np.asarray(s, dtype=float)
        breaks = np.asarray(self.s_breaks)
        ks = np.asarray(self.k_values)
        j = np.clip(np.searchsorted(breaks, s, side="right") - 1, 0, len(ks) - 1)
        k_prev = np.where(j > 0, ks[np.maximum(j - 1, 0)], ks[0])
        widths = self.transition_widths()[j]
        u = np.where(widths > 0, (s - breaks[j]) / np.where(widths > 0, widths, 1.0), 1.0)
        return k_prev + (ks[j] - k_prev) * transition_template(u)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "K": self.K,
            "delta0": self.delta0,
            "alpha_bend": self.alpha_bend,
            "smooth_width": self.smooth_width,
            "beta": self.beta,
            "smooth": self.is_smooth,
            "L": self.L,
            "n_steps": self.n_steps,
            "s_breaks": list(self.s_breaks),
            "k_values": list(self.k_values),
            "lengths": list(self.lengths),
            "b_values": list(self.b_values),
            "theta_values": list(self.theta_values),
            "contraction_ratios": list(self.contraction_ratios),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CurvatureProfile":
        keys = ("K", "delta0", "s_breaks", "k_values", "alpha_bend", "smooth_width", "beta",
                "lengths", "b_values", "theta_values", "contraction_ratios")
        return cls(**{k: data[k] for k in keys if k in data})


@dataclass(frozen=True, eq=False)
class PlaneCurve:
    """
    Arclength-sampled plane curve gamma(s) = (x0(s), x1(s)).

    ds, dx0 and dx1 hold the per-interval increments as integrated, which keep
    full relative precision where absolute coordinates no longer resolve them.
    """
    s: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    k: np.ndarray
    ds: np.ndarray
    dx0: np.ndarray
    dx1: np.ndarray
    milestones: Tuple[int, ...] = ()

    @property
    def L(self) -> float:
        return float(self.s[-1])

    @property
    def n_samples(self) -> int:
        return len(self.s)

    @property
    def tail_start(self) -> int:
        return self.milestones[-1] if self.milestones else self.n_samples - 1

    def arclength_defect(self) -> float:
        """Max deviation of the finite-difference speed from 1."""
        if len(self.ds) == 0:
            return 0.0
        speed = np.hypot(self.dx0, self.dx1) / self.ds
        return float(np.max(np.abs(speed - 1.0)))

    def x0_strictly_increasing(self) -> bool:
        return bool(np.all(self.dx0 > 0.0))

    def rows(self):
        for row in zip(self.s, self.x0, self.x1, self.phi, self.theta, self.k):
            yield tuple(float(v) for v in row)


@dataclass(frozen=True)
class BendReport:
    """Per-sample margins sin(theta)/(2 x1) - k of the bend condition."""
    margins: np.ndarray = field(repr=False)
    min_margin: float
    argmin: int

    @property
    def ok(self) -> bool:
        return self.min_margin > 0.0


def _validate_bend_parameters(K: float, delta0: float, alpha_bend: float) -> None:
    if not 0.0 < K <= 1.0:
        raise ParameterError(f"K must lie in (0, 1], got {K}")
    if not 0.0 < delta0 < 1.0:
        raise ParameterError(f"delta0 must lie in (0, 1), got {delta0}")
    if not ALPHA_MIN < alpha_bend < ALPHA_MAX:
        raise ParameterError(
            f"alpha_bend must lie in ({ALPHA_MIN:.6f}, {ALPHA_MAX:.6f}), got {alpha_bend}"
        )


def build_step_profile(
    K: float,
    delta0: float,
    alpha_bend: float = DEFAULT_ALPHA_BEND,
    tail_length: Optional[float] = None,
) -> CurvatureProfile:
    """
    Build the piecewise-constant bending profile.

    Args:
        K: Ambient sphere curvature in (0, 1]
        delta0: Inner ball radius in (0, 1)
        alpha_bend: Final-bend coefficient in ((2 - sqrt 2)/2, sqrt 2 / 4)
        tail_length: Length of the horizontal tail (default delta0 / 10)

    Returns:
        Step profile with recursion diagnostics

    Raises:
        ParameterError: If a parameter is out of range or the initial angle
            is not in (0, pi/4)
        ConstructionError: If the induction does not reach pi/4
    """
    _validate_bend_parameters(K, delta0, alpha_bend)
    tail_length = delta0 / 10.0 if tail_length is None else tail_length
    if tail_length <= 0.0:
        raise ParameterError(f"tail_length must be positive, got {tail_length}")

    sqrt_k = math.sqrt(K)
    s0 = delta0 / 2.0
    theta = delta0 - sqrt_k * s0
    if theta <= 0.0:
        raise ParameterError(f"delta0={delta0} gives nonpositive initial angle {theta}")
    if theta >= math.pi / 4:
        raise ParameterError(f"delta0={delta0} gives initial angle {theta} >= pi/4; no bending steps left")

    x0, x1, phi = 0.0, math.sin(delta0) / sqrt_k, delta0 - math.pi / 2
    x0, x1, phi = (float(v) for v in propagate_arc(x0, x1, phi, -sqrt_k, s0))

    lengths = [s0]
    ks = [-sqrt_k]
    bs = [x1]
    thetas = [theta]
    ratios = []

    while theta < math.pi / 4:
        if len(ks) > MAX_INDUCTIVE_STEPS:
            raise ConstructionError(f"bend induction did not reach pi/4 within {MAX_INDUCTIVE_STEPS} steps")
        b = bs[-1]
        k = math.sin(theta) / (4.0 * b)
        ds = b / 2.0
        theta_full = theta + math.sin(theta) / 8.0
        full = propagate_arc(x0, x1, phi, k, ds)
        ratios.append(float(full[1]) / b)

        if theta_full >= math.pi / 4:
            ds = (math.pi / 4 - theta) / k
            x0, x1, _ = (float(v) for v in propagate_arc(x0, x1, phi, k, ds))
            theta, phi = math.pi / 4, -math.pi / 4
        else:
            x0, x1, phi = (float(v) for v in full)
            theta = theta_full

        lengths.append(ds)
        ks.append(k)
        bs.append(x1)
        thetas.append(theta)

    k_bend = alpha_bend / bs[-1]
    lengths += [(math.pi / 4) / k_bend, tail_length]
    ks += [k_bend, 0.0]
    s_breaks = np.concatenate([[0.0], np.cumsum(lengths)])

    logger.info(
        "step profile: delta0=%g n=%d b_n=%.3e L=%.6g", delta0, len(bs) - 1, bs[-1], s_breaks[-1]
    )
    return CurvatureProfile(
        K=K,
        delta0=delta0,
        s_breaks=tuple(s_breaks),
        k_values=tuple(ks),
        alpha_bend=alpha_bend,
        lengths=tuple(lengths),
        b_values=tuple(bs),
        theta_values=tuple(thetas),
        contraction_ratios=tuple(ratios),
    )


def smooth_profile(p: CurvatureProfile, smooth_width: float) -> CurvatureProfile:
    """
    Replace the jumps of a step profile by smooth transitions.

    Each jump is spread over smooth_width with the transition template; the
    turning lost that way is recovered by a compensation segment of width
    beta, on which the curvature falls from k_{n+1} to 0, so that the total
    turn stays pi/2 - theta(0).

    Args:
        p: Step profile from build_step_profile
        smooth_width: Transition width (0 returns p unchanged)

    Returns:
        Smoothed profile

    Raises:
        ParameterError: If smooth_width is negative, not below the shortest
            segment, or p is already smooth
        ConstructionError: If beta cannot be solved within the final bend length
    """
    if smooth_width == 0.0:
        return p
    if smooth_width < 0.0:
        raise ParameterError(f"smooth_width must be nonnegative, got {smooth_width}")
    if p.is_smooth:
        raise ParameterError("profile is already smoothed")
    if smooth_width >= min(p.lengths):
        raise ParameterError(
            f"smooth_width={smooth_width:.3e} must be below the shortest segment {min(p.lengths):.3e}"
        )

    ks = p.k_values
    bend = len(ks) - 2
    target = math.pi / 2 - p.theta_start
    turn_before = math.fsum(
        _segment_turn(ks[j - 1] if j else ks[0], ks[j], p.lengths[j], smooth_width if j else 0.0)
        for j in range(bend + 1)
    )
    k_bend = ks[bend]

    def residual(beta: float) -> float:
        return turn_before + _segment_turn(k_bend, 0.0, beta, beta) - target

    beta_max = p.lengths[bend]
    if residual(0.0) >= 0.0:
        raise ConstructionError("smoothing lost no turning; profile curvature is not increasing")
    if residual(beta_max) < 0.0:
        raise ConstructionError(
            f"smooth_width={smooth_width:.3e} too large: compensation would exceed the final bend length"
        )
    beta = brentq(residual, 0.0, beta_max, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)

    lengths = p.lengths[:bend + 1] + (beta, p.lengths[-1])
    s_breaks = np.concatenate([[0.0], np.cumsum(lengths)])
    return replace(
        p,
        s_breaks=tuple(s_breaks),
        k_values=ks[:bend + 1] + (0.0, 0.0),
        lengths=lengths,
        smooth_width=smooth_width,
        beta=beta,
    )


def integrate_curve(
    p: CurvatureProfile,
    step: float,
    start: Optional[Sequence[float]] = None,
    phi_start: Optional[float] = None,
) -> PlaneCurve:
    """
    Integrate a curvature profile into an arclength-parametrised plane curve.

    Constant stretches are sampled with the exact circular-arc formulas;
    transition zones get the closed-form tangent angle and trapezoid
    positions, with at least TRANSITION_SAMPLES intervals each.

    Args:
        p: Curvature profile
        step: Maximal sample spacing
        start: Initial point (default (0, sin(delta0)/sqrt K))
        phi_start: Initial tangent angle (default delta0 - pi/2)

    Returns:
        Sampled PlaneCurve
    """
    if step <= 0.0:
        raise ParameterError(f"step must be positive, got {step}")

    x0, x1 = p.start_point if start is None else (float(start[0]), float(start[1]))
    phi = p.phi_start if phi_start is None else float(phi_start)
    ks = p.k_values
    widths = p.transition_widths()

    parts = {name: [] for name in ("s", "x0", "x1", "phi", "k", "ds", "dx0", "dx1")}
    milestones = []
    n_samples = 0

    def emit(s_abs, d0, d1, phis, kk, u):
        # d0, d1 are displacements from the zone start; returns the zone end point
        nonlocal n_samples
        first = 0 if n_samples == 0 else 1
        parts["s"].append(s_abs[first:])
        parts["x0"].append((x0 + d0)[first:])
        parts["x1"].append((x1 + d1)[first:])
        parts["phi"].append(phis[first:])
        parts["k"].append(kk[first:])
        parts["ds"].append(np.diff(u))
        parts["dx0"].append(np.diff(d0))
        parts["dx1"].append(np.diff(d1))
        n_samples += len(s_abs) - first
        return x0 + float(d0[-1]), x1 + float(d1[-1])

    for j, (k_cur, length, tau) in enumerate(zip(ks, p.lengths, widths)):
        if j > 0:
            milestones.append(n_samples - 1)
        k_prev = ks[j - 1] if j else ks[0]
        seg_start = p.s_breaks[j]
        offset = 0.0

        if tau > 0.0:
            tau = min(tau, length)
            m = max(TRANSITION_SAMPLES, math.ceil(tau / step))
            u = np.linspace(0.0, tau, m + 1)
            x = u / tau
            phis = phi + k_prev * u + (k_cur - k_prev) * tau * template_integral(x)
            d0 = cumulative_trapezoid(np.cos(phis), u, initial=0.0)
            d1 = cumulative_trapezoid(np.sin(phis), u, initial=0.0)
            kk = k_prev + (k_cur - k_prev) * transition_template(x)
            x0, x1 = emit(seg_start + u, d0, d1, phis, kk, u)
            phi = phi + _segment_turn(k_prev, k_cur, tau, tau)
            offset = tau

        rest = length - offset
        if j == len(ks) - 1 and k_cur == 0.0 and abs(phi) <= TAIL_SNAP:
            # horizontal tail: x1 is carried forward unchanged
            phi = 0.0
        if rest > 0.0 and (tau <= 0.0 or rest > 1e-12 * length):
            m = max(1, math.ceil(rest / step))
            u = np.linspace(0.0, rest, m + 1)
            d0, d1, phis = propagate_arc(0.0, 0.0, phi, k_cur, u)
            x0, x1 = emit(seg_start + offset + u, d0, d1, phis, np.full(m + 1, k_cur), u)
            phi = float(phis[-1])

    cat = {name: np.concatenate(chunks) for name, chunks in parts.items()}
    if start is None and not np.all(cat["x1"] > 0.0):
        i = int(np.argmin(cat["x1"]))
        raise ConstructionError(f"curve reaches the axis: x1={cat['x1'][i]:.3e} at s={cat['s'][i]:.6g}")
    return PlaneCurve(
        s=cat["s"],
        x0=cat["x0"],
        x1=cat["x1"],
        phi=cat["phi"],
        theta=cat["phi"] + math.pi / 2,
        k=cat["k"],
        ds=cat["ds"],
        dx0=cat["dx0"],
        dx1=cat["dx1"],
        milestones=tuple(milestones),
    )


def verify_bend_condition(c: PlaneCurve) -> BendReport:
    """
    Evaluate the bend condition k < sin(theta) / (2 x1) at every sample.

    Returns:
        BendReport; min_margin > 0 means the revolution hypersurface has
        positive scalar curvature at every sample
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        margins = np.where(c.x1 > 0.0, np.sin(c.theta) / (2.0 * c.x1) - c.k, -np.inf)
    i = int(np.argmin(margins))
    return BendReport(margins=margins, min_margin=float(margins[i]), argmin=i)
