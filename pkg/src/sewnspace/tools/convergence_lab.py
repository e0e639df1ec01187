"""
Almost isometries from sewn spaces onto the pulled-string space, and the
schedule experiment that tracks distortion, mass and ball volumes as the
sewing tightens.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger
from scipy.spatial import cKDTree

from ..errors import ParameterError
from ..utils.chunker import RowChunker
from .metric_core import (
    SHELL,
    FiniteMetricSpace,
    PulledSpace,
    SphereSample,
    ball_volume,
    circle_length,
    distance_to_circle,
    pull_great_circle,
    sample_sphere3,
    with_great_circle,
)
from .revolution_geometry import tube_volume
from .sewing_sim import (
    DEFAULT_SHELL_NODES,
    SewnSpace,
    build_sewn,
    edited_diameter,
    place_balls,
    sewn_volume_report,
)

logger = get_logger(__name__)

IDENTITY, ANNULUS, EDITED = 0, 1, 2
DEFAULT_STRING_NODES = 1024
DEFAULT_A_TUBE_FACTOR = 1.5
DEFAULT_LIP_PAIRS = 10**5
SCAN_BLOCK_BYTES = 16 * 2**20


@dataclass
class AlmostIsometry:
    """
    A map from sewn-space nodes to pulled-space nodes with its statistics.

    Attributes:
        map: Target index in the pulled space for every sewn node.
        region: IDENTITY, ANNULUS or EDITED for every sewn node.
        p0_index: Index of p0 in the pulled space.
        delta: Ball radius of the sewing the map was built for.
        distortion: max |d_Y(Fx, Fy) - d_X(x, y)|, once computed.
        coverage_gap: max over pulled nodes of the distance to the image, once computed.
        lip_est: max d_Y(Fx, Fy) / d_X(x, y) over sampled pairs, once computed.
    """
    map: np.ndarray
    region: np.ndarray
    p0_index: int
    delta: float
    distortion: Optional[float] = None
    coverage_gap: Optional[float] = None
    lip_est: Optional[float] = None

    @property
    def n(self) -> int:
        return len(self.map)

    def region_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.region, minlength=3)
        return {"identity": int(counts[IDENTITY]), "annulus": int(counts[ANNULUS]), "edited": int(counts[EDITED])}


@dataclass
class StepRecord:
    """Measurements of one step of the sewing schedule."""
    j: int
    delta: float
    n: int
    h: float
    distortion: float
    gh_upper: float
    coverage_gap: float
    lip_est: float
    mass: float
    epsilon_measured: float
    neck_area: float
    edited_volume: float
    edited_diameter: float
    H_delta: float
    p0_node: int
    ball_vols: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ConvergenceReport:
    """
    Step records of a schedule run, ordered by decreasing delta, with trend flags.
    """
    records: List[StepRecord]
    r_grid: List[float]
    tube_targets: List[float]
    pulled_ball_vols: List[float]
    seed: int
    schedule: List[Tuple[float, int]]
    vol_M: float
    epsilon: float

    @property
    def distortions(self) -> List[float]:
        return [r.distortion for r in self.records]

    @property
    def ball_errors(self) -> List[float]:
        """Largest deviation of the ball volumes at p0_j from the tube targets, per step."""
        target = np.asarray(self.tube_targets)
        return [float(np.max(np.abs(np.asarray(r.ball_vols) - target))) for r in self.records]

    @property
    def distortion_strictly_decreasing(self) -> bool:
        d = self.distortions
        return all(b < a for a, b in zip(d, d[1:]))

    @property
    def distortion_quartered(self) -> bool:
        d = self.distortions
        return len(d) > 1 and d[-1] <= d[0] / 4.0

    @property
    def distortion_reduced(self) -> bool:
        d = self.distortions
        return len(d) > 1 and d[-1] < d[0]

    @property
    def ball_error_decreasing(self) -> bool:
        e = self.ball_errors
        return all(b <= a for a, b in zip(e, e[1:]))

    @property
    def masses_ok(self) -> bool:
        return all(abs(r.mass - self.vol_M) <= self.epsilon * self.vol_M for r in self.records)

    @property
    def edited_volume_decreasing(self) -> bool:
        v = [r.edited_volume for r in self.records]
        return all(y < x for x, y in zip(v, v[1:]))

    @property
    def neck_areas_decreasing(self) -> bool:
        a = [r.neck_area for r in self.records]
        return all(y < x for x, y in zip(a, a[1:]))

    def flags(self) -> Dict[str, bool]:
        return {
            "distortion_strictly_decreasing": self.distortion_strictly_decreasing,
            "distortion_quartered": self.distortion_quartered,
            "distortion_reduced": self.distortion_reduced,
            "ball_error_decreasing": self.ball_error_decreasing,
            "masses_ok": self.masses_ok,
            "neck_areas_decreasing": self.neck_areas_decreasing,
            "edited_volume_decreasing": self.edited_volume_decreasing,
        }

    def table_rows(self) -> List[Tuple]:
        """Rows of j,delta,n,h,distortion,gh_upper,mass,neck_area."""
        return [(r.j, r.delta, r.n, r.h, r.distortion, r.gh_upper, r.mass, r.neck_area) for r in self.records]

    def ball_rows(self, j: int) -> List[Tuple[float, float, float]]:
        """Rows of r,ball_vol,tube_target for step j."""
        return list(zip(self.r_grid, self.records[j].ball_vols, self.tube_targets))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "schedule": [list(step) for step in self.schedule],
            "r_grid": self.r_grid,
            "tube_targets": self.tube_targets,
            "pulled_ball_vols": self.pulled_ball_vols,
            "vol_M": self.vol_M,
            "epsilon": self.epsilon,
            "ball_errors": self.ball_errors,
            "records": [r.to_dict() for r in self.records],
            **self.flags(),
        }


def _pulled_tube_radius(Y: PulledSpace) -> float:
    return float(np.max(distance_to_circle(Y.base.coords[Y.K_idx], Y.base.curvature)))


def build_F(s: SewnSpace, Y: PulledSpace, delta: float, a_tube: Optional[float] = None) -> AlmostIsometry:
    """
    Map the sewn space onto the pulled-string space.

    Nodes at distance >= 2 delta from C keep their identity. The edited
    region (distance < delta, and all shell nodes) goes to p0. A node in the
    annulus delta <= d < 2 delta is pushed radially to distance d (d - delta) / delta
    from C and snapped to the nearest pulled node; targets within the pulled
    tube go to p0.

    Args:
        s: Sewn space built on the same base sample as Y
        Y: Pulled-string space of that sample
        delta: Ball radius of the sewing
        a_tube: Radius of the pulled tube (default: measured from Y)

    Returns:
        AlmostIsometry with the map filled in
    """
    metric = s.metric
    if metric.coords is None or Y.coords is None:
        raise ParameterError("building F needs ambient coordinates on both spaces")
    K = metric.curvature or 1.0
    a_tube = _pulled_tube_radius(Y) if a_tube is None else a_tube

    lookup = np.full(int(max(metric.labels.max(), Y.labels.max())) + 1, -1, dtype=np.intp)
    lookup[Y.labels] = np.arange(Y.n)

    coords = metric.coords
    d = distance_to_circle(coords, K)
    region = np.full(metric.n, IDENTITY, dtype=np.int8)
    region[d < 2.0 * delta] = ANNULUS
    region[d < delta] = EDITED
    region[metric.tags == SHELL] = EDITED
    region[s.edited_idx] = EDITED

    target = lookup[metric.labels]
    target[region == EDITED] = Y.p0_index

    others = np.flatnonzero(np.arange(Y.n) != Y.p0_index)
    tree = cKDTree(Y.coords[others])
    stray = (region == IDENTITY) & (target < 0)
    if np.any(stray):
        _, nearest = tree.query(coords[stray])
        target[stray] = others[nearest]

    annulus = np.flatnonzero(region == ANNULUS)
    if len(annulus):
        sk = math.sqrt(K)
        da = d[annulus]
        rho = da * (da - delta) / delta
        x = coords[annulus]
        foot = x[:, :2] / np.linalg.norm(x[:, :2], axis=1, keepdims=True)
        normal = x[:, 2:] / np.linalg.norm(x[:, 2:], axis=1, keepdims=True)
        image = np.hstack([np.cos(sk * rho)[:, None] * foot, np.sin(sk * rho)[:, None] * normal])
        _, nearest = tree.query(image)
        target[annulus] = np.where(rho <= a_tube, Y.p0_index, others[nearest])

    F = AlmostIsometry(map=target, region=region, p0_index=Y.p0_index, delta=delta)
    logger.info("built F: %s", F.region_counts())
    return F


def distortion(F: AlmostIsometry, X, Y: FiniteMetricSpace, workers: Optional[int] = None) -> float:
    """
    Exact max over node pairs of |d_Y(Fx, Fy) - d_X(x, y)|; also records the coverage gap.

    Args:
        F: Map from X's nodes to Y's nodes
        X: Source space (a SewnSpace or any space with a dense `dist`)
        Y: Target space

    Returns:
        The distortion, also stored on F
    """
    D = X.dist
    m = np.asarray(F.map, dtype=np.intp)
    if len(m) != D.shape[0]:
        raise ParameterError(f"map covers {len(m)} nodes, source space has {D.shape[0]}")
    chunker = RowChunker(max(D.shape[0], Y.n), max_block_bytes=SCAN_BLOCK_BYTES, workers=workers)

    def block_excess(block):
        dy = Y.rows(m[block.index])[:, m]
        logger.debug("distortion scan: rows %d-%d", block.start, block.stop)
        return float(np.max(np.abs(dy - D[block.index])))

    F.distortion = max(chunker.map(block_excess, np.arange(len(m))))

    image = np.unique(m)
    reach = chunker.map(lambda block: np.min(Y.rows(block.index), axis=0), image)
    F.coverage_gap = float(np.max(np.min(np.vstack(reach), axis=0)))
    return F.distortion


def gh_upper_bound(F: AlmostIsometry) -> float:
    """
    Half the distortion of the correspondence {(x, F x)} completed by matching
    each uncovered target to its nearest image point: max(dis, 2 cov) / 2.

    Raises:
        ParameterError: If the distortion has not been computed
    """
    if F.distortion is None or F.coverage_gap is None:
        raise ParameterError("distortion and coverage gap must be computed first")
    return 0.5 * max(F.distortion, 2.0 * F.coverage_gap)


def lipschitz_estimate(F: AlmostIsometry, X, Y: FiniteMetricSpace, pairs: int = DEFAULT_LIP_PAIRS, seed: int = 0) -> float:
    """Max of d_Y(Fx, Fy) / d_X(x, y) over seeded random pairs with d_X > 0."""
    rng = np.random.Generator(np.random.Philox(seed))
    i, j = rng.integers(0, F.n, size=(2, pairs))
    dx = X.dist[i, j]
    keep = dx > 0
    if not np.any(keep):
        F.lip_est = 0.0
        return 0.0
    dy = Y.pair_distances(F.map[i[keep]], F.map[j[keep]])
    F.lip_est = float(np.max(dy / dx[keep]))
    return F.lip_est


def pulled_string_space(
    N: int,
    K: float = 1.0,
    seed: int = 0,
    string_nodes: int = DEFAULT_STRING_NODES,
    a_tube_factor: float = DEFAULT_A_TUBE_FACTOR,
) -> Tuple[SphereSample, PulledSpace, float]:
    """
    Sample the sphere with a string of nodes on C and pull the string to p0.

    Returns:
        (base sample with string nodes, pulled space, a_tube)
    """
    if string_nodes < 1:
        raise ParameterError(f"string_nodes must be positive, got {string_nodes}")
    X = with_great_circle(sample_sphere3(N, K, seed), string_nodes)
    a_tube = a_tube_factor * circle_length(K) / string_nodes
    return X, pull_great_circle(X, a_tube), a_tube


def _shell_anchor(s: SewnSpace) -> int:
    """Smallest-index shell node of the first tunnel, or the node nearest C(0) without tunnels."""
    if s.plan.n:
        return int(np.min(s.shells[0]))
    return int(np.argmax(s.metric.coords @ np.array([1.0, 0.0, 0.0, 0.0])))


def mm_convergence_table(
    schedule: Sequence[Tuple[float, int]],
    r_grid: Sequence[float],
    N: int = 8000,
    seed: int = 0,
    K: float = 1.0,
    string_nodes: int = DEFAULT_STRING_NODES,
    a_tube_factor: float = DEFAULT_A_TUBE_FACTOR,
    shell_nodes: int = DEFAULT_SHELL_NODES,
    rho_connect: Optional[float] = None,
    epsilon: float = 0.05,
    lip_pairs: int = DEFAULT_LIP_PAIRS,
    workers: Optional[int] = None,
    spaces: Optional[Tuple[SphereSample, PulledSpace, float]] = None,
) -> ConvergenceReport:
    """
    Run the sewing schedule and measure each sewn space against the pulled string.

    Args:
        schedule: (delta_j, n_j) pairs by decreasing delta
        r_grid: Radii for the ball volumes at p0_j
        N: Sample size
        seed: Sampling seed
        K: Curvature
        string_nodes: Zero-weight nodes placed on C
        a_tube_factor: Pulled tube radius in units of the string spacing
        shell_nodes: Zero-weight nodes per excised sphere
        rho_connect: Graph connection radius (default from N)
        epsilon: Volume tolerance
        lip_pairs: Random pairs for the Lipschitz estimate
        workers: Thread count for the row scans
        spaces: Prebuilt (base, pulled, a_tube) to reuse

    Returns:
        ConvergenceReport
    """
    schedule = [(float(d), int(n)) for d, n in schedule]
    if not schedule:
        raise ParameterError("schedule must not be empty")
    deltas = [d for d, _ in schedule]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ParameterError(f"schedule deltas must be strictly decreasing, got {deltas}")
    r_grid = [float(r) for r in r_grid]

    X, Y, a_tube = spaces or pulled_string_space(N, K, seed, string_nodes, a_tube_factor)
    tube_targets = [float(tube_volume(r, K)) for r in r_grid]
    pulled_vols = [ball_volume(Y, Y.p0_index, r) for r in r_grid]

    records = []
    for j, (delta, n) in enumerate(schedule):
        plan = place_balls(X, n, delta)
        s = build_sewn(X, plan, rho_connect=rho_connect, shell_nodes=shell_nodes, workers=workers)
        volume = sewn_volume_report(s, epsilon)
        F = build_F(s, Y, delta, a_tube)
        distortion(F, s, Y, workers=workers)
        lipschitz_estimate(F, s, Y, lip_pairs, seed)
        anchor = _shell_anchor(s)
        record = StepRecord(
            j=j,
            delta=delta,
            n=n,
            h=plan.h_delta,
            distortion=F.distortion,
            gh_upper=gh_upper_bound(F),
            coverage_gap=F.coverage_gap,
            lip_est=F.lip_est,
            mass=volume.vol_N_sampled,
            epsilon_measured=volume.epsilon_measured,
            neck_area=plan.neck_area,
            edited_volume=volume.edited_volume,
            edited_diameter=edited_diameter(s),
            H_delta=plan.H_delta,
            p0_node=int(s.metric.labels[anchor]),
            ball_vols=[ball_volume(s.metric, anchor, r) for r in r_grid],
        )
        logger.info(
            "step %d: delta=%g n=%d h=%.4g distortion=%.4g gh<=%.4g mass=%.6g",
            j, delta, n, record.h, record.distortion, record.gh_upper, record.mass,
        )
        records.append(record)
        del s, F

    return ConvergenceReport(
        records=records,
        r_grid=r_grid,
        tube_targets=tube_targets,
        pulled_ball_vols=pulled_vols,
        seed=seed,
        schedule=schedule,
        vol_M=X.total_weight,
        epsilon=epsilon,
    )
