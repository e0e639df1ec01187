"""
Sewing a sampled sphere along a closed geodesic.

2n balls of radius delta are centred on the great circle C, their interiors
B(p_i, delta/2) are excised, and consecutive balls p_{2j+1}, p_{2j+2} are
joined by a tunnel whose traversal costs h(delta). The sewn space is the
shortest-path metric of the resulting graph.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from ..errors import ConstructionError, ParameterError
from ..utils.chunker import RowChunker
from .metric_core import (
    SAMPLE,
    SHELL,
    FiniteMetricSpace,
    SphereSample,
    circle_coords,
    circle_length,
    distance_to_circle,
)
from .revolution_geometry import (
    build_tunnel,
    geodesic_ball_volume,
    tube_volume,
    tunnel_summary,
)

logger = get_logger(__name__)

DEFAULT_SHELL_NODES = 32
RHO_CONNECT_FACTOR = 3.0
SCHEDULE_RATIO = 3.0
SCHEDULE_N_FACTOR = 1.4


@dataclass(frozen=True)
class SewingPlan:
    """
    Ball placement and tunnel data for sewing along C.

    Attributes:
        n: Number of tunnels.
        delta: Ball radius.
        delta0: Inner tunnel radius.
        curve_len: Length of C.
        centers: Node indices of the 2n ball centres, in order along C.
        center_params: Arclength parameters of the exact centres on C.
        h_delta: Tunnel traversal length.
        shell_width: Thickness of the shell band outside B(p, delta/2).
        K: Ambient curvature.
        neck_area: Area of the thinnest tunnel slice.
        volume_U: Volume of one tunnel.
    """
    n: int
    delta: float
    delta0: float
    curve_len: float
    centers: Tuple[int, ...]
    center_params: Tuple[float, ...]
    h_delta: float
    shell_width: float
    K: float = 1.0
    neck_area: float = 0.0
    volume_U: float = 0.0

    @property
    def H_delta(self) -> float:
        """Diameter bound L/n + (n+1) h + (5n+2) delta of the edited region."""
        if self.n == 0:
            return 0.0
        return self.curve_len / self.n + (self.n + 1) * self.h_delta + (5 * self.n + 2) * self.delta

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "delta": self.delta,
            "delta0": self.delta0,
            "h_delta": self.h_delta,
            "centers": list(self.centers),
            "shell_width": self.shell_width,
            "H_delta": self.H_delta,
            "center_params": list(self.center_params),
            "curve_len": self.curve_len,
            "neck_area": self.neck_area,
            "volume_U": self.volume_U,
            "n_h_delta": self.n * self.h_delta,
            "n_delta": self.n * self.delta,
        }


@dataclass(frozen=True, eq=False)
class SewnSpace:
    """
    Graph metric of a sphere sample sewn along C.

    Attributes:
        base: The sphere sample that was sewn.
        metric: Sewn space (surviving nodes plus shell nodes) with its
            shortest-path distance matrix.
        edited_idx: Indices in `metric` of the edited region A'.
        shells: Per ball, indices in `metric` of its shell nodes.
        plan: The sewing plan.
        n_edges: Edge count of the graph (tunnel edges included).
    """
    base: SphereSample
    metric: FiniteMetricSpace
    edited_idx: np.ndarray
    shells: Tuple[np.ndarray, ...]
    plan: SewingPlan
    n_edges: int = 0

    @property
    def dist(self) -> np.ndarray:
        return self.metric.dist


@dataclass(frozen=True)
class SewnVolumeReport:
    """Volume bookkeeping of a sewn space against its base."""
    vol_M: float
    vol_N_model: float
    vol_N_sampled: float
    tunnel_volume: float
    excised_model: float
    edited_volume: float
    epsilon_measured: float
    epsilon_requested: float
    ok: bool

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def default_rho_connect(N: int, K: float = 1.0) -> float:
    """Connection radius: a fixed multiple of the mean sample spacing (Vol / N)^(1/3)."""
    return RHO_CONNECT_FACTOR * (2.0 * math.pi ** 2 / K ** 1.5 / N) ** (1.0 / 3.0)


def default_schedule(length: int = 5) -> List[Tuple[float, int]]:
    """
    delta_j = 0.4 * 3^-j with n_j = 1.4 delta_j^(-1/2) rounded half up.

    The sewn distortion behaves like L/n + (n/2 - 1)(h + delta) with
    h ~ 5.5 delta, which n ~ 1.4 delta^(-1/2) roughly minimises.
    """
    if length < 1:
        raise ParameterError(f"schedule length must be positive, got {length}")
    deltas = [0.4 * SCHEDULE_RATIO ** -j for j in range(length)]
    return [(d, int(math.floor(SCHEDULE_N_FACTOR * d ** -0.5 + 0.5))) for d in deltas]


def place_balls(
    X: SphereSample,
    n: int,
    delta: float,
    delta0: Optional[float] = None,
    shell_width: Optional[float] = None,
) -> SewingPlan:
    """
    Centre 2n balls on C at parameters j L/n + delta and (j+1) L/n - delta.

    Args:
        X: Sphere sample (with coordinates)
        n: Number of tunnels
        delta: Ball radius
        delta0: Inner tunnel radius (default delta / 10)
        shell_width: Shell thickness (default delta / 4)

    Returns:
        SewingPlan with centres snapped to the nearest nodes

    Raises:
        ParameterError: If the balls do not fit on C or overlap on the sample
    """
    if X.coords is None:
        raise ParameterError("sewing needs a sample with ambient coordinates")
    if n < 0:
        raise ParameterError(f"tunnel count must be nonnegative, got {n}")
    if delta <= 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    K = X.curvature
    L = circle_length(K)
    delta0 = delta / 10.0 if delta0 is None else delta0
    shell_width = delta / 4.0 if shell_width is None else shell_width
    if shell_width <= 0:
        raise ParameterError(f"shell_width must be positive, got {shell_width}")

    if n == 0:
        return SewingPlan(0, delta, delta0, L, (), (), 0.0, shell_width, K)

    if 2 * n * 2 * delta >= L:
        raise ParameterError(f"{2 * n} balls of radius {delta} do not fit on a circle of length {L:.6g}")

    params = []
    for j in range(n):
        params += [j * L / n + delta, (j + 1) * L / n - delta]
    tree = cKDTree(X.coords)
    _, centers = tree.query(circle_coords(params, K))
    centers = tuple(int(c) for c in centers)

    # string nodes sit on C between adjacent balls
    near = (X.rows(list(centers)) < delta) & (X.tags == SAMPLE)
    shared = np.flatnonzero(near.sum(axis=0) > 1)
    if len(centers) != len(set(centers)) or len(shared):
        raise ParameterError(f"balls of radius {delta} overlap on the sample ({len(shared)} shared nodes)")

    tunnel = build_tunnel(K, delta, delta0)
    summary = tunnel_summary(tunnel, search=False)
    plan = SewingPlan(
        n=n,
        delta=delta,
        delta0=delta0,
        curve_len=L,
        centers=centers,
        center_params=tuple(params),
        h_delta=summary.diam_upper,
        shell_width=shell_width,
        K=K,
        neck_area=summary.neck_area,
        volume_U=summary.volume_U,
    )
    logger.info("placed %d balls: delta=%g h=%.6g H=%.6g", 2 * n, delta, plan.h_delta, plan.H_delta)
    return plan


def fibonacci_directions(count: int) -> np.ndarray:
    """Nearly uniform unit vectors on S^2 from the golden-angle spiral."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z ** 2)
    angle = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(angle), r * np.sin(angle), z])


def shell_coords(center: np.ndarray, radius: float, count: int, K: float = 1.0) -> np.ndarray:
    """Unit coordinates of `count` points at geodesic distance radius from center."""
    basis = np.linalg.qr(np.column_stack([center, np.eye(4)]))[0][:, 1:4]
    tangents = fibonacci_directions(count) @ basis.T
    a = math.sqrt(K) * radius
    pts = math.cos(a) * center[None, :] + math.sin(a) * tangents
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _edge_list(coords: np.ndarray, rho: float, K: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    tree = cKDTree(coords)
    chord = 2.0 * math.sin(min(math.sqrt(K) * rho, math.pi) / 2.0)
    pairs = tree.query_pairs(chord, output_type="ndarray")
    u, v = pairs[:, 0], pairs[:, 1]
    a, b = coords[u], coords[v]
    w = 2.0 * np.arctan2(np.linalg.norm(a - b, axis=1), np.linalg.norm(a + b, axis=1)) / math.sqrt(K)
    return u, v, w


def crosses_balls(a: np.ndarray, b: np.ndarray, centers: np.ndarray, radius: float, K: float = 1.0) -> np.ndarray:
    """
    Mask of great-circle segments a-b that enter an open ball B(c, radius).

    The closest point of the great circle through a and b to c is the
    normalised projection w of c onto span(a, b); it lies on the minor arc
    iff both coefficients of w are positive, and then its distance to c is
    arccos|w|. Endpoints outside the ball cover every other case.
    """
    hit = np.zeros(len(a), dtype=bool)
    if len(a) == 0 or len(centers) == 0:
        return hit
    g = np.einsum("ij,ij->i", a, b)
    det = np.maximum(1.0 - g ** 2, 1e-300)
    cos_r = math.cos(max(math.sqrt(K) * radius - 1e-12, 0.0))
    for c in centers:
        ca, cb = a @ c, b @ c
        alpha = (ca - g * cb) / det
        beta = (cb - g * ca) / det
        proj = alpha * ca + beta * cb
        hit |= (alpha > 0) & (beta > 0) & (proj > cos_r ** 2)
    return hit


def build_sewn(
    X: SphereSample,
    plan: SewingPlan,
    rho_connect: Optional[float] = None,
    shell_nodes: int = DEFAULT_SHELL_NODES,
    workers: Optional[int] = None,
) -> SewnSpace:
    """
    Excise the ball interiors, wire in the tunnels and compute all-pairs distances.

    Nodes are the sample nodes at distance >= delta/2 from every centre plus
    `shell_nodes` zero-weight nodes placed exactly on each sphere
    dB(p_i, delta/2). Base edges join nodes within rho_connect at their
    sphere distance unless their great-circle segment enters an excised
    ball; tunnel edges join every shell node of ball 2j+1 to every shell
    node of ball 2j+2 at length h(delta).

    Raises:
        ParameterError: If a shell is empty
        ConstructionError: If the graph is disconnected
    """
    K = X.curvature
    rho = default_rho_connect(int(np.count_nonzero(X.weight > 0)) or X.n, K) if rho_connect is None else rho_connect
    if rho <= 0:
        raise ParameterError(f"rho_connect must be positive, got {rho}")

    half = plan.delta / 2.0
    centers = list(plan.centers)
    if centers:
        d_center = X.rows(centers)
        survive = np.all(d_center >= half, axis=0)
    else:
        d_center = np.empty((0, X.n))
        survive = np.ones(X.n, dtype=bool)
    kept = np.flatnonzero(survive)

    coords = [X.coords[kept]]
    weight = [X.weight[kept]]
    labels = [X.labels[kept]]
    tags = [X.tags[kept]]
    next_label = int(X.labels.max()) + 1
    shells: List[np.ndarray] = []
    offset = len(kept)
    for i, c in enumerate(centers):
        band = np.flatnonzero(d_center[i, kept] <= half + plan.shell_width)
        placed = np.arange(offset, offset + shell_nodes)
        if shell_nodes:
            coords.append(shell_coords(X.coords[c], half, shell_nodes, K))
            weight.append(np.zeros(shell_nodes))
            labels.append(next_label + np.arange(shell_nodes))
            tags.append(np.full(shell_nodes, SHELL))
            next_label += shell_nodes
            offset += shell_nodes
        shell = np.concatenate([band, placed])
        if len(shell) == 0:
            raise ParameterError(f"shell of ball {i} is empty; shell_width {plan.shell_width:g} is below the sample spacing")
        shells.append(shell)

    coords = np.vstack(coords)
    n_nodes = len(coords)
    u, v, w = _edge_list(coords, rho, K)
    if centers:
        blocked = crosses_balls(coords[u], coords[v], X.coords[centers], half, K)
        logger.debug("dropped %d edges through excised balls", int(np.count_nonzero(blocked)))
        u, v, w = u[~blocked], v[~blocked], w[~blocked]
    tunnel_u, tunnel_v = [], []
    for j in range(plan.n):
        a, b = np.meshgrid(shells[2 * j], shells[2 * j + 1], indexing="ij")
        tunnel_u.append(a.ravel())
        tunnel_v.append(b.ravel())
    if tunnel_u:
        tu, tv = np.concatenate(tunnel_u), np.concatenate(tunnel_v)
        u = np.concatenate([u, tu])
        v = np.concatenate([v, tv])
        w = np.concatenate([w, np.full(len(tu), plan.h_delta)])

    # keep the lightest of parallel edges
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    order = np.lexsort((w, hi, lo))
    lo, hi, w = lo[order], hi[order], w[order]
    first = np.ones(len(lo), dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    lo, hi, w = lo[first], hi[first], w[first]
    graph = coo_matrix((w, (lo, hi)), shape=(n_nodes, n_nodes)).tocsr()

    n_comp, comp = connected_components(graph, directed=False)
    if n_comp > 1:
        sizes = np.bincount(comp)
        smallest = int(np.argmin(sizes))
        member = int(np.concatenate(labels)[np.flatnonzero(comp == smallest)[0]])
        raise ConstructionError(
            f"sewn graph has {n_comp} components; smallest has {sizes[smallest]} nodes "
            f"(contains label {member}); increase rho_connect above {rho:g}"
        )

    logger.info("sewn graph: %d nodes, %d edges, rho=%.4g", n_nodes, len(w), rho)
    dist = np.empty((n_nodes, n_nodes))
    chunker = RowChunker(n_nodes, workers=workers)
    logger.debug("shortest paths: %s", chunker.get_blocks_summary(np.arange(n_nodes)))

    def solve(block):
        dist[block.start:block.stop] = dijkstra(graph, directed=False, indices=block.index)
        logger.debug("shortest paths: rows %d-%d", block.start, block.stop)

    chunker.map(solve, np.arange(n_nodes))
    np.minimum(dist, dist.T, out=dist)

    metric = FiniteMetricSpace(
        np.concatenate(weight),
        dist=dist,
        coords=coords,
        labels=np.concatenate(labels),
        tags=np.concatenate(tags),
        curvature=K,
    )
    near_c = distance_to_circle(coords, K) < plan.delta if plan.n else np.zeros(n_nodes, dtype=bool)
    edited = near_c | (metric.tags == SHELL)
    for shell in shells:
        edited[shell] = True
    return SewnSpace(
        base=X,
        metric=metric,
        edited_idx=np.flatnonzero(edited),
        shells=tuple(shells),
        plan=plan,
        n_edges=len(w),
    )


def edited_diameter(s: SewnSpace) -> float:
    """Largest sewn distance between two nodes of the edited region."""
    idx = s.edited_idx
    if len(idx) == 0:
        return 0.0
    return float(np.max(s.dist[np.ix_(idx, idx)]))


def sewn_volume_report(s: SewnSpace, epsilon: float = 0.05) -> SewnVolumeReport:
    """
    Compare the sewn volume with the base volume.

    Vol(N) is measured as the surviving sample weights plus n Vol(U), and
    epsilon is taken from it. The closed form Vol(M) - 2n V_ball(delta/2)
    + n Vol(U) is reported alongside as vol_N_model.
    """
    plan = s.plan
    K = plan.K
    vol_m = s.base.total_weight
    excised = 2 * plan.n * geodesic_ball_volume(plan.delta / 2.0, K) if plan.n else 0.0
    tunnels = plan.n * plan.volume_U
    vol_n = vol_m - excised + tunnels
    sampled = s.metric.total_weight + tunnels
    edited = tube_volume(plan.delta, K) - excised + tunnels if plan.n else 0.0
    eps = abs(sampled / vol_m - 1.0)
    return SewnVolumeReport(
        vol_M=vol_m,
        vol_N_model=vol_n,
        vol_N_sampled=sampled,
        tunnel_volume=tunnels,
        excised_model=excised,
        edited_volume=edited,
        epsilon_measured=eps,
        epsilon_requested=epsilon,
        ok=eps <= epsilon,
    )


def graph_fidelity(s: SewnSpace, pairs: int = 1000, seed: int = 0) -> Dict[str, Any]:
    """
    Relative error of the sewn graph distance against the exact sphere distance.

    Pairs are drawn from surviving sample nodes farther than delta + shell_width + h
    from every centre, at sphere distance above the default connection radius.
    Off the edit the two should agree up to the graph approximation.
    """
    base, metric, plan = s.base, s.metric, s.plan
    nodes = np.flatnonzero(metric.weight > 0)
    base_idx = np.array([base.index_of(label) for label in metric.labels[nodes]], dtype=np.intp)
    if plan.n and len(nodes):
        far = np.min(base.rows(list(plan.centers))[:, base_idx], axis=0)
        mask = far > plan.delta + plan.shell_width + plan.h_delta
        nodes, base_idx = nodes[mask], base_idx[mask]
    empty = {"pairs": 0, "max_rel_error": None, "mean_rel_error": None}
    if len(nodes) < 2:
        return empty

    rng = np.random.Generator(np.random.Philox(seed))
    i, j = rng.integers(0, len(nodes), size=(2, pairs))
    exact = base.pair_distances(base_idx[i], base_idx[j])
    keep = exact > default_rho_connect(int(np.count_nonzero(base.weight > 0)), plan.K)
    if not np.any(keep):
        return empty
    rel = np.abs(metric.dist[nodes[i[keep]], nodes[j[keep]]] - exact[keep]) / exact[keep]
    return {"pairs": int(np.count_nonzero(keep)), "max_rel_error": float(np.max(rel)), "mean_rel_error": float(np.mean(rel))}
