"""
Finite metric spaces with measures.

Spaces answer distance queries row by row. Dense spaces keep their matrix;
sphere samples compute rows from ambient coordinates and pulled spaces from
their base space, so a 20000-point sample can be probed without ever holding
its full matrix. `dist` materialises the matrix on first access.
"""

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ..errors import ParameterError
from ..utils.chunker import RowChunker

logger = get_logger(__name__)

SAMPLE, STRING, SHELL = "sample", "string", "shell"
PROBE_MIN_POINTS = 50


class ProbeResolutionError(ParameterError):
    """A probe radius holds too few sample points to resolve the ball volume."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class FiniteMetricSpace:
    """
    n points with a symmetric distance matrix and per-point measure weights.

    Attributes:
        weight: Nonnegative measure of every point; the sum is the space's volume.
        coords: Optional unit 4-vectors (ambient point = coords / sqrt(curvature)).
        labels: Integer ids carried through pulling and sewing.
        tags: Kind of each point: 'sample', 'string' or 'shell'.
        curvature: Curvature K of the sphere the coordinates live on, if any.
    """

    def __init__(
        self,
        weight: Sequence[float],
        dist: Optional[np.ndarray] = None,
        coords: Optional[np.ndarray] = None,
        labels: Optional[Sequence[int]] = None,
        tags: Optional[Sequence[str]] = None,
        curvature: Optional[float] = None,
    ):
        self.weight = _frozen(np.array(weight, dtype=float))
        n = len(self.weight)
        if np.any(self.weight < 0):
            raise ParameterError("weights must be nonnegative")
        if dist is not None:
            dist = np.asarray(dist, dtype=float)
            if dist.shape != (n, n):
                raise ParameterError(f"distance matrix shape {dist.shape} does not match {n} points")
            self.__dict__["dist"] = _frozen(dist)
        self.coords = None if coords is None else _frozen(np.array(coords, dtype=float))
        self.labels = _frozen(np.arange(n) if labels is None else np.array(labels, dtype=np.int64))
        self.tags = _frozen(np.full(n, SAMPLE, dtype="<U6") if tags is None else np.array(tags, dtype="<U6"))
        self.curvature = curvature

    @property
    def n(self) -> int:
        return len(self.weight)

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weight))

    @cached_property
    def dist(self) -> np.ndarray:
        """Dense distance matrix, assembled from rows on first access."""
        out = np.empty((self.n, self.n))
        chunker = RowChunker(self.n)

        def fill(block):
            out[block.start:block.stop] = self.rows(block.index)

        chunker.map(fill, np.arange(self.n))
        return _frozen(out)

    @cached_property
    def _label_index(self) -> Dict[int, int]:
        return {int(label): i for i, label in enumerate(self.labels)}

    def index_of(self, label: int) -> int:
        """Position of the point carrying the given label."""
        try:
            return self._label_index[int(label)]
        except KeyError as e:
            raise ParameterError(f"no point with label {label}") from e

    def rows(self, idx) -> np.ndarray:
        """Distance rows for the given point indices, shape (len(idx), n)."""
        return self.dist[np.asarray(idx, dtype=np.intp)]

    def row(self, i: int) -> np.ndarray:
        return self.rows([i])[0]

    def pair_distances(self, a, b) -> np.ndarray:
        """Elementwise d(a[k], b[k])."""
        return self.dist[np.asarray(a, dtype=np.intp), np.asarray(b, dtype=np.intp)]

    def diameter(self) -> float:
        chunker = RowChunker(self.n)
        maxima = chunker.map(lambda block: float(np.max(self.rows(block.index))), np.arange(self.n))
        return max(maxima)

    def ball_volume(self, p: int, r: float) -> float:
        return ball_volume(self, p, r)

    def mean_ball_volumes(self, centers, radii) -> Tuple[np.ndarray, np.ndarray]:
        """
        Closed-ball volumes averaged over centers.

        Returns:
            (mean volume per radius, mean count of positive-weight points per radius)
        """
        centers = np.atleast_1d(np.asarray(centers, dtype=np.intp))
        radii = np.asarray(radii, dtype=float)
        positive = self.weight > 0
        chunker = RowChunker(self.n)

        def block_sums(block):
            d = self.rows(block.index)
            vols = np.array([np.sum(np.where(d <= r, self.weight, 0.0)) for r in radii])
            counts = np.array([np.count_nonzero((d <= r) & positive) for r in radii], dtype=float)
            return vols, counts

        sums = chunker.map(block_sums, centers)
        vols = np.sum([s[0] for s in sums], axis=0) / len(centers)
        counts = np.sum([s[1] for s in sums], axis=0) / len(centers)
        return vols, counts


class SphereSample(FiniteMetricSpace):
    """
    Points on the round 3-sphere of curvature K, distances from coordinates.

    d(u, v) = arccos<u, v> / sqrt(K), evaluated as 2 atan2(|u - v|, |u + v|) / sqrt(K),
    which keeps full precision for nearly equal and nearly antipodal points.
    """

    def __init__(self, coords: np.ndarray, weight: Sequence[float], K: float = 1.0,
                 labels: Optional[Sequence[int]] = None, tags: Optional[Sequence[str]] = None):
        super().__init__(weight, coords=coords, labels=labels, tags=tags, curvature=K)
        self.sqrt_K = math.sqrt(K)

    def rows(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.intp)
        u = self.coords[idx]
        d = 2.0 * np.arctan2(cdist(u, self.coords), cdist(u, -self.coords)) / self.sqrt_K
        d[np.arange(len(idx)), idx] = 0.0
        return d

    def pair_distances(self, a, b) -> np.ndarray:
        ua = self.coords[np.asarray(a, dtype=np.intp)]
        ub = self.coords[np.asarray(b, dtype=np.intp)]
        return 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=1), np.linalg.norm(ua + ub, axis=1)) / self.sqrt_K

    def chord_of(self, r) -> np.ndarray:
        """Chordal length between unit coordinates at geodesic distance r."""
        angle = np.minimum(self.sqrt_K * np.asarray(r, dtype=float), math.pi)
        return 2.0 * np.sin(angle / 2.0)

    @cached_property
    def _positive_tree(self) -> Tuple[cKDTree, np.ndarray]:
        positive = np.flatnonzero(self.weight > 0)
        return cKDTree(self.coords[positive]), positive

    def mean_ball_volumes(self, centers, radii) -> Tuple[np.ndarray, np.ndarray]:
        positive_w = self.weight[self.weight > 0]
        if len(positive_w) == 0 or np.ptp(positive_w) > 0:
            return super().mean_ball_volumes(centers, radii)

        tree, _ = self._positive_tree
        centers = np.atleast_1d(np.asarray(centers, dtype=np.intp))
        points = self.coords[centers]
        counts = np.array([
            np.mean(tree.query_ball_point(points, float(chord), return_length=True))
            for chord in self.chord_of(radii)
        ])
        return counts * positive_w[0], counts


class PulledSpace(FiniteMetricSpace):
    """
    Quotient of a space by a subset K collapsed to one of its points p0.

    d_Y(x, p0) = min_{y in K} d_X(x, y) =: a(x) and
    d_Y(x1, x2) = min(d_X(x1, x2), a(x1) + a(x2)).
    Points of K other than p0 are removed together with their weight; p0
    carries weight 0.

    Attributes:
        base: The space that was pulled.
        keep: Base indices of the points of this space, in base order.
        reach: a(x) for every point of this space.
        K_idx: Base indices of the collapsed set.
        p0_index: Position of p0 in this space.
    """

    def __init__(self, base: FiniteMetricSpace, K_idx, p0: int):
        K_idx = np.unique(np.asarray(K_idx, dtype=np.intp))
        if len(K_idx) == 0:
            raise ParameterError("pulled set must be nonempty")
        if K_idx[0] < 0 or K_idx[-1] >= base.n:
            raise ParameterError("pulled set indices out of range")
        if p0 not in K_idx:
            raise ParameterError(f"p0={p0} is not in the pulled set")

        keep = np.union1d(np.setdiff1d(np.arange(base.n), K_idx), [p0])
        chunker = RowChunker(base.n)
        reach_parts = chunker.map(lambda block: np.min(base.rows(block.index), axis=0), K_idx)
        reach = np.min(np.vstack(reach_parts), axis=0)[keep]

        weight = base.weight[keep].copy()
        p0_index = int(np.searchsorted(keep, p0))
        weight[p0_index] = 0.0
        reach[p0_index] = 0.0

        super().__init__(
            weight,
            coords=None if base.coords is None else base.coords[keep],
            labels=base.labels[keep],
            tags=base.tags[keep],
            curvature=base.curvature,
        )
        self.base = base
        self.keep = _frozen(keep)
        self.reach = _frozen(reach)
        self.K_idx = _frozen(K_idx)
        self.p0_index = p0_index
        self.removed_weight = float(np.sum(base.weight[K_idx]))

    def rows(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.intp)
        d = self.base.rows(self.keep[idx])[:, self.keep]
        return np.minimum(d, self.reach[idx, None] + self.reach[None, :])

    def pair_distances(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.intp)
        b = np.asarray(b, dtype=np.intp)
        d = self.base.pair_distances(self.keep[a], self.keep[b])
        return np.minimum(d, self.reach[a] + self.reach[b])


@dataclass(frozen=True)
class MetricCheck:
    """Outcome of a metric-axiom check."""
    n: int
    diameter: float
    max_asymmetry: float
    max_diagonal: float
    max_triangle_excess: float
    triples_checked: int
    ok: bool


@dataclass(frozen=True)
class ProbeReport:
    """Volume-ratio scalar-curvature probe around one point (or averaged over several)."""
    radii: np.ndarray
    ball_vol: np.ndarray
    ratio: np.ndarray
    scal_est: np.ndarray
    counts: np.ndarray = field(repr=False)
    n_centers: int = 1

    @property
    def euclidean_vol(self) -> np.ndarray:
        return 4.0 / 3.0 * math.pi * self.radii ** 3

    def rows(self):
        for row in zip(self.radii, self.ball_vol, self.ratio, self.scal_est):
            yield tuple(float(v) for v in row)


def sample_sphere3(N: int, K: float = 1.0, seed: int = 0) -> SphereSample:
    """
    Sample N points uniformly on the 3-sphere of curvature K.

    Points are normalised vectors of 4 standard normal deviates drawn from a
    Philox-4x64 counter-based generator keyed by seed. Every point carries
    weight Vol(S^3_K) / N = 2 pi^2 / (K^{3/2} N).

    Raises:
        ParameterError: If N < 10 or K <= 0
    """
    if N < 10:
        raise ParameterError(f"N must be at least 10, got {N}")
    if K <= 0:
        raise ParameterError(f"K must be positive, got {K}")
    rng = np.random.Generator(np.random.Philox(seed))
    g = rng.standard_normal((N, 4))
    coords = g / np.linalg.norm(g, axis=1, keepdims=True)
    weight = np.full(N, 2.0 * math.pi ** 2 / (K ** 1.5 * N))
    logger.debug("sampled %d points on S^3 (K=%g, seed=%d)", N, K, seed)
    return SphereSample(coords, weight, K=K)


def circle_coords(t, K: float = 1.0) -> np.ndarray:
    """Unit coordinates of the great circle C at arclength parameters t."""
    a = math.sqrt(K) * np.atleast_1d(np.asarray(t, dtype=float))
    return np.column_stack([np.cos(a), np.sin(a), np.zeros_like(a), np.zeros_like(a)])


def distance_to_circle(coords: np.ndarray, K: float = 1.0) -> np.ndarray:
    """Geodesic distance from unit coordinates to C = {(cos t, sin t, 0, 0)}."""
    coords = np.atleast_2d(coords)
    return np.arctan2(np.linalg.norm(coords[:, 2:], axis=1), np.linalg.norm(coords[:, :2], axis=1)) / math.sqrt(K)


def circle_length(K: float = 1.0) -> float:
    return 2.0 * math.pi / math.sqrt(K)


def with_great_circle(X: SphereSample, count: int) -> SphereSample:
    """
    Append `count` zero-weight 'string' nodes evenly spaced on C.

    String nodes resolve the pulled curve and the ball centres without
    changing the measure.
    """
    if count <= 0:
        return X
    K = X.curvature
    t = np.arange(count) * circle_length(K) / count
    coords = np.vstack([X.coords, circle_coords(t, K)])
    weight = np.concatenate([X.weight, np.zeros(count)])
    labels = np.concatenate([X.labels, X.labels.max() + 1 + np.arange(count)])
    tags = np.concatenate([X.tags, np.full(count, STRING)])
    return SphereSample(coords, weight, K=K, labels=labels, tags=tags)


def pull_set(X: FiniteMetricSpace, K_idx, p0: int) -> PulledSpace:
    """
    Collapse the points K_idx of X to the single point p0.

    Args:
        X: Space to pull
        K_idx: Indices of the collapsed set
        p0: Index in K_idx that represents the set

    Returns:
        Pulled space on (points outside K_idx) and p0, in the original order
    """
    Y = PulledSpace(X, K_idx, p0)
    logger.debug("pulled %d points to p0=%d; %d points remain", len(Y.K_idx), p0, Y.n)
    return Y


def pull_great_circle(X: SphereSample, a_tube: float) -> PulledSpace:
    """Pull the nodes within a_tube of the great circle C to the node nearest C(0)."""
    if a_tube < 0:
        raise ParameterError(f"a_tube must be nonnegative, got {a_tube}")
    K = X.curvature
    near = np.flatnonzero(distance_to_circle(X.coords, K) <= a_tube)
    if len(near) == 0:
        raise ParameterError(f"no node within a_tube={a_tube} of the great circle")
    p0 = int(near[np.argmax(X.coords[near] @ circle_coords(0.0, K)[0])])
    return pull_set(X, near, p0)


def check_metric(
    X: FiniteMetricSpace,
    tol: float = 1e-12,
    max_exhaustive: int = 300,
    n_triples: int = 10**6,
    seed: int = 0,
) -> MetricCheck:
    """
    Check symmetry, zero diagonal and the triangle inequality.

    Exhaustive over all triples for n <= max_exhaustive, otherwise over
    n_triples seeded random triples. Tolerances are relative to the diameter.
    """
    n = X.n
    if n <= max_exhaustive:
        D = X.dist
        diam = float(D.max()) if n else 0.0
        asym = float(np.max(np.abs(D - D.T))) if n else 0.0
        diag = float(np.max(np.abs(np.diag(D)))) if n else 0.0
        excess = 0.0
        for k in range(n):
            excess = max(excess, float(np.max(D - (D[:, k:k + 1] + D[k:k + 1, :]))))
        checked = n ** 3
    else:
        rng = np.random.Generator(np.random.Philox(seed))
        i, j, k = rng.integers(0, n, size=(3, n_triples))
        dij = X.pair_distances(i, j)
        excess = float(np.max(dij - X.pair_distances(i, k) - X.pair_distances(k, j)))
        asym = float(np.max(np.abs(dij - X.pair_distances(j, i))))
        diag = float(np.max(np.abs(X.pair_distances(i, i))))
        diam = X.diameter()
        checked = n_triples

    bound = tol * max(diam, np.finfo(float).tiny)
    ok = asym <= bound and diag == 0.0 and excess <= bound
    return MetricCheck(n, diam, asym, diag, max(excess, 0.0), checked, ok)


def ball_volume(X: FiniteMetricSpace, p: int, r: float) -> float:
    """
    Measure of the closed ball B(p, r) = {x : d(p, x) <= r}.

    Raises:
        ParameterError: If r is negative
    """
    if r < 0:
        raise ParameterError(f"radius must be nonnegative, got {r}")
    return float(np.sum(X.weight[X.row(p) <= r]))


def scalar_probe(
    X: FiniteMetricSpace,
    p: Union[int, Sequence[int]],
    radii: Sequence[float],
    min_points: int = PROBE_MIN_POINTS,
    exclude_center: bool = True,
) -> ProbeReport:
    """
    Volume-ratio estimate of scalar curvature at p.

    ratio(r) = (V_E(r) - Vol B(p, r)) / (r^2 V_E(r)) with V_E(r) = 4/3 pi r^3,
    and scal_est = 30 ratio. When p is a sequence of indices the ball volumes
    are averaged over those centres. The centre's own atom is left out since
    a continuum ball has none.

    Raises:
        ProbeResolutionError: If a radius holds fewer than min_points points
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) == 0 or np.any(radii <= 0):
        raise ParameterError("radii must be a nonempty list of positive values")
    centers = np.atleast_1d(np.asarray(p, dtype=np.intp))

    vols, counts = X.mean_ball_volumes(centers, radii)
    if exclude_center:
        vols = vols - float(np.mean(X.weight[centers]))
        counts = counts - float(np.mean(X.weight[centers] > 0))

    thin = np.flatnonzero(counts < min_points)
    if len(thin):
        r = radii[thin[0]]
        raise ProbeResolutionError(
            f"radius {r:g} holds {counts[thin[0]]:.1f} sample points on average, below {min_points}"
        )

    v_e = 4.0 / 3.0 * math.pi * radii ** 3
    ratio = (v_e - vols) / (radii ** 2 * v_e)
    return ProbeReport(radii=radii, ball_vol=vols, ratio=ratio, scal_est=30.0 * ratio,
                       counts=counts, n_centers=len(centers))


def save_space(X: FiniteMetricSpace, path: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> Path:
    """Write a space container (npz) with n, row-major dist, weight, coords, labels, tags."""
    path = Path(path)
    arrays = {
        "n": np.array(X.n),
        "dist": np.ascontiguousarray(X.dist),
        "weight": X.weight,
        "labels": X.labels,
        "tags": X.tags,
        "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    if X.coords is not None:
        arrays["coords"] = X.coords
    if X.curvature is not None:
        arrays["curvature"] = np.array(X.curvature)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    return path


def load_space(path: Union[str, Path]) -> Tuple[FiniteMetricSpace, Dict[str, Any]]:
    """Read a container written by save_space; returns (space, meta)."""
    with np.load(Path(path), allow_pickle=False) as data:
        space = FiniteMetricSpace(
            data["weight"],
            dist=data["dist"],
            coords=data["coords"] if "coords" in data else None,
            labels=data["labels"],
            tags=data["tags"],
            curvature=float(data["curvature"]) if "curvature" in data else None,
        )
        meta = json.loads(str(data["meta"]))
    return space, meta
