"""Graph-matching approximation of the M1 pseudometric.

Both completed graphs are sampled along arc length in the product metric
max(value seminorm, |time|); a monotone min-max matching between the two
sample sequences is computed by dynamic programming,

    cost(i, j) = max(paircost(i, j),
                     min(cost(i-1, j), cost(i, j-1), cost(i-1, j-1))),

whose value is the max pair cost along the best staircase from (0, 0) to
(P-1, Q-1). Any monotone staircase induces a pair of continuous parametric
representations by interpolation, and the pair cost is convex along the
interpolated segments, so the DP value is always an upper bound for the
underlying infimum; it converges as the grids refine. Sample grids are the
union of a uniform arc grid and all vertices, so refining K -> 2K-1 gives
nested grids and the estimate is nonincreasing under refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .paths import CadlagPath, VectorPath, CompletedGraph, completed_graph

__all__ = [
    "ParametricRepresentation",
    "MatchingResult",
    "sample_parametrization",
    "m1_distance",
    "m1_distance_refined",
    "projection_distance",
]


@dataclass
class ParametricRepresentation:
    """Sampled spatial parametrization of a completed graph.

    s holds normalized arc-length positions in [0, 1]; (values[i], times[i])
    is the graph point at position s[i]. Vertices of the polyline are always
    among the samples.
    """

    s: np.ndarray
    values: np.ndarray
    times: np.ndarray
    weights: Optional[np.ndarray]

    @property
    def size(self) -> int:
        return self.s.size

    def max_gap(self) -> float:
        """Largest product-metric gap between consecutive samples."""
        dt = np.abs(np.diff(self.times))
        dv = np.diff(self.values, axis=0)
        if self.values.ndim == 2:
            w = self.weights if self.weights is not None else np.ones(dv.shape[1])
            dz = np.sqrt(np.sum(w * dv * dv, axis=1))
        else:
            dz = np.abs(dv)
        if dt.size == 0:
            return 0.0
        return float(np.max(np.maximum(dz, dt)))


@dataclass
class MatchingResult:
    """Outcome of a discrete M1 matching."""

    distance: float
    grid_size: int
    witness: List[Tuple[int, int]]
    converged: bool
    grid_gap: float


def _segment_lengths(graph: CompletedGraph) -> np.ndarray:
    dt = np.abs(np.diff(graph.times))
    dv = np.diff(graph.values, axis=0)
    dz = graph.value_norm(dv)
    return np.maximum(dz, dt)


def sample_parametrization(graph: CompletedGraph, K: int) -> ParametricRepresentation:
    """Sample >= K points along the graph polyline by arc length.

    The sample set is the union of the uniform arc grid {q L / (K-1)} and
    the vertex positions, so every vertex is included and consecutive gaps
    are at most L / (K-1). K below the vertex count is an error naming the
    minimum.
    """
    n = graph.num_vertices
    if K < n:
        raise ValueError(
            f"K = {K} is too small: the completed graph has {n} vertices, "
            f"so K must be at least {n}")
    seg = _segment_lengths(graph)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    if total == 0.0:
        positions = cum[:1]
    else:
        uniform = np.linspace(0.0, total, K)
        positions = np.unique(np.concatenate([uniform, cum]))
    idx = np.clip(np.searchsorted(cum, positions, side="right") - 1, 0, max(n - 2, 0))
    left = cum[idx]
    width = np.where(seg[idx] > 0, seg[idx], 1.0) if seg.size else np.ones(1)
    frac = np.clip((positions - left) / width, 0.0, 1.0)
    times = graph.times[idx] + frac * (graph.times[np.minimum(idx + 1, n - 1)] - graph.times[idx])
    if graph.is_vector:
        values = graph.values[idx] + frac[:, None] * (
            graph.values[np.minimum(idx + 1, n - 1)] - graph.values[idx])
    else:
        values = graph.values[idx] + frac * (graph.values[np.minimum(idx + 1, n - 1)] - graph.values[idx])
    s = positions / total if total > 0 else positions
    return ParametricRepresentation(s, values, times,
                                    None if graph.weights is None else graph.weights.copy())


def _pair_cost_row(rep_x: ParametricRepresentation, rep_y: ParametricRepresentation,
                   i: int) -> np.ndarray:
    dt = np.abs(rep_x.times[i] - rep_y.times)
    dv = rep_x.values[i] - rep_y.values
    if rep_x.values.ndim == 2:
        w = rep_x.weights if rep_x.weights is not None else np.ones(dv.shape[1])
        dz = np.sqrt(np.sum(w * dv * dv, axis=1))
    else:
        dz = np.abs(dv)
    return np.maximum(dz, dt)


def _dp_value(rep_x: ParametricRepresentation, rep_y: ParametricRepresentation) -> float:
    """Anti-diagonal sweep of the min-max DP; O(P + Q) memory."""
    P, Q = rep_x.size, rep_y.size
    tx, ty = rep_x.times, rep_y.times
    vx, vy = rep_x.values, rep_y.values
    vector = vx.ndim == 2
    w = rep_x.weights if (vector and rep_x.weights is not None) else None
    inf = np.inf
    prev = np.full(P, inf)   # diagonal d-1, indexed by i
    prev2 = np.full(P, inf)  # diagonal d-2
    cur = np.full(P, inf)
    for d in range(P + Q - 1):
        lo = max(0, d - Q + 1)
        hi = min(d, P - 1)
        ii = np.arange(lo, hi + 1)
        jj = d - ii
        dt = np.abs(tx[ii] - ty[jj])
        dv = vx[ii] - vy[jj]
        if vector:
            ww = w if w is not None else np.ones(dv.shape[1])
            dz = np.sqrt(np.sum(ww * dv * dv, axis=1))
        else:
            dz = np.abs(dv)
        pc = np.maximum(dz, dt)
        if d == 0:
            cur[:] = inf
            cur[0] = pc[0]
        else:
            left = prev[ii]                       # (i, j-1)
            up = np.full(ii.shape, inf)
            diag = np.full(ii.shape, inf)
            mask = ii > 0
            up[mask] = prev[ii[mask] - 1]         # (i-1, j)
            diag[mask] = prev2[ii[mask] - 1]      # (i-1, j-1)
            left = np.where(jj > 0, left, inf)
            up = np.where(jj <= d - 1, up, inf)   # j of up-neighbor must exist
            best = np.minimum(np.minimum(left, up), diag)
            cur[:] = inf
            cur[ii] = np.maximum(pc, best)
        prev2, prev, cur = prev, cur, prev2
    return float(prev[P - 1])


def _witness(rep_x: ParametricRepresentation, rep_y: ParametricRepresentation,
             dstar: float) -> List[Tuple[int, int]]:
    """Monotone staircase through {paircost <= dstar}, ties toward diagonal.

    For a min-max DP the optimal value is a threshold: a monotone path
    through cells with pair cost <= dstar exists and any such path attains
    max cost exactly dstar. Reachability rows are computed by a masked
    forward flood and stored as packed bits.
    """
    P, Q = rep_x.size, rep_y.size
    rows = []
    prev_reach = np.zeros(Q, dtype=bool)
    col = np.arange(Q)
    for i in range(P):
        feas = _pair_cost_row(rep_x, rep_y, i) <= dstar
        if i == 0:
            m = np.zeros(Q, dtype=bool)
            m[0] = feas[0]
        else:
            m = prev_reach.copy()
            m[1:] |= prev_reach[:-1]
        runs = np.cumsum(~feas)
        seed = np.where(m & feas, runs, -1)
        reach = feas & (np.maximum.accumulate(seed) == runs)
        if i == 0:
            reach &= np.maximum.accumulate(feas)  # row 0 reachable only from (0,0)
            reach[0] = feas[0]
        rows.append(np.packbits(reach))
        prev_reach = reach
    if not _bit(rows[P - 1], Q - 1):
        raise RuntimeError("witness reconstruction failed to reach the end cell")
    pairs = [(P - 1, Q - 1)]
    i, j = P - 1, Q - 1
    while (i, j) != (0, 0):
        if i > 0 and j > 0 and _bit(rows[i - 1], j - 1):
            i, j = i - 1, j - 1
        elif i > 0 and _bit(rows[i - 1], j):
            i = i - 1
        elif j > 0 and _bit(rows[i], j - 1):
            j = j - 1
        else:
            raise RuntimeError("witness backtrack stuck")
        pairs.append((i, j))
    pairs.reverse()
    return pairs


def _bit(packed: np.ndarray, j: int) -> bool:
    return bool((packed[j >> 3] >> (7 - (j & 7))) & 1)


def _check_compatible(x, y):
    if type(x) is not type(y) and not (
            isinstance(x, (CadlagPath, VectorPath)) and isinstance(y, type(x))):
        raise ValueError("paths must be of the same kind")
    if x.horizon != y.horizon:
        raise ValueError("paths must share the same horizon")
    if isinstance(x, VectorPath):
        if x.dimension != y.dimension:
            raise ValueError("vector paths must share the dimension")
        if not np.array_equal(x.weights, y.weights):
            raise ValueError("vector paths must share the seminorm weights")


def m1_distance(x, y, K: int, with_witness: bool = True) -> MatchingResult:
    """Discrete M1 matching distance between two paths at grid size K.

    Returns the DP value together with the realized grid size (>= K after
    vertex inclusion), a witness staircase whose max pair cost equals the
    value, and the largest sample gap used for tolerance bookkeeping.
    """
    _check_compatible(x, y)
    gx, gy = completed_graph(x), completed_graph(y)
    need = max(gx.num_vertices, gy.num_vertices)
    if K < need:
        raise ValueError(
            f"K = {K} is too small: these completed graphs need K >= {need}")
    rx = sample_parametrization(gx, K)
    ry = sample_parametrization(gy, K)
    dstar = _dp_value(rx, ry)
    gap = max(rx.max_gap(), ry.max_gap())
    witness: List[Tuple[int, int]] = []
    if with_witness:
        witness = _witness(rx, ry, dstar)
        wmax = 0.0
        for i, j in witness:
            dt = abs(float(rx.times[i]) - float(ry.times[j]))
            dv = rx.values[i] - ry.values[j]
            if rx.values.ndim == 2:
                w = rx.weights if rx.weights is not None else np.ones(dv.shape[0])
                dz = float(np.sqrt(np.sum(w * dv * dv)))
            else:
                dz = abs(float(dv))
            wmax = max(wmax, max(dz, dt))
        if wmax != dstar:
            raise RuntimeError("witness max cost does not match the DP value")
    return MatchingResult(dstar, max(rx.size, ry.size), witness, True, gap)


def m1_distance_refined(x, y, tol: float = 1e-4, k_start: Optional[int] = None,
                        k_cap: int = 2 ** 14) -> MatchingResult:
    """Refine the grid (K -> 2K - 1, nested) until successive estimates
    differ by less than tol; hitting the cap flags converged = False."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    gx, gy = completed_graph(x), completed_graph(y)
    need = max(gx.num_vertices, gy.num_vertices)
    K = max(k_start or 0, need, 16)
    last = m1_distance(x, y, K, with_witness=False)
    while True:
        K2 = 2 * K - 1
        if K2 > k_cap:
            final = m1_distance(x, y, K)
            final.converged = False
            return final
        nxt = m1_distance(x, y, K2, with_witness=False)
        if abs(nxt.distance - last.distance) < tol:
            final = m1_distance(x, y, K2)
            final.converged = True
            return final
        K, last = K2, nxt


def projection_distance(x: VectorPath, y: VectorPath,
                        testset: Sequence[np.ndarray], K: int) -> float:
    """Max over the test set of the scalar M1 distance of the pairings.

    This is the computable per-test-function surrogate of the finite
    test-set pseudometric (a lower bound for the joint matching).
    """
    testset = list(testset)
    if not testset:
        raise ValueError("testset must be nonempty")
    best = 0.0
    for coeffs in testset:
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (x.dimension,):
            raise ValueError(
                f"coefficient vector of shape {c.shape} does not match "
                f"path dimension {x.dimension}")
        r = m1_distance(x.pairing(c), y.pairing(c), K, with_witness=False)
        best = max(best, r.distance)
    return best
