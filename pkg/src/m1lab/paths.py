"""Cadlag paths, completed graphs, and oscillation functionals.

A path is stored by its breakpoints: strictly increasing times starting at
exactly 0, one value per breakpoint, and a horizon T >= last breakpoint.
In the default piecewise-constant mode the value at breakpoint i holds on
[t_i, t_{i+1}) and the final value holds up to and including T; a jump at
the horizon itself is expressed by a breakpoint at T. The optional
piecewise-linear mode (used for density projections) interpolates between
breakpoints and is continuous. The left limit at 0 is defined as x(0).

The M1 oscillation of x over windows of half-width delta is

    sup over t1 < t2 < t3, all inside a window of width 2*delta,
    of the distance from x(t2) to the segment [x(t1), x(t3)],

and equals zero exactly when x is monotone between segment endpoints.
For piecewise-constant paths the supremum is attained on value triples
(v_i, v_j, v_k) of intervals i < j < k whose windows are compatible, so it
is computed by exact enumeration; piecewise-linear paths add the window
edges t +- 2*delta as candidate times (the functional is convex along each
coordinate's segment, so extrema sit at these candidates).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

__all__ = [
    "CadlagPath",
    "VectorPath",
    "CompletedGraph",
    "completed_graph",
    "segment_distance",
    "m1_modulus",
    "j1_modulus",
    "endpoint_oscillation",
]


def _validate_times(times: np.ndarray, horizon: float) -> None:
    if times.ndim != 1 or times.size == 0:
        raise ValueError("breakpoints must be a nonempty 1-D array")
    if times[0] != 0.0:
        raise ValueError("first breakpoint must be exactly 0")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("breakpoints must be strictly increasing")
    if not np.isfinite(horizon) or horizon <= 0:
        raise ValueError("horizon must be positive and finite")
    if times[-1] > horizon:
        raise ValueError("breakpoints must not exceed the horizon")
    if not np.all(np.isfinite(times)):
        raise ValueError("breakpoints must be finite")


@dataclass
class CadlagPath:
    """Scalar cadlag path on [0, horizon]."""

    times: np.ndarray
    values: np.ndarray
    horizon: float
    interp: str = "const"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        _validate_times(self.times, self.horizon)
        if self.values.shape != self.times.shape:
            raise ValueError("values must match breakpoints one-to-one")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.interp not in ("const", "linear"):
            raise ValueError("interp must be 'const' or 'linear'")

    def eval(self, t):
        """Right-continuous evaluation; t outside [0, horizon] is an error."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise ValueError("evaluation time outside [0, horizon]")
        if self.interp == "linear":
            out = np.interp(t, self.times, self.values)
        else:
            idx = np.searchsorted(self.times, t, side="right") - 1
            out = self.values[np.maximum(idx, 0)]
        return float(out) if out.ndim == 0 else out

    def left_limit(self, t):
        """x(t-) with the convention x(0-) = x(0)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise ValueError("evaluation time outside [0, horizon]")
        if self.interp == "linear":
            return self.eval(t)
        idx = np.searchsorted(self.times, t, side="left") - 1
        out = self.values[np.clip(idx, 0, self.values.size - 1)]
        return float(out) if out.ndim == 0 else out

    @property
    def terminal(self) -> float:
        return float(self.values[-1])

    def jump_times(self) -> np.ndarray:
        if self.interp == "linear" or self.times.size < 2:
            return np.empty(0)
        changed = self.values[1:] != self.values[:-1]
        return self.times[1:][changed]

    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class VectorPath:
    """Cadlag path in R^M with a weighted-Euclidean seminorm.

    seminorm(v) = sqrt(sum_j weights[j] * v[j]^2); rows of `values` are the
    path values at the breakpoints.
    """

    times: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    horizon: float
    interp: str = "const"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        _validate_times(self.times, self.horizon)
        if self.values.ndim != 2 or self.values.shape[0] != self.times.size:
            raise ValueError("values must be (len(times), M)")
        if self.weights.shape != (self.values.shape[1],):
            raise ValueError("weights must have length M")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be nonnegative and finite")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.interp not in ("const", "linear"):
            raise ValueError("interp must be 'const' or 'linear'")

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def seminorm(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.sqrt(np.sum(self.weights * v * v, axis=-1))

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise ValueError("evaluation time outside [0, horizon]")
        if self.interp == "linear":
            cols = [np.interp(t, self.times, self.values[:, j])
                    for j in range(self.dimension)]
            return np.stack(cols, axis=-1)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.maximum(idx, 0)]

    def coordinate(self, j: int) -> CadlagPath:
        return CadlagPath(self.times.copy(), self.values[:, j].copy(),
                          self.horizon, self.interp)

    def pairing(self, coeffs) -> CadlagPath:
        """Scalar path t -> <x_t, phi> for phi given by coefficients."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.dimension,):
            raise ValueError("coefficient vector must have length M")
        return CadlagPath(self.times.copy(), self.values @ coeffs,
                          self.horizon, self.interp)

    def sup_seminorm(self) -> float:
        return float(np.max(self.seminorm(self.values)))


@dataclass
class CompletedGraph:
    """Polyline of a path's completed graph.

    Vertices are (value, time) pairs ordered by time, and within a fixed
    time by position along the jump from the left limit to the value, which
    realizes the graph order. Constant stretches contribute one horizontal
    segment; jumps contribute one vertical segment.
    """

    times: np.ndarray
    values: np.ndarray  # (n,) scalar or (n, M) vector
    horizon: float
    weights: Optional[np.ndarray] = None

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2

    @property
    def num_vertices(self) -> int:
        return self.times.size

    def value_norm(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.weights is None:
            return np.abs(v)
        return np.sqrt(np.sum(self.weights * v * v, axis=-1))


def completed_graph(path) -> CompletedGraph:
    """Build the completed-graph polyline of a CadlagPath or VectorPath."""
    vector = isinstance(path, VectorPath)
    vals = path.values if vector else path.values[:, None]
    times = path.times
    if path.interp == "linear":
        vt = [(vals[i], times[i]) for i in range(times.size)]
        if times[-1] < path.horizon:
            vt.append((vals[-1], path.horizon))
    else:
        vt = [(vals[0], times[0])]
        for i in range(1, times.size):
            vt.append((vals[i - 1], times[i]))
            if np.any(vals[i] != vals[i - 1]):
                vt.append((vals[i], times[i]))
        if times[-1] < path.horizon:
            vt.append((vals[-1], path.horizon))
    out_v = [vt[0][0]]
    out_t = [vt[0][1]]
    for v, t in vt[1:]:
        if t == out_t[-1] and np.all(v == out_v[-1]):
            continue
        out_v.append(v)
        out_t.append(t)
    values = np.array(out_v, dtype=float)
    gtimes = np.array(out_t, dtype=float)
    if not vector:
        values = values[:, 0]
    weights = path.weights.copy() if vector else None
    return CompletedGraph(gtimes, values, path.horizon, weights)


def _as_rows(v) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return v[None, :] if v.ndim == 1 else v


def _segment_distance_rows(v1, v2, v3, weights) -> np.ndarray:
    """Distance from each row of v2 to the segment [v1, v3], weighted norm."""
    d = v3 - v1
    num = np.sum(weights * (v2 - v1) * d, axis=-1)
    den = np.sum(weights * d * d, axis=-1)
    lam = np.zeros_like(num)
    np.divide(num, den, out=lam, where=den > 0)
    lam = np.clip(lam, 0.0, 1.0)
    res = v2 - v1 - lam[..., None] * d
    return np.sqrt(np.sum(weights * res * res, axis=-1))


def segment_distance(v1, v2, v3, weights=None) -> float:
    """Distance from the middle value v2 to the segment spanned by v1, v3.

    Equals inf over lam in [0, 1] of ||v2 - (1-lam) v1 - lam v3|| in the
    weighted Euclidean norm; scalars reduce to 0 when v2 lies between v1
    and v3 and min(|v2 - v1|, |v2 - v3|) otherwise. Zero iff v2 lies on the
    segment.
    """
    a1, a2, a3 = np.asarray(v1, float), np.asarray(v2, float), np.asarray(v3, float)
    if a1.ndim == 0:
        lo, hi = (a1, a3) if a1 <= a3 else (a3, a1)
        w = 1.0 if weights is None else float(np.asarray(weights).reshape(()))
        if lo <= a2 <= hi:
            return 0.0
        return float(np.sqrt(w)) * float(min(abs(a2 - a1), abs(a2 - a3)))
    if weights is None:
        weights = np.ones(a1.shape[-1])
    weights = np.asarray(weights, dtype=float)
    out = _segment_distance_rows(_as_rows(a1), _as_rows(a2), _as_rows(a3), weights)
    return float(out[0])


def _const_interval_count(path) -> int:
    """Number of intervals [t_i, t_{i+1}) with nonempty interior below T."""
    m = path.times.size
    if path.times[-1] == path.horizon and m >= 1:
        return m - 1
    return m


def _scalar_window_max(times, vmat, delta, m_eff) -> float:
    """Max over interval triples i < j < k with t_k - t_{i+1} < 2*delta of
    the scalar segment distance, column-wise max over vmat columns."""
    best = 0.0
    if m_eff < 3:
        return best
    two = 2.0 * delta
    khi = 1
    for i in range(m_eff - 2):
        if khi < i + 2:
            khi = i + 2
            if khi > m_eff - 1:
                break
        while khi + 1 <= m_eff - 1 and times[khi + 1] - times[i + 1] < two:
            khi += 1
        if times[khi] - times[i + 1] >= two:
            continue
        if khi < i + 2:
            continue
        interior = vmat[i + 1:khi]
        cmax = np.maximum.accumulate(interior, axis=0)
        cmin = np.minimum.accumulate(interior, axis=0)
        vi = vmat[i]
        vk = vmat[i + 2:khi + 1]
        hi = np.maximum(vi, vk)
        lo = np.minimum(vi, vk)
        cand = np.maximum(cmax - hi, lo - cmin)
        top = float(np.max(cand, initial=0.0))
        if top > best:
            best = top
    return best


def _vector_window_max(times, vals, weights, delta, m_eff) -> float:
    best = 0.0
    if m_eff < 3:
        return best
    two = 2.0 * delta
    khi = 1
    for i in range(m_eff - 2):
        if khi < i + 2:
            khi = i + 2
            if khi > m_eff - 1:
                break
        while khi + 1 <= m_eff - 1 and times[khi + 1] - times[i + 1] < two:
            khi += 1
        if times[khi] - times[i + 1] >= two or khi < i + 2:
            continue
        ks = np.arange(i + 2, khi + 1)
        reps = ks - (i + 1)
        kk = np.repeat(ks, reps)
        jj = np.concatenate([np.arange(i + 1, k) for k in ks])
        h = _segment_distance_rows(vals[i][None, :], vals[jj], vals[kk], weights)
        if h.size:
            top = float(np.max(h))
            if top > best:
                best = top
    return best


def _linear_candidates(times, horizon, delta) -> np.ndarray:
    two = 2.0 * delta
    cand = np.concatenate([times, times - two, times + two, [horizon]])
    cand = cand[(cand >= 0.0) & (cand <= horizon)]
    return np.unique(cand)


def _linear_triple_max(path, delta) -> float:
    cand = _linear_candidates(path.times, path.horizon, delta)
    vals = path.eval(cand)
    if vals.ndim == 1:
        vals = vals[:, None]
        weights = np.ones(1)
    else:
        weights = path.weights
    two = 2.0 * delta * (1.0 + 1e-12)
    best = 0.0
    n = cand.size
    khi = 0
    for i in range(n - 2):
        if khi < i + 2:
            khi = i + 2
            if khi > n - 1:
                break
        while khi + 1 <= n - 1 and cand[khi + 1] - cand[i] <= two:
            khi += 1
        if cand[khi] - cand[i] > two:
            continue
        if khi < i + 2:
            continue
        ks = np.arange(i + 2, khi + 1)
        reps = ks - (i + 1)
        kk = np.repeat(ks, reps)
        jj = np.concatenate([np.arange(i + 1, k) for k in ks])
        h = _segment_distance_rows(vals[i][None, :], vals[jj], vals[kk], weights)
        if h.size:
            best = max(best, float(np.max(h)))
    return best


def m1_modulus(path, delta: float) -> float:
    """M1 oscillation of the path over windows of half-width delta.

    The triple constraint max(0, t - delta) <= t1 < t2 < t3 < min(t + delta, T)
    swept over t in [0, T] is equivalent to t3 - t1 < 2*delta with t3 < T,
    which is what the enumeration uses. Monotone paths give exactly 0.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if path.interp == "linear":
        return _linear_triple_max(path, delta)
    m_eff = _const_interval_count(path)
    if isinstance(path, VectorPath):
        return _vector_window_max(path.times, path.values, path.weights,
                                  delta, m_eff)
    return _scalar_window_max(path.times, path.values[:, None], delta, m_eff)


def m1_modulus_batch(times, value_matrix, horizon, delta: float) -> np.ndarray:
    """M1 oscillation of many piecewise-constant scalar paths sharing one
    breakpoint grid; column j of value_matrix is one path."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    times = np.asarray(times, dtype=float)
    vmat = np.asarray(value_matrix, dtype=float)
    _validate_times(times, horizon)
    if vmat.ndim != 2 or vmat.shape[0] != times.size:
        raise ValueError("value_matrix must be (len(times), npaths)")
    m_eff = times.size - 1 if times[-1] == horizon else times.size
    out = np.zeros(vmat.shape[1])
    if m_eff < 3:
        return out
    two = 2.0 * delta
    khi = 1
    for i in range(m_eff - 2):
        if khi < i + 2:
            khi = i + 2
            if khi > m_eff - 1:
                break
        while khi + 1 <= m_eff - 1 and times[khi + 1] - times[i + 1] < two:
            khi += 1
        if times[khi] - times[i + 1] >= two or khi < i + 2:
            continue
        interior = vmat[i + 1:khi]
        cmax = np.maximum.accumulate(interior, axis=0)
        cmin = np.minimum.accumulate(interior, axis=0)
        vi = vmat[i]
        vk = vmat[i + 2:khi + 1]
        cand = np.maximum(cmax - np.maximum(vi, vk), np.minimum(vi, vk) - cmin)
        np.maximum(out, cand.max(axis=0), out=out)
    return np.maximum(out, 0.0)


def _range_values(path, a: float, b: float, closed_right: bool) -> np.ndarray:
    """Candidate extreme values of the path on (a, b) (or (a, b] closed).

    For piecewise-constant paths these are the interval values attained on
    the window; for piecewise-linear paths, breakpoint values inside plus
    the evaluations at the window edges (sup of a convex functional over a
    polyline is attained there).
    """
    times, horizon = path.times, path.horizon
    vals = path.values if path.values.ndim == 2 else path.values[:, None]
    if path.interp == "linear":
        inner = (times > a) & (times < b)
        pts = [vals[inner]]
        pts.append(np.atleast_2d(path.eval(max(a, 0.0))))
        pts.append(np.atleast_2d(path.eval(min(b, horizon))))
        return np.vstack(pts)
    nxt = np.append(times[1:], horizon)
    if closed_right:
        mask = (times <= b) & (nxt > a)
        if times[-1] == horizon and b >= horizon:
            mask[-1] = True
    else:
        mask = (times < b) & (nxt > a)
    sel = vals[mask]
    if sel.size == 0:
        sel = np.atleast_2d(path.eval(min(max(a, 0.0), horizon)))
    return sel


def endpoint_oscillation(path, delta: float) -> Tuple[float, float]:
    """(sup_{t in (0, delta)} ||x(t) - x(0)||, sup_{t in (T-delta, T)} ||x(T) - x(t)||)."""
    if not 0 < delta < path.horizon:
        raise ValueError("delta must lie in (0, horizon)")
    vector = isinstance(path, VectorPath)
    norm = path.seminorm if vector else np.abs
    x0 = path.eval(0.0)
    xT = path.eval(path.horizon)
    left_vals = _range_values(path, 0.0, delta, closed_right=False)
    right_vals = _range_values(path, path.horizon - delta, path.horizon,
                               closed_right=False)
    if not vector:
        left_vals, right_vals = left_vals[:, 0], right_vals[:, 0]
    left = float(np.max(norm(left_vals - x0)))
    right = float(np.max(norm(xT - right_vals)))
    return left, right


def j1_modulus(path, delta: float) -> float:
    """Oscillation modulus with jumps discounted: inf over partitions of
    [0, T] with block length >= delta of the max within-block oscillation.

    Cuts are restricted to path breakpoints plus T (exact for piecewise
    constant paths). If delta >= T the single-block partition is used.
    Comparison baseline only; this is the J1-style quantity that stays
    large on merging-jump families where the M1 quantities vanish.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    horizon = path.horizon
    cuts = np.unique(np.concatenate([path.times, [horizon]]))
    n = cuts.size
    if delta >= horizon:
        vals = _range_values(path, 0.0, horizon, closed_right=True)
        return float(np.max(vals) - np.min(vals))

    def osc(a, b, closed):
        vals = _range_values(path, a, b, closed_right=closed)
        return float(np.max(vals) - np.min(vals))

    inf = float("inf")
    dp = np.full(n, inf)
    dp[0] = 0.0
    for j in range(1, n):
        closed = j == n - 1
        for i in range(j):
            if cuts[j] - cuts[i] < delta:
                break
            if dp[i] == inf:
                continue
            c = max(dp[i], osc(cuts[i], cuts[j], closed))
            if c < dp[j]:
                dp[j] = c
    if dp[-1] == inf:
        return osc(0.0, horizon, True)
    return float(dp[-1])
