"""Hermite realization of the nested norm hierarchy on rapidly decreasing
functions, with certified Hilbert-Schmidt tail bounds, finite direction nets,
and the projection-based modulus bound verifier.

The k-th orthonormal Hermite function h_k carries weight (2k+2)^n in the
n-indexed norm: ||phi||_n^2 = sum_k (2k+2)^(2n) c_k^2 for phi = sum c_k h_k.
Negative n gives the dual norm on finite coefficient vectors. The normalized
basis of the p-th level is e_j^p = (2j+2)^(-p) h_j; truncation keeps
e_1^p .. e_M^p and the discarded tail sum_{k>M} (2k+2)^(2(n-p)) is bounded
above by partial sum plus integral remainder, so every reported tail is a
certified upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import CapacityError
from .paths import VectorPath, m1_modulus, m1_modulus_batch

__all__ = [
    "hermite_eval",
    "TestFunction",
    "NormLadder",
    "norm_n",
    "hs_tail",
    "choose_truncation",
    "DirectionNet",
    "build_direction_net",
    "certify_direction_net",
    "net_margin",
    "CertificationReport",
    "net_test_functions",
    "verify_modulus_bound",
    "ModulusBoundReport",
]

_PI_QUARTER = math.pi ** -0.25


def _hermite_table(kmax: int, x: np.ndarray) -> np.ndarray:
    """Values h_0(x)..h_kmax(x), shape (kmax+1,) + x.shape.

    The Gaussian factor is folded into the recurrence seed, so all rows are
    uniformly bounded and the three-term recurrence is overflow-free; for
    |x| large enough that exp(-x^2/2) underflows the rows are exactly 0.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation points must be finite")
    out = np.empty((kmax + 1,) + x.shape)
    with np.errstate(over="ignore", under="ignore"):
        g = _PI_QUARTER * np.exp(-0.5 * x * x)
    out[0] = g
    if kmax >= 1:
        out[1] = math.sqrt(2.0) * x * g
    for k in range(2, kmax + 1):
        out[k] = math.sqrt(2.0 / k) * x * out[k - 1] \
            - math.sqrt((k - 1.0) / k) * out[k - 2]
    return out


def hermite_eval(k: int, x) -> np.ndarray:
    """k-th L2-orthonormal Hermite function at x (scalar or array).

    h_0(x) = pi^(-1/4) exp(-x^2/2) and
    h_k = sqrt(2/k) x h_{k-1} - sqrt((k-1)/k) h_{k-2}. Values for huge |x|
    underflow to exactly 0 (Gaussian decay), which is the documented result
    rather than an error.
    """
    if int(k) != k or k < 0:
        raise ValueError(f"Hermite index must be a nonnegative integer, got {k}")
    arr = np.asarray(x, dtype=float)
    table = _hermite_table(int(k), arr)
    result = table[int(k)]
    if np.isscalar(x) or arr.ndim == 0:
        return float(result)
    return result


class TestFunction:
    """Finite Hermite expansion sum_k c_k h_k with exact derivative shifts."""

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients must be a nonempty 1-d array")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        self.coeffs = c
        self._derivative: Optional["TestFunction"] = None

    @property
    def dimension(self) -> int:
        return self.coeffs.size

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        table = _hermite_table(self.coeffs.size - 1, arr)
        result = np.tensordot(self.coeffs, table, axes=(0, 0))
        if np.isscalar(x) or arr.ndim == 0:
            return float(result)
        return result

    def derivative(self) -> "TestFunction":
        """Coefficients of phi' via h_k' = sqrt(k/2) h_{k-1} - sqrt((k+1)/2) h_{k+1}."""
        if self._derivative is None:
            c = self.coeffs
            n = c.size
            out = np.zeros(n + 1)
            j = np.arange(n + 1)
            # contribution of c_{j+1} sqrt((j+1)/2)
            out[: n - 1] += np.sqrt((j[: n - 1] + 1) / 2.0) * c[1:]
            # contribution of -c_{j-1} sqrt(j/2)
            out[1:] -= np.sqrt(j[1:] / 2.0) * c
            self._derivative = TestFunction(out)
        return self._derivative

    def value_at_zero(self) -> float:
        return self(0.0)


class NormLadder:
    """Weight rule k -> (2k+2)^n defining the n-th Hilbertian norm."""

    def weights(self, count: int, n: int) -> np.ndarray:
        k = np.arange(count, dtype=float)
        return (2.0 * k + 2.0) ** n

    def norm(self, coeffs, n: int) -> float:
        c = np.asarray(coeffs, dtype=float)
        return float(np.sqrt(np.sum((self.weights(c.size, n) * c) ** 2)))


def norm_n(phi, n: int) -> float:
    """sqrt(sum_k (2k+2)^(2n) c_k^2); negative n gives the dual norm."""
    c = phi.coeffs if isinstance(phi, TestFunction) else np.asarray(phi, dtype=float)
    return NormLadder().norm(c, n)


def hs_tail(n: int, p: int, M: int, terms: int = 4000) -> float:
    """Certified upper bound for sum_{k>M} (2k+2)^(2(n-p)).

    Partial sum over k = M+1 .. M+terms plus the integral remainder
    int_a^inf (2t+2)^(-q) dt with a = M+terms, valid because the summand is
    decreasing. Requires p > n so the exponent q = 2(p-n) is >= 2.
    """
    if p <= n:
        raise ValueError(f"tail diverges: need p > n, got n = {n}, p = {p}")
    if M < 0:
        raise ValueError("truncation level must be nonnegative")
    q = 2.0 * (p - n)
    k = np.arange(M + 1, M + terms + 1, dtype=float)
    partial = float(np.sum((2.0 * k + 2.0) ** (-q)))
    a = float(M + terms)
    remainder = (2.0 * a + 2.0) ** (1.0 - q) / (2.0 * (q - 1.0))
    return partial + remainder


def choose_truncation(n: int, p: int, epsilon: float) -> int:
    """Minimal M with hs_tail(n, p, M) <= epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if hs_tail(n, p, 0) <= epsilon:
        return 0
    lo, hi = 0, 1
    while hs_tail(n, p, hi) > epsilon:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if hs_tail(n, p, mid) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class DirectionNet:
    """Finite set of unit directions certified to witness segment norms."""

    dimension: int
    epsilon: float
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.dimension:
            raise ValueError("vectors must have shape (size, dimension)")
        norms = np.sqrt(np.sum(v * v, axis=1))
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("net directions must be unit vectors (1e-12)")
        self.vectors = v

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


def _sphere_net_size(dim: int, rings: int) -> int:
    if dim == 1:
        return 2
    return 2 + (rings - 2) * _sphere_net_size(dim - 1, rings)


def _sphere_net(dim: int, budget: float) -> np.ndarray:
    """Recursive polar product net on the unit sphere of R^dim.

    Rings of polar angle linspace(0, pi, nr) with spacing <= 2*budget, each
    carrying a copy of the (dim-1)-sphere net scaled by sin(psi); every unit
    vector is within chordal distance budget*(dim-1) of some net point,
    because each recursion level contributes at most budget.
    """
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    nr = max(int(math.ceil(math.pi / (2.0 * budget))) + 1, 3)
    psis = np.linspace(0.0, math.pi, nr)
    sub = _sphere_net(dim - 1, budget)
    points = []
    for psi in psis:
        s = math.sin(psi)
        if s < 1e-15:
            pole = np.zeros(dim)
            pole[0] = math.cos(psi)
            points.append(pole[None, :])
        else:
            block = np.empty((sub.shape[0], dim))
            block[:, 0] = math.cos(psi)
            block[:, 1:] = s * sub
            points.append(block)
    return np.vstack(points)


def build_direction_net(M: int, epsilon: float, max_dimension: int = 6,
                        max_size: int = 2 * 10 ** 5) -> DirectionNet:
    """Angular product net with covering radius epsilon/2 on unit directions.

    The covering radius guarantees the segment witness property: for the
    min-norm point w* of a segment in the unit ball with min norm >= eps,
    the supporting-hyperplane inequality w_lam . (w*/|w*|) >= |w*| >= eps
    holds for every lam, so a net direction within chord eps/2 of w*/|w*|
    satisfies |w_lam . theta| >= eps - eps/2, hence
    2 eps^-1 |w_lam . theta| >= 1 >= |w_lam|.

    Net size grows exponentially in M; dimensions beyond max_dimension or
    sizes beyond max_size raise CapacityError.
    """
    if int(M) != M or M < 1:
        raise ValueError(f"dimension must be a positive integer, got {M}")
    if not 0 < epsilon <= 2:
        raise ValueError(f"epsilon must lie in (0, 2], got {epsilon}")
    M = int(M)
    if M > max_dimension:
        raise CapacityError(
            f"net dimension {M} exceeds the cap {max_dimension}; "
            f"net size grows exponentially in the dimension")
    if M == 1:
        return DirectionNet(1, epsilon, np.array([[1.0]]))
    budget = (epsilon / 2.0) / (M - 1)
    rings = max(int(math.ceil(math.pi / (2.0 * budget))) + 1, 3)
    predicted = _sphere_net_size(M, rings)
    if predicted > max_size:
        raise CapacityError(
            f"net of dimension {M} at epsilon {epsilon} would hold "
            f"{predicted} directions, above the cap {max_size}")
    return DirectionNet(M, epsilon, _sphere_net(M, budget))


def _segment_quadratic(v1: np.ndarray, v2: np.ndarray):
    """Coefficients of |lam v1 + (1-lam) v2|^2 = A lam^2 + 2 B lam + C."""
    d = v1 - v2
    A = np.sum(d * d, axis=-1)
    B = np.sum(v2 * d, axis=-1)
    C = np.sum(v2 * v2, axis=-1)
    return A, B, C


def _segment_min_norm(v1: np.ndarray, v2: np.ndarray):
    """Exact min over lam in [0,1] of |lam v1 + (1-lam) v2| and its argmin."""
    A, B, C = _segment_quadratic(v1, v2)
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(A > 0, -B / np.where(A > 0, A, 1.0), 0.0)
    lam = np.clip(lam, 0.0, 1.0)
    val = np.sqrt(np.maximum(A * lam * lam + 2.0 * B * lam + C, 0.0))
    return val, lam


def _candidate_margin(v1, v2, theta, epsilon, lam):
    """min over the lam grid of 2 eps^-1 |w_lam . theta| - |w_lam|, per row."""
    a = np.sum(v1 * theta, axis=-1)
    b = np.sum(v2 * theta, axis=-1)
    A, B, C = _segment_quadratic(v1, v2)
    lam = lam[None, :]
    dots = np.abs(lam * a[:, None] + (1.0 - lam) * b[:, None])
    norms = np.sqrt(np.maximum(
        A[:, None] * lam * lam + 2.0 * B[:, None] * lam + C[:, None], 0.0))
    return np.min((2.0 / epsilon) * dots - norms, axis=1)


def net_margin(net: DirectionNet, v1, v2, lambda_grid: int = 1000):
    """Best margin over all net directions for one pair; (margin, index)."""
    v1 = np.asarray(v1, dtype=float)[None, :]
    v2 = np.asarray(v2, dtype=float)[None, :]
    lam = np.linspace(0.0, 1.0, lambda_grid)
    margins = np.array([
        _candidate_margin(v1, v2, theta[None, :], net.epsilon, lam)[0]
        for theta in net.vectors])
    best = int(np.argmax(margins))
    return float(margins[best]), best


@dataclass
class CertificationReport:
    """Randomized check of the segment witness property of a net."""

    requested: int
    tested: int
    failures: int
    worst_margin: float
    net_size: int
    attempts: int

    @property
    def passed(self) -> bool:
        return self.tested > 0 and self.failures == 0


def certify_direction_net(net: DirectionNet, trials: int, seed: int,
                          lambda_grid: int = 1000) -> CertificationReport:
    """Sample unit-ball pairs with segment min-norm >= epsilon and check
    2 eps^-1 |w_lam . theta_i| >= |w_lam| for some net direction on a lam grid.

    Failures are counted and reported, never raised. The candidate direction
    is the net point nearest (projectively) to the min-norm direction of the
    segment; pairs failing that candidate are rescanned against the whole net
    before being declared failures.
    """
    from .rng import stream

    if trials < 1:
        raise ValueError("trials must be positive")
    rng = stream(seed, 0, 0)
    lam = np.linspace(0.0, 1.0, lambda_grid)
    eps = net.epsilon
    M = net.dimension
    tested = 0
    failures = 0
    worst = np.inf
    attempts = 0
    max_attempts = 1000 * trials + 10 ** 6
    chunk = max(min(trials, 4096), 256)
    while tested < trials and attempts < max_attempts:
        draw = chunk * 4
        g = rng.standard_normal((2 * draw, M))
        g /= np.maximum(np.sqrt(np.sum(g * g, axis=1))[:, None], 1e-300)
        r = rng.random(2 * draw) ** (1.0 / M)
        pts = g * r[:, None]
        v1, v2 = pts[:draw], pts[draw:]
        attempts += draw
        minval, argmin = _segment_min_norm(v1, v2)
        keep = minval >= eps
        if not np.any(keep):
            continue
        v1, v2 = v1[keep], v2[keep]
        minval, argmin = minval[keep], argmin[keep]
        take = min(trials - tested, v1.shape[0])
        v1, v2 = v1[:take], v2[:take]
        minval, argmin = minval[:take], argmin[:take]
        wstar = (argmin[:, None] * v1 + (1.0 - argmin)[:, None] * v2) / minval[:, None]
        nearest = np.argmax(np.abs(wstar @ net.vectors.T), axis=1)
        margins = _candidate_margin(v1, v2, net.vectors[nearest], eps, lam)
        bad = np.nonzero(margins < 0)[0]
        for idx in bad:
            m, _ = net_margin(net, v1[idx], v2[idx], lambda_grid)
            margins[idx] = m
            if m < 0:
                failures += 1
        worst = min(worst, float(np.min(margins)))
        tested += take
    return CertificationReport(trials, tested, failures,
                               worst if tested else np.nan, net.size, attempts)


def net_test_functions(n: int, p: int, epsilon: float,
                       net: DirectionNet) -> List[TestFunction]:
    """One test function per net direction: phi_i = sum_j theta_i^(j) e_j^p
    with e_j^p = (2j+2)^(-p) h_j for j = 1..M, so ||phi_i||_p = 1 exactly."""
    M = choose_truncation(n, p, epsilon)
    if net.dimension != M:
        raise ValueError(
            f"net dimension {net.dimension} does not match the required "
            f"truncation level {M} for n = {n}, p = {p}, epsilon = {epsilon}")
    out = []
    j = np.arange(1, M + 1, dtype=float)
    scale = (2.0 * j + 2.0) ** (-p)
    for theta in net.vectors:
        c = np.zeros(M + 1)
        c[1:] = theta * scale
        out.append(TestFunction(c))
    return out


@dataclass
class ModulusBoundReport:
    """Both sides of the projection bound on the dual-norm M1 modulus."""

    n: int
    p: int
    epsilon: float
    delta: float
    num_paths: int
    truncation_required: int
    truncation_effective: int
    net_size: int
    dual_bound: float
    lhs: float
    projection_term: float
    rhs: float
    margin: float
    holds: bool
    anchor: Optional[float] = None
    lhs_increment: Optional[float] = None
    rhs_increment: Optional[float] = None
    margin_increment: Optional[float] = None
    holds_increment: Optional[bool] = None


def _dual_weights(D: int, order: int) -> np.ndarray:
    # path coordinate j holds the pairing with basis element j+1
    j = np.arange(1, D + 1, dtype=float)
    return (2.0 * j + 2.0) ** (2.0 * order)


def _window_rows(times: np.ndarray, horizon: float, lo: float, hi: float):
    """Row indices of a piecewise-constant path attaining values on (lo, hi)."""
    nxt = np.concatenate([times[1:], [np.inf]])
    mask = (times < hi) & (nxt > lo)
    return np.nonzero(mask)[0]


def verify_modulus_bound(paths: Sequence[VectorPath], n: int, p: int,
                         epsilon: float, delta: float,
                         anchor: Optional[float] = None,
                         net: Optional[DirectionNet] = None,
                         max_dual_bound: float = 1e12) -> ModulusBoundReport:
    """Check sup_x w_{-p}(x; delta) <= 2 c eps^-1 max_i sup_x w(x(phi_i); delta)
    + 3 c eps on a family of coefficient paths, with c = sup_x sup_t |x_t|_{-n}.

    Path coordinate j is read as the pairing with basis element j+1 of the
    normalized level-p basis. The truncation level is capped at the path
    dimension: coordinates beyond it vanish identically, so their tail
    contribution is exactly zero and the capped level is still valid. With
    anchor s given, the increment version over (s-delta, s+delta) is checked
    as well.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("path family must be nonempty")
    if delta <= 0:
        raise ValueError("delta must be positive")
    D = paths[0].dimension
    T = paths[0].horizon
    for x in paths:
        if x.dimension != D:
            raise ValueError("all paths must share the same dimension")
        if x.horizon != T:
            raise ValueError("all paths must share the same horizon")
    M_req = choose_truncation(n, p, epsilon)
    M_eff = min(M_req, D)
    if net is None:
        net = build_direction_net(M_eff, epsilon)
    elif net.dimension != M_eff:
        raise ValueError(
            f"net dimension {net.dimension} does not match the effective "
            f"truncation level {M_eff}")
    w_n = _dual_weights(D, -n)
    w_p = _dual_weights(D, -p)

    c = 0.0
    for x in paths:
        c = max(c, float(np.max(np.sqrt(np.sum(w_n * x.values ** 2, axis=1)))))
    if not np.isfinite(c) or c > max_dual_bound:
        raise ValueError(
            f"path family is not uniformly bounded in the -{n} norm (c = {c})")

    lhs = 0.0
    for x in paths:
        reweighted = VectorPath(x.times, x.values, w_p, T, interp=x.interp)
        lhs = max(lhs, m1_modulus(reweighted, delta))

    # pairing coefficients of phi_i in path coordinates
    scale = (2.0 * np.arange(1, M_eff + 1, dtype=float) + 2.0) ** (-p)
    coeff = np.zeros((net.size, D))
    coeff[:, :M_eff] = net.vectors * scale

    shared = all(x.interp == "const" for x in paths) and all(
        x.times.size == paths[0].times.size
        and np.array_equal(x.times, paths[0].times) for x in paths)
    proj = 0.0
    if shared:
        times = paths[0].times
        cols = np.concatenate([x.values @ coeff.T for x in paths], axis=1)
        proj = float(np.max(m1_modulus_batch(times, cols, T, delta)))
    else:
        from .paths import CadlagPath
        for x in paths:
            for q in coeff:
                scalar = CadlagPath(x.times, x.values @ q, T, interp=x.interp)
                proj = max(proj, m1_modulus(scalar, delta))

    rhs = 2.0 * c / epsilon * proj + 3.0 * c * epsilon
    report = ModulusBoundReport(
        n=n, p=p, epsilon=epsilon, delta=delta, num_paths=len(paths),
        truncation_required=M_req, truncation_effective=M_eff,
        net_size=net.size, dual_bound=c, lhs=lhs, projection_term=proj,
        rhs=rhs, margin=rhs - lhs, holds=lhs <= rhs)

    if anchor is not None:
        s = float(anchor)
        if not 0.0 <= s <= T:
            raise ValueError(f"anchor {s} outside the horizon [0, {T}]")
        lo, hi = s - delta, s + delta
        lhs_inc = 0.0
        proj_inc = 0.0
        for x in paths:
            if x.interp != "const":
                raise ValueError(
                    "increment check supports piecewise-constant paths only")
            rows = _window_rows(x.times, T, lo, hi)
            ref = x.eval(s)
            diff = x.values[rows] - ref
            lhs_inc = max(lhs_inc, float(
                np.max(np.sqrt(np.sum(w_p * diff ** 2, axis=1)))))
            proj_inc = max(proj_inc, float(np.max(np.abs(diff @ coeff.T))))
        rhs_inc = 2.0 * c / epsilon * proj_inc + 3.0 * c * epsilon
        report.anchor = s
        report.lhs_increment = lhs_inc
        report.rhs_increment = rhs_inc
        report.margin_increment = rhs_inc - lhs_inc
        report.holds_increment = lhs_inc <= rhs_inc
    return report
