"""Monte Carlo diagnostics for the absorbed particle system.

Every check here turns a pathwise or moment estimate used in the tightness
analysis of the empirical measure into a finite-sample verdict:

* ``decomposition_check``: the surviving-particle average at three ordered
  times, measured by the distance of the middle value from the interval
  spanned by the outer two, is dominated pathwise by the two increments of
  the stopped average. The inequality is exact mathematics, so violations
  beyond arithmetic noise indicate a bug.
* ``fourth_moment_scaling``: fourth moments of stopped-average increments
  scale like the squared lag, with a per-replicate power-mean domination.
* ``tail_exponent_fit``: exceedance probabilities of the three-point
  oscillation fit a surface c * eta^-a * gap^(1+b); consistency requires
  b > 0.
* ``endpoint_condition_check``: oscillation near time zero splits into a
  stopped-average part and a barrier-loss part, both shrinking with the
  window.
* ``fdd_compare``: empirical joint laws of projected values at two
  population sizes, compared through a worst-case CDF distance.

Aggregations use numpy's pairwise summation, so results do not depend on
the order replicates are processed in.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hermite import TestFunction
from .particles import (ModelConfig, ParticleEnsemble, project,
                        project_stopped, simulate)
from .rng import stream

__all__ = [
    "EndpointReport",
    "FddReport",
    "FourthMomentReport",
    "TailFitReport",
    "decomposition_check",
    "endpoint_condition_check",
    "fdd_compare",
    "fit_exceedance_surface",
    "fourth_moment_scaling",
    "sample_triples",
    "tail_exponent_fit",
]


def _triple_indices(times: np.ndarray, triples) -> np.ndarray:
    """Map an (m, 3) array of grid times to grid indices.

    Triples must be strictly increasing and sit on the grid to 1e-9.
    """
    arr = np.asarray(triples, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"triples must have shape (m, 3), got {arr.shape}")
    if not np.all((arr[:, 0] < arr[:, 1]) & (arr[:, 1] < arr[:, 2])):
        raise ValueError("each triple must satisfy t1 < t2 < t3")
    idx = np.searchsorted(times, arr)
    idx = np.clip(idx, 0, len(times) - 1)
    left = np.clip(idx - 1, 0, len(times) - 1)
    idx = np.where(np.abs(times[left] - arr) < np.abs(times[idx] - arr),
                   left, idx)
    tol = 1e-9 * max(1.0, float(times[-1]))
    if np.any(np.abs(times[idx] - arr) > tol):
        bad = arr[np.any(np.abs(times[idx] - arr) > tol, axis=1)][0]
        raise ValueError(f"triple {tuple(bad)} does not sit on the time grid")
    return idx


def sample_triples(times, num_random: int = 0, seed: int = 0,
                   include_dyadic: bool = True,
                   max_lag: float = None) -> np.ndarray:
    """Build a triple set (t - u, t, t + u) over a dyadic lag ladder, plus
    uniformly random ordered grid triples. Returns unique rows, (m, 3).

    max_lag caps the one-sided lag u of the dyadic part; useful because
    barrier absorption drifts the projected path, so wide triples are
    monotone and carry no oscillation signal.
    """
    times = np.asarray(times, dtype=float)
    n = len(times)
    if n < 3:
        raise ValueError("need at least 3 grid times to form triples")
    dt = times[1] - times[0]
    cap = n - 1 if max_lag is None else int(np.floor(max_lag / dt + 1e-9))
    rows = []
    if include_dyadic:
        u = 1
        while 2 * u <= n - 1 and u <= cap:
            for frac in (0.25, 0.5, 0.75):
                center = u + int(round(frac * (n - 1 - 2 * u)))
                rows.append((times[center - u], times[center],
                             times[center + u]))
            u *= 2
    if num_random:
        rng = stream(seed, 0, 0)
        pick = np.argsort(rng.random((num_random, n)), axis=1)[:, :3]
        pick.sort(axis=1)
        # ties impossible: argsort of a row is a permutation
        rows.extend(times[pick])
    if not rows:
        return np.empty((0, 3))
    out = np.unique(np.asarray(rows, dtype=float), axis=0)
    return out[(out[:, 0] < out[:, 1]) & (out[:, 1] < out[:, 2])]


def _segment_gap(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Distance of b from the interval [min(a, c), max(a, c)], vectorized."""
    return np.maximum(0.0, np.maximum(b - np.maximum(a, c),
                                      np.minimum(a, c) - b))


def decomposition_check(ens: ParticleEnsemble, phi, triples) -> float:
    """Max over triples of LHS - RHS, where LHS is the three-point
    oscillation of the surviving average and RHS the two-increment sum of
    the stopped average. Must be <= 1e-10 (arithmetic noise only)."""
    idx = _triple_indices(ens.times, triples)
    nu = project(ens, phi).values
    nb = project_stopped(ens, phi).values
    lhs = _segment_gap(nu[idx[:, 0]], nu[idx[:, 1]], nu[idx[:, 2]])
    rhs = (np.abs(nb[idx[:, 0]] - nb[idx[:, 1]])
           + np.abs(nb[idx[:, 1]] - nb[idx[:, 2]]))
    return float(np.max(lhs - rhs))


def _lipschitz_probe(phi, hi: float, points: int = 2001) -> float:
    """Max |phi'| over [0, hi]; analytic for TestFunction, else central
    differences on the probe grid."""
    x = np.linspace(0.0, max(hi, 1e-6), points)
    if isinstance(phi, TestFunction):
        return float(np.max(np.abs(phi.derivative()(x))))
    h = x[1] - x[0]
    vals = phi(np.concatenate([[x[0] - h], x, [x[-1] + h]]))
    return float(np.max(np.abs((vals[2:] - vals[:-2]) / (2 * h))))


@dataclass(frozen=True)
class FourthMomentReport:
    lags: np.ndarray
    moments: np.ndarray
    slope: float
    intercept: float
    lipschitz: float
    replicates: int
    domination_violation: float
    low_replicates: bool

    @property
    def passed(self) -> bool:
        return bool(self.slope >= 1.7 and self.domination_violation <= 1e-10)


def fourth_moment_scaling(config: ModelConfig, phi, lags,
                          replicates: int) -> FourthMomentReport:
    """Estimate E|increment of the stopped average|^4 per lag and regress
    log-moment on log-lag. The slope should approach 2; the per-particle
    power-mean bound (1/N) sum |d phi(X^i)|^4 >= |d nu-bar(phi)|^4 is
    checked on every replicate and lag pair."""
    lags = np.asarray(lags, dtype=float)
    if lags.ndim != 1 or len(lags) < 2:
        raise ValueError("need at least two lags for a regression")
    if np.any(lags <= 0) or np.any(lags > config.T + 1e-12):
        raise ValueError("lags must lie in (0, T]")
    steps = np.round(lags / config.dt).astype(int)
    if np.any(np.abs(steps * config.dt - lags) > 1e-9) or np.any(steps < 1):
        raise ValueError("lags must be positive multiples of dt")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")

    total = np.zeros(len(lags))
    count = np.zeros(len(lags))
    violation = -np.inf
    hi = 0.0
    for r in range(replicates):
        ens = simulate(config, replicate=r)
        vals = phi(ens.positions)
        nb = np.mean(vals, axis=0)
        hi = max(hi, float(np.max(ens.positions)))
        for j, k in enumerate(steps):
            dnu = nb[k:] - nb[:-k]
            dphi4 = np.mean((vals[:, k:] - vals[:, :-k]) ** 4, axis=0)
            violation = max(violation, float(np.max(dnu ** 4 - dphi4)))
            total[j] += np.sum(dnu ** 4)
            count[j] += len(dnu)
    moments = total / count
    with np.errstate(divide="ignore"):
        logm = np.log(moments)
    if not np.all(np.isfinite(logm)):
        slope, intercept = float("nan"), float("nan")
    else:
        slope, intercept = np.polyfit(np.log(lags), logm, 1)
    return FourthMomentReport(
        lags=lags, moments=moments, slope=float(slope),
        intercept=float(intercept), lipschitz=_lipschitz_probe(phi, hi),
        replicates=replicates, domination_violation=violation,
        low_replicates=replicates < 100)


@dataclass(frozen=True)
class TailFitReport:
    etas: np.ndarray
    gaps: np.ndarray
    probs: np.ndarray
    replicates: int
    a: float
    b: float
    log_c: float
    a_se: float
    b_se: float
    violations: int
    vacuous: bool
    fitted: bool

    @property
    def passed(self) -> bool:
        if self.vacuous:
            return True
        return bool(self.fitted and self.b > 0 and self.violations == 0)


def fit_exceedance_surface(etas, gaps, probs,
                           replicates: int) -> TailFitReport:
    """Least-squares fit of log p = log c - a log eta + (1 + b) log gap over
    cells with p > 0. All-zero tables are vacuously consistent. A cell
    violates the fitted surface when its probability exceeds the surface by
    more than twice the residual spread plus its own sampling error."""
    etas = np.asarray(etas, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(etas), len(gaps)):
        raise ValueError(
            f"probs of shape {probs.shape} does not match "
            f"{len(etas)} etas x {len(gaps)} gaps")
    if np.any(etas <= 0) or np.any(gaps <= 0):
        raise ValueError("etas and gaps must be positive")
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0, 1]")

    nan = float("nan")
    mask = probs > 0
    if not np.any(mask):
        return TailFitReport(etas=etas, gaps=gaps, probs=probs,
                             replicates=replicates, a=nan, b=nan, log_c=nan,
                             a_se=nan, b_se=nan, violations=0, vacuous=True,
                             fitted=False)
    le = np.broadcast_to(np.log(etas)[:, None], probs.shape)[mask]
    lg = np.broadcast_to(np.log(gaps)[None, :], probs.shape)[mask]
    if (np.sum(mask) < 3 or len(np.unique(le)) < 2
            or len(np.unique(lg)) < 2):
        return TailFitReport(etas=etas, gaps=gaps, probs=probs,
                             replicates=replicates, a=nan, b=nan, log_c=nan,
                             a_se=nan, b_se=nan, violations=0,
                             vacuous=False, fitted=False)
    y = np.log(probs[mask])
    X = np.column_stack([np.ones_like(le), -le, lg])
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(y) - 3, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    # binomial error of log p-hat: sd ~ sqrt((1-p)/(p R))
    cell_se = np.sqrt((1.0 - probs[mask]) / (probs[mask] * max(replicates, 1)))
    band = 2.0 * np.sqrt(s2) + 2.0 * cell_se
    violations = int(np.sum(resid > band))
    return TailFitReport(
        etas=etas, gaps=gaps, probs=probs, replicates=replicates,
        a=float(coef[1]), b=float(coef[2] - 1.0), log_c=float(coef[0]),
        a_se=float(np.sqrt(cov[1, 1])), b_se=float(np.sqrt(cov[2, 2])),
        violations=violations, vacuous=False, fitted=True)


def tail_exponent_fit(ensembles: Sequence[ParticleEnsemble], phi, etas,
                      triples) -> TailFitReport:
    """Empirical exceedance of the three-point oscillation of the surviving
    average per (eta, triple), fitted as c * eta^-a * gap^(1+b)."""
    ensembles = list(ensembles)
    if not ensembles:
        raise ValueError("need at least one ensemble")
    etas = np.asarray(etas, dtype=float)
    idx = _triple_indices(ensembles[0].times, triples)
    arr = np.asarray(triples, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    gaps = arr[:, 2] - arr[:, 0]
    osc = np.empty((len(ensembles), len(idx)))
    for r, ens in enumerate(ensembles):
        nu = project(ens, phi).values
        osc[r] = _segment_gap(nu[idx[:, 0]], nu[idx[:, 1]], nu[idx[:, 2]])
    probs = np.mean(osc[None, :, :] >= etas[:, None, None], axis=1)
    return fit_exceedance_surface(etas, gaps, probs, len(ensembles))


@dataclass(frozen=True)
class EndpointReport:
    N_values: tuple
    deltas: np.ndarray
    eta: float
    exceedance: np.ndarray
    nu_bar_part: np.ndarray
    loss_part: np.ndarray
    phi_at_zero: float
    replicates: int

    @property
    def passed(self) -> bool:
        """Each estimate must shrink (no increase beyond 1e-12) along the
        decreasing delta ladder, for every N."""
        ok = True
        for table in (self.exceedance, self.nu_bar_part, self.loss_part):
            ok = ok and bool(np.all(np.diff(table, axis=1) <= 1e-12))
        return ok


def endpoint_condition_check(configs: Sequence[ModelConfig], phi, deltas,
                             eta: float = 0.05,
                             replicates: int = 200) -> EndpointReport:
    """Estimate P(sup over (0, delta] |nu_t(phi) - nu_0(phi)| >= eta) per
    (N, delta), split into the stopped-average oscillation and the
    barrier-loss term |phi(0)| E L_delta."""
    configs = list(configs)
    if not configs:
        raise ValueError("need at least one config")
    deltas = np.asarray(deltas, dtype=float)
    if deltas.ndim != 1 or len(deltas) < 1:
        raise ValueError("need a 1-D delta ladder")
    if np.any(np.diff(deltas) >= 0):
        raise ValueError("delta ladder must be strictly decreasing")
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    base = configs[0]
    for cfg in configs[1:]:
        if cfg.T != base.T or cfg.dt != base.dt:
            raise ValueError("configs must share T and dt across the N ladder")
    ks = np.floor(deltas / base.dt + 1e-9).astype(int)
    if np.any(ks < 1) or np.any(deltas > base.T + 1e-12):
        raise ValueError("each delta must lie in [dt, T]")

    phi0 = (phi.value_at_zero() if isinstance(phi, TestFunction)
            else float(phi(np.zeros(1))[0]))
    exc = np.zeros((len(configs), len(deltas)))
    nup = np.zeros_like(exc)
    lop = np.zeros_like(exc)
    for i, cfg in enumerate(configs):
        for r in range(replicates):
            ens = simulate(cfg, replicate=r)
            nu = project(ens, phi).values
            nb = project_stopped(ens, phi).values
            loss = ens.loss_values()
            run_nu = np.maximum.accumulate(np.abs(nu - nu[0]))
            run_nb = np.maximum.accumulate(np.abs(nb - nb[0]))
            exc[i] += run_nu[ks] >= eta
            nup[i] += run_nb[ks]
            lop[i] += loss[ks]
    exc /= replicates
    nup /= replicates
    lop = np.abs(phi0) * lop / replicates
    return EndpointReport(
        N_values=tuple(cfg.N for cfg in configs), deltas=deltas, eta=eta,
        exceedance=exc, nu_bar_part=nup, loss_part=lop,
        phi_at_zero=float(phi0), replicates=replicates)


@dataclass(frozen=True)
class FddReport:
    distance: float
    dimension: int
    n1: int
    n2: int
    num_probes: int


def _joint_values(batch: Sequence[ParticleEnsemble], phis, idx) -> np.ndarray:
    rows = []
    for ens in batch:
        vec = [project(ens, phi).values[idx] for phi in phis]
        rows.append(np.concatenate(vec))
    return np.asarray(rows)


def fdd_compare(batch1: Sequence[ParticleEnsemble],
                batch2: Sequence[ParticleEnsemble], phis,
                times) -> FddReport:
    """Worst-case empirical joint-CDF distance between the laws of the
    vector (nu_t(phi_i))_{i,t} in two ensembles' batches; the probe grid is
    the pooled sample. Diagnostic only, no verdict."""
    batch1, batch2 = list(batch1), list(batch2)
    if not batch1 or not batch2:
        raise ValueError("both batches must be nonempty")
    phis = list(phis)
    times = np.asarray(times, dtype=float)
    if not phis or times.ndim != 1 or len(times) == 0:
        raise ValueError("need at least one test function and one time")
    grid = batch1[0].times
    pos = np.searchsorted(grid, times)
    pos = np.clip(pos, 0, len(grid) - 1)
    left = np.clip(pos - 1, 0, len(grid) - 1)
    pos = np.where(np.abs(grid[left] - times) < np.abs(grid[pos] - times),
                   left, pos)
    if np.any(np.abs(grid[pos] - times) > 1e-9 * max(1.0, grid[-1])):
        raise ValueError("requested times must sit on the shared grid")
    v1 = _joint_values(batch1, phis, pos)
    v2 = _joint_values(batch2, phis, pos)
    probes = np.concatenate([v1, v2], axis=0)
    f1 = np.mean(np.all(v1[:, None, :] <= probes[None, :, :], axis=2), axis=0)
    f2 = np.mean(np.all(v2[:, None, :] <= probes[None, :, :], axis=2), axis=0)
    return FddReport(distance=float(np.max(np.abs(f1 - f2))),
                     dimension=v1.shape[1], n1=len(batch1), n2=len(batch2),
                     num_probes=len(probes))
