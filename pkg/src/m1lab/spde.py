"""Finite-difference solver for the conditional limiting density dynamics,
used as the convergence target for the particle empirical measure.

Each time step splits into (a) Crank-Nicolson diffusion sub-steps with
coefficient (1 - rho(L)^2)/2, Dirichlet walls at 0 and x_max, and (b) a
conservative transport shift by rho(L) dW. The shift contributes the missing
rho^2/2 of diffusion in mean, so the split realizes the full weak dynamics
d nu(phi) = 1/2 nu(phi'') dt + rho(L) nu(phi') dW. Diffusion sub-steps are
kept at mesh ratio <= r_target so the update is positivity preserving, and
every unit of mass is tracked: the loss L accumulates the discrete flux into
the left wall plus mass shifted below zero, far-field leakage and negative
clipping are accumulated separately, so trapz(v) + L + leaked stays at 1 up
to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .errors import StabilityError
from .paths import CadlagPath
from .particles import InitialLaw, ModelConfig, RhoTable, project, simulate

_trapz = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "DensitySolution",
    "solve",
    "project_density",
    "convergence_study",
    "ConvergenceReport",
]


@dataclass
class DensitySolution:
    """Density values on a space-time grid with exact mass bookkeeping."""

    x: np.ndarray          # (J+1,)
    times: np.ndarray      # (G+1,)
    v: np.ndarray          # (G+1, J+1), v[:, 0] = v[:, -1] = 0
    loss: np.ndarray       # (G+1,) cumulative mass absorbed at the left wall
    leaked: np.ndarray     # (G+1,) cumulative far-field leakage
    clipped: np.ndarray    # (G+1,) cumulative clipped negative mass
    rho_used: np.ndarray   # (G,)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> np.ndarray:
        return _trapz(self.v, dx=self.dx, axis=1)

    def mass_defect(self) -> float:
        """Worst deviation of trapz(v) + loss + leaked from 1."""
        return float(np.max(np.abs(self.mass() + self.loss + self.leaked - 1.0)))

    def loss_path(self) -> CadlagPath:
        return CadlagPath(self.times, self.loss, float(self.times[-1]))


def _initial_on_grid(initial, x: np.ndarray, dx: float) -> np.ndarray:
    if isinstance(initial, InitialLaw):
        tail = 1.0 - float(initial.cdf(x[-1]))
        if tail >= 1e-8:
            raise ValueError(
                f"initial mass {tail:.3g} beyond x_max = {x[-1]}; enlarge the domain")
        # Cell averages (cdf increments over [x_j - dx/2, x_j + dx/2]) keep the
        # grid mass exact even when the density jumps, e.g. a uniform law whose
        # edges fall between nodes.
        edges = np.concatenate([[x[0]], x + 0.5 * dx])
        v0 = np.diff(initial.cdf(edges)) / np.diff(edges)
    elif callable(initial):
        v0 = np.asarray(initial(x), dtype=float)
    else:
        v0 = np.asarray(initial, dtype=float)
        if v0.shape != x.shape:
            raise ValueError(
                f"initial density grid of shape {v0.shape} does not match the "
                f"spatial grid of shape {x.shape}")
    v0 = v0.copy()
    if np.any(v0 < 0) or not np.all(np.isfinite(v0)):
        raise ValueError("initial density must be finite and nonnegative")
    v0[0] = 0.0
    v0[-1] = 0.0
    mass = float(_trapz(v0, dx=dx))
    if abs(mass - 1.0) > 0.05:
        raise ValueError(
            f"initial density has grid mass {mass:.4f}; the grid does not "
            f"resolve it (refine dx or enlarge x_max)")
    return v0 / mass


def solve(dw, rho: RhoTable, initial, T: float, x_max: float, dx: float,
          r_target: float = 1.0, max_substeps: int = 4096) -> DensitySolution:
    """March the split scheme along one common-noise path.

    dw holds the G shared increments; dt = T/G. The initial density may be an
    InitialLaw (tail beyond x_max must be < 1e-8), a callable evaluated on the
    grid, or an array of grid values; it is renormalized to unit trapz mass.
    Steps whose diffusion number (1-rho^2)/2 dt/dx^2 exceeds r_target are
    split into equal sub-steps; needing more than max_substeps raises
    StabilityError with a workable dx.
    """
    dw = np.asarray(dw, dtype=float)
    if dw.ndim != 1 or dw.size < 1:
        raise ValueError("dw must be a nonempty 1-d array of increments")
    if not (T > 0 and x_max > 0 and dx > 0):
        raise ValueError("T, x_max, dx must be positive")
    if r_target <= 0:
        raise ValueError("r_target must be positive")
    G = dw.size
    dt = T / G
    J = round(x_max / dx)
    if J < 4 or abs(J * dx - x_max) > 1e-9 * max(x_max, 1.0):
        raise ValueError(f"dx = {dx} does not divide x_max = {x_max}")
    x = np.linspace(0.0, x_max, J + 1)
    times = np.linspace(0.0, T, G + 1)
    v = np.empty((G + 1, J + 1))
    v[0] = _initial_on_grid(initial, x, dx)
    loss = np.zeros(G + 1)
    leaked = np.zeros(G + 1)
    clipped = np.zeros(G + 1)
    rho_used = np.empty(G)

    factor_cache = {}
    cur = v[0].copy()
    for g in range(G):
        r = float(rho(loss[g]))
        rho_used[g] = r
        diff = 0.5 * (1.0 - r * r)
        absorbed = 0.0
        leak = 0.0
        clip = 0.0
        if diff > 0:
            mesh = diff * dt / (dx * dx)
            k = max(int(math.ceil(mesh / r_target)), 1)
            if k > max_substeps:
                good = math.sqrt(diff * dt / (r_target * max_substeps))
                raise StabilityError(
                    f"step {g} needs {k} diffusion sub-steps (cap "
                    f"{max_substeps}); use dx >= {good:.3g} or a smaller dt")
            sub_dt = dt / k
            alpha = diff * sub_dt / (2.0 * dx * dx)
            factor = factor_cache.get(alpha)
            if factor is None:
                ab = np.zeros((2, J - 1))
                ab[0, 1:] = -alpha
                ab[1, :] = 1.0 + 2.0 * alpha
                factor = cholesky_banded(ab)
                factor_cache[alpha] = factor
            flux = diff * sub_dt / dx
            for _ in range(k):
                vin = cur[1:J]
                rhs = vin + alpha * (cur[:J - 1] - 2.0 * vin + cur[2:])
                vout = cho_solve_banded((factor, False), rhs)
                absorbed += flux * 0.5 * (vin[0] + vout[0])
                leak += flux * 0.5 * (vin[-1] + vout[-1])
                cur[1:J] = vout
            neg = cur < 0
            if np.any(neg):
                clip += float(-np.sum(cur[neg]) * dx)
                cur[neg] = 0.0
        shift = r * dw[g]
        if shift != 0.0:
            before = float(np.sum(cur[1:J]))
            moved = np.interp(x - shift, x, cur)
            moved[0] = 0.0
            moved[J] = 0.0
            after = float(np.sum(moved[1:J]))
            lost = (before - after) * dx
            if shift < 0:
                absorbed += lost
            else:
                leak += lost
            cur = moved
        loss[g + 1] = loss[g] + absorbed
        leaked[g + 1] = leaked[g] + leak
        clipped[g + 1] = clipped[g] + clip
        v[g + 1] = cur
    return DensitySolution(x, times, v, loss, leaked, clipped, rho_used)


def project_density(sol: DensitySolution, phi) -> CadlagPath:
    """Path t -> trapz of v(t, x) phi(x) over the spatial grid."""
    vals = phi(sol.x) if callable(phi) else np.asarray(phi, dtype=float)
    out = _trapz(sol.v * vals[None, :], dx=sol.dx, axis=1)
    return CadlagPath(sol.times, out, float(sol.times[-1]))


@dataclass
class ConvergenceReport:
    """Distances between particle projections and the solver target."""

    N_values: List[int]
    seeds: List[int]
    distances: np.ndarray   # (len(seeds), len(N_values))
    K: int

    def medians(self) -> np.ndarray:
        return np.median(self.distances, axis=0)


def convergence_study(configs: Sequence[ModelConfig], phi,
                      x_max: float, dx: float, seeds: Sequence[int],
                      K: int, r_target: float = 1.0) -> ConvergenceReport:
    """m1 distance between nu^N(phi) and the solver's nu(phi) per N and seed.

    All configs must agree except in N; each seed is a replicate id, and the
    shared-noise stream depends only on (seed, replicate), so every N in the
    ladder sees the identical common path, which the solver also consumes.
    """
    from .metric import m1_distance

    configs = list(configs)
    if not configs:
        raise ValueError("config ladder must be nonempty")
    base = configs[0]
    for c in configs[1:]:
        same = (c.T == base.T and c.dt == base.dt and c.seed == base.seed
                and c.barrier == base.barrier
                and c.rho.to_dict() == base.rho.to_dict()
                and c.initial.to_dict() == base.initial.to_dict())
        if not same:
            raise ValueError("configs may differ only in N")
    seeds = [int(s) for s in seeds]
    dist = np.empty((len(seeds), len(configs)))
    for si, rep in enumerate(seeds):
        target = None
        for ci, cfg in enumerate(configs):
            ens = simulate(cfg, rep)
            if target is None:
                sol = solve(ens.dw, cfg.rho, cfg.initial, cfg.T, x_max, dx,
                            r_target=r_target)
                target = project_density(sol, phi)
            emp = project(ens, phi)
            dist[si, ci] = m1_distance(emp, target, K, with_witness=False).distance
    return ConvergenceReport([c.N for c in configs], seeds, dist, K)
