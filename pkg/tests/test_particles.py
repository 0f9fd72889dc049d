"""Tests for the absorbed correlated particle system: simulation, loss,
empirical projections, the stopped decomposition, and persistence."""

import io
import math

import numpy as np
import pytest
from scipy.stats import norm

from m1lab import (
    InitialLaw,
    ModelConfig,
    RhoTable,
    TestFunction,
    evolution_residual,
    load_ensemble,
    loss_process,
    m1_modulus,
    project,
    project_stopped,
    save_ensemble,
    simulate,
)


def config(N=64, T=0.5, dt=1 / 64, rho=0.0, a=0.8, b=1.2, seed=0,
           barrier="grid-check"):
    return ModelConfig(N=N, T=T, dt=dt, rho=RhoTable.constant(rho),
                       initial=InitialLaw("uniform", a=a, b=b),
                       barrier=barrier, seed=seed)


def point_start(x0=1.0, **kw):
    return config(a=x0 - 1e-9, b=x0 + 1e-9, **kw)


class TestValidation:
    def test_rho_above_one(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            RhoTable(np.array([0.0, 1.0]), np.array([0.3, 1.5]))

    def test_rho_nodes_cover_unit_interval(self):
        with pytest.raises(ValueError):
            RhoTable(np.array([0.2, 1.0]), np.array([0.3, 0.3]))

    def test_dt_must_divide_T(self):
        with pytest.raises(ValueError, match="divide"):
            config(T=0.5, dt=0.15)

    def test_dt_positive(self):
        with pytest.raises(ValueError):
            config(dt=0.0)

    def test_unknown_family(self):
        with pytest.raises(ValueError, match="unknown initial law"):
            InitialLaw("beta", a=1.0, b=2.0)

    def test_uniform_requires_positive_ordered(self):
        with pytest.raises(ValueError):
            InitialLaw("uniform", a=1.0, b=1.0)
        with pytest.raises(ValueError):
            InitialLaw("uniform", a=-0.5, b=1.0)

    def test_lognormal_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            InitialLaw("lognormal", mu=0.0, sigma=0.0)

    def test_shifted_exponential_rate(self):
        with pytest.raises(ValueError, match="rate"):
            InitialLaw("shifted-exponential", shift=0.0, rate=-1.0)

    def test_barrier_mode(self):
        with pytest.raises(ValueError, match="barrier"):
            config(barrier="reflect")

    def test_bad_replicate(self):
        with pytest.raises(ValueError, match="replicate"):
            simulate(config(), replicate=-1)

    def test_config_round_trip(self):
        c = config(rho=0.4, barrier="brownian-bridge", seed=9)
        d = ModelConfig.from_dict(c.to_dict())
        assert d.to_dict() == c.to_dict()
        assert d.steps == c.steps

    def test_initial_law_cdf_density_consistency(self):
        # integral comparison, since the uniform density jumps at its edges
        for law in (InitialLaw("uniform", a=0.5, b=1.5),
                    InitialLaw("lognormal", mu=0.1, sigma=0.4),
                    InitialLaw("shifted-exponential", shift=0.2, rate=2.0)):
            x = np.linspace(0.0, 8.0, 160001)
            cdf = law.cdf(x)
            assert np.all(np.diff(cdf) >= -1e-15)
            dens = law.density(x)
            integral = np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))
            assert np.max(np.abs(integral - (cdf[1:] - cdf[0]))) < 1e-4


class TestFirstPassage:
    def test_reflection_principle(self):
        # absorbed Brownian motion from 1: P(tau <= 1) = 2 Phi(-1); the
        # bridge correction removes the O(sqrt(dt)) crossing bias
        cfg = point_start(N=128, T=1.0, dt=1 / 128, barrier="brownian-bridge")
        hits = 0
        total = 0
        for r in range(100):
            ens = simulate(cfg, replicate=r)
            hits += int(np.sum(np.isfinite(ens.tau)))
            total += ens.N
        p_hat = hits / total
        p = 2.0 * norm.cdf(-1.0)
        se = math.sqrt(p * (1 - p) / total)
        assert abs(p_hat - p) <= 3.0 * se

    def test_unreachable_barrier(self):
        cfg = config(N=32, T=1.0, dt=1 / 32, a=1e6, b=2e6)
        ens = simulate(cfg)
        assert np.all(np.isinf(ens.tau))
        assert loss_process(ens).terminal == 0.0

    def test_bridge_absorbs_no_later_than_grid_check(self):
        grid = simulate(config(N=256, T=1.0, dt=1 / 64, seed=3))
        bridge = simulate(config(N=256, T=1.0, dt=1 / 64, seed=3,
                                 barrier="brownian-bridge"))
        # same draws, so tau can only move earlier and onto midpoints
        assert np.all(bridge.tau <= grid.tau)
        np.testing.assert_array_equal(grid.positions[:, 0],
                                      bridge.positions[:, 0])


class TestCommonNoise:
    def test_rho_one_differences_frozen(self):
        cfg = config(N=16, T=0.5, dt=1 / 64, rho=1.0, a=5.0, b=9.0)
        ens = simulate(cfg)
        diffs = ens.positions - ens.positions[0]
        # no absorption at this height, so particle gaps never move
        assert np.all(np.isinf(ens.tau))
        np.testing.assert_allclose(diffs, diffs[:, :1] * np.ones_like(diffs),
                                   atol=1e-12)

    def test_rho_zero_ignores_shared_noise(self):
        cfg = config(N=8, T=0.5, dt=1 / 64, rho=0.0, a=1e6, b=2e6)
        ens = simulate(cfg)
        incr = np.diff(ens.positions, axis=1)
        c = np.corrcoef(incr[0], ens.dw)[0, 1]
        assert abs(c) < 0.5

    def test_pairwise_increment_correlation(self):
        # corr(dX^i, dX^j) = rho^2 away from the barrier
        rho0 = 0.6
        cfg = config(N=24, T=4.0, dt=1 / 128, rho=rho0, a=1e6, b=2e6)
        ens = simulate(cfg)
        incr = np.diff(ens.positions, axis=1)
        cmat = np.corrcoef(incr)
        off = cmat[np.triu_indices_from(cmat, k=1)]
        assert np.mean(off) == pytest.approx(rho0 ** 2, abs=0.02)

    def test_shared_noise_identical_across_system_sizes(self):
        small = simulate(config(N=4, seed=11))
        large = simulate(config(N=512, seed=11))
        np.testing.assert_array_equal(small.dw, large.dw)


class TestLossProcess:
    def test_monotone_with_unit_fractions(self):
        ens = simulate(config(N=32, T=1.0, dt=1 / 64, a=0.2, b=0.6, seed=2))
        L = loss_process(ens)
        assert np.all(np.diff(L.values) >= 0)
        assert L.values[0] == 0.0
        steps = np.round(L.values * ens.N)
        np.testing.assert_allclose(L.values, steps / ens.N, atol=1e-15)

    @pytest.mark.parametrize("delta", [0.01, 0.1, 0.5])
    def test_loss_has_zero_m1_modulus(self, delta):
        ens = simulate(config(N=32, T=1.0, dt=1 / 64, a=0.2, b=0.6, seed=2))
        assert m1_modulus(loss_process(ens), delta) == 0.0

    def test_everyone_absorbed(self):
        # bridge mode catches interior crossings; this seeded run loses
        # every particle within a few steps
        cfg = config(N=16, T=2.0, dt=1 / 32, a=0.01, b=0.02, seed=1,
                     barrier="brownian-bridge")
        ens = simulate(cfg)
        assert np.all(np.isfinite(ens.tau))
        assert loss_process(ens).terminal == 1.0


class TestProjections:
    def test_sup_bound(self):
        cfg = config(N=64, seed=4)
        ens = simulate(cfg)
        phi = TestFunction([0.5, -0.3, 0.8])
        nu = project(ens, phi)
        sup = np.max(np.abs(phi(np.linspace(-10, 10, 4001))))
        assert np.max(np.abs(nu.values)) <= sup + 1e-12

    def test_zero_after_total_absorption(self):
        cfg = config(N=16, T=2.0, dt=1 / 32, a=0.01, b=0.02, seed=1,
                     barrier="brownian-bridge")
        ens = simulate(cfg)
        assert np.all(np.isfinite(ens.tau))
        phi = TestFunction([0.7, 0.1])
        nu = project(ens, phi)
        after = ens.times > np.max(ens.tau)
        assert np.any(after)
        assert np.all(nu.values[after] == 0.0)

    def test_indicator_surrogate_complements_loss(self):
        ens = simulate(config(N=32, T=1.0, dt=1 / 64, a=0.3, b=0.8, seed=5))
        ones = project(ens, lambda x: np.ones_like(x))
        L = loss_process(ens)
        np.testing.assert_allclose(ones.values + L.values, 1.0, atol=1e-14)

    def test_stopped_decomposition_identity(self):
        # nu-bar = nu + phi(0) L at every grid time
        ens = simulate(config(N=48, T=1.0, dt=1 / 64, a=0.3, b=0.9, seed=6))
        phi = TestFunction([0.9, 0.2, -0.4])
        nu = project(ens, phi)
        nub = project_stopped(ens, phi)
        L = loss_process(ens)
        lhs = nub.values
        rhs = nu.values + phi(0.0) * L.values
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_vanishing_at_zero_collapses_stopped(self):
        ens = simulate(config(N=32, seed=7))
        phi = TestFunction([0.0, 1.0])  # odd, so phi(0) = 0
        np.testing.assert_array_equal(project(ens, phi).values,
                                      project_stopped(ens, phi).values)

    def test_constant_approximant_tracks_mass(self):
        # least-squares Hermite fit of the constant 1 over the occupied
        # range turns the stopped projection into the conserved mass
        ens = simulate(config(N=64, T=0.5, dt=1 / 64, seed=8))
        lo = -0.5
        hi = float(np.max(ens.positions)) + 0.5
        xs = np.linspace(lo, hi, 400)
        from m1lab import hermite_eval
        A = np.stack([hermite_eval(k, xs) for k in range(48)], axis=1)
        coeffs, *_ = np.linalg.lstsq(A, np.ones_like(xs), rcond=None)
        phi = TestFunction(coeffs)
        nub = project_stopped(ens, phi)
        np.testing.assert_allclose(nub.values, 1.0, atol=5e-3)


class TestEvolutionResidual:
    def test_far_support_vanishes(self):
        cfg = config(N=1, T=0.5, dt=1 / 32, a=1e6, b=2e6)
        ens = simulate(cfg)
        phi = TestFunction([0.0, 1.0])  # mass near the origin only
        res = evolution_residual(ens, phi)
        assert np.max(np.abs(res.values)) == 0.0

    def test_value_at_zero_gate(self):
        ens = simulate(config(N=4))
        with pytest.raises(ValueError, match="phi"):
            evolution_residual(ens, TestFunction([1.0]))

    def test_second_moment_shrinks_with_system_size(self):
        phi = TestFunction([0.0, 0.8, 0.0, -0.2])
        sizes = [16, 64, 256]
        mean_sq = []
        for N in sizes:
            cfg = config(N=N, T=0.5, dt=1 / 32, rho=0.3, seed=13)
            vals = []
            for r in range(60):
                res = evolution_residual(simulate(cfg, replicate=r), phi)
                vals.append(res.terminal ** 2)
            mean_sq.append(np.mean(vals))
        slope = np.polyfit(np.log(sizes), np.log(mean_sq), 1)[0]
        assert -1.5 <= slope <= -0.5

    def test_residual_is_grid_path(self):
        ens = simulate(config(N=8, seed=1))
        res = evolution_residual(ens, TestFunction([0.0, 0.5]))
        assert res.values.size == ens.times.size
        assert res.values[0] == 0.0


class TestDeterminism:
    def test_bit_identical_rerun(self):
        a = simulate(config(N=64, rho=0.5, seed=21), replicate=3)
        b = simulate(config(N=64, rho=0.5, seed=21), replicate=3)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.tau, b.tau)
        np.testing.assert_array_equal(a.dw, b.dw)
        np.testing.assert_array_equal(a.rho_used, b.rho_used)

    def test_replicates_differ(self):
        a = simulate(config(seed=21), replicate=0)
        b = simulate(config(seed=21), replicate=1)
        assert not np.array_equal(a.dw, b.dw)

    def test_trajectories_shared_between_barrier_modes(self):
        # identical draw order: positions agree until the bridge absorbs
        g = simulate(config(N=64, T=1.0, dt=1 / 64, seed=9))
        b = simulate(config(N=64, T=1.0, dt=1 / 64, seed=9,
                            barrier="brownian-bridge"))
        both_alive = (g.positions > 0) & (b.positions > 0)
        np.testing.assert_array_equal(g.positions[both_alive],
                                      b.positions[both_alive])


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        ens = simulate(config(N=32, rho=0.4, seed=17,
                              barrier="brownian-bridge"), replicate=2)
        f = tmp_path / "ens.bin"
        save_ensemble(ens, str(f))
        back = load_ensemble(str(f))
        np.testing.assert_array_equal(back.positions, ens.positions)
        np.testing.assert_array_equal(back.tau, ens.tau)
        np.testing.assert_array_equal(back.dw, ens.dw)
        np.testing.assert_array_equal(back.times, ens.times)
        assert back.replicate == ens.replicate
        assert back.config.to_dict() == ens.config.to_dict()

    def test_buffer_round_trip(self):
        ens = simulate(config(N=4))
        buf = io.BytesIO()
        save_ensemble(ens, buf)
        buf.seek(0)
        back = load_ensemble(buf)
        np.testing.assert_array_equal(back.positions, ens.positions)

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic|format"):
            load_ensemble(io.BytesIO(b"NOPE" + b"\x00" * 64))
