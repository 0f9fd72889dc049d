"""Tests for the Monte Carlo tightness diagnostics: pathwise decomposition,
fourth-moment lag scaling, exceedance-surface fits, endpoint oscillation,
and joint-law comparison."""

import numpy as np
import pytest
from scipy.special import ndtr

from m1lab import (
    InitialLaw,
    ModelConfig,
    RhoTable,
    TestFunction,
    decomposition_check,
    endpoint_condition_check,
    fdd_compare,
    fit_exceedance_surface,
    fourth_moment_scaling,
    project,
    sample_triples,
    simulate,
    tail_exponent_fit,
)
from m1lab.paths import segment_distance


UNIFORM = InitialLaw("uniform", a=0.8, b=1.2)
PHI = TestFunction(np.array([0.3, 0.5, -0.2, 0.1]))


def base_config(**kw):
    args = dict(N=128, T=0.5, dt=1 / 128, rho=RhoTable.constant(0.3),
                initial=UNIFORM, seed=3)
    args.update(kw)
    return ModelConfig(**args)


class TestSampleTriples:
    def test_rows_are_ordered_and_unique(self):
        times = np.arange(65) / 128.0
        tr = sample_triples(times, num_random=50, seed=4)
        assert tr.ndim == 2 and tr.shape[1] == 3
        assert np.all((tr[:, 0] < tr[:, 1]) & (tr[:, 1] < tr[:, 2]))
        assert len(np.unique(tr, axis=0)) == len(tr)

    def test_max_lag_caps_dyadic_half_width(self):
        times = np.arange(65) / 128.0
        tr = sample_triples(times, max_lag=8.5 / 128)
        assert np.max(tr[:, 2] - tr[:, 0]) <= 2 * 8.5 / 128
        wide = sample_triples(times)
        assert np.max(wide[:, 2] - wide[:, 0]) > 2 * 8.5 / 128

    def test_random_rows_reproducible(self):
        times = np.arange(33) / 64.0
        a = sample_triples(times, num_random=20, seed=9)
        b = sample_triples(times, num_random=20, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_empty_request_gives_empty_set(self):
        times = np.arange(65) / 128.0
        assert sample_triples(times, include_dyadic=False).shape == (0, 3)
        assert sample_triples(times, max_lag=1e-6).shape == (0, 3)

    def test_needs_three_times(self):
        with pytest.raises(ValueError, match="at least 3"):
            sample_triples(np.array([0.0, 1.0]))


class TestDecomposition:
    def test_no_violation_across_replicates(self):
        # phi(0) != 0 exercises the barrier-loss part of the identity
        cfg = base_config()
        triples = sample_triples(simulate(cfg, 0).times, num_random=200,
                                 seed=5)
        worst = max(decomposition_check(simulate(cfg, r), PHI, triples)
                    for r in range(30))
        assert worst <= 1e-10

    def test_matches_hand_rolled_oracle(self):
        # rebuild both averages from raw ensemble arrays; absorbed particles
        # sit at the barrier so the unmasked mean is the stopped average
        cfg = base_config(N=32, seed=7)
        ens = simulate(cfg, 0)
        vals = PHI(ens.positions)
        alive = ens.tau[:, None] > ens.times[None, :]
        nu = np.mean(vals * alive, axis=0)
        nb = np.mean(vals, axis=0)
        triples = sample_triples(ens.times, num_random=60, seed=2)
        idx = np.searchsorted(ens.times, triples)
        worst = -np.inf
        for i, j, k in idx:
            lhs = segment_distance(nu[i], nu[j], nu[k])
            rhs = abs(nb[i] - nb[j]) + abs(nb[j] - nb[k])
            worst = max(worst, lhs - rhs)
        assert worst <= 1e-10
        assert decomposition_check(ens, PHI, triples) == pytest.approx(
            worst, abs=1e-12)

    def test_unordered_triple_rejected(self):
        ens = simulate(base_config(N=8), 0)
        with pytest.raises(ValueError, match="t1 < t2 < t3"):
            decomposition_check(ens, PHI, np.array([[0.25, 0.125, 0.5]]))

    def test_off_grid_triple_rejected(self):
        ens = simulate(base_config(N=8), 0)
        with pytest.raises(ValueError, match="time grid"):
            decomposition_check(ens, PHI, np.array([[0.1, 0.2, 0.3]]))

    def test_single_triple_as_flat_array(self):
        ens = simulate(base_config(N=8), 0)
        out = decomposition_check(ens, PHI, np.array([1, 2, 3]) / 128.0)
        assert np.isfinite(out) and out <= 1e-10


class TestFourthMoment:
    def test_slope_and_domination_on_default_config(self):
        lags = np.array([1, 2, 4, 8, 16, 32]) / 128
        rep = fourth_moment_scaling(base_config(), PHI, lags, replicates=120)
        assert rep.slope >= 1.7
        assert rep.domination_violation <= 1e-10
        assert np.all(np.diff(rep.moments) > 0)
        assert not rep.low_replicates
        assert rep.passed

    def test_gaussian_increment_oracle(self):
        # rho = 0, phi(x) = x: stopped increments are dominated by plain
        # Brownian ones, so E|dX|^4 <= 3 u^2 up to MC error
        cfg = base_config(N=64, rho=RhoTable.constant(0.0), seed=9)
        ens = simulate(cfg, 0)
        k = 16
        u = k * cfg.dt
        dx4 = np.mean((ens.positions[:, k:] - ens.positions[:, :-k]) ** 4)
        assert dx4 <= 3.0 * u ** 2 * 1.1

    def test_low_replicates_flag(self):
        lags = np.array([1, 4]) / 128
        rep = fourth_moment_scaling(base_config(N=8), PHI, lags, replicates=3)
        assert rep.low_replicates

    @pytest.mark.parametrize("lags, msg", [
        (np.array([0.3]), "two lags"),
        (np.array([0.003, 0.006]), "multiples of dt"),
        (np.array([0.25, 0.75]), r"\(0, T\]"),
        (np.array([-0.1, 0.25]), r"\(0, T\]"),
    ])
    def test_lag_validation(self, lags, msg):
        with pytest.raises(ValueError, match=msg):
            fourth_moment_scaling(base_config(N=8), PHI, lags, replicates=2)

    def test_replicates_validation(self):
        with pytest.raises(ValueError, match="replicates"):
            fourth_moment_scaling(base_config(N=8), PHI,
                                  np.array([1, 2]) / 128, replicates=0)


class TestExceedanceFit:
    def test_exact_power_law_recovered(self):
        # grid kept below saturation: max cell probability 0.02
        etas = np.geomspace(0.3, 0.8, 6)
        gaps = np.geomspace(0.1, 0.4, 5)
        probs = 1e-3 * etas[:, None] ** -4.0 * gaps[None, :] ** 2.0
        assert probs.max() < 1.0
        fit = fit_exceedance_surface(etas, gaps, probs, replicates=10 ** 6)
        assert fit.fitted and not fit.vacuous
        assert fit.a == pytest.approx(4.0, abs=1e-6)
        assert fit.b == pytest.approx(1.0, abs=1e-6)
        assert fit.violations == 0
        assert fit.passed

    def test_monte_carlo_samples_recover_exponents(self):
        # H = (c gap^2 / U)^(1/4) has P(H >= eta) = c eta^-4 gap^2
        etas = np.geomspace(0.3, 0.8, 6)
        gaps = np.geomspace(0.1, 0.4, 5)
        c, R = 1e-3, 30000
        rng = np.random.default_rng(0)
        H = (c * gaps[None, :] ** 2 / rng.random((R, len(gaps)))) ** 0.25
        probs = np.mean(H[None, :, :] >= etas[:, None, None], axis=1)
        fit = fit_exceedance_surface(etas, gaps, probs, replicates=R)
        assert abs(fit.a - 4.0) <= 0.3
        assert abs(fit.b - 1.0) <= 0.3
        assert fit.passed

    def test_all_zero_table_is_vacuous(self):
        fit = fit_exceedance_surface(np.array([0.1, 0.2]),
                                     np.array([0.1, 0.2]),
                                     np.zeros((2, 2)), replicates=100)
        assert fit.vacuous and fit.passed
        assert np.isnan(fit.a)

    def test_single_gap_column_cannot_be_fitted(self):
        probs = np.array([[0.1, 0.0], [0.05, 0.0]])
        fit = fit_exceedance_surface(np.array([0.1, 0.2]),
                                     np.array([0.1, 0.2]), probs,
                                     replicates=100)
        assert not fit.fitted and not fit.vacuous
        assert fit.violations == 0
        assert not fit.passed

    @pytest.mark.parametrize("etas, gaps, probs, msg", [
        (np.array([0.1]), np.array([0.1, 0.2]), np.zeros((2, 2)),
         "does not match"),
        (np.array([0.1, -0.2]), np.array([0.1, 0.2]), np.zeros((2, 2)),
         "positive"),
        (np.array([0.1, 0.2]), np.array([0.1, 0.2]),
         np.full((2, 2), 1.5), r"\[0, 1\]"),
    ])
    def test_table_validation(self, etas, gaps, probs, msg):
        with pytest.raises(ValueError, match=msg):
            fit_exceedance_surface(etas, gaps, probs, replicates=10)

    def test_simulated_gap_exponent_is_positive(self):
        # small-lag dyadic triples with a tail eta grid: the fitted gap
        # exponent stays positive, matching the quadratic envelope
        cfg = base_config(N=256)
        ensembles = [simulate(cfg, r) for r in range(1000)]
        triples = sample_triples(ensembles[0].times, max_lag=8.5 / 128)
        fit = tail_exponent_fit(ensembles, PHI,
                                np.geomspace(0.012, 0.03, 5), triples)
        assert fit.fitted
        assert fit.b > 0
        assert fit.violations == 0
        assert fit.passed

    def test_tail_fit_needs_ensembles(self):
        with pytest.raises(ValueError, match="at least one"):
            tail_exponent_fit([], PHI, np.array([0.1]), np.array([[0, 1, 2]]))


class TestEndpoint:
    def deltas(self):
        return np.array([0.5, 0.25, 0.125])

    def test_loss_part_matches_first_passage_law(self):
        # point start at 1, rho = 0: E L_delta = 2 Phi(-1/sqrt(delta))
        one = InitialLaw("uniform", a=1.0 - 1e-9, b=1.0 + 1e-9)
        cfgs = [ModelConfig(N=n, T=0.5, dt=1 / 128,
                            rho=RhoTable.constant(0.0), initial=one,
                            seed=21, barrier="brownian-bridge")
                for n in (32, 128)]
        rep = endpoint_condition_check(cfgs, PHI, self.deltas(), eta=0.05,
                                       replicates=200)
        est = rep.loss_part[1] / abs(rep.phi_at_zero)
        closed = 2.0 * ndtr(-1.0 / np.sqrt(self.deltas()))
        se = np.sqrt(closed * (1.0 - closed) / (128 * 200))
        assert np.all(np.abs(est - closed) <= 3.0 * se)
        assert rep.passed
        assert np.all((rep.exceedance >= 0) & (rep.exceedance <= 1))

    def test_tables_shrink_with_the_window(self):
        rep = endpoint_condition_check([base_config(N=32)], PHI,
                                       self.deltas(), eta=0.05,
                                       replicates=60)
        for table in (rep.exceedance, rep.nu_bar_part, rep.loss_part):
            assert np.all(np.diff(table, axis=1) <= 1e-12)

    def test_zero_at_barrier_kills_loss_part(self):
        phi0 = TestFunction(np.array([0.0, 1.0, 0.0, -0.2]))
        rep = endpoint_condition_check([base_config(N=32)], phi0,
                                       self.deltas(), eta=0.05,
                                       replicates=30)
        assert rep.phi_at_zero == 0.0
        assert np.all(rep.loss_part == 0.0)

    @pytest.mark.parametrize("kw, msg", [
        (dict(deltas=np.array([0.125, 0.25])), "strictly decreasing"),
        (dict(deltas=np.array([0.25, 0.125]), eta=0.0), "eta"),
        (dict(deltas=np.array([0.75, 0.25])), r"\[dt, T\]"),
        (dict(deltas=np.array([0.25, 0.001])), r"\[dt, T\]"),
    ])
    def test_argument_validation(self, kw, msg):
        deltas = kw.pop("deltas")
        with pytest.raises(ValueError, match=msg):
            endpoint_condition_check([base_config(N=8)], PHI, deltas,
                                     replicates=2, **kw)

    def test_ladder_must_share_time_grid(self):
        a = base_config(N=8)
        b = base_config(N=16, T=1.0)
        with pytest.raises(ValueError, match="share T and dt"):
            endpoint_condition_check([a, b], PHI, self.deltas(),
                                     replicates=2)


class TestFddCompare:
    def batches(self):
        cfg = ModelConfig(N=64, T=0.5, dt=1 / 64,
                          rho=RhoTable.constant(0.3), initial=UNIFORM,
                          seed=11)
        b1 = [simulate(cfg, r) for r in range(80)]
        b2 = [simulate(cfg, r) for r in range(80, 160)]
        return b1, b2

    def test_identical_batches_have_zero_distance(self):
        b1, _ = self.batches()
        phis = [PHI, TestFunction(np.array([0.0, 1.0]))]
        rep = fdd_compare(b1, b1, phis, np.array([0.25, 0.5]))
        assert rep.distance == 0.0
        assert rep.dimension == 4
        assert rep.num_probes == 160

    def test_same_law_batches_are_close(self):
        b1, b2 = self.batches()
        phis = [PHI, TestFunction(np.array([0.0, 1.0]))]
        rep = fdd_compare(b1, b2, phis, np.array([0.25, 0.5]))
        # disjoint replicate blocks of one law; threshold sits well above
        # the observed 0.2 yet far below any real law separation
        assert rep.distance <= 0.3
        assert rep.n1 == rep.n2 == 80

    def test_times_must_sit_on_grid(self):
        b1, b2 = self.batches()
        with pytest.raises(ValueError, match="shared grid"):
            fdd_compare(b1, b2, [PHI], np.array([0.3]))

    def test_empty_batch_rejected(self):
        b1, _ = self.batches()
        with pytest.raises(ValueError, match="nonempty"):
            fdd_compare(b1, [], [PHI], np.array([0.25]))


class TestProjectionConsistency:
    def test_surviving_average_reconstruction(self):
        # project output equals the alive-masked mean built by hand
        cfg = base_config(N=16, seed=5)
        ens = simulate(cfg, 2)
        vals = PHI(ens.positions)
        alive = ens.tau[:, None] > ens.times[None, :]
        nu = np.mean(vals * alive, axis=0)
        np.testing.assert_allclose(project(ens, PHI).values, nu,
                                   rtol=0, atol=1e-14)
