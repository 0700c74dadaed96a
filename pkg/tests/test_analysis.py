"""Tests for the stationary-point study and variance diagnostics."""

import numpy as np
import pytest

from mixpol import analysis, policies
from mixpol.envs.bandits import BanditSpec, make_bimodal_bandit
from mixpol.numerics import autodiff as ad
from mixpol.numerics.rng import Rng


def gaussian_entropy(log_std):
    return log_std + 0.5 * (1.0 + np.log(2.0 * np.pi))


def closed_form_j0(bandit, mu, sigma):
    # E_{N(mu, s^2)}[N(a; m_j, s_j^2)] = N(mu; m_j, s^2 + s_j^2)
    var = sigma ** 2 + bandit.stds ** 2
    dens = np.exp(-0.5 * (mu - bandit.means) ** 2 / var) / np.sqrt(2 * np.pi * var)
    return dens.sum() / bandit.normalizer


def random_head(rng, n=2, separated=False):
    means = rng.uniform(-2.0, 2.0, (1, n, 1))
    if separated:
        means = np.sort(means, axis=1)
        means[0, -1, 0] = means[0, 0, 0] + max(2.5, np.ptp(means))
    return policies.MixtureHead(means, rng.uniform(-1.5, 0.0, (1, n, 1)),
                                rng.uniform(-1.0, 1.0, (1, n)),
                                "gaussian", False)


class TestStudyBandit:
    def test_unit_peak(self):
        b = analysis.study_bandit()
        assert abs(b.r_max - 1.0) < 1e-3

    def test_same_shape_as_env_bandit(self):
        grid = np.linspace(-3, 3, 101)
        ratio = analysis.study_bandit().reward(grid) / make_bimodal_bandit().reward(grid)
        assert np.allclose(ratio, ratio[0])

    def test_symmetric(self):
        b = analysis.study_bandit()
        assert b.reward(-1.0) == pytest.approx(b.reward(1.0), rel=1e-12)


class TestIntegrateObjective:
    def test_alpha_zero_means_j_equals_j0(self):
        b = analysis.study_bandit()
        j, j0, h = analysis.integrate_objective(b, [0.4], [-0.8], [1.0], 0.0)
        assert j == j0

    @pytest.mark.parametrize("log_std", [-2.0, -0.5, 0.3, 1.0])
    def test_gaussian_entropy_closed_form(self, log_std):
        b = analysis.study_bandit()
        _, _, h = analysis.integrate_objective(b, [0.2], [log_std], [1.0], 0.1)
        assert h == pytest.approx(gaussian_entropy(log_std), abs=1e-8)

    @pytest.mark.parametrize("mu,log_std", [(0.0, -1.0), (1.0, -2.5), (-2.0, 0.5)])
    def test_gaussian_j0_closed_form(self, mu, log_std):
        b = analysis.study_bandit()
        _, j0, _ = analysis.integrate_objective(b, [mu], [log_std], [1.0], 0.1)
        assert j0 == pytest.approx(closed_form_j0(b, mu, np.exp(log_std)), abs=1e-10)

    def test_identical_components_collapse(self):
        b = analysis.study_bandit()
        j1, j01, h1 = analysis.integrate_objective(b, [0.7], [-0.6], [1.0], 0.3)
        j2, j02, h2 = analysis.integrate_objective(
            b, [0.7, 0.7], [-0.6, -0.6], [0.3, 0.7], 0.3)
        assert j2 == pytest.approx(j1, abs=1e-9)
        assert h2 == pytest.approx(h1, abs=1e-9)

    def test_weights_normalized_internally(self):
        b = analysis.study_bandit()
        a = analysis.integrate_objective(b, [-1.0, 1.0], [-1.0, -1.0], [2.0, 6.0], 0.2)
        c = analysis.integrate_objective(b, [-1.0, 1.0], [-1.0, -1.0], [0.25, 0.75], 0.2)
        assert a == pytest.approx(c, rel=1e-12)

    def test_doubling_changes_little_on_converged_params(self):
        b = analysis.study_bandit()
        r = analysis.optimize_stationary(b, "gaussian", 0.1, ([1.0], [-1.0], [1.0]))
        assert r.converged
        edges = analysis._panel_edges(b, r.means, np.exp(r.log_stds))
        j0a, ha, _ = analysis._objective_terms(b, r.means, np.exp(r.log_stds),
                                               r.weights, 0.1, edges)
        fine = np.unique(np.concatenate([edges, 0.5 * (edges[:-1] + edges[1:])]))
        j0b, hb, _ = analysis._objective_terms(b, r.means, np.exp(r.log_stds),
                                               r.weights, 0.1, fine)
        assert abs((j0a + 0.1 * ha) - (j0b + 0.1 * hb)) < 1e-8

    def test_refinement_disagreement_raises(self):
        class Wiggly:
            # claims broad smooth kernels but oscillates ~11 periods per
            # panel, so coarse and refined quadratures disagree
            means = np.array([0.0])
            stds = np.array([1.0])

            def reward(self, a):
                return np.cos(137.0 * np.asarray(a))

        with pytest.raises(analysis.QuadratureError):
            analysis.integrate_objective(Wiggly(), [0.0], [0.0], [1.0], 0.1)


class TestObjectiveGradient:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        b = analysis.study_bandit()
        rng = Rng(seed)
        n = 2
        x = np.concatenate([rng.uniform(-1.5, 1.5, n), rng.uniform(-2.0, 0.5, n),
                            rng.uniform(0.2, 0.9, n)])
        _, g = analysis._objective_and_gradient(b, x, n, 0.27)
        for i in range(3 * n):
            e = np.zeros_like(x)
            e[i] = 1e-6
            jp, _ = analysis._objective_and_gradient(b, x + e, n, 0.27)
            jm, _ = analysis._objective_and_gradient(b, x - e, n, 0.27)
            assert g[i] == pytest.approx((jp - jm) / 2e-6, rel=2e-5, abs=1e-9)


class TestClassifyModality:
    def test_separated_components_bimodal(self):
        assert analysis.classify_modality([-1.5, 1.5], [-1.0, -1.0],
                                          [0.5, 0.5]) == "bimodal"

    def test_degenerate_weight_unimodal(self):
        assert analysis.classify_modality([-1.5, 1.5], [-1.0, -1.0],
                                          [1.0, 0.0]) == "unimodal"

    def test_wide_components_merge(self):
        # sigma 2 at means +-1: the mixture density has a single hump
        assert analysis.classify_modality([-1.0, 1.0], [np.log(2.0)] * 2,
                                          [0.5, 0.5]) == "unimodal"

    def test_close_peaks_merge(self):
        assert analysis.classify_modality([-0.015, 0.015], [np.log(5e-3)] * 2,
                                          [0.5, 0.5]) == "unimodal"


class TestOptimizeStationary:
    def test_low_alpha_gaussian_matches_grid_search(self):
        b = analysis.study_bandit()
        r = analysis.optimize_stationary(b, "gaussian", 0.05, ([1.2], [-1.0], [1.0]))
        assert r.converged and r.pg_norm <= analysis.PG_TOL
        assert 0.8 < abs(r.means[0]) < 1.2
        assert r.j0 > 0.9 * b.r_max
        best = -np.inf
        for mu in np.linspace(0.5, 1.5, 41):
            for ls in np.linspace(-3.0, 0.0, 31):
                j, _, _ = analysis.integrate_objective(b, [mu], [ls], [1.0], 0.05)
                best = max(best, j)
        assert r.j >= best - 1e-6

    def test_high_alpha_gaussian_never_converges(self):
        b = analysis.study_bandit()
        rng = Rng(4)
        results = [analysis.optimize_stationary(
            b, "gaussian", 0.5, analysis.sample_init(rng.substream(t), 1))
            for t in range(20)]
        assert all(not r.converged for r in results)
        # the signature of entropy-driven escape: log-std parked at the bound
        assert any(r.log_stds[0] >= analysis.LOG_STD_BOUND - 1e-9 for r in results)

    def test_gm_alpha_03_beats_gaussian(self):
        b = analysis.study_bandit()
        rng = Rng(11)
        gm = [analysis.optimize_stationary(
            b, "gm", 0.3, analysis.sample_init(rng.substream("gm", t), 2))
            for t in range(30)]
        ga = [analysis.optimize_stationary(
            b, "gaussian", 0.3, analysis.sample_init(rng.substream("g", t), 1))
            for t in range(30)]
        gm_ok = [r for r in gm if r.converged]
        ga_ok = [r for r in ga if r.converged]
        assert gm_ok and ga_ok
        best_gaussian_j0 = max(r.j0 for r in ga_ok)
        assert any(r.modality == "bimodal" and r.j0 > best_gaussian_j0
                   for r in gm_ok)

    def test_converged_results_are_finite(self):
        b = analysis.study_bandit()
        r = analysis.optimize_stationary(b, "gm", 0.2, ([-1.0, 1.0], [-1.0, -1.0],
                                                        [0.5, 0.5]))
        assert r.converged
        assert np.isfinite(r.j) and np.isfinite(r.j0) and r.j >= r.j0 - 5.0
        assert r.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_bad_family_and_bad_init(self):
        b = analysis.study_bandit()
        with pytest.raises(KeyError):
            analysis.optimize_stationary(b, "laplace", 0.1, ([0.0], [0.0], [1.0]))
        with pytest.raises(ValueError, match="init"):
            analysis.optimize_stationary(b, "gm", 0.1, ([0.0], [0.0], [1.0]))


class TestSweepAlphaStudy:
    def test_empty_grid(self):
        assert analysis.sweep_alpha_study(analysis.study_bandit(), [], rng=Rng(0)) == []

    def test_best_selection_matches_manual_scan(self):
        b = analysis.study_bandit()
        rows = analysis.sweep_alpha_study(b, [0.1], trials=5, rng=Rng(21),
                                          families=("gm",))
        manual = [analysis.optimize_stationary(
            b, "gm", 0.1, analysis.sample_init(Rng(21).substream("gm", "trial", t, 0.1), 2))
            for t in range(5)]
        good = [r for r in manual if r.converged]
        assert rows[0].best_j == pytest.approx(max(r.j for r in good), rel=1e-12)
        assert rows[0].frac_converged == len(good) / 5

    def test_zero_converged_row_is_nan(self):
        rows = analysis.sweep_alpha_study(analysis.study_bandit(), [0.5], trials=3,
                                          rng=Rng(2), families=("gaussian",))
        assert rows[0].frac_converged == 0.0
        assert np.isnan(rows[0].best_j) and np.isnan(rows[0].best_j0)

    def test_gm_outperforms_gaussian_at_quarter(self):
        rows = analysis.sweep_alpha_study(analysis.study_bandit(), [0.25], trials=40,
                                          rng=Rng(77))
        by_family = {r.family: r for r in rows}
        assert by_family["gm"].best_j0 > by_family["gaussian"].best_j0


class TestEmbedding:
    def test_replicated_gaussian_stationary_point(self):
        b = analysis.study_bandit()
        base = analysis.optimize_stationary(b, "gaussian", 0.2, ([1.0], [-1.0], [1.0]))
        assert base.converged
        for w in (0.1, 0.5, 0.83):
            norm = analysis.embedding_gradient_norm(
                b, float(base.means[0]), float(base.log_stds[0]),
                np.array([w, 1.0 - w]), 0.2)
            assert norm <= 1e-5


class TestSigmaGradientGrid:
    def test_positive_everywhere_above_entropy_threshold(self):
        b = make_bimodal_bandit()
        grid = analysis.sigma_gradient_grid(b, 2.5 * b.r_max,
                                            np.linspace(-5, 5, 50),
                                            np.exp(np.linspace(-3, 3, 50)))
        assert grid.shape == (50, 50)
        assert (grid > 0).all()

    def test_small_alpha_has_negative_cells(self):
        b = make_bimodal_bandit()
        grid = analysis.sigma_gradient_grid(b, 0.01 * b.r_max,
                                            np.linspace(-2, 2, 10),
                                            np.exp(np.linspace(-2, 0, 10)))
        assert (grid < 0).any()


class TestEstimateGradientVariance:
    def critic(self, av):
        return ad.sin(ad.reduce_sum(av, axis=-1))

    def test_frozen_draws_zero_trace(self):
        from mixpol.estimators import EstimatorDraws
        head = random_head(Rng(3))
        frozen = EstimatorDraws(eps=np.array([[0.37]]),
                                component=np.zeros(1, dtype=np.int64))
        rep = analysis.estimate_gradient_variance(head, self.critic, 0.1, ("rp",),
                                                  m=6, rng=Rng(0), draws=frozen)
        assert rep.traces["rp"] < 1e-28

    def test_m_validation(self):
        with pytest.raises(ValueError):
            analysis.estimate_gradient_variance(random_head(Rng(3)), self.critic,
                                                0.1, ("rp",), m=1, rng=Rng(0))

    def test_traces_nonnegative_and_shapes(self):
        head = random_head(Rng(5))
        rep = analysis.estimate_gradient_variance(head, self.critic, 0.1,
                                                  ("lr", "mrp"), m=16, rng=Rng(1))
        for kind in ("lr", "mrp"):
            assert rep.traces[kind] >= 0.0
            assert rep.per_coordinate[kind].shape == (2 + 2 + 2,)
            assert rep.trace_se[kind] > 0.0
        assert rep.m == 16

    def test_trace_stable_when_m_doubles(self):
        head = random_head(Rng(6))
        a = analysis.estimate_gradient_variance(head, self.critic, 0.1, ("mrp",),
                                                m=64, rng=Rng(2))
        c = analysis.estimate_gradient_variance(head, self.critic, 0.1, ("mrp",),
                                                m=128, rng=Rng(3))
        gap = abs(a.traces["mrp"] - c.traces["mrp"])
        assert gap < 5.0 * (a.trace_se["mrp"] + c.trace_se["mrp"])

    def test_mrp_below_lr_without_baseline_on_sin(self):
        head = random_head(Rng(8), separated=True)
        rep = analysis.estimate_gradient_variance(head, self.critic, 0.05,
                                                  ("lr", "mrp"), m=256, rng=Rng(4),
                                                  use_baseline=False)
        assert rep.traces["mrp"] < rep.traces["lr"]


class TestImportanceVarianceTerms:
    def test_single_component_exactly_zero(self):
        head = policies.MixtureHead(np.array([[[0.4]]]), np.array([[[-0.2]]]),
                                    np.array([[0.0]]), "gaussian", False)
        rep = analysis.check_importance_variance_terms(head, np.sin, n=4000,
                                                       rng=Rng(1))
        assert rep.term_mu == pytest.approx(0.0, abs=1e-14)
        assert rep.term_sigma == 0.0
        assert rep.term_reward == 0.0

    def test_identical_components_exactly_zero(self):
        head = policies.MixtureHead(np.array([[[0.4], [0.4]]]),
                                    np.array([[[-0.2], [-0.2]]]),
                                    np.array([[1.0, -0.5]]), "gaussian", False)
        rep = analysis.check_importance_variance_terms(head, np.sin, n=4000,
                                                       rng=Rng(1))
        assert rep.term_mu == pytest.approx(0.0, abs=1e-14)
        assert rep.term_sigma == pytest.approx(0.0, abs=1e-14)
        assert rep.term_reward == pytest.approx(0.0, abs=1e-14)

    def test_reports_se_and_count(self):
        signs = []
        for s in range(3):
            head = random_head(Rng(100 + s), separated=True)
            rep = analysis.check_importance_variance_terms(head, np.sin, n=50_000,
                                                           rng=Rng(s))
            assert rep.n == 50_000
            assert rep.se_mu > 0 and rep.se_sigma > 0 and rep.se_reward > 0
            assert np.isfinite([rep.term_mu, rep.term_sigma, rep.term_reward]).all()
            signs.append(rep.term_mu >= 0)
        assert len(signs) == 3


class TestVarianceIdentities:
    """Per-coordinate component identities for the mixture LR and MRP rows."""

    def setup_head(self, seed):
        rng = Rng(seed)
        head = random_head(rng, n=3)
        means, stds, weights = analysis._component_stats(head)
        return head, means, stds, weights

    def test_lr_rows_factor_through_components_pointwise(self):
        head, means, stds, weights = self.setup_head(31)
        rng = Rng(9)
        a = rng.normal(size=200) * 1.4
        r = np.sin(a)
        rows = analysis.lr_gradient_rows(head, a, r)
        z = (a[:, None] - means) / stds
        comp = np.exp(-0.5 * z * z) / (stds * np.sqrt(2 * np.pi))
        rho = comp / (weights * comp).sum(axis=1, keepdims=True)
        for k in range(3):
            comp_rows = analysis.component_lr_rows(means[k], stds[k], a, r)
            np.testing.assert_allclose(rows[:, k],
                                       weights[k] * rho[:, k] * comp_rows[:, 0],
                                       rtol=1e-12)
            np.testing.assert_allclose(rows[:, 3 + k],
                                       weights[k] * rho[:, k] * comp_rows[:, 1],
                                       rtol=1e-12)
            np.testing.assert_allclose(rows[:, 6 + k], rho[:, k] * r, rtol=1e-12)

    def test_mrp_rows_factor_through_components_pointwise(self):
        head, means, stds, weights = self.setup_head(32)
        eps = Rng(10).normal(size=200)
        rows = analysis.mrp_gradient_rows(head, eps, np.sin, np.cos)
        for k in range(3):
            comp_rows = analysis.component_rp_rows(means[k], stds[k], eps, np.cos)
            np.testing.assert_allclose(rows[:, k], weights[k] * comp_rows[:, 0],
                                       rtol=1e-12)
            np.testing.assert_allclose(rows[:, 3 + k], weights[k] * comp_rows[:, 1],
                                       rtol=1e-12)
            np.testing.assert_allclose(rows[:, 6 + k],
                                       np.sin(means[k] + stds[k] * eps), rtol=1e-12)

    def test_mrp_weight_variance_matches_component_reward_variance(self):
        # distributional form: Var over shared eps of r(f_k(eps)) equals the
        # on-policy reward variance of component k, checked on fresh draws
        head, means, stds, weights = self.setup_head(33)
        rng = Rng(12)
        n = 200_000
        eps = rng.normal(size=n)
        rows = analysis.mrp_gradient_rows(head, eps, np.sin, np.cos)
        for k in range(3):
            lhs = rows[:, 6 + k]
            fresh = np.sin(means[k] + stds[k] * rng.normal(size=n))
            diff = lhs.var(ddof=1) - fresh.var(ddof=1)
            blocks = lhs.reshape(50, -1).var(axis=1, ddof=1)
            fblocks = fresh.reshape(50, -1).var(axis=1, ddof=1)
            se = np.sqrt(blocks.var(ddof=1) / 50 + fblocks.var(ddof=1) / 50)
            assert abs(diff) < 3.0 * se

    def test_lr_variance_two_independent_sample_sets_agree(self):
        # mixture-draw variance of the mu coordinate vs the importance-weighted
        # component form on an independent mixture sample
        head, means, stds, weights = self.setup_head(34)
        rng = Rng(13)
        n = 200_000

        def mixture_draws(r):
            eps = r.normal(size=n)
            ks = (r.uniform(size=(n, 1)) > np.cumsum(weights)).sum(axis=1)
            ks = np.minimum(ks, 2)
            return means[ks] + stds[ks] * eps

        a1 = mixture_draws(rng.substream(1))
        a2 = mixture_draws(rng.substream(2))
        rows1 = analysis.lr_gradient_rows(head, a1, np.sin(a1))
        z2 = (a2[:, None] - means) / stds
        comp2 = np.exp(-0.5 * z2 * z2) / (stds * np.sqrt(2 * np.pi))
        rho2 = comp2 / (weights * comp2).sum(axis=1, keepdims=True)
        for k in range(3):
            lhs = rows1[:, k]
            rhs = weights[k] * rho2[:, k] * analysis.component_lr_rows(
                means[k], stds[k], a2, np.sin(a2))[:, 0]
            diff = lhs.var(ddof=1) - rhs.var(ddof=1)
            lb = lhs.reshape(50, -1).var(axis=1, ddof=1)
            rb = rhs.reshape(50, -1).var(axis=1, ddof=1)
            se = np.sqrt(lb.var(ddof=1) / 50 + rb.var(ddof=1) / 50)
            assert abs(diff) < 3.0 * se

    @pytest.mark.parametrize("r_fn,r_prime", [(np.sin, np.cos),
                                              (lambda a: np.exp(-a * a),
                                               lambda a: -2 * a * np.exp(-a * a))])
    def test_mrp_trace_at_most_lr_trace(self, r_fn, r_prime):
        head, means, stds, weights = self.setup_head(35)
        rng = Rng(14)
        n = 100_000
        eps = rng.normal(size=n)
        ks = (rng.uniform(size=(n, 1)) > np.cumsum(weights)).sum(axis=1)
        ks = np.minimum(ks, 2)
        a = means[ks] + stds[ks] * eps
        lr_trace = analysis.lr_gradient_rows(head, a, r_fn(a)).var(axis=0, ddof=1).sum()
        mrp_trace = analysis.mrp_gradient_rows(head, rng.normal(size=n), r_fn,
                                               r_prime).var(axis=0, ddof=1).sum()
        assert mrp_trace <= lr_trace


class TestBootstrapCI:
    def test_single_sample_degenerate(self):
        ci = analysis.bootstrap_ci([3.5], rng=Rng(0))
        assert ci.lower == ci.point == ci.upper == 3.5

    def test_constant_samples_zero_width(self):
        ci = analysis.bootstrap_ci(np.full(50, -2.0), rng=Rng(0))
        assert ci.lower == ci.upper == -2.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            analysis.bootstrap_ci([], rng=Rng(0))

    def test_ordering_and_level(self):
        ci = analysis.bootstrap_ci(Rng(5).normal(size=400), rng=Rng(6))
        assert ci.lower <= ci.point <= ci.upper
        assert ci.level == 0.95 and ci.resamples == 2000

    def test_coverage_near_nominal(self):
        rng = Rng(17)
        hits = 0
        trials = 120
        for t in range(trials):
            data = rng.substream("data", t).normal(size=10_000)
            ci = analysis.bootstrap_ci(data, b=300, rng=rng.substream("boot", t))
            hits += ci.lower <= 0.0 <= ci.upper
        assert 0.88 <= hits / trials <= 1.0
