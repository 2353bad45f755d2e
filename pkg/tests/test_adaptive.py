import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optlab.adaptive import (
    AdaptiveState,
    adgd_general_step,
    adgd_step,
    adsgd_step,
    ergodic_average,
    ergodic_weights,
    run_adaptive,
)
from optlab.problems import QuadraticObjective, ScalarObjective, make_least_squares, make_logistic, synthetic_classification
from optlab.rng import RngStream


def _quartic(d=1):
    return ScalarObjective(lambda x: float(np.sum(x**4)) / 4, lambda x: x**3, d)


def _quadratic(seed, d=4):
    rng = RngStream(seed, "adq")
    Q = rng.normal((d, d))
    H = Q @ Q.T + 0.1 * np.eye(d)
    return QuadraticObjective(H[None], rng.normal((1, d)))


class TestSteps:
    def test_hand_computed_first_steps(self):
        # oracle: the rule written out for a 1-D quadratic 1/2 a x^2
        a = 3.0
        f = ScalarObjective(lambda x: 0.5 * a * float(x @ x), lambda x: a * x, 1, L=a)
        st_ = AdaptiveState(gamma_prev=0.1)
        x0 = np.array([1.0])
        x1, st_ = adgd_step(st_, f, x0)
        assert x1[0] == pytest.approx(1 - 0.1 * a)
        x2, st_ = adgd_step(st_, f, x1)
        # ||dx|| / (2 ||dg||) = 1/(2a); growth arm is infinite at k = 1
        assert st_.gamma_prev == pytest.approx(1 / (2 * a))
        x3, st_ = adgd_step(st_, f, x2)
        grow = np.sqrt(1 + (1 / (2 * a)) / 0.1) * (1 / (2 * a))
        assert st_.gamma_prev == pytest.approx(min(grow, 1 / (2 * a)))

    def test_stationary_point_keeps_step(self):
        f = _quartic(2)
        xs = np.zeros(2)
        st_ = AdaptiveState(gamma_prev=0.3)
        x, st_ = adgd_step(st_, f, xs)
        x, st_ = adgd_step(st_, f, x)
        # both bounds are infinite (0/0 and inf growth), so the step is reused
        assert st_.gamma_prev == 0.3
        np.testing.assert_array_equal(x, xs)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            adgd_general_step(AdaptiveState(), _quartic(), np.ones(1), alpha=1.0)

    def test_adsgd_options(self):
        f = make_least_squares(np.eye(3), np.ones(3))
        with pytest.raises(ValueError):
            adsgd_step(AdaptiveState(), f, np.zeros(3), 0.5, option="other")
        with pytest.raises(ValueError):
            adsgd_step(AdaptiveState(), f, np.zeros(3), 0.0)


class TestConvergence:
    def test_quartic(self):
        tr = run_adaptive(_quartic(), np.array([2.0]), K=10_000, x_star=np.zeros(1), f_star=0.0)
        gap = tr.column("f_gap")
        assert np.argmax(gap <= 1e-6) > 0 and gap[-1] <= 1e-6

    @pytest.mark.parametrize("variant", ["adgd", "general", "smooth"])
    def test_quadratic_lower_bound(self, variant):
        f = _quadratic(1)
        tr = run_adaptive(f, np.ones(4), K=3000, variant=variant, L=f.L, alpha=0.6, x_star=f.minimizer())
        gam = tr.extra("gamma")
        if variant == "smooth":
            assert np.all(gam[2:] >= 1 / (2 * f.L) - 1e-12)
        else:
            # the curvature arm alone never falls below 1/(2L)
            curv = gam[2:][np.isfinite(gam[2:])]
            assert curv.min() >= min(1 / (2 * f.L), gam[1]) - 1e-12
        assert tr.column("dist_sq")[-1] < 1e-10

    def test_accelerated_faster_on_ill_conditioned(self):
        H = np.diag(np.logspace(-2, 1, 6))[None]
        f = QuadraticObjective(H, np.ones((1, 6)))
        xs = f.minimizer()
        plain = run_adaptive(f, np.zeros(6), K=400, x_star=xs).column("dist_sq")[-1]
        accel = run_adaptive(f, np.zeros(6), K=400, variant="accel", x_star=xs).column("dist_sq")[-1]
        assert accel < plain

    def test_adsgd_interpolation_linear(self):
        rng = RngStream(2, "interp")
        A = rng.normal((30, 5))
        xs = rng.normal(5)
        f = make_least_squares(A, A @ xs)
        tr = run_adaptive(f, np.zeros(5), K=3000, variant="adsgd", alpha=0.5, rng=3, x_star=xs)
        assert tr.column("dist_sq")[-1] < 1e-8

    def test_logistic(self):
        f = make_logistic(synthetic_classification(40, 4, 3), 0.01)
        tr = run_adaptive(f, K=500)
        assert np.linalg.norm(f.grad(tr.x)) < 1e-6


class TestErgodic:
    def test_weight_formula(self):
        g, t = np.array([0.5, 2.0, 1.5]), np.array([3.0, 2.0, 0.75])
        w = ergodic_weights(g, t)
        assert w[0] == pytest.approx(0.5 * 4 - 2.0 * 2.0)
        assert w[2] == pytest.approx(1.5 * 1.75)

    def test_weights_nonnegative_in_run(self):
        f = _quadratic(3)
        tr = run_adaptive(f, np.ones(4), K=200)
        xs, gs, ts = zip(*tr.state.history)
        assert np.all(ergodic_weights(gs, ts) >= -1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_average_of_constant_iterates(self, seed):
        rng = RngStream(seed, "erg")
        K = 8
        # non-increasing steps keep every weight non-negative
        gam = np.minimum.accumulate(0.1 + rng.uniform(K))
        th = np.concatenate([[1.0], gam[1:] / gam[:-1]])
        x = rng.normal(3)
        avg = ergodic_average(np.tile(x, (K, 1)), gam, th)
        np.testing.assert_allclose(avg, x, rtol=1e-12)

    def test_xhat_recorded(self):
        tr = run_adaptive(_quadratic(4), np.ones(4), K=50)
        assert tr.metadata["xhat"].shape == (4,)
