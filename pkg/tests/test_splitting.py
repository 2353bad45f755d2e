import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optlab.problems import (
    gaussian_system,
    low_rank_system,
    make_least_squares,
    make_logistic,
    reference_solution,
    synthetic_classification,
)
from optlab.prox import ProxTerm
from optlab.rng import RngStream
from optlab.splitting import (
    DualState,
    GradEstimator,
    LinOp,
    StepsizeConditionError,
    affine_solution_distance,
    composite_reference,
    condat_vu_run,
    destroy_run,
    estimator_next,
    fused_lasso_D,
    fused_lasso_spectrum,
    laplacian,
    licosgd_dual_solution,
    licosgd_run,
    make_estimator,
    pd3o_run,
    pddy_matching_init,
    pddy_run,
    prilicosgd_run,
    project_row,
    randomized_kaczmarz,
    sdm_kaczmarz_mode,
    sdm_linear_run,
    sdm_run,
    sdm_stepsize_preset,
    spectral_norm,
)


def _ls(n=20, d=5, seed=0, lam=0.1):
    rng = RngStream(seed, "split")
    return make_least_squares(rng.normal((n, d)), rng.normal(n), lam)


def _fused_lasso(d=30, seed=1):
    rng = RngStream(seed, "fused")
    truth = np.repeat(rng.normal(3), [d // 3, d // 3, d - 2 * (d // 3)])
    A = rng.normal((40, d))
    f = make_least_squares(A, A @ truth + 0.1 * rng.normal(40), 0.01)
    return f, ProxTerm.l1(0.02), ProxTerm.l1(0.1), fused_lasso_D(d)


def _cvx_fused(f, lam1, lam_tv, D):
    # independent oracle: the same objective handed to a conic solver
    x = cp.Variable(f.dim)
    obj = (cp.sum_squares(f.A @ x - f.b) / (2 * f.n) + f.lam / 2 * cp.sum_squares(x)
           + lam1 * cp.norm1(x) + lam_tv * cp.norm1(D @ x))
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return x.value, prob.value


class TestEstimators:
    @pytest.mark.parametrize("variant", ["sgd", "svrg", "lsvrg", "saga"])
    def test_unbiased_given_state(self, variant):
        # oracle: average the estimate over every possible sampled index
        f = _ls(8, 3, 2)
        x = np.array([0.2, -0.1, 0.5])
        est = make_estimator(variant, f, rng=1)
        est.next(np.zeros(3))
        vals = []
        for i in range(f.n):
            if variant == "saga":
                vals.append(f.component_grad(i, x) - est.table[i] + est.table_avg)
            elif variant == "sgd":
                vals.append(f.component_grad(i, x))
            else:
                vals.append(f.component_grad(i, x) - f.component_grad(i, est.ref) + est.ref_grad)
        np.testing.assert_allclose(np.mean(vals, 0), f.grad(x), atol=1e-12)

    def test_svrg_exact_at_reference(self):
        f = _ls()
        est = GradEstimator.svrg(f, loop=5, rng=0)
        x = np.ones(5)
        np.testing.assert_allclose(est.next(x), f.grad(x), atol=1e-12)

    def test_svrg_refresh_period(self):
        f = _ls(6, 2)
        est = GradEstimator.svrg(f, loop=3, rng=0)
        for _ in range(7):
            est.next(np.ones(2))
        # three full passes (calls 0, 3, 6) plus two component gradients per call
        assert est.grads == 3 * 6 + 7 * 2

    def test_saga_running_mean(self):
        f = _ls(10, 3)
        est = GradEstimator.saga(f, rng=2)
        x = np.zeros(3)
        for _ in range(40):
            x = x - 0.05 * est.next(x)
        np.testing.assert_allclose(est.table.mean(0), est.table_avg, atol=1e-12)

    def test_mass_scaling(self):
        f = _ls(6, 2)
        g = f.subset(np.arange(6), weights=np.full(6, 0.5), mass=3)
        est = GradEstimator.sgd(g, batch=6, rng=0)
        x = np.ones(2)
        # every component scaled by n / mass so the estimate targets grad g
        vals = [est.next(x) for _ in range(2000)]
        np.testing.assert_allclose(np.mean(vals, 0), g.grad(x), atol=0.1)

    def test_factory(self):
        f = _ls()
        assert make_estimator({"variant": "svrg", "loop": 7}, f).params["loop"] == 7
        with pytest.raises(ValueError):
            make_estimator("adam", f)
        est = GradEstimator.full_gd(f)
        assert make_estimator(est, f) is est
        with pytest.raises(ValueError):
            estimator_next(est, _ls(seed=5), np.zeros(5))


class TestSDM:
    def test_presets_start_below_cap(self):
        for name in ("gd", "sgd", "svrg", "saga"):
            g = sdm_stepsize_preset(name, 0.1, 2.0, n=10)
            assert g(0) <= g.gamma_max * (1 + 1e-12)
            assert g(10) < g(0)
        with pytest.raises(ValueError):
            sdm_stepsize_preset("gd", 0.0, 1.0)

    def test_dual_state_validation(self):
        with pytest.raises(ValueError):
            DualState.init(np.zeros(2), 2, p=[0.7, 0.7])

    def test_no_terms_is_prox_gradient(self):
        f = _ls()
        psi = ProxTerm.l1(0.05)
        g = 1 / f.L
        tr = sdm_run(f, psi, [], g, K=30)
        x = np.zeros(5)
        for _ in range(30):
            x = psi.prox(g, x - g * f.grad(x))
        np.testing.assert_allclose(tr.x, x, atol=1e-14)

    def test_sqdist_terms_against_reference(self):
        # (1/m) sum_j lam/2 ||x - c_j||^2 equals lam/2 ||x - cbar||^2 up to a constant
        f = _ls()
        C = RngStream(3, "c").normal((4, 5))
        terms = [ProxTerm.sqdist(c, 0.5) for c in C]
        xs, _ = reference_solution(f, ProxTerm.sqdist(C.mean(0), 0.5))
        tr = sdm_run(f, ProxTerm.zero(), terms, 0.5 / f.L, K=3000, rng=1, x_star=xs)
        assert tr.column("dist_sq")[-1] < 1e-16

    def test_kaczmarz_reduction(self):
        W, b, _ = gaussian_system(12, RngStream(4, "kz"))
        a = sdm_kaczmarz_mode(W, b, np.zeros(12), 100, rng=7)
        c = randomized_kaczmarz(W, b, np.zeros(12), 100, rng=7)
        assert max(np.max(np.abs(u - v)) for u, v in zip(a.iterates, c.iterates)) < 1e-12

    def test_kaczmarz_cyclic_hand_loop(self):
        A, b, _ = low_rank_system(4, 3, 3, 2)
        tr = randomized_kaczmarz(A, b, np.zeros(3), 9, order="cyclic")
        x = np.zeros(3)
        for k in range(9):
            a = A[k % 4]
            x = x - (a @ x - b[k % 4]) / (a @ a) * a
        np.testing.assert_allclose(tr.x, x, atol=1e-14)

    @pytest.mark.parametrize("est", ["full_gd", "svrg"])
    def test_linear_memory_efficient_equals_full(self, est):
        A, b, _ = low_rank_system(6, 8, 4, RngStream(5, "lr"))
        f = _ls(20, 8, 6)
        terms = [ProxTerm.hyperplane(A[j], b[j]) for j in range(6)]
        full = sdm_run(f, None, terms, 0.3 / f.L, est, K=200, rng=2, keep_iterates=True)
        lin = sdm_linear_run(f, A, b, est, 0.3 / f.L, K=200, rng=2, keep_iterates=True)
        assert max(np.max(np.abs(u - v)) for u, v in zip(full.iterates, lin.iterates)) < 1e-12
        np.testing.assert_allclose(full.state.y, lin.y, atol=1e-10)

    def test_linear_feasibility(self):
        A, b, _ = low_rank_system(8, 10, 5, 3)
        f = _ls(20, 10, 7)
        tr = sdm_linear_run(f, A, b, "svrg", 0.2 / f.L, K=3000, rng=0)
        assert tr.extra("feas")[-1] < 1e-8
        assert affine_solution_distance(A, b, tr.x) < 1e-8

    def test_project_row(self):
        a, x = np.array([3.0, 4.0]), np.array([1.0, 1.0])
        u = project_row(a, 2.0, x)
        assert a @ u == pytest.approx(2.0)


class TestPrimalDual:
    def setup_method(self):
        rng = RngStream(8, "pd")
        self.f = make_least_squares(rng.normal((20, 6)), rng.normal(20), 0.1)
        self.L = rng.normal((3, 6))
        self.b = self.L @ rng.normal(6)
        self.g = 1 / self.f.L
        self.tau = 0.9 / (self.g * np.linalg.norm(self.L, 2) ** 2)

    def test_pddy_pd3o_licosgd_identical(self):
        H = ProxTerm.point(self.b)
        t0 = licosgd_run(self.f, self.L, self.b, self.g, self.tau, K=150, keep_iterates=True)
        t1 = pd3o_run(self.f, None, H, self.L, self.g, self.tau, K=150, keep_iterates=True)
        p0, y0 = pddy_matching_init(self.L, self.b, self.g, self.tau, np.zeros(6))
        t2 = pddy_run(self.f, None, H, self.L, self.g, self.tau, K=150, p0=p0, y0=y0, keep_iterates=True)
        for t in (t1, t2):
            assert max(np.max(np.abs(u - v)) for u, v in zip(t0.iterates, t.iterates)) < 1e-12

    def test_prilicosgd_matches_licosgd(self):
        t0 = licosgd_run(self.f, self.L, self.b, self.g, self.tau, K=80, keep_iterates=True)
        t1 = prilicosgd_run(self.f, self.L.T @ self.L, self.L.T @ self.b, self.g, self.tau, K=80,
                            keep_iterates=True)
        assert max(np.max(np.abs(u - v)) for u, v in zip(t0.iterates, t1.iterates)) < 1e-11

    def test_licosgd_solves_constrained_problem(self):
        # oracle: KKT system of the equality-constrained quadratic
        A, bb, lam, n = self.f.A, self.f.b, self.f.lam, self.f.n
        Q = A.T @ A / n + lam * np.eye(6)
        K = np.block([[Q, self.L.T], [self.L, np.zeros((3, 3))]])
        sol = np.linalg.solve(K, np.concatenate([A.T @ bb / n, self.b]))
        xs = sol[:6]
        ys = licosgd_dual_solution(self.f, self.L, xs)
        tr = licosgd_run(self.f, self.L, self.b, self.g, self.tau, K=3000, x_star=xs, y_star=ys)
        assert tr.column("dist_sq")[-1] < 1e-20
        lyap = tr.extra("lyap")
        assert lyap[-1] < 1e-12 * lyap[0]

    def test_range_check(self):
        L = np.array([[1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(ValueError):
            licosgd_run(_ls(10, 2), L, np.array([1.0, 0.0]), 0.1, 0.1)

    def test_step_conditions(self):
        H = ProxTerm.point(self.b)
        tau_edge = 1 / (self.g * np.linalg.norm(self.L, 2) ** 2)
        with pytest.raises(StepsizeConditionError):
            pddy_run(self.f, None, H, self.L, self.g, tau_edge, K=1)
        pd3o_run(self.f, None, H, self.L, self.g, tau_edge, K=1)
        with pytest.raises(StepsizeConditionError):
            pd3o_run(self.f, None, H, self.L, 2.5 / self.f.L, 0.01, K=1)
        with pytest.raises(StepsizeConditionError):
            condat_vu_run(self.f, None, H, self.L, 1.0, 2 / self.f.L, K=1)

    @pytest.mark.parametrize("solver", ["pddy", "pd3o", "cv1", "cv2"])
    def test_fused_lasso_against_cvxpy(self, solver):
        f, psi, H, D = _fused_lasso(15)
        x_ref, v_ref = _cvx_fused(f, 0.02, 0.1, D)
        g = 1 / f.L
        if solver == "pddy":
            tr = pddy_run(f, psi, H, D, g, 0.99 / (g * 4), K=6000)
        elif solver == "pd3o":
            tr = pd3o_run(f, psi, H, D, g, 1 / (g * 4), K=6000)
        else:
            tau = 1 / (f.L / 2 + 0.25 * 4)
            tr = condat_vu_run(f, psi, H, D, 0.25, 0.99 * tau, K=8000, form="I" if solver == "cv1" else "II")
        val = f.value(tr.x) + psi.value(tr.x) + H.value(D @ tr.x)
        assert val == pytest.approx(v_ref, abs=1e-6)

    def test_composite_reference_against_cvxpy(self):
        f, psi, H, D = _fused_lasso(12)
        x, v = composite_reference(f, psi, H, D)
        x_ref, v_ref = _cvx_fused(f, 0.02, 0.1, D)
        assert v <= v_ref + 1e-9
        np.testing.assert_allclose(x, x_ref, atol=1e-5)

    def test_stochastic_pddy_decreases(self):
        f, psi, H, D = _fused_lasso(10)
        _, v_ref = composite_reference(f, psi, H, D)
        g = 0.5 / f.L_i.max()
        tr = pddy_run(f, psi, H, D, g, 0.9 / (g * 4), est="saga", K=4000, rng=3, f_star=v_ref)
        assert tr.column("f_gap")[-1] < 1e-6


class TestOperators:
    @pytest.mark.parametrize("d", [2, 4, 10, 50])
    def test_fused_spectrum(self, d):
        D = fused_lasso_D(d)
        np.testing.assert_allclose(np.linalg.eigvalsh(D @ D.T), fused_lasso_spectrum(d), atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_spectral_norm(self, m, n, seed):
        A = RngStream(seed, "sn").normal((m, n))
        assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)

    def test_linop_from_callables(self):
        D = fused_lasso_D(5)
        op = LinOp(lambda v: np.diff(v), lambda u: -np.diff(np.concatenate([[0], u, [0]])), (4, 5))
        np.testing.assert_allclose(op.dense(), D)
        assert spectral_norm(op) == pytest.approx(np.linalg.norm(D, 2), rel=1e-8)

    def test_laplacian(self):
        W = laplacian([(0, 1), (1, 2), (1, 0)], 3)
        np.testing.assert_array_equal(W, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
        with pytest.raises(ValueError):
            laplacian([(0, 0)], 2)
        with pytest.raises(ValueError):
            laplacian([(0, 5)], 2)


class TestDestroy:
    def _nodes(self, N=4):
        ds = synthetic_classification(40, 3, RngStream(9, "dest"))
        f = make_logistic(ds, 0.1)
        nodes = [f.subset(np.arange(i, 40, N)) for i in range(N)]
        return f, nodes

    def test_reaches_consensus_minimizer(self):
        f, nodes = self._nodes()
        xs, _ = reference_solution(f)
        edges = [(i, (i + 1) % 4) for i in range(4)]
        g = 1 / max(n.L for n in nodes)
        tr = destroy_run(nodes, edges, g, 0.9 / (g * 4), K=2000, x_star=xs)
        assert tr.column("dist_sq")[-1] < 1e-14
        assert tr.extra("consensus")[-1] < 1e-14

    def test_matches_prilicosgd_on_stacked_problem(self):
        from optlab.splitting import BlockSeparable

        f, nodes = self._nodes(3)
        edges = [(0, 1), (1, 2)]
        W = np.kron(laplacian(edges, 3), np.eye(3))
        F = BlockSeparable(nodes)
        g = 0.5
        tau = 0.5 / (g * 3)
        t0 = destroy_run(nodes, edges, g, tau, K=50)
        t1 = prilicosgd_run(F, W, np.zeros(9), g, tau, K=50)
        np.testing.assert_allclose(t0.x.ravel(), t1.x, atol=1e-12)

    def test_disconnected(self):
        _, nodes = self._nodes()
        with pytest.raises(ValueError):
            destroy_run(nodes, [(0, 1), (2, 3)], 0.1, 0.1, K=1)

    def test_bits(self):
        _, nodes = self._nodes()
        tr = destroy_run(nodes, [(0, 1), (1, 2), (2, 3)], 0.1, 0.5, K=5)
        assert tr.column("bits")[-1] == 5 * 6 * 3 * 32
