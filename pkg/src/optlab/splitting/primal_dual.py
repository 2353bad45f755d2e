"""Primal-dual solvers for ``min f(x) + psi(x) + H(L x)``.

``f`` is smooth and accessed through a gradient estimator, ``psi`` and
``H`` have exact proxes and ``L`` is linear. The prox of ``H*`` is always
obtained from the prox of ``H`` by the Moreau identity.

Stepsize conventions: in PDDY, PD3O and the linearly constrained methods
``gamma`` is the primal and ``tau`` the dual stepsize. In Condat-Vu the
roles follow the usual statement, ``tau`` primal and ``gamma`` dual.
"""
import numpy as np
from scipy.sparse import csgraph, csr_matrix

from ..problems import ScalarObjective, power_iteration
from ..prox import ProxTerm, conjugate_prox
from ..rng import as_stream
from ..trace import MetricTrace, Monitor, NumericalFailure
from .estimators import make_estimator

_INDICATORS = ("point", "hyperplane", "slab", "box_dantzig")


class StepsizeConditionError(ValueError):
    pass


class LinOp:
    """Linear operator given by ``apply`` and ``adjoint`` callables.

    ``shape`` is ``(dim_out, dim_in)``. ``matrix`` is kept when the
    operator was built from a dense array.
    """

    def __init__(self, apply, adjoint, shape, matrix=None):
        self.apply, self.adjoint = apply, adjoint
        self.shape = tuple(int(s) for s in shape)
        self.matrix = matrix

    @classmethod
    def from_matrix(cls, A):
        A = np.atleast_2d(np.asarray(A, float))
        return cls(lambda v: A @ v, lambda u: A.T @ u, A.shape, A)

    @classmethod
    def zero(cls, d):
        return cls.from_matrix(np.zeros((d, d)))

    @classmethod
    def identity(cls, d):
        return cls.from_matrix(np.eye(d))

    def __matmul__(self, v):
        return self.apply(v)

    def dense(self):
        if self.matrix is not None:
            return self.matrix
        return np.column_stack([self.apply(e) for e in np.eye(self.shape[1])])


def as_linop(L, d=None):
    if isinstance(L, LinOp):
        return L
    if L is None:
        return LinOp.zero(d)
    return LinOp.from_matrix(L)


def spectral_norm(L, rtol=1e-10):
    """``||L||``: exact for dense operators, power iteration on ``L* L`` otherwise."""
    L = as_linop(L)
    if L.matrix is not None:
        # dense operators get the exact value so boundary stepsizes are judged reliably
        return float(np.linalg.norm(L.matrix, 2)) if np.any(L.matrix) else 0.0
    return power_iteration(L.apply, L.adjoint, L.shape[1], rtol=rtol)


def fused_lasso_D(d):
    """First-difference operator ``(D x)_i = x_{i+1} - x_i``, shape ``(d-1, d)``."""
    D = np.zeros((d - 1, d))
    i = np.arange(d - 1)
    D[i, i], D[i, i + 1] = -1.0, 1.0
    return D


def fused_lasso_spectrum(d):
    """Eigenvalues ``2 - 2 cos(k pi / d)``, ``k = 1..d-1``, of ``D D^T`` in increasing order."""
    k = np.arange(1, d)
    return 2 - 2 * np.cos(k * np.pi / d)


# ---------------------------------------------------------------------------
# shared plumbing


def _zero_objective(d):
    return ScalarObjective(lambda x: 0.0, lambda x: np.zeros(d), d, L=0.0)


def _setup(f, est, rng, d):
    f = _zero_objective(d) if f is None else f
    rng = as_stream(rng, "primal_dual")
    est = make_estimator("full_gd" if est is None else est, f, rng.child("estimator"))
    return f, est


def _check(gamma, tau, Lnorm, nu, strict, deterministic):
    if gamma <= 0 or tau <= 0:
        raise StepsizeConditionError("stepsizes must be positive")
    prod = gamma * tau * Lnorm**2
    # equality is judged up to rounding: strict rejects it, non-strict accepts it
    if (strict and prod >= 1 - 1e-12) or (not strict and prod > 1 + 1e-12):
        op = "<" if strict else "<="
        raise StepsizeConditionError(f"need gamma*tau*||L||^2 {op} 1, got {prod:.6g}")
    if deterministic and nu > 0 and gamma >= 2 / nu:
        raise StepsizeConditionError(f"need gamma < 2/nu = {2 / nu:.6g}, got {gamma:.6g}")


class _Penalty:
    # psi(x) + H(L x) for monitoring; indicator H is left to the feasibility extra
    def __init__(self, psi, H, L):
        self.psi, self.H, self.L = psi, H, L

    def value(self, x):
        v = self.psi.value(x)
        if self.H.kind not in _INDICATORS:
            v += self.H.value(self.L.apply(x))
        return v


def _finite(*arrs):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("non-finite iterate")


def _feas(H, L, x):
    if H.kind == "point":
        return float(np.linalg.norm(L.apply(x) - H.params["c"]))
    return np.nan


# ---------------------------------------------------------------------------
# PDDY / PD3O / Condat-Vu


def pddy_run(f, psi, H, L, gamma, tau, est=None, K=100, rng=None, p0=None, y0=None,
             x_star=None, f_star=None, keep_iterates=False, d=None):
    """Stochastic PDDY.

    Per iteration::

        y+ = prox_{tau H*}(y + tau L (p - gamma L* y))
        x  = p - gamma L* y+
        s  = prox_{gamma psi}(2x - p - gamma g(x))
        p+ = p + s - x

    Row ``k`` of the trace is ``x^k``; ``x^0`` is formed from ``(p0, y0)``
    before the first gradient call.

    Raises
    ------
    StepsizeConditionError
        Unless ``gamma tau ||L||^2 < 1`` (strict) and, for full gradients,
        ``gamma < 2/nu``.
    """
    d = d or (f.dim if f is not None else len(p0))
    L = as_linop(L, d)
    psi = ProxTerm.zero() if psi is None else psi
    H = ProxTerm.zero() if H is None else H
    f, est = _setup(f, est, rng, d)
    _check(gamma, tau, spectral_norm(L), f.L, True, est.variant == "full_gd")
    p = np.zeros(d) if p0 is None else np.array(p0, float)
    y = np.zeros(L.shape[0]) if y0 is None else np.array(y0, float)
    mon = Monitor(f, _Penalty(psi, H, L), x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": "pddy", "gamma": gamma, "tau": tau})
    y = conjugate_prox(H, tau, y + tau * L.apply(p - gamma * L.adjoint(y)))
    x = p - gamma * L.adjoint(y)
    mon.record(trace, x, 0, feas=_feas(H, L, x))
    for k in range(K):
        g = est.next(x)
        s = psi.prox(gamma, 2 * x - p - gamma * g)
        p = p + s - x
        y = conjugate_prox(H, tau, y + tau * L.apply(p - gamma * L.adjoint(y)))
        x = p - gamma * L.adjoint(y)
        _finite(x, y)
        mon.record(trace, x, k + 1, est.grads, 2 * (k + 1), feas=_feas(H, L, x))
    trace.state = {"p": p, "y": y, "s": s if K else psi.prox(gamma, p)}
    return trace


def pddy_matching_init(L, b, gamma, tau, x0, y0=None):
    """Initial ``(p0, y0)`` for PDDY with ``H`` the indicator of ``{b}`` and
    ``psi = 0`` such that its iterates coincide with LiCoSGD started at
    ``(x0, y0)``.

    PDDY's ``(x^k, y^{k+1})`` obey the LiCoSGD recursion, so we pick
    ``p0 = x0 + gamma L* y0`` and solve ``(I - tau gamma L L*) y = y0 - tau L p0 + tau b``.
    """
    A = as_linop(L).dense()
    x0 = np.asarray(x0, float)
    y0 = np.zeros(A.shape[0]) if y0 is None else np.asarray(y0, float)
    p0 = x0 + gamma * A.T @ y0
    lhs = np.eye(A.shape[0]) - tau * gamma * A @ A.T
    y_init = np.linalg.solve(lhs, y0 - tau * A @ p0 + tau * np.asarray(b, float))
    return p0, y_init


def pd3o_run(f, psi, H, L, gamma, tau, est=None, K=100, rng=None, p0=None, y0=None,
             x_star=None, f_star=None, keep_iterates=False, d=None):
    """Stochastic PD3O.

    Per iteration::

        x  = prox_{gamma psi}(p)
        w  = 2x - p - gamma g(x)
        y+ = prox_{tau H*}(y + tau L (w - gamma L* y))
        p+ = x - gamma g(x) - gamma L* y+

    Row ``k`` of the trace is ``x^k = prox_{gamma psi}(p^k)``. Accepts
    ``gamma tau ||L||^2 = 1``.
    """
    d = d or (f.dim if f is not None else len(p0))
    L = as_linop(L, d)
    psi = ProxTerm.zero() if psi is None else psi
    H = ProxTerm.zero() if H is None else H
    f, est = _setup(f, est, rng, d)
    _check(gamma, tau, spectral_norm(L), f.L, False, est.variant == "full_gd")
    p = np.zeros(d) if p0 is None else np.array(p0, float)
    y = np.zeros(L.shape[0]) if y0 is None else np.array(y0, float)
    mon = Monitor(f, _Penalty(psi, H, L), x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": "pd3o", "gamma": gamma, "tau": tau})
    x = psi.prox(gamma, p)
    mon.record(trace, x, 0, feas=_feas(H, L, x))
    for k in range(K):
        g = est.next(x)
        w = 2 * x - p - gamma * g
        y = conjugate_prox(H, tau, y + tau * L.apply(w - gamma * L.adjoint(y)))
        p = x - gamma * g - gamma * L.adjoint(y)
        x = psi.prox(gamma, p)
        _finite(x, y)
        mon.record(trace, x, k + 1, est.grads, 2 * (k + 1), feas=_feas(H, L, x))
    trace.state = {"p": p, "y": y}
    return trace


def condat_vu_run(f, psi, H, L, gamma, tau, K=100, form="I", x0=None, h0=None,
                  x_star=None, f_star=None, keep_iterates=False, d=None):
    """Deterministic Condat-Vu with primal step ``tau`` and dual step ``gamma``.

    Form I::

        x^k     = prox_{tau psi}(x^{k-1} - tau grad f(x^{k-1}) - tau L* h^k)
        h^{k+1} = prox_{gamma H*}(h^k + gamma L (2 x^k - x^{k-1}))

    Form II updates the dual first and extrapolates it in the primal step.
    Requires ``nu/2 < 1/tau - gamma ||L||^2``.
    """
    if form not in ("I", "II"):
        raise ValueError("form must be 'I' or 'II'")
    d = d or (f.dim if f is not None else len(x0))
    L = as_linop(L, d)
    psi = ProxTerm.zero() if psi is None else psi
    H = ProxTerm.zero() if H is None else H
    f, est = _setup(f, None, None, d)
    Lnorm = spectral_norm(L)
    if gamma <= 0 or tau <= 0 or not f.L / 2 < 1 / tau - gamma * Lnorm**2:
        raise StepsizeConditionError(
            f"need nu/2 < 1/tau - gamma*||L||^2, got nu={f.L:.6g}, tau={tau:.6g}, gamma={gamma:.6g}")
    x = np.zeros(d) if x0 is None else np.array(x0, float)
    h = np.zeros(L.shape[0]) if h0 is None else np.array(h0, float)
    mon = Monitor(f, _Penalty(psi, H, L), x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": f"condat_vu/{form}", "gamma": gamma, "tau": tau})
    mon.record(trace, x, 0, feas=_feas(H, L, x))
    for k in range(K):
        if form == "I":
            x_new = psi.prox(tau, x - tau * est.next(x) - tau * L.adjoint(h))
            h = conjugate_prox(H, gamma, h + gamma * L.apply(2 * x_new - x))
            x = x_new
        else:
            h_new = conjugate_prox(H, gamma, h + gamma * L.apply(x))
            x = psi.prox(tau, x - tau * est.next(x) - tau * L.adjoint(2 * h_new - h))
            h = h_new
        _finite(x, h)
        mon.record(trace, x, k + 1, est.grads, 2 * (k + 1), feas=_feas(H, L, x))
    trace.state = {"h": h}
    return trace


def composite_reference(f, psi, H, L, tol=1e-12, max_iter=500_000, d=None):
    """Reference minimizer of ``f + psi + H(L x)`` by deterministic PD3O.

    Stops when the primal and dual increments are below
    ``tol * max(1, ||x||)``. Returns ``(x, objective value)``.
    """
    d = d or f.dim
    L = as_linop(L, d)
    psi = ProxTerm.zero() if psi is None else psi
    Lnorm = spectral_norm(L)
    gamma = 1.0 / f.L
    tau = 1.0 / (gamma * Lnorm**2) if Lnorm > 0 else 1.0
    p, y = np.zeros(d), np.zeros(L.shape[0])
    x = psi.prox(gamma, p)
    for _ in range(max_iter):
        g = f.grad(x)
        y_new = conjugate_prox(H, tau, y + tau * L.apply(2 * x - p - gamma * g - gamma * L.adjoint(y)))
        p = x - gamma * g - gamma * L.adjoint(y_new)
        x_new = psi.prox(gamma, p)
        step = max(np.linalg.norm(x_new - x), gamma * np.linalg.norm(L.adjoint(y_new - y)))
        x, y = x_new, y_new
        if step <= tol * max(1.0, np.linalg.norm(x)):
            return x, f.value(x) + _Penalty(psi, H, L).value(x)
    raise NumericalFailure(f"composite reference did not converge; last step {step:.3e}")


# ---------------------------------------------------------------------------
# linear constraints


def licosgd_dual_solution(f, L, x_star):
    """The unique ``y*`` in ``Range(L)`` with ``grad f(x*) + L* y* = 0``."""
    A = as_linop(L).dense()
    return np.linalg.lstsq(A.T, -f.grad(np.asarray(x_star, float)), rcond=None)[0]


def licosgd_lyapunov(x, y, x_star, y_star, L, gamma, tau):
    """``||x - x*||^2 + (1 + tau gamma lam_min^+) ||y - y*||^2_{gamma,tau}``.

    ``||u||^2_{gamma,tau} = (gamma/tau) ||u||^2 - gamma^2 ||L* u||^2`` and
    ``lam_min^+`` is the smallest positive eigenvalue of ``L* L``.
    """
    A = as_linop(L).dense()
    ev = np.linalg.eigvalsh(A.T @ A)
    lam = ev[ev > 1e-10 * max(ev.max(), 1e-300)].min()
    u = np.asarray(y, float) - y_star
    dual = (gamma / tau) * (u @ u) - gamma**2 * np.sum((A.T @ u) ** 2)
    r = np.asarray(x, float) - x_star
    return float(r @ r + (1 + tau * gamma * lam) * dual)


def _range_check(L, b):
    if L.matrix is None:
        return
    A = L.matrix
    r = A @ np.linalg.lstsq(A, b, rcond=None)[0] - b
    if np.linalg.norm(r) > 1e-8 * max(1.0, np.linalg.norm(b)):
        raise ValueError("b is not in the range of L; the constraint set is empty")


def licosgd_run(f, L, b, gamma, tau, est=None, K=100, rng=None, x0=None, y0=None,
                x_star=None, f_star=None, y_star=None, keep_iterates=False):
    """LiCoSGD for ``min f(x)`` subject to ``L x = b``.

    Per iteration::

        w  = x - gamma g(x)
        y+ = y + tau L (w - gamma L* y) - tau b
        x+ = w - gamma L* y+

    ``extras["feas"]`` is ``||L x - b||``; ``extras["lyap"]`` is filled
    when both ``x_star`` and ``y_star`` are given.
    """
    L = as_linop(L, f.dim)
    b = np.asarray(b, float)
    _range_check(L, b)
    f, est = _setup(f, est, rng, f.dim)
    _check(gamma, tau, spectral_norm(L), f.L, False, est.variant == "full_gd")
    x = np.zeros(f.dim) if x0 is None else np.array(x0, float)
    y = np.zeros(L.shape[0]) if y0 is None else np.array(y0, float)
    mon = Monitor(f, None, x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": "licosgd", "gamma": gamma, "tau": tau})
    duals = [y.copy()] if keep_iterates else None

    def extras(x, y):
        out = {"feas": float(np.linalg.norm(L.apply(x) - b))}
        if x_star is not None and y_star is not None:
            out["lyap"] = licosgd_lyapunov(x, y, x_star, y_star, L, gamma, tau)
        return out

    mon.record(trace, x, 0, **extras(x, y))
    y_scale = 1.0 + np.linalg.norm(y)
    for k in range(K):
        w = x - gamma * est.next(x)
        y = y + tau * L.apply(w - gamma * L.adjoint(y)) - tau * b
        x = w - gamma * L.adjoint(y)
        _finite(x, y)
        if np.linalg.norm(y) > 1e15 * y_scale:
            raise NumericalFailure("dual iterate diverges; is b in the range of L?")
        if keep_iterates:
            duals.append(y.copy())
        mon.record(trace, x, k + 1, est.grads, k + 1, **extras(x, y))
    trace.state = {"y": y}
    trace.duals = duals
    return trace


def prilicosgd_run(f, W, c, gamma, tau, est=None, K=100, rng=None, x0=None, a0=None,
                   x_star=None, f_star=None, keep_iterates=False):
    """PriLiCoSGD: LiCoSGD written with ``W = L* L``, ``c = L* b`` and ``a = L* y``.

    Per iteration::

        t  = x - gamma g(x)
        a+ = a + tau W (t - gamma a) - tau c
        x+ = t - gamma a+
    """
    W = as_linop(W, f.dim)
    c = np.asarray(c, float)
    f, est = _setup(f, est, rng, f.dim)
    # ||W|| = ||L||^2
    _check(gamma, tau, np.sqrt(spectral_norm(W)), f.L, False, est.variant == "full_gd")
    x = np.zeros(f.dim) if x0 is None else np.array(x0, float)
    a = np.zeros(f.dim) if a0 is None else np.array(a0, float)
    mon = Monitor(f, None, x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": "prilicosgd", "gamma": gamma, "tau": tau})
    mon.record(trace, x, 0)
    for k in range(K):
        t = x - gamma * est.next(x)
        a = a + tau * W.apply(t - gamma * a) - tau * c
        x = t - gamma * a
        _finite(x, a)
        mon.record(trace, x, k + 1, est.grads, k + 1)
    trace.state = {"a": a}
    return trace


# ---------------------------------------------------------------------------
# decentralized


def laplacian(edges, N):
    """Graph Laplacian of an undirected edge list on nodes ``0..N-1``."""
    Wh = np.zeros((N, N))
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise ValueError(f"self-loop at node {i}")
        if not (0 <= i < N and 0 <= j < N):
            raise ValueError(f"edge ({i}, {j}) refers to a missing node")
        if Wh[i, j] == 0:
            Wh[i, j] = Wh[j, i] = -1.0
    Wh[np.diag_indices(N)] = -Wh.sum(axis=1)
    return Wh


def _check_connected(Wh):
    n_comp, _ = csgraph.connected_components(csr_matrix(Wh != 0), directed=False)
    if n_comp != 1:
        raise ValueError(f"graph is disconnected ({n_comp} components)")


class BlockSeparable:
    """``F(x_1, ..., x_N) = sum_i f_i(x_i)`` on stacked vectors."""

    def __init__(self, objectives):
        self.parts = list(objectives)
        self.N = len(self.parts)
        self.d = self.parts[0].dim
        self.dim = self.N * self.d
        self.n = self.N
        self.mass = self.N
        self.L = max(g.L for g in self.parts)

    def value(self, x):
        X = np.asarray(x, float).reshape(self.N, self.d)
        return float(sum(g.value(X[i]) for i, g in enumerate(self.parts)))

    def grad(self, x):
        X = np.asarray(x, float).reshape(self.N, self.d)
        return np.concatenate([g.grad(X[i]) for i, g in enumerate(self.parts)])


def destroy_run(node_objectives, edges, gamma, tau, K=100, estimators=None, rng=None, x0=None,
                x_star=None, f_star=None, keep_iterates=False):
    """DESTROY: decentralized PriLiCoSGD with the graph Laplacian as gossip matrix.

    Node ``i`` keeps ``(x_i, a_i)`` and exchanges ``t_j - gamma a_j`` with
    its neighbours::

        t_i  = x_i - gamma g_i(x_i)
        a_i+ = (1 - tau gamma W_ii) a_i + tau W_ii t_i + tau sum_{j~i} W_ij (t_j - gamma a_j)
        x_i+ = t_i - gamma a_i+

    The problem is ``min sum_i f_i(x)``. Nodes update in index order from
    the previous round's values. Trace metrics use the node average
    ``xbar``: ``f_gap`` is ``sum_i f_i(xbar) - f_star``, ``dist_sq`` the mean
    of ``||x_i - x*||^2`` and ``extras["consensus"]`` the mean of ``||x_i - xbar||^2``.
    """
    N = len(node_objectives)
    Wh = laplacian(edges, N)
    if N > 1:
        _check_connected(Wh)
    F = BlockSeparable(node_objectives)
    d = F.d
    rng = as_stream(rng, "destroy")
    if estimators is None:
        estimators = ["full_gd"] * N
    elif isinstance(estimators, (str, dict)):
        estimators = [estimators] * N
    ests = [make_estimator(e, g, rng.child(f"node/{i}")) for i, (e, g) in enumerate(zip(estimators, node_objectives))]
    wnorm = float(np.linalg.eigvalsh(Wh)[-1]) if N > 1 else 0.0
    _check(gamma, tau, np.sqrt(wnorm), F.L, False, all(e.variant == "full_gd" for e in ests))
    X = np.zeros((N, d)) if x0 is None else np.broadcast_to(np.asarray(x0, float), (N, d)).copy()
    A = np.zeros((N, d))
    nbrs = [np.flatnonzero((Wh[i] != 0) & (np.arange(N) != i)) for i in range(N)]
    trace = MetricTrace({"solver": "destroy", "nodes": N, "gamma": gamma, "tau": tau})
    x_star = None if x_star is None else np.asarray(x_star, float)
    n_edges = int(sum(len(nb) for nb in nbrs))

    def record(step, grads):
        xbar = X.mean(axis=0)
        f_gap = np.nan if f_star is None else sum(g.value(xbar) for g in node_objectives) - f_star
        dist = np.nan if x_star is None else float(np.mean(np.sum((X - x_star) ** 2, axis=1)))
        cons = float(np.mean(np.sum((X - xbar) ** 2, axis=1)))
        trace.record(step, grads, step, step * n_edges * d * 32.0, f_gap, dist, consensus=cons)
        if keep_iterates:
            trace.iterates.append(X.copy())
        trace.x = X.copy()

    record(0, 0)
    for k in range(K):
        T = np.array([X[i] - gamma * ests[i].next(X[i]) for i in range(N)])
        msg = T - gamma * A  # what each node sends to its neighbours
        A_new = np.empty_like(A)
        for i in range(N):
            acc = (1 - tau * gamma * Wh[i, i]) * A[i] + tau * Wh[i, i] * T[i]
            for j in nbrs[i]:
                acc = acc + tau * Wh[i, j] * msg[j]
            A_new[i] = acc
        A = A_new
        X = T - gamma * A
        _finite(X, A)
        record(k + 1, sum(e.grads for e in ests))
    trace.state = {"a": A, "laplacian": Wh}
    return trace
