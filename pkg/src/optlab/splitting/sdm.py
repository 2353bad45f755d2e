"""Stochastic decoupling (SDM) for ``min f(x) + psi(x) + (1/m) sum_j g_j(x)``.

Each step takes an estimator step on ``f``, a prox of ``psi``, then the
prox of one randomly sampled ``g_j`` corrected by its dual memory ``y_j``:

    z    = prox_{gamma psi}(x - gamma v - gamma y)
    x+   = prox_{eta_j g_j}(z + eta_j y_j),      eta_j = gamma / (m p_j)
    y_j+ = y_j + (z - x+) / eta_j
    y+   = y + (y_j+ - y_j) / m
"""
from dataclasses import dataclass

import numpy as np

from ..problems import make_quadratic_distance
from ..prox import ProxTerm
from ..rng import as_stream
from ..trace import MetricTrace, Monitor
from .estimators import make_estimator

_INDICATORS = ("point", "hyperplane", "slab", "box_dantzig")

# (omega, rho, gamma_max * L) for the time-varying stepsize rule
SDM_PRESETS = {
    "gd": (1.0, 1.0, None),  # gamma_max = 2 / (L + mu)
    "sgd": (1.0, 0.0, 0.5),
    "svrg": (1.0 / 3.0, "1/(3n)", 0.2),
    "saga": (1.0 / 3.0, "1/(3n)", 0.2),
}


def sdm_stepsize_preset(name, mu, L, n=1, a=None):
    """Time-varying stepsizes ``gamma_k = 2 / (mu omega (a + k + 1))``.

    ``a`` defaults to ``2 max{1 / (omega mu gamma_max), 1 / rho}`` which
    keeps ``gamma_0 <= gamma_max``. Returns the callable ``k -> gamma_k``
    (``k = 0, 1, ...``) with ``omega`` and ``a`` attached as attributes.
    """
    if name not in SDM_PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(SDM_PRESETS)}")
    if mu <= 0:
        raise ValueError("time-varying stepsizes need mu > 0")
    omega, rho, gmax = SDM_PRESETS[name]
    rho = 1.0 / (3 * n) if rho == "1/(3n)" else rho
    gamma_max = 2.0 / (L + mu) if gmax is None else gmax / L
    if a is None:
        a = 2 * max(1.0 / (omega * mu * gamma_max), 1.0 / rho if rho > 0 else 0.0)

    def gamma(k):
        return 2.0 / (mu * omega * (a + k + 1))

    gamma.omega, gamma.a, gamma.gamma_max = omega, float(a), gamma_max
    return gamma


@dataclass
class DualState:
    """Primal iterate with the dual memories ``y_j`` and their mean ``y``."""

    x: np.ndarray
    Y: np.ndarray
    y: np.ndarray
    p: np.ndarray
    k: int = 0

    @classmethod
    def init(cls, x0, m, p=None, Y0=None):
        x0 = np.array(x0, float)
        if p is None:
            p = np.full(m, 1.0 / m) if m else np.zeros(0)
        p = np.asarray(p, float)
        if m and (np.any(p < 0) or abs(p.sum() - 1) > 1e-12):
            raise ValueError("probabilities must be non-negative and sum to 1")
        Y = np.zeros((m, len(x0))) if Y0 is None else np.array(Y0, float).reshape(m, len(x0))
        y = Y.mean(axis=0) if m else np.zeros(len(x0))
        return cls(x0, Y, y, p)


def _sample(rng, p):
    m = len(p)
    if np.all(p == p[0]):
        return int(rng.integers(m))
    return int(rng.choice(m, p=p))


def _as_schedule(gamma):
    return gamma if callable(gamma) else (lambda k, g=float(gamma): g)


def sdm_step(f, psi, g_terms, state, gamma, est, rng, j=None):
    """Advance ``state`` by one SDM step in place and return it.

    ``gamma`` is a float or a callable ``k -> gamma_k``; ``j`` forces the
    sampled term (used for cyclic orders).
    """
    psi = ProxTerm.zero() if psi is None else psi
    g = _as_schedule(gamma)(state.k)
    x = state.x
    v = est.next(x) if f is not None else 0.0
    z = psi.prox(g, x - g * v - g * state.y)
    m = len(g_terms)
    if m == 0:
        state.x = z
    else:
        if j is None:
            j = _sample(rng, state.p)
        if state.p[j] == 0:
            raise ValueError(f"sampled term {j} has zero probability")
        eta = g / (m * state.p[j])
        x_new = g_terms[j].prox(eta, z + eta * state.Y[j])
        yj = state.Y[j] + (z - x_new) / eta
        state.y = state.y + (yj - state.Y[j]) / m
        state.Y[j] = yj
        state.x = x_new
    state.k += 1
    return state


def sdm_run(f, psi, g_terms, gamma, est="full_gd", K=100, p=None, rng=None, x0=None, Y0=None,
            order=None, x_star=None, f_star=None, keep_iterates=False):
    """Run ``K`` SDM steps.

    Parameters
    ----------
    f : FiniteSumObjective or None
        Smooth part (``None`` means ``f = 0``).
    psi : ProxTerm or None
    g_terms : list of ProxTerm
    gamma : float or callable
    est : GradEstimator, str or dict
        Estimator for ``f``; see :func:`make_estimator`.
    p : array_like, optional
        Sampling probabilities (uniform by default).
    order : {"cyclic"} or sequence of int, optional
        Deterministic index sequence instead of sampling.

    Returns
    -------
    MetricTrace
        ``trace.state`` holds the final :class:`DualState`.
    """
    rng = as_stream(rng, "sdm")
    d = f.dim if f is not None else len(x0)
    state = DualState.init(np.zeros(d) if x0 is None else x0, len(g_terms), p, Y0)
    est = make_estimator(est, f, rng.child("estimator")) if f is not None else None
    sampler = rng.child("index")
    monitor_f = f if f is not None else _Zero(d)
    total = _SumTerms(psi, g_terms)
    mon = Monitor(monitor_f, total, x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": "sdm", "m": len(g_terms)})
    mon.record(trace, state.x, 0)
    m = len(g_terms)
    for k in range(K):
        j = None
        if order is not None and m:
            j = k % m if isinstance(order, str) and order == "cyclic" else int(order[k])
        sdm_step(f, psi, g_terms, state, gamma, est, sampler, j)
        mon.record(trace, state.x, k + 1, est.grads if est else 0, (k + 1) * (1 + (m > 0)))
    trace.state = state
    return trace


class _Zero:
    def __init__(self, d):
        self.dim = d

    def value(self, x):
        return 0.0

    def grad(self, x):
        return np.zeros_like(x)


class _SumTerms:
    # psi + (1/m) sum_j g_j for monitoring
    def __init__(self, psi, g_terms):
        self.psi, self.g_terms = psi, g_terms

    def value(self, x):
        v = 0.0 if self.psi is None else self.psi.value(x)
        if self.g_terms:
            # constraint indicators are tracked by feasibility, not by value
            v += sum(t.value(x) for t in self.g_terms if t.kind not in _INDICATORS) / len(self.g_terms)
        return v


# ---------------------------------------------------------------------------
# linear constraints and Kaczmarz


def project_row(a, b, x):
    """Projection onto the hyperplane ``{u : a^T u = b}``."""
    return x - (a @ x - b) / (a @ a) * a


def randomized_kaczmarz(A, b, x0, K, rng=None, order=None, keep_iterates=True):
    """Classical randomized Kaczmarz: ``x <- Pi_j(x)`` with ``j`` uniform.

    Uses the same index substream as :func:`sdm_run` so that both see the
    same sequence of rows for a given ``rng``.
    """
    A, b = np.asarray(A, float), np.asarray(b, float)
    m = A.shape[0]
    sampler = as_stream(rng, "sdm").child("index")
    x = np.array(x0, float)
    trace = MetricTrace({"solver": "kaczmarz", "m": m})
    mon = Monitor(_Zero(len(x)), None, None, None, keep_iterates)
    mon.record(trace, x, 0)
    for k in range(K):
        if order == "cyclic":
            j = k % m
        elif order is not None:
            j = int(order[k])
        else:
            j = int(sampler.integers(m))
        x = project_row(A[j], b[j], x)
        mon.record(trace, x, k + 1, 0, k + 1)
    return trace


def sdm_kaczmarz_mode(A, b, x0, K, rng=None, order=None, keep_iterates=True, x_star=None):
    """SDM configured so that it reproduces randomized Kaczmarz.

    ``f = 1/2 ||x - x0||^2``, ``psi = 0``, ``g_j`` the indicator of row
    ``j``'s hyperplane, ``gamma = 1/m`` and ``y = 0`` initially. Then
    ``z = x`` at every step and the ``g_j`` prox reduces to ``Pi_j(x)``.
    """
    A, b = np.asarray(A, float), np.asarray(b, float)
    m = A.shape[0]
    f = make_quadratic_distance(x0)
    terms = [ProxTerm.hyperplane(A[j], b[j]) for j in range(m)]
    return sdm_run(f, None, terms, 1.0 / m, "full_gd", K, rng=rng, x0=x0, order=order,
                   x_star=x_star, keep_iterates=keep_iterates)


def sdm_linear_run(f, A, b, est="full_gd", gamma=1.0, p=None, K=100, rng=None, x0=None,
                   psi=None, order=None, x_star=None, f_star=None, keep_iterates=False):
    """Memory-efficient SDM for the constraints ``a_j^T x = b_j`` (rows of ``A``).

    Only the aggregate dual vector is stored:

        x+ = Pi_j(z),   y+ = y + (p_j / gamma) (z - x+)

    which matches :func:`sdm_run` with hyperplane terms because every
    ``y_j`` stays parallel to ``a_j``. ``A`` may have zero rows.
    """
    A = np.asarray(A, float).reshape(-1, f.dim)
    b = np.asarray(b, float).reshape(-1)
    m = A.shape[0]
    psi = ProxTerm.zero() if psi is None else psi
    rng = as_stream(rng, "sdm")
    est = make_estimator(est, f, rng.child("estimator"))
    sampler = rng.child("index")
    p = np.full(m, 1.0 / m) if p is None and m else (np.zeros(0) if m == 0 else np.asarray(p, float))
    steps = _as_schedule(gamma)
    x = np.zeros(f.dim) if x0 is None else np.array(x0, float)
    y = np.zeros(f.dim)
    mon = Monitor(f, psi, x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": "sdm_linear", "m": m})
    mon.record(trace, x, 0)
    for k in range(K):
        g = steps(k)
        z = psi.prox(g, x - g * est.next(x) - g * y)
        if m == 0:
            x = z
        else:
            if order == "cyclic":
                j = k % m
            elif order is not None:
                j = int(order[k])
            else:
                j = _sample(sampler, p)
            x = project_row(A[j], b[j], z)
            y = y + (p[j] / g) * (z - x)
        mon.record(trace, x, k + 1, est.grads, (k + 1) * (1 + (m > 0)),
                   feas=float(np.linalg.norm(A @ x - b)) if m else 0.0)
    trace.y = y
    return trace


def affine_solution_distance(A, b, x):
    """Distance from ``x`` to the (possibly rank-deficient) solution set of ``A x = b``."""
    A = np.asarray(A, float)
    r = A @ x - np.asarray(b, float)
    # least-norm correction lies in the row space
    dx = np.linalg.lstsq(A, r, rcond=None)[0]
    return float(np.linalg.norm(dx))
