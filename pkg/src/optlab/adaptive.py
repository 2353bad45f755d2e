"""Adaptive gradient descent without line search.

The stepsize is estimated from the two most recent iterates and
gradients: it may grow by at most a factor ``sqrt(1 + theta)`` per step
(``theta`` being the previous ratio of stepsizes) and is capped by an
inverse local curvature estimate.

Conventions: ``x/0 = +inf`` for the curvature bound, ``min{a, inf} = a``,
and when both bounds are infinite the previous stepsize is reused.
"""
from dataclasses import dataclass, field

import numpy as np

from .rng import as_stream
from .trace import MetricTrace, Monitor

INF = np.inf


def _grad(f, x):
    return f.grad(x) if hasattr(f, "grad") else np.asarray(f(x), float)


def _ratio(num, den):
    # num/den with num/0 = +inf (including 0/0)
    return INF if den == 0 else num / den


def _grow(factor2, gamma):
    # sqrt(factor2) * gamma, saturating to inf instead of overflowing
    with np.errstate(over="ignore"):
        return np.sqrt(factor2) * gamma


def _pick(grow, bound, prev):
    g = min(grow, bound) if not np.isnan(grow) else bound
    return prev if not np.isfinite(g) else g


@dataclass
class AdaptiveState:
    """Mutable record carried between adaptive steps.

    ``history`` collects ``(x_k, gamma_k, theta_k)`` for ``k >= 1`` so that
    :func:`ergodic_average` can be formed afterwards.
    """

    gamma_prev: float = 1e-10
    theta_prev: float = INF
    x_prev: np.ndarray = None
    g_prev: np.ndarray = None
    k: int = 0
    # accelerated variant
    mu_prev: float = 0.0
    Theta_prev: float = INF
    y_prev: np.ndarray = None
    history: list = field(default_factory=list)


def _first_step(state, f, x):
    g = _grad(f, x)
    state.x_prev, state.g_prev, state.k = x, g, 1
    return x - state.gamma_prev * g, state


def _commit(state, x, g, gamma):
    state.theta_prev = gamma / state.gamma_prev
    state.gamma_prev = gamma
    state.x_prev, state.g_prev = x, g
    state.k += 1
    state.history.append((x, gamma, state.theta_prev))


def adgd_general_step(state, f, x, alpha=0.5):
    """One step of the general rule with ``alpha`` in (0, 1).

    ``gamma_k = min{sqrt(1/beta + theta) gamma_{k-1}, alpha ||dx|| / ||dg||}``
    with ``beta = 1 / (2 (1 - alpha))``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if state.x_prev is None:
        return _first_step(state, f, x)
    beta = 1.0 / (2 * (1 - alpha))
    g = _grad(f, x)
    dx = np.linalg.norm(x - state.x_prev)
    dg = np.linalg.norm(g - state.g_prev)
    grow = _grow(1 / beta + state.theta_prev, state.gamma_prev)
    gamma = _pick(grow, _ratio(alpha * dx, dg), state.gamma_prev)
    _commit(state, x, g, gamma)
    return x - gamma * g, state


def adgd_step(state, f, x):
    """One AdGD step: ``gamma_k = min{sqrt(1+theta) gamma_{k-1}, ||dx|| / (2||dg||)}``."""
    return adgd_general_step(state, f, x, alpha=0.5)


def adgd_smooth_step(state, f, x, L):
    """AdGD when a global smoothness constant ``L`` is known.

    ``gamma_0`` is forced to ``1/L`` and the curvature bound becomes
    ``1/(gamma_{k-1} L^2) + 1/(2 L_k)`` with ``L_k = ||dg|| / ||dx||``.
    """
    if state.x_prev is None:
        state.gamma_prev = 1.0 / L
        return _first_step(state, f, x)
    g = _grad(f, x)
    dx = np.linalg.norm(x - state.x_prev)
    dg = np.linalg.norm(g - state.g_prev)
    Lk = 0.0 if dx == 0 else dg / dx
    bound = 1.0 / (state.gamma_prev * L**2) + _ratio(1.0, 2 * Lk)
    grow = _grow(1 + state.theta_prev, state.gamma_prev)
    gamma = _pick(grow, bound, state.gamma_prev)
    _commit(state, x, g, gamma)
    return x - gamma * g, state


def adgd_accel_step(state, f, x):
    """Accelerated adaptive step with momentum from curvature estimates.

    ``mu_0`` defaults to 0 with ``Theta_0 = +inf``; the first curvature
    estimate therefore comes from the gradient-difference arm.
    """
    if state.x_prev is None:
        x_next, state = _first_step(state, f, x)
        state.y_prev = x_next
        return x_next, state
    g = _grad(f, x)
    dx = np.linalg.norm(x - state.x_prev)
    dg = np.linalg.norm(g - state.g_prev)
    grow = _grow(1 + state.theta_prev / 2, state.gamma_prev)
    gamma = _pick(grow, _ratio(dx, 2 * dg), state.gamma_prev)
    mu_grow = _grow(1 + state.Theta_prev / 2, state.mu_prev) if state.mu_prev > 0 else INF
    mu = _pick(mu_grow, _ratio(dg, 2 * dx), state.mu_prev)
    beta = (np.sqrt(1 / gamma) - np.sqrt(mu)) / (np.sqrt(1 / gamma) + np.sqrt(mu))
    y = x - gamma * g
    x_next = y + beta * (y - state.y_prev)
    state.Theta_prev = _ratio(mu, state.mu_prev)
    state.mu_prev = mu
    state.y_prev = y
    state.beta = beta
    _commit(state, x, g, gamma)
    return x_next, state


def adsgd_step(state, f, x, alpha, option="biased", rng=None):
    """Adaptive SGD step on a finite sum with single-sample gradients.

    ``option="biased"`` estimates the curvature with the same sample
    ``xi_k`` used for the step; ``"unbiased"`` draws an independent
    ``zeta_k`` and evaluates it at both points.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if option not in ("biased", "unbiased"):
        raise ValueError("option must be 'biased' or 'unbiased'")
    rng = as_stream(rng, "adsgd")
    i = int(rng.integers(f.n))
    g = f.component_grad(i, x)
    if state.x_prev is None:
        state.x_prev, state.k = x, 1
        return x - state.gamma_prev * g, state
    j = i if option == "biased" else int(rng.integers(f.n))
    gj = g if j == i else f.component_grad(j, x)
    dx = np.linalg.norm(x - state.x_prev)
    dg = np.linalg.norm(gj - f.component_grad(j, state.x_prev))
    Lk = 0.0 if dx == 0 else dg / dx
    grow = _grow(1 + state.theta_prev, state.gamma_prev)
    gamma = _pick(grow, _ratio(alpha, Lk), state.gamma_prev)
    _commit(state, x, g, gamma)
    return x - gamma * g, state


def ergodic_weights(gammas, thetas, beta=1.0, scale=1.0):
    """Weights of ``x_1..x_K`` in the ergodic average.

    ``w_i = gamma_i (1 + beta theta_i) - beta gamma_{i+1} theta_{i+1}`` for
    ``i < K`` and ``gamma_K (1 + beta theta_K)`` for the last point.
    The result is divided by ``scale``; ``scale=None`` uses ``max gamma_i``.
    """
    g = np.asarray(gammas, float)
    t = np.asarray(thetas, float)
    if scale is None:
        scale = float(np.max(g)) if len(g) else 1.0
    # weights are linear in the stepsizes; normalising keeps them finite
    g = g / scale
    w = g * (1 + beta * t)
    w[:-1] -= beta * g[1:] * t[1:]
    return w


def ergodic_average(xs, gammas, thetas, beta=1.0):
    """Weighted average ``xhat_K`` of the iterates ``x_1..x_K``.

    The normaliser is ``S_K = sum_i gamma_i + beta gamma_1 theta_1``.
    """
    xs = np.atleast_2d(np.asarray(xs, float))
    g = np.asarray(gammas, float)
    top = float(np.max(g))
    w = ergodic_weights(g, thetas, beta, scale=top)
    if np.any(w < -1e-12 * max(1.0, float(np.max(np.abs(w))))):
        raise ValueError("negative ergodic weight")
    S = float(np.sum(g / top) + beta * g[0] / top * thetas[0])
    return (w @ xs) / S


_STEPS = {
    "adgd": adgd_step,
    "general": adgd_general_step,
    "smooth": adgd_smooth_step,
    "accel": adgd_accel_step,
}


def run_adaptive(f, x0=None, K=100, variant="adgd", gamma0=1e-10, alpha=0.5, L=None,
                 option="biased", rng=None, x_star=None, f_star=None, keep_iterates=False):
    """Run ``K`` steps of an adaptive method and return its trace.

    ``variant`` is one of ``adgd``, ``general``, ``smooth`` (needs ``L``),
    ``accel`` or ``adsgd``. ``extras`` hold ``gamma`` and ``theta`` per
    step; ``trace.metadata["xhat"]`` is the ergodic average for the
    non-accelerated deterministic variants.
    """
    x = np.zeros(f.dim) if x0 is None else np.array(x0, float)
    state = AdaptiveState(gamma_prev=gamma0)
    mon = Monitor(f, None, x_star, f_star, keep_iterates)
    trace = MetricTrace({"solver": f"adaptive/{variant}"})
    stream = as_stream(rng, "adsgd")
    mon.record(trace, x, 0, gamma=gamma0, theta=INF)
    grads = 0
    for k in range(1, K + 1):
        if variant == "adsgd":
            x, state = adsgd_step(state, f, x, alpha, option, stream)
            grads += 1 if option == "biased" else 2
        elif variant == "general":
            x, state = adgd_general_step(state, f, x, alpha)
            grads += 1
        elif variant == "smooth":
            x, state = adgd_smooth_step(state, f, x, L)
            grads += 1
        else:
            x, state = _STEPS[variant](state, f, x)
            grads += 1
        mon.record(trace, x, k, grads, gamma=state.gamma_prev, theta=state.theta_prev)
    trace.state = state
    if state.history and variant in ("adgd", "general", "smooth"):
        xs, gs, ts = zip(*state.history)
        beta = 1.0 / (2 * (1 - alpha)) if variant == "general" else 1.0
        trace.metadata["xhat"] = ergodic_average(xs, gs, ts, beta)
    return trace
