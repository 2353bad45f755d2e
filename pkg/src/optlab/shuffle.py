"""Random Reshuffling and friends.

Epochs step through the components in an order produced by a
:class:`PermutationSchedule`: a fresh permutation every epoch (RR), one
permutation drawn once (SO), or a fixed deterministic order (IG). The
with-replacement ``SGD`` kind is kept as a baseline with the same epoch
bookkeeping.
"""
import itertools
import math

import numpy as np

from .problems import component_bregman
from .rng import as_stream
from .trace import MetricTrace, Monitor


class PermutationSchedule:
    """Orderings of ``range(n)`` emitted once per epoch.

    Parameters
    ----------
    kind : {"RR", "SO", "IG", "SGD"}
    n : int
    rng : RngStream or int, optional
        Source of randomness for RR, SO and SGD.
    base : array_like, optional
        Fixed ordering for IG (default identity) or SO (default: drawn from
        ``rng`` at construction).
    """

    KINDS = ("RR", "SO", "IG", "SGD")

    def __init__(self, kind, n, rng=None, base=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown permutation kind {kind!r}")
        self.kind, self.n = kind, int(n)
        self.rng = as_stream(rng, f"perm/{kind}")
        if base is not None:
            base = np.asarray(base, dtype=np.int64)
            if sorted(base.tolist()) != list(range(self.n)):
                raise ValueError("base ordering must be a permutation of range(n)")
        if kind == "IG":
            self.base = np.arange(self.n) if base is None else base
        elif kind == "SO":
            self.base = self.rng.permutation(self.n) if base is None else base
        else:
            self.base = None

    def next(self):
        if self.kind == "RR":
            return self.rng.permutation(self.n)
        if self.kind == "SGD":
            return self.rng.integers(self.n, size=self.n)
        return self.base


class StepsizeSchedule:
    """Per-epoch stepsizes ``gamma_k`` for ``k = 0, 1, ...``.

    Kinds
    -----
    constant(gamma)
    inv_epoch(gamma, k0, c, mu)
        ``min{gamma, c / (mu * max{1, k - k0})}``; ``gamma`` is usually ``1/L``.
    prox_decreasing(T, L, mu, n)
        ``1/L`` for the first half of the run (or for the whole run when
        ``T <= L/(2 mu n)``), then ``7 / (mu n (s + k - k0))`` with
        ``s = 7L/(4 mu n)`` and ``k0 = ceil(T/2)``.
    """

    def __init__(self, kind, **params):
        self.kind, self.params = kind, params
        if kind == "constant":
            if params["gamma"] <= 0:
                raise ValueError("gamma must be positive")
        elif kind == "inv_epoch":
            params.setdefault("c", 3.0)
        elif kind == "prox_decreasing":
            T, L, mu, n = (params[k] for k in ("T", "L", "mu", "n"))
            params["k0"] = math.ceil(T / 2)
            params["s"] = 7 * L / (4 * mu * n)
        else:
            raise ValueError(f"unknown stepsize kind {kind!r}")

    @classmethod
    def constant(cls, gamma):
        return cls("constant", gamma=float(gamma))

    @classmethod
    def inv_epoch(cls, gamma, k0, mu, c=3.0):
        return cls("inv_epoch", gamma=float(gamma), k0=int(k0), mu=float(mu), c=float(c))

    @classmethod
    def prox_decreasing(cls, T, L, mu, n):
        return cls("prox_decreasing", T=int(T), L=float(L), mu=float(mu), n=int(n))

    def __call__(self, k):
        p = self.params
        if self.kind == "constant":
            return p["gamma"]
        if self.kind == "inv_epoch":
            return min(p["gamma"], p["c"] / (p["mu"] * max(1, k - p["k0"])))
        T, L, mu, n, k0, s = (p[q] for q in ("T", "L", "mu", "n", "k0", "s"))
        if T <= L / (2 * mu * n) or k <= k0:
            return 1.0 / L
        return 7.0 / (mu * n * (s + k - k0))


def epoch_pass(f, x, gamma, ordering, return_iterates=False):
    """Sequential component steps ``x <- x - gamma * grad f_{pi_i}(x)``.

    Returns the end-of-epoch point, and the list of inner iterates
    ``x_0, ..., x_n`` when ``return_iterates`` is set.
    """
    grad = f.component_grad
    inner = [x] if return_iterates else None
    for i in ordering:
        x = x - gamma * grad(i, x)
        if return_iterates:
            inner.append(x)
    return (x, inner) if return_iterates else x


def _run(f, psi, schedule, steps, T, x0, x_star, f_star, per_iteration, keep_iterates, metadata):
    mon = Monitor(f, psi, x_star, f_star, keep_iterates)
    trace = MetricTrace(metadata)
    x = np.array(x0, dtype=float)
    n = f.n
    grads = proxes = 0
    mon.record(trace, x, 0)
    for k in range(T):
        gamma = steps(k)
        order = schedule.next()
        if per_iteration:
            # baseline: prox after every component step
            for i in order:
                x = psi.prox(gamma, x - gamma * f.component_grad(i, x))
            proxes += n
        else:
            x = epoch_pass(f, x, gamma, order)
            if psi is not None:
                x = psi.prox(gamma * f.mass, x)
                proxes += 1
        grads += n
        mon.record(trace, x, k + 1, grads, proxes)
    return trace


def run_shuffled(f, schedule, steps, T, x0, x_star=None, f_star=None, keep_iterates=False):
    """Run ``T`` epochs of RR / SO / IG (or the SGD baseline).

    The trace has one row per epoch plus the initial point; ``dist_sq``
    and ``f_gap`` are filled when ``x_star`` / ``f_star`` are supplied.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    return _run(f, None, schedule, steps, T, x0, x_star, f_star, False, keep_iterates,
                {"solver": f"shuffle/{schedule.kind}"})


def run_prox_rr(f, psi, schedule, steps, T, x0, x_star=None, f_star=None,
                per_iteration=False, keep_iterates=False):
    """Proximal RR: an epoch pass followed by one prox with parameter ``gamma_k * n``.

    With ``per_iteration=True`` the prox is applied after every component
    step with parameter ``gamma_k`` instead (the costlier baseline).

    For objectives whose normaliser differs from ``n`` (after
    :func:`importance_resample`) the prox parameter is ``gamma_k * mass``.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    return _run(f, psi, schedule, steps, T, x0, x_star, f_star, per_iteration, keep_iterates,
                {"solver": f"prox_rr/{schedule.kind}", "per_iteration": per_iteration})


# ---------------------------------------------------------------------------
# diagnostics


def limit_points(f, x_star, gamma, ordering):
    """Points ``x*_i = x* - gamma * sum_{j<i} grad f_{pi_j}(x*)`` for ``i = 0..n``.

    Row ``i`` of the returned ``(n+1, d)`` array is ``x*_i``.
    """
    x_star = np.asarray(x_star, float)
    G = f.component_grads(np.asarray(ordering), x_star)
    csum = np.vstack([np.zeros(len(x_star)), np.cumsum(G, axis=0)])
    return x_star - gamma * csum


def _permutations(n, num_perms, rng):
    if num_perms is None or num_perms >= math.factorial(n):
        if math.factorial(n) > 720 and num_perms is None:
            raise ValueError("enumeration needs n! <= 720; pass num_perms to sample")
        if math.factorial(n) <= 720:
            return [np.array(p) for p in itertools.permutations(range(n))]
    rng = as_stream(rng, "shuffling")
    return [rng.permutation(n) for _ in range(num_perms)]


def _expected_divergences(f, x_star, gamma, perms):
    # E_pi D_{f_{pi_i}}(x*_i, x*) for every i = 0..n-1
    n = f.n
    acc = np.zeros(n)
    for perm in perms:
        pts = limit_points(f, x_star, gamma, perm)
        for i in range(n):
            acc[i] += component_bregman(f, perm[i], pts[i], x_star)
    return acc / len(perms)


def shuffling_variance(f, x_star, gamma, num_perms=None, rng=None):
    """``max_{i=1..n-1} (1/gamma) E_pi D_{f_{pi_i}}(x*_i, x*)``.

    All ``n!`` permutations are enumerated when ``n! <= 720`` and
    ``num_perms`` is ``None`` or at least ``n!``; otherwise ``num_perms``
    permutations are sampled.
    """
    if f.n < 2:
        return 0.0
    e = _expected_divergences(f, x_star, gamma, _permutations(f.n, num_perms, rng))
    return float(max(e[1:].max() / gamma, 0.0))


def shuffling_radius(f, psi, x_star, gamma, num_perms=None, rng=None):
    """``max_{i=0..n-1} (1/gamma^2) E_pi D_{f_{pi_i}}(x*_i, x*)``.

    ``psi`` does not enter the formula; it is accepted for symmetry with
    the proximal setting where ``x_star`` minimizes ``f + psi``.
    """
    e = _expected_divergences(f, x_star, gamma, _permutations(f.n, num_perms, rng))
    return float(max(e.max() / gamma**2, 0.0))


def wor_stats(X, m):
    """Mean and variance of the mean of ``m`` vectors drawn without replacement.

    Returns ``(mean, (n - m) / (m (n - 1)) * sigma^2)`` where ``sigma^2``
    is the population variance; ``0/0`` at ``n = 1`` is taken as 0.
    """
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")
    mean = X.mean(axis=0)
    sigma2 = float(np.mean(np.sum((X - mean) ** 2, axis=1)))
    if n == 1:
        return mean, 0.0
    return mean, (n - m) / (m * (n - 1)) * sigma2


def importance_resample(f):
    """Replace each ``f_i`` by ``n_i = ceil(L_i / Lbar)`` copies of ``f_i / n_i``.

    The objective keeps its normaliser, so its value is unchanged, while
    every new component is at most ``Lbar``-smooth.
    """
    L = f.L_i
    Lbar = float(np.mean(L))
    if Lbar <= 0:
        return f.subset(np.arange(f.n), mass=f.mass)
    # shave one ulp-scale so exact ratios do not round up
    counts = np.maximum(np.ceil(L / Lbar * (1 - 1e-12)), 1).astype(np.int64)
    idx = np.repeat(np.arange(f.n), counts)
    w = np.repeat(1.0 / counts, counts)
    g = f.subset(idx, weights=w, mass=f.mass)
    g.copies = counts
    return g
