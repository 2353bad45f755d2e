"""Simulated multi-worker methods: Local SGD and federated random reshuffling.

Workers run one after another in index order, each with its own labeled
random substream, so a run is bit-for-bit reproducible while keeping the
semantics of synchronous parallel execution.
"""
import warnings

import numpy as np

from .problems import Dataset, make_logistic
from .prox import ProxTerm
from .rng import as_stream
from .shuffle import PermutationSchedule, epoch_pass
from .trace import MetricTrace, Monitor

FLOAT_BITS = 32  # per-coordinate cost of an uncompressed upload


class FederatedProblem:
    """Shards of a finite sum held by ``M`` workers.

    Attributes
    ----------
    shards : list of FiniteSumObjective
        ``f_m``, the average of the components held by worker ``m``.
    indices : list of ndarray
        Component indices of each shard in the parent objective.
    f : FiniteSumObjective
        ``(1/M) sum_m f_m``.
    pooled : FiniteSumObjective
        ``(1/N) sum_m sum_j f_mj``, the objective of federated RR. Equals
        ``f`` when all shards have the same size.
    R : ProxTerm
        Shared regularizer.
    """

    def __init__(self, parent, indices, R=None, mode="custom"):
        self.parent = parent
        self.indices = [np.asarray(ix, dtype=np.int64) for ix in indices]
        self.M = len(self.indices)
        if self.M < 1:
            raise ValueError("need at least one worker")
        self.shards = [parent.subset(ix) for ix in self.indices]
        self.N_m = np.array([len(ix) for ix in self.indices])
        self.N = int(self.N_m.sum())
        self.R = ProxTerm.zero() if R is None else R
        self.mode = mode
        allidx = np.concatenate(self.indices)
        w = np.concatenate([np.full(n, self.N / (self.M * n)) for n in self.N_m])
        self.f = parent.subset(allidx, weights=w, mass=self.N)
        self.pooled = parent.subset(allidx)

    @property
    def dim(self):
        return self.parent.dim


def partition(data, M, mode="contiguous", rng=None, lambda2=0.0, R=None):
    """Split a dataset (or objective) across ``M`` workers.

    ``contiguous`` keeps index order (heterogeneous when the data are
    sorted), ``shuffled`` permutes first, and ``replicate`` gives every
    worker the full data. A :class:`Dataset` is turned into a logistic
    objective with ``lambda2``.
    """
    f = make_logistic(data, lambda2) if isinstance(data, Dataset) else data
    n = f.n
    if M > n:
        raise ValueError(f"cannot split {n} samples across {M} workers")
    if mode == "replicate":
        idx = [np.arange(n) for _ in range(M)]
    elif mode == "contiguous":
        idx = np.array_split(np.arange(n), M)
    elif mode == "shuffled":
        idx = np.array_split(as_stream(rng, "partition").permutation(n), M)
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    return FederatedProblem(f, idx, R=R, mode=mode)


class SyncSchedule:
    """Communication times of Local SGD.

    Either a constant gap ``H`` (sync after steps H, 2H, ...) or explicit
    strictly increasing step counts ``times``.
    """

    def __init__(self, H=None, times=None):
        if (H is None) == (times is None):
            raise ValueError("give exactly one of H or times")
        if H is not None:
            if H < 1:
                raise ValueError("H must be >= 1")
            self.H, self.times = int(H), None
        else:
            times = [int(t) for t in times]
            if any(b <= a for a, b in zip(times, times[1:])) or (times and times[0] < 1):
                raise ValueError("sync times must be positive and strictly increasing")
            self.H, self.times = None, set(times)

    def is_sync(self, t):
        """Whether workers average after the ``t``-th local step (1-based)."""
        if self.H is not None:
            return t % self.H == 0
        return t in self.times


def _worker_grad(shard, x, batch, rng):
    # uniform with-replacement minibatch on the shard
    idx = rng.integers(shard.n, size=batch)
    return shard.component_grads(idx, x).sum(axis=0) / batch


def local_sgd(fp, sync, gamma, K, batch=1, rng=None, x0=None, x_star=None, f_star=None,
              record_every=1):
    """Local SGD with periodic averaging.

    Worker iterates are kept as ``x_m = x_sync - gamma * S_m`` where ``S_m``
    accumulates local gradients since the last synchronization. The trace
    stores the mean iterate metrics and the deviation
    ``V = (1/M) sum_m ||x_m - xhat||^2`` under ``extras["V"]``.
    """
    rng = as_stream(rng, "local_sgd")
    streams = [rng.child(f"worker/{m}") for m in range(fp.M)]
    mon = Monitor(fp.f, None, x_star, f_star)
    trace = MetricTrace({"solver": "local_sgd", "M": fp.M})
    x_sync = np.zeros(fp.dim) if x0 is None else np.array(x0, float)
    S = np.zeros((fp.M, fp.dim))
    grads = 0
    bits = 0.0
    mon.record(trace, x_sync, 0, V=0.0)
    for t in range(1, K + 1):
        for m in range(fp.M):
            S[m] = S[m] + _worker_grad(fp.shards[m], x_sync - gamma * S[m], batch, streams[m])
        grads += fp.M * batch
        if sync.is_sync(t):
            x_sync = x_sync - gamma * (S.sum(axis=0) / fp.M)
            S[:] = 0.0
            bits += fp.M * fp.dim * FLOAT_BITS
        if t % record_every == 0 or t == K:
            X = x_sync - gamma * S
            xhat = X.mean(axis=0)
            V = float(np.mean(np.sum((X - xhat) ** 2, axis=1)))
            mon.record(trace, xhat, t, grads, 0, bits, V=V)
    return trace


def minibatch_sgd(fp, gamma, K, batch=1, rng=None, x0=None, x_star=None, f_star=None):
    """Synchronous minibatch SGD: each step averages one minibatch gradient per worker."""
    rng = as_stream(rng, "local_sgd")
    streams = [rng.child(f"worker/{m}") for m in range(fp.M)]
    mon = Monitor(fp.f, None, x_star, f_star)
    trace = MetricTrace({"solver": "minibatch_sgd", "M": fp.M})
    x = np.zeros(fp.dim) if x0 is None else np.array(x0, float)
    mon.record(trace, x, 0, V=0.0)
    for t in range(1, K + 1):
        g = np.zeros(fp.dim)
        for m in range(fp.M):
            g = g + _worker_grad(fp.shards[m], x, batch, streams[m])
        x = x - gamma * (g / fp.M)
        mon.record(trace, x, t, fp.M * batch * t, 0, t * fp.M * fp.dim * FLOAT_BITS, V=0.0)
    return trace


def fed_rr(fp, gamma, T, rng=None, variant="RR", x0=None, x_star=None, f_star=None):
    """Federated random reshuffling (or shuffle-once with ``variant="SO"``).

    Each epoch every worker makes one local pass over its ``N_m``
    components, the server averages the results and applies
    ``prox_{gamma (N/M) R}``.
    """
    if variant not in ("RR", "SO"):
        raise ValueError("variant must be 'RR' or 'SO'")
    Lmax = max(float(np.max(s.L_i)) for s in fp.shards)
    if Lmax > 0 and gamma > 1.0 / Lmax:
        warnings.warn(f"gamma={gamma:g} exceeds 1/max L_i={1 / Lmax:g}", stacklevel=2)
    rng = as_stream(rng, "fed_rr")
    perms = [PermutationSchedule(variant, fp.N_m[m], rng.child(f"worker/{m}")) for m in range(fp.M)]
    mon = Monitor(fp.pooled, fp.R, x_star, f_star)
    trace = MetricTrace({"solver": f"fed_rr/{variant}", "M": fp.M})
    x = np.zeros(fp.dim) if x0 is None else np.array(x0, float)
    prox_param = gamma * fp.N / fp.M
    mon.record(trace, x, 0)
    for k in range(1, T + 1):
        X = np.array([epoch_pass(fp.shards[m], x, gamma, perms[m].next()) for m in range(fp.M)])
        x = fp.R.prox(prox_param, X.mean(axis=0))
        mon.record(trace, x, k, k * fp.N, k, k * fp.M * fp.dim * FLOAT_BITS)
    trace.metadata["prox_param"] = prox_param
    return trace


def fed_variances(fp, x_star, batch=1):
    """Heterogeneity measures at ``x_star``.

    Returns ``(sigma_opt2, sigma_dif2, sigma_m2)`` where, for minibatches of
    ``batch`` samples drawn with replacement,

    * ``sigma_opt2 = E ||g(x*; xi)||^2`` with ``xi`` drawn from the pooled data,
    * ``sigma_dif2 = (1/M) sum_m E ||g_m(x*; xi_m)||^2`` with ``xi_m`` from shard m,
    * ``sigma_m2[m]`` is the variance of single-sample gradients on shard m.

    ``batch=np.inf`` means full local gradients.
    """
    x_star = np.asarray(x_star, float)
    sig_m, bias_m = [], []
    for s in fp.shards:
        G = s.all_grads(x_star)
        gm = G.mean(axis=0)
        sig_m.append(float(np.mean(np.sum((G - gm) ** 2, axis=1))))
        bias_m.append(float(gm @ gm))
    sig_m, bias_m = np.array(sig_m), np.array(bias_m)
    # pooled sampling: a uniform worker, then a uniform sample on its shard
    g_bar = np.mean([s.grad(x_star) for s in fp.shards], axis=0)
    var_pool = float(np.mean(bias_m + sig_m) - g_bar @ g_bar)
    sigma_opt2 = float(g_bar @ g_bar + var_pool / batch)
    sigma_dif2 = float(np.mean(bias_m + sig_m / batch))
    return sigma_opt2, sigma_dif2, sig_m
