"""Build problems from configs, compute references and dispatch to solvers."""
from types import SimpleNamespace

import numpy as np

from .. import __version__
from ..adaptive import run_adaptive
from ..federated import fed_rr, local_sgd, minibatch_sgd, partition, SyncSchedule
from ..problems import (
    QuadraticObjective,
    ScalarObjective,
    make_least_squares,
    low_rank_system,
    make_logistic,
    parse_libsvm,
    reference_solution,
    synthetic_classification,
)
from ..prox import ProxTerm
from ..quantize import diana_default_params, diana_run, terngrad_run
from ..rng import RngStream
from ..shuffle import PermutationSchedule, StepsizeSchedule, run_prox_rr, run_shuffled
from ..splitting import (
    composite_reference,
    condat_vu_run,
    destroy_run,
    fused_lasso_D,
    licosgd_run,
    pd3o_run,
    pddy_run,
    prilicosgd_run,
    sdm_kaczmarz_mode,
    sdm_linear_run,
    sdm_run,
    sdm_stepsize_preset,
    spectral_norm,
)
from .config import ConfigError, RunConfig


def _get(spec, key, default, kind=float):
    v = spec.get(key, default)
    try:
        return None if v is None else kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key!r} must be of type {kind.__name__}, got {v!r}") from None


def _psi(spec):
    l1, l2 = _get(spec, "l1", 0.0), _get(spec, "l2_prox", 0.0)
    if l1 > 0 and l2 > 0:
        return ProxTerm.elastic(l1, l2)
    if l1 > 0:
        return ProxTerm.l1(l1)
    if l2 > 0:
        return ProxTerm.sqnorm(l2)
    return None


def build_problem(spec, seed):
    """Problem namespace with ``f``, ``psi`` and, when relevant, ``H``, ``L``, ``A``, ``b``."""
    kind = spec["kind"]
    rng = RngStream(seed, "problem")
    n, d = _get(spec, "n", 100, int), _get(spec, "d", 10, int)
    lam = _get(spec, "lambda2", 0.01)
    if n < 1 or d < 1:
        raise ConfigError("problem n and d must be positive")
    out = SimpleNamespace(kind=kind, psi=_psi(spec), H=None, L=None, A=None, b=None)
    if kind == "logistic":
        path = spec.get("libsvm")
        if path:
            try:
                with open(path, "rb") as fh:
                    ds = parse_libsvm(fh.read())
            except OSError as err:
                raise ConfigError(f"cannot read dataset {path}: {err.strerror}") from None
        else:
            ds = synthetic_classification(n, d, rng, bool(spec.get("sort_labels", False)),
                                          _get(spec, "separation", 1.0))
        out.f = make_logistic(ds, lam)
    elif kind in ("least_squares", "fused_lasso"):
        A = rng.normal((n, d))
        x_true = rng.normal(d)
        if kind == "fused_lasso":
            x_true = np.repeat(rng.normal(max(d // 5, 1)), int(np.ceil(d / max(d // 5, 1))))[:d]
        b = A @ x_true + _get(spec, "noise", 0.1) * rng.normal(n)
        out.f = make_least_squares(A, b, lam)
        if kind == "fused_lasso":
            out.H = ProxTerm.l1(_get(spec, "tv", 0.1))
            out.L = fused_lasso_D(d)
    elif kind == "linear_system":
        m, r = _get(spec, "m", 10, int), _get(spec, "rank", None, int)
        r = min(m, d) if r is None else r
        out.A, out.b, _ = low_rank_system(m, d, r, rng, _get(spec, "cond", 3.0))
        C = rng.normal((n, d))
        out.f = QuadraticObjective(np.repeat(np.eye(d)[None], n, axis=0), C)
    elif kind == "quartic":
        out.f = ScalarObjective(lambda x: float(np.sum(x**4)) / 4, lambda x: x**3, d)
        out.x0 = np.full(d, _get(spec, "x0", 2.0))
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    return out


def _constrained_solution(prob):
    # identity quadratics: project the mean center onto {A x = b}
    c = prob.f.minimizer()
    x = c - np.linalg.lstsq(prob.A, prob.A @ c - prob.b, rcond=None)[0]
    return x, prob.f.value(x)


def _gamma(spec, L, default=1.0):
    if "gamma" in spec:
        return _get(spec, "gamma", None)
    return _get(spec, "gamma_L", default) / L


def _run_shuffle(cfg, prob, rng):
    s = cfg.solver
    f, psi = prob.f, prob.psi
    x_star, f_star = reference_solution(f, psi, tol=cfg.ref_tol)
    method = s.get("method", "RR")
    gamma = _gamma(s, float(np.max(f.L_i)))
    sched = s.get("schedule", "constant")
    if sched == "constant":
        steps = StepsizeSchedule.constant(gamma)
    elif sched == "inv_epoch":
        steps = StepsizeSchedule.inv_epoch(gamma, _get(s, "k0", 0, int), max(f.mu, 1e-12))
    elif sched == "prox_decreasing":
        steps = StepsizeSchedule.prox_decreasing(cfg.budget, f.L, max(f.mu, 1e-12), f.n)
    else:
        raise ConfigError(f"unknown schedule {sched!r}")
    perm = PermutationSchedule(method, f.n, rng.child("perm"))
    x0 = np.zeros(f.dim)
    if psi is None:
        return run_shuffled(f, perm, steps, cfg.budget, x0, x_star, f_star)
    return run_prox_rr(f, psi, perm, steps, cfg.budget, x0, x_star, f_star,
                       per_iteration=bool(s.get("per_iteration", False)))


def _run_federated(cfg, prob, rng):
    s = cfg.solver
    fp = partition(prob.f, _get(s, "M", 4, int), s.get("mode", "shuffled"), rng.child("partition"),
                   R=prob.psi)
    method = s.get("method", "local_sgd")
    gamma = _gamma(s, float(np.max(prob.f.L_i)), 0.5)
    if method in ("fed_rr", "fed_so"):
        x_star, f_star = reference_solution(fp.pooled, fp.R, tol=cfg.ref_tol)
        return fed_rr(fp, gamma, cfg.budget, rng.child("solver"), "RR" if method == "fed_rr" else "SO",
                      None, x_star, f_star)
    if prob.psi is not None:
        raise ConfigError(f"{method} does not support a regularizer")
    x_star, f_star = reference_solution(fp.f, tol=cfg.ref_tol)
    batch = _get(s, "batch", 1, int)
    if method == "local_sgd":
        return local_sgd(fp, SyncSchedule(H=_get(s, "H", 4, int)), gamma, cfg.budget, batch,
                         rng.child("solver"), None, x_star, f_star, _get(s, "record_every", 1, int))
    if method == "minibatch_sgd":
        return minibatch_sgd(fp, gamma, cfg.budget, batch, rng.child("solver"), None, x_star, f_star)
    raise ConfigError(f"unknown federated method {method!r}")


def _run_adaptive(cfg, prob, rng):
    s = cfg.solver
    f = prob.f
    if prob.kind == "quartic":
        x_star, f_star, x0 = np.zeros(f.dim), 0.0, prob.x0
    else:
        x_star, f_star = reference_solution(f, tol=cfg.ref_tol)
        x0 = np.zeros(f.dim)
    variant = s.get("variant", "adgd")
    L = f.L if variant == "smooth" else None
    return run_adaptive(f, x0, cfg.budget, variant, _get(s, "gamma0", 1e-10), _get(s, "alpha", 0.5),
                        L, s.get("option", "biased"), rng.child("solver"), x_star, f_star)


def _p_value(v):
    if v is None or v == "dense":
        return None
    return np.inf if v in ("inf", float("inf")) else int(v)


def _run_diana(cfg, prob, rng):
    s = cfg.solver
    M = _get(s, "M", 4, int)
    fp = partition(prob.f, M, s.get("mode", "shuffled"), rng.child("partition"))
    x_star, f_star = reference_solution(fp.f, prob.psi, tol=cfg.ref_tol)
    preset = s.get("preset", "diana")
    d = fp.dim
    bs = _get(s, "block_size", d, int)
    blocks = [bs] * (d // bs) + ([d % bs] if d % bs else [])
    batch = _get(s, "batch", None, int)
    common = dict(K=cfg.budget, psi=prob.psi, batch=batch, rng=rng.child("solver"),
                  x_star=x_star, f_star=f_star, record_every=_get(s, "record_every", 1, int))
    gamma_default = 1.0 / fp.f.L
    if preset == "diana":
        p = _p_value(s.get("p", 2))
        alpha, _, gamma = diana_default_params(fp.f.L, max(fp.f.mu, 1e-12), M, p, blocks)
        alpha = _get(s, "alpha", alpha)
        gamma = _get(s, "gamma", gamma)
        return diana_run(fp, p, blocks, alpha, gamma, _get(s, "beta", 0.0), **common)
    if preset in ("terngrad", "qsgd"):
        p = np.inf if preset == "terngrad" else 2
        return terngrad_run(fp, p, blocks, _get(s, "gamma", gamma_default), **common)
    if preset == "dense":
        return diana_run(fp, None, blocks, 0.0, _get(s, "gamma", gamma_default), 0.0, **common)
    raise ConfigError(f"unknown diana preset {preset!r}")


def _run_sdm(cfg, prob, rng):
    s = cfg.solver
    if prob.kind != "linear_system":
        raise ConfigError("sdm runs need a linear_system problem")
    mode = s.get("mode", "linear")
    order = s.get("order")
    if mode == "kaczmarz":
        # Kaczmarz from 0 converges to the least-norm solution
        x_star = np.linalg.lstsq(prob.A, prob.b, rcond=None)[0]
        return sdm_kaczmarz_mode(prob.A, prob.b, np.zeros(prob.f.dim), cfg.budget, rng.child("solver"),
                                 order, keep_iterates=False, x_star=x_star)
    x_star, f_star = _constrained_solution(prob)
    f = prob.f
    est = s.get("estimator", "svrg")
    if "preset" in s:
        gamma = sdm_stepsize_preset(s["preset"], f.mu, f.L, f.n)
    else:
        gamma = _gamma(s, f.L, 0.2)
    if mode == "linear":
        return sdm_linear_run(f, prob.A, prob.b, est, gamma, None, cfg.budget, rng.child("solver"),
                              order=order, x_star=x_star, f_star=f_star)
    if mode == "full":
        terms = [ProxTerm.hyperplane(a, bj) for a, bj in zip(prob.A, prob.b)]
        return sdm_run(f, None, terms, gamma, est, cfg.budget, rng=rng.child("solver"), order=order,
                       x_star=x_star, f_star=f_star)
    raise ConfigError(f"unknown sdm mode {mode!r}")


def _run_splitting(cfg, prob, rng):
    s = cfg.solver
    method = s.get("method", "pd3o")
    f = prob.f
    est = s.get("estimator", "full_gd")
    gamma = _gamma(s, f.L, 1.0)
    if method == "destroy":
        M = _get(s, "M", 4, int)
        fp = partition(f, M, "contiguous")
        x_star, _ = reference_solution(fp.f, tol=cfg.ref_tol)
        f_star = sum(g.value(x_star) for g in fp.shards)
        gamma = _gamma(s, max(g.L for g in fp.shards), 1.0)
        N = M
        graph = s.get("graph", "ring")
        if graph == "ring":
            edges = [(i, (i + 1) % N) for i in range(N)] if N > 2 else [(0, 1)][: N - 1]
        elif graph == "path":
            edges = [(i, i + 1) for i in range(N - 1)]
        elif graph == "complete":
            edges = [(i, j) for i in range(N) for j in range(i + 1, N)]
        else:
            edges = [tuple(e) for e in graph]
        lap_norm = 4.0 if graph != "complete" else float(N)
        tau = _get(s, "tau", _get(s, "tau_frac", 1.0) / (gamma * lap_norm))
        return destroy_run(fp.shards, edges, gamma, tau, cfg.budget, est, rng.child("solver"),
                           None, x_star, f_star)
    if method in ("licosgd", "prilicosgd"):
        if prob.kind != "linear_system":
            raise ConfigError(f"{method} needs a linear_system problem")
        x_star, f_star = _constrained_solution(prob)
        Lnorm = spectral_norm(prob.A)
        tau = _get(s, "tau", _get(s, "tau_frac", 1.0) / (gamma * Lnorm**2))
        if method == "licosgd":
            return licosgd_run(f, prob.A, prob.b, gamma, tau, est, cfg.budget, rng.child("solver"),
                               x_star=x_star, f_star=f_star)
        return prilicosgd_run(f, prob.A.T @ prob.A, prob.A.T @ prob.b, gamma, tau, est, cfg.budget,
                              rng.child("solver"), x_star=x_star, f_star=f_star)
    if prob.H is None:
        raise ConfigError(f"{method} needs a problem with a composite term (fused_lasso)")
    x_star, f_star = composite_reference(f, prob.psi, prob.H, prob.L, tol=cfg.ref_tol)
    Lnorm = spectral_norm(prob.L)
    if method == "condat_vu":
        tau = _get(s, "tau", 1.0 / f.L)
        dual = _get(s, "dual_step", 0.99 * (1 / tau - f.L / 2) / Lnorm**2)
        return condat_vu_run(f, prob.psi, prob.H, prob.L, dual, tau, cfg.budget, s.get("form", "I"),
                             x_star=x_star, f_star=f_star)
    tau = _get(s, "tau", _get(s, "tau_frac", 0.99) / (gamma * Lnorm**2))
    run = {"pddy": pddy_run, "pd3o": pd3o_run}.get(method)
    if run is None:
        raise ConfigError(f"unknown splitting method {method!r}")
    return run(f, prob.psi, prob.H, prob.L, gamma, tau, est, cfg.budget, rng.child("solver"),
               x_star=x_star, f_star=f_star)


_FAMILY = {
    "shuffle": _run_shuffle,
    "federated": _run_federated,
    "adaptive": _run_adaptive,
    "diana": _run_diana,
    "sdm": _run_sdm,
    "splitting": _run_splitting,
}


def run(config, seed=None):
    """Build, solve and return the :class:`~optlab.trace.MetricTrace` of a config.

    ``seed`` overrides ``config.seed``; if both are missing the seed is 0.
    """
    cfg = config if isinstance(config, RunConfig) else RunConfig.from_dict(config)
    seed = cfg.seed if seed is None else seed
    seed = 0 if seed is None else int(seed)
    prob = build_problem(cfg.problem, seed)
    trace = _FAMILY[cfg.family](cfg, prob, RngStream(seed, f"run/{cfg.family}"))
    trace.metadata.update(config=cfg.digest(), version=__version__, seed=seed)
    return trace
