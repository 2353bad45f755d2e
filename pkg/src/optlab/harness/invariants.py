"""Fast numerical invariants behind ``optlab check invariants``.

Each check returns ``(ok, detail)``; the whole list runs in well under a
minute so it can be used as a post-install smoke test.
"""
import itertools

import numpy as np

from ..federated import SyncSchedule, local_sgd, minibatch_sgd, partition
from ..problems import (
    QuadraticObjective,
    gaussian_system,
    make_least_squares,
    make_linear_components,
    make_logistic,
    sigma_star,
    synthetic_classification,
)
from ..prox import ProxTerm
from ..quantize import alpha_p, diana_default_params, expected_nnz, psi, quant_block_samples
from ..rng import RngStream
from ..shuffle import (
    PermutationSchedule,
    StepsizeSchedule,
    importance_resample,
    run_prox_rr,
    shuffling_variance,
    wor_stats,
)
from ..splitting import (
    GradEstimator,
    fused_lasso_D,
    fused_lasso_spectrum,
    licosgd_run,
    pd3o_run,
    pddy_matching_init,
    pddy_run,
    randomized_kaczmarz,
    sdm_kaczmarz_mode,
)
from ..prox import soft_threshold
from .traceio import csv_to_trace, strip_wall, trace_to_csv


def _quantization():
    rng = RngStream(11, "inv/quant")
    delta = rng.normal(8)
    worst = 0.0
    for p in (1, 2, np.inf):
        X, nnz = quant_block_samples(delta, p, [4, 4], rng.child(str(p)), 20000)
        se = X.std(axis=0) / np.sqrt(len(X)) + 1e-12 * np.abs(delta)
        worst = max(worst, float(np.max(np.abs(X.mean(axis=0) - delta) / se)))
        var = np.mean(np.sum((X - delta) ** 2, axis=1))
        if abs(var / psi(delta, p, [4, 4]) - 1) > 0.05:
            return False, f"variance mismatch at p={p}"
    nnz_ok = abs(quant_block_samples(delta, 2, None, rng, 20000)[1].mean() / expected_nnz(delta, 2) - 1) < 0.05
    return worst < 5 and nnz_ok, f"max z-score {worst:.2f}"


def _alpha_p():
    rng = RngStream(12, "inv/alpha")
    worst = np.inf
    for d in (2, 4, 16):
        X = rng.normal((2000, d))
        for p in (1, 2, np.inf):
            r = np.sum(X**2, 1) / (np.abs(X).sum(1) * np.linalg.norm(X, ord=p, axis=1))
            worst = min(worst, float(np.min(r - alpha_p(p, d))))
    return worst >= -1e-9, f"min slack {worst:.3e}"


def _wor():
    X = RngStream(13, "inv/wor").normal((5, 2))
    err = 0.0
    for m in range(1, 6):
        means = np.array([X[list(c)].mean(0) for c in itertools.combinations(range(5), m)])
        var = np.mean(np.sum((means - X.mean(0)) ** 2, 1))
        err = max(err, abs(var - wor_stats(X, m)[1]))
    return err < 1e-12, f"max error {err:.1e}"


def _prox_firm():
    rng = RngStream(14, "inv/prox")
    terms = [ProxTerm.l1(0.7), ProxTerm.elastic(0.3, 0.5), ProxTerm.group_l2([[0, 1], [2, 3]], 0.4),
             ProxTerm.hinge(rng.normal(4), 1.0), ProxTerm.slab(rng.normal(4), -0.5, 0.5)]
    for t in terms:
        for _ in range(200):
            x, y, g = rng.normal(4), rng.normal(4), 0.1 + 2 * rng.uniform()
            px, py = t.prox(g, x), t.prox(g, y)
            if np.sum((px - py) ** 2) > (px - py) @ (x - y) + 1e-10:
                return False, f"{t.kind} not firmly nonexpansive"
    return True, f"{len(terms)} terms x 200 pairs"


def _shuffling_bounds():
    rng = RngStream(15, "inv/shuffle")
    n, d = 4, 3
    H = np.array([np.diag(1 + 4 * rng.uniform(d)) for _ in range(n)])
    f = QuadraticObjective(H, rng.normal((n, d)))
    xs = f.minimizer()
    s2 = sigma_star(f, xs)
    for gamma in (1 / f.L, 0.1 / f.L):
        v = shuffling_variance(f, xs, gamma)
        lo, hi = gamma * f.mu * n / 8 * s2, gamma * f.L * n / 4 * s2
        if not lo - 1e-9 <= v <= hi + 1e-9:
            return False, f"bound violated at gamma={gamma:g}"
    return True, "both stepsizes"


def _importance():
    rng = RngStream(16, "inv/importance")
    ds = synthetic_classification(30, 4, rng)
    A = ds.to_dense() * (1 + 5 * rng.uniform(30))[:, None]
    f = make_logistic((A, ds.labels), 0.01)
    g = importance_resample(f)
    x = rng.normal(4)
    ok = abs(f.value(x) - g.value(x)) < 1e-12 and g.n <= 2 * f.n and g.L_i.max() <= f.L_i.mean() * (1 + 1e-12)
    return ok, f"n {f.n} -> {g.n}"


def _prox_rr_example():
    # one epoch on linear components equals a prox-gradient step of size n*gamma
    rng = RngStream(17, "inv/proxrr")
    f = make_linear_components(rng.normal((2, 3)))
    psi_, gamma, x0 = ProxTerm.sqnorm(1.0), 0.3, rng.normal(3)
    target = psi_.prox(2 * gamma, x0 - 2 * gamma * f.grad(x0))
    perm = PermutationSchedule("RR", 2, RngStream(1, "p"))
    tr = run_prox_rr(f, psi_, perm, StepsizeSchedule.constant(gamma), 1, x0, target)
    err = float(np.sqrt(tr.column("dist_sq")[-1]))
    return err < 1e-14, f"deviation {err:.1e}"


def _diana_params():
    worst = -np.inf
    for p, d, M in itertools.product((1, 2, np.inf), (4, 16), (1, 4)):
        alpha, c, _ = diana_default_params(10.0, 0.1, M, p, [d])
        worst = max(worst, (1 + M * c * alpha**2) / (1 + M * c * alpha) - alpha_p(p, d))
    return worst <= 1e-12, f"max excess {worst:.1e}"


def _kaczmarz():
    W, b, _ = gaussian_system(10, RngStream(18, "inv/kacz"))
    t1 = sdm_kaczmarz_mode(W, b, np.zeros(10), 50, rng=3)
    t2 = randomized_kaczmarz(W, b, np.zeros(10), 50, rng=3)
    err = max(float(np.max(np.abs(a - c))) for a, c in zip(t1.iterates, t2.iterates))
    return err < 1e-12, f"max deviation {err:.1e}"


def _pd_coherence():
    rng = RngStream(19, "inv/pd")
    f = make_least_squares(rng.normal((20, 6)), rng.normal(20), 0.1)
    L = rng.normal((3, 6))
    b = L @ rng.normal(6)
    g = 1 / f.L
    tau = 0.9 / (g * np.linalg.norm(L, 2) ** 2)
    t0 = licosgd_run(f, L, b, g, tau, K=100, keep_iterates=True)
    t1 = pd3o_run(f, None, ProxTerm.point(b), L, g, tau, K=100, keep_iterates=True)
    p0, y0 = pddy_matching_init(L, b, g, tau, np.zeros(6))
    t2 = pddy_run(f, None, ProxTerm.point(b), L, g, tau, K=100, p0=p0, y0=y0, keep_iterates=True)
    err = max(float(np.max(np.abs(a - c))) for t in (t1, t2) for a, c in zip(t0.iterates, t.iterates))
    return err < 1e-12, f"max deviation {err:.1e}"


def _fused_spectrum():
    err = 0.0
    for d in (4, 10, 50):
        D = fused_lasso_D(d)
        err = max(err, float(np.max(np.abs(np.linalg.eigvalsh(D @ D.T) - fused_lasso_spectrum(d)))))
    return err < 1e-9, f"max error {err:.1e}"


def _local_sgd_h1():
    ds = synthetic_classification(40, 5, RngStream(20, "inv/local"))
    fp = partition(ds, 4, "shuffled", RngStream(20, "part"), lambda2=0.1)
    a = local_sgd(fp, SyncSchedule(H=1), 0.1, 30, rng=5)
    b = minibatch_sgd(fp, 0.1, 30, rng=5)
    return bool(np.array_equal(a.x, b.x)) and a.same_metrics(b), "bitwise"


def _saga_table():
    f = make_least_squares(RngStream(21, "inv/saga").normal((15, 4)), np.ones(15), 0.1)
    est = GradEstimator.saga(f, rng=1)
    x = np.zeros(4)
    for _ in range(50):
        x = x - 0.05 * est.next(x)
    err = float(np.max(np.abs(est.table.mean(0) - est.table_avg)))
    return err < 1e-12, f"table drift {err:.1e}"


def _soft_threshold():
    x = np.array([-2.0, -1.0, 0.0, 0.5, 3.0])
    return bool(np.array_equal(soft_threshold(x, 1.0), np.array([-1.0, 0.0, 0.0, 0.0, 2.0]))), "exact"


def _determinism():
    from .cli import bundled_configs
    from .runner import run

    for name, cfg in bundled_configs().items():
        a, b = trace_to_csv(run(cfg)), trace_to_csv(run(cfg))
        if strip_wall(a) != strip_wall(b):
            return False, f"{name} differs between runs"
        if trace_to_csv(csv_to_trace(a)) != a:
            return False, f"{name} CSV does not round-trip"
    return True, "bundled configs"


CHECKS = [
    ("quantization moments", _quantization),
    ("alpha_p lower bound", _alpha_p),
    ("without-replacement variance", _wor),
    ("prox firm nonexpansiveness", _prox_firm),
    ("soft threshold", _soft_threshold),
    ("shuffling variance bounds", _shuffling_bounds),
    ("importance resampling", _importance),
    ("prox-RR fixed point", _prox_rr_example),
    ("DIANA default parameters", _diana_params),
    ("Kaczmarz reduction", _kaczmarz),
    ("PDDY/PD3O/LiCoSGD coherence", _pd_coherence),
    ("fused-lasso spectrum", _fused_spectrum),
    ("Local SGD H=1 is minibatch SGD", _local_sgd_h1),
    ("SAGA running average", _saga_table),
    ("harness determinism", _determinism),
]


def run_invariants():
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as err:  # report, do not abort the remaining checks
            ok, detail = False, f"{type(err).__name__}: {err}"
        out.append((name, bool(ok), detail))
    return out
