"""Constant-step RR and SGD settle in neighbourhoods of different size.

Halving the step shrinks SGD's plateau about twofold. RR's plateau
shrinks faster, close to fourfold once its drift term dominates. The
second half runs ProxRR on an l1-regularised logistic regression, where
the prox is applied once per epoch and a smaller step buys a
smaller final gap.

Run: python3 demos/shuffling_neighbourhoods.py
"""
import numpy as np

from optlab.problems import QuadraticObjective, make_logistic, reference_solution, synthetic_classification
from optlab.prox import ProxTerm
from optlab.rng import RngStream
from optlab.shuffle import PermutationSchedule, StepsizeSchedule, run_prox_rr, run_shuffled


def plateau(f, xs, kind, gamma, seeds=10, T=200):
    vals = []
    for s in range(seeds):
        tr = run_shuffled(f, PermutationSchedule(kind, f.n, RngStream(s, "demo")),
                          StepsizeSchedule.constant(gamma), T, xs, x_star=xs)
        vals.append(tr.column("dist_sq")[-50:].mean())
    return np.mean(vals)


def main():
    # a few stiff components whose centres disagree with the rest
    rng = RngStream(0, "demo/quad")
    D = np.logspace(0, np.log10(50), 10)
    s = np.full(50, 0.1)
    s[:5] = 9.1
    C = 0.05 * rng.normal((50, 10)) + (s > 1)[:, None] * (D == D.max())
    f = QuadraticObjective(s[:, None, None] * np.diag(D)[None], C)
    xs = f.minimizer()
    g = 0.05 / f.L_i.max()
    print("plateau of ||x - x*||^2 after 200 epochs")
    for kind in ("RR", "SGD"):
        a, b = plateau(f, xs, kind, g), plateau(f, xs, kind, g / 2)
        print(f"  {kind:4s} gamma: {a:.3e}   gamma/2: {b:.3e}   ratio {a / b:.2f}")

    f = make_logistic(synthetic_classification(100, 8, 1), 0.01)
    psi = ProxTerm.l1(0.1)
    xs, fs = reference_solution(f, psi)
    print("\nProxRR on l1 logistic regression, one prox per epoch")
    print(f"  solution has {np.count_nonzero(np.abs(xs) > 1e-10)} nonzeros out of {len(xs)}")
    for c in (0.1, 0.02):
        tr = run_prox_rr(f, psi, PermutationSchedule("RR", f.n, 2), StepsizeSchedule.constant(c / f.L_i.max()),
                         300, np.zeros(8), x_star=xs, f_star=fs)
        gap = tr.column("f_gap")
        print(f"  gamma = {c}/L_max: gap after 10 epochs {gap[10]:.2e}, after 300 {gap[-1]:.2e}, "
              f"proxes {int(tr.column('proxes')[-1])}")

if __name__ == "__main__":
    main()
