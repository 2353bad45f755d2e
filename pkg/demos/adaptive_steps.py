"""Adaptive gradient descent without a global smoothness constant.

x^4/4 has no global L, yet the step rule grows the step as the curvature
flattens near zero. On a quadratic the step never drops below 1/(2L).

Run: python3 demos/adaptive_steps.py
"""
import numpy as np

from optlab.adaptive import run_adaptive
from optlab.problems import QuadraticObjective, ScalarObjective
from optlab.rng import RngStream


def main():
    quartic = ScalarObjective(lambda x: float(np.sum(x**4)) / 4, lambda x: x**3, 1)
    tr = run_adaptive(quartic, np.array([2.0]), K=200, x_star=np.zeros(1), f_star=0.0)
    gam, gap = tr.extra("gamma"), tr.column("f_gap")
    print("x^4/4 from x0 = 2")
    for k in (1, 5, 10, 20, 50, 200):
        print(f"  step {k:3d}  gamma {gam[k]:.3e}  f {gap[k]:.3e}")

    rng = RngStream(1, "demo/adgd")
    Q = rng.normal((8, 8))
    f = QuadraticObjective((Q @ Q.T + 0.1 * np.eye(8))[None], rng.normal((1, 8)))
    for variant in ("adgd", "accel"):
        tq = run_adaptive(f, np.ones(8), K=500, variant=variant, x_star=f.minimizer())
        print(f"\n{variant}: ||x - x*||^2 after 500 steps {tq.column('dist_sq')[-1]:.2e}")
        if variant == "adgd":
            print(f"  min gamma * 2L over steps >= 2: {np.min(tq.extra('gamma')[2:]) * 2 * f.L:.3f}")


if __name__ == "__main__":
    main()
