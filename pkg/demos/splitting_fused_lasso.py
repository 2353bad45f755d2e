"""Primal-dual splitting on a fused-lasso regression, then Kaczmarz as SDM.

PDDY, PD3O and Condat-Vu handle the total-variation term through its
dual. All three reach the same objective. The second half shows SDM with
one hyperplane term per row and no smooth part, which is randomized
Kaczmarz step for step.

Run: python3 demos/splitting_fused_lasso.py
"""
import numpy as np

from optlab.problems import gaussian_system, make_least_squares
from optlab.prox import ProxTerm
from optlab.rng import RngStream
from optlab.splitting import (
    composite_reference,
    condat_vu_run,
    fused_lasso_D,
    pd3o_run,
    pddy_run,
    randomized_kaczmarz,
    sdm_kaczmarz_mode,
)


def main():
    rng = RngStream(4, "demo/fused")
    d = 30
    truth = np.repeat(rng.normal(3), 10)
    A = rng.normal((60, d))
    f = make_least_squares(A, A @ truth + 0.1 * rng.normal(60), 0.01)
    psi, H, D = ProxTerm.l1(0.02), ProxTerm.l1(0.1), fused_lasso_D(d)
    _, v_ref = composite_reference(f, psi, H, D)
    g = 1 / f.L
    runs = {
        "PDDY": pddy_run(f, psi, H, D, g, 0.99 / (4 * g), K=5000),
        "PD3O": pd3o_run(f, psi, H, D, g, 1 / (4 * g), K=5000),
        "Condat-Vu": condat_vu_run(f, psi, H, D, 0.25, 0.99 / (f.L / 2 + 1), K=5000),
    }
    print(f"reference objective {v_ref:.10f}")
    for name, tr in runs.items():
        x = tr.x
        val = f.value(x) + psi.value(x) + H.value(D @ x)
        print(f"  {name:10s} gap {val - v_ref:.2e}  jumps {np.sum(np.abs(D @ x) > 1e-6)}")

    W, b, xs = gaussian_system(20, RngStream(5, "demo/kz"))
    a = sdm_kaczmarz_mode(W, b, np.zeros(20), 6000, rng=3)
    c = randomized_kaczmarz(W, b, np.zeros(20), 6000, rng=3)
    print(f"\nKaczmarz vs SDM: max iterate gap {max(np.abs(u - v).max() for u, v in zip(a.iterates, c.iterates)):.1e}")
    print(f"  residual after 6000 projections {np.linalg.norm(W @ c.x - b):.2e}")


if __name__ == "__main__":
    main()
