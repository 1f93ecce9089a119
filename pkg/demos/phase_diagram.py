"""Print the convergence regimes of Z_λ for binary BBM on a (λ, p) grid.

Run: python demos/phase_diagram.py
"""
import numpy as np

from spinelab import bbm
from spinelab.offspring import finite

SYMBOLS = {"AS_ZERO": "0", "L1_CONVERGENT": "1", "LP_CONVERGENT": "p", "LP_UNBOUNDED": "x",
           "BOUNDARY_UNDETERMINED": "?"}


def main():
    params = bbm.BbmParams(1.0, finite(0, 1))
    lams = np.round(np.linspace(-2.0, -0.1, 20), 3)
    ps = [1.2, 1.4, 1.6, 1.8, 2.0]
    print("λ̃ =", bbm.bbm_spectral(params, -1.0).lambda_tilde)
    print("legend: 0 a.s. zero, 1 L¹ only, p Lᵖ-convergent, x Lᵖ-unbounded, ? boundary")
    print("   λ     L¹  " + "  ".join(f"p={p}" for p in ps))
    for lam in lams:
        l1 = SYMBOLS[bbm.classify_bbm(params, lam).tag.value]
        row = [SYMBOLS[bbm.classify_bbm(params, lam, p).tag.value] for p in ps]
        print(f"{lam:7.3f}   {l1}   " + "      ".join(row))


if __name__ == "__main__":
    main()
