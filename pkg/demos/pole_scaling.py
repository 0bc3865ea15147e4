"""Principal cluster pole versus bubble size.

Tracks the in-phase pole of a two-bubble cluster as eps shrinks and
compares the red shift and the radiative damping with their leading-order
laws. Run: python3 demos/pole_scaling.py
"""

import numpy as np

from minnaert_control.bubbles import build_ensemble
from minnaert_control.transfer import SMatrixEvaluator, asymptotic_pole, principal_pole

C0, WM, CAP = 5.0, 5.0, 0.05


def main():
    eps = np.array([5e-3, 1e-2, 2e-2, 4e-2])
    print(f"{'eps':>8} {'shift':>11} {'predicted':>11} {'eta':>11} {'predicted':>11}")
    shift, eta = [], []
    for e in eps:
        ens = build_ensemble([[0, 0, 0]], 2, "equidistant", 1.0, WM, CAP, e, 0.5)
        p = principal_pole(SMatrixEvaluator(ens, C0), 0)
        ap = asymptotic_pole(ens, 0, C0)
        shift.append(WM - p.omega)
        eta.append(p.eta)
        print(f"{e:8.3g} {shift[-1]:11.4e} {ap.shift:11.4e} {p.eta:11.4e} {ap.eta:11.4e}")
    print("shift slope   %.3f (expected 0.5)" % np.polyfit(np.log(eps), np.log(shift), 1)[0])
    print("damping slope %.3f (expected 1.0)" % np.polyfit(np.log(eps), np.log(eta), 1)[0])


if __name__ == "__main__":
    main()
