"""Why the controls are placed on the Minnaert bands.

Off resonance the bubble gain is O(eps), so the transducer effort needed
for a fixed cluster source grows like 1/eps. Near the principal pole the
gain is O(1) and stays put. Run: python3 demos/resonant_contrast.py
"""

import numpy as np

from minnaert_control.bubbles import TransducerArray, build_ensemble
from minnaert_control.realization import BandFilter, control_cost, project_to_band_space, synthesize_controls
from minnaert_control.signals import Signal
from minnaert_control.spectral import SpectralBand
from minnaert_control.transfer import SMatrixEvaluator, gain_sweep, principal_pole

C0, WM, CAP = 5.0, 5.0, 0.05


def main():
    arr = TransducerArray([[3.0, 0.2, 0.1], [-2.0, 2.5, 0.4]])
    dt = 0.02
    t = dt * np.arange(4001)
    off = (7.5, 8.5)
    q = Signal(0.0, dt, (np.exp(-(((t - 40) / 6) ** 2)) * np.sin(8 * t))[:, None])
    src = project_to_band_space(q, [0], BandFilter([off], 0.5))
    print(f"{'eps':>8} {'|Hb| off':>11} {'cost off':>11} {'|Hb| peak':>11}")
    for e in (4e-2, 2e-2, 1e-2, 5e-3):
        ev = SMatrixEvaluator(build_ensemble([[0, 0, 0]], 2, "equidistant", 1.0, WM, CAP, e, 0.5), C0, arr)
        hb = max(g.norm_hb for g in gain_sweep(ev, SpectralBand([off]), 64))
        p = principal_pole(ev, 0)
        peak = max(g.norm_hb for g in gain_sweep(ev, SpectralBand([(p.omega - 3 * p.eta, p.omega + 3 * p.eta)]), 257))
        print(f"{e:8.3g} {hb:11.4e} {control_cost(synthesize_controls(src, ev)):11.4e} {peak:11.4e}")


if __name__ == "__main__":
    main()
