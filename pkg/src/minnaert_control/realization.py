"""Band-limited control synthesis through the bubble clusters.

Targets are projected onto per-cluster frequency bands by an FFT multiplier
with a flat top and a raised-cosine taper; transducer signals are synthesised
bin by bin with the pseudoinverse of ``H_ext(i w)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ideal import ReferenceTrajectory
from .signals import Signal, fft_frequencies, spectral_derivative, trapezoid_l2, write_csv
from .spectral import ModeSet
from .transfer import SMatrixEvaluator

log = logging.getLogger(__name__)

PAD_FACTOR = 4


class IllConditionedBand(np.linalg.LinAlgError):
    def __init__(self, omega, sigma_min, tol):
        super().__init__(f"sigma_min(H_ext(i*{omega:.6g})) = {sigma_min:.3e} below {tol:.3e}")
        self.omega = omega
        self.sigma_min = sigma_min


@dataclass(frozen=True)
class BandFilter:
    """Flat on each interval, raised-cosine down to zero over ``width`` on both sides."""

    intervals: tuple
    width: float

    def __post_init__(self):
        iv = tuple(sorted((float(lo), float(hi)) for lo, hi in self.intervals))
        if not self.width > 0:
            raise ValueError("taper width must be positive")
        for (lo, hi) in iv:
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
        for (_, h0), (l1, _) in zip(iv, iv[1:]):
            if not h0 + self.width < l1 - self.width:
                raise ValueError("widened intervals overlap")
        object.__setattr__(self, "intervals", iv)

    def chi(self, omega) -> np.ndarray:
        """Cutoff profile, even in omega."""
        w = np.abs(np.asarray(omega, dtype=float))
        out = np.zeros_like(w)
        for lo, hi in self.intervals:
            d = np.maximum(lo - w, w - hi)  # <= 0 inside
            val = np.where(d <= 0, 1.0, np.where(d < self.width, 0.5 * (1 + np.cos(np.pi * d / self.width)), 0.0))
            out = np.maximum(out, val)
        return out

    def sub(self, j: int) -> "BandFilter":
        return BandFilter((self.intervals[j],), self.width)

    @property
    def support(self):
        return tuple((lo - self.width, hi + self.width) for lo, hi in self.intervals)


def bandpass(signal: Signal, filt: BandFilter, pad_factor: int = PAD_FACTOR) -> Signal:
    """Zero-extend, multiply the transform by chi, transform back, restrict."""
    n = signal.n_samples
    n_fft = (pad_factor + 1) * n
    spec = np.fft.fft(signal.values, n=n_fft, axis=0)
    spec *= filt.chi(fft_frequencies(n_fft, signal.dt))[:, None]
    out = np.fft.ifft(spec, axis=0)[:n]
    return signal.with_values(out.real if np.isrealobj(signal.values) else out)


# -- reference trajectories ---------------------------------------------------

def smoothstep(x):
    """C^3 ramp 35x^4 - 84x^5 + 70x^6 - 20x^7 on [0, 1] and its first three derivatives."""
    x = np.clip(x, 0.0, 1.0)
    s = x**4 * (35 - 84 * x + 70 * x**2 - 20 * x**3)
    s1 = 140 * x**3 * (1 - x) ** 3
    s2 = 420 * x**2 * (1 - x) ** 2 * (1 - 2 * x)
    s3 = 840 * x * (1 - x) * (1 - 5 * x + 5 * x**2)
    return s, s1, s2, s3


def envelope(t, ramp):
    """Onset envelope rising from 0 to 1 over ``[0, ramp]`` (C^3 at both ends)."""
    s, s1, s2, s3 = smoothstep(np.asarray(t, dtype=float) / ramp)
    return s, s1 / ramp, s2 / ramp**2, s3 / ramp**3


def reference_trajectory_gen(modes: ModeSet, amplitudes, ramp: float, T: float, dt: float,
                             t0: float = 0.0, delay: float = 0.0) -> ReferenceTrajectory:
    """p_k(t) = a_k s(t - delay) sin(w_k t) with closed-form derivatives.

    The envelope ``s`` rises over ``[delay, delay + ramp]``; a positive
    ``delay`` keeps a quiet lead-in so band filters see no start-up edge.
    """
    if not 0 < ramp < T - delay or delay < 0:
        raise ValueError("need 0 <= delay and 0 < ramp < T - delay")
    a = np.broadcast_to(np.asarray(amplitudes, dtype=float), (len(modes),))
    n = int(round((T - t0) / dt)) + 1
    t = t0 + dt * np.arange(n)
    s, s1, s2, s3 = (x[:, None] for x in envelope(np.maximum(t - delay, 0.0), ramp))
    w = modes.omegas[None, :]
    tt = t[:, None]
    sn, cs = np.sin(w * tt), np.cos(w * tt)
    p = a * s * sn
    dp = a * (s1 * sn + w * s * cs)
    ddp = a * (s2 * sn + 2 * w * s1 * cs - w**2 * s * sn)
    dddp = a * (s3 * sn + 3 * w * s2 * cs - 3 * w**2 * s1 * sn - w**3 * s * cs)
    mk = lambda v: Signal(t0, dt, v)
    return ReferenceTrajectory(mk(p), mk(dp), mk(ddp), mk(dddp))


# -- band-limited sources -----------------------------------------------------

@dataclass(frozen=True)
class BandLimitedSource:
    q: Signal
    assignment: tuple
    discarded_fraction: np.ndarray
    filter: BandFilter
    leakage: np.ndarray = field(default_factory=lambda: np.zeros(0))


def band_leakage(q: Signal, assignment, filt: BandFilter, pad_factor: int = PAD_FACTOR) -> np.ndarray:
    """Per-channel spectral energy fraction outside the assigned widened band."""
    n_fft = (pad_factor + 1) * q.n_samples
    spec = np.abs(np.fft.fft(q.values, n=n_fft, axis=0)) ** 2
    w = np.abs(fft_frequencies(n_fft, q.dt))
    out = np.zeros(q.n_channels)
    for c, j in enumerate(assignment):
        lo, hi = filt.support[j]
        tot = spec[:, c].sum()
        out[c] = spec[(w < lo) | (w > hi), c].sum() / tot if tot > 0 else 0.0
    return out


def project_to_band_space(q: Signal, assignment, filt: BandFilter) -> BandLimitedSource:
    """Filter channel ``alpha`` by the band ``assignment[alpha]`` of ``filt``."""
    assignment = tuple(int(a) for a in assignment)
    if len(assignment) != q.n_channels:
        raise ValueError("one band per channel required")
    out = np.zeros_like(q.values)
    lost = np.zeros(q.n_channels)
    for c, j in enumerate(assignment):
        ch = q.with_values(q.values[:, c])
        fc = bandpass(ch, filt.sub(j)).values[:, 0]
        out[:, c] = fc
        e = trapezoid_l2(q.values[:, c], q.dt)
        lost[c] = (trapezoid_l2(q.values[:, c] - fc, q.dt) / e) ** 2 if e > 0 else 0.0
    res = q.with_values(out)
    return BandLimitedSource(res, assignment, lost, filt, band_leakage(res, assignment, filt))


# -- synthesis ----------------------------------------------------------------

@dataclass(frozen=True)
class RealizedControl:
    lam: Signal
    dlam: Signal
    ddlam: Signal
    sigma_min: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bin_omegas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    identity_defect: float = 0.0
    imag_residue: float = 0.0
    onset_ramp: float = 0.0


def onset_ramp_length(T: float, omega_min: float) -> float:
    return min(0.1 * T, 2 * np.pi * 4 / omega_min)


def synthesize_controls(target: BandLimitedSource, ev: SMatrixEvaluator, filt: BandFilter | None = None,
                        t_start: float | None = None, sigma_tol: float = 0.0, onset: float | None = None,
                        pad_factor: int = PAD_FACTOR) -> RealizedControl:
    """Per-bin least-norm transducer spectra ``H_ext(i w)^+ q(w) chi(w)``.

    The synthesis window starts at ``t_start`` (default: the target's start) so
    transducer clocks may lead the cluster clock. A C^3 onset envelope over
    ``onset`` seconds pins lambda(t_start) = lambda'(t_start) = 0; derivatives
    are spectral and combined with the envelope by the product rule.
    """
    filt = target.filter if filt is None else filt
    q = target.q
    dt = q.dt
    t0 = q.t0 if t_start is None else t_start
    lead = int(round((q.t0 - t0) / dt))
    if lead < 0:
        raise ValueError("t_start after the target start")
    vals = np.vstack([np.zeros((lead, q.n_channels)), q.values])
    n = vals.shape[0]
    n_fft = (pad_factor + 1) * n
    qhat = np.fft.fft(vals, n=n_fft, axis=0)
    w = fft_frequencies(n_fft, dt)
    chi = filt.chi(w)
    m_tr = ev.array.count
    lam_hat = np.zeros((n_fft, m_tr), dtype=complex)
    used = np.flatnonzero((w > 0) & (chi > 0))
    smins = np.zeros(used.size)
    defect = 0.0
    for k, b in enumerate(used):
        H = ev.Hext(1j * w[b])
        U, sv, Vh = np.linalg.svd(H, full_matrices=False)
        smins[k] = sv[-1]
        if sv[-1] < sigma_tol or sv[-1] <= 1e-10 * sv[0]:
            raise IllConditionedBand(w[b], sv[-1], max(sigma_tol, 1e-10 * sv[0]))
        Hp = (Vh.conj().T / sv) @ U.conj().T
        defect = max(defect, float(np.max(np.abs(H @ Hp - np.eye(H.shape[0])))))
        lam_hat[b] = Hp @ (qhat[b] * chi[b])
        # Hermitian partner keeps lambda real
        lam_hat[(n_fft - b) % n_fft] = np.conj(lam_hat[b])
    raw = np.fft.ifft(lam_hat, axis=0)
    d1 = np.fft.ifft(lam_hat * (1j * w)[:, None], axis=0)
    d2 = np.fft.ifft(lam_hat * (-(w**2))[:, None], axis=0)
    norm = np.linalg.norm(raw)
    imag = float(np.linalg.norm(raw.imag) / norm) if norm > 0 else 0.0
    lam, lam1, lam2 = raw.real[:n], d1.real[:n], d2.real[:n]
    if onset is None:
        wmin = min(lo for lo, _ in filt.intervals)
        onset = onset_ramp_length(q.t_end - q.t0, wmin)
    t = dt * np.arange(n)
    r, r1, r2, _ = (x[:, None] for x in envelope(t, onset))
    mk = lambda v: Signal(t0, dt, v)
    return RealizedControl(
        mk(r * lam), mk(r1 * lam + r * lam1), mk(r2 * lam + 2 * r1 * lam1 + r * lam2),
        smins, w[used], defect, imag, onset,
    )


def realization_error(Q: Signal, target: BandLimitedSource | Signal) -> float:
    """Relative discrete H1(0,T) distance (trapezoidal L2 plus spectral derivative)."""
    q = target.q if isinstance(target, BandLimitedSource) else target
    Q.require_same_grid(q)
    nq = h1_norm(q)
    if nq == 0:
        raise ValueError("zero target")
    return h1_norm(Q - q) / nq


def h1_norm(sig: Signal) -> float:
    d = spectral_derivative(sig.values, sig.dt, order=1)
    return float(np.sqrt(trapezoid_l2(sig.values, sig.dt) ** 2 + trapezoid_l2(d, sig.dt) ** 2))


def control_cost(ctrl: RealizedControl) -> float:
    """sqrt(|lam|^2 + |lam'|^2 + |lam''|^2), trapezoidal L2 norms."""
    dt = ctrl.lam.dt
    return float(np.sqrt(sum(trapezoid_l2(s.values, dt) ** 2 for s in (ctrl.lam, ctrl.dlam, ctrl.ddlam))))


def write_control(ctrl: RealizedControl, filt: BandFilter, path) -> tuple[Path, Path]:
    """CSV of lambda plus a JSON sidecar with band edges, taper width and sigma_min statistics."""
    path = Path(path)
    write_csv(ctrl.lam, path)
    sm = ctrl.sigma_min
    side = {
        "band_edges": [list(iv) for iv in filt.intervals],
        "taper_width": filt.width,
        "onset_ramp": ctrl.onset_ramp,
        "n_bins": int(sm.size),
        "sigma_min": {
            "min": float(sm.min()) if sm.size else None,
            "median": float(np.median(sm)) if sm.size else None,
            "max": float(sm.max()) if sm.size else None,
        },
        "identity_defect": ctrl.identity_defect,
        "imag_residue": ctrl.imag_residue,
    }
    side_path = path.with_suffix(".json")
    side_path.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path, side_path
