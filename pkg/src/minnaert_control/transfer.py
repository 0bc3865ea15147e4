"""Laplace-domain analysis of the bubble cluster system.

The pencil ``P(s) = D(s) + s^2 Q(s)`` collects the delayed amplitude system;
``H_b(s) = A_b P(s)^-1 s^2`` maps incident-trace transforms to source
amplitudes and ``H_ext = B_out H_b G_tr`` maps transducer signals to cluster
strengths. Poles, residues and gains are all computed from these matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bubbles import BubbleEnsemble, TransducerArray, output_map


class NoConvergence(RuntimeError):
    pass


class ContourTooClose(RuntimeError):
    pass


class NotSimple(RuntimeError):
    pass


class SMatrixEvaluator:
    """Pure maps ``s -> matrix`` for one ensemble (and optionally one transducer array)."""

    def __init__(self, ens: BubbleEnsemble, c0: float, array: TransducerArray | None = None):
        self.ens = ens
        self.c0 = float(c0)
        self.array = array
        d = ens.distances()
        self._d = d
        self._tau = d / self.c0
        off = ~np.eye(ens.M, dtype=bool)
        self._qcoef = np.zeros_like(d)
        self._qcoef[off] = (ens.eps * ens.cap_tilde[None, :] / (4 * np.pi * np.where(off, d, 1.0)))[off]
        self._inv_w2 = 1.0 / ens.omega_m**2
        self.A_b = -np.diag(ens.capacitance)
        self.B_out = output_map(ens)
        if array is not None:
            self._r_tr, self._delay_tr = array.effective_delays(ens.centers, self.c0)

    @property
    def M(self) -> int:
        return self.ens.M

    def D(self, s) -> np.ndarray:
        return np.diag(self._inv_w2 * s**2 + 1.0)

    def Q(self, s) -> np.ndarray:
        return self._qcoef * np.exp(-s * self._tau)

    def pencil(self, s) -> np.ndarray:
        return self.D(s) + s**2 * self.Q(s)

    def pencil_derivative(self, s) -> np.ndarray:
        Qs = self.Q(s)
        return np.diag(2 * s * self._inv_w2) + 2 * s * Qs - s**2 * self._tau * Qs

    def det(self, s) -> complex:
        return complex(np.linalg.det(self.pencil(s)))

    def log_det_derivative(self, s) -> complex:
        """f'/f for f = det P, via tr(P^-1 P')."""
        return complex(np.trace(np.linalg.solve(self.pencil(s), self.pencil_derivative(s))))

    def Hb(self, s) -> np.ndarray:
        return self.A_b @ np.linalg.solve(self.pencil(s), np.eye(self.M, dtype=complex)) * s**2

    def Gtr(self, s) -> np.ndarray:
        if self.array is None:
            raise ValueError("no transducer array attached")
        return self.array.rho_c * np.exp(-s * self._delay_tr) / (4 * np.pi * self._r_tr)

    def Gtr_cluster(self, s) -> np.ndarray:
        """Cluster-level trace matrix (bubbles collapsed onto their cluster centres)."""
        return cluster_trace_matrix(self.array, self.ens.cluster_centers, self.c0, s)

    def Hext(self, s) -> np.ndarray:
        return self.B_out @ self.Hb(s) @ self.Gtr(s)


def cluster_trace_matrix(array: TransducerArray, centers, c0: float, s) -> np.ndarray:
    r, delay = array.effective_delays(np.atleast_2d(centers), c0)
    return array.rho_c * np.exp(-s * delay) / (4 * np.pi * r)


def eval_pencil(ens: BubbleEnsemble, c0: float, s) -> np.ndarray:
    return SMatrixEvaluator(ens, c0).pencil(s)


@dataclass(frozen=True)
class PoleRecord:
    s: complex
    cluster: int
    residue_norm: float
    newton_residual: float

    @property
    def eta(self) -> float:
        return -self.s.real

    @property
    def omega(self) -> float:
        return self.s.imag


def find_pole(ev: SMatrixEvaluator, guess: complex, tol: float = 1e-12, max_iter: int = 100,
              cluster: int = -1) -> PoleRecord:
    """Newton on det P(s) with a central-difference derivative."""
    s = complex(guess)
    for _ in range(max_iter):
        f = ev.det(s)
        h = 1e-6 * max(abs(s), 1.0)
        df = (ev.det(s + h) - ev.det(s - h)) / (2 * h)
        if df == 0:
            raise NoConvergence(f"zero derivative at s={s}")
        step = f / df
        s = s - step
        if abs(step) < tol * max(abs(s), 1.0):
            break
    else:
        raise NoConvergence(f"Newton did not converge from {guess} (last step {abs(step):.3e})")
    # residual relative to the local slope scale
    resid = abs(ev.det(s)) / max(abs(df) * max(abs(s), 1.0), 1e-300)
    return PoleRecord(s, cluster, float("nan"), float(resid))


@dataclass(frozen=True)
class PoleCount:
    count: int
    raw: complex
    rounding_distance: float
    min_abs_det: float


def count_poles_in_disk(ev: SMatrixEvaluator, center: complex, radius: float, n_quad: int = 256,
                        threshold: float = 1e-10) -> PoleCount:
    """Argument principle with trapezoidal quadrature of f'/f = tr(P^-1 P').

    Refuses contours passing within a relative ``threshold`` of a zero of det P
    (measured as min |det| / max |det| over the nodes).
    """
    theta = 2 * np.pi * np.arange(n_quad) / n_quad
    nodes = center + radius * np.exp(1j * theta)
    dets = np.array([ev.det(s) for s in nodes])
    mags = np.abs(dets)
    if mags.min() < threshold * mags.max():
        raise ContourTooClose(f"min |det P| on contour {mags.min():.3e} (max {mags.max():.3e})")
    g = np.array([ev.log_det_derivative(s) for s in nodes])
    # ds = i r e^{i theta} dtheta
    raw = np.sum(g * 1j * radius * np.exp(1j * theta)) * (2 * np.pi / n_quad) / (2j * np.pi)
    k = int(round(raw.real))
    return PoleCount(k, complex(raw), float(abs(raw - k)), float(mags.min()))


def _contour_integral(fn, center, radius, n_quad):
    theta = 2 * np.pi * np.arange(n_quad) / n_quad
    acc = 0
    for th in theta:
        z = np.exp(1j * th)
        acc = acc + fn(center + radius * z) * (1j * radius * z)
    return acc * (2 * np.pi / n_quad) / (2j * np.pi)


def residue_at(ev: SMatrixEvaluator, pole: PoleRecord | complex, gap: float | None = None,
               radius: float | None = None, n_quad: int = 256, check_simple: bool = True) -> np.ndarray:
    """Residue matrix of H_b by contour quadrature on a small circle.

    Default radius is ``min(gap/4, eta/2)`` (the damping term dropped when the
    pole sits on the axis); ``gap`` defaults to the distance to the conjugate pole.
    """
    s0 = pole.s if isinstance(pole, PoleRecord) else complex(pole)
    if radius is None:
        g = abs(2 * s0.imag) if gap is None else gap
        eta = -s0.real
        radius = g / 4 if eta <= 1e-12 * abs(s0) else min(g / 4, eta / 2)
    if check_simple:
        c = count_poles_in_disk(ev, s0, radius, n_quad)
        if c.count != 1:
            raise NotSimple(f"{c.count} poles within radius {radius:.3e} of {s0}")
    return _contour_integral(ev.Hb, s0, radius, n_quad)


@dataclass(frozen=True)
class InteractionMatrix:
    matrix: np.ndarray
    mu1: float
    mu2: float
    v: np.ndarray
    w: np.ndarray

    @property
    def gap(self) -> float:
        return self.mu1 - self.mu2


def _power_iteration(A, tol, max_iter, x0):
    x = x0 / np.linalg.norm(x0)
    mu = x @ A @ x
    for _ in range(max_iter):
        y = A @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0, x
        x = y / ny
        mu_new = x @ A @ x
        if abs(mu_new - mu) <= tol * max(abs(mu_new), 1.0):
            # one more sweep settles the vector at the converged rate
            x = A @ x
            x /= np.linalg.norm(x)
            return float(x @ A @ x), x
        mu = mu_new
    raise NoConvergence("power iteration did not converge")


def perron_pair(M: np.ndarray, tol: float = 1e-14, max_iter: int = 200000):
    """(mu1, mu2, v, w) by shifted power iteration with Wielandt deflation.

    The shift by the maximal row sum makes the spectrum of ``M + sigma I``
    nonnegative, so power iteration picks algebraically largest eigenvalues.
    """
    n = M.shape[0]
    if n == 1:
        return 0.0, float("-inf"), np.ones(1), np.ones(1)
    sigma = np.abs(M).sum(axis=1).max() + 1.0
    B = M + sigma * np.eye(n)
    lam1, v = _power_iteration(B, tol, max_iter, np.ones(n))
    lam1w, w = _power_iteration(B.T, tol, max_iter, np.ones(n))
    v = v * np.sign(v.sum())
    w = w * np.sign(w.sum())
    deflated = B - lam1 * np.outer(v, w) / (w @ v)
    rng = np.random.default_rng(0)
    lam2, _ = _power_iteration(deflated, tol, max_iter, rng.standard_normal(n))
    return lam1 - sigma, lam2 - sigma, v, w


def interaction_matrix(ens: BubbleEnsemble, alpha: int) -> InteractionMatrix:
    idx = ens.members(alpha)
    d = ens.distances()[np.ix_(idx, idx)] * ens.eps ** (-ens.p)
    Mx = np.zeros_like(d)
    off = ~np.eye(len(idx), dtype=bool)
    Mx[off] = 1.0 / d[off]
    return interaction_from_matrix(Mx)


def interaction_from_matrix(Mx: np.ndarray) -> InteractionMatrix:
    mu1, mu2, v, w = perron_pair(np.asarray(Mx, dtype=float))
    return InteractionMatrix(np.asarray(Mx, dtype=float), mu1, mu2, v, w)


def toeplitz_matrix(n: int, h: float = 1.0) -> np.ndarray:
    i = np.arange(n)
    D = np.abs(i[:, None] - i[None, :]).astype(float)
    T = np.zeros_like(D)
    T[D > 0] = 1.0 / (h * D[D > 0])
    return T


def harmonic(n: int) -> float:
    return float(sum(1.0 / k for k in range(1, n + 1)))


def toeplitz_bounds(m_alpha: int) -> tuple[float, float]:
    """Row-sum bounds on the Perron root of the 1/|i-j| chain matrix."""
    if m_alpha < 2:
        raise ValueError("need at least two bubbles")
    return harmonic(m_alpha - 1), 2 * harmonic(m_alpha // 2)


@dataclass(frozen=True)
class AsymptoticPole:
    omega: float
    eta: float
    gap: float
    shift: float
    radiation_quotient: float


def radiation_quotient(ens: BubbleEnsemble, alpha: int, c0: float, im: InteractionMatrix | None = None) -> float:
    """w^T Gamma v / w^T v with Gamma_ij = (C~_j / 4pi) sin(k d_ij) / d_ij, i != j."""
    im = interaction_matrix(ens, alpha) if im is None else im
    idx = ens.members(alpha)
    if len(idx) == 1:
        return 0.0
    k = ens.cluster_omega(alpha) / c0
    d = ens.distances()[np.ix_(idx, idx)]
    off = ~np.eye(len(idx), dtype=bool)
    G = np.zeros_like(d)
    G[off] = (ens.cap_tilde[idx][None, :] / (4 * np.pi) * np.sin(k * d) / np.where(off, d, 1.0))[off]
    return float(im.w @ G @ im.v / (im.w @ im.v))


def asymptotic_pole(ens: BubbleEnsemble, alpha: int, c0: float, eps: float | None = None) -> AsymptoticPole:
    """Leading-order red shift, damping and intra-cluster gap of the principal pole."""
    e = ens.eps if eps is None else eps
    ens_e = ens if eps is None else _rescaled(ens, eps)
    wm = ens.cluster_omega(alpha)
    cap = float(ens.cap_tilde[ens.members(alpha)][0])
    im = interaction_matrix(ens_e, alpha)
    if len(ens.members(alpha)) == 1:
        return AsymptoticPole(wm, 0.0, float("inf"), 0.0, 0.0)
    coef = wm**3 * cap / (8 * np.pi) * e ** (1 - ens.p)
    m11 = radiation_quotient(ens_e, alpha, c0, im)
    return AsymptoticPole(wm - coef * im.mu1, wm**3 / 2 * m11 * e, coef * im.gap, coef * im.mu1, m11)


def _rescaled(ens: BubbleEnsemble, eps: float) -> BubbleEnsemble:
    """Same template geometry at a new eps (intra offsets scale with eps^p)."""
    y = ens.cluster_centers[ens.labels]
    off = (ens.centers - y) * (eps / ens.eps) ** ens.p
    return BubbleEnsemble(y + off, ens.labels, ens.cluster_centers, ens.omega_m, ens.cap_tilde, eps, ens.p)


def principal_pole(ev: SMatrixEvaluator, alpha: int, tol: float = 1e-12) -> PoleRecord:
    """Newton from i omega_M (1 - predicted relative shift)."""
    ap = asymptotic_pole(ev.ens, alpha, ev.c0)
    rec = find_pole(ev, 1j * ap.omega - ap.eta, tol=tol, cluster=alpha)
    return rec


def cluster_poles(ev: SMatrixEvaluator, alpha: int, tol: float = 1e-12) -> list[PoleRecord]:
    """All intra-cluster poles near i omega_M, seeded from the interaction spectrum.

    Seeds whose Newton runs coincide are merged; degenerate levels may
    therefore return fewer than M_alpha records.
    """
    ens = ev.ens
    wm = ens.cluster_omega(alpha)
    idx = ens.members(alpha)
    if len(idx) == 1:
        return [find_pole(ev, 1j * wm, tol=tol, cluster=alpha)]
    im = interaction_matrix(ens, alpha)
    cap = float(ens.cap_tilde[idx][0])
    coef = wm**3 * cap / (8 * np.pi) * ens.eps ** (1 - ens.p)
    out = []
    for mu in np.linalg.eigvalsh((im.matrix + im.matrix.T) / 2)[::-1]:
        try:
            rec = find_pole(ev, 1j * (wm - coef * mu), tol=tol, cluster=alpha)
        except NoConvergence:
            continue
        if all(abs(rec.s - r.s) > 1e-8 * wm for r in out):
            out.append(rec)
    return out


@dataclass(frozen=True)
class GainSample:
    omega: float
    norm_hb: float
    smin_hext: float
    smax_hext: float


def gain_sweep(ev: SMatrixEvaluator, band, n_grid: int = 64) -> list[GainSample]:
    """‖H_b(i w)‖_2 and the extreme singular values of H_ext(i w) on a uniform grid per interval."""
    out = []
    intervals = band.intervals if hasattr(band, "intervals") else band
    for lo, hi in intervals:
        if n_grid < 16:
            raise ValueError("n_grid must be at least 16 per interval")
        for w in np.linspace(lo, hi, n_grid):
            s = 1j * w
            nb = float(np.linalg.norm(ev.Hb(s), 2))
            if ev.array is not None:
                sv = np.linalg.svd(ev.Hext(s), compute_uv=False)
                out.append(GainSample(float(w), nb, float(sv[-1]), float(sv[0])))
            else:
                out.append(GainSample(float(w), nb, float("nan"), float("nan")))
    return out


def tune_cluster(ens: BubbleEnsemble, alpha: int, target: float, c0: float, tol: float = 1e-9,
                 max_iter: int = 50) -> float:
    """Unperturbed Minnaert frequency whose principal pole sits at ``i * target``.

    Secant iteration on omega_M. Requires the target within 20% of the
    current omega_M of the cluster.
    """
    w0 = ens.cluster_omega(alpha)
    if abs(target - w0) > 0.2 * w0:
        raise NoConvergence(f"target {target:.6g} outside the 20% basin of omega_M={w0:.6g}")

    def g(wm):
        e = ens.with_cluster_omega(alpha, wm)
        return principal_pole(SMatrixEvaluator(e, c0), alpha).omega - target

    x0 = w0
    g0 = g(x0)
    x1 = w0 + (target - (g0 + target))  # shift by the observed miss
    for _ in range(max_iter):
        g1 = g(x1)
        if abs(g1) < tol * target:
            return float(x1)
        if g1 == g0:
            break
        x0, x1, g0 = x1, x1 - g1 * (x1 - x0) / (g1 - g0), g1
        if not 0.5 * w0 < x1 < 2 * w0:
            break
    raise NoConvergence(f"tuning cluster {alpha} to {target:.6g} failed")


def transducer_accessibility(array: TransducerArray, centers, c0: float, band, n_grid: int = 64) -> float:
    """Band minimum of sigma_min of the cluster-level trace matrix (N x M_tr)."""
    centers = np.atleast_2d(centers)
    if array.count < centers.shape[0]:
        raise ValueError("need at least as many transducers as clusters")
    smin = np.inf
    intervals = band.intervals if hasattr(band, "intervals") else band
    for lo, hi in intervals:
        for w in np.linspace(lo, hi, n_grid):
            G = cluster_trace_matrix(array, centers, c0, 1j * w)
            smin = min(smin, np.linalg.svd(G, compute_uv=False)[-1])
    return float(smin)


POLE_COLUMNS = ("cluster", "re_s", "im_s", "eta", "omega", "residue_norm", "newton_residual")
GAIN_COLUMNS = ("omega", "norm_Hb", "smin_Hext", "smax_Hext")


def _write_rows(path, header, rows):
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, (int, np.integer)) else f"{float(x):.17g}" for x in r])
    return path


def write_pole_table(poles, path):
    rows = [(int(p.cluster), p.s.real, p.s.imag, p.eta, p.omega, p.residue_norm, p.newton_residual) for p in poles]
    return _write_rows(path, POLE_COLUMNS, rows)


def write_gain_table(samples, path):
    rows = [(g.omega, g.norm_hb, g.smin_hext, g.smax_hext) for g in samples]
    return _write_rows(path, GAIN_COLUMNS, rows)
