"""Time-domain bubble physics: the delayed amplitude system, incident traces
from exterior transducers, source amplitudes and retarded monopole fields."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .signals import Signal, interp_cubic


class GeometryViolation(ValueError):
    pass


class StepTooLarge(ValueError):
    pass


class IntegrationBlowup(FloatingPointError):
    pass


@dataclass(frozen=True)
class BubbleEnsemble:
    """Bubbles grouped into clusters.

    ``labels[i]`` is the cluster of bubble ``i``; ``cluster_centers[a]`` is
    ``y_a``. Capacitances are ``eps * cap_tilde``.
    """

    centers: np.ndarray
    labels: np.ndarray
    cluster_centers: np.ndarray
    omega_m: np.ndarray
    cap_tilde: np.ndarray
    eps: float
    p: float

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.centers, dtype=float))
        m = z.shape[0]
        labels = np.asarray(self.labels, dtype=int).reshape(m)
        y = np.atleast_2d(np.asarray(self.cluster_centers, dtype=float))
        om = np.broadcast_to(np.asarray(self.omega_m, dtype=float), (m,)).copy()
        ct = np.broadcast_to(np.asarray(self.cap_tilde, dtype=float), (m,)).copy()
        if not 0 < self.eps < 1 or not 0 < self.p < 1:
            raise ValueError("need eps and p in (0, 1)")
        if set(labels.tolist()) != set(range(y.shape[0])):
            raise ValueError("labels must cover clusters 0..N-1")
        if np.any(om <= 0) or np.any(ct <= 0):
            raise ValueError("Minnaert frequencies and capacitances must be positive")
        for name, val in (("centers", z), ("labels", labels), ("cluster_centers", y),
                          ("omega_m", om), ("cap_tilde", ct)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def M(self) -> int:
        return self.centers.shape[0]

    @property
    def N(self) -> int:
        return self.cluster_centers.shape[0]

    @property
    def capacitance(self) -> np.ndarray:
        return self.eps * self.cap_tilde

    def members(self, alpha: int) -> np.ndarray:
        return np.flatnonzero(self.labels == alpha)

    def cluster_omega(self, alpha: int) -> float:
        return float(self.omega_m[self.members(alpha)[0]])

    def distances(self) -> np.ndarray:
        z = self.centers
        return np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1)

    def cluster_radius(self) -> float:
        return float(max(np.max(np.linalg.norm(self.centers - self.cluster_centers[self.labels], axis=1)), 0.0))

    def with_cluster_omega(self, alpha: int, omega: float) -> "BubbleEnsemble":
        om = self.omega_m.copy()
        om[self.members(alpha)] = omega
        return replace(self, omega_m=om)

    def with_eps(self, eps: float) -> "BubbleEnsemble":
        return replace(self, eps=eps)


def make_cluster_offsets(count: int, geometry: str, spacing: float) -> np.ndarray:
    """Template bubble offsets around a cluster centre.

    ``equidistant`` uses the regular simplex (``count <= 4``); ``chain`` a
    straight line along x. Offsets are centred on the origin.
    """
    if count == 1:
        return np.zeros((1, 3))
    if geometry == "equidistant":
        if count > 4:
            raise ValueError("equidistant clusters exist only up to 4 bubbles in R^3")
        simplex = {
            2: [[0, 0, 0], [1, 0, 0]],
            3: [[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]],
            4: [[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0],
                [0.5, np.sqrt(3) / 6, np.sqrt(2.0 / 3.0)]],
        }[count]
        pts = np.array(simplex, dtype=float)
    elif geometry == "chain":
        pts = np.zeros((count, 3))
        pts[:, 0] = np.arange(count)
    else:
        raise ValueError(f"unknown cluster geometry {geometry!r}")
    return spacing * (pts - pts.mean(axis=0))


def build_ensemble(cluster_centers, counts, geometry, spacings, omega_m, cap_tilde, eps, p) -> BubbleEnsemble:
    """Place template clusters (dimensionless spacing ``d~``, physical ``d~ eps^p``)."""
    y = np.atleast_2d(np.asarray(cluster_centers, dtype=float))
    n = y.shape[0]
    counts = np.broadcast_to(counts, (n,))
    geometry = [geometry] * n if isinstance(geometry, str) else list(geometry)
    spacings = np.broadcast_to(np.asarray(spacings, dtype=float), (n,))
    omega_m = np.broadcast_to(np.asarray(omega_m, dtype=float), (n,))
    cap_tilde = np.broadcast_to(np.asarray(cap_tilde, dtype=float), (n,))
    z, lab, om, ct = [], [], [], []
    for a in range(n):
        off = make_cluster_offsets(int(counts[a]), geometry[a], spacings[a] * eps**p)
        z.append(y[a] + off)
        lab += [a] * len(off)
        om += [omega_m[a]] * len(off)
        ct += [cap_tilde[a]] * len(off)
    return BubbleEnsemble(np.vstack(z), np.array(lab), y, np.array(om), np.array(ct), eps, p)


@dataclass(frozen=True)
class GeometryReport:
    c1: float
    c2: float
    d_min: float
    d_max: float


def validate_geometry(ens: BubbleEnsemble, c_bounds=None, d_bounds=None) -> GeometryReport:
    """Measure the two distance regimes and check Minnaert detuning.

    Optional ``c_bounds=(c1, c2)`` and ``d_bounds=(D_min, D_max)`` are enforced
    when given; otherwise only consistency (intra < inter, positive) is checked.
    """
    d = ens.distances()
    scale = ens.eps**ens.p
    intra, inter = [], []
    for i in range(ens.M):
        for j in range(i + 1, ens.M):
            (intra if ens.labels[i] == ens.labels[j] else inter).append((d[i, j], i, j))
    for dij, i, j in intra + inter:
        if dij <= 0:
            raise GeometryViolation(f"bubbles {i} and {j} coincide")
    for a in range(ens.N):
        om = ens.omega_m[ens.members(a)]
        if np.ptp(om) > 0:
            raise GeometryViolation(f"cluster {a} has non-uniform Minnaert frequency")
    for a in range(ens.N):
        for b in range(a + 1, ens.N):
            if ens.cluster_omega(a) == ens.cluster_omega(b):
                raise GeometryViolation(f"spectral detuning: clusters {a} and {b} share omega_M")
    c1 = min((x[0] for x in intra), default=np.nan) / scale
    c2 = max((x[0] for x in intra), default=np.nan) / scale
    dmin = min((x[0] for x in inter), default=np.nan)
    dmax = max((x[0] for x in inter), default=np.nan)
    if intra and inter and max(x[0] for x in intra) >= dmin:
        dij, i, j = max(intra)
        raise GeometryViolation(f"intra-cluster pair ({i}, {j}) at {dij:.3g} not below inter-cluster distance {dmin:.3g}")
    if c_bounds is not None:
        for dij, i, j in intra:
            if not c_bounds[0] * scale <= dij <= c_bounds[1] * scale:
                raise GeometryViolation(f"intra-cluster pair ({i}, {j}): d/eps^p = {dij / scale:.4g} outside {c_bounds}")
    if d_bounds is not None:
        for dij, i, j in inter:
            if not d_bounds[0] <= dij <= d_bounds[1]:
                raise GeometryViolation(f"inter-cluster pair ({i}, {j}): d = {dij:.4g} outside {d_bounds}")
    return GeometryReport(c1, c2, dmin, dmax)


@dataclass(frozen=True)
class DelayedSystem:
    inv_omega2: np.ndarray
    q: np.ndarray
    tau: np.ndarray

    @property
    def M(self) -> int:
        return self.q.shape[0]


def build_system(ens: BubbleEnsemble, c0: float) -> DelayedSystem:
    d = ens.distances()
    with np.errstate(divide="ignore"):
        q = ens.capacitance[None, :] / (4 * np.pi * d)
    np.fill_diagonal(q, 0.0)
    return DelayedSystem(1.0 / ens.omega_m**2, q, d / c0)


def default_dt(system: DelayedSystem) -> float:
    """min(min tau / 8, 2 pi / (64 omega_max))."""
    tau = system.tau[system.tau > 0]
    w_max = np.sqrt(1.0 / system.inv_omega2.min())
    dt = 2 * np.pi / (64 * w_max)
    if tau.size:
        dt = min(dt, tau.min() / 8)
    return float(dt)


@dataclass(frozen=True)
class TransducerArray:
    """Point sources outside the box.

    ``clock_advance[m]`` (s) fires transducer ``m`` that much earlier than its
    nominal signal time: the field at ``x`` reads ``lambda_m(t - r/c0 + a_m)``.
    The default of zero is the plain retarded field.
    """

    positions: np.ndarray
    rho_c: float = 1.0
    clock_advance: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.positions, dtype=float))
        adv = np.zeros(x.shape[0]) if self.clock_advance is None else np.asarray(self.clock_advance, float)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "clock_advance", adv.reshape(x.shape[0]))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def check_outside(self, domain):
        for m, x in enumerate(self.positions):
            if domain.contains(x, strict=False):
                raise GeometryViolation(f"transducer {m} at {x} is not outside the closed box")

    def effective_delays(self, targets, c0) -> tuple[np.ndarray, np.ndarray]:
        """Distances ``r[i, m]`` and signal delays ``r/c0 - a_m``."""
        r = np.linalg.norm(np.atleast_2d(targets)[:, None, :] - self.positions[None, :, :], axis=-1)
        return r, r / c0 - self.clock_advance[None, :]


def _retarded_sum(signal: Signal, weights: np.ndarray, delays: np.ndarray, grid: Signal | None = None) -> Signal:
    """out_i(t) = sum_m weights[i, m] * signal_m(t - delays[i, m]) on ``grid`` (default: signal's grid)."""
    g = signal if grid is None else grid
    t = g.times
    out = np.zeros((t.size, weights.shape[0]), dtype=np.result_type(signal.values, weights))
    for i in range(weights.shape[0]):
        for m in range(weights.shape[1]):
            out[:, i] += weights[i, m] * interp_cubic(signal.values[:, m], signal.t0, signal.dt, t - delays[i, m])
    return Signal(g.t0, g.dt, out)


def incident_traces(array: TransducerArray, lam: Signal, targets, c0: float,
                    lam_dd: Signal | None = None, grid: Signal | None = None) -> tuple[Signal, Signal]:
    """``u_in`` and its second time derivative at ``targets``.

    The second derivative is taken on the transducer signals before the delay
    (``lam_dd``, e.g. spectral); without it a spectral derivative of ``lam`` is used.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    r, delay = array.effective_delays(targets, c0)
    if np.any(r <= 1e-12):
        raise ValueError("target coincides with a transducer")
    if lam.n_channels != array.count:
        raise ValueError("one signal channel per transducer required")
    w = array.rho_c / (4 * np.pi * r)
    if lam_dd is None:
        from .signals import spectral_derivative

        lam_dd = lam.with_values(spectral_derivative(lam.values, lam.dt, order=2))
    return _retarded_sum(lam, w, delay, grid), _retarded_sum(lam_dd, w, delay, grid)


def integrate_delayed(system: DelayedSystem, forcing: Signal, T: float | None = None,
                      dt: float | None = None) -> Signal:
    """RK4 method of steps for ``w^-2 Y'' + Y + sum_j q_ij Y_j''(t - tau_ij) = F``.

    Rest history before ``forcing.t0``. Delayed accelerations are read from
    the stored acceleration history by 4-point cubic interpolation; they are
    frozen inputs per stage, so each stage is explicit.
    """
    M = system.M
    if forcing.n_channels != M:
        raise ValueError("forcing needs one channel per bubble")
    h = default_dt(system) if dt is None else float(dt)
    tau = system.tau
    pos = tau[tau > 0]
    if pos.size and h > pos.min() / 4 * (1 + 1e-12):
        raise StepTooLarge(f"dt={h:.3e} exceeds min(tau)/4={pos.min() / 4:.3e}")
    t_stop = forcing.t_end if T is None else forcing.t0 + T
    n = int(np.floor((t_stop - forcing.t0) / h + 1e-9)) + 1
    t = forcing.t0 + h * np.arange(n)
    F0 = forcing.at(t)
    Fm = forcing.at(t[:-1] + 0.5 * h)
    w2 = 1.0 / system.inv_omega2
    q = system.q
    ii, jj = np.nonzero(q)
    qv = q[ii, jj]
    # history offsets in units of h, measured back from a node
    lag = tau[ii, jj] / h

    acc = np.zeros((n, M))
    Y = np.zeros((n, M))
    V = np.zeros((n, M))

    def delayed(x):
        # sum_j q_ij a_j(x - lag_ij), x in step units; rest history before node 0
        xs = x - lag
        inside = xs >= -1e-9
        s = np.clip(np.floor(xs).astype(np.int64) - 1, 0, max(n - 4, 0))
        f = xs - s
        wts = (
            -(f - 1) * (f - 2) * (f - 3) / 6,
            f * (f - 2) * (f - 3) / 2,
            -f * (f - 1) * (f - 3) / 2,
            f * (f - 1) * (f - 2) / 6,
        )
        val = np.zeros_like(xs)
        for k, wt in enumerate(wts):
            val += wt * acc[np.minimum(s + k, n - 1), jj]
        val[~inside] = 0.0
        return np.bincount(ii, weights=qv * val, minlength=M)

    def accel(F, y, x):
        return w2 * (F - y - (delayed(x) if qv.size else 0.0))

    acc[0] = accel(F0[0], Y[0], 0.0)
    y = np.zeros(M)
    v = np.zeros(M)
    for i in range(n - 1):
        dm = delayed(i + 0.5) if qv.size else 0.0
        d1 = delayed(i + 1.0) if qv.size else 0.0
        k1y, k1v = v, acc[i]
        k2y, k2v = v + 0.5 * h * k1v, w2 * (Fm[i] - (y + 0.5 * h * k1y) - dm)
        k3y, k3v = v + 0.5 * h * k2v, w2 * (Fm[i] - (y + 0.5 * h * k2y) - dm)
        k4y, k4v = v + h * k3v, w2 * (F0[i + 1] - (y + h * k3y) - d1)
        y = y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        Y[i + 1], V[i + 1] = y, v
        acc[i + 1] = w2 * (F0[i + 1] - y - d1)
        if not np.all(np.isfinite(y)):
            raise IntegrationBlowup(f"non-finite amplitude at t={t[i + 1]:.6g}")
    return Signal(forcing.t0, h, Y)


def source_amplitudes(ens: BubbleEnsemble, Y: Signal) -> Signal:
    if Y.n_channels != ens.M:
        raise ValueError("one channel per bubble required")
    return Y.with_values(-Y.values * ens.capacitance)


def cluster_outputs(ens: BubbleEnsemble, q: Signal) -> Signal:
    B = np.zeros((ens.N, ens.M))
    B[ens.labels, np.arange(ens.M)] = 1.0
    return q.with_values(q.values @ B.T)


def output_map(ens: BubbleEnsemble) -> np.ndarray:
    B = np.zeros((ens.N, ens.M))
    B[ens.labels, np.arange(ens.M)] = 1.0
    return B


def monopole_field(x, sources, strengths: Signal, c0: float, grid: Signal | None = None) -> Signal:
    """sum_k Q_k(t - |x - y_k|/c0) / (4 pi |x - y_k|), zero before onset."""
    x = np.asarray(x, dtype=float)
    y = np.atleast_2d(np.asarray(sources, dtype=float))
    r = np.linalg.norm(y - x[None, :], axis=1)
    if np.any(r <= 1e-15):
        raise ValueError("evaluation point coincides with a source")
    return _retarded_sum(strengths, (1 / (4 * np.pi * r))[None, :], (r / c0)[None, :], grid)


def effective_field_at(x, Q: Signal, centers, c0: float) -> Signal:
    return monopole_field(x, centers, Q, c0)


class ProbeTooClose(ValueError):
    pass


def cluster_reduction_error(ens: BubbleEnsemble, q: Signal, Q: Signal, probes, c0: float) -> float:
    """sup over probes and time of |bubble-level field - cluster-level field|."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    rad = ens.cluster_radius()
    for x in probes:
        dmin = np.min(np.linalg.norm(ens.centers - x, axis=1))
        if rad > 0 and dmin < 10 * rad:
            raise ProbeTooClose(f"probe {x} within 10 cluster radii of a bubble")
    err = 0.0
    for x in probes:
        fine = monopole_field(x, ens.centers, q, c0)
        coarse = monopole_field(x, ens.cluster_centers, Q, c0)
        err = max(err, float(np.max(np.abs(fine.values - coarse.values))))
    return err
