"""Ideal point-actuator control of finitely many Dirichlet modes.

The modal Galerkin system is ``p'' + Lambda p = c0^2 C q`` with ``C`` the
matrix of eigenfunction values at the actuator (cluster) centres. Any right
inverse ``L`` of ``C`` turns a reference trajectory into the source
``q = c0^-2 L (p_r'' + Lambda p_r)`` that reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import GridMismatch, Signal, interp_cubic, trapezoid_l2
from .spectral import ModeSet, eval_modes


class RankDeficient(np.linalg.LinAlgError):
    pass


class UnstableStep(ValueError):
    pass


@dataclass(frozen=True)
class CouplingMatrix:
    entries: np.ndarray
    modes: ModeSet
    centers: np.ndarray

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class RightInverse:
    entries: np.ndarray
    sigma_min: float
    sigma_max: float


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Per-mode coefficients with their first two (optionally three) derivatives."""

    p: Signal
    dp: Signal
    ddp: Signal
    dddp: Signal | None = None


@dataclass(frozen=True)
class ModalTrajectory:
    p: Signal
    dp: Signal
    omega2: np.ndarray


def coupling_matrix(modes: ModeSet, centers) -> CouplingMatrix:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    for y in centers:
        if not modes.domain.contains(y, strict=True):
            raise ValueError(f"cluster centre {y} is not strictly inside the box")
    C = eval_modes(modes.domain, modes.indices, centers)
    return CouplingMatrix(C, modes, centers)


def _amplitude(modes: ModeSet) -> float:
    """Sup norm of the normalised box eigenfunctions."""
    return float(np.prod(np.sqrt(2.0 / modes.domain.L)))


def right_inverse(C: CouplingMatrix | np.ndarray, sigma_tol: float = 1e-8) -> RightInverse:
    """Moore-Penrose right inverse; refuses near rank loss.

    ``sigma_tol`` is relative to the largest singular value. For a coupling
    matrix the reference scale is at least the eigenfunction amplitude, so a
    lone centre on a nodal plane (a ~1e-16 column) is also rejected.
    """
    if isinstance(C, CouplingMatrix):
        A, ref = C.entries, _amplitude(C.modes)
    else:
        A, ref = np.asarray(C, dtype=float), 0.0
    n_m, n = A.shape
    if n < n_m:
        raise RankDeficient(f"need at least as many centres ({n}) as modes ({n_m})")
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    if s[-1] < sigma_tol * max(s[0], ref, np.finfo(float).tiny):
        raise RankDeficient(f"sigma_min={s[-1]:.3e} below {sigma_tol:g} * sigma_max={s[0]:.3e}")
    L = (Vh.conj().T / s) @ U.conj().T
    return RightInverse(L, float(s[-1]), float(s[0]))


def rank_probe(modes: ModeSet, n_centers: int, n_samples: int, seed: int, sigma_tol: float = 1e-8,
               sampler=None) -> float:
    """Fraction of random centre tuples giving a full-row-rank coupling matrix.

    ``sampler(rng, n_centers)`` overrides the default uniform draw in the open box.
    """
    rng = np.random.default_rng(seed)
    L = modes.domain.L
    hits = 0
    ref = _amplitude(modes)
    for _ in range(n_samples):
        y = sampler(rng, n_centers) if sampler else rng.uniform(0.0, 1.0, size=(n_centers, 3)) * L
        s = np.linalg.svd(eval_modes(modes.domain, modes.indices, y), compute_uv=False)
        if s[-1] >= sigma_tol * max(s[0], ref) and n_centers >= len(modes):
            hits += 1
    return hits / n_samples


def ideal_source(traj: ReferenceTrajectory, L: RightInverse, modes: ModeSet, c0: float) -> Signal:
    traj.p.require_same_grid(traj.ddp)
    if traj.p.n_channels != len(modes):
        raise GridMismatch("trajectory channels do not match the mode set")
    forcing = traj.ddp.values + traj.p.values * modes.omegas**2
    return traj.p.with_values(forcing @ L.entries.T / c0**2)


def integrate_modal(modes: ModeSet, C: CouplingMatrix, q: Signal, c0: float,
                    dt: float | None = None) -> ModalTrajectory:
    """Fixed-step RK4 for ``p'' + w^2 p = c0^2 C q`` from rest.

    The forcing is read at stage times by 4-point cubic interpolation of the
    samples, which keeps the scheme fourth order.
    """
    f = q.values @ C.entries.T * c0**2
    return integrate_oscillators(modes.omegas, q.with_values(f), dt)


def integrate_oscillators(omegas, forcing: Signal, dt: float | None = None) -> ModalTrajectory:
    """RK4 for decoupled oscillators ``p'' + w^2 p = f(t)`` from rest on the forcing grid."""
    w2 = np.asarray(omegas, dtype=float) ** 2
    h = forcing.dt if dt is None else dt
    if np.sqrt(w2.max(initial=0.0)) * h > 0.5:
        raise UnstableStep(f"dt * omega_max = {np.sqrt(w2.max()) * h:.3f} > 0.5")
    n = int(round((forcing.t_end - forcing.t0) / h)) + 1
    fv = forcing.values
    if dt is None:
        mid = interp_cubic(fv, forcing.t0, forcing.dt, forcing.t0 + h * (np.arange(n - 1) + 0.5))
        at_nodes = fv
    else:
        t = forcing.t0 + h * np.arange(n)
        at_nodes = interp_cubic(fv, forcing.t0, forcing.dt, t)
        mid = interp_cubic(fv, forcing.t0, forcing.dt, t[:-1] + 0.5 * h)
    m = w2.size
    P = np.zeros((n, m))
    V = np.zeros((n, m))
    p = np.zeros(m)
    v = np.zeros(m)
    for i in range(n - 1):
        f0, fm, f1 = at_nodes[i], mid[i], at_nodes[i + 1]
        k1p, k1v = v, f0 - w2 * p
        k2p, k2v = v + 0.5 * h * k1v, fm - w2 * (p + 0.5 * h * k1p)
        k3p, k3v = v + 0.5 * h * k2v, fm - w2 * (p + 0.5 * h * k2p)
        k4p, k4v = v + h * k3v, f1 - w2 * (p + h * k3p)
        p = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        P[i + 1], V[i + 1] = p, v
    return ModalTrajectory(Signal(forcing.t0, h, P), Signal(forcing.t0, h, V), w2)


def modal_energy_norm(p: np.ndarray, dp: np.ndarray, omega2) -> np.ndarray:
    """Pointwise ``|Lambda^1/2 p| + |p'|`` over time."""
    return np.linalg.norm(p * np.sqrt(omega2), axis=1) + np.linalg.norm(dp, axis=1)


def tracking_error(sim: ModalTrajectory, ref: ReferenceTrajectory | ModalTrajectory) -> float:
    """sup_t ( |Lambda^1/2 (p - p_r)| + |p' - p_r'| )."""
    sim.p.require_same_grid(ref.p)
    return float(np.max(modal_energy_norm(sim.p.values - ref.p.values, sim.dp.values - ref.dp.values, sim.omega2)))


def energy_bound_check(sim: ModalTrajectory, q: Signal, C: CouplingMatrix, c0: float, T: float) -> float:
    """sup_t sqrt(2 E(t)) relative to c0^2 ||C||_2 sqrt(T) ||q||_L2; at most 1 in exact arithmetic."""
    e = np.sqrt(np.sum(sim.dp.values**2 + sim.omega2 * sim.p.values**2, axis=1))
    qn = trapezoid_l2(q.values, q.dt)
    if qn == 0.0:
        return 0.0
    return float(e.max() / (c0**2 * np.linalg.norm(C.entries, 2) * np.sqrt(T) * qn))
