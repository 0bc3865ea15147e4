"""Closed-form Dirichlet spectrum of a rectangular box."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_INDEX_CAP = 16


class EmptyBandInterval(ValueError):
    pass


@dataclass(frozen=True)
class BoxDomain:
    """The box ``(0, L1) x (0, L2) x (0, L3)`` with sound speed ``c0``."""

    lengths: tuple
    c0: float

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        if len(lengths) != 3 or min(lengths) <= 0:
            raise ValueError(f"need three positive lengths, got {self.lengths}")
        if not self.c0 > 0:
            raise ValueError(f"c0 must be positive, got {self.c0}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def L(self) -> np.ndarray:
        return np.array(self.lengths)

    def contains(self, x, strict=True) -> bool:
        x = np.asarray(x, dtype=float)
        if strict:
            return bool(np.all(x > 0) and np.all(x < self.L))
        return bool(np.all(x >= 0) and np.all(x <= self.L))


@dataclass(frozen=True, order=True)
class ModeIndex:
    k1: int
    k2: int
    k3: int

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) < 1:
            raise ValueError(f"mode indices must be >= 1, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.k1, self.k2, self.k3)

    @classmethod
    def of(cls, k):
        return k if isinstance(k, ModeIndex) else cls(*(int(v) for v in k))


@dataclass(frozen=True)
class EigenMode:
    index: ModeIndex
    lam: float
    omega: float


@dataclass(frozen=True)
class SpectralBand:
    """Sorted, pairwise disjoint closed intervals in rad/s."""

    intervals: tuple

    def __post_init__(self):
        iv = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in iv:
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
        for (_, h0), (l1, _) in zip(iv, iv[1:]):
            if not h0 < l1:
                raise ValueError("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", iv)

    def contains(self, omega) -> bool:
        return any(lo <= omega <= hi for lo, hi in self.intervals)

    def interval_of(self, omega):
        for j, (lo, hi) in enumerate(self.intervals):
            if lo <= omega <= hi:
                return j
        return None


@dataclass(frozen=True)
class ModeSet:
    domain: BoxDomain
    modes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        modes = tuple(sorted(self.modes, key=lambda m: (m.omega, m.index.as_tuple())))
        if len({m.index for m in modes}) != len(modes):
            raise ValueError("duplicate mode indices")
        object.__setattr__(self, "modes", modes)

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([m.omega for m in self.modes])

    @property
    def indices(self):
        return [m.index for m in self.modes]

    @classmethod
    def from_indices(cls, domain, indices):
        return cls(domain, tuple(eigenmode(domain, k) for k in indices))


def eigenmode(domain: BoxDomain, index) -> EigenMode:
    k = ModeIndex.of(index)
    lam = float(np.pi**2 * np.sum((np.array(k.as_tuple()) / domain.L) ** 2))
    return EigenMode(k, lam, domain.c0 * np.sqrt(lam))


def eval_mode(domain: BoxDomain, index, x) -> float:
    """L2-normalised eigenfunction prod_i sqrt(2/L_i) sin(k_i pi x_i / L_i)."""
    x = np.asarray(x, dtype=float)
    if not domain.contains(x, strict=False):
        raise ValueError(f"point {x} outside the box {domain.lengths}")
    return float(eval_modes(domain, [index], x[None, :])[0, 0])


def eval_modes(domain: BoxDomain, indices, points) -> np.ndarray:
    """Matrix ``phi_k(x_j)``: rows follow ``indices``, columns ``points``."""
    K = np.array([ModeIndex.of(k).as_tuple() for k in indices], dtype=float)
    X = np.atleast_2d(np.asarray(points, dtype=float))
    L = domain.L
    norm = np.prod(np.sqrt(2.0 / L))
    # (modes, points, axes)
    arg = np.pi * K[:, None, :] * X[None, :, :] / L
    return norm * np.prod(np.sin(arg), axis=-1)


def _enumerate(domain, index_cap):
    for k in itertools.product(range(1, index_cap + 1), repeat=3):
        yield eigenmode(domain, k)


def modes_in_band(domain: BoxDomain, band: SpectralBand, index_cap: int = DEFAULT_INDEX_CAP) -> ModeSet:
    """Every mode with eigenfrequency in some interval of ``band``."""
    hits = [[] for _ in band.intervals]
    for m in _enumerate(domain, index_cap):
        j = band.interval_of(m.omega)
        if j is not None:
            hits[j].append(m)
    for (lo, hi), h in zip(band.intervals, hits):
        if not h:
            raise EmptyBandInterval(f"empty band interval [{lo}, {hi}] (index cap {index_cap})")
    return ModeSet(domain, tuple(m for h in hits for m in h))


def degenerate_partners(domain: BoxDomain, index, index_cap: int = DEFAULT_INDEX_CAP, rtol=1e-12):
    """Other indices within the cap sharing the eigenvalue of ``index``."""
    target = eigenmode(domain, index)
    k0 = ModeIndex.of(index)
    cap = max(index_cap, max(k0.as_tuple()))
    L = domain.L
    # restrict the search to the shell that can reach lambda; solve for k3
    kmax = np.minimum(np.floor(np.sqrt(target.lam) * L / np.pi).astype(int), cap)
    k1, k2 = np.meshgrid(np.arange(1, kmax[0] + 1), np.arange(1, kmax[1] + 1), indexing="ij")
    rem = target.lam / np.pi**2 - (k1 / L[0]) ** 2 - (k2 / L[1]) ** 2
    k3 = np.rint(L[2] * np.sqrt(np.maximum(rem, 0.0))).astype(int)
    ok = (k3 >= 1) & (k3 <= kmax[2])
    out = []
    for a, b, c in zip(k1[ok], k2[ok], k3[ok]):
        k = (int(a), int(b), int(c))
        if k == k0.as_tuple():
            continue
        m = eigenmode(domain, k)
        if abs(m.lam - target.lam) <= rtol * target.lam:
            out.append(m.index)
    return out


def warn_incomplete_families(modes: ModeSet, index_cap: int = DEFAULT_INDEX_CAP):
    """Log a warning for each selected mode whose eigenspace is only partially selected."""
    selected = set(modes.indices)
    missing = {}
    for m in modes:
        partners = [k for k in degenerate_partners(modes.domain, m.index, index_cap) if k not in selected]
        if partners:
            missing[m.index.as_tuple()] = [k.as_tuple() for k in partners]
            log.warning("mode %s has unselected degenerate partners %s", m.index.as_tuple(), missing[m.index.as_tuple()])
    return missing


@dataclass(frozen=True)
class LocalizationCheck:
    ok: bool
    margin: float
    distance: float


def check_localization(domain: BoxDomain, region_lo, region_hi, T: float) -> LocalizationCheck:
    """Finite propagation speed keeps the walls invisible iff dist(region, boundary) > c0 T."""
    lo = np.asarray(region_lo, dtype=float)
    hi = np.asarray(region_hi, dtype=float)
    if np.any(lo > hi) or not (domain.contains(lo, strict=False) and domain.contains(hi, strict=False)):
        raise ValueError("region must be a box inside the domain")
    dist = float(min(np.min(lo), np.min(domain.L - hi)))
    margin = dist - domain.c0 * T
    return LocalizationCheck(margin > 0, margin, dist)
