"""Uniformly sampled multi-channel time series and the numerics shared by
every time-domain layer (interpolation, norms, spectral derivatives, CSV)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Signal:
    """Samples ``values[n, c]`` at times ``t0 + n * dt``.

    Values may be real or complex. A one-dimensional input is stored as a
    single channel.
    """

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("values must be (n_samples, n_channels)")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, t0, dt, n_samples, n_channels, dtype=float):
        return cls(t0, dt, np.zeros((n_samples, n_channels), dtype=dtype))

    @classmethod
    def from_function(cls, fn, t0, dt, n_samples):
        t = t0 + dt * np.arange(n_samples)
        return cls(t0, dt, np.asarray(fn(t)).reshape(n_samples, -1))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.n_samples - 1)

    def channel(self, c: int) -> np.ndarray:
        return self.values[:, c]

    def with_values(self, values) -> "Signal":
        return Signal(self.t0, self.dt, values)

    def same_grid(self, other: "Signal", rtol=1e-12) -> bool:
        return (
            self.n_samples == other.n_samples
            and abs(self.dt - other.dt) <= rtol * self.dt
            and abs(self.t0 - other.t0) <= rtol * max(self.dt, abs(self.t0))
        )

    def require_same_grid(self, other: "Signal"):
        if not self.same_grid(other):
            raise GridMismatch(
                f"grid mismatch: (t0={self.t0}, dt={self.dt}, n={self.n_samples}) vs "
                f"(t0={other.t0}, dt={other.dt}, n={other.n_samples})"
            )

    def at(self, t) -> np.ndarray:
        """Cubic (4-point Lagrange) interpolation at arbitrary times.

        The signal is zero-extended on both sides, so reads before ``t0``
        return exactly zero (rest history). Returns ``(len(t), n_channels)``.
        """
        return interp_cubic(self.values, self.t0, self.dt, np.atleast_1d(t))

    def window(self, t_start: float, t_stop: float) -> "Signal":
        """Samples with ``t_start <= t <= t_stop`` (grid-aligned restriction)."""
        i0 = max(int(np.ceil((t_start - self.t0) / self.dt - 1e-9)), 0)
        i1 = min(int(np.floor((t_stop - self.t0) / self.dt + 1e-9)), self.n_samples - 1)
        return Signal(self.t0 + i0 * self.dt, self.dt, self.values[i0 : i1 + 1])

    def __add__(self, other: "Signal") -> "Signal":
        self.require_same_grid(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Signal") -> "Signal":
        self.require_same_grid(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c) -> "Signal":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def to_csv(self, path) -> Path:
        return write_csv(self, path)


class GridMismatch(ValueError):
    pass


def lagrange4(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cubic Lagrange interpolation of rows ``values[k]`` at fractional indices ``x``.

    Four-node stencils, shifted inwards near the ends so every read inside
    ``[0, n-1]`` stays fourth-order; reads outside that range return zero.
    """
    n = values.shape[0]
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + values.shape[1:], dtype=values.dtype)
    inside = (x >= -1e-9) & (x <= n - 1 + 1e-9)
    if n < 4:
        # too short for a cubic stencil: linear
        xi = np.clip(x[inside], 0, n - 1)
        k = np.minimum(np.floor(xi).astype(np.int64), max(n - 2, 0))
        f = (xi - k)[(...,) + (None,) * (values.ndim - 1)]
        hi = np.minimum(k + 1, n - 1)
        out[inside] = (1 - f) * values[k] + f * values[hi]
        return out
    xi = x[inside]
    s = np.clip(np.floor(xi).astype(np.int64) - 1, 0, n - 4)
    f = xi - s
    w = (
        -(f - 1.0) * (f - 2.0) * (f - 3.0) / 6.0,
        f * (f - 2.0) * (f - 3.0) / 2.0,
        -f * (f - 1.0) * (f - 3.0) / 2.0,
        f * (f - 1.0) * (f - 2.0) / 6.0,
    )
    ext = (...,) + (None,) * (values.ndim - 1)
    acc = np.zeros(xi.shape + values.shape[1:], dtype=values.dtype)
    for k in range(4):
        acc += w[k][ext] * values[s + k]
    out[inside] = acc
    return out


def interp_cubic(values: np.ndarray, t0: float, dt: float, t: np.ndarray) -> np.ndarray:
    """Cubic interpolation of uniformly sampled rows at times ``t``; zero outside the record."""
    values = np.asarray(values)
    return lagrange4(values, (np.asarray(t, dtype=float) - t0) / dt)


def trapezoid_l2(values: np.ndarray, dt: float) -> float:
    """Trapezoidal L2(0,T) norm over time, summed over channels."""
    v = np.abs(np.asarray(values)) ** 2
    if v.ndim == 1:
        v = v[:, None]
    return float(np.sqrt(np.sum(np.trapezoid(v, dx=dt, axis=0))))


def fft_frequencies(n: int, dt: float) -> np.ndarray:
    """Angular frequencies (rad/s) of a length-``n`` DFT."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=dt)


def spectral_derivative(values: np.ndarray, dt: float, order: int = 1, pad_factor: int = 4) -> np.ndarray:
    """Derivative by multiplication with ``(i w)^order`` on the zero-extended transform."""
    values = np.asarray(values)
    n = values.shape[0]
    n_fft = (pad_factor + 1) * n
    spec = np.fft.fft(values, n=n_fft, axis=0)
    w = fft_frequencies(n_fft, dt)
    shape = (n_fft,) + (1,) * (values.ndim - 1)
    out = np.fft.ifft(spec * ((1j * w) ** order).reshape(shape), axis=0)[:n]
    return out.real if np.isrealobj(values) else out


def write_csv(signal: Signal, path) -> Path:
    """CSV with header ``time, ch0, ch1, ...``; 17 significant digits.

    Complex channels are written as ``chK_re, chK_im`` column pairs.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v = signal.values
    cplx = np.iscomplexobj(v)
    header = ["time"]
    for c in range(signal.n_channels):
        header += [f"ch{c}_re", f"ch{c}_im"] if cplx else [f"ch{c}"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, row in zip(signal.times, v):
            if cplx:
                cells = [x for z in row for x in (z.real, z.imag)]
            else:
                cells = row
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in cells])
    return path


def read_csv(path) -> Signal:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    t = data[:, 0]
    vals = data[:, 1:]
    if header[1:] and header[1].endswith("_re"):
        vals = vals[:, 0::2] + 1j * vals[:, 1::2]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return Signal(float(t[0]), dt, vals)
