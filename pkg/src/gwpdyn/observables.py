"""Physical observables of packet states and derived spectra.

The kinetic energy acts on a Gaussian as multiplication by a quadratic
polynomial, so both the energy expectation and the overlap with any other
packet stay inside the closed-form moment engine; no grid is involved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from .errors import InvariantBroken
from .gaussians import WavePacket
from .moments import DEFAULT_DEGREE_CAP, pair_tables
from .potentials import PolynomialPotential


@dataclass(frozen=True)
class TimeSeries:
    """Complex samples over (not necessarily uniform) increasing times."""

    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if t.ndim != 1 or t.shape != v.shape:
            raise InvariantBroken(f"bad series shapes {t.shape}, {v.shape}")
        if t.size < 2 or np.any(np.diff(t) <= 0.0):
            raise InvariantBroken("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def is_uniform(self) -> bool:
        dt = np.diff(self.times)
        return bool(np.abs(dt - dt[0]).max() <= 1e-9 * dt[0])


def autocorrelation(wp0: WavePacket, wp_t: WavePacket,
                    degree_cap: int = DEFAULT_DEGREE_CAP) -> complex:
    """Overlap <wp0 | wp_t> from pairwise Gaussian overlaps."""
    tabs = pair_tables(wp0, wp_t, 0, degree_cap)
    return complex(tabs.integral((0,) * wp0.dim).sum())


def _kinetic_block(wp: WavePacket, tabs) -> np.ndarray:
    """Matrix <g_l | T | g_k> with T = -laplacian/2 (hbar = m = 1).

    T g = (-i tr A + |2A(x-q) + p|^2 / 2) g, a quadratic polynomial times
    the same Gaussian, expanded here into plain monomial moments.
    """
    d = wp.dim
    A, p, q, _ = wp.stacked()
    A2 = A @ A
    Aq = np.einsum("kij,kj->ki", A, q)
    A2q = np.einsum("kij,kj->ki", A2, q)
    c0 = (-1j * np.trace(A, axis1=1, axis2=2)
          + 0.5 * np.einsum("ki,ki->k", p, p)
          - 2.0 * np.einsum("ki,ki->k", p, Aq)
          + 2.0 * np.einsum("ki,ki->k", q, A2q))
    c1 = 2.0 * np.einsum("kij,kj->ki", A, p) - 4.0 * A2q

    zero = (0,) * d
    out = c0[None, :] * tabs.tables[zero]
    for i in range(d):
        ei = tuple(1 if m == i else 0 for m in range(d))
        out = out + c1[:, i][None, :] * tabs.tables[ei]
        for j in range(d):
            ej = tuple((1 if m == i else 0) + (1 if m == j else 0)
                       for m in range(d))
            out = out + 2.0 * A2[:, i, j][None, :] * tabs.tables[ej]
    return tabs.pref * out


def energy(wp: WavePacket, V: PolynomialPotential,
           degree_cap: int = DEFAULT_DEGREE_CAP) -> float:
    """Normalized expectation <H> = <wp|T + V|wp> / <wp|wp>."""
    need = max(2, V.max_degree)
    tabs = pair_tables(wp, wp, need, degree_cap)
    zero = (0,) * wp.dim
    norm2 = complex(tabs.integral(zero).sum()).real
    if norm2 <= 0.0:
        raise InvariantBroken(f"norm^2 not positive: {norm2:.3e}")
    total = complex(_kinetic_block(wp, tabs).sum())
    for key, coeff in V.terms.items():
        total += coeff * complex(tabs.integral(key).sum())
    return total.real / norm2


def resample_uniform(series: TimeSeries, n: int | None = None):
    """Cubic resampling onto a uniform grid.

    Returns the resampled series plus an error estimate: the largest
    cubic-versus-linear disagreement at the midpoints of the original
    samples, which bounds how much the interpolant is inventing.
    """
    t, v = series.times, series.values
    if n is None:
        n = t.size
    spline = CubicSpline(t, v)
    mids = 0.5 * (t[:-1] + t[1:])
    linear = v[:-1] + 0.5 * (v[1:] - v[:-1])
    err = float(np.abs(spline(mids) - linear).max())
    tu = np.linspace(t[0], t[-1], n)
    return TimeSeries(times=tu, values=spline(tu), label=series.label), err


def spectrum(series: TimeSeries, window: str = "none"):
    """Windowed discrete Fourier transform of an autocorrelation signal.

    A pure exp(-i E0 t) sample peaks at energy E0.  Nonuniform series are
    first resampled cubically.  Returns (energies, intensities) with
    energies ascending.
    """
    if window not in ("none", "hann"):
        raise InvariantBroken(f"unknown window {window!r}")
    if not series.is_uniform:
        series, _ = resample_uniform(series)
    t, v = series.times, series.values
    n = t.size
    dt = (t[-1] - t[0]) / (n - 1)
    w = np.hanning(n) if window == "hann" else np.ones(n)
    # ifft carries exp(+i 2 pi k n / N): positive-energy convention
    S = n * dt * np.fft.ifft(w * v)
    energies = 2.0 * np.pi * np.fft.fftfreq(n, dt)
    order = np.fft.fftshift(np.arange(n))
    return energies[order], np.abs(S[order]) ** 2


def spectral_peaks(energies: np.ndarray, power: np.ndarray,
                   rel_height: float = 0.05) -> np.ndarray:
    """Energies of local maxima at least rel_height of the strongest."""
    idx, _ = signal.find_peaks(power, height=rel_height * power.max())
    return energies[idx]
