import math

import numpy as np
import pytest

from gwpdyn.errors import InvariantBroken
from gwpdyn.gaussians import GaussianParams, WavePacket
from gwpdyn.grid import Grid2D, grid_energy, sample
from gwpdyn.moments import norm
from gwpdyn.observables import (
    TimeSeries,
    autocorrelation,
    energy,
    resample_uniform,
    spectral_peaks,
    spectrum,
)
from gwpdyn.potentials import build_harmonic

from helpers import random_packet

TWO_PI = 2.0 * math.pi


def test_timeseries_validation():
    with pytest.raises(InvariantBroken):
        TimeSeries(times=np.array([0.0, 1.0]), values=np.zeros(3))
    with pytest.raises(InvariantBroken):
        TimeSeries(times=np.array([0.0, 1.0, 1.0]), values=np.zeros(3))
    with pytest.raises(InvariantBroken):
        TimeSeries(times=np.array([0.0]), values=np.zeros(1))
    s = TimeSeries(times=np.array([0.0, 0.5, 1.0]), values=np.zeros(3))
    assert s.is_uniform
    s = TimeSeries(times=np.array([0.0, 0.5, 1.2]), values=np.zeros(3))
    assert not s.is_uniform


def test_autocorrelation_basics():
    rng = np.random.default_rng(21)
    wa = random_packet(rng, 2, 2)
    wb = random_packet(rng, 3, 2)
    assert autocorrelation(wa, wa) == pytest.approx(norm(wa) ** 2, rel=1e-12)
    assert autocorrelation(wa, wb) == pytest.approx(
        np.conj(autocorrelation(wb, wa)), rel=1e-12)


def test_energy_matches_grid():
    rng = np.random.default_rng(22)
    wp = random_packet(rng, 3, 2, pq_scale=0.7)
    V = build_harmonic([1.0, 0.5])
    grid = Grid2D(256, 256, 14.0)
    assert energy(wp, V) == pytest.approx(
        grid_energy(sample(wp, grid), V), rel=1e-8)


def test_energy_of_displaced_ground_state():
    # matched width: E = D/2 + (p^2 + q^2)/2 for unit frequencies
    q = np.array([0.8, -0.3])
    p = np.array([0.2, 0.5])
    A = 0.5j * np.eye(2)
    gamma_i = 0.25 * math.log(math.pi**2 / np.linalg.det(2 * A.imag))
    wp = WavePacket(gwps=(GaussianParams(A=A, p=p, q=q,
                                         gamma=complex(0.0, gamma_i)),))
    V = build_harmonic([1.0, 1.0])
    expect = 1.0 + 0.5 * (p @ p + q @ q)
    assert energy(wp, V) == pytest.approx(expect, rel=1e-12)


def test_resample_uniform_reproduces_smooth_signal():
    rng = np.random.default_rng(23)
    t = np.sort(rng.uniform(0.0, 10.0, size=200))
    t[0], t[-1] = 0.0, 10.0
    v = np.exp(-1j * 1.7 * t)
    series = TimeSeries(times=t, values=v)
    out, err = resample_uniform(series, n=256)
    assert out.is_uniform
    assert np.abs(out.values - np.exp(-1j * 1.7 * out.times)).max() < 1e-3
    # the estimate is deliberately conservative on ragged spacing
    assert err < 0.05


def test_spectrum_peak_of_pure_phase():
    e0 = 1.5
    n = 512
    t = np.linspace(0.0, 64.0, n)
    series = TimeSeries(times=t, values=np.exp(-1j * e0 * t))
    for window in ("none", "hann"):
        energies, power = spectrum(series, window=window)
        assert np.all(np.diff(energies) > 0)
        bin_w = energies[1] - energies[0]
        assert bin_w == pytest.approx(TWO_PI / (t[-1] / (n - 1) * n), rel=1e-9)
        assert abs(energies[np.argmax(power)] - e0) <= bin_w
    with pytest.raises(InvariantBroken):
        spectrum(series, window="flat")


def test_spectral_peaks_comb():
    # two tones at 0.5 and 1.5 with a weak third below the height cut
    t = np.linspace(0.0, 128.0, 2048)
    v = (np.exp(-1j * 0.5 * t) + 0.8 * np.exp(-1j * 1.5 * t)
         + 0.01 * np.exp(-1j * 3.0 * t))
    series = TimeSeries(times=t, values=v)
    energies, power = spectrum(series, window="hann")
    peaks = spectral_peaks(energies, power, rel_height=0.05)
    bin_w = energies[1] - energies[0]
    assert len(peaks) == 2
    assert abs(peaks[0] - 0.5) <= bin_w
    assert abs(peaks[1] - 1.5) <= bin_w
