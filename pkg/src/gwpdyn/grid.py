"""Split-operator grid propagation used as the numerically exact reference.

The propagator alternates kinetic phases in momentum space with potential
phases in position space (Strang form, kinetic half-steps outermost).
Adjacent kinetic half-steps of consecutive steps are merged, so the
streamed state costs one FFT pair per step; completing the trailing
half-step only happens when a sample of the true state is needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import GridLeak, InvariantBroken
from .gaussians import WavePacket, evaluate_packet_grid
from .potentials import PolynomialPotential

_LEAK_RING = 4  # cells of outermost border counted as boundary


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic FFT lattice on [-L, L) x [-L, L)."""

    n_mu: int
    n_nu: int
    half_width: float

    def __post_init__(self):
        for n in (self.n_mu, self.n_nu):
            if n < 8 or (n & (n - 1)) != 0:
                raise InvariantBroken(f"grid size {n} is not a power of two >= 8")
        if not self.half_width > 0:
            raise InvariantBroken("half_width must be positive")

    @property
    def d_mu(self) -> float:
        return 2.0 * self.half_width / self.n_mu

    @property
    def d_nu(self) -> float:
        return 2.0 * self.half_width / self.n_nu

    @property
    def cell(self) -> float:
        return self.d_mu * self.d_nu

    def axes(self):
        L = self.half_width
        return (-L + self.d_mu * np.arange(self.n_mu),
                -L + self.d_nu * np.arange(self.n_nu))

    def points(self) -> np.ndarray:
        """Lattice coordinates, shape (n_mu, n_nu, 2)."""
        xm, xn = self.axes()
        M, N = np.meshgrid(xm, xn, indexing="ij")
        return np.stack([M, N], axis=-1)

    def momenta(self):
        km = 2.0 * np.pi * np.fft.fftfreq(self.n_mu, self.d_mu)
        kn = 2.0 * np.pi * np.fft.fftfreq(self.n_nu, self.d_nu)
        return km[:, None], kn[None, :]


@dataclass(frozen=True)
class GridField:
    """Complex amplitudes on a Grid2D at one instant."""

    grid: Grid2D
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.n_mu, self.grid.n_nu):
            raise InvariantBroken(f"field shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v.view(float))):
            raise InvariantBroken("field has non-finite entries")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class GridTrace:
    """Sampled telemetry of a split-operator run."""

    times: np.ndarray
    autocorr: np.ndarray
    norms: np.ndarray
    energies: np.ndarray
    final: GridField
    leak_max: float


def sample(wp: WavePacket, grid: Grid2D, t: float = 0.0) -> GridField:
    """Pointwise packet values on the lattice."""
    return GridField(grid=grid, values=evaluate_packet_grid(wp, grid.points()),
                     t=t)


def grid_autocorrelation(f0: GridField, ft: GridField) -> complex:
    """Discrete inner product <f0|ft> with the cell measure."""
    if f0.grid != ft.grid:
        raise InvariantBroken("fields live on different grids")
    return complex(np.vdot(f0.values, ft.values) * f0.grid.cell)


def grid_norm(f: GridField) -> float:
    return float(np.sqrt(max(grid_autocorrelation(f, f).real, 0.0)))


def _kinetic_density(psi_hat: np.ndarray, grid: Grid2D) -> float:
    km, kn = grid.momenta()
    w = 0.5 * (km ** 2 + kn ** 2)
    scale = grid.cell / (grid.n_mu * grid.n_nu)
    return float((w * (psi_hat.real ** 2 + psi_hat.imag ** 2)).sum() * scale)


def grid_energy(f: GridField, V: PolynomialPotential) -> float:
    """Normalized <T + V> with the kinetic part taken in momentum space."""
    n2 = grid_autocorrelation(f, f).real
    if n2 <= 0.0:
        raise InvariantBroken("grid norm not positive")
    psi_hat = sfft.fft2(f.values, workers=-1)
    kin = _kinetic_density(psi_hat, f.grid)
    Vx = V.evaluate(f.grid.points())
    pot = float((Vx * (np.abs(f.values) ** 2)).sum() * f.grid.cell)
    return (kin + pot) / n2


def boundary_probability(f: GridField) -> float:
    """Probability mass in the outermost border cells, normalized."""
    p = np.abs(f.values) ** 2
    total = p.sum()
    if total <= 0.0:
        return 0.0
    r = _LEAK_RING
    inner = p[r:-r, r:-r].sum()
    return float((total - inner) / total)


def split_operator_trace(field: GridField, V: PolynomialPotential,
                         dt: float, n_steps: int,
                         record_every: int = 1,
                         reference: GridField | None = None,
                         leak_tol: float = 1e-8,
                         progress=None) -> GridTrace:
    """Propagate n_steps of size dt, sampling every record_every steps.

    The autocorrelation column is taken against `reference` (the initial
    field when omitted).  Raises GridLeak as soon as a sampled state puts
    more than leak_tol of its probability in the border ring.
    """
    if n_steps < 1 or record_every < 1:
        raise InvariantBroken("n_steps and record_every must be >= 1")
    grid = field.grid
    if reference is None:
        reference = field
    ref_conj = np.conj(reference.values)

    Vx = V.evaluate(grid.points())
    phase_v = np.exp(-1j * dt * Vx)
    km, kn = grid.momenta()
    t_half = np.exp(-0.25j * dt * (km ** 2 + kn ** 2))
    t_full = t_half * t_half

    times = [field.t]
    autoc = [complex(np.vdot(reference.values, field.values) * grid.cell)]
    norms = [grid_norm(field)]
    energies = [grid_energy(field, V)]
    leak_max = boundary_probability(field)

    # stream = state with the trailing kinetic half-step still pending
    psi_hat = sfft.fft2(field.values, workers=-1) * t_half
    stream = sfft.ifft2(psi_hat, workers=-1) * phase_v
    final_values = None

    for k in range(1, n_steps + 1):
        if k > 1:
            psi_hat = sfft.fft2(stream, workers=-1) * t_full
            stream = sfft.ifft2(psi_hat, workers=-1) * phase_v
        if k % record_every == 0 or k == n_steps:
            hat_true = sfft.fft2(stream, workers=-1) * t_half
            psi_true = sfft.ifft2(hat_true, workers=-1)
            t_now = field.t + k * dt
            times.append(t_now)
            autoc.append(complex((ref_conj * psi_true).sum() * grid.cell))
            nrm2 = float((psi_true.real ** 2 + psi_true.imag ** 2).sum()
                         * grid.cell)
            norms.append(np.sqrt(max(nrm2, 0.0)))
            kin = _kinetic_density(hat_true, grid)
            pot = float((Vx * (psi_true.real ** 2 + psi_true.imag ** 2)).sum()
                        * grid.cell)
            energies.append((kin + pot) / nrm2)
            p = psi_true.real ** 2 + psi_true.imag ** 2
            r = _LEAK_RING
            leak = float(1.0 - p[r:-r, r:-r].sum() / p.sum())
            leak_max = max(leak_max, leak)
            if leak > leak_tol:
                raise GridLeak(leak, leak_tol, t_now)
            if progress is not None:
                progress(t_now, k)
            if k == n_steps:
                final_values = psi_true

    return GridTrace(times=np.asarray(times),
                     autocorr=np.asarray(autoc),
                     norms=np.asarray(norms),
                     energies=np.asarray(energies),
                     final=GridField(grid=grid, values=final_values,
                                     t=field.t + n_steps * dt),
                     leak_max=leak_max)


def split_operator_propagate(field: GridField, V: PolynomialPotential,
                             dt: float, n_steps: int,
                             leak_tol: float = 1e-8) -> GridField:
    """Final state after n_steps Strang steps of size dt."""
    trace = split_operator_trace(field, V, dt, n_steps,
                                 record_every=n_steps, leak_tol=leak_tol)
    return trace.final
