"""State types for complex-width Gaussian wave packets.

A single Gaussian has the form

    g(x) = exp(i ((x-q) . A (x-q) + p . (x-q) + gamma))

with a complex symmetric width matrix A whose imaginary part is positive
definite, real center q, real momentum p and a complex scalar gamma whose
imaginary part controls the amplitude exp(-Im gamma).  A wave packet is an
unnormalized sum of such Gaussians.  Units are hbar = mass = 1 throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantBroken

TOL_SYM = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_symmetric(M: np.ndarray, what: str, tol: float = TOL_SYM) -> None:
    scale = max(1.0, float(np.abs(M).max())) if M.size else 1.0
    asym = float(np.abs(M - M.swapaxes(-1, -2)).max()) if M.size else 0.0
    if asym > tol * scale:
        raise InvariantBroken(f"{what} is not symmetric (|M - M^T| = {asym:.3e})")


@dataclass(frozen=True)
class GaussianParams:
    """Parameter set of one Gaussian wave packet.

    Attributes
    ----------
    A : (D, D) complex ndarray
        Symmetric width matrix; Im A must be positive definite.
    p : (D,) float ndarray
        Momentum vector.
    q : (D,) float ndarray
        Center position.
    gamma : complex
        Phase and amplitude scalar; the amplitude is exp(-Im gamma).
    """

    A: np.ndarray
    p: np.ndarray
    q: np.ndarray
    gamma: complex

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=complex))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        gamma = complex(self.gamma)
        d = p.shape[0]
        if A.shape != (d, d) or q.shape != (d,):
            raise InvariantBroken(
                f"inconsistent shapes: A {A.shape}, p {p.shape}, q {q.shape}"
            )
        if not (np.all(np.isfinite(A.view(float))) and np.all(np.isfinite(p))
                and np.all(np.isfinite(q)) and np.isfinite(gamma)):
            raise InvariantBroken("non-finite Gaussian parameters")
        _check_symmetric(A, "width matrix A")
        if np.linalg.eigvalsh(A.imag).min() <= 0.0:
            raise InvariantBroken("Im A is not positive definite")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "gamma", gamma)

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    @property
    def gamma_i(self) -> float:
        return self.gamma.imag


def evaluate(g: GaussianParams, x) -> complex:
    """Evaluate one Gaussian at position x (shape (D,) or scalar for D=1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = x - g.q
    phase = u @ g.A @ u + g.p @ u + g.gamma
    return complex(np.exp(1j * phase))


def evaluate_packet_grid(wp: "WavePacket", points: np.ndarray) -> np.ndarray:
    """Evaluate the packet sum on an array of points with shape (..., D)."""
    pts = np.asarray(points, dtype=float)
    out = np.zeros(pts.shape[:-1], dtype=complex)
    for g in wp.gwps:
        u = pts - g.q
        quad = np.einsum("...i,ij,...j->...", u, g.A, u)
        lin = u @ g.p
        out += np.exp(1j * (quad + lin + g.gamma))
    return out


@dataclass(frozen=True)
class WavePacket:
    """An unnormalized superposition of Gaussian wave packets."""

    gwps: tuple

    def __post_init__(self):
        gwps = tuple(self.gwps)
        if not gwps:
            raise InvariantBroken("a wave packet needs at least one Gaussian")
        d = gwps[0].dim
        if any(g.dim != d for g in gwps):
            raise InvariantBroken("all Gaussians must share one dimension")
        object.__setattr__(self, "gwps", gwps)

    @property
    def dim(self) -> int:
        return self.gwps[0].dim

    @property
    def n_gwp(self) -> int:
        return len(self.gwps)

    def stacked(self):
        """Return stacked parameter arrays (A, p, q, gamma)."""
        A = np.stack([g.A for g in self.gwps])
        p = np.stack([g.p for g in self.gwps])
        q = np.stack([g.q for g in self.gwps])
        gamma = np.array([g.gamma for g in self.gwps], dtype=complex)
        return A, p, q, gamma

    def gamma_i(self) -> np.ndarray:
        return np.array([g.gamma.imag for g in self.gwps])


@dataclass(frozen=True)
class WidthFactors:
    """Linear width factors B, C with A = (1/2) B C^-1 per Gaussian.

    Propagating B and C instead of A turns the quadratically nonlinear
    width equation into a pair of linear ones, which removes the fast
    rotation of A itself from the integrated state.
    """

    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=complex)
        C = np.asarray(self.C, dtype=complex)
        if B.ndim != 3 or B.shape != C.shape or B.shape[1] != B.shape[2]:
            raise InvariantBroken(f"bad width factor shapes {B.shape}, {C.shape}")
        conds = np.array([np.linalg.cond(Ck) for Ck in C])
        if not np.all(np.isfinite(conds)) or conds.max() > 1e12:
            raise InvariantBroken("width factor C is numerically singular")
        A = 0.5 * B @ np.linalg.inv(C)
        scale = max(1.0, float(np.abs(A).max()))
        asym = float(np.abs(A - A.swapaxes(-1, -2)).max())
        # reconstruction tolerance is looser than TOL_SYM: one inversion is involved
        if asym > 1e-8 * scale:
            raise InvariantBroken(
                f"B C^-1 / 2 is not symmetric (|M - M^T| = {asym:.3e})"
            )
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "C", _frozen(C))

    @classmethod
    def from_packet(cls, wp: WavePacket) -> "WidthFactors":
        """Initial factors B = 2A, C = identity."""
        A = np.stack([g.A for g in wp.gwps])
        eye = np.broadcast_to(np.eye(wp.dim, dtype=complex), A.shape).copy()
        return cls(B=2.0 * A, C=eye)

    def a_matrices(self) -> np.ndarray:
        """Width matrices (1/2) B C^-1, symmetrized against roundoff."""
        A = 0.5 * self.B @ np.linalg.inv(self.C)
        return 0.5 * (A + A.swapaxes(-1, -2))
