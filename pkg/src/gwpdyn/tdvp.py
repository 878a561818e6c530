"""Variational equations of motion for coupled Gaussian wave packets.

The time derivative of the packet is represented as a per-Gaussian
quadratic polynomial with coefficients (v0^k, v1^k, V2^k).  Minimizing the
residual between i * d/dt of the ansatz and H applied to it yields normal
equations  K v = r  whose matrix K is the Gram matrix of the functions
x^mu g^k for all monomials of total degree <= 2, and whose right-hand side
contains the matrix elements of the potential.  Solving that system and
feeding the coefficients through the chain rule gives the ordinary
differential equations for every Gaussian parameter.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import LinAlgWarning, get_lapack_funcs, lu_factor, lu_solve

from .errors import DegreeUnsupported, IllConditioned
from .gaussians import WavePacket, WidthFactors
from .moments import DEFAULT_DEGREE_CAP, multi_indices, pair_tables
from .potentials import PolynomialPotential

DEFAULT_COND_MAX = 1e12


@lru_cache(maxsize=None)
def monomial_basis(dim: int) -> tuple:
    """Monomials spanning quadratic polynomials, in documented order.

    [1, x_1 .. x_D, x_1 x_1, x_1 x_2, .., x_D x_D] with each mixed product
    counted once (upper triangle, row-major).  This is the column and row
    ordering of the variational linear system.
    """
    return multi_indices(dim, 2)


def basis_size(dim: int) -> int:
    return 1 + dim + dim * (dim + 1) // 2


@dataclass
class CoefficientSet:
    """Per-Gaussian polynomial coefficients of the local generator.

    v0 is the scalar term, v1 the linear term and V2 the symmetric
    quadratic form, i.e. the polynomial is v0 + v1.x + x.V2.x / 2.
    """

    v0: np.ndarray
    v1: np.ndarray
    V2: np.ndarray

    @property
    def n_gwp(self) -> int:
        return self.v0.shape[0]

    @property
    def dim(self) -> int:
        return self.v1.shape[1]

    def monomial(self) -> np.ndarray:
        """Coefficients in the monomial basis, shape (N, n_basis).

        The diagonal entries of V2 pick up the 1/2 from the quadratic
        form; off-diagonal pairs merge into a single monomial column.
        """
        n, d = self.n_gwp, self.dim
        basis = monomial_basis(d)
        c = np.zeros((n, len(basis)), dtype=complex)
        c[:, 0] = self.v0
        c[:, 1:1 + d] = self.v1
        col = 1 + d
        for i in range(d):
            for j in range(i, d):
                if i == j:
                    c[:, col] = 0.5 * self.V2[:, i, i]
                else:
                    c[:, col] = self.V2[:, i, j]
                col += 1
        return c

    @classmethod
    def from_monomial(cls, c: np.ndarray, dim: int) -> "CoefficientSet":
        n = c.shape[0]
        v0 = c[:, 0].copy()
        v1 = c[:, 1:1 + dim].copy()
        V2 = np.zeros((n, dim, dim), dtype=complex)
        col = 1 + dim
        for i in range(dim):
            for j in range(i, dim):
                if i == j:
                    V2[:, i, i] = 2.0 * c[:, col]
                else:
                    V2[:, i, j] = c[:, col]
                    V2[:, j, i] = c[:, col]
                col += 1
        return cls(v0=v0, v1=v1, V2=V2)

    def real_stack(self) -> np.ndarray:
        c = self.monomial().ravel()
        return np.concatenate([c.real, c.imag])

    @classmethod
    def from_real_stack(cls, v: np.ndarray, n_gwp: int, dim: int) -> "CoefficientSet":
        nc = n_gwp * basis_size(dim)
        c = (v[:nc] + 1j * v[nc:]).reshape(n_gwp, basis_size(dim))
        return cls.from_monomial(c, dim)


@dataclass
class ParameterDerivatives:
    """Time derivatives of every Gaussian parameter (stacked over GWPs)."""

    A_dot: np.ndarray
    p_dot: np.ndarray
    q_dot: np.ndarray
    gamma_dot: np.ndarray
    B_dot: np.ndarray | None = None
    C_dot: np.ndarray | None = None


class MomentSystem:
    """Assembled variational linear system K v = r.

    Holds the complex Hermitian K together with its real embedding
    K_bar = [[Re K, -Im K], [Im K, Re K]], which is symmetric positive
    semidefinite and is the form actually factored: constraint rows are
    naturally real, so the constrained solve works on the real stacking.

    Near-coincident Gaussians push K toward singularity.  The solve stays
    a plain factored one even then: the roundoff it amplifies lands along
    near-null directions the wavefunction barely feels, and the step
    controller rejects what leaks through.  Callers that want a hard stop
    instead gate on `cond_estimate`.
    """

    def __init__(self, K, r, gamma_i, overlaps, dim, n_gwp):
        self.K = K
        self.r = r
        self.gamma_i = gamma_i
        self.overlaps = overlaps
        self.dim = dim
        self.n_gwp = n_gwp
        self._factored = None
        self._w_bar = None

    @property
    def size(self) -> int:
        return self.K.shape[0]

    @property
    def real_size(self) -> int:
        return 2 * self.K.shape[0]

    @property
    def K_bar(self) -> np.ndarray:
        Kr, Ki = self.K.real, self.K.imag
        return np.block([[Kr, -Ki], [Ki, Kr]])

    @property
    def r_bar(self) -> np.ndarray:
        return np.concatenate([self.r.real, self.r.imag])

    def _factor(self):
        if self._factored is None:
            Kb = self.K_bar
            anorm = np.abs(Kb).sum(axis=0).max()
            with warnings.catch_warnings():
                # a zero pivot is expected near singularity; the condition
                # estimate below reports it to the callers that gate on it
                warnings.simplefilter("ignore", LinAlgWarning)
                lu, piv = lu_factor(Kb, check_finite=False)
            gecon = get_lapack_funcs("gecon", (Kb,))
            rcond, info = gecon(lu, anorm, norm="1")
            cond = np.inf if rcond == 0.0 or info != 0 else 1.0 / rcond
            self._factored = (lu, piv, float(cond))
        return self._factored

    @property
    def cond_estimate(self) -> float:
        return self._factor()[2]

    def solve_kbar(self, rhs: np.ndarray) -> np.ndarray:
        lu, piv, _ = self._factor()
        return lu_solve((lu, piv), rhs, check_finite=False)

    @property
    def w_bar(self) -> np.ndarray:
        """Solution of the unconstrained system in real stacking (cached)."""
        if self._w_bar is None:
            self._w_bar = self.solve_kbar(self.r_bar)
        return self._w_bar

    def diagnostics(self):
        """Amplitude extremes and the largest normalized pair overlap."""
        gi = self.gamma_i
        lo_k, hi_k = int(np.argmin(gi)), int(np.argmax(gi))
        extremes = (lo_k, float(gi[lo_k]), hi_k, float(gi[hi_k]))
        S = self.overlaps
        d = np.sqrt(np.abs(np.diag(S)))
        with np.errstate(invalid="ignore", divide="ignore"):
            Sn = np.abs(S) / np.outer(d, d)
        np.fill_diagonal(Sn, 0.0)
        idx = np.unravel_index(np.argmax(Sn), Sn.shape)
        return extremes, ((int(idx[0]), int(idx[1])), float(Sn[idx]))


def assemble_system(wp: WavePacket, V: PolynomialPotential,
                    degree_cap: int = DEFAULT_DEGREE_CAP) -> MomentSystem:
    """Build the variational system K v = r at the current packet state.

    K entries are pair moments of total degree <= 4; the right-hand side
    needs degree <= 2 + deg V, so the potential degree is limited by the
    moment engine's cap.
    """
    d, n = wp.dim, wp.n_gwp
    need = max(4, 2 + V.max_degree)
    if need > degree_cap:
        raise DegreeUnsupported(
            f"potential degree {V.max_degree} needs moments of degree {need}, "
            f"cap is {degree_cap}"
        )
    tabs = pair_tables(wp, wp, need, degree_cap)
    basis = monomial_basis(d)
    nm = len(basis)

    K4 = np.empty((n, nm, n, nm), dtype=complex)
    for i, bi in enumerate(basis):
        for j, bj in enumerate(basis):
            if j < i:
                continue
            merged = tuple(a + b for a, b in zip(bi, bj))
            block = tabs.integral(merged)
            K4[:, i, :, j] = block
            if j > i:
                K4[:, j, :, i] = block
    K = K4.reshape(n * nm, n * nm)
    K = 0.5 * (K + K.conj().T)

    r2 = np.zeros((n, nm), dtype=complex)
    for key, coeff in V.terms.items():
        for i, bi in enumerate(basis):
            merged = tuple(a + b for a, b in zip(bi, key))
            r2[:, i] += coeff * tabs.integral(merged).sum(axis=1)
    r = r2.reshape(n * nm)

    overlaps = tabs.integral((0,) * d)
    return MomentSystem(K=K, r=r, gamma_i=wp.gamma_i(), overlaps=overlaps,
                        dim=d, n_gwp=n)


def solve_unconstrained(sys: MomentSystem,
                        cond_max: float = DEFAULT_COND_MAX) -> CoefficientSet:
    """Solve K v = r, rejecting numerically singular systems."""
    if sys.cond_estimate > cond_max:
        extremes, overlap = sys.diagnostics()
        raise IllConditioned(sys.cond_estimate, gamma_extremes=extremes,
                             max_overlap=overlap)
    return CoefficientSet.from_real_stack(sys.w_bar, sys.n_gwp, sys.dim)


def coefficients_to_derivatives(wp: WavePacket,
                                coeffs: CoefficientSet) -> ParameterDerivatives:
    """Chain rule from polynomial coefficients to parameter derivatives.

    Complex form: with s = (Im A)^-1 (Im v1 + Im V2 q) / 2,

        dA/dt     = -2 A A - V2 / 2
        dq/dt     = p + s
        dp/dt     = 2 Re(A) s - Re(v1) - Re(V2) q
        dgamma/dt = -v0 + i tr A + p.p/2 - v1.q - q.V2.q/2 + p.s
    """
    A, p, q, _ = wp.stacked()
    v0, v1, V2 = coeffs.v0, coeffs.v1, coeffs.V2

    Ai_inv = np.linalg.inv(A.imag)
    V2q = np.einsum("kij,kj->ki", V2, q)
    s = 0.5 * np.einsum("kij,kj->ki", Ai_inv, v1.imag + V2q.imag)

    A_dot = -2.0 * A @ A - 0.5 * V2
    q_dot = p + s
    p_dot = (2.0 * np.einsum("kij,kj->ki", A.real, s)
             - v1.real - np.einsum("kij,kj->ki", V2.real, q))
    trA = np.trace(A, axis1=1, axis2=2)
    gamma_dot = (-v0 + 1j * trA + 0.5 * np.einsum("ki,ki->k", p, p)
                 - np.einsum("ki,ki->k", v1, q)
                 - 0.5 * np.einsum("ki,ki->k", q, V2q)
                 + np.einsum("ki,ki->k", p, s).astype(complex))
    return ParameterDerivatives(A_dot=A_dot, p_dot=p_dot, q_dot=q_dot,
                                gamma_dot=gamma_dot)


def derivatives_real_form(wp: WavePacket,
                          coeffs: CoefficientSet) -> ParameterDerivatives:
    """Same equations split into real and imaginary parts.

    Kept as an independent implementation: agreement with the complex
    form is a self-consistency check between the two printed versions of
    the equations, and the imaginary-gamma line is reused verbatim by the
    amplitude constraint rows.
    """
    A, p, q, _ = wp.stacked()
    Ar, Ai = A.real.copy(), A.imag.copy()
    v0r, v0i = coeffs.v0.real, coeffs.v0.imag
    v1r, v1i = coeffs.v1.real, coeffs.v1.imag
    V2r, V2i = coeffs.V2.real, coeffs.V2.imag

    Lam = 0.5 * np.linalg.inv(Ai)
    V2iq = np.einsum("kij,kj->ki", V2i, q)
    V2rq = np.einsum("kij,kj->ki", V2r, q)
    Lv = np.einsum("kij,kj->ki", Lam, v1i + V2iq)

    Ar_dot = -0.5 * V2r - 2.0 * (Ar @ Ar - Ai @ Ai)
    Ai_dot = -0.5 * V2i - 2.0 * (Ar @ Ai + Ai @ Ar)
    q_dot = Lv + p
    p_dot = -v1r - V2rq + 2.0 * np.einsum("kij,kj->ki", Ar, Lv)
    trAr = np.trace(Ar, axis1=1, axis2=2)
    trAi = np.trace(Ai, axis1=1, axis2=2)
    pp = np.einsum("ki,ki->k", p, p)
    gr_dot = (-v0r - np.einsum("ki,ki->k", v1r, q)
              - 0.5 * np.einsum("ki,ki->k", q, V2rq)
              + np.einsum("ki,ki->k", p, Lv) - trAi + 0.5 * pp)
    gi_dot = (-v0i - np.einsum("ki,ki->k", v1i, q)
              - 0.5 * np.einsum("ki,ki->k", q, V2iq) + trAr)
    return ParameterDerivatives(A_dot=Ar_dot + 1j * Ai_dot, p_dot=p_dot,
                                q_dot=q_dot, gamma_dot=gr_dot + 1j * gi_dot)


def width_factor_derivatives(coeffs: CoefficientSet,
                             wf: WidthFactors):
    """Linear width factor equations dC/dt = B, dB/dt = -V2 C."""
    C_dot = wf.B.copy()
    B_dot = -coeffs.V2 @ wf.C
    return C_dot, B_dot


def residual_gap(sys: MomentSystem, v_a: CoefficientSet,
                 v_b: CoefficientSet) -> float:
    """Difference of least-squares objectives I(v_a) - I(v_b).

    I(v) = v.K_bar.v - 2 r_bar.v up to a v-independent constant, so the
    gap between a constrained and the unconstrained solution is exactly
    the (nonnegative) optimality price of the constraints.
    """
    Kb, rb = sys.K_bar, sys.r_bar
    a = v_a.real_stack()
    b = v_b.real_stack()
    ia = float(a @ (Kb @ a) - 2.0 * (rb @ a))
    ib = float(b @ (Kb @ b) - 2.0 * (rb @ b))
    return ia - ib
