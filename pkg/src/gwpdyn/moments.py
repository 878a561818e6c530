"""Closed-form moment integrals between Gaussian wave packets.

Every integral <g_l | x^alpha | g_k> reduces to a single complex Gaussian:
the product of conj(g_l) and g_k has exponent -x.P.x/2 + b.x + c with a
complex symmetric P whose real part is positive definite whenever both
width matrices are admissible.  Completing the square maps the integral
onto polynomial moments of a Gaussian with complex mean P^-1 b and complex
covariance P^-1, which satisfy the same one-step recurrence as real
Gaussian moments.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import DegreeUnsupported, InvariantBroken, NonIntegrable
from .gaussians import GaussianParams, WavePacket

DEFAULT_DEGREE_CAP = 12


@lru_cache(maxsize=None)
def multi_indices(dim: int, max_degree: int) -> tuple:
    """All exponent tuples of total degree <= max_degree, graded order."""
    out = []
    for deg in range(max_degree + 1):
        level = []

        def rec(prefix, remaining, slots):
            if slots == 1:
                level.append(prefix + (remaining,))
                return
            for e in range(remaining, -1, -1):
                rec(prefix + (e,), remaining - e, slots - 1)

        rec((), deg, dim)
        out.extend(level)
    return tuple(out)


def _eigvals_posreal(P: np.ndarray) -> np.ndarray:
    """Eigenvalues of batched small complex symmetric matrices.

    Closed forms for D <= 2 keep this off the LAPACK path, which matters
    because it runs on every right-hand-side evaluation.
    """
    d = P.shape[-1]
    if d == 1:
        return P[..., 0, 0][..., None]
    if d == 2:
        tr = P[..., 0, 0] + P[..., 1, 1]
        det = P[..., 0, 0] * P[..., 1, 1] - P[..., 0, 1] * P[..., 1, 0]
        disc = np.sqrt(tr * tr - 4.0 * det)
        return np.stack([(tr + disc) / 2.0, (tr - disc) / 2.0], axis=-1)
    return np.linalg.eigvals(P)


class PairTables:
    """Moment tables for all bra/ket Gaussian pairs of two packets.

    ``integral(alpha)`` returns the (L, K) matrix of <g_bra_l | x^alpha |
    g_ket_k>.  The prefactor (the plain overlap) and the normalized moment
    tables are kept separate so one pass serves every requested monomial.
    """

    def __init__(self, pref, tables, dim, max_degree):
        self.pref = pref
        self.tables = tables
        self.dim = dim
        self.max_degree = max_degree

    def integral(self, alpha) -> np.ndarray:
        alpha = tuple(int(a) for a in np.atleast_1d(alpha))
        if sum(alpha) > self.max_degree:
            raise DegreeUnsupported(
                f"moment degree {sum(alpha)} above computed table degree "
                f"{self.max_degree}"
            )
        return self.pref * self.tables[alpha]


def pair_tables(bra: WavePacket, ket: WavePacket, max_degree: int,
                degree_cap: int = DEFAULT_DEGREE_CAP) -> PairTables:
    """Build moment tables between all Gaussians of two packets."""
    if bra.dim != ket.dim:
        raise InvariantBroken("bra and ket packets differ in dimension")
    if max_degree > degree_cap:
        raise DegreeUnsupported(
            f"requested degree {max_degree} above cap {degree_cap}"
        )
    d = bra.dim
    Al, pl, ql, gl = bra.stacked()
    Ak, pk, qk, gk = ket.stacked()
    Alc = Al.conj()

    # combined exponent of conj(g_l) g_k:  x.M.x + b.x + c  with M = -P/2
    P = -2j * (Ak[None, :] - Alc[:, None])
    Akqk = np.einsum("kij,kj->ki", Ak, qk)
    Alql = np.einsum("lij,lj->li", Alc, ql)
    b = 1j * (pk[None, :] - pl[:, None] - 2.0 * Akqk[None, :] + 2.0 * Alql[:, None])
    c = 1j * (
        np.einsum("ki,ki->k", qk, Akqk)[None, :]
        - np.einsum("li,li->l", ql, Alql)[:, None]
        - np.einsum("ki,ki->k", pk, qk)[None, :]
        + np.einsum("li,li->l", pl, ql)[:, None]
        + gk[None, :]
        - gl.conj()[:, None]
    )

    lam = _eigvals_posreal(P)
    if lam.real.min() <= 0.0:
        raise NonIntegrable("pair integral diverges: combined width not damping")
    Sigma = np.linalg.inv(P)
    m = np.einsum("lkij,lkj->lki", Sigma, b)
    # branch-safe 1/sqrt(det P): principal root per eigenvalue, Re > 0
    det_isqrt = np.prod(lam ** -0.5, axis=-1)
    pref = (2.0 * np.pi) ** (d / 2.0) * det_isqrt * np.exp(c + 0.5 * np.einsum("lki,lki->lk", b, m))

    zero = (0,) * d
    tables = {zero: np.ones_like(c)}
    for beta in multi_indices(d, max_degree):
        if beta == zero:
            continue
        j = next(i for i, e in enumerate(beta) if e > 0)
        base = list(beta)
        base[j] -= 1
        base = tuple(base)
        val = m[..., j] * tables[base]
        for i in range(d):
            if base[i] > 0:
                lower = list(base)
                lower[i] -= 1
                val = val + Sigma[..., j, i] * base[i] * tables[tuple(lower)]
        tables[beta] = val
    return PairTables(pref, tables, d, max_degree)


def pair_moment(g_l: GaussianParams, g_k: GaussianParams, alpha,
                degree_cap: int = DEFAULT_DEGREE_CAP) -> complex:
    """<g_l | x^alpha | g_k> for one bra/ket pair.

    Parameters
    ----------
    alpha : sequence of int
        Exponent multi-index; its total degree must not exceed degree_cap.
    """
    alpha = tuple(int(a) for a in np.atleast_1d(alpha))
    if len(alpha) != g_l.dim:
        raise InvariantBroken(f"multi-index {alpha} does not match dim {g_l.dim}")
    tabs = pair_tables(WavePacket((g_l,)), WavePacket((g_k,)),
                       max_degree=sum(alpha), degree_cap=degree_cap)
    return complex(tabs.integral(alpha)[0, 0])


def potential_moment(g_l: GaussianParams, g_k: GaussianParams, alpha, V,
                     degree_cap: int = DEFAULT_DEGREE_CAP) -> complex:
    """<g_l | x^alpha V(x) | g_k> for a polynomial potential V."""
    alpha = tuple(int(a) for a in np.atleast_1d(alpha))
    need = sum(alpha) + V.max_degree
    tabs = pair_tables(WavePacket((g_l,)), WavePacket((g_k,)),
                       max_degree=need, degree_cap=degree_cap)
    out = 0.0 + 0.0j
    for key, coeff in V.terms.items():
        merged = tuple(a + e for a, e in zip(alpha, key))
        out += coeff * tabs.integral(merged)[0, 0]
    return complex(out)


def overlap_matrix(wp: WavePacket) -> np.ndarray:
    """Matrix of plain overlaps <g_l | g_k>."""
    tabs = pair_tables(wp, wp, 0)
    return tabs.integral((0,) * wp.dim)


def norm(wp: WavePacket) -> float:
    """Norm of the full packet sum; the imaginary residue must vanish."""
    total = complex(overlap_matrix(wp).sum())
    if abs(total.imag) > 1e-10 * max(1.0, abs(total.real)):
        raise InvariantBroken(
            f"norm^2 has imaginary residue {total.imag:.3e}"
        )
    if total.real < 0.0:
        raise InvariantBroken(f"norm^2 is negative: {total.real:.3e}")
    return float(np.sqrt(total.real))
