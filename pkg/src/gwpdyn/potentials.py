"""Polynomial potential surfaces.

Potentials are stored as a sparse map from exponent multi-indices to real
coefficients, V(x) = sum_t c_t * prod_i x_i^t_i.  That restriction is what
makes every matrix element of V between Gaussians available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import InvariantBroken, NoMinimum


@dataclass(frozen=True)
class PolynomialPotential:
    """Real polynomial potential in D dimensions.

    Attributes
    ----------
    terms : dict
        Maps exponent tuples (length D, nonnegative ints) to coefficients.
    dim : int
    max_degree : int
        Largest total degree among the stored terms (0 for an empty map).
    """

    terms: dict
    dim: int
    max_degree: int = field(init=False)

    def __post_init__(self):
        clean = {}
        for key, coeff in dict(self.terms).items():
            key = tuple(int(e) for e in key)
            coeff = float(coeff)
            if len(key) != self.dim or any(e < 0 for e in key):
                raise InvariantBroken(f"bad exponent tuple {key} for dim {self.dim}")
            if not np.isfinite(coeff):
                raise InvariantBroken(f"non-finite coefficient for term {key}")
            if coeff != 0.0:
                clean[key] = clean.get(key, 0.0) + coeff
        object.__setattr__(self, "terms", clean)
        degree = max((sum(k) for k in clean), default=0)
        object.__setattr__(self, "max_degree", degree)

    def evaluate(self, x) -> np.ndarray:
        """V at points x with shape (..., D); returns shape (...)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for key, coeff in self.terms.items():
            term = np.full(x.shape[:-1], coeff)
            for i, e in enumerate(key):
                if e:
                    term = term * x[..., i] ** e
            out += term
        return out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for key, coeff in self.terms.items():
            for i, e in enumerate(key):
                if e == 0:
                    continue
                term = np.full(x.shape[:-1], coeff * e)
                for j, ej in enumerate(key):
                    pw = ej - 1 if j == i else ej
                    if pw:
                        term = term * x[..., j] ** pw
                out[..., i] += term
        return out

    def hessian(self, x) -> np.ndarray:
        """Second derivative matrix at a single point x of shape (D,)."""
        x = np.asarray(x, dtype=float)
        H = np.zeros((self.dim, self.dim))
        for key, coeff in self.terms.items():
            for i in range(self.dim):
                for j in range(self.dim):
                    ei, ej = key[i], key[j]
                    if i == j:
                        if ei < 2:
                            continue
                        factor = coeff * ei * (ei - 1)
                    else:
                        if ei < 1 or ej < 1:
                            continue
                        factor = coeff * ei * ej
                    term = factor
                    for m, em in enumerate(key):
                        pw = em - (2 if m == i and i == j else 0)
                        if i != j and (m == i or m == j):
                            pw = em - 1
                        if pw:
                            term = term * x[m] ** pw
                    H[i, j] += term
        return H


def build_diamagnetic_kepler(alpha_c: float = 0.5, beta_c: float = 0.2) -> PolynomialPotential:
    """Regularized two-dimensional hydrogen-in-a-magnetic-field surface.

    V(mu, nu) = alpha_c (mu^2 + nu^2) + (beta_c^2 / 8) mu^2 nu^2 (mu^2 + nu^2)
    """
    b = beta_c * beta_c / 8.0
    terms = {
        (2, 0): alpha_c,
        (0, 2): alpha_c,
        (4, 2): b,
        (2, 4): b,
    }
    return PolynomialPotential(terms=terms, dim=2)


def build_harmonic(omegas) -> PolynomialPotential:
    """Separable harmonic potential V = sum_i omega_i^2 x_i^2 / 2."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    d = omegas.shape[0]
    terms = {}
    for i, w in enumerate(omegas):
        key = tuple(2 if j == i else 0 for j in range(d))
        terms[key] = 0.5 * w * w
    return PolynomialPotential(terms=terms, dim=d)


def find_minimum(V: PolynomialPotential, starts=None) -> np.ndarray:
    """Locate an interior minimum of V with positive definite curvature.

    Raises NoMinimum when no stationary point with positive definite
    Hessian is found from the default starting points.
    """
    if starts is None:
        starts = [np.zeros(V.dim)]
        rng = np.random.default_rng(0)
        starts += [0.5 * rng.standard_normal(V.dim) for _ in range(4)]
    best = None
    for x0 in starts:
        res = optimize.minimize(
            lambda x: float(V.evaluate(x)),
            np.asarray(x0, dtype=float),
            jac=lambda x: V.gradient(x),
            method="BFGS",
            options={"gtol": 1e-12, "maxiter": 500},
        )
        if not np.all(np.isfinite(res.x)):
            continue
        grad = V.gradient(res.x)
        if np.linalg.norm(grad) > 1e-8:
            continue
        H = V.hessian(res.x)
        if np.linalg.eigvalsh(H).min() > 1e-10:
            if best is None or res.fun < best[1]:
                best = (res.x, res.fun)
    if best is None:
        raise NoMinimum("no interior minimum with positive curvature found")
    return best[0]
