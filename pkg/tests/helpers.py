"""Shared random-state builders for the test suite.

All randomness comes from explicitly seeded generators so every test run
is reproducible.
"""
import numpy as np

from gwpdyn.gaussians import GaussianParams, WavePacket


def random_width_matrix(rng, dim, re_scale=0.4, im_lo=0.3, im_hi=1.5):
    """Random admissible width matrix: symmetric, Im part SPD."""
    Ar = rng.normal(scale=re_scale, size=(dim, dim))
    Ar = 0.5 * (Ar + Ar.T)
    Q = np.linalg.qr(rng.normal(size=(dim, dim)))[0]
    Ai = Q @ np.diag(rng.uniform(im_lo, im_hi, size=dim)) @ Q.T
    Ai = 0.5 * (Ai + Ai.T)
    return Ar + 1j * Ai


def random_gwp(rng, dim, pq_scale=1.0, gamma_scale=0.5, **width_kw):
    return GaussianParams(
        A=random_width_matrix(rng, dim, **width_kw),
        p=rng.normal(scale=pq_scale, size=dim),
        q=rng.normal(scale=pq_scale, size=dim),
        gamma=complex(rng.normal(scale=gamma_scale),
                      rng.normal(scale=gamma_scale)),
    )


def random_packet(rng, n_gwp, dim, **kw):
    return WavePacket(tuple(random_gwp(rng, dim, **kw) for _ in range(n_gwp)))


def random_alpha(rng, dim, max_total):
    """Random exponent multi-index with total degree <= max_total."""
    total = int(rng.integers(0, max_total + 1))
    alpha = np.zeros(dim, dtype=int)
    for _ in range(total):
        alpha[rng.integers(0, dim)] += 1
    return tuple(int(a) for a in alpha)
