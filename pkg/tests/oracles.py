"""Independent reference implementations used to validate the package.

Nothing in here may call into the analytic moment machinery under test:
evaluation is a direct term-by-term expansion of the exponent, and the
integrals are adaptive tensor quadrature on a box chosen from the decay
of the integrand alone.
"""
import numpy as np


def eval_gwp_direct(g, x):
    """Direct scalar expansion of exp(i((x-q).A.(x-q) + p.(x-q) + gamma))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    expo = 1j * g.gamma
    for i in range(d):
        expo += 1j * g.p[i] * (x[i] - g.q[i])
        for j in range(d):
            expo += 1j * (x[i] - g.q[i]) * g.A[i, j] * (x[j] - g.q[j])
    return np.exp(expo)


def _decay_box(g_l, g_k, n_sigma=9.0):
    """Axis box that contains the donut of |conj(g_l) g_k| essentially fully.

    The magnitude decays like exp(-u.W.u) around the W-weighted average of
    the two centers, with W the sum of the imaginary width parts.
    """
    W = g_l.A.imag + g_k.A.imag
    rhs = g_l.A.imag @ g_l.q + g_k.A.imag @ g_k.q
    center = np.linalg.solve(W, rhs)
    sigma = 1.0 / np.sqrt(np.linalg.eigvalsh(W).min())
    half = n_sigma * sigma
    lo = np.minimum(center - half, np.minimum(g_l.q, g_k.q) - 3.0 * sigma)
    hi = np.maximum(center + half, np.maximum(g_l.q, g_k.q) + 3.0 * sigma)
    return lo, hi


def quad_pair_moment(g_l, g_k, alpha, rtol=5e-11, n_start=48, n_max=1600):
    """<g_l|x^alpha|g_k> by adaptive tensor Gauss-Legendre quadrature.

    The order doubles until two successive levels agree to rtol in both
    real and imaginary part (relative to the larger magnitude).
    """
    d = g_l.p.shape[0]
    lo, hi = _decay_box(g_l, g_k)

    def integrand(pts):
        u_l = pts - g_l.q
        u_k = pts - g_k.q
        phase = (
            np.einsum("...i,ij,...j->...", u_k, g_k.A, u_k)
            - np.einsum("...i,ij,...j->...", u_l, g_l.A.conj(), u_l)
            + u_k @ g_k.p - u_l @ g_l.p
            + g_k.gamma - np.conj(g_l.gamma)
        )
        val = np.exp(1j * phase)
        for i, e in enumerate(alpha):
            if e:
                val = val * pts[..., i] ** e
        return val

    prev = None
    n = n_start
    while n <= n_max:
        nodes, weights = np.polynomial.legendre.leggauss(n)
        axes = []
        wts = []
        for i in range(d):
            scale = 0.5 * (hi[i] - lo[i])
            axes.append(lo[i] + scale * (nodes + 1.0))
            wts.append(scale * weights)
        if d == 1:
            pts = axes[0][:, None]
            w = wts[0]
        else:
            X = np.meshgrid(*axes, indexing="ij")
            pts = np.stack(X, axis=-1)
            w = wts[0][:, None] * wts[1][None, :]
            for i in range(2, d):
                w = w[..., None] * wts[i]
        total = np.sum(integrand(pts) * w)
        if prev is not None:
            scale = max(abs(total), abs(prev), 1e-300)
            if abs(total - prev) <= rtol * scale:
                return total
        prev = total
        n = int(n * 1.6) + 1
    raise RuntimeError(f"quadrature failed to converge below n={n_max}")


def grid_fit_coefficients(wp, V, monomials, half=9.0, n=241):
    """Least-squares fit of the generator polynomial on a dense grid.

    Builds the design matrix of x^mu g^k(x) over a uniform grid and fits
    V(x) * packet(x) in the plain least-squares sense, which is the same
    minimization the variational solve performs analytically.
    """
    d = wp.dim
    centers = np.stack([g.q for g in wp.gwps])
    lo = centers.min(axis=0) - half
    hi = centers.max(axis=0) + half
    axes = [np.linspace(lo[i], hi[i], n) for i in range(d)]
    X = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(X, axis=-1).reshape(-1, d)

    cols = []
    for g in wp.gwps:
        base = np.array([eval_gwp_direct(g, x) for x in pts])
        for beta in monomials:
            mono = np.ones(len(pts))
            for i, e in enumerate(beta):
                if e:
                    mono = mono * pts[:, i] ** e
            cols.append(mono * base)
    design = np.stack(cols, axis=1)
    chi = np.zeros(len(pts), dtype=complex)
    for g in wp.gwps:
        chi += np.array([eval_gwp_direct(g, x) for x in pts])
    target = V.evaluate(pts) * chi
    coeffs, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coeffs.reshape(wp.n_gwp, len(monomials))
