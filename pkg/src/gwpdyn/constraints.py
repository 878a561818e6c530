"""Inequality constraints on packet parameters via Lagrange multipliers.

Amplitude bounds keep Im gamma^k inside [gamma_min, gamma_max].  While a
bound is active the corresponding Gaussian's amplitude is held fixed by
adding the row "d/dt Im gamma^k = 0" to the variational least-squares
problem; the row is linear in the polynomial coefficients, so the
constrained solve stays a small KKT system on top of the factored normal
equations.  Width freezing reuses the same mechanism with permanent rows
that zero the width-matrix derivative, which realizes frozen-Gaussian
propagation inside the same integrator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (IllConditioned, InvariantBroken,
                     RankDeficientConstraints, SingularConstraintSystem,
                     TooManyConstraints)
from .gaussians import WavePacket
from .tdvp import (CoefficientSet, MomentSystem, basis_size, monomial_basis,
                   solve_unconstrained)

AMPLITUDE_LOWER = "amplitude_lower"
AMPLITUDE_UPPER = "amplitude_upper"
FROZEN_WIDTH = "frozen_width"

_KINDS = (AMPLITUDE_LOWER, AMPLITUDE_UPPER, FROZEN_WIDTH)

DEFAULT_M_MAX = 16


@dataclass(frozen=True)
class ConstraintSpec:
    """One declared constraint.

    kind is one of "amplitude_lower", "amplitude_upper", "frozen_width".
    Amplitude kinds need a bound; target selects one Gaussian by index or
    every Gaussian when None.  frozen_width is always permanent: it is
    installed at the start of a run and never released.
    """

    kind: str
    bound: float | None = None
    target: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvariantBroken(f"unknown constraint kind {self.kind!r}")
        if self.kind in (AMPLITUDE_LOWER, AMPLITUDE_UPPER):
            if self.bound is None or not np.isfinite(self.bound):
                raise InvariantBroken(f"{self.kind} needs a finite bound")
        elif self.bound is not None:
            raise InvariantBroken("frozen_width takes no bound")

    @property
    def permanent(self) -> bool:
        return self.kind == FROZEN_WIDTH

    def rows_per_gwp(self, dim: int) -> int:
        if self.kind == FROZEN_WIDTH:
            return dim * (dim + 1)
        return 1


def expand_specs(specs, n_gwp: int) -> list:
    """Resolve target=None specs into one concrete spec per Gaussian."""
    concrete = []
    seen = set()
    for spec in specs:
        targets = range(n_gwp) if spec.target is None else [spec.target]
        for k in targets:
            if not 0 <= k < n_gwp:
                raise InvariantBroken(f"constraint target {k} out of range")
            key = (spec.kind, k)
            if key in seen:
                raise InvariantBroken(f"duplicate constraint {key}")
            seen.add(key)
            concrete.append(ConstraintSpec(spec.kind, spec.bound, k))
    lower = {s.target: s.bound for s in concrete if s.kind == AMPLITUDE_LOWER}
    for s in concrete:
        if s.kind == AMPLITUDE_UPPER and s.target in lower:
            if not lower[s.target] < s.bound:
                raise InvariantBroken(
                    f"gamma_min {lower[s.target]} must lie below gamma_max "
                    f"{s.bound} for Gaussian {s.target}"
                )
    return concrete


@dataclass
class ActiveEntry:
    spec: ConstraintSpec
    t_on: float
    n_rows: int


class ActiveSet:
    """Currently active constraints plus their latest assembled rows.

    m counts scalar rows (one per amplitude bound, D(D+1) per frozen
    width).  m_max caps only the runtime-activated amplitude rows;
    permanent width rows are structural and exempt from the cap.
    """

    def __init__(self, m_max: int = DEFAULT_M_MAX):
        self.entries: list[ActiveEntry] = []
        self.m_max = m_max
        self.U_bar: np.ndarray | None = None
        self.d_bar: np.ndarray | None = None
        self.lam: np.ndarray | None = None

    @property
    def m(self) -> int:
        return sum(e.n_rows for e in self.entries)

    @property
    def m_dynamic(self) -> int:
        return sum(e.n_rows for e in self.entries if not e.spec.permanent)

    def is_active(self, kind: str, target: int) -> bool:
        return any(e.spec.kind == kind and e.spec.target == target
                   for e in self.entries)

    def activate(self, spec: ConstraintSpec, t: float, dim: int) -> ActiveEntry:
        if spec.target is None:
            raise InvariantBroken("only concrete specs can be activated")
        if self.is_active(spec.kind, spec.target):
            raise InvariantBroken(
                f"constraint ({spec.kind}, {spec.target}) already active"
            )
        n_rows = spec.rows_per_gwp(dim)
        if not spec.permanent and self.m_dynamic + n_rows > self.m_max:
            raise TooManyConstraints(
                f"t={t:.9g}: {self.m_dynamic + n_rows} activated rows exceed "
                f"m_max={self.m_max}"
            )
        entry = ActiveEntry(spec=spec, t_on=t, n_rows=n_rows)
        self.entries.append(entry)
        self._invalidate()
        return entry

    def release(self, entry: ActiveEntry) -> None:
        if entry.spec.permanent:
            raise InvariantBroken("permanent constraints never deactivate")
        self.entries.remove(entry)
        self._invalidate()

    def _invalidate(self):
        self.U_bar = None
        self.d_bar = None
        self.lam = None


def _amplitude_row(U, d, row, wp, k, nc, nm, dim):
    """d/dt Im gamma^k as a linear form on the real coefficient stack.

    d/dt Im gamma^k = -Im P_k(q^k) + tr Re A^k with P_k the local
    polynomial, so the row is minus each monomial evaluated at q^k on the
    imaginary block, with the trace as the constant offset.
    """
    q = wp.gwps[k].q
    for j, beta in enumerate(monomial_basis(dim)):
        val = 1.0
        for i, e in enumerate(beta):
            if e:
                val *= q[i] ** e
        U[row, nc + k * nm + j] = -val
    d[row] = float(np.trace(wp.gwps[k].A.real))


def _frozen_rows(U, d, row0, wp, k, nc, nm, dim):
    """Rows forcing dA^k/dt = 0, real and imaginary parts separately.

    The width derivative is -V2/2 - 2AA; the V2 part is linear in the
    coefficients and the AA part enters the offset.
    """
    A = wp.gwps[k].A
    Ar, Ai = A.real, A.imag
    off_r = -2.0 * (Ar @ Ar - Ai @ Ai)
    off_i = -2.0 * (Ar @ Ai + Ai @ Ar)
    row = row0
    col0 = k * nm + 1 + dim
    col = col0
    for i in range(dim):
        for j in range(i, dim):
            w = -1.0 if i == j else -0.5
            U[row, col] = w
            d[row] = off_r[i, j]
            U[row + 1, nc + col] = w
            d[row + 1] = off_i[i, j]
            row += 2
            col += 1
    return row


def constraint_rows(wp: WavePacket, active: ActiveSet):
    """Assemble (U_bar, d_bar) with U_bar v_bar + d_bar = 0 when enforced.

    The rows are cached on the active set so the deactivation test can
    reuse them against the same system.
    """
    dim = wp.dim
    nm = basis_size(dim)
    nc = wp.n_gwp * nm
    m = active.m
    U = np.zeros((m, 2 * nc))
    d = np.zeros(m)
    row = 0
    for entry in active.entries:
        k = entry.spec.target
        if entry.spec.kind == FROZEN_WIDTH:
            row = _frozen_rows(U, d, row, wp, k, nc, nm, dim)
        else:
            _amplitude_row(U, d, row, wp, k, nc, nm, dim)
            row += 1
    active.U_bar = U
    active.d_bar = d
    return U, d


def check_rows_independent(U: np.ndarray) -> None:
    if U.shape[0] == 0:
        return
    if np.linalg.matrix_rank(U) < U.shape[0]:
        raise RankDeficientConstraints(
            f"{U.shape[0]} active rows have rank {np.linalg.matrix_rank(U)}"
        )


def _cond_gate(sys: MomentSystem, cond_max: float) -> None:
    if sys.cond_estimate > cond_max:
        extremes, overlap = sys.diagnostics()
        raise IllConditioned(sys.cond_estimate, gamma_extremes=extremes,
                             max_overlap=overlap)


def _solve_saddle_lstsq(sys: MomentSystem, U, dvec):
    """Minimum-norm solve of the full saddle system.

    Rescue path for states where the Schur complement U Kbar^-1 U^T is
    numerically singular (near-coincident Gaussians make both the metric
    and redundant rows degenerate at once).  The stacked block system
    stays consistent there, so a least-squares solve still produces
    feasible coefficients; only a genuinely contradictory active set is
    reported as singular.
    """
    n, m = sys.real_size, U.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = sys.K_bar
    kkt[:n, n:] = U.T
    kkt[n:, :n] = U
    rhs = np.concatenate([sys.r_bar, -dvec])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    v, lam = sol[:n], sol[n:]
    infeas = np.abs(U @ v + dvec).max()
    if not np.isfinite(infeas) or infeas > 1e-8 * max(1.0, np.abs(dvec).max()):
        raise SingularConstraintSystem(
            f"active rows are inconsistent: residual {infeas:.3e}"
        )
    return v, lam


def solve_constrained(sys: MomentSystem, active: ActiveSet,
                      cond_max: float = 1e12):
    """KKT solve of the variational system under the active rows.

    With w the unconstrained solution and Y = K_bar^-1 U^T, the
    multipliers solve (U Y) lam = U w + d and the constrained
    coefficients are w - Y lam.  With no active rows this reduces exactly
    to the unconstrained solve.  A numerically singular projected system
    falls back to a minimum-norm solve of the stacked block equations.
    """
    if active is None or active.m == 0:
        coeffs = solve_unconstrained(sys, cond_max=cond_max)
        if active is not None:
            active.lam = np.zeros(0)
        return coeffs, np.zeros(0)
    if active.U_bar is None or active.U_bar.shape != (active.m, sys.real_size):
        raise InvariantBroken("constraint rows not assembled for this system")
    _cond_gate(sys, cond_max)
    U, dvec = active.U_bar, active.d_bar
    w = sys.w_bar
    Y = sys.solve_kbar(U.T)
    S = U @ Y
    rhs = U @ w + dvec
    cond_S = np.linalg.cond(S)
    if not np.isfinite(cond_S) or cond_S > 1e12:
        v, lam = _solve_saddle_lstsq(sys, U, dvec)
    else:
        lam = np.linalg.solve(S, rhs)
        v = w - Y @ lam
    active.lam = lam
    return CoefficientSet.from_real_stack(v, sys.n_gwp, sys.dim), lam


def activation_check(wp: WavePacket, specs, active: ActiveSet | None = None,
                     tol_act: float = 0.0) -> list:
    """Amplitude bounds violated (or touched) by the current state."""
    out = []
    gi = wp.gamma_i()
    for spec in specs:
        if spec.kind == FROZEN_WIDTH:
            continue
        if active is not None and active.is_active(spec.kind, spec.target):
            continue
        g = gi[spec.target]
        if spec.kind == AMPLITUDE_LOWER and g - spec.bound <= tol_act:
            out.append(spec)
        elif spec.kind == AMPLITUDE_UPPER and spec.bound - g <= tol_act:
            out.append(spec)
    return out


def deactivation_check(sys: MomentSystem, active: ActiveSet,
                       tol_rel: float = 0.0) -> list:
    """Entries whose bound would release if dropped right now.

    Evaluates each amplitude row against the unconstrained solution: a
    lower bound releases when the free dynamics would raise Im gamma
    (row value > tol_rel), an upper bound mirrors the sign.  Permanent
    entries are never returned.  Reuses the factorization already held by
    the system.
    """
    if active.m == 0:
        return []
    if active.U_bar is None:
        raise InvariantBroken("constraint rows not assembled for this system")
    fdot = active.U_bar @ sys.w_bar + active.d_bar
    out = []
    row = 0
    for entry in active.entries:
        if not entry.spec.permanent:
            val = fdot[row]
            if entry.spec.kind == AMPLITUDE_LOWER and val > tol_rel:
                out.append(entry)
            elif entry.spec.kind == AMPLITUDE_UPPER and val < -tol_rel:
                out.append(entry)
        row += entry.n_rows
    return out
