"""Adaptive propagation of a packet under the variational equations.

An embedded Dormand-Prince 5(4) pair drives the parameter ODEs with the
constrained least-squares solve as the right-hand side.  Width matrices
evolve by default through the linear factor system (C' = B, B' = -V2 C),
which removes the quadratic self-coupling of the width equation from the
stepped variables; direct width stepping stays available behind a flag.

Constraint activations are located in time by bisection on re-integrated
trial steps, so the state lands on the crossing within tol_event.
Releases are decided at accepted-step boundaries from the sign the
clamped rate would take if freed, with a one-step hysteresis so a bound
released at a boundary is not re-activated at that same boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import (
    DEFAULT_M_MAX,
    ActiveSet,
    ConstraintSpec,
    activation_check,
    check_rows_independent,
    constraint_rows,
    deactivation_check,
    expand_specs,
    solve_constrained,
)
from .errors import (
    ConfigError,
    GwpError,
    InvariantBroken,
    StepBudgetExceeded,
    StepSizeUnderflow,
)
from .gaussians import GaussianParams, WavePacket, WidthFactors
from .moments import DEFAULT_DEGREE_CAP
from .observables import autocorrelation, energy
from .potentials import PolynomialPotential, find_minimum
from .tdvp import (
    DEFAULT_COND_MAX,
    ParameterDerivatives,
    assemble_system,
    coefficients_to_derivatives,
)

# Dormand-Prince 5(4) tableau
_A_ROWS = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                 -17253 / 339200, 22 / 525, -1 / 40])

_REGAUGE_COND = 1e6   # re-anchor width factors when C passes this


@dataclass
class IntegratorConfig:
    """Knobs for one propagation run."""

    t_end: float
    rtol: float = 1e-8
    atol: float = 1e-10
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 0.5
    record_stride: float = 0.05
    tol_event: float = 1e-10
    cond_max: float = DEFAULT_COND_MAX
    m_max: int = DEFAULT_M_MAX
    width_mode: str = "bc"
    degree_cap: int = DEFAULT_DEGREE_CAP
    checkpoint_times: tuple = ()
    max_steps: int = 2_000_000

    def __post_init__(self):
        if self.width_mode not in ("bc", "direct"):
            raise InvariantBroken(f"unknown width_mode {self.width_mode!r}")
        if not (self.t_end > 0 and self.record_stride > 0):
            raise InvariantBroken("t_end and record_stride must be positive")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise InvariantBroken("need 0 < dt_min <= dt_init <= dt_max")


@dataclass
class StepRecord:
    """Telemetry sampled on the record grid and at constraint events.

    dt_used is the smallest accepted step since the previous record (the
    envelope that matters when steps shrink inside a window); it is NaN on
    the initial record.
    """

    t: float
    dt_used: float
    active_count: int
    cond_estimate: float
    norm: float
    energy: float
    gamma_i: np.ndarray


@dataclass
class ConstraintEvent:
    t: float
    action: str          # "on" or "off"
    kind: str
    target: int


@dataclass
class PropagationResult:
    records: list
    checkpoints: list    # (t, WavePacket) pairs
    final: WavePacket
    events: list
    n_steps: int
    min_dt: float
    autocorrelations: list | None = None


class _StateCodec:
    """Flat real vector <-> packet parameters, one block per Gaussian."""

    def __init__(self, n_gwp: int, dim: int, width_mode: str):
        self.n = n_gwp
        self.d = dim
        self.mode = width_mode
        nb = dim * dim
        self.nb = nb
        self.block = (4 * nb if width_mode == "bc" else 2 * nb) + 2 * dim + 2
        self.size = n_gwp * self.block

    def pack(self, wp: WavePacket, wf: WidthFactors | None) -> np.ndarray:
        A, p, q, gamma = wp.stacked()
        y = np.empty((self.n, self.block))
        nb, d = self.nb, self.d
        if self.mode == "bc":
            if wf is None:
                wf = WidthFactors.from_packet(wp)
            y[:, 0:nb] = wf.B.real.reshape(self.n, nb)
            y[:, nb:2 * nb] = wf.B.imag.reshape(self.n, nb)
            y[:, 2 * nb:3 * nb] = wf.C.real.reshape(self.n, nb)
            y[:, 3 * nb:4 * nb] = wf.C.imag.reshape(self.n, nb)
            w = 4 * nb
        else:
            y[:, 0:nb] = A.real.reshape(self.n, nb)
            y[:, nb:2 * nb] = A.imag.reshape(self.n, nb)
            w = 2 * nb
        y[:, w:w + d] = p
        y[:, w + d:w + 2 * d] = q
        y[:, w + 2 * d] = gamma.real
        y[:, w + 2 * d + 1] = gamma.imag
        return y.reshape(-1)

    def arrays(self, y: np.ndarray):
        """Stacked parameter arrays read out of y."""
        m = y.reshape(self.n, self.block)
        nb, d, n = self.nb, self.d, self.n
        out = {}
        if self.mode == "bc":
            out["B"] = (m[:, 0:nb] + 1j * m[:, nb:2 * nb]).reshape(n, d, d)
            out["C"] = (m[:, 2 * nb:3 * nb]
                        + 1j * m[:, 3 * nb:4 * nb]).reshape(n, d, d)
            w = 4 * nb
        else:
            out["A"] = (m[:, 0:nb] + 1j * m[:, nb:2 * nb]).reshape(n, d, d)
            w = 2 * nb
        out["p"] = m[:, w:w + d]
        out["q"] = m[:, w + d:w + 2 * d]
        out["gamma"] = m[:, w + 2 * d] + 1j * m[:, w + 2 * d + 1]
        return out

    def packet(self, y: np.ndarray) -> WavePacket:
        """Rebuild the packet, symmetrizing the width matrix.

        Trial states inside a step drift off the symmetric-width manifold
        at second order in the step, so the symmetric part is taken before
        validation rather than treating that drift as an error.
        """
        arr = self.arrays(y)
        if self.mode == "bc":
            try:
                A = 0.5 * arr["B"] @ np.linalg.inv(arr["C"])
            except np.linalg.LinAlgError as exc:
                raise InvariantBroken(f"width factor C singular: {exc}") from exc
        else:
            A = arr["A"]
        A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
        gwps = tuple(
            GaussianParams(A=A[k], p=arr["p"][k], q=arr["q"][k],
                           gamma=complex(arr["gamma"][k]))
            for k in range(self.n)
        )
        return WavePacket(gwps=gwps)

    def pack_rhs(self, der: ParameterDerivatives) -> np.ndarray:
        dy = np.empty((self.n, self.block))
        nb, d = self.nb, self.d
        if self.mode == "bc":
            dy[:, 0:nb] = der.B_dot.real.reshape(self.n, nb)
            dy[:, nb:2 * nb] = der.B_dot.imag.reshape(self.n, nb)
            dy[:, 2 * nb:3 * nb] = der.C_dot.real.reshape(self.n, nb)
            dy[:, 3 * nb:4 * nb] = der.C_dot.imag.reshape(self.n, nb)
            w = 4 * nb
        else:
            dy[:, 0:nb] = der.A_dot.real.reshape(self.n, nb)
            dy[:, nb:2 * nb] = der.A_dot.imag.reshape(self.n, nb)
            w = 2 * nb
        dy[:, w:w + d] = der.p_dot
        dy[:, w + d:w + 2 * d] = der.q_dot
        dy[:, w + 2 * d] = der.gamma_dot.real
        dy[:, w + 2 * d + 1] = der.gamma_dot.imag
        return dy.reshape(-1)

    def normalize(self, y: np.ndarray) -> np.ndarray:
        """Restore width symmetry exactly at an accepted state.

        In factor mode B is re-anchored to 2*sym(A)*C, and the factors are
        reset to (2A, I) outright once C grows ill-conditioned; both leave
        the physical width matrix unchanged.
        """
        y = y.copy()
        arr = self.arrays(y)
        n, nb = self.n, self.nb
        m = y.reshape(n, self.block)
        if self.mode == "bc":
            C = arr["C"]
            try:
                A = 0.5 * arr["B"] @ np.linalg.inv(C)
            except np.linalg.LinAlgError as exc:
                raise InvariantBroken(f"width factor C singular: {exc}") from exc
            A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
            reset = np.linalg.cond(C) > _REGAUGE_COND
            B = 2.0 * A @ C
            eye = np.broadcast_to(np.eye(self.d), C.shape)
            C = np.where(reset[:, None, None], eye, C)
            B = np.where(reset[:, None, None], 2.0 * A, B)
            m[:, 0:nb] = B.real.reshape(n, nb)
            m[:, nb:2 * nb] = B.imag.reshape(n, nb)
            m[:, 2 * nb:3 * nb] = C.real.reshape(n, nb)
            m[:, 3 * nb:4 * nb] = C.imag.reshape(n, nb)
        else:
            A = 0.5 * (arr["A"] + np.transpose(arr["A"], (0, 2, 1)))
            m[:, 0:nb] = A.real.reshape(n, nb)
            m[:, nb:2 * nb] = A.imag.reshape(n, nb)
        return y


def derivative(wp: WavePacket, V: PolynomialPotential,
               active: ActiveSet | None = None,
               wf: WidthFactors | None = None,
               degree_cap: int = DEFAULT_DEGREE_CAP,
               cond_max: float = DEFAULT_COND_MAX) -> ParameterDerivatives:
    """One right-hand-side evaluation at a packet state.

    Solves the fitted-polynomial system (with whatever constraints are in
    `active`) and maps the coefficients to parameter velocities.  When
    width factors are supplied their linear velocities are filled in too.
    """
    if active is None:
        active = ActiveSet()
    sys = assemble_system(wp, V, degree_cap)
    if active.m:
        constraint_rows(wp, active)
    coeffs, _ = solve_constrained(sys, active, cond_max)
    der = coefficients_to_derivatives(wp, coeffs)
    if wf is not None:
        der.C_dot = wf.B.copy()
        der.B_dot = -np.einsum("kij,kjl->kil", coeffs.V2, wf.C)
    return der


def classical_period(V: PolynomialPotential) -> float:
    """Small-oscillation period of the slowest mode about the minimum."""
    x0 = find_minimum(V)
    lam = np.linalg.eigvalsh(V.hessian(x0))
    return 2.0 * math.pi / math.sqrt(lam[0])


class _Stepper:
    """Per-run bundle of the pieces every evaluation needs."""

    def __init__(self, codec: _StateCodec, V: PolynomialPotential,
                 active: ActiveSet, config: IntegratorConfig):
        self.codec = codec
        self.V = V
        self.active = active
        self.cfg = config
        self.n_evals = 0

    def _derivs(self, y: np.ndarray, sys, wp: WavePacket) -> np.ndarray:
        coeffs, _ = solve_constrained(sys, self.active, self.cfg.cond_max)
        der = coefficients_to_derivatives(wp, coeffs)
        if self.codec.mode == "bc":
            arr = self.codec.arrays(y)
            der.C_dot = arr["B"].copy()
            der.B_dot = -np.einsum("kij,kjl->kil", coeffs.V2, arr["C"])
        return self.codec.pack_rhs(der)

    def rhs(self, y: np.ndarray):
        """Constrained velocity field at y, plus the solved system.

        Returning the system and packet lets boundary callers reuse the
        factorization for telemetry and release decisions.
        """
        wp = self.codec.packet(y)
        sys = assemble_system(wp, self.V, self.cfg.degree_cap)
        if self.active.m:
            constraint_rows(wp, self.active)
        dy = self._derivs(y, sys, wp)
        self.n_evals += 1
        return dy, sys, wp

    def resolve(self, sys, y: np.ndarray) -> np.ndarray:
        """Re-solve an already-assembled boundary system.

        After the active set changes at a boundary the Gram matrix and its
        factorization are unchanged; only the constraint rows and the
        projected solution move.
        """
        wp = self.codec.packet(y)
        if self.active.m:
            constraint_rows(wp, self.active)
        return self._derivs(y, sys, wp)

    def trial(self, y0: np.ndarray, f0: np.ndarray, h: float,
              want_error: bool):
        """One explicit step of size h from y0 with cached first slope."""
        k = [f0]
        for s in range(1, 7):
            if s == 6 and not want_error:
                break
            incr = sum(_A_ROWS[s][j] * k[j] for j in range(s))
            dy, _, _ = self.rhs(y0 + h * incr)
            k.append(dy)
        y1 = y0 + h * sum(_B5[j] * k[j] for j in range(6))
        if not want_error:
            return y1, None
        err_vec = h * sum(_ERR[j] * k[j] for j in range(7))
        scale = self.cfg.atol + self.cfg.rtol * np.maximum(np.abs(y0),
                                                           np.abs(y1))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        return y1, err


def _margins(codec: _StateCodec, y: np.ndarray, specs) -> np.ndarray:
    """Signed slack of each bound at state y (negative = crossed)."""
    gi = codec.arrays(y)["gamma"].imag
    out = np.empty(len(specs))
    for i, spec in enumerate(specs):
        if spec.kind.endswith("lower"):
            out[i] = gi[spec.target] - spec.bound
        else:
            out[i] = spec.bound - gi[spec.target]
    return out


def _is_active(active: ActiveSet, spec: ConstraintSpec) -> bool:
    return any(e.spec.kind == spec.kind and e.spec.target == spec.target
               for e in active.entries)


def propagate(wp0: WavePacket, V: PolynomialPotential,
              specs: tuple = (), config: IntegratorConfig | None = None,
              wf0: WidthFactors | None = None,
              autocorrelation_with: WavePacket | None = None,
              progress=None) -> PropagationResult:
    """Integrate a packet to config.t_end with records and constraints.

    Raises StepSizeUnderflow, StepBudgetExceeded, or a conditioning error
    when the run cannot continue; the exception then carries the result
    built so far in its `partial` attribute.
    """
    if config is None:
        raise InvariantBroken("an IntegratorConfig is required")
    n, d = wp0.n_gwp, wp0.dim
    codec = _StateCodec(n, d, config.width_mode)
    concrete = expand_specs(specs, n)
    bounds = [s for s in concrete if not s.permanent]
    active = ActiveSet(m_max=config.m_max)

    records: list = []
    autocs: list | None = [] if autocorrelation_with is not None else None
    checkpoints: list = []
    events: list = []
    min_dt = math.inf
    window_min = math.inf
    n_steps = 0
    t = 0.0
    wp_last = wp0

    cp_times = sorted(tc for tc in config.checkpoint_times
                      if 0.0 < tc <= config.t_end)
    next_cp = 0

    def result(final_wp: WavePacket) -> PropagationResult:
        return PropagationResult(records=records, checkpoints=checkpoints,
                                 final=final_wp, events=events,
                                 n_steps=n_steps, min_dt=min_dt,
                                 autocorrelations=autocs)

    stepper = _Stepper(codec, V, active, config)
    y = codec.normalize(codec.pack(wp0, wf0))

    def emit(sys_now, wp_now: WavePacket, dt_val: float):
        rec = StepRecord(
            t=t, dt_used=dt_val, active_count=len(active.entries),
            cond_estimate=sys_now.cond_estimate,
            norm=math.sqrt(max(complex(sys_now.overlaps.sum()).real, 0.0)),
            energy=energy(wp_now, V, config.degree_cap),
            gamma_i=wp_now.gamma_i().copy(),
        )
        records.append(rec)
        if autocs is not None:
            autocs.append(autocorrelation(autocorrelation_with, wp_now,
                                          config.degree_cap))
        if progress is not None:
            progress(rec)

    try:
        for spec in concrete:
            if spec.permanent:
                active.activate(spec, t, d)
        wp_last = codec.packet(y)
        if bounds:
            slack = _margins(codec, y, bounds)
            worst = int(np.argmin(slack))
            if slack[worst] < -config.tol_event:
                spec = bounds[worst]
                raise ConfigError(
                    f"initial state violates {spec.kind} bound {spec.bound} "
                    f"for Gaussian {spec.target} by {-slack[worst]:.3e}"
                )
        for spec in activation_check(wp_last, bounds, active,
                                     config.tol_event):
            active.activate(spec, t, d)
            events.append(ConstraintEvent(t=t, action="on", kind=spec.kind,
                                          target=spec.target))
        if active.m:
            U, _ = constraint_rows(wp_last, active)
            check_rows_independent(U)

        f0, sys0, wp_last = stepper.rhs(y)
        emit(sys0, wp_last, math.nan)
        n_rec = 0

        h = config.dt_init
        t_final = config.t_end
        eps_t = 1e-12 * max(1.0, abs(t_final))

        while t < t_final - eps_t:
            if n_steps >= config.max_steps:
                raise StepBudgetExceeded(t, n_steps)

            next_record = min((n_rec + 1) * config.record_stride, t_final)
            boundary = next_record
            if next_cp < len(cp_times):
                boundary = min(boundary, cp_times[next_cp])

            h_prop = min(h, config.dt_max)
            remain = boundary - t
            # hard cap at the boundary: monotone under rejection, so a
            # rejected landing step shrinks instead of being retried
            capped = remain <= h_prop
            h_try = remain if capped else h_prop

            y1, err = stepper.trial(y, f0, h_try, want_error=True)
            n_steps += 1
            if err > 1.0:
                h = h_try * max(0.2, 0.9 * err ** -0.2)
                if h < config.dt_min:
                    raise StepSizeUnderflow(t, h, config.dt_min)
                continue

            # locate a bound crossing inside the accepted interval
            scan = [s for s in bounds if not _is_active(active, s)]
            hit_event = bool(scan) and (
                _margins(codec, y1, scan).min() < -config.tol_event)
            if hit_event:
                lo, hi = 0.0, h_try
                y_ev = y1
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    y_mid, _ = stepper.trial(y, f0, mid, want_error=False)
                    vmin = _margins(codec, y_mid, scan).min()
                    if abs(vmin) <= config.tol_event:
                        hi, y_ev = mid, y_mid
                        break
                    if vmin < 0.0:
                        hi, y_ev = mid, y_mid
                    else:
                        lo = mid
                h_used = hi
                y1 = y_ev
            else:
                h_used = h_try

            t = t + h_used
            window_min = min(window_min, h_used)
            min_dt = min(min_dt, h_used)
            y = codec.normalize(y1)

            # boundary evaluation doubles as the next step's first slope
            f0, sys0, wp_last = stepper.rhs(y)

            changed = False
            just_released: set = set()
            for entry in deactivation_check(sys0, active):
                active.release(entry)
                just_released.add((entry.spec.kind, entry.spec.target))
                events.append(ConstraintEvent(t=t, action="off",
                                              kind=entry.spec.kind,
                                              target=entry.spec.target))
                changed = True
            for spec in activation_check(wp_last, bounds, active,
                                         config.tol_event):
                if (spec.kind, spec.target) in just_released:
                    continue
                active.activate(spec, t, d)
                events.append(ConstraintEvent(t=t, action="on",
                                              kind=spec.kind,
                                              target=spec.target))
                changed = True
            if changed:
                if active.m:
                    U, _ = constraint_rows(wp_last, active)
                    check_rows_independent(U)
                f0 = stepper.resolve(sys0, y)

            landed_record = abs(t - next_record) <= eps_t
            if (next_cp < len(cp_times)
                    and abs(t - cp_times[next_cp]) <= eps_t):
                checkpoints.append((t, wp_last))
                next_cp += 1
            if landed_record or changed:
                emit(sys0, wp_last, window_min)
                window_min = math.inf
                if landed_record:
                    n_rec = int(round(t / config.record_stride))

            if not hit_event:
                factor = 5.0 if err == 0.0 else min(
                    5.0, max(0.2, 0.9 * err ** -0.2))
                h_cand = h_try * factor
                if capped:
                    # a boundary-shortened step says nothing against the
                    # controller's previous natural step
                    h_cand = max(h_cand, h_prop)
                h = min(h_cand, config.dt_max)
                if h < config.dt_min:
                    raise StepSizeUnderflow(t, h, config.dt_min)

        return result(codec.packet(y))
    except GwpError as exc:
        try:
            final = codec.packet(y)
        except GwpError:
            final = wp_last
        exc.partial = result(final)
        if getattr(exc, "t", None) is None:
            exc.t = t
        raise
