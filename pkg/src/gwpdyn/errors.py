"""Exception types shared across the package."""


class GwpError(Exception):
    """Base class for every error raised by this package."""


class InvariantBroken(GwpError):
    """A state object violates one of its structural invariants."""

    def __init__(self, msg, t=None):
        if t is not None:
            msg = f"t={t:.9g}: {msg}"
        super().__init__(msg)
        self.t = t


class NonIntegrable(GwpError):
    """The requested pair integral does not converge."""


class DegreeUnsupported(GwpError):
    """A moment of total degree above the configured cap was requested."""


class IllConditioned(GwpError):
    """The variational linear system is numerically singular.

    Carries the condition estimate plus diagnostics about which
    amplitude parameters are extreme and how strongly the most
    overlapping pair of Gaussians overlaps.
    """

    def __init__(self, cond, t=None, gamma_extremes=None, max_overlap=None):
        parts = [f"condition estimate {cond:.3e} above limit"]
        if t is not None:
            parts.insert(0, f"t={t:.9g}")
        if gamma_extremes is not None:
            lo_k, lo, hi_k, hi = gamma_extremes
            parts.append(f"Im gamma range [{lo:.3f} (k={lo_k}), {hi:.3f} (k={hi_k})]")
        if max_overlap is not None:
            (l, k), s = max_overlap
            parts.append(f"largest normalized overlap |S_{l}{k}|={s:.6f}")
        super().__init__("; ".join(parts))
        self.cond = cond
        self.t = t
        self.gamma_extremes = gamma_extremes
        self.max_overlap = max_overlap
        self.partial = None


class RankDeficientConstraints(GwpError):
    """The active constraint rows are linearly dependent."""


class SingularConstraintSystem(GwpError):
    """The projected constraint system for the multipliers is singular."""


class TooManyConstraints(GwpError):
    """More runtime-activated constraints than the configured cap allows."""


class StepSizeUnderflow(GwpError):
    """The error controller demanded a step below dt_min."""

    def __init__(self, t, dt, dt_min):
        super().__init__(
            f"t={t:.9g}: required step {dt:.3e} below dt_min={dt_min:.3e}"
        )
        self.t = t
        self.dt = dt
        self.partial = None


class StepBudgetExceeded(GwpError):
    """The run used more accepted steps than the configured budget."""

    def __init__(self, t, n_steps):
        super().__init__(f"t={t:.9g}: exceeded step budget of {n_steps}")
        self.t = t
        self.partial = None


class GridLeak(GwpError):
    """Probability at the grid boundary exceeds the configured tolerance."""

    def __init__(self, leak, leak_tol, t=None):
        at = "" if t is None else f"t={t:.9g}: "
        super().__init__(
            f"{at}boundary probability {leak:.3e} exceeds {leak_tol:.3e}"
        )
        self.leak = leak
        self.t = t


class NoMinimum(GwpError):
    """The potential has no interior minimum with positive curvature."""


class ConfigError(GwpError):
    """A scenario configuration file is malformed or inconsistent."""
