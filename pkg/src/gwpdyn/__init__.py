"""Coupled Gaussian wave packet dynamics with inequality-constrained rates.

The package propagates superpositions of multidimensional Gaussians by a
variational equation of motion, regularizes near-degenerate parameter
systems through activatable constraints on per-Gaussian amplitudes and
widths, and validates against an FFT split-operator reference.
"""
from .constraints import (
    AMPLITUDE_LOWER,
    AMPLITUDE_UPPER,
    FROZEN_WIDTH,
    ActiveSet,
    ConstraintSpec,
    activation_check,
    constraint_rows,
    deactivation_check,
    expand_specs,
    solve_constrained,
)
from .errors import (
    ConfigError,
    DegreeUnsupported,
    GridLeak,
    GwpError,
    IllConditioned,
    InvariantBroken,
    NoMinimum,
    NonIntegrable,
    RankDeficientConstraints,
    SingularConstraintSystem,
    StepBudgetExceeded,
    StepSizeUnderflow,
    TooManyConstraints,
)
from .gaussians import GaussianParams, WavePacket, WidthFactors, evaluate
from .grid import (
    Grid2D,
    GridField,
    GridTrace,
    grid_autocorrelation,
    grid_energy,
    grid_norm,
    sample,
    split_operator_propagate,
    split_operator_trace,
)
from .integrator import (
    IntegratorConfig,
    PropagationResult,
    StepRecord,
    classical_period,
    derivative,
    propagate,
)
from .moments import (
    PairTables,
    multi_indices,
    norm,
    overlap_matrix,
    pair_moment,
    pair_tables,
    potential_moment,
)
from .observables import (
    TimeSeries,
    autocorrelation,
    energy,
    resample_uniform,
    spectral_peaks,
    spectrum,
)
from .potentials import (
    PolynomialPotential,
    build_diamagnetic_kepler,
    build_harmonic,
    find_minimum,
)
from .scenarios import ScenarioConfig, build_grid_packet, load_scenario
from .tdvp import (
    CoefficientSet,
    MomentSystem,
    ParameterDerivatives,
    assemble_system,
    coefficients_to_derivatives,
    derivatives_real_form,
    monomial_basis,
    residual_gap,
    solve_unconstrained,
    width_factor_derivatives,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
