"""Adaptive propagation: conservation, events, records, failure modes."""
import math

import numpy as np
import pytest

from gwpdyn.constraints import ConstraintSpec
from gwpdyn.errors import (
    ConfigError,
    InvariantBroken,
    StepBudgetExceeded,
    StepSizeUnderflow,
)
from gwpdyn.gaussians import GaussianParams, WavePacket
from gwpdyn.integrator import (
    IntegratorConfig,
    classical_period,
    derivative,
    propagate,
)
from gwpdyn.potentials import (
    PolynomialPotential,
    build_diamagnetic_kepler,
    build_harmonic,
)

TWO_PI = 2.0 * math.pi


def _coherent(dim, q=None, p=None, w=1.0):
    A = 0.5j * w * np.eye(dim)
    return WavePacket((GaussianParams(
        A=A,
        p=np.zeros(dim) if p is None else np.asarray(p, dtype=float),
        q=np.zeros(dim) if q is None else np.asarray(q, dtype=float),
        gamma=0.25j * math.log(math.pi ** dim / np.linalg.det(2 * A.imag)),
    ),))


def test_classical_period():
    assert classical_period(build_harmonic([2.0])) == pytest.approx(math.pi)
    assert classical_period(build_diamagnetic_kepler()) == pytest.approx(TWO_PI)


def test_coherent_state_two_periods():
    wp0 = _coherent(2, q=[0.7, -0.3])
    V = build_harmonic([1.0, 1.0])
    cfg = IntegratorConfig(t_end=2 * TWO_PI, record_stride=TWO_PI / 8)
    res = propagate(wp0, V, (), cfg, autocorrelation_with=wp0)
    g0, g1 = wp0.gwps[0], res.final.gwps[0]
    assert np.abs(g1.A - g0.A).max() < 1e-9
    assert np.abs(g1.q - g0.q).max() < 1e-7
    assert np.abs(g1.p - g0.p).max() < 1e-7
    # E0 = 1 for the 2D isotropic ground width, displaced: E = 1 + |q|^2/2
    E = 1.0 + 0.5 * (0.7**2 + 0.3**2)
    for rec, c in zip(res.records, res.autocorrelations):
        # |C| returns to 1 at full periods, and energy is flat throughout
        assert rec.energy == pytest.approx(E, abs=1e-7)
    assert abs(res.autocorrelations[-1] - 1.0) < 1e-6


def test_width_modes_agree():
    wp0 = _coherent(1, q=[1.0], w=0.7)
    V = build_harmonic([1.0])
    out = {}
    for mode in ("bc", "direct"):
        cfg = IntegratorConfig(t_end=TWO_PI, record_stride=TWO_PI / 4,
                               width_mode=mode)
        out[mode] = propagate(wp0, V, (), cfg).final.gwps[0]
    for name in ("A", "p", "q"):
        fa = getattr(out["bc"], name)
        fb = getattr(out["direct"], name)
        assert np.abs(fa - fb).max() < 1e-6
    assert abs(out["bc"].gamma - out["direct"].gamma) < 1e-6


def test_squeezed_breathing_returns():
    # width off the coherent value breathes at twice the trap frequency
    A = np.array([[0.9j, 0.15j], [0.15j, 0.45j]])
    wp0 = WavePacket((GaussianParams(A=A, p=np.zeros(2), q=np.zeros(2),
                                     gamma=0.0),))
    V = build_harmonic([1.0, 1.0])
    cfg = IntegratorConfig(t_end=TWO_PI, record_stride=TWO_PI / 4)
    res = propagate(wp0, V, (), cfg)
    assert np.abs(res.final.gwps[0].A - A).max() < 1e-8
    mid = res.records[len(res.records) // 2]
    assert mid.norm == pytest.approx(res.records[0].norm, rel=1e-8)


def test_record_grid_and_checkpoints():
    wp0 = _coherent(1, q=[0.5])
    V = build_harmonic([1.0])
    cfg = IntegratorConfig(t_end=1.0, record_stride=0.25,
                           checkpoint_times=(0.4, 0.8))
    res = propagate(wp0, V, (), cfg)
    times = [rec.t for rec in res.records]
    assert times == sorted(times)
    for k in range(5):
        assert min(abs(t - 0.25 * k) for t in times) < 1e-9
    assert math.isnan(res.records[0].dt_used)
    assert all(np.isfinite(rec.dt_used) for rec in res.records[1:])
    assert [round(t, 9) for t, _ in res.checkpoints] == [0.4, 0.8]
    for t_cp, wp_cp in res.checkpoints:
        assert isinstance(wp_cp, WavePacket)
    assert res.min_dt > 0 and res.n_steps > 0


def test_amplitude_clamp_episode():
    # two stacked Gaussians with opposite signs: the packet sheds weight
    # from one member, driving its amplitude parameter down through the
    # bound, which must clamp, hold, and release
    g_a = GaussianParams(A=np.array([[0.6j]]), p=np.zeros(1),
                         q=np.array([0.6]), gamma=0.0)
    g_b = GaussianParams(A=np.array([[0.4j]]), p=np.zeros(1),
                         q=np.array([-0.6]), gamma=0.25 + 0.2j)
    wp0 = WavePacket((g_a, g_b))
    V = PolynomialPotential(terms={(2,): 0.5, (4,): 0.04}, dim=1)
    bound = None
    free = propagate(wp0, V, (), IntegratorConfig(t_end=2.0, record_stride=0.05))
    lows = np.array([rec.gamma_i.min() for rec in free.records])
    assert lows.min() < -0.05, "scenario must actually dive to test the clamp"
    bound = float(np.floor(lows.min() * 10) / 10 + 0.05)

    spec = (ConstraintSpec(kind="amplitude_lower", bound=bound),)
    res = propagate(wp0, V, spec, IntegratorConfig(t_end=2.0, record_stride=0.05))
    ons = [e for e in res.events if e.action == "on"]
    offs = [e for e in res.events if e.action == "off"]
    assert ons, "clamp never engaged"
    assert offs, "clamp never released"
    for rec in res.records:
        assert rec.gamma_i.min() >= bound - 1e-8
    # while active, the bound is held essentially exactly
    held = [rec for rec in res.records if rec.active_count > 0]
    assert held
    for rec in held:
        assert abs(rec.gamma_i.min() - bound) < 1e-7


def test_frozen_width_moves_classically():
    wp0 = _coherent(1, q=[0.9], w=0.8)
    V = build_harmonic([1.0])
    cfg = IntegratorConfig(t_end=TWO_PI, record_stride=TWO_PI / 4)
    res = propagate(wp0, V, (ConstraintSpec(kind="frozen_width"),), cfg)
    g1 = res.final.gwps[0]
    assert np.abs(g1.A - wp0.gwps[0].A).max() < 1e-10
    assert g1.q[0] == pytest.approx(0.9, abs=1e-6)


def test_infeasible_initial_bound_raises():
    wp0 = _coherent(1)
    V = build_harmonic([1.0])
    gi0 = float(wp0.gamma_i()[0])
    with pytest.raises(ConfigError):
        propagate(wp0, V,
                  (ConstraintSpec(kind="amplitude_lower", bound=gi0 + 1.0),),
                  IntegratorConfig(t_end=1.0))


def test_step_budget_and_underflow_carry_partial():
    wp0 = _coherent(1, q=[1.0])
    V = build_harmonic([1.0])
    with pytest.raises(StepBudgetExceeded) as info:
        propagate(wp0, V, (), IntegratorConfig(t_end=10.0, max_steps=5))
    assert info.value.partial is not None
    assert info.value.partial.records

    # tolerances unreachable at the pinned floor step: first rejection
    # demands dt below dt_min
    tight = IntegratorConfig(t_end=1.0, rtol=1e-15, atol=1e-16,
                             dt_init=1e-2, dt_min=1e-2)
    with pytest.raises(StepSizeUnderflow) as info:
        propagate(wp0, V, (), tight)
    assert info.value.partial is not None
    assert info.value.partial.records


def test_config_validation():
    with pytest.raises(InvariantBroken):
        IntegratorConfig(t_end=-1.0)
    with pytest.raises(InvariantBroken):
        IntegratorConfig(t_end=1.0, dt_min=1e-3, dt_init=1e-4)
    with pytest.raises(InvariantBroken):
        IntegratorConfig(t_end=1.0, width_mode="magic")


def test_derivative_entry_point():
    wp0 = _coherent(2, q=[0.5, 0.0])
    V = build_harmonic([1.0, 1.0])
    der = derivative(wp0, V)
    assert np.abs(der.A_dot).max() < 1e-10
    assert der.q_dot[0, 0] == pytest.approx(0.0, abs=1e-10)
    assert der.p_dot[0, 0] == pytest.approx(-0.5, abs=1e-10)
