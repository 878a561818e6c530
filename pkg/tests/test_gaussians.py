"""State-type invariants and pointwise evaluation."""
import numpy as np
import pytest

from gwpdyn.errors import InvariantBroken
from gwpdyn.gaussians import (
    GaussianParams,
    WavePacket,
    WidthFactors,
    evaluate,
    evaluate_packet_grid,
)

from helpers import random_gwp, random_packet


def test_evaluate_matches_direct_expansion():
    rng = np.random.default_rng(11)
    from oracles import eval_gwp_direct

    for dim in (1, 2, 3):
        for _ in range(20):
            g = random_gwp(rng, dim)
            x = rng.normal(scale=2.0, size=dim)
            assert evaluate(g, x) == pytest.approx(eval_gwp_direct(g, x), rel=1e-13)


def test_packet_grid_evaluation_sums_members():
    rng = np.random.default_rng(5)
    wp = random_packet(rng, 3, 2)
    pts = rng.normal(size=(7, 4, 2))
    total = evaluate_packet_grid(wp, pts)
    by_hand = sum(
        np.array([[evaluate(g, pts[i, j]) for j in range(4)] for i in range(7)])
        for g in wp.gwps
    )
    assert np.abs(total - by_hand).max() < 1e-13 * np.abs(by_hand).max()


def test_gaussian_rejects_bad_width():
    ok = random_gwp(np.random.default_rng(0), 2)
    with pytest.raises(InvariantBroken):
        GaussianParams(A=ok.A - 2j * np.eye(2), p=ok.p, q=ok.q, gamma=ok.gamma)
    asym = ok.A + np.array([[0.0, 1e-6], [-1e-6, 0.0]])
    with pytest.raises(InvariantBroken):
        GaussianParams(A=asym, p=ok.p, q=ok.q, gamma=ok.gamma)
    with pytest.raises(InvariantBroken):
        GaussianParams(A=ok.A, p=ok.p[:1], q=ok.q, gamma=ok.gamma)
    with pytest.raises(InvariantBroken):
        GaussianParams(A=ok.A, p=ok.p, q=ok.q, gamma=complex(np.nan))


def test_gaussian_arrays_are_frozen():
    g = random_gwp(np.random.default_rng(1), 2)
    with pytest.raises(ValueError):
        g.A[0, 0] = 0.0
    with pytest.raises(ValueError):
        g.q[0] = 0.0


def test_packet_needs_consistent_dimension():
    rng = np.random.default_rng(2)
    with pytest.raises(InvariantBroken):
        WavePacket(gwps=())
    with pytest.raises(InvariantBroken):
        WavePacket(gwps=(random_gwp(rng, 1), random_gwp(rng, 2)))


def test_stacked_roundtrip():
    rng = np.random.default_rng(3)
    wp = random_packet(rng, 4, 2)
    A, p, q, gamma = wp.stacked()
    assert A.shape == (4, 2, 2) and p.shape == (4, 2) and gamma.shape == (4,)
    for k, g in enumerate(wp.gwps):
        assert np.array_equal(A[k], g.A)
        assert gamma[k] == g.gamma
    assert np.array_equal(wp.gamma_i(), gamma.imag)


def test_width_factors_reconstruct_a():
    rng = np.random.default_rng(4)
    wp = random_packet(rng, 3, 2)
    wf = WidthFactors.from_packet(wp)
    A = np.stack([g.A for g in wp.gwps])
    assert np.abs(wf.a_matrices() - A).max() < 1e-14

    # a generic invertible C with symmetric B C^-1 / 2 passes validation
    C = np.stack([np.eye(2) + 0.1j * np.eye(2) for _ in range(3)])
    B = 2.0 * A @ C
    wf2 = WidthFactors(B=B, C=C)
    assert np.abs(wf2.a_matrices() - A).max() < 1e-12


def test_width_factors_reject_asymmetric_product():
    rng = np.random.default_rng(6)
    wp = random_packet(rng, 1, 2)
    wf = WidthFactors.from_packet(wp)
    R = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(InvariantBroken):
        WidthFactors(B=wf.B @ (np.eye(2) + 0.3 * R), C=wf.C)
