"""
Tests for the spectral stochastic Schroedinger grid.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import GridError, OverflowGuardError
from src.spectral_sse import (
    FactorOrder,
    GridState,
    SpatialGrid,
    check_growth_budget,
    collapse_flow,
    conservativity_residual_grid,
    free_propagate,
    gaussian_packet,
    indicator_state,
    mass_tail_guard,
    mean_square_oracle,
    observables,
    product_formula_run,
    reference_operator_energy,
    reversed_order_run,
    superpose,
)
from src.wiener_paths import generate_batch

GRID = SpatialGrid(10.0, 512)


def test_grid_geometry_and_validation():
    assert GRID.dx == pytest.approx(20.0 / 512)
    assert GRID.nodes[0] == -10.0
    assert GRID.nodes[-1] == pytest.approx(10.0 - GRID.dx)
    assert GRID.index_of(0.0) == 256
    with pytest.raises(GridError):
        GRID.index_of(0.01)
    with pytest.raises(GridError):
        SpatialGrid(10.0, 500)
    with pytest.raises(GridError):
        SpatialGrid(0.0, 64)


def test_gaussian_packet_moments():
    """|psi|^2 has mean x0 and variance sigma^2."""
    state = gaussian_packet(GRID, 1.5, 0.0, 0.8)
    mean, variance, norm2 = observables(state)
    assert norm2 == pytest.approx(1.0, abs=1e-14)
    assert mean == pytest.approx(1.5, abs=1e-10)
    assert variance == pytest.approx(0.64, abs=1e-10)


def test_gaussian_packet_rejects_mass_outside_grid():
    with pytest.raises(GridError):
        gaussian_packet(GRID, 9.0, 0.0, 1.0)
    with pytest.raises(GridError):
        gaussian_packet(GRID, 0.0, 0.0, -1.0)


def test_mass_tail_guard():
    mass_tail_guard(gaussian_packet(GRID, 0.0, 0.0, 1.0))
    with pytest.raises(GridError):
        mass_tail_guard(gaussian_packet(GRID, 9.5, 0.0, 0.05))


def test_superpose_is_normalised_and_symmetric():
    cat = superpose(gaussian_packet(GRID, -2.0, 0.0, 1.0), gaussian_packet(GRID, 2.0, 0.0, 1.0))
    mean, variance, norm2 = observables(cat)
    assert norm2 == pytest.approx(1.0)
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert variance > 4.0


def test_indicator_norm_is_trapezoid_length():
    grid = SpatialGrid(2.0, 1024)
    state = indicator_state(grid, 0.0, 1.0)
    assert state.norm2 == pytest.approx(1.0, abs=1e-12)


def test_free_propagation_is_unitary_and_spreads_packet():
    """A packet at rest spreads as sigma^2 + t^2 / (4 sigma^2)."""
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    evolved = free_propagate(state, 2.0)
    _, variance, norm2 = observables(evolved)
    assert norm2 == pytest.approx(1.0, abs=1e-12)
    assert variance == pytest.approx(1.0 + 4.0 / 4.0, abs=1e-8)


def test_moving_packet_drifts_with_momentum():
    state = gaussian_packet(GRID, -2.0, 1.0, 1.0)
    mean, _, _ = observables(free_propagate(state, 1.5))
    assert mean == pytest.approx(-0.5, abs=1e-8)


def test_collapse_flow_is_pointwise_exponential():
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    flowed = collapse_flow(state, 0.3, 0.1, c=0.5)
    expected = state.amplitudes * np.exp(0.3 * GRID.nodes - 1.5 * 0.1 * GRID.nodes**2)
    assert np.max(np.abs(flowed.amplitudes - expected)) < 1e-15


def test_collapse_flow_batches_over_paths():
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    dxi = np.array([[0.1], [-0.2], [0.0]])
    flowed = collapse_flow(state, dxi, 0.05)
    assert flowed.amplitudes.shape == (3, GRID.points)
    assert np.max(np.abs(flowed.path(1).amplitudes - collapse_flow(state, -0.2, 0.05).amplitudes)) == 0.0


def test_collapse_flow_overflow_guard():
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    with pytest.raises(OverflowGuardError):
        collapse_flow(state, 100.0, 0.0)
    with pytest.raises(GridError):
        collapse_flow(state, 0.1, -0.1)


def test_growth_budget():
    check_growth_budget(SpatialGrid(2.0, 64), 1.0, -0.5)
    check_growth_budget(SpatialGrid(50.0, 64), 1.0, 0.5)
    with pytest.raises(OverflowGuardError):
        check_growth_budget(SpatialGrid(50.0, 64), 1.0, -0.5)


def test_mean_square_oracle_c_zero_is_norm():
    state = indicator_state(SpatialGrid(2.0, 1024), 0.0, 1.0)
    assert mean_square_oracle(state, 1.0, 0.0) == pytest.approx(float(state.norm2))
    assert mean_square_oracle(state, 1.0, -0.5) > mean_square_oracle(state, 1.0, 0.5)


def test_conservativity_residual_vanishes():
    rng = np.random.default_rng(4)
    amplitudes = rng.standard_normal((10, GRID.points)) + 1j * rng.standard_normal((10, GRID.points))
    states = GridState(GRID, amplitudes).normalized()
    residual = conservativity_residual_grid(states)
    scale = np.sum(np.abs(GRID.nodes * states.amplitudes) ** 2, axis=-1) * GRID.dx
    assert np.max(np.abs(residual) / scale) <= 1e-10


def test_reference_operator_energy_on_eigenfunction():
    """exp(-x^2 / sqrt 2) is an eigenfunction of x^2 - Laplacian / 2 with eigenvalue 1 / sqrt 2."""
    state = GridState(GRID, np.exp(-(GRID.nodes**2) / np.sqrt(2.0)))
    expected = (1.0 - 1.0 / np.sqrt(2.0)) ** 2 * float(state.norm2)
    assert reference_operator_energy(state) == pytest.approx(expected, rel=1e-10)


def test_product_formula_without_collapse_is_free_evolution():
    state = gaussian_packet(GRID, 0.0, 1.0, 1.0)
    batch = generate_batch(0, range(2), 1, 3, 1.0)
    run = product_formula_run(state, batch, 8, 0.0)
    expected = free_propagate(state, 1.0).amplitudes
    assert np.max(np.abs(run.final.amplitudes - expected)) < 1e-12
    assert run.norm2 == pytest.approx(np.ones((2, 9)))


def test_product_formula_mean_square_is_martingale():
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    batch = generate_batch(7, range(2000), 1, 6, 0.5)
    run = product_formula_run(state, batch, 64, 1.0)
    final = run.norm2[:, -1]
    stderr = np.std(final, ddof=1) / np.sqrt(final.size)
    assert abs(np.mean(final) - 1.0) <= 4 * stderr
    assert run.times.shape == (65,)
    assert run.mean_x.shape == (2000, 65)


def test_multi_channel_run_keeps_mean_square():
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    batch = generate_batch(8, range(2000), 2, 5, 0.5)
    final = product_formula_run(state, batch, 32, 1.0).norm2[:, -1]
    stderr = np.std(final, ddof=1) / np.sqrt(final.size)
    assert abs(np.mean(final) - 1.0) <= 4 * stderr


def test_factor_orders():
    state = gaussian_packet(GRID, 0.0, 0.5, 1.0)
    batch = generate_batch(3, range(4), 1, 4, 0.5)
    standard = product_formula_run(state, batch, 16, 1.0)
    reversed_ = reversed_order_run(state, batch, 16, 1.0)
    assert np.max(np.abs(standard.final.amplitudes - reversed_.final.amplitudes)) > 1e-6
    no_h_standard = product_formula_run(state, batch, 16, 1.0, include_h=False)
    no_h_reversed = product_formula_run(state, batch, 16, 1.0, include_h=False, order=FactorOrder.REVERSED)
    assert np.array_equal(no_h_standard.final.amplitudes, no_h_reversed.final.amplitudes)


def test_product_formula_preconditions():
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    batch = generate_batch(0, range(2), 1, 3, 0.5)
    with pytest.raises(GridError):
        product_formula_run(state, batch, 8, -1.0)
    with pytest.raises(GridError):
        product_formula_run(GridState(GRID, np.stack([state.amplitudes] * 2)), batch, 8, 1.0)


def test_trajectory_frame_and_snapshots(tmp_path):
    state = gaussian_packet(GRID, 0.0, 0.0, 1.0)
    batch = generate_batch(1, range(3), 1, 2, 0.5)
    run = product_formula_run(state, batch, 4, 1.0, keep_snapshots=True, record_energy=True)
    frame = run.to_frame()
    assert list(frame.columns) == ["path", "t", "norm2", "mean_x", "var_x"]
    assert len(frame) == 3 * 5
    assert np.all(np.isfinite(run.energy))
    path = run.dump_snapshots(tmp_path / "snapshots.bin")
    restored = np.fromfile(path, dtype="<c16").reshape(3, 5, GRID.points)
    assert np.array_equal(restored, run.snapshots)
    plain = product_formula_run(state, batch, 4, 1.0)
    with pytest.raises(GridError):
        plain.dump_snapshots(tmp_path / "none.bin")
