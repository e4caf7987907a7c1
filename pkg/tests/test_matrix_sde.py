"""
Tests for the matrix SDE splitting schemes.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import CommutatorTooLarge, SchemePreconditionError
from src.matrix_sde import (
    ConvergenceReport,
    MatrixSDESystem,
    SchemeKind,
    all_commute,
    b_flow,
    benchmark_system,
    dissipativity_residual,
    exact_commuting_flow,
    path_sup_errors,
    random_trial_vectors,
    reference_flow,
    run_scheme,
    step_operator,
    stochastic_split_counterexample,
    sup_error_mc,
)
from src.numerics_core import mat_exp
from src.wiener_paths import generate, generate_batch


def test_b_flow_matches_matrix_exponential():
    b = np.array([[0.3, -1.0], [0.5, 0.1]])
    flow = b_flow(b, 0.4, 0.01)
    assert np.max(np.abs(flow - mat_exp(0.4 * b - 0.005 * b @ b))) < 1e-12
    with pytest.raises(SchemePreconditionError):
        b_flow(b, 0.1, -0.01)


def test_benchmark_systems_commutation():
    assert not benchmark_system("noncommuting").commuting
    assert benchmark_system("commuting").commuting
    partial = benchmark_system("partial")
    assert not partial.commuting
    assert all_commute((partial.drift_split[1],) + partial.diffusions)
    with pytest.raises(SchemePreconditionError):
        benchmark_system("unknown")


def test_system_validation():
    with pytest.raises(SchemePreconditionError):
        MatrixSDESystem(np.eye(2), (np.eye(3),), [1.0, 0.0], 1.0)
    with pytest.raises(SchemePreconditionError):
        MatrixSDESystem(np.eye(2), (), [1.0, 0.0], 1.0)
    with pytest.raises(SchemePreconditionError):
        MatrixSDESystem(np.eye(2), (np.eye(2),), [1.0, 0.0], 1.0, drift_split=(np.eye(2), np.eye(2)))


def test_exact_flow_rejects_noncommuting_systems():
    system = benchmark_system("noncommuting")
    with pytest.raises(CommutatorTooLarge):
        exact_commuting_flow(system, np.zeros(1), 1.0)


def test_exact_flow_scalar_case():
    """X_t = exp((a - b^2/2) t + b xi_t) x0 in one dimension."""
    system = MatrixSDESystem([[0.2]], ([[0.7]],), [2.0], 1.0)
    value = exact_commuting_flow(system, np.array([0.3]), 0.5)
    assert value[0] == pytest.approx(2.0 * np.exp((0.2 - 0.245) * 0.5 + 0.7 * 0.3))


def test_trotter_is_exact_for_commuting_system():
    """With commuting matrices the product formula reproduces the closed form at every lattice time."""
    system = benchmark_system("commuting")
    batch = generate_batch(11, range(20), 1, 8, system.horizon)
    for n in (4, 64):
        errors = path_sup_errors(system, SchemeKind.TROTTER_PIECEWISE, n, batch)
        assert np.sqrt(np.max(errors)) <= 1e-10


def test_reference_flow_exactness_flag():
    batch = generate_batch(0, range(3), 1, 4, 1.0)
    assert reference_flow(benchmark_system("commuting"), batch).exact
    assert not reference_flow(benchmark_system("noncommuting"), batch).exact


def test_step_operator_matches_one_step_run():
    system = benchmark_system("noncommuting")
    lattice = generate(4, 0, 1, 0, system.horizon)
    dxi = lattice.increments[:, 0]
    for kind in (SchemeKind.TROTTER_PIECEWISE, SchemeKind.FIRST_ORDER_FACTORED, SchemeKind.EULER_MARUYAMA):
        trajectory = run_scheme(system, kind, 1, lattice)
        expected = step_operator(system, kind, dxi, system.horizon) @ system.x0
        assert np.max(np.abs(trajectory[1] - expected)) < 1e-12


def test_euler_maruyama_step_operator():
    system = benchmark_system("noncommuting")
    operator = step_operator(system, SchemeKind.EULER_MARUYAMA, np.array([0.2]), 0.01)
    expected = np.eye(2) + 0.01 * system.drift + 0.2 * system.diffusions[0]
    assert operator == pytest.approx(expected)


def test_run_scheme_shapes_and_channel_check():
    system = benchmark_system("noncommuting")
    batch = generate_batch(1, range(5), 1, 6, system.horizon)
    assert run_scheme(system, "trotter-piecewise", 16, batch).shape == (5, 17, 2)
    assert run_scheme(system, "trotter-piecewise", 16, batch.lattice(0)).shape == (17, 2)
    assert run_scheme(system, "trotter-interpolated", 16, batch).shape == (5, 65, 2)
    with pytest.raises(SchemePreconditionError):
        run_scheme(system, "trotter-piecewise", 16, generate_batch(1, range(5), 2, 6, system.horizon))


def test_interpolated_agrees_with_piecewise_on_coarse_lattice():
    system = benchmark_system("noncommuting")
    batch = generate_batch(2, range(6), 1, 7, system.horizon)
    piecewise = run_scheme(system, SchemeKind.TROTTER_PIECEWISE, 8, batch)
    interpolated = run_scheme(system, SchemeKind.TROTTER_INTERPOLATED, 8, batch)
    assert np.max(np.abs(interpolated[:, ::16] - piecewise)) < 1e-12


def test_partial_split_needs_drift_split():
    system = benchmark_system("noncommuting")
    batch = generate_batch(0, range(2), 1, 4, system.horizon)
    with pytest.raises(SchemePreconditionError):
        run_scheme(system, SchemeKind.PARTIAL_SPLIT, 4, batch)


def test_trotter_error_decreases_on_noncommuting_system():
    system = benchmark_system("noncommuting")
    batch = generate_batch(5, range(200), 1, 10, system.horizon)
    reference = reference_flow(system, batch)
    coarse = np.mean(path_sup_errors(system, SchemeKind.TROTTER_PIECEWISE, 8, batch, reference))
    fine = np.mean(path_sup_errors(system, SchemeKind.TROTTER_PIECEWISE, 64, batch, reference))
    assert fine < coarse


def test_euler_maruyama_slope_is_first_order():
    system = benchmark_system("noncommuting")
    batch = generate_batch(20240601, range(400), 1, 12, system.horizon)
    reference = reference_flow(system, batch)
    errors = {n: path_sup_errors(system, SchemeKind.EULER_MARUYAMA, n, batch, reference) for n in (16, 32, 64, 128)}
    report = ConvergenceReport.from_path_errors("euler-maruyama", system.system_id, 20240601, errors)
    assert -1.4 <= report.slope <= -0.6
    assert all(report.improvements())


def test_sup_error_mc_returns_mean_and_stderr():
    mse, stderr = sup_error_mc(benchmark_system("partial"), SchemeKind.PARTIAL_SPLIT, 16, 50, 3, 8)
    assert mse > 0
    assert 0 < stderr < mse


def test_convergence_report_frame_and_validation():
    report = ConvergenceReport("trotter-piecewise", "noncommuting", 1, (16, 32), (0.04, 0.01), (0.001, 0.0005))
    assert report.slope == pytest.approx(-2.0)
    frame = report.to_frame()
    assert list(frame.columns) == ["n", "mse", "stderr", "scheme", "system_id", "seed"]
    assert report.improvements() == [True]
    with pytest.raises(SchemePreconditionError):
        ConvergenceReport("x", "y", 0, (32, 16), (0.1, 0.2), (0.0, 0.0))


def test_dissipativity_residual_vanishes_for_conservative_pair():
    """K = L^2 / 2 with hermitian L conserves the mean square exactly."""
    rng = np.random.default_rng(3)
    raw = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    hermitian = raw + raw.conj().T
    trials = random_trial_vectors(3, 50, 9)
    assert np.allclose(np.linalg.norm(trials, axis=1), 1.0)
    assert abs(dissipativity_residual(0.5 * hermitian @ hermitian, [hermitian], trials)) < 1e-10


def test_dissipativity_residual_detects_growth():
    trials = random_trial_vectors(2, 20, 1)
    assert dissipativity_residual(np.zeros((2, 2)), [np.eye(2)], trials) == pytest.approx(1.0)


def test_stochastic_split_counterexample_ratio_is_e_to_the_t():
    batch = generate_batch(1, range(100), 1, 6, 1.0)
    for n in (4, 64):
        ratios = stochastic_split_counterexample(batch, n)
        assert np.max(np.abs(ratios - np.e)) <= 1e-12
    assert np.max(np.abs(stochastic_split_counterexample(batch, 4, 0.5) - np.exp(0.5))) <= 1e-12
    with pytest.raises(SchemePreconditionError):
        stochastic_split_counterexample(batch, 4, 0.3)


def test_reference_scheme_at_finest_level_has_zero_error():
    system = benchmark_system("noncommuting")
    batch = generate_batch(6, range(10), 1, 9, system.horizon)
    reference = reference_flow(system, batch)
    assert np.max(path_sup_errors(system, SchemeKind.REFERENCE, 2**9, batch, reference)) == 0.0
    assert np.max(path_sup_errors(system, SchemeKind.TROTTER_PIECEWISE, 2**9, batch, reference)) <= 1e-24


def test_reference_is_blockwise_trotter_on_the_finest_lattice():
    """Beyond one block of steps the reference still equals a single Trotter run."""
    system = benchmark_system("partial")
    batch = generate_batch(8, range(4), 1, 11, system.horizon)
    reference = reference_flow(system, batch)
    assert reference.trajectory.shape == (4, 2**11 + 1, 2)
    trotter = run_scheme(system, SchemeKind.TROTTER_PIECEWISE, 2**11, batch)
    assert np.max(np.abs(reference.trajectory - trotter)) <= 1e-12


def test_trotter_slope_is_second_order_in_mse():
    """b_flow carries the noise exactly, so piecewise Trotter converges with strong order one."""
    system = benchmark_system("noncommuting")
    batch = generate_batch(20240601, range(300), 1, 11, system.horizon)
    reference = reference_flow(system, batch)
    errors = {n: path_sup_errors(system, SchemeKind.TROTTER_PIECEWISE, n, batch, reference) for n in (16, 32, 64, 128)}
    report = ConvergenceReport.from_path_errors("trotter-piecewise", system.system_id, 20240601, errors)
    assert -2.4 <= report.slope <= -1.4
    assert all(report.improvements())


def test_sup_error_mc_defaults_to_the_reference_level():
    mse, stderr = sup_error_mc(benchmark_system("noncommuting"), SchemeKind.TROTTER_PIECEWISE, 16, 8, 3)
    assert mse > 0
    assert np.isfinite(stderr)


def test_partial_split_is_exact_when_everything_commutes():
    outer, inner = np.diag([-0.3, 0.1]), np.diag([0.2, -0.4])
    system = MatrixSDESystem(outer + inner, (np.diag([0.5, 0.2]),), [1.0, 0.5], 1.0, "diagonal", drift_split=(outer, inner))
    assert system.commuting
    batch = generate_batch(12, range(20), 1, 8, system.horizon)
    for n in (4, 64):
        errors = path_sup_errors(system, SchemeKind.PARTIAL_SPLIT, n, batch)
        assert np.sqrt(np.max(errors)) <= 1e-10


def test_b_flow_composes_over_adjacent_increments():
    b = np.array([[0.3, -1.0], [0.5, 0.1]])
    composed = b_flow(b, 0.25, 0.01) @ b_flow(b, -0.4, 0.03)
    assert np.max(np.abs(composed - b_flow(b, -0.15, 0.04))) < 1e-12


def test_dissipativity_residual_vanishes_with_hamiltonian_part():
    """Adding i H with hermitian H to K = L^2 / 2 keeps the residual at zero."""
    rng = np.random.default_rng(5)
    raw = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    hamiltonian = raw + raw.conj().T
    raw = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    lindblad = raw + raw.conj().T
    trials = random_trial_vectors(3, 40, 2)
    residual = dissipativity_residual(1j * hamiltonian + 0.5 * lindblad @ lindblad, [lindblad], trials)
    assert abs(residual) < 1e-10
