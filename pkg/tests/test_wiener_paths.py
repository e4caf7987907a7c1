"""
Tests for reproducible Wiener lattices.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import LatticeError
from src.wiener_paths import (
    FLASH_STREAM,
    as_batch,
    dump_increments,
    generate,
    generate_batch,
    level_of,
    path_generator,
    sup_increment_samples,
    sup_increment_statistic,
)


def test_generate_is_deterministic():
    """Same (seed, path id, level) gives bit-identical increments."""
    first = generate(42, 3, 2, 8, 1.0)
    second = generate(42, 3, 2, 8, 1.0)
    assert np.array_equal(first.increments, second.increments)
    assert first.increments.shape == (2, 256)
    assert not np.array_equal(first.increments, generate(42, 4, 2, 8, 1.0).increments)


def test_batch_rows_equal_single_paths():
    """A path's increments do not depend on the block it is generated in."""
    batch = generate_batch(9, [5, 2, 7], 1, 6, 0.5)
    for row, path_id in enumerate(batch.path_ids):
        assert np.array_equal(batch.increments[row], generate(9, path_id, 1, 6, 0.5).increments)
    assert np.array_equal(batch.lattice(1).increments, generate(9, 2, 1, 6, 0.5).increments)


def test_pairwise_coarsening_is_consistent_across_levels():
    """Coarsening by two levels equals coarsening one level twice, bit for bit."""
    lattice = generate(1, 0, 1, 10, 1.0)
    direct = lattice.coarsen(4)
    staged = generate(1, 0, 1, 10, 1.0).coarsen(5)
    assert np.array_equal(direct, staged[..., 0::2] + staged[..., 1::2])
    assert direct.shape == (1, 16)


def test_total_is_independent_of_starting_level():
    """xi_T from the pairwise tree is the same from every level."""
    lattice = generate(123, 17, 3, 9, 2.0)
    totals = [lattice.total(level) for level in range(10)]
    for total in totals[1:]:
        assert np.array_equal(total, totals[0])


def test_path_values_start_at_zero_and_match_times():
    lattice = generate(0, 0, 1, 4, 2.0)
    values = lattice.path_values(2)
    assert values.shape == (1, 5)
    assert values[0, 0] == 0.0
    assert lattice.times(2) == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    assert lattice.dt(2) == pytest.approx(0.5)


def test_increment_variance_matches_dt():
    """Fine increments are N(0, T / 2^L)."""
    batch = generate_batch(2024, range(400), 1, 8, 3.0)
    variance = np.var(batch.increments)
    assert variance == pytest.approx(3.0 / 256, rel=0.02)


def test_level_of_rejects_non_dyadic_counts():
    assert level_of(1) == 0
    assert level_of(512) == 9
    with pytest.raises(LatticeError):
        level_of(100)
    with pytest.raises(LatticeError):
        level_of(0)
    with pytest.raises(LatticeError):
        level_of(64, finest_level=5)


def test_invalid_requests_raise():
    with pytest.raises(LatticeError):
        generate(0, 0, 1, 27, 1.0)
    with pytest.raises(LatticeError):
        generate(0, 0, 1, 4, 0.0)
    with pytest.raises(LatticeError):
        generate(0, 0, 0, 4, 1.0)
    with pytest.raises(LatticeError):
        path_generator(-1, 0, 0)
    with pytest.raises(LatticeError):
        generate(0, 0, 1, 4, 1.0).coarsen(5)


def test_auxiliary_stream_is_independent_of_channel_zero():
    """Flash sampling never reuses the Wiener channel stream."""
    channel = path_generator(5, 1, 0).standard_normal(8)
    flash = path_generator(5, 1, FLASH_STREAM).standard_normal(8)
    assert not np.array_equal(channel, flash)


def test_sup_increment_statistic_single_step_oracle():
    """With n = 1 on a one-step lattice the statistic is E xi_T^2 = T."""
    batch = generate_batch(77, range(20000), 1, 0, 1.5)
    samples = sup_increment_samples(batch, 1)
    mean = np.mean(samples)
    stderr = np.std(samples, ddof=1) / np.sqrt(samples.size)
    assert abs(mean - 1.5) <= 4 * stderr


def test_sup_increment_statistic_decreases_with_n():
    batch = generate_batch(3, range(200), 1, 10, 1.0)
    coarse = sup_increment_statistic(batch, 4)
    fine = sup_increment_statistic(batch, 256)
    assert fine < coarse


def test_sup_increment_neighbour_pairs_are_exact():
    """At n = 2^L the statistic is the largest squared fine increment."""
    lattice = generate(8, 0, 1, 5, 1.0)
    expected = np.max(lattice.increments[0] ** 2)
    assert sup_increment_samples(as_batch(lattice), 32)[0] == pytest.approx(expected, rel=1e-12)


def test_dump_increments_round_trip(tmp_path):
    lattice = generate(6, 2, 2, 3, 1.0)
    path = dump_increments(lattice, tmp_path / "increments.bin")
    restored = np.fromfile(path, dtype="<f8").reshape(lattice.increments.shape)
    assert np.array_equal(restored, lattice.increments)


def test_sup_increment_at_finest_level_exceeds_step_length():
    """A single-increment window gives E max_k |dxi_k|^2, well above T/n."""
    batch = generate_batch(14, range(400), 1, 6, 1.0)
    assert sup_increment_statistic(batch, 64) > 3.0 / 64


def test_sup_increment_sums_channel_ranges():
    batch = generate_batch(21, range(5), 2, 4, 1.0)
    expected = np.sum(np.max(batch.coarsen(4) ** 2, axis=-1), axis=-1)
    assert sup_increment_samples(batch, 16) == pytest.approx(expected, rel=1e-12)


def test_channels_are_uncorrelated():
    batch = generate_batch(11, range(4000), 2, 0, 1.0)
    totals = batch.coarsen(0)[:, :, 0]
    correlation = np.corrcoef(totals[:, 0], totals[:, 1])[0, 1]
    assert abs(correlation) <= 4.0 / np.sqrt(4000)
