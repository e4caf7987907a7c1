"""
Reproducible Wiener paths on a dyadic time lattice.

Every random number in the package comes from `path_generator`, a Philox
(counter-based) generator keyed by (master_seed, path_id, stream). A path's
increments therefore do not depend on which worker generates it or in which
order. Gaussians are drawn with numpy's ziggurat `standard_normal`; bit-level
regression tests rely on that choice staying fixed.

Coarsening is done by repeated pairwise summation of neighbouring increments,
so level l is always computed from level l+1 with the same additions and the
block sums are exactly consistent across levels.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from src.errors import LatticeError

logger = logging.getLogger(__name__)

MAX_LEVEL = 26
MAX_SEED = 2**64 - 1

# Auxiliary streams live far above any channel index.
FLASH_STREAM = 1 << 20
BOOTSTRAP_STREAM = (1 << 20) + 1
TRIAL_STREAM = (1 << 20) + 2


def path_generator(master_seed: int, path_id: int, stream: int) -> np.random.Generator:
    """Counter-based generator whose output is a pure function of its three keys."""
    if not 0 <= master_seed <= MAX_SEED:
        raise LatticeError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    if path_id < 0 or stream < 0:
        raise LatticeError(f"path_id and stream must be non-negative, got {path_id}, {stream}")
    seed_sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=(path_id, stream))
    return np.random.Generator(np.random.Philox(seed_sequence))


def _check_request(channels: int, level: int, horizon: float) -> None:
    if level < 0 or level > MAX_LEVEL:
        message = f"finest level must lie in [0, {MAX_LEVEL}], got {level}"
        logger.error(message)
        raise LatticeError(message)
    if not horizon > 0 or not np.isfinite(horizon):
        message = f"horizon must be positive and finite, got {horizon}"
        logger.error(message)
        raise LatticeError(message)
    if channels < 1:
        message = f"at least one Wiener channel is required, got {channels}"
        logger.error(message)
        raise LatticeError(message)


def _fine_increments(master_seed: int, path_id: int, channels: int, level: int, horizon: float) -> np.ndarray:
    scale = np.sqrt(horizon / 2**level)
    out = np.empty((channels, 2**level))
    for channel in range(channels):
        out[channel] = scale * path_generator(master_seed, path_id, channel).standard_normal(2**level)
    return out


def _pairwise_coarsen(increments: np.ndarray, finest_level: int, level: int) -> np.ndarray:
    if not 0 <= level <= finest_level:
        message = f"coarsening level must lie in [0, {finest_level}], got {level}"
        logger.error(message)
        raise LatticeError(message)
    coarse = increments
    for _ in range(finest_level - level):
        coarse = coarse[..., 0::2] + coarse[..., 1::2]
    return coarse


def _cumulative(increments: np.ndarray) -> np.ndarray:
    values = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=values[..., 1:])
    return values


def level_of(steps: int, finest_level: int | None = None) -> int:
    """Dyadic level of a step count; non-dyadic counts are rejected, never interpolated."""
    if steps < 1 or steps & (steps - 1):
        message = f"step count must be a power of two, got {steps}"
        logger.error(message)
        raise LatticeError(message)
    level = steps.bit_length() - 1
    if finest_level is not None and level > finest_level:
        message = f"step count {steps} exceeds the finest lattice 2^{finest_level}"
        logger.error(message)
        raise LatticeError(message)
    return level


@dataclass(frozen=True)
class WienerLattice:
    """Fine increments of m independent Wiener processes for one Monte-Carlo path."""

    horizon: float
    finest_level: int
    master_seed: int
    path_id: int
    increments: np.ndarray = field(repr=False)

    @property
    def channels(self) -> int:
        return self.increments.shape[0]

    @property
    def steps(self) -> int:
        return 2**self.finest_level

    def dt(self, level: int | None = None) -> float:
        return self.horizon / 2 ** (self.finest_level if level is None else level)

    def times(self, level: int | None = None) -> np.ndarray:
        level = self.finest_level if level is None else level
        return np.linspace(0.0, self.horizon, 2**level + 1)

    def coarsen(self, level: int) -> np.ndarray:
        """Increments at 2^level steps, shape (m, 2^level)."""
        return _pairwise_coarsen(self.increments, self.finest_level, level)

    def path_values(self, level: int | None = None) -> np.ndarray:
        """xi at the lattice times of `level`, shape (m, 2^level + 1), starting at 0."""
        return _cumulative(self.coarsen(self.finest_level if level is None else level))

    def total(self, level: int | None = None) -> np.ndarray:
        """xi_T computed by the pairwise tree, identical from every starting level."""
        start = self.finest_level if level is None else level
        return _pairwise_coarsen(self.coarsen(start), start, 0)[:, 0]


def generate(master_seed: int, path_id: int, channels: int, level: int, horizon: float) -> WienerLattice:
    """Generate one lattice; deterministic in all arguments."""
    _check_request(channels, level, horizon)
    increments = _fine_increments(master_seed, path_id, channels, level, horizon)
    increments.setflags(write=False)
    return WienerLattice(horizon, level, master_seed, path_id, increments)


@dataclass(frozen=True)
class LatticeBatch:
    """Lattices of a block of path ids stacked along a leading axis, shape (P, m, 2^L)."""

    horizon: float
    finest_level: int
    master_seed: int
    path_ids: tuple[int, ...]
    increments: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.path_ids)

    @property
    def channels(self) -> int:
        return self.increments.shape[1]

    def dt(self, level: int | None = None) -> float:
        return self.horizon / 2 ** (self.finest_level if level is None else level)

    def times(self, level: int | None = None) -> np.ndarray:
        level = self.finest_level if level is None else level
        return np.linspace(0.0, self.horizon, 2**level + 1)

    def coarsen(self, level: int) -> np.ndarray:
        return _pairwise_coarsen(self.increments, self.finest_level, level)

    def path_values(self, level: int | None = None) -> np.ndarray:
        return _cumulative(self.coarsen(self.finest_level if level is None else level))

    def lattice(self, index: int) -> WienerLattice:
        return WienerLattice(self.horizon, self.finest_level, self.master_seed, self.path_ids[index], self.increments[index])


def generate_batch(master_seed: int, path_ids: Sequence[int], channels: int, level: int, horizon: float) -> LatticeBatch:
    """Generate a block of lattices path by path, so each equals its single-path counterpart."""
    _check_request(channels, level, horizon)
    path_ids = tuple(int(p) for p in path_ids)
    increments = np.empty((len(path_ids), channels, 2**level))
    for row, path_id in enumerate(path_ids):
        increments[row] = _fine_increments(master_seed, path_id, channels, level, horizon)
    increments.setflags(write=False)
    logger.debug(f"Generated {len(path_ids)} lattices at level {level} with {channels} channel(s)")
    return LatticeBatch(horizon, level, master_seed, path_ids, increments)


def as_batch(lattice: WienerLattice | LatticeBatch) -> LatticeBatch:
    """View a single lattice as a batch of one path."""
    if isinstance(lattice, LatticeBatch):
        return lattice
    return LatticeBatch(lattice.horizon, lattice.finest_level, lattice.master_seed, (lattice.path_id,), lattice.increments[None])


def coarsen(lattice: WienerLattice | LatticeBatch, level: int) -> np.ndarray:
    return lattice.coarsen(level)


def path_values(lattice: WienerLattice | LatticeBatch, level: int | None = None) -> np.ndarray:
    return lattice.path_values(level)


def sup_increment_samples(ensemble: WienerLattice | LatticeBatch, n: int) -> np.ndarray:
    """
    Per-path sup over lattice pairs with |t - s| <= T/n of |xi_t - xi_s|^2 (channel norm).
    The sup over a window is (max - min)^2 of the path inside the window, computed with
    sliding extrema; for several channels the squared ranges are summed, an upper bound that
    is exact for m = 1.
    """
    window = 2**ensemble.finest_level // (2 ** level_of(n, ensemble.finest_level))
    values = ensemble.path_values()
    size = window + 1
    upper = maximum_filter1d(values, size=size, axis=-1, mode="nearest")
    lower = minimum_filter1d(values, size=size, axis=-1, mode="nearest")
    squared_range = np.max((upper - lower) ** 2, axis=-1)
    return np.sum(squared_range, axis=-2)


def sup_increment_statistic(ensemble: WienerLattice | LatticeBatch, n: int) -> float:
    """
    Monte-Carlo estimate of E sup_{|t-s|<=T/n} |xi_t - xi_s|^2 over the finest lattice.

    At n = 2^finest_level the window is a single fine increment, so the estimate is
    E max_k |dxi_k|^2 and not T/n. With several channels it is the sum of the per-channel
    values, an upper bound that is exact for one channel.
    """
    return float(np.mean(sup_increment_samples(ensemble, n)))


def dump_increments(lattice: WienerLattice | LatticeBatch, path: str | Path) -> Path:
    """Write the fine increments as little-endian float64, C order, for debugging."""
    path = Path(path)
    np.ascontiguousarray(lattice.increments, dtype="<f8").tofile(path)
    logger.info(f"Dumped {lattice.increments.size} increments to {path}")
    return path
