"""
Split-step Fourier realisation of the conservative stochastic Schroedinger equation

    d psi = -i H psi dt + A psi dxi - 1/2 A^2 psi dt,   H = -1/2 d^2/dx^2,   A = sqrt(lam) x

on a uniform periodic grid in one dimension. H acts as the Fourier multiplier
exp(-i kappa^2 dt / 2); the collapse factor is a pointwise multiplication.

Amplitude arrays carry an optional leading batch axis, one row per Monte-Carlo path.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import erfc

from src.errors import GridError, OverflowGuardError
from src.numerics_core import fft, ifft
from src.wiener_paths import LatticeBatch, WienerLattice, as_batch, level_of

logger = logging.getLogger(__name__)

TAIL_FRACTION_LIMIT = 1e-10
TAIL_REGION = 0.9  # |x| > 0.9 Lx is the outer 10% of the grid
PACKET_OUTSIDE_LIMIT = 1e-12
EXPONENT_LIMIT = 700.0
GROWTH_BUDGET = 600.0


class FactorOrder(str, Enum):
    STANDARD = "standard"  # collapse factor, then free factor
    REVERSED = "reversed"  # free factor, then collapse factor


@dataclass(frozen=True)
class SpatialGrid:
    half_width: float
    points: int

    def __post_init__(self) -> None:
        if self.points < 2 or self.points & (self.points - 1):
            raise GridError(f"grid size must be a power of two, got {self.points}")
        if not self.half_width > 0:
            raise GridError(f"grid half-width must be positive, got {self.half_width}")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.points

    @property
    def nodes(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.points)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.dx)

    def index_of(self, x: float) -> int:
        """Index of the node at x; x must be a node."""
        index = int(round((x + self.half_width) / self.dx))
        if not 0 <= index < self.points or abs(self.nodes[index] - x) > 1e-9 * self.dx:
            raise GridError(f"x={x} is not a grid node")
        return index


@dataclass(frozen=True, eq=False)
class GridState:
    grid: SpatialGrid
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if amplitudes.shape[-1] != self.grid.points:
            raise GridError(f"state has {amplitudes.shape[-1]} amplitudes for a grid of {self.grid.points}")
        if not np.all(np.isfinite(amplitudes)):
            raise GridError("state has non-finite amplitudes")
        object.__setattr__(self, "amplitudes", amplitudes)

    @property
    def norm2(self):
        """sum |psi(x_k)|^2 dx, per path for a batch."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1) * self.grid.dx

    @property
    def batched(self) -> bool:
        return self.amplitudes.ndim == 2

    def path(self, index: int) -> "GridState":
        return GridState(self.grid, self.amplitudes[index])

    def normalized(self) -> "GridState":
        norm2 = np.asarray(self.norm2)
        if np.any(norm2 <= 0):
            raise GridError("cannot normalise a zero state")
        return GridState(self.grid, self.amplitudes / np.sqrt(norm2)[..., None])


def gaussian_packet(grid: SpatialGrid, x0: float, p0: float, sigma: float) -> GridState:
    """
    psi(x) ~ exp(-(x - x0)^2 / (4 sigma^2) + i p0 x), so |psi|^2 has position variance sigma^2
    and momentum variance 1 / (4 sigma^2). Normalised on the grid.
    """
    if not sigma > 0:
        raise GridError(f"packet width must be positive, got {sigma}")
    outside = 0.5 * erfc((grid.half_width - x0) / (np.sqrt(2.0) * sigma)) + 0.5 * erfc((grid.half_width + x0) / (np.sqrt(2.0) * sigma))
    if outside >= PACKET_OUTSIDE_LIMIT:
        message = f"packet (x0={x0}, sigma={sigma}) has mass {outside:.3g} outside [-{grid.half_width}, {grid.half_width}]"
        logger.error(message)
        raise GridError(message)
    x = grid.nodes
    amplitudes = np.exp(-((x - x0) ** 2) / (4.0 * sigma**2) + 1j * p0 * x)
    return GridState(grid, amplitudes).normalized()


def superpose(first: GridState, second: GridState, weight: float = 0.5) -> GridState:
    """Normalised sqrt(w) first + sqrt(1 - w) second."""
    if first.grid != second.grid:
        raise GridError("states live on different grids")
    amplitudes = np.sqrt(weight) * first.amplitudes + np.sqrt(1.0 - weight) * second.amplitudes
    return GridState(first.grid, amplitudes).normalized()


def indicator_state(grid: SpatialGrid, lower: float, upper: float) -> GridState:
    """
    chi_[lower, upper] on the grid, not normalised. Endpoint nodes carry amplitude sqrt(1/2)
    so the squared norm is the trapezoid rule.
    """
    x = grid.nodes
    tolerance = 1e-9 * grid.dx
    amplitudes = ((x >= lower - tolerance) & (x <= upper + tolerance)).astype(np.complex128)
    endpoints = (np.abs(x - lower) <= tolerance) | (np.abs(x - upper) <= tolerance)
    amplitudes[endpoints] = np.sqrt(0.5)
    return GridState(grid, amplitudes)


def mass_tail_fraction(state: GridState):
    density = np.abs(state.amplitudes) ** 2
    outer = np.abs(state.grid.nodes) > TAIL_REGION * state.grid.half_width
    return np.sum(density[..., outer], axis=-1) / np.sum(density, axis=-1)


def mass_tail_guard(state: GridState) -> None:
    fraction = float(np.max(mass_tail_fraction(state)))
    if fraction > TAIL_FRACTION_LIMIT:
        message = f"state has mass fraction {fraction:.3g} in the outer 10% of the grid"
        logger.error(message)
        raise GridError(message)


def check_growth_budget(grid: SpatialGrid, horizon: float, c: float, lam: float = 1.0) -> None:
    """Flows with c < 0 grow like exp(-2 c lam t x^2); require lam T Lx^2 <= 600."""
    if c < 0 and lam * horizon * grid.half_width**2 > GROWTH_BUDGET:
        message = f"lam*T*Lx^2 = {lam * horizon * grid.half_width**2:.4g} exceeds {GROWTH_BUDGET} for c={c}"
        logger.error(message)
        raise OverflowGuardError(message)


def free_phase(grid: SpatialGrid, dt: float) -> np.ndarray:
    return np.exp(-0.5j * grid.wavenumbers**2 * dt)


def _free(amplitudes: np.ndarray, phase: np.ndarray) -> np.ndarray:
    return ifft(fft(amplitudes) * phase)


def free_propagate(state: GridState, dt: float) -> GridState:
    """exp(-i H dt) as a Fourier multiplier; exactly unitary on the grid."""
    return GridState(state.grid, _free(state.amplitudes, free_phase(state.grid, dt)))


def _collapse_factor(grid: SpatialGrid, drive, dt: float, c: float) -> np.ndarray:
    """exp(x * drive - (1 + c) dt x^2) with drive of shape (...,)."""
    x = grid.nodes
    linear = np.asarray(drive, dtype=float)[..., None] * x
    exponent = linear - (1.0 + c) * dt * x**2
    if np.max(np.abs(linear), initial=0.0) > EXPONENT_LIMIT or np.max(exponent, initial=-np.inf) > EXPONENT_LIMIT:
        message = f"collapse exponent exceeds {EXPONENT_LIMIT} (max |x dxi| = {np.max(np.abs(linear)):.4g})"
        logger.error(message)
        raise OverflowGuardError(message)
    return np.exp(exponent)


def collapse_flow(state: GridState, dxi, dt: float, c: float = 0.0) -> GridState:
    """
    Pointwise multiplication by exp(x sum_j dxi_j - (1 + c) m dt x^2).

    `dxi` holds pre-scaled per-channel increments, shape (m,) for a single state or
    (P, m) for a batch; a scalar means one channel. `dt` is the pre-scaled step per channel.
    """
    if dt < 0:
        raise GridError(f"collapse flow needs dt >= 0, got {dt}")
    dxi = np.asarray(dxi, dtype=float)
    if dxi.ndim == state.amplitudes.ndim - 1:
        dxi = dxi[..., None]
    channels = dxi.shape[-1]
    factor = _collapse_factor(state.grid, np.sum(dxi, axis=-1), channels * dt, c)
    return GridState(state.grid, state.amplitudes * factor)


def _moments(grid: SpatialGrid, amplitudes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    density = np.abs(amplitudes) ** 2
    x = grid.nodes
    norm2 = np.sum(density, axis=-1) * grid.dx
    if np.any(norm2 <= 0):
        raise GridError("observables of a zero state")
    mean = np.sum(density * x, axis=-1) * grid.dx / norm2
    second = np.sum(density * x**2, axis=-1) * grid.dx / norm2
    return mean, np.maximum(second - mean**2, 0.0), norm2


def observables(state: GridState):
    """(<x>, var(x), norm^2) of |psi|^2 / norm^2; arrays for a batch."""
    mean, variance, norm2 = _moments(state.grid, state.amplitudes)
    if state.batched:
        return mean, variance, norm2
    return float(mean), float(variance), float(norm2)


def _apply_h(grid: SpatialGrid, amplitudes: np.ndarray) -> np.ndarray:
    return ifft(0.5 * grid.wavenumbers**2 * fft(amplitudes))


def _inner(grid: SpatialGrid, left: np.ndarray, right: np.ndarray):
    """<left, right> with the conjugate on the second argument."""
    return np.sum(left * np.conj(right), axis=-1) * grid.dx


def conservativity_residual_grid(state: GridState, lam: float = 1.0):
    """||A psi||^2 - 2 Re <(iH + A^2 / 2) psi, psi> with A = sqrt(lam) x."""
    grid, psi = state.grid, state.amplitudes
    a_psi = np.sqrt(lam) * grid.nodes * psi
    k_psi = 1j * _apply_h(grid, psi) + 0.5 * lam * grid.nodes**2 * psi
    return np.real(_inner(grid, a_psi, a_psi)) - 2.0 * np.real(_inner(grid, k_psi, psi))


def reference_operator_energy(state: GridState):
    """||N psi||^2 for N = x^2 - 1/2 Laplacian - 1, the Laplacian applied spectrally."""
    grid, psi = state.grid, state.amplitudes
    n_psi = grid.nodes**2 * psi + _apply_h(grid, psi) - psi
    return np.real(_inner(grid, n_psi, n_psi))


def mean_square_oracle(state: GridState, t: float, c: float, lam: float = 1.0) -> float:
    """E ||psi_t||^2 = sum exp(-2 c lam t x^2) |psi_0|^2 dx for the pure collapse flow."""
    weights = np.exp(-2.0 * c * lam * t * state.grid.nodes**2)
    return float(np.sum(weights * np.abs(state.amplitudes) ** 2) * state.grid.dx)


@dataclass(frozen=True)
class SSETrajectory:
    """Observables on the n-lattice, shape (P, n + 1), and the terminal states."""

    times: np.ndarray
    path_ids: tuple[int, ...]
    norm2: np.ndarray = field(repr=False)
    mean_x: np.ndarray = field(repr=False)
    var_x: np.ndarray = field(repr=False)
    final: GridState = field(repr=False)
    energy: np.ndarray | None = field(default=None, repr=False)
    snapshots: np.ndarray | None = field(default=None, repr=False)

    def to_frame(self) -> pd.DataFrame:
        paths, points = self.norm2.shape
        return pd.DataFrame(
            {
                "path": np.repeat(np.asarray(self.path_ids), points),
                "t": np.tile(self.times, paths),
                "norm2": self.norm2.ravel(),
                "mean_x": self.mean_x.ravel(),
                "var_x": self.var_x.ravel(),
            }
        )

    def dump_snapshots(self, path: str | Path) -> Path:
        """Amplitude snapshots as little-endian complex128, shape (P, n + 1, N) in C order."""
        if self.snapshots is None:
            raise GridError("trajectory was run without snapshots")
        path = Path(path)
        np.ascontiguousarray(self.snapshots, dtype="<c16").tofile(path)
        logger.info(f"Dumped amplitude snapshots {self.snapshots.shape} to {path}")
        return path


def product_formula_run(
    state: GridState,
    lattice: WienerLattice | LatticeBatch,
    n: int,
    lam: float,
    include_h: bool = True,
    c: float = 0.0,
    order: FactorOrder | str = FactorOrder.STANDARD,
    record_energy: bool = False,
    keep_snapshots: bool = False,
) -> SSETrajectory:
    """
    Alternate the collapse flow and the free flow over n steps of length T/n, one path per
    lattice in the batch. With m channels every channel carries A_j = sqrt(lam / m) x.
    """
    order = FactorOrder(order)
    batch = as_batch(lattice)
    level = level_of(n, batch.finest_level)
    if lam < 0:
        raise GridError(f"collapse intensity must be nonnegative, got {lam}")
    if state.batched:
        raise GridError("product_formula_run starts every path from one initial state")
    mass_tail_guard(state)
    check_growth_budget(state.grid, batch.horizon, c, lam)

    grid, dt, channels = state.grid, batch.dt(level), batch.channels
    drives = np.sqrt(lam / channels) * np.sum(batch.coarsen(level), axis=1)  # (P, n)
    scaled_dt = lam * dt
    phase = free_phase(grid, dt) if include_h else None

    psi = np.array(np.broadcast_to(state.amplitudes, (batch.size, grid.points)))
    norm2 = np.empty((batch.size, n + 1))
    mean_x = np.empty_like(norm2)
    var_x = np.empty_like(norm2)
    energy = np.empty_like(norm2) if record_energy else None
    snapshots = np.empty((batch.size, n + 1, grid.points), dtype=np.complex128) if keep_snapshots else None

    def record(k: int) -> None:
        mean_x[:, k], var_x[:, k], norm2[:, k] = _moments(grid, psi)
        if energy is not None:
            energy[:, k] = reference_operator_energy(GridState(grid, psi))
        if snapshots is not None:
            snapshots[:, k] = psi

    record(0)
    for k in range(n):
        if order is FactorOrder.REVERSED and include_h:
            psi = _free(psi, phase)
        psi = psi * _collapse_factor(grid, drives[:, k], scaled_dt, c)
        if order is FactorOrder.STANDARD and include_h:
            psi = _free(psi, phase)
        record(k + 1)

    final = GridState(grid, psi)
    tail = float(np.max(mass_tail_fraction(final)))
    if tail > TAIL_FRACTION_LIMIT:
        logger.warning(f"terminal states carry mass fraction {tail:.3g} in the grid margin")
    logger.debug(f"Product formula ({order.value}) finished: n={n}, lam={lam}, paths={batch.size}")
    return SSETrajectory(batch.times(level), batch.path_ids, norm2, mean_x, var_x, final, energy, snapshots)


def reversed_order_run(state: GridState, lattice: WienerLattice | LatticeBatch, n: int, lam: float, **kwargs) -> SSETrajectory:
    """Product formula with the free factor applied before the collapse factor in every step."""
    return product_formula_run(state, lattice, n, lam, order=FactorOrder.REVERSED, **kwargs)
