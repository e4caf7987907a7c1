"""
GRW and QMUPL collapse dynamics on the spectral grid.

GRW: deterministic hit times k/mu; before each hit the state evolves freely for 1/mu, then it
is multiplied by the hitting function (alpha/pi)^{1/4} exp(-alpha/2 (x - Y)^2) and normalised.
The flash Y is sampled exactly from the grid flash law: a categorical draw X from
|free(psi)|^2 dx followed by Y = X + N(0, 1/(2 alpha)).

QMUPL: the product formula with A = sqrt(lam) x under the reference measure Q. Physical
statistics reweight every path by its terminal weight ||psi_T||^2.

With mu alpha = 2 lam and no free evolution both models produce the same wavefunctions from
the same centres: QMUPL centres are Z_k = mu / (2 sqrt(lam)) (xi_{k/mu} - xi_{(k-1)/mu}).
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from src.errors import EnsembleError
from src.numerics_core import (
    WeightedSample,
    effective_sample_size,
    ks_critical_value,
    ks_distance,
    mean_and_stderr,
    variance_and_stderr,
    weighted_moments,
    weighted_variance,
)
from src.spectral_sse import (
    FactorOrder,
    GridState,
    SpatialGrid,
    _free,
    _moments,
    free_phase,
    gaussian_packet,
    product_formula_run,
    superpose,
)
from src.wiener_paths import BOOTSTRAP_STREAM, FLASH_STREAM, LatticeBatch, generate_batch, level_of, path_generator

logger = logging.getLogger(__name__)

MIN_HITS_FOR_LIMIT = 4
MIN_ESS = 100.0


@dataclass(frozen=True)
class CollapseConfig:
    lam: float
    alpha: float
    mu: float
    horizon: float
    include_h: bool = True
    paths: int = 1024
    master_seed: int = 0
    grid: SpatialGrid = field(default_factory=lambda: SpatialGrid(10.0, 512))
    packet: tuple[float, float, float] = (0.0, 0.0, 1.0)
    cat_separation: float = 0.0
    linked_scaling: bool = True

    def __post_init__(self) -> None:
        if self.lam < 0 or not self.alpha > 0 or not self.mu > 0 or not self.horizon > 0:
            message = f"collapse rates must be positive: lam={self.lam}, alpha={self.alpha}, mu={self.mu}, T={self.horizon}"
            logger.error(message)
            raise EnsembleError(message)
        if self.linked_scaling and not np.isclose(self.mu * self.alpha, 2.0 * self.lam, rtol=1e-12, atol=0.0):
            message = f"linked scaling needs mu*alpha = 2*lam, got {self.mu * self.alpha} vs {2.0 * self.lam}"
            logger.error(message)
            raise EnsembleError(message)
        if self.paths < 1:
            raise EnsembleError(f"ensemble size must be positive, got {self.paths}")

    @classmethod
    def linked(cls, lam: float, alpha: float, horizon: float, **kwargs) -> "CollapseConfig":
        """Config with mu = 2 lam / alpha. lam = 0 has no GRW partner; pass mu with linked_scaling=False."""
        if not lam > 0:
            message = f"linked scaling mu = 2 lam / alpha needs lam > 0, got lam={lam}"
            logger.error(message)
            raise EnsembleError(message)
        return cls(lam=lam, alpha=alpha, mu=2.0 * lam / alpha, horizon=horizon, **kwargs)

    @property
    def hits(self) -> int:
        return int(np.floor(self.mu * self.horizon + 1e-9))

    def initial_state(self) -> GridState:
        x0, p0, sigma = self.packet
        if self.cat_separation <= 0:
            return gaussian_packet(self.grid, x0, p0, sigma)
        half = 0.5 * self.cat_separation
        return superpose(gaussian_packet(self.grid, x0 - half, p0, sigma), gaussian_packet(self.grid, x0 + half, p0, sigma))


@dataclass(frozen=True)
class FlashRecord:
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise EnsembleError("flash times must be strictly increasing")


def hitting_function(grid: SpatialGrid, alpha: float, centers) -> np.ndarray:
    centers = np.asarray(centers, dtype=float)
    return (alpha / np.pi) ** 0.25 * np.exp(-0.5 * alpha * (grid.nodes - centers[..., None]) ** 2)


def _normalize(grid: SpatialGrid, amplitudes: np.ndarray) -> np.ndarray:
    norm2 = np.sum(np.abs(amplitudes) ** 2, axis=-1) * grid.dx
    if np.any(norm2 <= 0):
        message = "collapse produced a zero state"
        logger.error(message)
        raise EnsembleError(message)
    return amplitudes / np.sqrt(norm2)[..., None]


def _hit(grid: SpatialGrid, pre: np.ndarray, alpha: float, uniforms, normals) -> tuple[np.ndarray, np.ndarray]:
    """Sample flashes by inverse CDF on |pre|^2 plus Gaussian smearing, then apply the hit."""
    cdf = np.cumsum(np.abs(pre) ** 2, axis=-1)
    if np.any(cdf[..., -1] <= 0):
        message = "flash sampling from a zero state"
        logger.error(message)
        raise EnsembleError(message)
    target = np.asarray(np.asarray(uniforms) * cdf[..., -1])
    index = np.minimum(np.sum(cdf <= target[..., None], axis=-1), grid.points - 1)
    flashes = grid.nodes[index] + np.asarray(normals) / np.sqrt(2.0 * alpha)
    return _normalize(grid, hitting_function(grid, alpha, flashes) * pre), flashes


def grw_step(state: GridState, alpha: float, mu: float, include_h: bool, rng: np.random.Generator) -> tuple[GridState, float]:
    """One GRW collapse: free evolution for 1/mu (when enabled), flash draw, hit, normalisation."""
    pre = _free(state.amplitudes, free_phase(state.grid, 1.0 / mu)) if include_h else state.amplitudes
    uniform, normal = rng.random(), rng.standard_normal()
    amplitudes, flash = _hit(state.grid, pre, alpha, uniform, normal)
    return GridState(state.grid, amplitudes), float(flash)


def flash_density(state: GridState, alpha: float, mu: float, include_h: bool, y=None) -> np.ndarray:
    """Density of the next flash, int (alpha/pi)^{1/2} exp(-alpha (x - y)^2) |free(psi)|^2 dx / ||psi||^2."""
    grid = state.grid
    pre = _free(state.amplitudes, free_phase(grid, 1.0 / mu)) if include_h else state.amplitudes
    density = np.abs(pre) ** 2 / (np.sum(np.abs(pre) ** 2) * grid.dx)
    y = grid.nodes if y is None else np.asarray(y, dtype=float)
    kernel = np.abs(hitting_function(grid, alpha, y)) ** 2
    return kernel @ density * grid.dx


@dataclass(frozen=True)
class GRWEnsemble:
    """Flashes (P, K) and observables after each hit (P, K + 1), column 0 being the initial state."""

    path_ids: tuple[int, ...]
    times: np.ndarray
    flashes: np.ndarray = field(repr=False)
    mean_x: np.ndarray = field(repr=False)
    var_x: np.ndarray = field(repr=False)
    final: GridState = field(repr=False)

    def record(self, index: int) -> FlashRecord:
        return FlashRecord(self.times[1:], self.flashes[index])

    def flash_frame(self) -> pd.DataFrame:
        paths, hits = self.flashes.shape
        return pd.DataFrame(
            {
                "path": np.repeat(np.asarray(self.path_ids), hits),
                "k": np.tile(np.arange(1, hits + 1), paths),
                "t": np.tile(self.times[1:], paths),
                "Y": self.flashes.ravel(),
            }
        )


def grw_ensemble(config: CollapseConfig, path_ids: Sequence[int], hits: int | None = None) -> GRWEnsemble:
    """GRW trajectories for a block of paths; each path draws from its own flash stream."""
    hits = config.hits if hits is None else hits
    if hits < 1:
        message = f"GRW needs mu*T >= 1, got {config.mu * config.horizon}"
        logger.error(message)
        raise EnsembleError(message)
    grid = config.grid
    path_ids = tuple(int(p) for p in path_ids)
    uniforms = np.empty((len(path_ids), hits))
    normals = np.empty((len(path_ids), hits))
    for row, path_id in enumerate(path_ids):
        rng = path_generator(config.master_seed, path_id, FLASH_STREAM)
        uniforms[row] = rng.random(hits)
        normals[row] = rng.standard_normal(hits)

    psi = np.array(np.broadcast_to(config.initial_state().amplitudes, (len(path_ids), grid.points)))
    phase = free_phase(grid, 1.0 / config.mu) if config.include_h else None
    flashes = np.empty((len(path_ids), hits))
    mean_x = np.empty((len(path_ids), hits + 1))
    var_x = np.empty_like(mean_x)
    mean_x[:, 0], var_x[:, 0], _ = _moments(grid, psi)
    for k in range(hits):
        pre = _free(psi, phase) if phase is not None else psi
        psi, flashes[:, k] = _hit(grid, pre, config.alpha, uniforms[:, k], normals[:, k])
        mean_x[:, k + 1], var_x[:, k + 1], _ = _moments(grid, psi)
    logger.debug(f"GRW ensemble: {len(path_ids)} paths, {hits} hits, alpha={config.alpha}, mu={config.mu}")
    return GRWEnsemble(path_ids, np.arange(hits + 1) / config.mu, flashes, mean_x, var_x, GridState(grid, psi))


def grw_trajectory(config: CollapseConfig, path_id: int) -> tuple[FlashRecord, np.ndarray, np.ndarray]:
    """(flashes, <x> series, var(x) series) of one path at the hit times."""
    ensemble = grw_ensemble(config, [path_id])
    return ensemble.record(0), ensemble.mean_x[0], ensemble.var_x[0]


def grw_map_h0(state: GridState, alpha: float, centers) -> GridState:
    """Normalised prod_k hit(centre_k) psi_0 with no free evolution; centres (K,) or (P, K)."""
    centers = np.asarray(centers, dtype=float)
    amplitudes = state.amplitudes * np.prod(hitting_function(state.grid, alpha, centers), axis=-2)
    return GridState(state.grid, _normalize(state.grid, amplitudes))


@dataclass(frozen=True)
class WeightedEnsemble:
    """QMUPL paths under Q: observables of phi_t = psi_t / ||psi_t|| on the n-lattice and weights ||psi_T||^2."""

    path_ids: tuple[int, ...]
    times: np.ndarray
    weights: np.ndarray = field(repr=False)
    mean_x: np.ndarray = field(repr=False)
    var_x: np.ndarray = field(repr=False)
    norm2: np.ndarray = field(repr=False)
    final: GridState | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if np.any(self.weights < 0):
            raise EnsembleError("importance weights must be nonnegative")

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def time_index(self, t: float) -> int:
        index = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[index], t, rtol=0.0, atol=1e-12):
            raise EnsembleError(f"t={t} is not on the ensemble lattice")
        return index

    def sample(self, observable: str, t: float, min_ess: float = MIN_ESS) -> WeightedSample:
        """Weighted sample of one observable at t; refuses an ensemble whose ESS is below min_ess."""
        ess = self.ess
        if ess < min_ess:
            message = f"QMUPL ensemble degenerate: ESS={ess:.1f} over {len(self.path_ids)} paths, need {min_ess}"
            logger.error(message)
            raise EnsembleError(message)
        values = {"mean_x": self.mean_x, "var_x": self.var_x}[observable][:, self.time_index(t)]
        return WeightedSample(values, self.weights)

    def frame(self) -> pd.DataFrame:
        paths, points = self.mean_x.shape
        return pd.DataFrame(
            {
                "path": np.repeat(np.asarray(self.path_ids), points),
                "t": np.tile(self.times, paths),
                "mean_x": self.mean_x.ravel(),
                "var_x": self.var_x.ravel(),
                "weight": np.repeat(self.weights, points),
            }
        )


def qmupl_lattice(config: CollapseConfig, path_ids: Sequence[int], n: int) -> LatticeBatch:
    return generate_batch(config.master_seed, path_ids, 1, level_of(n), config.horizon)


def qmupl_ensemble(
    config: CollapseConfig,
    n: int,
    path_ids: Sequence[int] | None = None,
    order: FactorOrder | str = FactorOrder.REVERSED,
    lattice: LatticeBatch | None = None,
) -> WeightedEnsemble:
    """QMUPL under Q with n product-formula steps; the free factor precedes the collapse factor by default."""
    path_ids = range(config.paths) if path_ids is None else path_ids
    lattice = lattice or qmupl_lattice(config, path_ids, n)
    run = product_formula_run(config.initial_state(), lattice, n, config.lam, include_h=config.include_h, order=order)
    return WeightedEnsemble(run.path_ids, run.times, run.norm2[:, -1], run.mean_x, run.var_x, run.norm2, run.final)


def qmupl_centers(lattice: LatticeBatch, mu: float, lam: float, hits: int) -> np.ndarray:
    """Z_k = mu / (2 sqrt(lam)) (xi_{k/mu} - xi_{(k-1)/mu}), shape (P, K); needs T = K/mu."""
    if not np.isclose(hits / mu, lattice.horizon, rtol=1e-12, atol=0.0):
        raise EnsembleError(f"hit times k/mu do not end at T: {hits}/{mu} vs {lattice.horizon}")
    return mu / (2.0 * np.sqrt(lam)) * lattice.coarsen(level_of(hits, lattice.finest_level))[:, 0, :]


def _pair_statistics(grw_values, reference: WeightedSample) -> dict:
    ess = effective_sample_size(reference.weights)
    return {
        "ks": ks_distance(np.asarray(grw_values), reference),
        "critical": ks_critical_value(len(grw_values), ess),
        "d_mean": float(np.mean(grw_values)) - weighted_moments(reference, 1),
        "d_var": float(np.var(grw_values)) - weighted_variance(reference),
        "ess": ess,
    }


def simulate_equivalence(config: CollapseConfig, path_ids: Sequence[int]) -> dict[str, np.ndarray]:
    """Per-path GRW flashes, QMUPL centres and weights, and the H=0 wavefunction map mismatch."""
    if config.include_h or not config.linked_scaling:
        message = "equivalence check needs include_h=false and linked scaling"
        logger.error(message)
        raise EnsembleError(message)
    hits = config.hits
    grw = grw_ensemble(config, path_ids)
    lattice = qmupl_lattice(config, path_ids, hits)
    qmupl = qmupl_ensemble(config, hits, path_ids, lattice=lattice)
    centers = qmupl_centers(lattice, config.mu, config.lam, hits)
    phi = qmupl.final.normalized().amplitudes
    mapped = grw_map_h0(config.initial_state(), config.alpha, centers).amplitudes
    return {
        "flashes": grw.flashes,
        "centers": centers,
        "weights": qmupl.weights,
        "map_error": np.max(np.abs(phi - mapped), axis=-1),
    }


def summarize_equivalence(records: dict[str, np.ndarray], config: CollapseConfig) -> pd.DataFrame:
    """One row per hit index: KS of Y_k vs weighted Z_k, moment deltas, ESS and Var_Q(Z_k)."""
    rows = []
    for k in range(records["flashes"].shape[1]):
        stats = _pair_statistics(records["flashes"][:, k], WeightedSample(records["centers"][:, k], records["weights"]))
        var_z, var_z_se = variance_and_stderr(records["centers"][:, k])
        rows.append({"k": k + 1, **stats, "var_z": var_z, "var_z_se": var_z_se, "var_z_target": 1.0 / (2.0 * config.alpha)})
    return pd.DataFrame(rows)


def equivalence_check_h0(config: CollapseConfig) -> tuple[pd.DataFrame, float]:
    """GRW flashes vs weighted QMUPL centres with no free evolution; also returns the max map mismatch."""
    records = simulate_equivalence(config, range(config.paths))
    return summarize_equivalence(records, config), float(np.max(records["map_error"]))


def simulate_continuum(
    lam: float,
    horizon: float,
    alphas: Sequence[float],
    reference_steps: int,
    path_ids: Sequence[int],
    master_seed: int,
    grid: SpatialGrid,
    packet: tuple[float, float, float] = (0.0, 0.0, 1.0),
    cat_separation: float = 0.0,
    include_h: bool = True,
) -> dict[str, np.ndarray]:
    """
    Observables at T/2 and T for every scaled GRW level and for the fine QMUPL reference.
    Keys: grw_<i>_<observable>_<half|end>, qmupl_<observable>_<half|end>, weights.
    """
    common = dict(master_seed=master_seed, grid=grid, packet=packet, cat_separation=cat_separation, include_h=include_h)
    records = {}
    for i, alpha in enumerate(alphas):
        config = CollapseConfig.linked(lam, alpha, horizon, **common)
        if config.hits < MIN_HITS_FOR_LIMIT or config.hits % 2:
            message = f"alpha={alpha} gives mu*T={config.mu * horizon}; need an even count of at least {MIN_HITS_FOR_LIMIT} hits"
            logger.error(message)
            raise EnsembleError(message)
        grw = grw_ensemble(config, path_ids)
        for name, series in (("mean_x", grw.mean_x), ("var_x", grw.var_x)):
            records[f"grw_{i}_{name}_half"] = series[:, config.hits // 2]
            records[f"grw_{i}_{name}_end"] = series[:, config.hits]
    reference = qmupl_ensemble(CollapseConfig(lam, alphas[0], 2.0 * lam / alphas[0], horizon, **common), reference_steps, path_ids)
    for name, series in (("mean_x", reference.mean_x), ("var_x", reference.var_x)):
        records[f"qmupl_{name}_half"] = series[:, reference_steps // 2]
        records[f"qmupl_{name}_end"] = series[:, reference_steps]
    records["weights"] = reference.weights
    return records


def bootstrap_noise_floor(reference: WeightedSample, size: int, repetitions: int, rng: np.random.Generator) -> tuple[float, float]:
    """
    Mean and spread of the KS distance between two samples of one law: `size` draws from the
    weighted reference against a path bootstrap of the reference. Both sides carry sampling
    noise, as the GRW and QMUPL ensembles do.
    """
    count = len(reference)
    probabilities = reference.weights / np.sum(reference.weights)
    distances = []
    for _ in range(repetitions):
        surrogate = rng.choice(reference.values, size=size, p=probabilities)
        rows = rng.integers(0, count, size=count)
        distances.append(ks_distance(surrogate, WeightedSample(reference.values[rows], reference.weights[rows])))
    return float(np.mean(distances)), float(np.std(distances, ddof=1))


def summarize_continuum(
    records: dict[str, np.ndarray],
    lam: float,
    horizon: float,
    alphas: Sequence[float],
    master_seed: int,
    bootstrap_repetitions: int = 20,
) -> pd.DataFrame:
    """Distance table: one row per (alpha, t, observable)."""
    rows = []
    weights = records["weights"]
    for i, alpha in enumerate(alphas):
        for label, t in (("half", 0.5 * horizon), ("end", horizon)):
            for observable in ("mean_x", "var_x"):
                reference = WeightedSample(records[f"qmupl_{observable}_{label}"], weights)
                grw_values = records[f"grw_{i}_{observable}_{label}"]
                rng = path_generator(master_seed, i, BOOTSTRAP_STREAM)
                floor, spread = bootstrap_noise_floor(reference, grw_values.size, bootstrap_repetitions, rng)
                stats = _pair_statistics(grw_values, reference)
                rows.append(
                    {
                        "alpha": alpha,
                        "mu": 2.0 * lam / alpha,
                        "t": t,
                        "observable": observable,
                        "ks": stats["ks"],
                        "d_mean": stats["d_mean"],
                        "d_var": stats["d_var"],
                        "ess": stats["ess"],
                        "noise_floor": floor,
                        "ks_se": spread,
                    }
                )
    return pd.DataFrame(rows)


def continuum_limit_study(
    lam: float,
    horizon: float,
    alphas: Sequence[float],
    paths: int,
    master_seed: int,
    grid: SpatialGrid,
    reference_steps: int = 256,
    **kwargs,
) -> pd.DataFrame:
    records = simulate_continuum(lam, horizon, alphas, reference_steps, range(paths), master_seed, grid, **kwargs)
    return summarize_continuum(records, lam, horizon, alphas, master_seed)


def simulate_lindblad(
    lam: float,
    horizon: float,
    pairs: Sequence[tuple[float, float]],
    path_ids: Sequence[int],
    master_seed: int,
    state: GridState,
    steps: int = 16,
) -> np.ndarray:
    """Per-path psi_T(x) conj(psi_T(y)) / (psi_0(x) conj(psi_0(y))), shape (P, pairs), with H off."""
    grid = state.grid
    indices = np.array([[grid.index_of(x), grid.index_of(y)] for x, y in pairs])
    if np.any(np.abs(state.amplitudes[indices]) == 0):
        raise EnsembleError("Lindblad pairs must sit where the initial state is nonzero")
    lattice = generate_batch(master_seed, path_ids, 1, level_of(steps), horizon)
    final = product_formula_run(state, lattice, steps, lam, include_h=False).final.amplitudes
    products = final[:, indices[:, 0]] * np.conj(final[:, indices[:, 1]])
    initial = state.amplitudes[indices[:, 0]] * np.conj(state.amplitudes[indices[:, 1]])
    return np.real(products / initial)


def summarize_lindblad(ratios: np.ndarray, lam: float, horizon: float, pairs: Sequence[tuple[float, float]]) -> pd.DataFrame:
    rows = []
    for column, (x, y) in enumerate(pairs):
        estimate, stderr = mean_and_stderr(ratios[:, column])
        exact = float(np.exp(-0.5 * lam * (x - y) ** 2 * horizon))
        tolerance = max(3.0 * stderr, 1e-12 * exact)
        rows.append(
            {
                "x": x,
                "y": y,
                "factor_mc": estimate,
                "factor_se": stderr,
                "factor_exact": exact,
                "rel_error": abs(estimate - exact) / exact,
                "ess": effective_sample_size(np.abs(ratios[:, column])),
                "pass": bool(abs(estimate - exact) <= tolerance),
            }
        )
    return pd.DataFrame(rows)


def lindblad_check_h0(
    lam: float,
    horizon: float,
    pairs: Sequence[tuple[float, float]],
    paths: int,
    master_seed: int,
    state: GridState,
    steps: int = 16,
) -> pd.DataFrame:
    """MC off-diagonal decay E_Q[psi_T(x) conj psi_T(y)] against exp(-lam (x - y)^2 T / 2)."""
    ratios = simulate_lindblad(lam, horizon, pairs, range(paths), master_seed, state, steps)
    return summarize_lindblad(ratios, lam, horizon, pairs)


@dataclass(frozen=True)
class LindbladFactor:
    exact: float
    linearized: float

    @property
    def relative_gap(self) -> float:
        return abs(self.exact - self.linearized) / self.linearized if self.linearized else 0.0


def grw_lindblad_factor(alpha: float, mu: float, delta: float) -> LindbladFactor:
    """GRW decoherence rate mu (1 - exp(-alpha delta^2 / 4)) and its small-alpha form alpha mu delta^2 / 4."""
    return LindbladFactor(mu * -np.expm1(-0.25 * alpha * delta**2), 0.25 * alpha * mu * delta**2)
