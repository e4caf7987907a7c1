"""
Experiment catalogue.

Every experiment kind is split into
  - validate(params): cheap semantic checks before any computation,
  - simulate(params, seed, path_ids): per-path records (arrays with a leading path axis),
  - summarize(params, seed, records): tables and pass/fail criteria from the merged records.
Simulation only ever sees a block of path ids, so the harness can chunk and parallelise
freely without changing any number.
"""

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema
import numpy as np
import pandas as pd

from shared.config import SPLITTING_SCHEMA_PATH
from src import collapse_models, matrix_sde, spectral_sse
from src.errors import ConfigError, SplittingError
from src.numerics_core import effective_sample_size, mean_and_stderr, quad_trapezoid, variance_and_stderr
from src.wiener_paths import TRIAL_STREAM, generate_batch, level_of, path_generator

logger = logging.getLogger(__name__)

Records = dict[str, np.ndarray]


@dataclass(frozen=True)
class Criterion:
    experiment: str
    criterion: str
    measured: float
    tolerance: Any
    passed: bool
    expected: float | None = None

    def to_dict(self) -> dict:
        entry = {
            "experiment": self.experiment,
            "criterion": self.criterion,
            "measured": _json_number(self.measured),
            "tolerance": _json_number(self.tolerance),
            "pass": bool(self.passed),
        }
        if self.expected is not None:
            entry["expected"] = _json_number(self.expected)
        return entry


def _json_number(value):
    if isinstance(value, (list, tuple)):
        return [_json_number(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


@dataclass
class ExperimentResult:
    experiment: str
    master_seed: int
    tables: dict[str, pd.DataFrame]
    criteria: list[Criterion]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "master_seed": self.master_seed,
            "pass": self.passed,
            "criteria": [c.to_dict() for c in self.criteria],
        }


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    master_seed: int
    params: dict = field(repr=False)
    output_dir: str | None = None
    source: str | None = None

    @property
    def definition(self) -> "Experiment":
        return EXPERIMENTS[self.experiment]

    @property
    def paths(self) -> int:
        return int(self.params["paths"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=seed)

    def to_dict(self) -> dict:
        data = {"experiment": self.experiment, "master_seed": self.master_seed, "params": self.params}
        if self.output_dir:
            data["output_dir"] = self.output_dir
        return data


@dataclass(frozen=True)
class Experiment:
    kind: str
    summary: str
    exercises: str
    defaults: dict
    parameters: dict[str, str]
    validate: Callable[[dict], None]
    simulate: Callable[[dict, int, Sequence[int]], Records]
    summarize: Callable[[dict, int, Records], ExperimentResult]


# helpers


def _grid(params: dict) -> spectral_sse.SpatialGrid:
    return spectral_sse.SpatialGrid(float(params["grid"]["half_width"]), int(params["grid"]["points"]))


def _packet(params: dict) -> tuple[float, float, float]:
    packet = params["packet"]
    return float(packet["x0"]), float(packet["p0"]), float(packet["sigma"])


def _packet_state(params: dict) -> spectral_sse.GridState:
    return spectral_sse.gaussian_packet(_grid(params), *_packet(params))


def _check_dyadic(values: Sequence[int], finest_level: int | None = None) -> None:
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"step counts must be strictly increasing, got {list(values)}")
    for n in values:
        level_of(int(n), finest_level)


def _within(kind: str, name: str, measured: float, expected: float, tolerance: float) -> Criterion:
    return Criterion(kind, name, measured, tolerance, bool(abs(measured - expected) <= tolerance), expected)


def _at_most(kind: str, name: str, measured: float, tolerance: float) -> Criterion:
    return Criterion(kind, name, measured, tolerance, bool(measured <= tolerance))


def _at_least(kind: str, name: str, measured: float, tolerance: float) -> Criterion:
    return Criterion(kind, name, measured, tolerance, bool(measured >= tolerance))


# matrix-converge


def _validate_matrix_converge(params: dict) -> None:
    level = int(params["finest_level"])
    for study in params["studies"]:
        system = matrix_sde.benchmark_system(study["system"], float(params["horizon"]))
        _check_dyadic(study.get("n_values", params["n_values"]), level)
        for scheme in study["schemes"]:
            kind = matrix_sde.SchemeKind(scheme)
            if kind is matrix_sde.SchemeKind.PARTIAL_SPLIT and system.drift_split is None:
                raise ConfigError(f"system {study['system']} has no drift split for partial-split")
            if kind is matrix_sde.SchemeKind.EXACT_COMMUTING and not system.commuting:
                raise ConfigError(f"system {study['system']} does not commute")


def _simulate_matrix_converge(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    level = int(params["finest_level"])
    records = {}
    for study in params["studies"]:
        system = matrix_sde.benchmark_system(study["system"], float(params["horizon"]))
        batch = generate_batch(seed, path_ids, system.channels, level, system.horizon)
        reference = matrix_sde.reference_flow(system, batch)
        for scheme in study["schemes"]:
            for n in study.get("n_values", params["n_values"]):
                records[f"{system.system_id}/{scheme}/{n}"] = matrix_sde.path_sup_errors(system, scheme, int(n), batch, reference)
        if not reference.exact and level >= 2:
            shift = matrix_sde.path_sup_errors(system, matrix_sde.SchemeKind.TROTTER_PIECEWISE, 2 ** (level - 2), batch, reference)
            records[f"{system.system_id}/reference-shift"] = shift
    return records


def _summarize_matrix_converge(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "matrix-converge"
    frames, shifts, criteria = [], [], []
    for study in params["studies"]:
        system = matrix_sde.benchmark_system(study["system"], float(params["horizon"]))
        ns = [int(n) for n in study.get("n_values", params["n_values"])]
        smallest_mse = np.inf
        for scheme in study["schemes"]:
            errors = {n: records[f"{system.system_id}/{scheme}/{n}"] for n in ns}
            report = matrix_sde.ConvergenceReport.from_path_errors(scheme, system.system_id, seed, errors)
            frames.append(report.to_frame())
            label = f"{system.system_id}/{scheme}"
            if system.commuting:
                deviation = float(np.sqrt(max(np.max(e) for e in errors.values())))
                criteria.append(_at_most(kind, f"{label} sup deviation from closed form", deviation, params["exact_tolerance"]))
                continue
            smallest_mse = min(smallest_mse, report.mse[-1])
            ratios = [b / a if a > 0 else np.inf for a, b in zip(report.mse, report.mse[1:])]
            worst_ratio = float(np.max(ratios)) if ratios else 0.0
            criteria.append(Criterion(kind, f"{label} MSE(2n) < MSE(n) at every pair", worst_ratio, 1.0, all(report.improvements())))
            window = params["slope_windows"].get(scheme)
            if window is not None and len(ns) >= 2:
                criteria.append(
                    Criterion(kind, f"{label} log-log MSE slope", report.slope, window, bool(window[0] <= report.slope <= window[1]))
                )
        key = f"{system.system_id}/reference-shift"
        if key in records:
            shift, shift_se = mean_and_stderr(records[key])
            shifts.append({"system_id": system.system_id, "finest_level": params["finest_level"], "shift_mse": shift, "shift_stderr": shift_se})
            criteria.append(
                Criterion(kind, f"{system.system_id} reference shift (level L-2 vs L) below smallest scheme MSE", shift, smallest_mse, bool(shift < smallest_mse))
            )
    tables = {"convergence": pd.concat(frames, ignore_index=True)}
    if shifts:
        tables["reference"] = pd.DataFrame(shifts)
    return ExperimentResult(kind, seed, tables, criteria)


# sse-martingale


def _validate_sse_martingale(params: dict) -> None:
    _check_dyadic(params["n_values"])
    spectral_sse.mass_tail_guard(_packet_state(params))
    if params["trajectory_paths"] > params["paths"]:
        raise ConfigError("trajectory_paths cannot exceed paths")


def _martingale_batch(params: dict, seed: int, path_ids: Sequence[int]):
    level = level_of(max(int(n) for n in params["n_values"]))
    return generate_batch(seed, path_ids, int(params["channels"]), level, float(params["horizon"]))


def _simulate_sse_martingale(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    state, batch = _packet_state(params), _martingale_batch(params, seed, path_ids)
    records = {}
    for n in params["n_values"]:
        run = spectral_sse.product_formula_run(state, batch, int(n), float(params["lam"]), order=params["order"], record_energy=True)
        records[f"norm2/{n}"] = run.norm2[:, -1]
        records[f"energy/{n}"] = np.max(run.energy, axis=1)
    return records


def _summarize_sse_martingale(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "sse-martingale"
    state = _packet_state(params)
    initial = float(state.norm2)
    ns = [int(n) for n in params["n_values"]]
    rows, criteria = [], []
    for n in ns:
        mean, stderr = mean_and_stderr(records[f"norm2/{n}"])
        rows.append({"n": n, "mean_norm2": mean, "stderr": stderr, "bias": mean - initial, "energy_max": float(np.max(records[f"energy/{n}"]))})
    final = rows[-1]
    criteria.append(_within(kind, f"E||psi_T||^2 at n={final['n']}", final["mean_norm2"], initial, 3.0 * final["stderr"]))
    if len(ns) >= 2:
        paired = records[f"norm2/{ns[-1]}"] - records[f"norm2/{ns[0]}"]
        _, paired_se = mean_and_stderr(paired)
        growth = abs(rows[-1]["bias"]) - abs(rows[0]["bias"])
        criteria.append(_at_most(kind, f"|bias| does not increase from n={ns[0]} to n={ns[-1]}", growth, 3.0 * paired_se))
    energy = max(row["energy_max"] for row in rows)
    criteria.append(Criterion(kind, "reference-operator energy finite along trajectories", energy, "finite", bool(np.isfinite(energy))))
    tables = {"martingale": pd.DataFrame(rows)}
    if params["trajectory_paths"] > 0:
        batch = _martingale_batch(params, seed, range(int(params["trajectory_paths"])))
        run = spectral_sse.product_formula_run(state, batch, ns[-1], float(params["lam"]), order=params["order"])
        tables["trajectory"] = run.to_frame()
    return ExperimentResult(kind, seed, tables, criteria)


# sse-growth


def _indicator(params: dict) -> spectral_sse.GridState:
    lower, upper = params["interval"]
    return spectral_sse.indicator_state(_grid(params), float(lower), float(upper))


def _validate_sse_growth(params: dict) -> None:
    grid = _grid(params)
    spectral_sse.check_growth_budget(grid, float(params["horizon"]), min(params["c_values"]))
    lower, upper = params["interval"]
    if not lower < upper:
        raise ConfigError(f"interval must be increasing, got {params['interval']}")
    grid.index_of(float(lower))
    grid.index_of(float(upper))


def _simulate_sse_growth(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    horizon = float(params["horizon"])
    state = _indicator(params)
    xi_t = generate_batch(seed, path_ids, 1, 0, horizon).path_values(0)[:, :, -1]  # (P, 1)
    return {f"norm2/{float(c)}": spectral_sse.collapse_flow(state, xi_t, horizon, float(c)).norm2 for c in params["c_values"]}


def _summarize_sse_growth(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "sse-growth"
    horizon = float(params["horizon"])
    state = _indicator(params)
    initial = float(state.norm2)
    lower, upper = (float(v) for v in params["interval"])
    rows, criteria = [], []
    for c in params["c_values"]:
        c = float(c)
        mean, stderr = mean_and_stderr(records[f"norm2/{c}"])
        nodes = np.linspace(lower, upper, int(params["quadrature_points"]))
        integral = float(quad_trapezoid(np.exp(-2.0 * c * horizon * nodes**2), dx=nodes[1] - nodes[0]))
        oracle = spectral_sse.mean_square_oracle(state, horizon, c)
        ess = effective_sample_size(records[f"norm2/{c}"])
        rows.append({"c": c, "mean_norm2": mean, "stderr": stderr, "ess": ess, "grid_oracle": oracle, "integral": integral})
        if c < 0:
            criteria.append(_within(kind, f"E||f_T||^2 matches integral of exp(-2ctx^2) (c={c})", mean, integral, 3.0 * stderr))
        elif c == 0:
            criteria.append(_within(kind, "E||psi_T||^2 conserved (c=0)", mean, initial, 3.0 * stderr))
        else:
            criteria.append(_at_most(kind, f"E||psi_T||^2 contracts (c={c})", mean, initial + 3.0 * stderr))

    conservativity = params["conservativity"]
    grid = spectral_sse.SpatialGrid(float(conservativity["grid"]["half_width"]), int(conservativity["grid"]["points"]))
    rng = path_generator(seed, 0, TRIAL_STREAM)
    shape = (int(conservativity["states"]), grid.points)
    states = spectral_sse.GridState(grid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).normalized()
    residual = np.abs(spectral_sse.conservativity_residual_grid(states))
    scale = np.sum(np.abs(grid.nodes * states.amplitudes) ** 2, axis=-1) * grid.dx
    worst = float(np.max(residual / scale))
    criteria.append(_at_most(kind, "conservativity residual relative to ||A psi||^2", worst, 1e-10))
    tables = {"growth": pd.DataFrame(rows), "conservativity": pd.DataFrame({"state": np.arange(shape[0]), "relative_residual": residual / scale})}
    return ExperimentResult(kind, seed, tables, criteria)


# collapse-equivalence


def _equivalence_config(params: dict, seed: int) -> collapse_models.CollapseConfig:
    return collapse_models.CollapseConfig.linked(
        float(params["lam"]),
        float(params["alpha"]),
        float(params["horizon"]),
        include_h=False,
        paths=int(params["paths"]),
        master_seed=seed,
        grid=_grid(params),
        packet=_packet(params),
    )


def _validate_collapse_equivalence(params: dict) -> None:
    config = _equivalence_config(params, 0)
    level_of(config.hits)
    if not np.isclose(config.hits / config.mu, config.horizon, rtol=1e-12, atol=0.0):
        raise ConfigError(f"T must be a whole number of GRW periods 1/mu; got mu*T = {config.mu * config.horizon}")
    spectral_sse.mass_tail_guard(config.initial_state())


def _simulate_collapse_equivalence(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    return collapse_models.simulate_equivalence(_equivalence_config(params, seed), path_ids)


def _summarize_collapse_equivalence(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "collapse-equivalence"
    config = _equivalence_config(params, seed)
    table = collapse_models.summarize_equivalence(records, config)
    first = table.iloc[0]
    criteria = [
        _at_most(kind, "H=0 wavefunction map GRW(Y=Z) vs QMUPL", float(np.max(records["map_error"])), params["map_tolerance"]),
        Criterion(kind, "KS(Y_1, weighted Z_1) below 1% critical value", float(first["ks"]), float(first["critical"]), bool(first["ks"] < first["critical"])),
        _at_least(kind, "effective sample size", float(first["ess"]), params["min_ess"]),
    ]
    for row in table.itertuples():
        criteria.append(_within(kind, f"Var_Q(Z_{row.k}) = 1/(2 alpha)", row.var_z, row.var_z_target, 3.0 * row.var_z_se))
    flashes = pd.DataFrame(
        {
            "path": np.repeat(np.arange(records["flashes"].shape[0]), config.hits),
            "k": np.tile(np.arange(1, config.hits + 1), records["flashes"].shape[0]),
            "t": np.tile(np.arange(1, config.hits + 1) / config.mu, records["flashes"].shape[0]),
            "Y": records["flashes"].ravel(),
        }
    )
    return ExperimentResult(kind, seed, {"equivalence": table, "flashes": flashes}, criteria)


# flash-marginal


def _flash_config(params: dict, seed: int) -> collapse_models.CollapseConfig:
    alpha, mu = float(params["alpha"]), float(params["mu"])
    return collapse_models.CollapseConfig(
        lam=0.5 * mu * alpha,
        alpha=alpha,
        mu=mu,
        horizon=1.0 / mu,
        include_h=False,
        paths=int(params["paths"]),
        master_seed=seed,
        grid=_grid(params),
        packet=_packet(params),
    )


def _validate_flash_marginal(params: dict) -> None:
    _flash_config(params, 0).initial_state()


def _simulate_flash_marginal(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    ensemble = collapse_models.grw_ensemble(_flash_config(params, seed), path_ids, hits=1)
    return {"flash": ensemble.flashes[:, 0]}


def _summarize_flash_marginal(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "flash-marginal"
    config = _flash_config(params, seed)
    state = config.initial_state()
    mean_x, var_x, _ = spectral_sse.observables(state)
    flashes = records["flash"]
    mean, mean_se = mean_and_stderr(flashes)
    variance, variance_se = variance_and_stderr(flashes)
    target = var_x + 1.0 / (2.0 * config.alpha)
    density = collapse_models.flash_density(state, config.alpha, config.mu, include_h=False)
    mass = float(np.sum(density) * state.grid.dx)
    criteria = [
        _within(kind, "Var(Y_1) = v + 1/(2 alpha)", variance, target, 3.0 * variance_se),
        _within(kind, "E(Y_1) = <x>_0", mean, mean_x, 3.0 * mean_se),
        _within(kind, "flash density integrates to 1", mass, 1.0, 1e-8),
    ]
    table = pd.DataFrame(
        [{"mean": mean, "mean_se": mean_se, "variance": variance, "variance_se": variance_se, "target_variance": target, "density_mass": mass}]
    )
    flash_table = pd.DataFrame({"path": np.arange(flashes.size), "k": 1, "t": 1.0 / config.mu, "Y": flashes})
    return ExperimentResult(kind, seed, {"flash_marginal": table, "flashes": flash_table}, criteria)


# lindblad-check


def _pairs(params: dict) -> list[tuple[float, float]]:
    return [(float(x), float(y)) for x, y in params["pairs"]]


def _validate_lindblad(params: dict) -> None:
    grid = _grid(params)
    for x, y in _pairs(params):
        grid.index_of(x)
        grid.index_of(y)
    level_of(int(params["steps"]))
    spectral_sse.mass_tail_guard(_packet_state(params))


def _simulate_lindblad(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    ratios = collapse_models.simulate_lindblad(
        float(params["lam"]), float(params["horizon"]), _pairs(params), path_ids, seed, _packet_state(params), int(params["steps"])
    )
    return {"ratios": ratios}


def _summarize_lindblad(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "lindblad-check"
    lam, horizon = float(params["lam"]), float(params["horizon"])
    table = collapse_models.summarize_lindblad(records["ratios"], lam, horizon, _pairs(params))
    criteria = [
        Criterion(
            kind,
            f"off-diagonal factor at (x={row.x}, y={row.y})",
            row.factor_mc,
            max(3.0 * row.factor_se, 1e-12 * row.factor_exact),
            bool(row.pass_),
            row.factor_exact,
        )
        for row in table.rename(columns={"pass": "pass_"}).itertuples()
    ]
    grw = params["grw"]
    alpha, delta = float(grw["alpha"]), float(grw["delta"])
    factor = collapse_models.grw_lindblad_factor(alpha, 2.0 * lam / alpha, delta)
    criteria.append(_at_most(kind, "GRW rate vs linearised rate (relative)", factor.relative_gap, float(grw["tolerance"])))
    rates = pd.DataFrame(
        [{"alpha": alpha, "mu": 2.0 * lam / alpha, "delta": delta, "exact": factor.exact, "linearized": factor.linearized, "relative_gap": factor.relative_gap}]
    )
    return ExperimentResult(kind, seed, {"lindblad": table, "grw_rate": rates}, criteria)


# continuum-limit


def _continuum_kwargs(params: dict) -> dict:
    return {"packet": _packet(params), "cat_separation": float(params["cat_separation"]), "include_h": bool(params["include_h"])}


def _validate_continuum(params: dict) -> None:
    alphas = [float(a) for a in params["alphas"]]
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigError(f"alphas must be strictly decreasing, got {alphas}")
    steps = int(params["reference_steps"])
    level_of(steps)
    if steps < 2:
        raise ConfigError("reference_steps must be at least 2")
    for alpha in alphas:
        config = collapse_models.CollapseConfig.linked(float(params["lam"]), alpha, float(params["horizon"]), grid=_grid(params), **_continuum_kwargs(params))
        if config.hits < collapse_models.MIN_HITS_FOR_LIMIT or config.hits % 2:
            raise ConfigError(f"alpha={alpha} gives mu*T={config.mu * config.horizon}; need an even count of at least {collapse_models.MIN_HITS_FOR_LIMIT}")
        if not np.isclose(config.hits / config.mu, config.horizon, rtol=1e-12, atol=0.0):
            raise ConfigError(f"alpha={alpha}: T is not a whole number of GRW periods")
    spectral_sse.mass_tail_guard(config.initial_state())


def _simulate_continuum(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    return collapse_models.simulate_continuum(
        float(params["lam"]),
        float(params["horizon"]),
        [float(a) for a in params["alphas"]],
        int(params["reference_steps"]),
        path_ids,
        seed,
        _grid(params),
        **_continuum_kwargs(params),
    )


def _summarize_continuum(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "continuum-limit"
    horizon = float(params["horizon"])
    alphas = [float(a) for a in params["alphas"]]
    table = collapse_models.summarize_continuum(records, float(params["lam"]), horizon, alphas, seed, int(params["bootstrap"]))
    focus = table[(table["observable"] == "mean_x") & np.isclose(table["t"], horizon)].reset_index(drop=True)
    criteria = []
    for i in range(len(focus) - 1):
        slack = 2.0 * float(np.hypot(focus.loc[i, "ks_se"], focus.loc[i + 1, "ks_se"]))
        increase = float(focus.loc[i + 1, "ks"] - focus.loc[i, "ks"])
        criteria.append(_at_most(kind, f"KS(<x>_T) non-increasing alpha={focus.loc[i, 'alpha']} -> {focus.loc[i + 1, 'alpha']} (empirical)", increase, slack))
    last = focus.iloc[-1]
    criteria.append(_at_most(kind, f"KS(<x>_T) at alpha={last['alpha']} below twice the noise floor", float(last["ks"]), 2.0 * float(last["noise_floor"])))
    criteria.append(_at_least(kind, "effective sample size of the QMUPL reference", float(table["ess"].min()), params["min_ess"]))
    paths = records["weights"].size
    ensemble = pd.DataFrame(
        {
            "path": np.tile(np.arange(paths), 2),
            "t": np.repeat([0.5 * horizon, horizon], paths),
            "mean_x": np.concatenate([records["qmupl_mean_x_half"], records["qmupl_mean_x_end"]]),
            "var_x": np.concatenate([records["qmupl_var_x_half"], records["qmupl_var_x_end"]]),
            "weight": np.tile(records["weights"], 2),
        }
    ).sort_values(["path", "t"], kind="stable", ignore_index=True)
    return ExperimentResult(kind, seed, {"distances": table, "ensemble": ensemble}, criteria)


# counterexample


def _validate_counterexample(params: dict) -> None:
    level = int(params["finest_level"])
    _check_dyadic(params["n_values"], level)
    t = float(params["t"])
    if not 0 <= t <= float(params["horizon"]):
        raise ConfigError(f"t must lie in [0, T], got {t}")


def _simulate_counterexample(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    batch = generate_batch(seed, path_ids, 1, int(params["finest_level"]), float(params["horizon"]))
    return {f"ratio/{n}": matrix_sde.stochastic_split_counterexample(batch, int(n), float(params["t"])) for n in params["n_values"]}


def _summarize_counterexample(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "counterexample"
    t = float(params["t"])
    expected = float(np.exp(t))
    rows, criteria = [], []
    for n in params["n_values"]:
        ratios = records[f"ratio/{n}"]
        worst = float(ratios[np.argmax(np.abs(ratios - expected))])
        rows.append({"n": int(n), "t": t, "ratio_mean": float(np.mean(ratios)), "expected": expected, "max_abs_dev": abs(worst - expected)})
        criteria.append(_within(kind, f"split/true ratio = e^t at n={n}", worst, expected, float(params["tolerance"])))
    return ExperimentResult(kind, seed, {"counterexample": pd.DataFrame(rows)}, criteria)


# sse-reordering


def _simulate_reordering(params: dict, seed: int, path_ids: Sequence[int]) -> Records:
    state = _packet_state(params)
    lam = float(params["lam"])
    batch = generate_batch(seed, path_ids, 1, level_of(max(int(n) for n in params["n_values"])), float(params["horizon"]))
    records = {}
    for n in params["n_values"]:
        standard = spectral_sse.product_formula_run(state, batch, int(n), lam).final.amplitudes
        reversed_ = spectral_sse.reversed_order_run(state, batch, int(n), lam).final.amplitudes
        records[f"distance2/{n}"] = np.sum(np.abs(standard - reversed_) ** 2, axis=-1) * state.grid.dx
    return records


def _summarize_reordering(params: dict, seed: int, records: Records) -> ExperimentResult:
    kind = "sse-reordering"
    rows = []
    for n in params["n_values"]:
        mean, stderr = mean_and_stderr(records[f"distance2/{n}"])
        distance = float(np.sqrt(mean))
        rows.append({"n": int(n), "l2_distance": distance, "stderr": stderr / (2.0 * distance) if distance > 0 else 0.0})
    criteria = [
        Criterion(kind, f"L2 distance between orderings shrinks n={a['n']} -> {b['n']}", b["l2_distance"], a["l2_distance"], b["l2_distance"] < a["l2_distance"])
        for a, b in zip(rows, rows[1:])
    ]
    return ExperimentResult(kind, seed, {"reordering": pd.DataFrame(rows)}, criteria)


def _validate_reordering(params: dict) -> None:
    _check_dyadic(params["n_values"])
    spectral_sse.mass_tail_guard(_packet_state(params))


GRID_DEFAULT = {"half_width": 10.0, "points": 512}
PACKET_DEFAULT = {"x0": 0.0, "p0": 0.0, "sigma": 1.0}

EXPERIMENTS: dict[str, Experiment] = {
    e.kind: e
    for e in (
        Experiment(
            kind="matrix-converge",
            summary="Strong error E sup_t ||scheme - reference||^2 of every matrix splitting scheme on coupled paths.",
            exercises="Lie-Trotter product of drift semigroup and diffusion flows, its Euler-Maruyama, first-order and partial variants",
            defaults={
                "horizon": 1.0,
                "finest_level": 14,
                "paths": 2000,
                "n_values": [16, 32, 64, 128, 256, 512],
                "studies": [
                    {"system": "noncommuting", "schemes": ["euler-maruyama", "trotter-piecewise", "first-order-factored", "trotter-interpolated"]},
                    {"system": "partial", "schemes": ["partial-split"]},
                    {"system": "commuting", "schemes": ["trotter-piecewise", "exact-commuting"], "n_values": [4, 64]},
                ],
                "slope_windows": {
                    "euler-maruyama": [-1.4, -0.6],
                    "first-order-factored": [-1.4, -0.6],
                    "trotter-piecewise": [-2.4, -0.6],
                    "trotter-interpolated": [-2.4, -0.6],
                    "partial-split": [-2.4, -0.6],
                },
                "exact_tolerance": 1e-10,
            },
            parameters={
                "horizon": "time horizon T",
                "finest_level": "reference lattice has 2^finest_level steps",
                "n_values": "dyadic step counts of the study",
                "studies": "list of {system, schemes, optional n_values}; systems: noncommuting, partial, commuting",
                "slope_windows": "accepted [low, high] log-log MSE slope per scheme",
                "exact_tolerance": "sup deviation allowed when the reference is the closed form",
            },
            validate=_validate_matrix_converge,
            simulate=_simulate_matrix_converge,
            summarize=_summarize_matrix_converge,
        ),
        Experiment(
            kind="sse-martingale",
            summary="E||psi_T||^2 of the split-step stochastic Schroedinger product for several step counts.",
            exercises="product formula for the conservative stochastic Schroedinger equation and the martingale property of ||psi_t||^2",
            defaults={
                "lam": 1.0,
                "horizon": 0.5,
                "grid": GRID_DEFAULT,
                "packet": PACKET_DEFAULT,
                "n_values": [64, 128, 256],
                "paths": 4096,
                "channels": 1,
                "order": "standard",
                "trajectory_paths": 8,
            },
            parameters={
                "lam": "collapse intensity (A = sqrt(lam) x)",
                "n_values": "dyadic step counts, compared on coupled paths",
                "channels": "Wiener channels, each carrying sqrt(lam / m) x",
                "order": "standard (collapse then free) or reversed",
                "trajectory_paths": "paths whose full trajectory is written to trajectory.csv",
            },
            validate=_validate_sse_martingale,
            simulate=_simulate_sse_martingale,
            summarize=_summarize_sse_martingale,
        ),
        Experiment(
            kind="sse-growth",
            summary="Mean-square identities of the pure collapse flow exp(x xi_t - (1 + c) t x^2) and the grid conservativity residual.",
            exercises="closed-form collapse flow, isometry for c = 0, growth integral for c = -1/2, conservativity condition",
            defaults={
                "horizon": 1.0,
                "grid": {"half_width": 2.0, "points": 8192},
                "interval": [0.0, 1.0],
                "c_values": [-0.5, 0.0, 0.5],
                "paths": 10000,
                "quadrature_points": 100001,
                "conservativity": {"states": 100, "grid": GRID_DEFAULT},
            },
            parameters={
                "interval": "support [a, b] of the indicator initial state (grid nodes)",
                "c_values": "flow parameters c",
                "quadrature_points": "trapezoid points for the continuum oracle",
                "conservativity": "{states, grid} for the random-state residual check",
            },
            validate=_validate_sse_growth,
            simulate=_simulate_sse_growth,
            summarize=_summarize_sse_growth,
        ),
        Experiment(
            kind="collapse-equivalence",
            summary="GRW flashes vs importance-weighted QMUPL centres without free evolution, with mu alpha = 2 lam.",
            exercises="H = 0 equivalence of GRW and QMUPL, flash law and measure change by ||psi_T||^2",
            defaults={
                "lam": 1.0,
                "alpha": 0.5,
                "horizon": 1.0,
                "grid": GRID_DEFAULT,
                "packet": {"x0": 0.0, "p0": 0.0, "sigma": 0.3},
                "paths": 10000,
                "map_tolerance": 1e-10,
                "min_ess": 100,
            },
            parameters={
                "lam": "QMUPL intensity",
                "alpha": "GRW localisation; mu = 2 lam / alpha",
                "packet": "initial Gaussian {x0, p0, sigma}; the weights stay integrable while 4 lam T sigma^2 < 1",
                "min_ess": "minimum effective sample size",
            },
            validate=_validate_collapse_equivalence,
            simulate=_simulate_collapse_equivalence,
            summarize=_summarize_collapse_equivalence,
        ),
        Experiment(
            kind="flash-marginal",
            summary="Law of the first GRW flash for a Gaussian state without free evolution.",
            exercises="flash density as convolution of |psi|^2 with N(0, 1/(2 alpha))",
            defaults={"alpha": 0.5, "mu": 4.0, "grid": GRID_DEFAULT, "packet": {"x0": 0.5, "p0": 0.0, "sigma": 0.8}, "paths": 100000},
            parameters={"alpha": "GRW localisation", "mu": "GRW rate", "packet": "initial Gaussian {x0, p0, sigma}"},
            validate=_validate_flash_marginal,
            simulate=_simulate_flash_marginal,
            summarize=_summarize_flash_marginal,
        ),
        Experiment(
            kind="lindblad-check",
            summary="Off-diagonal decay of E_Q[psi_T(x) conj psi_T(y)] and the GRW decoherence rate against its linearisation.",
            exercises="Lindblad-level decoherence of QMUPL and GRW",
            defaults={
                "lam": 1.0,
                "horizon": 0.5,
                "grid": {"half_width": 8.0, "points": 512},
                "packet": PACKET_DEFAULT,
                "pairs": [[0.5, -0.5], [1.0, 0.0], [0.25, 0.25]],
                "paths": 10000,
                "steps": 16,
                "grw": {"alpha": 0.01, "delta": 1.0, "tolerance": 0.0025},
            },
            parameters={"pairs": "grid-node pairs (x, y)", "steps": "dyadic product-formula steps", "grw": "{alpha, delta, tolerance} for the rate comparison"},
            validate=_validate_lindblad,
            simulate=_simulate_lindblad,
            summarize=_summarize_lindblad,
        ),
        Experiment(
            kind="continuum-limit",
            summary="Scaled GRW (mu = 2 lam / alpha) against a fine QMUPL reference as alpha decreases.",
            exercises="weak convergence of scaled GRW to QMUPL",
            defaults={
                "lam": 1.0,
                "horizon": 0.5,
                "alphas": [0.25, 0.125, 0.0625],
                "reference_steps": 256,
                "grid": GRID_DEFAULT,
                "packet": {"x0": 0.0, "p0": 0.0, "sigma": 0.5},
                "cat_separation": 0.0,
                "include_h": True,
                "paths": 4096,
                "bootstrap": 20,
                "min_ess": 100,
            },
            parameters={
                "alphas": "strictly decreasing GRW widths; each needs an even mu*T >= 4",
                "reference_steps": "QMUPL product-formula steps",
                "cat_separation": "distance between the two packets of the initial superposition (0 = single packet)",
                "bootstrap": "resamples for the same-distribution noise floor",
            },
            validate=_validate_continuum,
            simulate=_simulate_continuum,
            summarize=_summarize_continuum,
        ),
        Experiment(
            kind="counterexample",
            summary="dX = 2X dxi split into two B = 1 flows: ratio to the true solution is e^t on every path.",
            exercises="the stochastic part cannot be split further",
            defaults={"horizon": 1.0, "t": 1.0, "n_values": [4, 64], "finest_level": 6, "paths": 100, "tolerance": 1e-12},
            parameters={"t": "lattice time of the comparison", "n_values": "dyadic step counts", "tolerance": "allowed |ratio - e^t|"},
            validate=_validate_counterexample,
            simulate=_simulate_counterexample,
            summarize=_summarize_counterexample,
        ),
        Experiment(
            kind="sse-reordering",
            summary="L2 distance at T between the two factor orderings of the product formula on coupled paths.",
            exercises="factor order in the product formula",
            defaults={"lam": 1.0, "horizon": 0.5, "grid": GRID_DEFAULT, "packet": PACKET_DEFAULT, "n_values": [64, 256], "paths": 2048},
            parameters={"n_values": "dyadic step counts, compared on coupled paths"},
            validate=_validate_reordering,
            simulate=_simulate_reordering,
            summarize=_summarize_reordering,
        ),
    )
}


def list_experiments() -> str:
    """Text catalogue of experiment kinds with their parameters and defaults."""
    lines = []
    for experiment in EXPERIMENTS.values():
        lines.append(f"{experiment.kind}")
        lines.append(f"  {experiment.summary}")
        lines.append(f"  exercises: {experiment.exercises}")
        lines.append("  parameters:")
        for name, default in experiment.defaults.items():
            doc = experiment.parameters.get(name, "")
            lines.append(f"    {name} = {json.dumps(default)}{'  # ' + doc if doc else ''}")
        lines.append("")
    return "\n".join(lines)


def _load_schema(path: str | Path = SPLITTING_SCHEMA_PATH) -> dict:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read experiment schema {path}: {e}")


def config_from_dict(data: dict, source: str | None = None) -> ExperimentConfig:
    """Schema validation, defaults, then semantic validation; raises ConfigError."""
    validator = jsonschema.Draft7Validator(_load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        message = "; ".join(f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors)
        logger.error(f"Invalid experiment config {source or ''}: {message}")
        raise ConfigError(message)
    experiment = EXPERIMENTS[data["experiment"]]
    params = copy.deepcopy(experiment.defaults)
    params.update(copy.deepcopy(data.get("params", {})))
    try:
        experiment.validate(params)
    except ConfigError:
        raise
    except SplittingError as e:
        logger.error(f"Config {source or ''} rejected: {e.message}")
        raise ConfigError(e.message)
    return ExperimentConfig(data["experiment"], int(data["master_seed"]), params, data.get("output_dir"), source)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}")
    return config_from_dict(data, str(path))
