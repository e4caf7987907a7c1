"""
Splitting schemes for finite-dimensional linear SDEs

    dX_t = A X_t dt + sum_j B_j X_t dxi^j_t

All schemes are evaluated on a LatticeBatch: the same Wiener increments drive every
scheme and the reference, so errors are measured path by path. Trajectories have
shape (P, n + 1, d) with P the number of paths in the batch.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from src.errors import CommutatorTooLarge, NumericsError, SchemePreconditionError
from src.numerics_core import (
    SpectralExponential,
    as_complex_matrix,
    commutator,
    fit_loglog_slope,
    mat_exp,
    mean_and_stderr,
)
from src.wiener_paths import (
    TRIAL_STREAM,
    LatticeBatch,
    WienerLattice,
    as_batch,
    generate_batch,
    level_of,
    path_generator,
)

logger = logging.getLogger(__name__)

COMMUTATOR_TOLERANCE = 1e-12
REFERENCE_LEVEL = 14
REFERENCE_BLOCK = 1024


class SchemeKind(str, Enum):
    EXACT_COMMUTING = "exact-commuting"
    REFERENCE = "reference"
    EULER_MARUYAMA = "euler-maruyama"
    TROTTER_PIECEWISE = "trotter-piecewise"
    TROTTER_INTERPOLATED = "trotter-interpolated"
    FIRST_ORDER_FACTORED = "first-order-factored"
    PARTIAL_SPLIT = "partial-split"


def _commutes(left: np.ndarray, right: np.ndarray) -> bool:
    scale = max(1.0, np.linalg.norm(left) * np.linalg.norm(right))
    return bool(np.linalg.norm(commutator(left, right)) <= COMMUTATOR_TOLERANCE * scale)


def all_commute(matrices: Sequence[np.ndarray]) -> bool:
    return all(_commutes(matrices[i], matrices[j]) for i in range(len(matrices)) for j in range(i + 1, len(matrices)))


@dataclass(frozen=True, eq=False)
class MatrixSDESystem:
    """
    Drift A, diffusions B_j (one per Wiener channel), initial vector and horizon.
    `drift_split` optionally holds (A1, A2) with A1 + A2 == A for the partial splitting.
    """

    drift: np.ndarray
    diffusions: tuple[np.ndarray, ...]
    x0: np.ndarray
    horizon: float
    system_id: str = "custom"
    drift_split: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self) -> None:
        drift = as_complex_matrix(self.drift, "drift")
        diffusions = tuple(as_complex_matrix(b, f"diffusion {j}") for j, b in enumerate(self.diffusions))
        x0 = np.array(self.x0, dtype=np.complex128).ravel()
        dimension = drift.shape[0]
        if not diffusions:
            raise SchemePreconditionError("a system needs at least one diffusion matrix")
        if any(b.shape != drift.shape for b in diffusions) or x0.size != dimension:
            raise SchemePreconditionError(f"all matrices and x0 must share dimension {dimension}")
        if not self.horizon > 0:
            raise SchemePreconditionError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "diffusions", diffusions)
        object.__setattr__(self, "x0", x0)
        if self.drift_split is not None:
            parts = tuple(as_complex_matrix(a, "drift part") for a in self.drift_split)
            if len(parts) != 2 or not np.array_equal(parts[0] + parts[1], drift):
                raise SchemePreconditionError("drift_split must hold (A1, A2) with A1 + A2 == A exactly")
            object.__setattr__(self, "drift_split", parts)

    @property
    def dimension(self) -> int:
        return self.drift.shape[0]

    @property
    def channels(self) -> int:
        return len(self.diffusions)

    @property
    def ito_correction(self) -> np.ndarray:
        """-1/2 sum_j B_j^2"""
        return -0.5 * sum(b @ b for b in self.diffusions)

    @property
    def commuting(self) -> bool:
        return all_commute((self.drift,) + self.diffusions)

    @cached_property
    def diffusion_exponentials(self) -> tuple[SpectralExponential, ...]:
        return tuple(SpectralExponential(b) for b in self.diffusions)

    @cached_property
    def commuting_drift_exponential(self) -> SpectralExponential:
        return SpectralExponential(self.drift + self.ito_correction)


def benchmark_system(name: str, horizon: float = 1.0) -> MatrixSDESystem:
    """Fixed benchmark systems: `noncommuting`, `commuting` and `partial`."""
    x0 = np.array([1.0, 0.5])
    diagonal_b = np.diag([1.0, -1.0])
    rotation = np.array([[0.0, 1.0], [-1.0, 0.0]])
    if name == "noncommuting":
        return MatrixSDESystem(rotation, (diagonal_b,), x0, horizon, name)
    if name == "commuting":
        return MatrixSDESystem(np.diag([-0.5, 0.25]), (np.diag([0.8, -0.4]),), x0, horizon, name)
    if name == "partial":
        inner = np.diag([-0.5, 0.25])
        return MatrixSDESystem(rotation + inner, (diagonal_b,), x0, horizon, name, drift_split=(rotation, inner))
    raise SchemePreconditionError(f"unknown benchmark system {name!r}")


def b_flow(diffusion, dxi, dt) -> np.ndarray:
    """Exact flow exp(dxi B - dt/2 B^2) of dX = B X dxi over one increment; broadcasts over dxi and dt."""
    if np.any(np.asarray(dt) < 0):
        raise SchemePreconditionError("b_flow needs dt >= 0")
    if not np.all(np.isfinite(dxi)):
        raise NumericsError("b_flow needs a finite Wiener increment")
    return SpectralExponential(diffusion)(dxi, -0.5 * np.asarray(dt, dtype=float))


def _noise_product(system: MatrixSDESystem, dxi: np.ndarray, dt) -> np.ndarray:
    """prod_j b_flow(B_j) for dxi of shape (P, m, K); channel 0 acts first."""
    quadratic = -0.5 * np.broadcast_to(np.asarray(dt, dtype=float), dxi[:, 0].shape)
    product = None
    for channel, exponential in enumerate(system.diffusion_exponentials):
        flow = exponential(dxi[:, channel], quadratic)
        product = flow if product is None else flow @ product
    return product


def exact_commuting_flow(system: MatrixSDESystem, xi, t) -> np.ndarray:
    """
    X_t = exp((A - 1/2 sum B_j^2) t) prod_j exp(xi^j B_j) x0 for pairwise commuting A, B_j.
    `xi` has a trailing channel axis; leading axes broadcast against `t`.
    """
    if not system.commuting:
        message = f"closed-form flow requested for non-commuting system {system.system_id}"
        logger.error(message)
        raise CommutatorTooLarge(message)
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != system.channels:
        raise SchemePreconditionError(f"expected {system.channels} Wiener values, got {xi.shape[-1]}")
    t = np.asarray(t, dtype=float)
    operator = system.commuting_drift_exponential(t)
    for channel, exponential in enumerate(system.diffusion_exponentials):
        operator = operator @ exponential(xi[..., channel])
    return operator @ system.x0


def step_operator(system: MatrixSDESystem, kind: SchemeKind, dxi, dt: float) -> np.ndarray:
    """Single step operator of a scheme for increments dxi of shape (m,)."""
    dxi = np.asarray(dxi, dtype=float).reshape(1, system.channels, 1)
    if kind is SchemeKind.EULER_MARUYAMA:
        return np.eye(system.dimension) + dt * system.drift + np.einsum("j,jab->ab", dxi[0, :, 0], np.stack(system.diffusions))
    return _step_operators(system, kind, dxi, dt)[0, 0]


def _step_operators(system: MatrixSDESystem, kind: SchemeKind, dxi: np.ndarray, dt: float) -> np.ndarray:
    identity = np.eye(system.dimension, dtype=np.complex128)
    if kind is SchemeKind.TROTTER_PIECEWISE:
        return mat_exp(dt * system.drift) @ _noise_product(system, dxi, dt)
    if kind is SchemeKind.FIRST_ORDER_FACTORED:
        product = identity
        for channel, diffusion in enumerate(system.diffusions):
            product = (identity + dxi[:, channel, :, None, None] * diffusion) @ product
        return (identity + dt * system.drift) @ product
    if kind is SchemeKind.PARTIAL_SPLIT:
        if system.drift_split is None:
            raise SchemePreconditionError("partial splitting needs a drift_split (A1, A2)")
        outer, inner = system.drift_split
        if not all_commute((inner,) + system.diffusions):
            message = "partial splitting needs A2 and every B_j to commute"
            logger.error(message)
            raise SchemePreconditionError(message)
        inner_flow = mat_exp(dt * (inner + system.ito_correction))
        for channel, exponential in enumerate(system.diffusion_exponentials):
            inner_flow = exponential(dxi[:, channel]) @ inner_flow
        return mat_exp(dt * outer) @ inner_flow
    raise SchemePreconditionError(f"{kind.value} has no product step operator")


def _propagate(operators: np.ndarray, x0: np.ndarray) -> np.ndarray:
    paths, steps = operators.shape[:2]
    dimension = x0.shape[-1]
    trajectory = np.empty((paths, steps + 1, dimension), dtype=np.complex128)
    current = np.broadcast_to(x0, (paths, dimension))
    trajectory[:, 0] = current
    for k in range(steps):
        current = np.einsum("pab,pb->pa", operators[:, k], current)
        trajectory[:, k + 1] = current
    return trajectory


def _euler_maruyama(system: MatrixSDESystem, dxi: np.ndarray, dt: float) -> np.ndarray:
    paths, _, steps = dxi.shape
    diffusions = np.stack(system.diffusions)
    trajectory = np.empty((paths, steps + 1, system.dimension), dtype=np.complex128)
    current = np.broadcast_to(system.x0, (paths, system.dimension))
    trajectory[:, 0] = current
    for k in range(steps):
        noise = np.einsum("pj,jab,pb->pa", dxi[:, :, k], diffusions, current)
        current = current + dt * np.einsum("ab,pb->pa", system.drift, current) + noise
        trajectory[:, k + 1] = current
    return trajectory


def _trotter_reference(system: MatrixSDESystem, batch: LatticeBatch) -> np.ndarray:
    """Piecewise Trotter on the finest lattice, built REFERENCE_BLOCK steps at a time."""
    dxi = batch.coarsen(batch.finest_level)
    steps = dxi.shape[-1]
    trajectory = np.empty((batch.size, steps + 1, system.dimension), dtype=np.complex128)
    trajectory[:, 0] = system.x0
    for start in range(0, steps, REFERENCE_BLOCK):
        stop = min(start + REFERENCE_BLOCK, steps)
        operators = _step_operators(system, SchemeKind.TROTTER_PIECEWISE, dxi[:, :, start:stop], batch.dt())
        trajectory[:, start : stop + 1] = _propagate(operators, trajectory[:, start])
    return trajectory


def _exact_on_lattice(system: MatrixSDESystem, batch: LatticeBatch, level: int) -> np.ndarray:
    xi = np.moveaxis(batch.path_values(level), 1, -1)
    return exact_commuting_flow(system, xi, batch.times(level)[None, :])


def _interpolated(system: MatrixSDESystem, batch: LatticeBatch, n: int) -> np.ndarray:
    """g_{n,T} on the finest lattice: e^{tau A} prod_j B_j-flow(xi_{t} - xi_{kT/n}, tau) f_{n,T}(kT/n)."""
    level = level_of(n, batch.finest_level)
    coarse = _propagate(_step_operators(system, SchemeKind.TROTTER_PIECEWISE, batch.coarsen(level), batch.dt(level)), system.x0)
    width = 2 ** (batch.finest_level - level)
    tau = batch.dt() * np.arange(width)
    drift_flows = mat_exp(tau[:, None, None] * system.drift)
    xi = batch.path_values()
    out = np.empty((batch.size, 2**batch.finest_level + 1, system.dimension), dtype=np.complex128)
    for k in range(n):
        start = k * width
        window = xi[:, :, start : start + width] - xi[:, :, start : start + 1]
        operators = drift_flows @ _noise_product(system, window, tau)
        out[:, start : start + width] = np.einsum("psab,pb->psa", operators, coarse[:, k])
        out[:, start] = coarse[:, k]
    out[:, -1] = coarse[:, -1]
    return out


def run_scheme(system: MatrixSDESystem, kind: SchemeKind | str, n: int, lattice: WienerLattice | LatticeBatch) -> np.ndarray:
    """
    Trajectory of a scheme at the lattice times kT/n, shape (P, n + 1, d), or (n + 1, d)
    for a single lattice. The interpolated scheme is returned on the finest lattice.
    """
    kind = SchemeKind(kind)
    batch = as_batch(lattice)
    if batch.channels != system.channels:
        raise SchemePreconditionError(f"lattice has {batch.channels} channel(s), system needs {system.channels}")
    level = level_of(n, batch.finest_level)
    dt = batch.dt(level)
    logger.debug(f"Running {kind.value} on {system.system_id} with n={n} over {batch.size} path(s)")
    if kind is SchemeKind.EULER_MARUYAMA:
        trajectory = _euler_maruyama(system, batch.coarsen(level), dt)
    elif kind is SchemeKind.EXACT_COMMUTING:
        trajectory = _exact_on_lattice(system, batch, level)
    elif kind is SchemeKind.REFERENCE:
        trajectory = reference_flow(system, batch).trajectory[:, :: 2 ** (batch.finest_level - level)]
    elif kind is SchemeKind.TROTTER_INTERPOLATED:
        trajectory = _interpolated(system, batch, n)
    else:
        trajectory = _propagate(_step_operators(system, kind, batch.coarsen(level), dt), system.x0)
    return trajectory if isinstance(lattice, LatticeBatch) else trajectory[0]


@dataclass(frozen=True)
class ReferenceFlow:
    trajectory: np.ndarray = field(repr=False)
    exact: bool
    level: int


def reference_flow(system: MatrixSDESystem, lattice: WienerLattice | LatticeBatch) -> ReferenceFlow:
    """
    Closed-form flow when everything commutes, otherwise piecewise Trotter with one step per
    fine increment (strong order one).
    """
    batch = as_batch(lattice)
    level = batch.finest_level
    if system.commuting:
        return ReferenceFlow(_exact_on_lattice(system, batch, level), True, level)
    logger.debug(f"Reference for {system.system_id} is approximate (piecewise Trotter at level {level})")
    return ReferenceFlow(_trotter_reference(system, batch), False, level)


def path_sup_errors(
    system: MatrixSDESystem,
    kind: SchemeKind | str,
    n: int,
    batch: LatticeBatch,
    reference: ReferenceFlow | None = None,
) -> np.ndarray:
    """Per-path sup over the scheme's lattice of ||scheme - reference||^2."""
    kind = SchemeKind(kind)
    reference = reference or reference_flow(system, batch)
    trajectory = run_scheme(system, kind, n, batch)
    if kind is SchemeKind.TROTTER_INTERPOLATED:
        target = reference.trajectory
    else:
        target = reference.trajectory[:, :: 2 ** (batch.finest_level - level_of(n, batch.finest_level))]
    return np.max(np.sum(np.abs(trajectory - target) ** 2, axis=-1), axis=-1)


def sup_error_mc(
    system: MatrixSDESystem, kind: SchemeKind | str, n: int, paths: int, seed: int, level: int = REFERENCE_LEVEL
) -> tuple[float, float]:
    """(MSE, standard error) of E sup_t ||scheme - reference||^2 over `paths` coupled paths."""
    batch = generate_batch(seed, range(paths), system.channels, level, system.horizon)
    return mean_and_stderr(path_sup_errors(system, kind, n, batch))


@dataclass(frozen=True)
class ConvergenceReport:
    scheme: str
    system_id: str
    seed: int
    n: tuple[int, ...]
    mse: tuple[float, ...]
    stderr: tuple[float, ...]
    slope: float = field(init=False)

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.n, self.n[1:])):
            raise SchemePreconditionError(f"n values must be strictly increasing, got {self.n}")
        if any(value < 0 for value in self.mse):
            raise SchemePreconditionError("MSE estimates must be nonnegative")
        fittable = len(self.n) >= 2 and all(value > 0 for value in self.mse)
        object.__setattr__(self, "slope", fit_loglog_slope(self.n, self.mse) if fittable else float("nan"))

    @classmethod
    def from_path_errors(cls, scheme: str, system_id: str, seed: int, errors: Mapping[int, np.ndarray]) -> "ConvergenceReport":
        ns = tuple(sorted(errors))
        stats = [mean_and_stderr(errors[n]) for n in ns]
        return cls(scheme, system_id, seed, ns, tuple(s[0] for s in stats), tuple(s[1] for s in stats))

    def improvements(self, slack: float = 0.0) -> list[bool]:
        """MSE(n_{i+1}) < MSE(n_i) + slack * combined standard error, per consecutive pair."""
        flags = []
        for i in range(len(self.n) - 1):
            margin = slack * float(np.hypot(self.stderr[i], self.stderr[i + 1]))
            flags.append(self.mse[i + 1] < self.mse[i] + margin)
        return flags

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "n": list(self.n),
                "mse": list(self.mse),
                "stderr": list(self.stderr),
                "scheme": self.scheme,
                "system_id": self.system_id,
                "seed": self.seed,
            }
        )


def random_trial_vectors(dimension: int, count: int, seed: int) -> np.ndarray:
    """Unit complex Gaussian vectors, shape (count, dimension)."""
    rng = path_generator(seed, 0, TRIAL_STREAM)
    vectors = rng.standard_normal((count, dimension)) + 1j * rng.standard_normal((count, dimension))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def dissipativity_residual(drift_k, diffusions: Sequence, trials, c: float = 0.0) -> float:
    """max over trial vectors of sum_j ||L_j psi||^2 - 2 Re <K psi, psi> - c ||psi||^2."""
    k = as_complex_matrix(drift_k, "K")
    ls = [as_complex_matrix(matrix, "L") for matrix in diffusions]
    trials = np.atleast_2d(np.asarray(trials, dtype=np.complex128))
    if any(matrix.shape != k.shape for matrix in ls) or trials.shape[1] != k.shape[0]:
        message = f"dimension mismatch: K is {k.shape}, trial vectors have length {trials.shape[1]}"
        logger.error(message)
        raise NumericsError(message)
    noise = sum(np.sum(np.abs(trials @ matrix.T) ** 2, axis=1) for matrix in ls)
    drift = 2.0 * np.real(np.sum((trials @ k.T) * np.conj(trials), axis=1))
    residual = noise - drift - c * np.sum(np.abs(trials) ** 2, axis=1)
    return float(np.max(residual))


def stochastic_split_counterexample(lattice: WienerLattice | LatticeBatch, n: int, t: float | None = None) -> np.ndarray:
    """
    dX = (1 + 1) X dxi split into two copies of the B = 1 flow per step. Returns the
    per-path ratio of the split product to the true solution e^{2 xi_t - 2t}; it equals e^t.
    `t` must be a lattice time kT/n and defaults to T.
    """
    batch = as_batch(lattice)
    level = level_of(n, batch.finest_level)
    dt = batch.dt(level)
    t = batch.horizon if t is None else t
    steps = int(round(t / dt))
    if steps < 0 or steps > n or not np.isclose(steps * dt, t, rtol=0.0, atol=1e-12):
        raise SchemePreconditionError(f"t={t} is not a time of the n={n} lattice")
    dxi = batch.coarsen(level)[:, 0, :steps]
    unit = np.ones((1, 1))
    factors = b_flow(unit, dxi, dt)[..., 0, 0].real
    split = np.prod(factors * factors, axis=-1)
    xi_t = batch.path_values(level)[:, 0, steps]
    ratio = split / np.exp(2.0 * xi_t - 2.0 * steps * dt)
    return ratio if isinstance(lattice, LatticeBatch) else ratio[0]
