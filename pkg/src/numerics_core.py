"""
Shared numerical kernels: matrix exponentials, FFT, quadrature and weighted statistics.

Everything is double precision and a pure function of its inputs.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
from scipy.integrate import trapezoid
from scipy.stats import kstwobign

from src.errors import NumericsError

logger = logging.getLogger(__name__)

MAX_MATRIX_DIMENSION = 64
EIGENVECTOR_CONDITION_LIMIT = 1e8


def _raise(message: str) -> None:
    logger.error(message)
    raise NumericsError(message)


def as_complex_matrix(matrix, name: str = "matrix") -> np.ndarray:
    array = np.array(matrix, dtype=np.complex128)
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        _raise(f"{name} must be square, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        _raise(f"{name} has non-finite entries")
    return array


def mat_exp(matrix) -> np.ndarray:
    """
    Matrix exponential by scaling and squaring with a Pade approximant (scipy.linalg.expm).
    Accepts a single (d, d) matrix or a stack (..., d, d).
    """
    array = np.asarray(matrix, dtype=np.complex128)
    if array.ndim < 2 or array.shape[-1] != array.shape[-2]:
        _raise(f"mat_exp needs square matrices, got shape {array.shape}")
    if array.shape[-1] > MAX_MATRIX_DIMENSION:
        _raise(f"mat_exp supports d <= {MAX_MATRIX_DIMENSION}, got {array.shape[-1]}")
    if not np.all(np.isfinite(array)):
        _raise("mat_exp input has non-finite entries")
    result = scipy.linalg.expm(array)
    if not np.all(np.isfinite(result)):
        _raise("mat_exp overflowed")
    return result


def commutator(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return left @ right - right @ left


@dataclass(frozen=True)
class SpectralExponential:
    """
    exp(a*B + b*B^2) for whole arrays of scalar coefficients (a, b) and one fixed matrix B.

    B is diagonalised once; if its eigenvectors are ill conditioned every exponential
    falls back to mat_exp.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray = field(init=False, repr=False)
    eigenvectors: np.ndarray = field(init=False, repr=False)
    inverse: np.ndarray = field(init=False, repr=False)
    diagonalisable: bool = field(init=False)

    def __post_init__(self) -> None:
        matrix = as_complex_matrix(self.matrix)
        object.__setattr__(self, "matrix", matrix)
        if np.count_nonzero(matrix - np.diag(np.diag(matrix))) == 0:
            eigenvalues, eigenvectors = np.diag(matrix).copy(), np.eye(matrix.shape[0], dtype=np.complex128)
        else:
            eigenvalues, eigenvectors = scipy.linalg.eig(matrix)
        condition = np.linalg.cond(eigenvectors)
        usable = bool(np.isfinite(condition) and condition < EIGENVECTOR_CONDITION_LIMIT)
        if not usable:
            logger.warning(f"Eigenvectors ill conditioned (cond={condition:.3g}); using mat_exp per coefficient")
        object.__setattr__(self, "eigenvalues", eigenvalues)
        object.__setattr__(self, "eigenvectors", eigenvectors)
        object.__setattr__(self, "inverse", np.linalg.inv(eigenvectors) if usable else eigenvectors)
        object.__setattr__(self, "diagonalisable", usable)

    def __call__(self, linear, quadratic=0.0) -> np.ndarray:
        linear, quadratic = np.broadcast_arrays(np.asarray(linear, dtype=float), np.asarray(quadratic, dtype=float))
        if not (np.all(np.isfinite(linear)) and np.all(np.isfinite(quadratic))):
            _raise("exponential coefficients must be finite")
        if not self.diagonalisable:
            square = self.matrix @ self.matrix
            generators = linear[..., None, None] * self.matrix + quadratic[..., None, None] * square
            return mat_exp(generators)
        lam = self.eigenvalues
        scales = np.exp(linear[..., None] * lam + quadratic[..., None] * lam**2)
        return np.einsum("ij,...j,jk->...ik", self.eigenvectors, scales, self.inverse)


def _check_power_of_two(vector: np.ndarray) -> None:
    length = vector.shape[-1]
    if length < 1 or length & (length - 1):
        _raise(f"FFT length must be a power of two, got {length}")


def fft(vector) -> np.ndarray:
    """Unnormalised forward DFT along the last axis."""
    array = np.asarray(vector, dtype=np.complex128)
    _check_power_of_two(array)
    return scipy.fft.fft(array, axis=-1)


def ifft(vector) -> np.ndarray:
    """Inverse DFT along the last axis, dividing by the length."""
    array = np.asarray(vector, dtype=np.complex128)
    _check_power_of_two(array)
    return scipy.fft.ifft(array, axis=-1)


def quad_trapezoid(values, dx: float = 1.0) -> float:
    """Trapezoid rule for samples on a uniform grid."""
    samples = np.asarray(values)
    if samples.shape[-1] < 2:
        _raise("trapezoid rule needs at least two points")
    return trapezoid(samples, dx=dx, axis=-1)


@dataclass(frozen=True)
class WeightedSample:
    """Values with nonnegative importance weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if values.shape != weights.shape:
            _raise(f"values and weights differ in length: {values.size} vs {weights.size}")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            _raise("weights must be finite and nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def unweighted(cls, values) -> "WeightedSample":
        values = np.asarray(values, dtype=float).ravel()
        return cls(values, np.ones_like(values))

    def __len__(self) -> int:
        return self.values.size


def weighted_moments(sample: WeightedSample, k: int) -> float:
    """k-th raw weighted moment sum(w v^k) / sum(w)."""
    total = np.sum(sample.weights)
    if not total > 0:
        _raise("weighted moments need a positive total weight")
    return float(np.sum(sample.weights * sample.values**k) / total)


def weighted_variance(sample: WeightedSample) -> float:
    mean = weighted_moments(sample, 1)
    return float(np.sum(sample.weights * (sample.values - mean) ** 2) / np.sum(sample.weights))


def effective_sample_size(weights) -> float:
    """Sum of weights over the largest weight."""
    weights = np.asarray(weights, dtype=float)
    largest = np.max(weights) if weights.size else 0.0
    if not largest > 0:
        _raise("effective sample size needs a positive weight")
    return float(np.sum(weights) / largest)


def ks_distance(sample_a, sample_b: WeightedSample) -> float:
    """
    Sup distance between the empirical CDF of `sample_a` and the weighted empirical CDF
    of `sample_b`. Both CDFs are right continuous and evaluated on the pooled distinct values.
    """
    if not isinstance(sample_a, WeightedSample):
        sample_a = WeightedSample.unweighted(sample_a)
    if len(sample_a) == 0 or len(sample_b) == 0:
        _raise("KS distance needs two nonempty samples")
    pooled = np.unique(np.concatenate([sample_a.values, sample_b.values]))
    return float(np.max(np.abs(_weighted_cdf(sample_a, pooled) - _weighted_cdf(sample_b, pooled))))


def _weighted_cdf(sample: WeightedSample, points: np.ndarray) -> np.ndarray:
    order = np.argsort(sample.values, kind="stable")
    values = sample.values[order]
    cumulative = np.concatenate([[0.0], np.cumsum(sample.weights[order])])
    if not cumulative[-1] > 0:
        _raise("KS distance needs a positive total weight")
    return cumulative[np.searchsorted(values, points, side="right")] / cumulative[-1]


def ks_critical_value(size_a: float, size_b: float, level: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value; pass the ESS as size for weighted samples."""
    return float(kstwobign.isf(level) * np.sqrt((size_a + size_b) / (size_a * size_b)))


def mean_and_stderr(values) -> tuple[float, float]:
    samples = np.asarray(values, dtype=float)
    if samples.size < 2:
        return float(np.mean(samples)), float("nan")
    return float(np.mean(samples)), float(np.std(samples, ddof=1) / np.sqrt(samples.size))


def variance_and_stderr(values) -> tuple[float, float]:
    """Unbiased sample variance and its large-sample standard error sqrt((m4 - s^4) / n)."""
    samples = np.asarray(values, dtype=float)
    if samples.size < 2:
        _raise("variance needs at least two samples")
    centered = samples - np.mean(samples)
    variance = float(np.var(samples, ddof=1))
    fourth = float(np.mean(centered**4))
    return variance, float(np.sqrt(max(fourth - variance**2, 0.0) / samples.size))


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        _raise("log-log fit needs at least two positive points")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)
