"""
Seeded random streams and shared statistical primitives.

Every stochastic operation in psmiss takes an ``RngStream``. A stream is
keyed by (seed, stream id); the same key always yields the same draws and
different keys yield independent streams, so replications can run in any
worker without changing results.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from exceptions import DegenerateInputError, EmptySampleError, FactorizationError
from exceptions import InvalidWeightsError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray, Sequence[float]]


def purpose_id(purpose: str) -> int:
    """Stable 32-bit integer for a purpose tag."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def content_id(values: np.ndarray) -> int:
    """Stable 32-bit integer for the contents of a float array."""
    data = np.ascontiguousarray(values, dtype=np.float64)
    digest = hashlib.blake2b(data.tobytes(), digest_size=4, person=b"psmiss-data").digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """
    Reproducible random stream keyed by (seed, stream id).

    Built on numpy's ``SeedSequence`` spawn keys, so every distinct key
    gives a statistically independent PCG64 stream.

    Attributes:
        seed: Non-negative 64-bit integer seed
        key: Stream id, e.g. (replication index, purpose id)

    Example:
        rng = RngStream.for_replication(seed=7, replication=3, purpose="cohort")
        u = rng.generator.uniform(size=10)
        child = rng.substream("bootstrap", 0)
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()) -> None:
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._generator: Optional[np.random.Generator] = None

    @classmethod
    def for_replication(cls, seed: int, replication: int, purpose: str) -> "RngStream":
        """Stream for one purpose within one replication."""
        return cls(seed, (replication, purpose_id(purpose)))

    def substream(self, purpose: str, index: int = 0) -> "RngStream":
        """Child stream identified by a purpose tag and an index."""
        return RngStream(self.seed, self.key + (purpose_id(purpose), index))

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy generator, created on first use."""
        if self._generator is None:
            sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
            self._generator = np.random.Generator(np.random.PCG64(sequence))
        return self._generator

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


@dataclass(frozen=True)
class CovarianceSpec:
    """
    Correlation matrix with unit diagonal and sparse off-diagonal entries.

    Attributes:
        dimension: Number of variables p
        entries: (i, j, value) triples with 0-based i != j; mirrored to (j, i)
    """

    dimension: int
    entries: Tuple[Tuple[int, int, float], ...] = ()

    def __post_init__(self) -> None:
        for i, j, _ in self.entries:
            if i == j or not (0 <= i < self.dimension and 0 <= j < self.dimension):
                raise ValueError(f"Invalid covariance entry ({i}, {j}) for p={self.dimension}")

    def matrix(self) -> np.ndarray:
        """Dense symmetric matrix."""
        cov = np.eye(self.dimension)
        for i, j, value in self.entries:
            cov[i, j] = value
            cov[j, i] = value
        return cov

    def cholesky(self) -> np.ndarray:
        """
        Lower-triangular Cholesky factor.

        Raises:
            FactorizationError: If the matrix is not positive definite
        """
        try:
            return np.linalg.cholesky(self.matrix())
        except np.linalg.LinAlgError as e:
            raise FactorizationError(f"Covariance matrix is not positive definite: {e}") from e


# corr(W1, W5) = 0.2, corr(W2, W6) = 0.9, corr(W3, W8) = 0.2, corr(W4, W9) = 0.9
COVARIATE_CORRELATION = CovarianceSpec(
    dimension=10,
    entries=((0, 4, 0.2), (1, 5, 0.9), (2, 7, 0.2), (3, 8, 0.9)),
)


def expit(x: ArrayLike) -> Union[float, np.ndarray]:
    """Inverse logit 1 / (1 + exp(-x))."""
    result = special.expit(x)
    return float(result) if np.ndim(result) == 0 else result


def logit(p: ArrayLike) -> Union[float, np.ndarray]:
    """Log odds log(p / (1 - p))."""
    result = special.logit(p)
    return float(result) if np.ndim(result) == 0 else result


def sample_mvn(n: int, cov: CovarianceSpec, rng: RngStream) -> np.ndarray:
    """
    Draw n zero-mean multivariate normal rows.

    Args:
        n: Number of rows
        cov: Covariance specification
        rng: Random stream

    Returns:
        n x p matrix Z @ L.T with L the Cholesky factor of ``cov``
    """
    factor = cov.cholesky()
    z = rng.generator.standard_normal((n, cov.dimension))
    return z @ factor.T


def _normalised_weights(weights: Optional[ArrayLike], size: int) -> np.ndarray:
    if weights is None:
        return np.full(size, 1.0 / size)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (size,):
        raise InvalidWeightsError(f"Expected {size} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or (w < 0).any():
        raise InvalidWeightsError("Weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise InvalidWeightsError("Weights must have a positive sum")
    return w / total


def ks_statistic(
    x: ArrayLike,
    y: ArrayLike,
    wx: Optional[ArrayLike] = None,
    wy: Optional[ArrayLike] = None,
) -> float:
    """
    Kolmogorov-Smirnov distance between two weighted samples.

    Each sample's empirical CDF uses its weights normalised to sum to one.

    Args:
        x: First sample
        y: Second sample
        wx: Weights of ``x`` (unit weights if None)
        wy: Weights of ``y`` (unit weights if None)

    Returns:
        sup |F_x - F_y| over the pooled support, in [0, 1]

    Raises:
        EmptySampleError: If either sample is empty
        InvalidWeightsError: If weights are negative or sum to zero
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise EmptySampleError("KS statistic needs two non-empty samples")
    px = _normalised_weights(wx, x.size)
    py = _normalised_weights(wy, y.size)

    order_x = np.argsort(x, kind="mergesort")
    order_y = np.argsort(y, kind="mergesort")
    xs, cx = x[order_x], np.cumsum(px[order_x])
    ys, cy = y[order_y], np.cumsum(py[order_y])

    grid = np.union1d(xs, ys)
    ix = np.searchsorted(xs, grid, side="right")
    iy = np.searchsorted(ys, grid, side="right")
    fx = np.where(ix > 0, cx[np.maximum(ix - 1, 0)], 0.0)
    fy = np.where(iy > 0, cy[np.maximum(iy - 1, 0)], 0.0)
    return float(min(1.0, np.max(np.abs(fx - fy))))


def weighted_mean(x: ArrayLike, weights: Optional[ArrayLike] = None) -> float:
    """Weighted arithmetic mean."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise DegenerateInputError("Mean of an empty sample")
    return float(np.dot(_normalised_weights(weights, x.size), x))


def weighted_sd(x: ArrayLike, weights: Optional[ArrayLike] = None) -> float:
    """
    Weighted standard deviation with reliability-weight correction.

    The variance divisor is V1 - V2/V1 (V1 = sum w, V2 = sum w^2), which
    reduces to n - 1 for unit weights.

    Raises:
        DegenerateInputError: With fewer than two effective observations
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        raise DegenerateInputError("Standard deviation needs at least two observations")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=np.float64)
    _normalised_weights(w, x.size)
    v1 = w.sum()
    v2 = np.square(w).sum()
    divisor = v1 - v2 / v1
    if divisor <= 0:
        raise DegenerateInputError("Weights leave fewer than two effective observations")
    mean = np.dot(w, x) / v1
    return float(np.sqrt(np.dot(w, np.square(x - mean)) / divisor))


def empirical_sd(x: ArrayLike) -> float:
    """Sample standard deviation with divisor n - 1."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        raise DegenerateInputError("Standard deviation needs at least two observations")
    return float(np.std(x, ddof=1))
