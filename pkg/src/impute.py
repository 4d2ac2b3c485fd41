"""
Multiple imputation by chained equations and Rubin's-rules pooling.

Each incomplete column is imputed from all other columns (main effects
only) with one of three methods:

- logreg: logistic model, coefficients drawn from the normal
  approximation to their posterior, then Bernoulli draws
- norm: Bayesian linear regression draws of (beta, sigma) then
  predictive normal draws
- cart: classification/regression tree; each missing cell takes the
  value of a random donor from its leaf
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps

from cart import MissingMode, TreeControls, fit_tree_arrays
from config import ImputationConfig
from exceptions import ConvergenceError, DegenerateInputError, SchemaError, SeparationError
from glm import fit_logistic
from models import ColumnKind, ColumnRole, Dataset, PooledEstimate
from stats import RngStream, expit

logger = logging.getLogger(__name__)


class ImputationMethod(str, Enum):
    """Per-column imputation method."""

    LOGREG = "logreg"
    NORM = "norm"
    CART = "cart"


@dataclass(frozen=True)
class MiceConfig:
    """
    Chained-equations configuration.

    Attributes:
        m: Number of imputed datasets (>= 2)
        cycles: Sweeps over the incomplete columns per imputation
        methods: Method per incomplete column
        predictors: Predictor columns per incomplete column
        cart_min_bucket: Minimum leaf size of CART imputation trees
        cart_cp: Complexity parameter of CART imputation trees
        ridge: Ridge penalty for the stabilised logistic and linear fits
    """

    m: int = 5
    cycles: int = 5
    methods: Dict[str, ImputationMethod] = field(default_factory=dict)
    predictors: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    cart_min_bucket: int = 5
    cart_cp: float = 1e-4
    ridge: float = 1e-5

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")
        for column, names in self.predictors.items():
            if column in names:
                raise ValueError(f"Column '{column}' cannot predict itself")

    @classmethod
    def default_for(
        cls,
        data: Dataset,
        config: Optional[ImputationConfig] = None,
        use_cart: bool = False,
    ) -> "MiceConfig":
        """
        Methods and predictors for every incomplete column of ``data``.

        Binary columns use logreg and continuous columns norm (or cart for
        all when ``use_cart``); predictors are all other columns.
        """
        config = config or ImputationConfig()
        methods: Dict[str, ImputationMethod] = {}
        predictors: Dict[str, Tuple[str, ...]] = {}
        for j, column in enumerate(data.columns):
            if not data.missing[:, j].any():
                continue
            if use_cart:
                methods[column.name] = ImputationMethod.CART
            elif column.kind == ColumnKind.BINARY:
                methods[column.name] = ImputationMethod.LOGREG
            else:
                methods[column.name] = ImputationMethod.NORM
            predictors[column.name] = tuple(n for n in data.names if n != column.name)
        return cls(
            m=config.m,
            cycles=config.cycles,
            methods=methods,
            predictors=predictors,
            cart_min_bucket=config.cart_min_bucket,
            cart_cp=config.cart_cp,
            ridge=config.ridge,
        )

    def to_dict(self) -> dict:
        """Manifest representation."""
        return {
            "m": self.m,
            "cycles": self.cycles,
            "methods": {k: v.value for k, v in self.methods.items()},
            "predictors": {k: list(v) for k, v in self.predictors.items()},
            "cart_min_bucket": self.cart_min_bucket,
            "cart_cp": self.cart_cp,
            "ridge": self.ridge,
        }


@dataclass(frozen=True)
class ImputedSet:
    """
    m completed datasets.

    Attributes:
        datasets: Completed datasets, in imputation order
        config: Configuration used
        provenance: Seed, stream key and ridge-fallback count
    """

    datasets: Tuple[Dataset, ...]
    config: MiceConfig
    provenance: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.datasets)

    def __iter__(self) -> Iterator[Dataset]:
        return iter(self.datasets)

    @property
    def m(self) -> int:
        return len(self.datasets)


def _posterior(precision: np.ndarray, name: str) -> Tuple[np.ndarray, np.ndarray]:
    """Covariance and its Cholesky factor from a precision matrix."""
    try:
        cov = np.linalg.inv(precision)
        return cov, np.linalg.cholesky((cov + cov.T) / 2.0)
    except np.linalg.LinAlgError as e:
        raise DegenerateInputError(f"Imputation model for {name} is singular") from e


class _Chain:
    """One chained-equations run producing a single completed matrix."""

    def __init__(self, data: Dataset, config: MiceConfig, rng: RngStream) -> None:
        self.data = data
        self.config = config
        self.generator = rng.generator
        self.values = np.array(data.values)
        self.ridge_fallbacks = 0
        self.targets = [n for n in data.names if n in config.methods]

    def run(self) -> np.ndarray:
        for name in self.targets:
            j = self.data.index_of(name)
            miss = self.data.missing[:, j]
            observed = self.values[~miss, j]
            self.values[miss, j] = self.generator.choice(observed, size=int(miss.sum()))
        for cycle in range(self.config.cycles):
            for name in self.targets:
                self._impute_column(name)
            logger.debug(f"Completed imputation cycle {cycle + 1}/{self.config.cycles}")
        return self.values

    def _design(self, name: str) -> np.ndarray:
        idx = [self.data.index_of(p) for p in self.config.predictors[name]]
        return np.column_stack([np.ones(self.data.n_rows), self.values[:, idx]])

    def _impute_column(self, name: str) -> None:
        j = self.data.index_of(name)
        miss = self.data.missing[:, j]
        method = self.config.methods[name]
        if method == ImputationMethod.LOGREG:
            draws = self._draw_logreg(name, miss)
        elif method == ImputationMethod.NORM:
            draws = self._draw_norm(name, miss)
        else:
            draws = self._draw_cart(name, miss)
        self.values[miss, j] = draws

    def _draw_logreg(self, name: str, miss: np.ndarray) -> np.ndarray:
        x = self._design(name)
        y = self.values[~miss, self.data.index_of(name)]
        try:
            fit = fit_logistic(x[~miss], y)
        except (SeparationError, ConvergenceError) as e:
            logger.info(f"Imputation model for {name} failed ({e}); using ridge fallback")
            self.ridge_fallbacks += 1
            fit = fit_logistic(x[~miss], y, ridge=self.config.ridge)
        _, factor = _posterior(fit.information, name)
        beta = fit.coef + factor @ self.generator.standard_normal(fit.coef.size)
        p = expit(x[miss] @ beta)
        return (self.generator.uniform(size=int(miss.sum())) < p).astype(np.float64)

    def _draw_norm(self, name: str, miss: np.ndarray) -> np.ndarray:
        x = self._design(name)
        xo = x[~miss]
        y = self.values[~miss, self.data.index_of(name)]
        xtx = xo.T @ xo
        penalty = self.config.ridge * np.diag(np.diag(xtx))
        v, factor = _posterior(xtx + penalty, name)
        coef = v @ xo.T @ y
        residual = y - xo @ coef
        df = max(xo.shape[0] - xo.shape[1], 1)
        sigma = np.sqrt(residual @ residual / self.generator.chisquare(df))
        beta = coef + factor @ self.generator.standard_normal(coef.size) * sigma
        return x[miss] @ beta + self.generator.standard_normal(int(miss.sum())) * sigma

    def _draw_cart(self, name: str, miss: np.ndarray) -> np.ndarray:
        j = self.data.index_of(name)
        idx = [self.data.index_of(p) for p in self.config.predictors[name]]
        x = self.values[:, idx]
        complete = np.zeros_like(x, dtype=bool)
        y = self.values[:, j]
        regression = self.data.columns[j].kind != ColumnKind.BINARY
        controls = TreeControls(
            min_split=max(3 * self.config.cart_min_bucket, self.config.cart_min_bucket),
            min_bucket=self.config.cart_min_bucket,
            cp=self.config.cart_cp,
            max_surrogates=0,
            missing_mode=MissingMode.SURROGATE,
        )
        tree = fit_tree_arrays(x[~miss], complete[~miss], y[~miss], None, controls, regression)
        donor_leaves = tree.apply_arrays(x[~miss], complete[~miss])
        target_leaves = tree.apply_arrays(x[miss], complete[miss])
        donors = y[~miss]
        draws = np.empty(target_leaves.size)
        for k, leaf in enumerate(target_leaves):
            pool = donors[donor_leaves == leaf]
            draws[k] = pool[self.generator.integers(pool.size)]
        return draws


def _validate(data: Dataset, config: MiceConfig) -> None:
    for column in data.columns:
        if column.role in (ColumnRole.EXPOSURE, ColumnRole.OUTCOME) and data.missing[
            :, data.index_of(column.name)
        ].any():
            raise SchemaError(f"{column.role.value.capitalize()} '{column.name}' has missing cells")
    for j, column in enumerate(data.columns):
        if not data.missing[:, j].any():
            continue
        if column.name not in config.methods:
            raise SchemaError(f"Incomplete column '{column.name}' has no imputation method")
        if column.name not in config.predictors:
            raise SchemaError(f"Incomplete column '{column.name}' has no predictor set")
        if data.missing[:, j].all():
            raise SchemaError(f"Column '{column.name}' has no observed values")
    for name, predictors in config.predictors.items():
        unknown = [p for p in predictors if p not in data.names]
        if unknown:
            raise SchemaError(f"Predictors {unknown} for '{name}' are not in the dataset")


def mice_impute(data: Dataset, config: MiceConfig, rng: RngStream) -> ImputedSet:
    """
    Multiply impute the missing cells of ``data``.

    Each imputation runs an independent chain on its own sub-stream,
    starting from random draws of each column's observed values. Observed
    cells are copied unchanged into every completed dataset.

    Args:
        data: Dataset with complete exposure and outcome
        config: Methods and predictors per incomplete column
        rng: Random stream

    Returns:
        ImputedSet with ``config.m`` completed datasets

    Raises:
        SchemaError: If an incomplete column lacks a method or the
            exposure/outcome has missing cells
    """
    _validate(data, config)
    completed: List[Dataset] = []
    fallbacks = 0
    no_missing = np.zeros_like(data.missing)
    for k in range(config.m):
        chain = _Chain(data, config, rng.substream("imputation", k))
        values = chain.run() if data.has_missing else np.array(data.values)
        fallbacks += chain.ridge_fallbacks
        completed.append(data.with_values(values, no_missing))
    logger.info(
        f"Imputed {int(data.missing.sum())} cells into {config.m} datasets",
        extra={"cycles": config.cycles, "ridge_fallbacks": fallbacks},
    )
    return ImputedSet(
        datasets=tuple(completed),
        config=config,
        provenance={"seed": rng.seed, "stream": list(rng.key), "ridge_fallbacks": fallbacks},
    )


def rubin_pool(estimates: Sequence[Tuple[float, float]], level: float = 0.90) -> PooledEstimate:
    """
    Pool (point, variance) pairs with Rubin's rules.

    T = W + (1 + 1/m) B, df = (m - 1) (1 + W / ((1 + 1/m) B))^2, and the
    interval is point +/- t_{df} sqrt(T); with B = 0 the normal quantile
    is used.

    Raises:
        DegenerateInputError: With fewer than two estimates or non-finite input
    """
    pairs = np.asarray(estimates, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[0] < 2 or pairs.shape[1] != 2:
        raise DegenerateInputError("Rubin's rules need at least two (point, variance) pairs")
    if not np.all(np.isfinite(pairs)):
        raise DegenerateInputError("Estimates must be finite")
    m = pairs.shape[0]
    points, variances = pairs[:, 0], pairs[:, 1]
    point = float(points.mean())
    within = float(variances.mean())
    between = float(points.var(ddof=1))
    total = within + (1.0 + 1.0 / m) * between
    upper = 1.0 - (1.0 - level) / 2.0
    if between > 0:
        df = (m - 1) * (1.0 + within / ((1.0 + 1.0 / m) * between)) ** 2
        quantile = float(sps.t.ppf(upper, df))
    else:
        df = float("inf")
        quantile = float(sps.norm.ppf(upper))
    half = quantile * np.sqrt(total)
    return PooledEstimate(
        point=point,
        within=within,
        between=between,
        total=total,
        df=df,
        ci_low=point - half,
        ci_high=point + half,
        m=m,
        level=level,
    )
