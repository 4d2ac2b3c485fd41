"""
Tree-ensemble propensity score estimators.

- Bagged CART (baCART): classification trees with surrogate splits fit to
  bootstrap resamples; the score is the mean tree prediction.
- Boosted CART (bCART): Bernoulli-deviance gradient boosting of
  missing-branch regression trees, with the iteration chosen to minimise
  the mean weighted Kolmogorov-Smirnov statistic across covariates.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from cart import FittedTree, MissingMode, TreeControls, fit_tree_arrays
from config import BaggingConfig, BoostingConfig
from exceptions import DegenerateExposureError, EmptySampleError, SchemaError
from models import ColumnKind, Dataset
from stats import RngStream, expit, ks_statistic, logit

logger = logging.getLogger(__name__)

# Test seam: (n, tree index) -> row positions of one resample
Resampler = Callable[[int, int], np.ndarray]


def _exposure_and_design(
    data: Dataset, predictors: Optional[Sequence[str]]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Tuple[str, ...]]:
    exposure = data.exposure_name
    if data.meta(exposure).kind != ColumnKind.BINARY:
        raise SchemaError(f"Exposure '{exposure}' must be binary")
    a = data.require_complete([exposure])[:, 0]
    names = tuple(predictors) if predictors is not None else tuple(data.covariate_names)
    idx = [data.index_of(n) for n in names]
    return a, data.values[:, idx], data.missing[:, idx], names


def bagging_controls(config: BaggingConfig) -> TreeControls:
    """Tree controls for bagged CART."""
    return TreeControls(
        min_split=config.min_split,
        min_bucket=config.min_bucket,
        cp=config.cp,
        max_depth=config.max_depth,
        max_surrogates=config.max_surrogates,
        missing_mode=MissingMode.SURROGATE,
    )


def boosting_controls(config: BoostingConfig) -> TreeControls:
    """Regression-tree controls for one boosting stage."""
    return TreeControls(
        min_split=2 * config.min_leaf,
        min_bucket=config.min_leaf,
        cp=0.0,
        max_depth=config.depth,
        max_surrogates=0,
        missing_mode=MissingMode.BRANCH,
    )


# ----------------------------------------------------------------------
# Bagging
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class BaggedModel:
    """
    Bootstrap-aggregated classification trees.

    Attributes:
        trees: Fitted trees, one per resample
        predictors: Shared predictor schema
    """

    trees: Tuple[FittedTree, ...]
    predictors: Tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.trees:
            raise ValueError("A bagged model needs at least one tree")

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def fit_bagged(
    data: Dataset,
    rng: RngStream,
    n_trees: int = 100,
    controls: Optional[TreeControls] = None,
    predictors: Optional[Sequence[str]] = None,
    resample: Optional[Resampler] = None,
    n_jobs: int = 1,
) -> BaggedModel:
    """
    Fit bagged CART for the exposure of ``data``.

    Resample indices are drawn serially from ``rng`` before any tree is
    fit, so the result does not depend on ``n_jobs``.

    Args:
        data: Training data; the exposure must be complete
        rng: Random stream for the bootstrap draws
        n_trees: Number of bootstrap replicates B
        controls: Tree controls (surrogate mode, rpart defaults if None)
        predictors: Predictor columns (covariates if None)
        resample: Replacement for the bootstrap draw (tests)
        n_jobs: joblib workers for fitting trees

    Returns:
        BaggedModel
    """
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    controls = controls or bagging_controls(BaggingConfig())
    a, x, missing, names = _exposure_and_design(data, predictors)
    n = a.size

    draws: List[np.ndarray] = []
    for b in range(n_trees):
        if resample is not None:
            draws.append(np.asarray(resample(n, b), dtype=np.int64))
        else:
            draws.append(rng.substream("bootstrap", b).generator.integers(0, n, size=n))

    trees = Parallel(n_jobs=n_jobs)(
        delayed(fit_tree_arrays)(x[idx], missing[idx], a[idx], None, controls, False, names)
        for idx in draws
    )
    logger.debug(f"Fitted {n_trees} bagged trees on {n} rows")
    return BaggedModel(tuple(trees), names)


def predict_ps_bagged(model: BaggedModel, data: Dataset) -> np.ndarray:
    """Mean tree prediction per row, in [0, 1]."""
    predictions = np.vstack([tree.predict(data) for tree in model.trees])
    return predictions.mean(axis=0)


# ----------------------------------------------------------------------
# Boosting
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class BoostStage:
    """One boosting stage: a regression tree and its per-leaf Newton increments."""

    tree: FittedTree
    increments: np.ndarray


@dataclass(frozen=True)
class BoostedModel:
    """
    Gradient-boosted trees on the log-odds scale.

    Attributes:
        f0: Initial log odds, logit(mean exposure)
        stages: Fitted stages in order
        shrinkage: Learning rate lambda
        t_star: Selected iteration (stages used for prediction)
        ks_trace: (iteration, mean KS) evaluations
        deviance_trace: (iteration, mean Bernoulli deviance) at the same iterations
        predictors: Predictor schema
    """

    f0: float
    stages: Tuple[BoostStage, ...]
    shrinkage: float
    t_star: int
    ks_trace: Tuple[Tuple[int, float], ...]
    deviance_trace: Tuple[Tuple[int, float], ...] = ()
    predictors: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.shrinkage <= 0:
            raise ValueError("Shrinkage must be positive")
        if not 0 <= self.t_star <= len(self.stages):
            raise ValueError(f"t_star {self.t_star} outside [0, {len(self.stages)}]")

    def trace_frame(self) -> pd.DataFrame:
        """KS and deviance traces as a DataFrame."""
        deviance = dict(self.deviance_trace)
        return pd.DataFrame(
            {
                "iteration": [t for t, _ in self.ks_trace],
                "mean_ks": [ks for _, ks in self.ks_trace],
                "deviance": [deviance.get(t, np.nan) for t, _ in self.ks_trace],
            }
        )


def _bernoulli_deviance(a: np.ndarray, f: np.ndarray) -> float:
    # -2 mean log-likelihood, computed stably on the log-odds scale
    return float(2.0 * np.mean(np.logaddexp(0.0, f) - a * f))


def _mean_ks_arrays(
    x: np.ndarray, missing: np.ndarray, a: np.ndarray, scores: np.ndarray
) -> float:
    exposed = a == 1
    unexposed = ~exposed
    if not exposed.any() or not unexposed.any():
        raise EmptySampleError("Both exposure groups must be non-empty")
    odds = scores / (1.0 - scores)
    values = []
    for j in range(x.shape[1]):
        observed = ~missing[:, j]
        e_rows = exposed & observed
        u_rows = unexposed & observed
        if not e_rows.any() or not u_rows.any() or odds[u_rows].sum() <= 0:
            logger.warning(f"Covariate {j} has no observed rows in an exposure group; skipped")
            continue
        values.append(ks_statistic(x[e_rows, j], x[u_rows, j], None, odds[u_rows]))
    if not values:
        raise EmptySampleError("No covariate has observed rows in both exposure groups")
    return float(np.mean(values))


def mean_ks_balance(
    data: Dataset, scores: np.ndarray, covariates: Optional[Sequence[str]] = None
) -> float:
    """
    Mean weighted KS distance between exposure groups across covariates.

    Exposed rows get unit weight and unexposed rows get score / (1 - score).
    Missing cells are left out of that covariate's distributions.

    Args:
        data: Dataset with a complete exposure
        scores: Per-row propensity scores in (0, 1)
        covariates: Columns to balance (covariates of ``data`` if None)

    Raises:
        EmptySampleError: If an exposure group is empty
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (data.n_rows,):
        raise SchemaError(f"Expected {data.n_rows} scores, got shape {scores.shape}")
    if (scores <= 0).any() or (scores >= 1).any():
        raise ValueError("Scores must lie strictly inside (0, 1)")
    a, x, missing, _ = _exposure_and_design(data, covariates)
    return _mean_ks_arrays(x, missing, a, scores)


def fit_boosted(
    data: Dataset,
    rng: RngStream,
    config: Optional[BoostingConfig] = None,
    predictors: Optional[Sequence[str]] = None,
) -> BoostedModel:
    """
    Fit boosted CART for the exposure of ``data``.

    Each stage fits a missing-branch regression tree to the residuals
    A - expit(F) on a subsample, then moves every leaf by the Newton step
    sum(residual) / sum(p (1 - p)), clamped to +/- ``max_increment`` and
    scaled by the shrinkage. The mean KS balance is recorded at iteration
    0, every ``eval_stride`` iterations and at the last iteration; the
    selected iteration is the earliest minimiser.

    Args:
        data: Training data; the exposure must be complete
        rng: Random stream for the per-stage subsamples
        config: Boosting settings
        predictors: Predictor columns (covariates if None)

    Returns:
        BoostedModel

    Raises:
        DegenerateExposureError: If the exposure is constant
    """
    config = config or BoostingConfig()
    a, x, missing, names = _exposure_and_design(data, predictors)
    n = a.size
    mean_a = float(a.mean())
    if mean_a in (0.0, 1.0):
        raise DegenerateExposureError("Exposure is constant; boosting needs both groups")
    controls = boosting_controls(config)
    stride = max(1, config.eval_stride)
    sub_size = max(1, int(np.floor(config.bag_fraction * n)))
    generator = rng.generator

    f0 = float(logit(mean_a))
    f = np.full(n, f0)
    stages: List[BoostStage] = []
    ks_trace = [(0, _mean_ks_arrays(x, missing, a, _clip(expit(f))))]
    deviance_trace = [(0, _bernoulli_deviance(a, f))]

    for t in range(1, config.n_trees + 1):
        sub = np.sort(generator.choice(n, size=sub_size, replace=False))
        p = expit(f)
        residual = a - p
        tree = fit_tree_arrays(
            x[sub], missing[sub], residual[sub], None, controls, True, names
        )
        leaves_sub = tree.apply_arrays(x[sub], missing[sub])
        num = np.bincount(leaves_sub, weights=residual[sub], minlength=tree.n_leaves)
        den = np.bincount(leaves_sub, weights=(p * (1.0 - p))[sub], minlength=tree.n_leaves)
        with np.errstate(divide="ignore", invalid="ignore"):
            increments = np.where(den > 0, num / den, 0.0)
        increments = np.clip(increments, -config.max_increment, config.max_increment)
        f = f + config.shrinkage * increments[tree.apply_arrays(x, missing)]
        stages.append(BoostStage(tree, increments))

        if t % stride == 0 or t == config.n_trees:
            ks_trace.append((t, _mean_ks_arrays(x, missing, a, _clip(expit(f)))))
            deviance_trace.append((t, _bernoulli_deviance(a, f)))

    ks_values = np.array([ks for _, ks in ks_trace])
    t_star = ks_trace[int(np.argmin(ks_values))][0]
    logger.info(
        f"Boosting selected iteration {t_star} of {config.n_trees} "
        f"(mean KS {ks_values.min():.4f})"
    )
    return BoostedModel(
        f0=f0,
        stages=tuple(stages),
        shrinkage=config.shrinkage,
        t_star=t_star,
        ks_trace=tuple(ks_trace),
        deviance_trace=tuple(deviance_trace),
        predictors=names,
    )


def _clip(scores: np.ndarray) -> np.ndarray:
    return np.clip(scores, 1e-12, 1.0 - 1e-12)


def boosted_log_odds(
    model: BoostedModel, data: Dataset, iteration: Optional[int] = None
) -> np.ndarray:
    """F0 + lambda * sum of stage increments up to ``iteration`` (t* if None)."""
    t = model.t_star if iteration is None else iteration
    if not 0 <= t <= len(model.stages):
        raise ValueError(f"Iteration {t} outside [0, {len(model.stages)}]")
    f = np.full(data.n_rows, model.f0)
    if t == 0:
        return f
    x, missing = model.stages[0].tree.design(data)
    for stage in model.stages[:t]:
        f = f + model.shrinkage * stage.increments[stage.tree.apply_arrays(x, missing)]
    return f


def predict_ps_boosted(
    model: BoostedModel, data: Dataset, iteration: Optional[int] = None
) -> np.ndarray:
    """expit of the boosted log odds at the selected iteration."""
    return np.asarray(expit(boosted_log_odds(model, data, iteration)))
