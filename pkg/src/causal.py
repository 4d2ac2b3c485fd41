"""
ATT estimation from propensity scores.

Scores are truncated to [0.001, 0.999]. The ATT log odds ratio comes from
a logistic model of the outcome on the exposure, fit either to the full
data with ATT weights (IPW) or to a 1:1 greedy caliper-matched sample,
with a robust sandwich standard error and a 90% normal interval. Under
multiple imputation the per-dataset estimates are pooled by Rubin's rules.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps

from config import EstimationConfig, Settings, settings as default_settings
from dgp import COVARIATE_NAMES, exposure_design
from ensemble import bagging_controls, fit_bagged, fit_boosted, predict_ps_bagged
from ensemble import predict_ps_boosted
from exceptions import EmptySampleError, EstimationError, PsMissError, SchemaError
from glm import fit_logistic_with_fallback, sandwich_covariance
from impute import ImputedSet, rubin_pool
from models import (
    AttWeights,
    Dataset,
    EffectEstimate,
    EstimationMode,
    ExposureModel,
    MatchedSample,
    PropensityScores,
    PsMethod,
)
from stats import RngStream, content_id

logger = logging.getLogger(__name__)


class LogisticForm(str, Enum):
    """Design of a logistic propensity score model."""

    MAIN_EFFECTS = "main_effects"
    TRUE_FORM = "true_form"


def truncate_scores(
    raw: np.ndarray,
    bounds: Tuple[float, float] = (0.001, 0.999),
    method: Optional[PsMethod] = None,
    generalised: bool = False,
) -> PropensityScores:
    """
    Clamp raw scores to ``bounds``.

    Raises:
        ValueError: If a score is non-finite or outside [0, 1]
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)) or (raw < 0).any() or (raw > 1).any():
        raise ValueError("Raw propensity scores must lie in [0, 1]")
    lower, upper = bounds
    return PropensityScores(np.clip(raw, lower, upper), method, generalised)


def att_weights(ps: PropensityScores, exposure: np.ndarray) -> AttWeights:
    """1 for exposed rows and ps / (1 - ps) for unexposed rows."""
    a = np.asarray(exposure, dtype=np.float64)
    if a.shape != ps.values.shape:
        raise SchemaError(f"{a.size} exposure values for {len(ps)} scores")
    s = ps.values
    return AttWeights(np.where(a == 1.0, 1.0, s / (1.0 - s)))


def greedy_match(
    ps: PropensityScores,
    exposure: np.ndarray,
    caliper_mult: float = 0.2,
    rng: Optional[RngStream] = None,
    caliper: Optional[float] = None,
) -> MatchedSample:
    """
    Greedy 1:1 nearest-neighbour matching on the logit score, without replacement.

    The caliper is ``caliper_mult`` times the standard deviation of the
    logit scores over all rows unless given explicitly. Exposed rows are
    visited in a random order drawn from ``rng`` (row order if None); each
    takes the nearest unmatched unexposed row within the caliper, ties
    going to the lower row index.

    Raises:
        EmptySampleError: If either exposure group is empty
    """
    a = np.asarray(exposure, dtype=np.float64)
    logits = ps.logit
    exposed = np.flatnonzero(a == 1.0)
    unexposed = np.flatnonzero(a == 0.0)
    if exposed.size == 0 or unexposed.size == 0:
        raise EmptySampleError("Matching needs exposed and unexposed rows")
    if caliper is None:
        caliper = caliper_mult * float(np.std(logits, ddof=1)) if logits.size > 1 else 0.0
    order = rng.generator.permutation(exposed) if rng is not None else exposed

    candidate_logits = logits[unexposed]
    taken = np.zeros(unexposed.size, dtype=bool)
    pairs: List[Tuple[int, int]] = []
    for row in order:
        distance = np.abs(candidate_logits - logits[row])
        distance[taken] = np.inf
        k = int(np.argmin(distance))
        if distance[k] <= caliper:
            taken[k] = True
            pairs.append((int(row), int(unexposed[k])))
    return MatchedSample(tuple(pairs), float(caliper))


@dataclass(frozen=True)
class OutcomeFit:
    """
    Exposure coefficient of the outcome model.

    Attributes:
        coef: log odds ratio of the exposure
        se: Sandwich standard error
        ridge_used: True if the IRLS ridge fallback was needed
        iterations: IRLS iterations
    """

    coef: float
    se: float
    ridge_used: bool
    iterations: int


def weighted_logistic(
    outcome: np.ndarray,
    exposure: np.ndarray,
    weights: Optional[np.ndarray] = None,
    config: Optional[EstimationConfig] = None,
) -> OutcomeFit:
    """
    Fit logit Pr(Y = 1) = b0 + b1 A with weights; return b1 and its sandwich SE.

    Raises:
        SeparationError: If the ridge-stabilised fit also separates
        ConvergenceError: If IRLS does not converge
    """
    config = config or EstimationConfig()
    y = np.asarray(outcome, dtype=np.float64)
    a = np.asarray(exposure, dtype=np.float64)
    x = np.column_stack([np.ones_like(a), a])
    fit = fit_logistic_with_fallback(
        x, y, weights, tol=config.tol, max_iter=config.max_iter, ridge=config.ridge
    )
    cov = sandwich_covariance(fit, x, y, weights)
    return OutcomeFit(
        coef=float(fit.coef[1]),
        se=float(np.sqrt(max(cov[1, 1], 0.0))),
        ridge_used=fit.ridge_used,
        iterations=fit.iterations,
    )


def _outcome_and_exposure(data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    outcome = data.outcome_name
    if outcome is None:
        raise SchemaError("Effect estimation needs an outcome column")
    values = data.require_complete([outcome, data.exposure_name])
    return values[:, 0], values[:, 1]


def estimate_att(
    data: Dataset,
    ps: PropensityScores,
    mode: EstimationMode,
    rng: Optional[RngStream] = None,
    config: Optional[EstimationConfig] = None,
) -> EffectEstimate:
    """
    ATT log odds ratio with a robust SE and a normal confidence interval.

    IPW fits the weighted outcome model on all rows; matching fits an
    unweighted model on the matched pairs.

    Raises:
        EstimationError: If matching yields no pairs
    """
    config = config or EstimationConfig()
    y, a = _outcome_and_exposure(data)
    if len(ps) != data.n_rows:
        raise SchemaError(f"{len(ps)} scores for {data.n_rows} rows")
    diagnostics: Dict[str, object] = {"mode": mode.value}
    if mode == EstimationMode.IPW:
        weights = att_weights(ps, a)
        fit = weighted_logistic(y, a, weights.values, config)
        diagnostics["ess"] = weights.effective_sample_size
    else:
        matched = greedy_match(ps, a, config.caliper_mult, rng)
        if len(matched) == 0:
            raise EstimationError("Matching produced no pairs")
        rows = matched.rows
        fit = weighted_logistic(y[rows], a[rows], None, config)
        diagnostics["n_matched"] = len(matched)
        diagnostics["caliper"] = matched.caliper
    diagnostics["ridge_used"] = fit.ridge_used
    z = float(sps.norm.ppf(1.0 - (1.0 - config.level) / 2.0))
    return EffectEstimate(
        point=fit.coef,
        se=fit.se,
        ci_low=fit.coef - z * fit.se,
        ci_high=fit.coef + z * fit.se,
        level=config.level,
        diagnostics=diagnostics,
    )


def logistic_ps(
    data: Dataset,
    form: LogisticForm = LogisticForm.MAIN_EFFECTS,
    exposure_model: ExposureModel = ExposureModel.NONLINEAR,
    config: Optional[EstimationConfig] = None,
    covariates: Optional[Sequence[str]] = None,
) -> PropensityScores:
    """
    Logistic propensity scores on complete data.

    MAIN_EFFECTS regresses the exposure on the covariates; TRUE_FORM uses
    the squared and product terms of the generating exposure model
    (``exposure_model``) over W1..W10.

    Raises:
        SchemaError: If a needed column has missing cells
        SeparationError: If the fit separates even with the ridge fallback
    """
    config = config or EstimationConfig()
    a = data.require_complete([data.exposure_name])[:, 0]
    if form == LogisticForm.TRUE_FORM:
        w = data.require_complete(list(COVARIATE_NAMES))
        design = exposure_design(w, exposure_model)
        method = PsMethod.LRC
    else:
        names = list(covariates) if covariates is not None else data.covariate_names
        design = data.require_complete(names)
        method = PsMethod.LRM
    x = np.column_stack([np.ones(data.n_rows), design])
    fit = fit_logistic_with_fallback(
        x, a, None, tol=config.tol, max_iter=config.max_iter, ridge=config.ridge
    )
    return truncate_scores(fit.fitted, config.truncation, method)


def fit_propensity(
    data: Dataset,
    method: PsMethod,
    rng: RngStream,
    settings: Optional[Settings] = None,
    exposure_model: ExposureModel = ExposureModel.NONLINEAR,
) -> PropensityScores:
    """
    Estimate truncated propensity scores with ``method``.

    CART methods accept incomplete covariates; their scores are flagged
    as generalised when ``data`` has missing cells.
    """
    settings = settings or default_settings
    truncation = settings.estimation.truncation
    if method == PsMethod.BACART:
        model = fit_bagged(
            data,
            rng,
            n_trees=settings.bagging.n_trees,
            controls=bagging_controls(settings.bagging),
        )
        raw = predict_ps_bagged(model, data)
        return truncate_scores(raw, truncation, method, data.has_missing)
    if method == PsMethod.BCART:
        boosted = fit_boosted(data, rng, settings.boosting)
        raw = predict_ps_boosted(boosted, data)
        return truncate_scores(raw, truncation, method, data.has_missing)
    form = LogisticForm.TRUE_FORM if method == PsMethod.LRC else LogisticForm.MAIN_EFFECTS
    return logistic_ps(data, form, exposure_model, settings.estimation)


def estimate_att_mi(
    imputed: ImputedSet,
    method: PsMethod,
    mode: EstimationMode,
    rng: RngStream,
    settings: Optional[Settings] = None,
    exposure_model: ExposureModel = ExposureModel.NONLINEAR,
    scores: Optional[Sequence[PropensityScores]] = None,
) -> EffectEstimate:
    """
    Estimate within each completed dataset and pool by Rubin's rules.

    Args:
        imputed: Completed datasets
        method: Propensity score method fit within each dataset
        mode: IPW or matching
        rng: Random stream (sub-streams keyed on each dataset's contents)
        settings: Estimator settings
        exposure_model: Exposure model for the LRc design
        scores: Pre-computed scores per dataset (fit here if None)

    Raises:
        EstimationError: If any imputation fails; the message names it
    """
    settings = settings or default_settings
    per_dataset: List[Tuple[float, float]] = []
    ridge = False
    for k, data in enumerate(imputed):
        # streams follow the dataset, not its position
        key = content_id(data.values)
        try:
            ps = (
                scores[k]
                if scores is not None
                else fit_propensity(
                    data, method, rng.substream("ps", key), settings, exposure_model
                )
            )
            estimate = estimate_att(
                data, ps, mode, rng.substream("match", key), settings.estimation
            )
        except PsMissError as e:
            raise EstimationError(f"Imputation {k + 1} of {imputed.m} failed: {e}") from e
        ridge = ridge or bool(estimate.diagnostics.get("ridge_used"))
        per_dataset.append((estimate.point, estimate.se**2))
    pooled = rubin_pool(per_dataset, settings.estimation.level)
    return EffectEstimate(
        point=pooled.point,
        se=pooled.se,
        ci_low=pooled.ci_low,
        ci_high=pooled.ci_high,
        level=pooled.level,
        diagnostics={"mode": mode.value, "m": pooled.m, "df": pooled.df, "ridge_used": ridge},
        pooled=pooled,
    )
