"""
Synthetic cohort generator for the simulation scenarios.

Covariates W1..W10 are multivariate normal with four non-zero
correlations; W1, W3, W5, W6, W8 and W9 are then dichotomised at zero.
The exposure follows a non-linear, non-additive logistic model (or its
main-effects part for the linear variant), and the binary outcome follows
a logistic model with conditional log odds ratio gamma for the exposure.
Counterfactual outcomes share the outcome's uniform draw.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import pandas as pd

from models import ColumnKind, ColumnMeta, ColumnRole, Dataset, ExposureModel, Mechanism
from models import ScenarioConfig
from stats import COVARIATE_CORRELATION, RngStream, expit, sample_mvn

logger = logging.getLogger(__name__)

COVARIATE_NAMES: Tuple[str, ...] = tuple(f"W{i}" for i in range(1, 11))
EXPOSURE = "A"
OUTCOME = "Y"

# 0-based positions of the dichotomised covariates (W1, W3, W5, W6, W8, W9)
BINARY_COVARIATES: Tuple[int, ...] = (0, 2, 4, 5, 7, 8)

# (coefficient, covariate positions); a term is the product of its covariates
EXPOSURE_TERMS: Tuple[Tuple[float, Tuple[int, ...]], ...] = (
    (0.8, (0,)),
    (-0.25, (1,)),
    (0.6, (2,)),
    (-0.4, (3,)),
    (-0.8, (4,)),
    (-0.5, (5,)),
    (0.7, (6,)),
    (-0.25, (1, 1)),
    (-0.4, (3, 3)),
    (0.7, (6, 6)),
    (0.4, (0, 2)),
    (-0.175, (1, 3)),
    (0.3, (2, 4)),
    (-0.28, (3, 5)),
    (-0.4, (4, 6)),
    (0.4, (0, 5)),
    (-0.175, (1, 2)),
    (0.3, (2, 3)),
    (-0.2, (3, 4)),
    (-0.4, (4, 5)),
)

OUTCOME_INTERCEPT = -1.0
# eta(A, W) = -1 + 0.3 W1 - 0.36 W2 - 0.73 W3 - 0.2 W4 + 0.71 W8 - 0.19 W9 + 0.26 W10 + gamma A
OUTCOME_COEFFICIENTS = np.array([0.3, -0.36, -0.73, -0.2, 0.0, 0.0, 0.0, 0.71, -0.19, 0.26])


def exposure_terms(
    model: ExposureModel = ExposureModel.NONLINEAR,
) -> Tuple[Tuple[float, Tuple[int, ...]], ...]:
    """Exposure-model terms; the linear model keeps only the main effects."""
    if model == ExposureModel.LINEAR:
        return tuple(term for term in EXPOSURE_TERMS if len(term[1]) == 1)
    return EXPOSURE_TERMS


def exposure_design(w: np.ndarray, model: ExposureModel = ExposureModel.NONLINEAR) -> np.ndarray:
    """Design matrix of the exposure model (no intercept), one column per term."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    columns = [np.prod(w[:, list(idx)], axis=1) for _, idx in exposure_terms(model)]
    return np.column_stack(columns)


def true_propensity(
    w: np.ndarray, model: ExposureModel = ExposureModel.NONLINEAR
) -> Union[float, np.ndarray]:
    """
    True Pr(A = 1 | W).

    Args:
        w: One covariate row (length 10) or an n x 10 matrix, complete
        model: Nonlinear or linear exposure model

    Returns:
        A probability for a single row, otherwise a vector
    """
    coefficients = np.array([c for c, _ in exposure_terms(model)])
    ps = expit(exposure_design(w, model) @ coefficients)
    if np.ndim(w) == 1:
        return float(np.asarray(ps)[0])
    return np.asarray(ps)


def generate_covariates(n: int, rng: RngStream, dichotomise: bool = True) -> np.ndarray:
    """
    Draw n covariate rows.

    Args:
        n: Number of rows, n >= 1
        rng: Random stream
        dichotomise: Set the binary covariates to I(value > 0)

    Returns:
        n x 10 matrix
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    w = sample_mvn(n, COVARIATE_CORRELATION, rng)
    if dichotomise:
        cols = list(BINARY_COVARIATES)
        w[:, cols] = (w[:, cols] > 0).astype(np.float64)
    return w


def generate_exposure(
    w: np.ndarray, rng: RngStream, model: ExposureModel = ExposureModel.NONLINEAR
) -> Tuple[np.ndarray, np.ndarray]:
    """Exposure draws a = I(u < e(w)) together with the true scores e(w)."""
    ps = np.asarray(true_propensity(w, model))
    u = rng.generator.uniform(size=ps.size)
    return (u < ps).astype(np.float64), ps


def outcome_linear_predictor(w: np.ndarray, a: np.ndarray, gamma: float) -> np.ndarray:
    """eta(A, W) of the outcome model."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    return OUTCOME_INTERCEPT + w @ OUTCOME_COEFFICIENTS + gamma * np.asarray(a, dtype=np.float64)


def generate_outcome(
    w: np.ndarray, a: np.ndarray, eps: np.ndarray, gamma: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Outcome and counterfactual outcomes from a shared uniform draw.

    Returns:
        (y, y0, y1) with y_a = I(eps < expit(eta(a, w))) and y = y_A
    """
    eps = np.asarray(eps, dtype=np.float64)
    n = eps.size
    y0 = (eps < expit(outcome_linear_predictor(w, np.zeros(n), gamma))).astype(np.float64)
    y1 = (eps < expit(outcome_linear_predictor(w, np.ones(n), gamma))).astype(np.float64)
    a = np.asarray(a, dtype=np.float64)
    y = np.where(a == 1.0, y1, y0)
    return y, y0, y1


def cohort_columns() -> Tuple[ColumnMeta, ...]:
    """Column metadata of a generated dataset: W1..W10, A, Y."""
    columns = [
        ColumnMeta(
            name,
            ColumnKind.BINARY if j in BINARY_COVARIATES else ColumnKind.CONTINUOUS,
            ColumnRole.COVARIATE,
        )
        for j, name in enumerate(COVARIATE_NAMES)
    ]
    columns.append(ColumnMeta(EXPOSURE, ColumnKind.BINARY, ColumnRole.EXPOSURE))
    columns.append(ColumnMeta(OUTCOME, ColumnKind.BINARY, ColumnRole.OUTCOME))
    return tuple(columns)


@dataclass(frozen=True)
class GeneratedCohort:
    """
    A generated cohort and its oracle-only latents.

    Attributes:
        dataset: Estimator-facing data (W1..W10, A, Y), complete
        eps: Uniform outcome draw per row
        ps: True propensity score per row
        y0: Counterfactual outcome under A = 0
        y1: Counterfactual outcome under A = 1
    """

    dataset: Dataset
    eps: np.ndarray
    ps: np.ndarray
    y0: np.ndarray
    y1: np.ndarray

    def latent_frame(self) -> pd.DataFrame:
        """Latents as a DataFrame (oracle-only sidecar)."""
        return pd.DataFrame({"eps_y": self.eps, "ps": self.ps, "y0": self.y0, "y1": self.y1})


def generate_cohort(n: int, scenario: ScenarioConfig, rng: RngStream) -> GeneratedCohort:
    """Generate one complete cohort of ``n`` rows for ``scenario``."""
    w = generate_covariates(n, rng.substream("covariates"))
    a, ps = generate_exposure(w, rng.substream("exposure"), scenario.exposure_model)
    eps = rng.substream("outcome").generator.uniform(size=n)
    y, y0, y1 = generate_outcome(w, a, eps, scenario.gamma)
    values = np.column_stack([w, a, y])
    return GeneratedCohort(Dataset(cohort_columns(), values), eps, ps, y0, y1)


def true_att_log_or(
    gamma: float,
    model: ExposureModel,
    n_oracle: int,
    rng: RngStream,
    chunk_size: int = 500_000,
) -> float:
    """
    Marginal ATT log odds ratio by simulation with counterfactuals.

    Computes log[(p1 / (1 - p1)) / (p0 / (1 - p0))] where p_a is the mean
    of Y_a among exposed rows of an ``n_oracle``-row cohort, generated in
    chunks to bound memory.
    """
    if n_oracle < 1:
        raise ValueError(f"n_oracle must be >= 1, got {n_oracle}")
    exposed = 0
    sum_y0 = 0.0
    sum_y1 = 0.0
    done = 0
    chunk = 0
    while done < n_oracle:
        size = min(chunk_size, n_oracle - done)
        stream = rng.substream("oracle", chunk)
        w = generate_covariates(size, stream.substream("covariates"))
        a, _ = generate_exposure(w, stream.substream("exposure"), model)
        eps = stream.substream("outcome").generator.uniform(size=size)
        _, y0, y1 = generate_outcome(w, a, eps, gamma)
        mask = a == 1.0
        exposed += int(mask.sum())
        sum_y0 += float(y0[mask].sum())
        sum_y1 += float(y1[mask].sum())
        done += size
        chunk += 1
    p0 = sum_y0 / exposed
    p1 = sum_y1 / exposed
    truth = float(np.log(p1 / (1.0 - p1)) - np.log(p0 / (1.0 - p0)))
    logger.info(f"True ATT log OR (gamma={gamma}, {model.value}, n={n_oracle}): {truth:.4f}")
    return truth


def inject_missingness(
    cohort: Union[GeneratedCohort, Dataset], scenario: ScenarioConfig, rng: RngStream
) -> Dataset:
    """
    Set W3 (MCAR, probability p) and W4 (MAR) to missing.

    Under MAR, W4 is missing with probability
    expit(a0 + a1 W1 + a2 A + a3 Y), independently of W3. Both uniform
    vectors are always drawn so streams stay aligned across mechanisms.
    No other column is touched.
    """
    data = cohort.dataset if isinstance(cohort, GeneratedCohort) else cohort
    n = data.n_rows
    generator = rng.generator
    u3 = generator.uniform(size=n)
    u4 = generator.uniform(size=n)

    missing = np.array(data.missing)
    missing[:, data.index_of("W3")] |= u3 < scenario.p
    if scenario.mechanism == Mechanism.MAR:
        assert scenario.alpha is not None
        a0, a1, a2, a3 = scenario.alpha
        eta = (
            a0
            + a1 * data.column("W1")
            + a2 * data.column(data.exposure_name)
            + a3 * data.column(OUTCOME)
        )
        missing[:, data.index_of("W4")] |= u4 < expit(eta)
    return data.with_values(np.array(data.values), missing)
