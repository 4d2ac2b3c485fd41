"""
Weighted logistic regression by iteratively reweighted least squares.

Shared by the outcome model (robust ATT log odds ratio), the logistic
propensity score models and the logistic imputation draws.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from exceptions import ConvergenceError, EstimationError, InvalidWeightsError, SeparationError
from exceptions import TargetNotBinaryError

logger = logging.getLogger(__name__)

# |coefficient| beyond this means the MLE is running off to infinity
_DIVERGENCE_BOUND = 30.0

# an unpenalised fit that converges beyond this is an infinite MLE cut short by the tolerance
_SEPARATION_BOUND = 15.0

# p (1 - p) below this on a weighted row means a fitted probability of 0 or 1
_FITTED_VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class LogisticFit:
    """
    Result of a weighted logistic fit.

    Attributes:
        coef: Coefficient vector (same column order as the design)
        information: Weighted Fisher information X' diag(w p (1-p)) X (+ ridge)
        fitted: Fitted probabilities
        converged: True if max |score| fell below the tolerance
        iterations: Newton iterations used
        ridge: Ridge penalty applied (0 for a plain fit)
    """

    coef: np.ndarray
    information: np.ndarray
    fitted: np.ndarray
    converged: bool
    iterations: int
    ridge: float = 0.0

    @property
    def ridge_used(self) -> bool:
        """True when the fit needed a ridge penalty."""
        return self.ridge > 0.0

    def model_covariance(self) -> np.ndarray:
        """Inverse information (model-based covariance)."""
        return _inverse(self.information)


def _validate(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[0] != y.shape[0] or w.shape != y.shape:
        raise ValueError(f"Design {x.shape}, target {y.shape} and weights {w.shape} disagree")
    if not np.isin(y, (0.0, 1.0)).all():
        raise TargetNotBinaryError("Logistic target must be 0/1")
    if not np.all(np.isfinite(w)) or (w < 0).any() or w.sum() <= 0:
        raise InvalidWeightsError("Weights must be finite, non-negative and sum > 0")


def _check_separation(beta: np.ndarray, p: np.ndarray, w: np.ndarray) -> None:
    fitted_variance = (p * (1.0 - p))[w > 0]
    if fitted_variance.size and fitted_variance.min() < _FITTED_VARIANCE_FLOOR:
        raise SeparationError("Fitted probabilities of 0 or 1 on weighted rows")
    if np.max(np.abs(beta)) > _SEPARATION_BOUND:
        raise SeparationError(
            f"Converged with |coefficient| {np.max(np.abs(beta)):.3g} (separation in the data)"
        )


def _inverse(matrix: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(matrix)
    except np.linalg.LinAlgError as e:
        raise EstimationError("Singular information matrix") from e


def fit_logistic(
    x: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 50,
    ridge: float = 0.0,
) -> LogisticFit:
    """
    Fit logit Pr(y = 1) = x @ beta by Newton-Raphson (IRLS).

    Iterates until max |score| < ``tol`` or ``max_iter`` steps. The
    optional ridge adds ``ridge * |beta|^2 / 2`` to the negative
    log-likelihood.

    Args:
        x: n x k design matrix (include an intercept column yourself)
        y: 0/1 target
        weights: Per-row non-negative weights (unit if None)
        tol: Score tolerance
        max_iter: Iteration cap
        ridge: Ridge penalty on all coefficients

    Returns:
        LogisticFit

    Raises:
        SeparationError: On complete or quasi-complete separation
        ConvergenceError: When the cap is reached without separation
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    _validate(x, y, w)

    k = x.shape[1]
    beta = np.zeros(k)
    penalty = ridge * np.eye(k)
    p = special.expit(x @ beta)
    for iteration in range(1, max_iter + 1):
        score = x.T @ (w * (y - p)) - ridge * beta
        if np.max(np.abs(score)) < tol:
            if ridge == 0.0:
                _check_separation(beta, p, w)
            info = x.T @ (x * (w * p * (1.0 - p))[:, None]) + penalty
            return LogisticFit(beta, info, p, True, iteration - 1, ridge)
        info = x.T @ (x * (w * p * (1.0 - p))[:, None]) + penalty
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as e:
            raise SeparationError(f"Singular information matrix at iteration {iteration}") from e
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > _DIVERGENCE_BOUND:
            raise SeparationError(
                f"Coefficients diverged at iteration {iteration} (separation in the data)"
            )
        p = special.expit(x @ beta)

    score = x.T @ (w * (y - p)) - ridge * beta
    info = x.T @ (x * (w * p * (1.0 - p))[:, None]) + penalty
    if np.max(np.abs(score)) < tol:
        if ridge == 0.0:
            _check_separation(beta, p, w)
        return LogisticFit(beta, info, p, True, max_iter, ridge)
    if np.min(p * (1.0 - p)) < 1e-10:
        raise SeparationError("Fitted probabilities reached 0 or 1 without convergence")
    raise ConvergenceError(
        f"IRLS did not converge in {max_iter} iterations (max |score| {np.max(np.abs(score)):.3g})"
    )


def fit_logistic_with_fallback(
    x: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 50,
    ridge: float = 1e-8,
) -> LogisticFit:
    """
    ``fit_logistic``, retried with a ridge penalty on separation or non-convergence.

    The returned fit's ``ridge_used`` flag records whether the retry happened.
    Errors from the ridge-stabilised fit propagate.
    """
    try:
        return fit_logistic(x, y, weights, tol=tol, max_iter=max_iter)
    except (SeparationError, ConvergenceError) as e:
        logger.info(f"Logistic fit failed ({e}); retrying with ridge {ridge:g}")
        return fit_logistic(x, y, weights, tol=tol, max_iter=max_iter, ridge=ridge)


def sandwich_covariance(
    fit: LogisticFit, x: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Robust (HC0) covariance A^-1 M A^-1 of a weighted logistic fit.

    A is the weighted information and M = sum_i w_i^2 s_i s_i' with
    per-row scores s_i = x_i (y_i - p_i).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    scores = x * (w * (y - fit.fitted))[:, None]
    meat = scores.T @ scores
    bread = _inverse(fit.information)
    return bread @ meat @ bread
