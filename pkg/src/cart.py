"""
Classification and regression trees with missing-data handling.

Two strategies for rows whose splitting variable is missing:

- SURROGATE: route by the best surrogate split whose variable is
  observed, else by the majority direction (rpart, usesurrogate = 2).
- BRANCH: every split gets a third child that receives the rows whose
  splitting variable is missing (gbm/twang style).

Splits are chosen on rows whose candidate variable is observed. Impurity
is the weighted Gini index for 0/1 targets and the weighted sum of
squares for real targets. Growth stops on min_split, max_depth, purity
or when the best improvement falls below cp times the root impurity;
there is no post-pruning.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from exceptions import InvalidWeightsError, SchemaError, TargetNotBinaryError
from models import Dataset

logger = logging.getLogger(__name__)

# Relative tolerance when comparing split improvements
_TIE_TOL = 1e-12


class MissingMode(str, Enum):
    """How rows with a missing splitting variable are routed."""

    SURROGATE = "surrogate"
    BRANCH = "branch"


@dataclass(frozen=True)
class TreeControls:
    """
    Tree growth controls. Defaults mirror rpart.

    Attributes:
        min_split: Minimum rows in a node to attempt a split
        min_bucket: Minimum observed rows in each of the left/right children
        cp: Minimum improvement as a fraction of root impurity
        max_depth: Maximum depth (root has depth 0)
        max_surrogates: Surrogates kept per split (surrogate mode)
        missing_mode: SURROGATE or BRANCH
    """

    min_split: int = 20
    min_bucket: int = 7
    cp: float = 0.01
    max_depth: int = 30
    max_surrogates: int = 5
    missing_mode: MissingMode = MissingMode.SURROGATE

    def __post_init__(self) -> None:
        if self.min_bucket < 1 or self.min_bucket > self.min_split:
            raise ValueError(
                f"Need 1 <= min_bucket <= min_split, got {self.min_bucket}, {self.min_split}"
            )
        if self.cp < 0:
            raise ValueError(f"cp must be >= 0, got {self.cp}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.max_surrogates < 0:
            raise ValueError(f"max_surrogates must be >= 0, got {self.max_surrogates}")


@dataclass(frozen=True)
class Surrogate:
    """
    Backup split for rows missing the primary variable.

    Attributes:
        variable: Predictor position
        threshold: Split point
        left_if_le: True if x <= threshold goes left, False if it goes right
        agreement: Weighted fraction of rows sent the same way as the primary
        baseline: Agreement of the majority rule on the same rows
    """

    variable: int
    threshold: float
    left_if_le: bool
    agreement: float
    baseline: float

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        le = x <= self.threshold
        return le if self.left_if_le else ~le


@dataclass(frozen=True)
class SplitRule:
    """
    Primary split of an internal node.

    Rows with x <= threshold go left. For binary predictors the threshold
    is 0.5, so the left category set is {0}.

    Attributes:
        variable: Predictor position
        threshold: Midpoint between consecutive observed values
        improvement: Impurity decrease on rows with the variable observed
        surrogates: Ordered surrogate list (surrogate mode)
        default_left: Majority direction for rows no surrogate can route
        missing_branch: True if missing rows go to a third child
    """

    variable: int
    threshold: float
    improvement: float
    surrogates: Tuple[Surrogate, ...] = ()
    default_left: bool = True
    missing_branch: bool = False


@dataclass(frozen=True)
class TreeNode:
    """
    Tree node. Leaves have no rule and no children.

    Attributes:
        prediction: Class-1 proportion (classification) or mean (regression)
        n: Training rows routed here
        weight: Training weight routed here
        depth: Depth in the tree
        rule: Split rule for internal nodes
        children: (left, right) or (left, right, missing)
        leaf_id: Position among the leaves in pre-order, -1 for internal nodes
    """

    prediction: float
    n: int
    weight: float
    depth: int
    rule: Optional[SplitRule] = None
    children: Tuple["TreeNode", ...] = ()
    leaf_id: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.rule is None


@dataclass(frozen=True)
class FittedTree:
    """
    A fitted tree plus the predictor schema it was trained on.

    Attributes:
        root: Root node
        predictors: Predictor column names, in design order
        controls: Growth controls used
        regression: True for a sum-of-squares tree
        leaves: Leaf nodes in pre-order (``leaves[k].leaf_id == k``)
    """

    root: TreeNode
    predictors: Tuple[str, ...]
    controls: TreeControls
    regression: bool = False
    leaves: Tuple[TreeNode, ...] = field(default=(), repr=False)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def design(self, data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        """Predictor matrix and missingness mask of ``data``."""
        missing_cols = [p for p in self.predictors if p not in data.names]
        if missing_cols:
            raise SchemaError(f"Dataset lacks predictor columns {missing_cols}")
        idx = [data.index_of(p) for p in self.predictors]
        return data.values[:, idx], data.missing[:, idx]

    def apply_arrays(self, x: np.ndarray, missing: np.ndarray) -> np.ndarray:
        """Leaf id of every row."""
        if x.ndim != 2 or x.shape[1] != len(self.predictors):
            raise SchemaError(
                f"Expected {len(self.predictors)} predictor columns, got shape {x.shape}"
            )
        out = np.empty(x.shape[0], dtype=np.int64)
        _route(self.root, x, missing, np.arange(x.shape[0]), out)
        return out

    def apply(self, data: Dataset) -> np.ndarray:
        """Leaf id of every row of ``data``."""
        return self.apply_arrays(*self.design(data))

    def predict_arrays(self, x: np.ndarray, missing: np.ndarray) -> np.ndarray:
        """Leaf prediction of every row."""
        values = np.array([leaf.prediction for leaf in self.leaves])
        return values[self.apply_arrays(x, missing)]

    def predict(self, data: Dataset) -> np.ndarray:
        """Leaf prediction of every row of ``data``."""
        return self.predict_arrays(*self.design(data))


def _route(
    node: TreeNode, x: np.ndarray, missing: np.ndarray, rows: np.ndarray, out: np.ndarray
) -> None:
    if node.is_leaf or rows.size == 0:
        if node.is_leaf:
            out[rows] = node.leaf_id
        return
    rule = node.rule
    assert rule is not None
    left, right, absent = _partition(rule, x, missing, rows)
    _route(node.children[0], x, missing, left, out)
    _route(node.children[1], x, missing, right, out)
    if rule.missing_branch:
        _route(node.children[2], x, missing, absent, out)


def _partition(
    rule: SplitRule, x: np.ndarray, missing: np.ndarray, rows: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``rows`` into (left, right, missing-branch) row positions."""
    j = rule.variable
    observed = ~missing[rows, j]
    go_left = np.zeros(rows.size, dtype=bool)
    go_left[observed] = x[rows[observed], j] <= rule.threshold
    if rule.missing_branch:
        obs_rows = rows[observed]
        return obs_rows[go_left[observed]], obs_rows[~go_left[observed]], rows[~observed]

    pending = ~observed
    for surrogate in rule.surrogates:
        if not pending.any():
            break
        usable = pending & ~missing[rows, surrogate.variable]
        if usable.any():
            go_left[usable] = surrogate.goes_left(x[rows[usable], surrogate.variable])
            pending &= ~usable
    go_left[pending] = rule.default_left
    return rows[go_left], rows[~go_left], rows[:0]


# ----------------------------------------------------------------------
# Impurity and split search
# ----------------------------------------------------------------------


def _impurity(wy: np.ndarray, wyy: np.ndarray, w: np.ndarray, regression: bool) -> np.ndarray:
    """Absolute weighted impurity from sufficient statistics."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if regression:
            value = wyy - np.where(w > 0, wy * wy / w, 0.0)
        else:
            value = np.where(w > 0, 2.0 * wy * (w - wy) / w, 0.0)
    return np.maximum(value, 0.0)


def _node_impurity(y: np.ndarray, w: np.ndarray, regression: bool) -> float:
    sw, swy, swyy = w.sum(), np.dot(w, y), np.dot(w, y * y)
    return float(_impurity(np.array(swy), np.array(swyy), np.array(sw), regression))


def _better(candidate: float, incumbent: float) -> bool:
    return candidate > incumbent + _TIE_TOL * max(1.0, abs(incumbent))


def best_split_for_variable(
    xj: np.ndarray, y: np.ndarray, w: np.ndarray, min_bucket: int, regression: bool
) -> Optional[Tuple[float, float]]:
    """
    Best (improvement, threshold) for one fully observed predictor vector.

    Candidates are midpoints between consecutive distinct values; both
    sides must hold at least ``min_bucket`` rows. Ties go to the lowest
    threshold. Returns None when no admissible candidate exists.
    """
    m = xj.size
    if m < 2 * min_bucket:
        return None
    order = np.argsort(xj, kind="mergesort")
    xs, ys, ws = xj[order], y[order], w[order]
    cw = np.cumsum(ws)
    cwy = np.cumsum(ws * ys)
    cwyy = np.cumsum(ws * ys * ys)
    total = _impurity(cwy[-1:], cwyy[-1:], cw[-1:], regression)[0]

    # split after position i puts rows 0..i on the left
    positions = np.arange(m - 1)
    valid = (xs[:-1] < xs[1:]) & (positions + 1 >= min_bucket) & (m - positions - 1 >= min_bucket)
    if not valid.any():
        return None
    left = _impurity(cwy[:-1], cwyy[:-1], cw[:-1], regression)
    right = _impurity(cwy[-1] - cwy[:-1], cwyy[-1] - cwyy[:-1], cw[-1] - cw[:-1], regression)
    improvement = np.where(valid, total - left - right, -np.inf)
    best = float(np.max(improvement))
    tol = _TIE_TOL * max(1.0, abs(best))
    i = int(np.flatnonzero(improvement >= best - tol)[0])
    return best, float((xs[i] + xs[i + 1]) / 2.0)


def _best_surrogate(
    xk: np.ndarray, primary_left: np.ndarray, w: np.ndarray
) -> Optional[Tuple[float, float, bool]]:
    """Best (agreement, threshold, left_if_le) of one candidate surrogate variable."""
    if xk.size < 2:
        return None
    order = np.argsort(xk, kind="mergesort")
    xs, ls, ws = xk[order], primary_left[order], w[order]
    total = ws.sum()
    if total <= 0:
        return None
    cum_left = np.cumsum(ws * ls)
    cum_w = np.cumsum(ws)
    total_left = cum_left[-1]
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    # x <= c goes left: agree on left rows below c and right rows above c
    agree_le = (cum_left[:-1] + (total - cum_w[:-1]) - (total_left - cum_left[:-1])) / total
    agree = np.maximum(agree_le, 1.0 - agree_le)
    agree = np.where(valid, agree, -np.inf)
    best = float(np.max(agree))
    i = int(np.flatnonzero(agree >= best - _TIE_TOL)[0])
    left_if_le = bool(agree_le[i] >= 1.0 - agree_le[i])
    return best, float((xs[i] + xs[i + 1]) / 2.0), left_if_le


class _Grower:
    """Recursive partitioning over array inputs."""

    def __init__(
        self,
        x: np.ndarray,
        missing: np.ndarray,
        y: np.ndarray,
        w: np.ndarray,
        controls: TreeControls,
        regression: bool,
    ) -> None:
        self.x = x
        self.missing = missing
        self.y = y
        self.w = w
        self.controls = controls
        self.regression = regression
        self.root_impurity = 0.0
        self.threshold = 0.0
        self.leaves: List[TreeNode] = []

    def grow(self) -> TreeNode:
        rows = np.arange(self.y.size)
        self.root_impurity = _node_impurity(self.y, self.w, self.regression)
        self.threshold = self.controls.cp * self.root_impurity
        return self._build(rows, 0, None)

    def _prediction(self, rows: np.ndarray, fallback: Optional[float]) -> Tuple[float, float]:
        weight = float(self.w[rows].sum())
        if weight <= 0:
            return (fallback if fallback is not None else 0.0), weight
        return float(np.dot(self.w[rows], self.y[rows]) / weight), weight

    def _leaf(self, prediction: float, n: int, weight: float, depth: int) -> TreeNode:
        leaf = TreeNode(prediction, n, weight, depth, leaf_id=len(self.leaves))
        self.leaves.append(leaf)
        return leaf

    def _is_pure(self, rows: np.ndarray) -> bool:
        yr = self.y[rows]
        return bool(np.all(yr == yr[0]))

    def _find_split(self, rows: np.ndarray) -> Optional[Tuple[int, float, float]]:
        best: Optional[Tuple[int, float, float]] = None
        for j in range(self.x.shape[1]):
            observed = rows[~self.missing[rows, j]]
            found = best_split_for_variable(
                self.x[observed, j],
                self.y[observed],
                self.w[observed],
                self.controls.min_bucket,
                self.regression,
            )
            if found is None:
                continue
            improvement, threshold = found
            if best is None or _better(improvement, best[2]):
                best = (j, threshold, improvement)
        return best

    def _surrogates(
        self, rows: np.ndarray, variable: int, threshold: float, default_left: bool
    ) -> Tuple[Surrogate, ...]:
        if self.controls.max_surrogates == 0:
            return ()
        primary_obs = rows[~self.missing[rows, variable]]
        primary_left = self.x[primary_obs, variable] <= threshold
        found: List[Surrogate] = []
        for k in range(self.x.shape[1]):
            if k == variable:
                continue
            both = ~self.missing[primary_obs, k]
            if both.sum() < 2:
                continue
            w_both = self.w[primary_obs[both]]
            total = w_both.sum()
            if total <= 0:
                continue
            left_both = primary_left[both]
            baseline_weight = w_both[left_both].sum() if default_left else w_both[~left_both].sum()
            baseline = float(baseline_weight / total)
            result = _best_surrogate(self.x[primary_obs[both], k], left_both, w_both)
            if result is None:
                continue
            agreement, surrogate_threshold, left_if_le = result
            if agreement > baseline + _TIE_TOL:
                found.append(Surrogate(k, surrogate_threshold, left_if_le, agreement, baseline))
        found.sort(key=lambda s: (-s.agreement, s.variable))
        return tuple(found[: self.controls.max_surrogates])

    def _build(self, rows: np.ndarray, depth: int, fallback: Optional[float]) -> TreeNode:
        prediction, weight = self._prediction(rows, fallback)
        n = int(rows.size)
        controls = self.controls
        if (
            n == 0
            or n < controls.min_split
            or depth >= controls.max_depth
            or self._is_pure(rows)
        ):
            return self._leaf(prediction, n, weight, depth)

        split = self._find_split(rows)
        if split is None:
            return self._leaf(prediction, n, weight, depth)
        variable, threshold, improvement = split
        if improvement <= _TIE_TOL * max(1.0, self.root_impurity) or improvement < self.threshold:
            return self._leaf(prediction, n, weight, depth)

        observed = ~self.missing[rows, variable]
        obs_rows = rows[observed]
        n_left = int(np.sum(self.x[obs_rows, variable] <= threshold))
        default_left = n_left >= obs_rows.size - n_left
        branch = controls.missing_mode == MissingMode.BRANCH
        surrogates = () if branch else self._surrogates(rows, variable, threshold, default_left)
        rule = SplitRule(
            variable=variable,
            threshold=threshold,
            improvement=improvement,
            surrogates=surrogates,
            default_left=default_left,
            missing_branch=branch,
        )
        left, right, absent = _partition(rule, self.x, self.missing, rows)
        logger.debug(
            f"depth {depth}: split var {variable} at {threshold:.4g} "
            f"(improvement {improvement:.4g}, n {len(left)}/{len(right)}/{len(absent)})"
        )

        # children must be built in pre-order so leaf ids follow the tree layout
        children = [
            self._build(left, depth + 1, prediction),
            self._build(right, depth + 1, prediction),
        ]
        if branch:
            children.append(self._build(absent, depth + 1, prediction))
        return TreeNode(prediction, n, weight, depth, rule, tuple(children))


def fit_tree_arrays(
    x: np.ndarray,
    missing: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    controls: Optional[TreeControls] = None,
    regression: bool = False,
    predictors: Optional[Sequence[str]] = None,
) -> FittedTree:
    """
    Grow a tree from arrays.

    Args:
        x: n x p predictor matrix (values under ``missing`` are ignored)
        missing: n x p boolean mask, True where a cell is missing
        y: Fully observed target (0/1 unless ``regression``)
        weights: Non-negative per-row weights (unit if None)
        controls: Growth controls (rpart defaults if None)
        regression: Sum-of-squares tree on a real target
        predictors: Column names for ``x`` (generated if None)

    Returns:
        FittedTree

    Raises:
        InvalidWeightsError: Negative, non-finite or zero-sum weights
        TargetNotBinaryError: Non-0/1 target in classification mode
    """
    controls = controls or TreeControls()
    x = np.asarray(x, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or x.shape != missing.shape or x.shape[0] != y.size or w.shape != y.shape:
        raise SchemaError("Predictor, mask, target and weight shapes disagree")
    if not np.all(np.isfinite(w)) or (w < 0).any() or w.sum() <= 0:
        raise InvalidWeightsError("Tree weights must be finite, non-negative and sum > 0")
    if not np.all(np.isfinite(y)):
        raise SchemaError("Tree target must be fully observed")
    if not regression and not np.isin(y, (0.0, 1.0)).all():
        raise TargetNotBinaryError("Classification tree target must be 0/1")
    names = tuple(predictors) if predictors is not None else tuple(
        f"x{j}" for j in range(x.shape[1])
    )
    if len(names) != x.shape[1]:
        raise SchemaError(f"{len(names)} predictor names for {x.shape[1]} columns")

    grower = _Grower(x, missing, y, w, controls, regression)
    root = grower.grow()
    return FittedTree(root, names, controls, regression, tuple(grower.leaves))


def fit_tree(
    data: Dataset,
    target: str,
    weights: Optional[np.ndarray] = None,
    controls: Optional[TreeControls] = None,
    predictors: Optional[Sequence[str]] = None,
) -> FittedTree:
    """
    Fit a classification tree for a 0/1 column of ``data``.

    Args:
        data: Training data
        target: Name of the fully observed binary target column
        weights: Per-row weights (unit if None)
        controls: Growth controls
        predictors: Predictor columns (covariates of ``data`` if None)

    Returns:
        FittedTree
    """
    return _fit_dataset(data, target, weights, controls, predictors, regression=False)


def fit_regression_tree(
    data: Dataset,
    target: str,
    weights: Optional[np.ndarray] = None,
    controls: Optional[TreeControls] = None,
    predictors: Optional[Sequence[str]] = None,
) -> FittedTree:
    """Fit a sum-of-squares tree; leaves hold the weighted target mean."""
    return _fit_dataset(data, target, weights, controls, predictors, regression=True)


def _fit_dataset(
    data: Dataset,
    target: str,
    weights: Optional[np.ndarray],
    controls: Optional[TreeControls],
    predictors: Optional[Sequence[str]],
    regression: bool,
) -> FittedTree:
    names = list(predictors) if predictors is not None else [
        n for n in data.covariate_names if n != target
    ]
    if target in names:
        raise SchemaError(f"Target '{target}' cannot also be a predictor")
    y = data.require_complete([target])[:, 0]
    idx = [data.index_of(n) for n in names]
    return fit_tree_arrays(
        data.values[:, idx], data.missing[:, idx], y, weights, controls, regression, names
    )


def predict(tree: FittedTree, row: Sequence[float]) -> float:
    """
    Prediction for one row in predictor order; NaN marks a missing value.

    Raises:
        SchemaError: If the row length differs from the predictor count
    """
    x = np.asarray(row, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != len(tree.predictors):
        raise SchemaError(f"Row has {x.shape[1]} values, tree expects {len(tree.predictors)}")
    return float(tree.predict_arrays(x, np.isnan(x))[0])


def format_tree(tree: FittedTree, digits: int = 4) -> str:
    """
    Indented text dump of a fitted tree.

    Example:
        root n=40 pred=0.5
          W1 <= 0.5 n=20 pred=0.1 *
          W1 > 0.5 n=20 pred=0.9 *
    """
    lines = [f"root n={tree.root.n} pred={tree.root.prediction:.{digits}g}"]

    def walk(node: TreeNode, indent: int) -> None:
        if node.rule is None:
            return
        name = tree.predictors[node.rule.variable]
        t = f"{node.rule.threshold:.{digits}g}"
        labels = [f"{name} <= {t}", f"{name} > {t}", f"{name} missing"]
        for label, child in zip(labels, node.children):
            star = " *" if child.is_leaf else ""
            lines.append(
                f"{'  ' * indent}{label} n={child.n} pred={child.prediction:.{digits}g}{star}"
            )
            walk(child, indent + 1)

    walk(tree.root, 1)
    return "\n".join(lines)
