"""
Tests for the CART module.
"""

import sys
import os

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np
import pytest

from cart import (
    MissingMode,
    TreeControls,
    best_split_for_variable,
    fit_regression_tree,
    fit_tree,
    fit_tree_arrays,
    format_tree,
    predict,
)
from exceptions import InvalidWeightsError, SchemaError, TargetNotBinaryError
from models import ColumnKind, ColumnMeta, ColumnRole, Dataset

NAN = np.nan


def gini(y: np.ndarray, w: np.ndarray) -> float:
    total = w.sum()
    if total <= 0:
        return 0.0
    p = np.dot(w, y) / total
    return 2.0 * total * p * (1.0 - p)


def brute_force_split(x, y, w, min_bucket):
    best = None
    values = np.unique(x)
    root = gini(y, w)
    for lo, hi in zip(values[:-1], values[1:]):
        threshold = (lo + hi) / 2.0
        left = x <= threshold
        if left.sum() < min_bucket or (~left).sum() < min_bucket:
            continue
        improvement = root - gini(y[left], w[left]) - gini(y[~left], w[~left])
        if best is None or improvement > best[0]:
            best = (improvement, threshold)
    return best


def brute_force_root(x, y):
    """Best (variable, threshold, improvement) over every variable and midpoint, or None."""
    root = gini(y, np.ones_like(y))
    candidates = []
    for j in range(x.shape[1]):
        values = np.unique(x[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = (lo + hi) / 2.0
            left = x[:, j] <= threshold
            ones_l, ones_r = np.ones(left.sum()), np.ones((~left).sum())
            improvement = root - gini(y[left], ones_l) - gini(y[~left], ones_r)
            candidates.append((j, threshold, improvement))
    if not candidates:
        return None
    best = max(c[2] for c in candidates)
    if best <= 1e-9:
        return None
    # variables are scanned in order, thresholds in increasing order
    return next(c for c in candidates if c[2] >= best - 1e-9)


def internal_nodes(node):
    if node.is_leaf:
        return
    yield node
    for child in node.children:
        yield from internal_nodes(child)


def noisy_data(n: int = 400, seed: int = 21, missing_rate: float = 0.2):
    """Three correlated predictors with cells missing at random."""
    gen = np.random.default_rng(seed)
    z = gen.normal(size=n)
    x = np.column_stack([z + gen.normal(scale=0.5, size=n) for _ in range(3)])
    y = (gen.uniform(size=n) < 1 / (1 + np.exp(-1.5 * z))).astype(float)
    missing = gen.uniform(size=x.shape) < missing_rate
    x[missing] = NAN
    return x, missing, y


def surrogate_data():
    """x0 determines y; x1 is a noisy copy of x0; x0 is missing in rows 0 and 39."""
    x0 = np.array([0.0] * 20 + [1.0] * 20)
    y = x0.copy()
    x1 = x0.copy()
    x1[[5, 6]] = 1.0
    x1[[25, 26]] = 0.0
    x = np.column_stack([x0, x1])
    missing = np.zeros_like(x, dtype=bool)
    missing[[0, 39], 0] = True
    x[missing] = NAN
    return x, missing, y


class TestBestSplit:
    """Tests for the single-variable split search."""

    def test_matches_exhaustive_search(self):
        """The split search should agree with brute force over all thresholds."""
        gen = np.random.default_rng(12)
        for _ in range(20):
            n = int(gen.integers(20, 60))
            x = gen.normal(size=n)
            y = (gen.uniform(size=n) < 0.3 + 0.4 * (x > 0)).astype(float)
            w = gen.uniform(0.5, 2.0, size=n)
            found = best_split_for_variable(x, y, w, 5, regression=False)
            expected = brute_force_split(x, y, w, 5)
            if expected is None:
                assert found is None
                continue
            assert found[0] == pytest.approx(expected[0], rel=1e-9, abs=1e-12)
            assert found[1] == expected[1]

    def test_constant_predictor(self):
        """A constant predictor has no admissible split."""
        x = np.ones(30)
        y = np.r_[np.zeros(15), np.ones(15)]
        assert best_split_for_variable(x, y, np.ones(30), 5, regression=False) is None

    def test_min_bucket_excludes_edges(self):
        """Splits leaving fewer than min_bucket rows on a side are skipped."""
        x = np.arange(10, dtype=float)
        y = np.array([1.0] + [0.0] * 9)
        _, threshold = best_split_for_variable(x, y, np.ones(10), 3, regression=False)
        assert threshold >= 2.5


class TestRootSplit:
    """Tests for the root split chosen by fit_tree."""

    def test_root_split_matches_enumeration(self):
        """The root split agrees with enumerating every variable and threshold."""
        gen = np.random.default_rng(31)
        controls = TreeControls(min_split=2, min_bucket=1, cp=0.0, max_depth=1, max_surrogates=0)
        for _ in range(200):
            n = int(gen.integers(2, 13))
            p = int(gen.integers(1, 4))
            x = gen.integers(0, 4, size=(n, p)).astype(float)
            y = gen.integers(0, 2, size=n).astype(float)
            columns = [ColumnMeta(f"W{j + 1}", ColumnKind.CONTINUOUS) for j in range(p)]
            columns.append(ColumnMeta("A", ColumnKind.BINARY, ColumnRole.EXPOSURE))
            data = Dataset(columns, np.column_stack([x, y]))
            tree = fit_tree(data, "A", controls=controls)
            expected = brute_force_root(x, y)
            if expected is None:
                assert tree.root.is_leaf
                continue
            variable, threshold, improvement = expected
            assert tree.root.rule.variable == variable
            assert tree.root.rule.threshold == threshold
            assert tree.root.rule.improvement == pytest.approx(improvement, abs=1e-9)

    def test_tie_goes_to_first_variable(self):
        """Two identical predictors split on the first."""
        x = np.array([0.0] * 6 + [1.0] * 6)
        columns = [
            ColumnMeta("W1", ColumnKind.BINARY),
            ColumnMeta("W2", ColumnKind.BINARY),
            ColumnMeta("A", ColumnKind.BINARY, ColumnRole.EXPOSURE),
        ]
        data = Dataset(columns, np.column_stack([x, x, x]))
        tree = fit_tree(data, "A", controls=TreeControls(min_split=2, min_bucket=1))
        assert tree.root.rule.variable == 0


class TestTreeInvariants:
    """Properties every grown tree satisfies."""

    def test_leaf_means_average_to_target_mean(self):
        """Leaf predictions weighted by leaf size average to the target mean."""
        x, missing, y = noisy_data()
        tree = fit_tree_arrays(x, missing, y, controls=TreeControls(cp=0.0))
        total = sum(leaf.n * leaf.prediction for leaf in tree.leaves)
        assert sum(leaf.n for leaf in tree.leaves) == y.size
        assert total / y.size == pytest.approx(y.mean(), abs=1e-10)

    def test_weighted_leaf_means(self):
        """With case weights the leaf weights average to the weighted mean."""
        x, missing, y = noisy_data(seed=22)
        w = np.random.default_rng(23).uniform(0.2, 3.0, size=y.size)
        tree = fit_tree_arrays(x, missing, y, w, controls=TreeControls(cp=0.0))
        total = sum(leaf.weight * leaf.prediction for leaf in tree.leaves)
        assert total / w.sum() == pytest.approx(np.dot(w, y) / w.sum(), abs=1e-10)

    @pytest.mark.parametrize("cp", [0.0, 0.005, 0.02])
    def test_splits_clear_complexity_threshold(self, cp):
        """Every split improves impurity by at least cp times the root impurity."""
        x, missing, y = noisy_data(seed=24)
        tree = fit_tree_arrays(x, missing, y, controls=TreeControls(cp=cp))
        floor = cp * gini(y, np.ones_like(y))
        nodes = list(internal_nodes(tree.root))
        assert nodes
        for node in nodes:
            assert node.rule.improvement >= floor

    def test_surrogates_beat_majority_rule(self):
        """Stored surrogates agree with the primary split more often than the majority rule."""
        x, missing, y = noisy_data(seed=25, missing_rate=0.3)
        tree = fit_tree_arrays(x, missing, y, controls=TreeControls(cp=0.0))
        surrogates = [s for node in internal_nodes(tree.root) for s in node.rule.surrogates]
        assert surrogates
        for surrogate in surrogates:
            assert surrogate.agreement >= surrogate.baseline

    def test_branch_mode_routes_each_row_once(self):
        """In branch mode every training row lands in exactly one leaf."""
        x, missing, y = noisy_data(seed=26, missing_rate=0.3)
        controls = TreeControls(cp=0.0, missing_mode=MissingMode.BRANCH)
        tree = fit_tree_arrays(x, missing, y, controls=controls)
        leaf_ids = tree.apply_arrays(x, missing)
        assert ((leaf_ids >= 0) & (leaf_ids < tree.n_leaves)).all()
        counts = np.bincount(leaf_ids, minlength=tree.n_leaves)
        assert counts.tolist() == [leaf.n for leaf in tree.leaves]


class TestClassificationTree:
    """Tests for classification tree growth."""

    def test_perfect_split(self):
        """A predictor equal to the target should give two pure leaves."""
        x = np.array([[0.0]] * 20 + [[1.0]] * 20)
        y = x[:, 0].copy()
        tree = fit_tree_arrays(x, np.zeros_like(x, dtype=bool), y)
        assert tree.n_leaves == 2
        assert tree.root.rule.threshold == 0.5
        assert [leaf.prediction for leaf in tree.leaves] == [0.0, 1.0]

    def test_leaf_ids_in_preorder(self):
        """leaves[k] should carry leaf id k."""
        gen = np.random.default_rng(1)
        x = gen.normal(size=(200, 3))
        y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
        tree = fit_tree_arrays(x, np.zeros_like(x, dtype=bool), y)
        assert tree.n_leaves > 2
        assert [leaf.leaf_id for leaf in tree.leaves] == list(range(tree.n_leaves))

    def test_min_bucket_respected(self):
        """With complete data no leaf should hold fewer than min_bucket rows."""
        gen = np.random.default_rng(2)
        x = gen.normal(size=(300, 2))
        y = (gen.uniform(size=300) < 1 / (1 + np.exp(-2 * x[:, 0]))).astype(float)
        controls = TreeControls(min_split=20, min_bucket=7, cp=0.0)
        tree = fit_tree_arrays(x, np.zeros_like(x, dtype=bool), y, controls=controls)
        assert min(leaf.n for leaf in tree.leaves) >= 7

    def test_large_cp_stops_at_root(self):
        """cp = 1 should keep a noisy problem as a single leaf."""
        gen = np.random.default_rng(4)
        x = gen.normal(size=(100, 2))
        y = (gen.uniform(size=100) < 0.5).astype(float)
        tree = fit_tree_arrays(
            x, np.zeros_like(x, dtype=bool), y, controls=TreeControls(cp=1.0)
        )
        assert tree.root.is_leaf
        assert tree.root.prediction == pytest.approx(y.mean())

    def test_depth_zero(self):
        """max_depth = 0 keeps the root as the only leaf."""
        x = np.array([[0.0]] * 20 + [[1.0]] * 20)
        tree = fit_tree_arrays(
            x, np.zeros_like(x, dtype=bool), x[:, 0], controls=TreeControls(max_depth=0)
        )
        assert tree.n_leaves == 1

    def test_non_binary_target(self):
        """Classification targets must be 0/1."""
        x = np.zeros((4, 1))
        with pytest.raises(TargetNotBinaryError):
            fit_tree_arrays(x, np.zeros_like(x, dtype=bool), np.array([0, 1, 2, 1.0]))

    def test_zero_weights(self):
        """All-zero weights should be rejected."""
        x = np.zeros((4, 1))
        with pytest.raises(InvalidWeightsError):
            fit_tree_arrays(x, np.zeros_like(x, dtype=bool), np.zeros(4), np.zeros(4))

    def test_controls_validation(self):
        """min_bucket larger than min_split is invalid."""
        with pytest.raises(ValueError):
            TreeControls(min_split=5, min_bucket=6)


class TestSurrogates:
    """Tests for surrogate routing of missing values."""

    def test_primary_split_on_observed_rows(self):
        """x0 separates the observed rows perfectly and is chosen first."""
        x, missing, y = surrogate_data()
        tree = fit_tree_arrays(x, missing, y)
        assert tree.root.rule.variable == 0

    def test_surrogate_agreement(self):
        """x1 agrees with the primary split on 34 of 38 rows."""
        x, missing, y = surrogate_data()
        tree = fit_tree_arrays(x, missing, y)
        surrogate = tree.root.rule.surrogates[0]
        assert surrogate.variable == 1
        assert surrogate.agreement == pytest.approx(34 / 38)
        assert surrogate.baseline == pytest.approx(0.5)

    def test_missing_rows_follow_surrogate(self):
        """Rows missing x0 should be routed by x1."""
        x, missing, y = surrogate_data()
        tree = fit_tree_arrays(x, missing, y)
        assert predict(tree, [NAN, 0.0]) == 0.0
        assert predict(tree, [NAN, 1.0]) == 1.0
        np.testing.assert_array_equal(tree.predict_arrays(x, missing), y)

    def test_majority_direction_when_all_missing(self):
        """Rows with no usable surrogate follow the majority (left on ties)."""
        x, missing, y = surrogate_data()
        tree = fit_tree_arrays(x, missing, y)
        assert tree.root.rule.default_left
        assert predict(tree, [NAN, NAN]) == 0.0


class TestMissingBranch:
    """Tests for the three-way missing-branch mode."""

    def test_third_child(self):
        """Rows missing the split variable should go to their own child."""
        x, missing, y = surrogate_data()
        controls = TreeControls(missing_mode=MissingMode.BRANCH)
        tree = fit_tree_arrays(x, missing, y, controls=controls)
        assert len(tree.root.children) == 3
        assert tree.root.children[2].n == 2
        assert predict(tree, [NAN, 0.0]) == pytest.approx(0.5)
        assert tree.root.rule.surrogates == ()


class TestRegressionTree:
    """Tests for sum-of-squares trees."""

    def test_leaf_means(self):
        """Leaves should hold the target mean of each side."""
        columns = [
            ColumnMeta("W1", ColumnKind.CONTINUOUS),
            ColumnMeta("A", ColumnKind.BINARY, ColumnRole.EXPOSURE),
            ColumnMeta("R", ColumnKind.CONTINUOUS, ColumnRole.AUXILIARY),
        ]
        w1 = np.r_[np.zeros(20), np.ones(20)]
        r = np.where(w1 > 0.5, -1.0, 3.0)
        data = Dataset(columns, np.column_stack([w1, np.zeros(40), r]))
        tree = fit_regression_tree(data, "R", predictors=["W1"])
        assert sorted(leaf.prediction for leaf in tree.leaves) == [-1.0, 3.0]


class TestDatasetInterface:
    """Tests for fitting and predicting from Dataset objects."""

    def make_data(self) -> Dataset:
        columns = [
            ColumnMeta("W1", ColumnKind.BINARY),
            ColumnMeta("W2", ColumnKind.CONTINUOUS),
            ColumnMeta("A", ColumnKind.BINARY, ColumnRole.EXPOSURE),
        ]
        w1 = np.r_[np.zeros(25), np.ones(25)]
        w2 = np.linspace(-1.0, 1.0, 50)
        return Dataset(columns, np.column_stack([w1, w2, w1]))

    def test_fit_tree_on_exposure(self):
        """The covariates of the dataset are the default predictors."""
        tree = fit_tree(self.make_data(), "A")
        assert tree.predictors == ("W1", "W2")
        np.testing.assert_array_equal(tree.predict(self.make_data()), self.make_data().column("A"))

    def test_target_as_predictor(self):
        """The target cannot also be a predictor."""
        with pytest.raises(SchemaError):
            fit_tree(self.make_data(), "A", predictors=["W1", "A"])

    def test_predict_row_length(self):
        """A row of the wrong length should raise SchemaError."""
        tree = fit_tree(self.make_data(), "A")
        with pytest.raises(SchemaError):
            predict(tree, [1.0])

    def test_format_tree(self):
        """The text dump names the split variable and marks leaves."""
        text = format_tree(fit_tree(self.make_data(), "A"))
        assert text.startswith("root n=50")
        assert "<= 0.5" in text
        assert "*" in text
