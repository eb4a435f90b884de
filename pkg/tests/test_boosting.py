import numpy as np
import pytest

from wellcast.boosting import (
    GbmEnsemble,
    GbmParams,
    fit_gbm,
    leaf_weight,
    load_gbm,
    predict_gbm,
    predict_gbm_matrix,
    save_gbm,
    split_admissible,
    split_gain,
    training_curve,
)
from wellcast.cart import RegressionTree


def plain_params(**kwargs):
    defaults = dict(
        learning_rate=0.5,
        n_estimators=10,
        max_depth=3,
        subsample=1.0,
        colsample_bytree=1.0,
        min_child_weight=0.0,
        gamma=0.0,
        reg_alpha=0.0,
        reg_lambda=0.0,
        seed=0,
    )
    defaults.update(kwargs)
    return GbmParams(**defaults)


class TestSplitGain:
    def test_zero_gradients_rejected(self):
        p = plain_params(gamma=0.5)
        assert split_gain(0.0, 3.0, 0.0, 4.0, p) == -0.5
        assert not split_admissible(0.0, 3.0, 0.0, 4.0, p)

    def test_hand_evaluation(self):
        p = plain_params(reg_lambda=1.0, gamma=0.0)
        assert split_gain(-2.0, 1.0, 2.0, 1.0, p) == pytest.approx(2.0)

    def test_gamma_flips_admission(self):
        p = plain_params(reg_lambda=1.0, gamma=2.5)
        assert split_gain(-2.0, 1.0, 2.0, 1.0, p) == pytest.approx(-0.5)
        assert not split_admissible(-2.0, 1.0, 2.0, 1.0, p)

    def test_min_child_weight_blocks(self):
        p = plain_params(reg_lambda=1.0, min_child_weight=2.0)
        assert split_gain(-2.0, 1.0, 2.0, 1.0, p) > 0
        assert not split_admissible(-2.0, 1.0, 2.0, 1.0, p)


class TestLeafWeight:
    def test_plain_mean_residual(self):
        p = plain_params()
        assert leaf_weight(-6.0, 3.0, p) == pytest.approx(2.0)

    def test_l1_threshold_zeroes_small_gradients(self):
        p = plain_params(reg_alpha=1.0)
        assert leaf_weight(0.8, 5.0, p) == 0.0
        assert leaf_weight(-1.0, 5.0, p) == 0.0
        assert leaf_weight(1.5, 5.0, p) == pytest.approx(-0.5 / 5.0)

    def test_l2_damping(self):
        p = plain_params(reg_lambda=3.0)
        assert leaf_weight(-4.0, 1.0, p) == pytest.approx(1.0)


class TestFitGbm:
    def test_constant_target_contributes_nothing(self):
        X = np.arange(8.0).reshape(-1, 1)
        y = np.full(8, 4.2)
        m = fit_gbm(X, y, plain_params(gamma=0.1, reg_lambda=1.0, n_estimators=5))
        assert m.base_value == pytest.approx(4.2)
        assert np.array_equal(predict_gbm_matrix(m, X), np.full(8, m.base_value))

    def test_single_stage_exact_fit(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 3.0, 2.0, 5.0])
        m = fit_gbm(X, y, plain_params(learning_rate=1.0, n_estimators=1, max_depth=None))
        assert np.allclose(predict_gbm_matrix(m, X), y, atol=1e-12)

    def test_exact_fit_on_random_distinct_rows(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        m = fit_gbm(X, y, plain_params(learning_rate=1.0, n_estimators=1, max_depth=None))
        assert np.mean((predict_gbm_matrix(m, X) - y) ** 2) < 1e-8

    def test_reference_hyperparameters_accepted(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(500, 6))
        y = X @ rng.normal(size=6) + rng.normal(0, 0.3, size=500)
        m = fit_gbm(X, y, GbmParams(seed=7))  # defaults carry the tuned reference vector
        assert len(m.trees) == 937
        assert np.mean((predict_gbm_matrix(m, X) - y) ** 2) < np.var(y)

    def test_non_finite_target_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            fit_gbm(np.array([[0.0], [1.0]]), [np.inf, 0.0], plain_params())

    def test_min_child_weight_bounds_leaf_counts(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 2))
        y = rng.normal(size=60)
        m = fit_gbm(X, y, plain_params(min_child_weight=5.0, n_estimators=8))
        for tree in m.trees:
            leaf_counts = tree.count[tree.feature < 0]
            assert leaf_counts.min() >= 5

    def test_determinism(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 4))
        y = rng.normal(size=50)
        p = plain_params(subsample=0.7, colsample_bytree=0.6, n_estimators=6, seed=13)
        probes = rng.normal(size=(12, 4))
        a = predict_gbm_matrix(fit_gbm(X, y, p), probes)
        b = predict_gbm_matrix(fit_gbm(X, y, p), probes)
        assert np.array_equal(a, b)

    def test_subsample_records_kept(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(20, 4))
        y = rng.normal(size=20)
        m = fit_gbm(X, y, plain_params(subsample=0.5, colsample_bytree=0.5, n_estimators=3))
        assert all(len(r) == 10 for r in m.stage_rows)  # ceil(0.5 * 20)
        assert all(len(c) == 2 for c in m.stage_cols)  # ceil(0.5 * 4)


class TestMonotoneLoss:
    @pytest.mark.parametrize("lr", [0.1, 1.0])
    def test_training_mse_non_increasing(self, lr):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            X = rng.normal(size=(30, 3))
            y = rng.normal(size=30)
            p = plain_params(
                learning_rate=lr, n_estimators=40, max_depth=2,
                reg_lambda=1.0, gamma=0.05, reg_alpha=0.1, min_child_weight=1.0,
            )
            curve = training_curve(X, y, p)
            assert all(a >= b - 1e-12 for a, b in zip(curve, curve[1:]))

    def test_alpha_dominating_gradients_freezes_model(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 2))
        y = rng.normal(size=20) * 1e-3
        m = fit_gbm(X, y, plain_params(reg_alpha=1e6, n_estimators=4))
        assert np.array_equal(predict_gbm_matrix(m, X), np.full(20, m.base_value))


def route_weight(tree: RegressionTree, x: np.ndarray) -> float:
    """Independent node-array walker for the replay oracle."""
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return float(tree.value[node])


class TestPredictGbm:
    def test_zero_stages_returns_base(self):
        m = GbmEnsemble(base_value=5.5, learning_rate=0.3, n_features=2)
        assert predict_gbm(m, [0.0, 0.0]) == 5.5
        assert predict_gbm(m, [9.0, -9.0]) == 5.5

    def test_one_stage_two_leaves(self):
        tree = RegressionTree(
            1,
            np.array([0, -1, -1], dtype=np.int32),
            np.array([0.0, 0.0, 0.0]),
            np.array([1, -1, -1], dtype=np.int32),
            np.array([2, -1, -1], dtype=np.int32),
            np.array([0.0, -1.0, 1.0]),
            np.array([4, 2, 2]),
        )
        m = GbmEnsemble(base_value=10.0, learning_rate=0.5, trees=[tree], n_features=1)
        assert predict_gbm(m, [-1.0]) == 9.5
        assert predict_gbm(m, [1.0]) == 10.5

    def test_matches_replay_oracle(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        m = fit_gbm(X, y, plain_params(subsample=0.8, n_estimators=12, reg_lambda=1.0))
        for x in rng.normal(size=(20, 3)):
            replay = m.base_value + m.learning_rate * sum(route_weight(t, x) for t in m.trees)
            assert predict_gbm(m, x) == pytest.approx(replay, abs=1e-12)

    def test_dimension_mismatch(self):
        m = GbmEnsemble(base_value=0.0, learning_rate=0.1, n_features=2)
        with pytest.raises(ValueError):
            predict_gbm(m, [1.0])


class TestGbmSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        m = fit_gbm(X, y, plain_params(n_estimators=5, reg_lambda=1.0))
        path = tmp_path / "gbm.json"
        save_gbm(m, path)
        back = load_gbm(path)
        probes = rng.normal(size=(10, 2))
        assert np.array_equal(predict_gbm_matrix(back, probes), predict_gbm_matrix(m, probes))
        assert back.base_value == m.base_value


class TestGbmParamsValidation:
    def test_bounds(self):
        with pytest.raises(ValueError):
            GbmParams(learning_rate=0.0)
        with pytest.raises(ValueError):
            GbmParams(subsample=1.2)
        with pytest.raises(ValueError):
            GbmParams(gamma=-0.1)
        with pytest.raises(ValueError):
            GbmParams(max_depth=0)
