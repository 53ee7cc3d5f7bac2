import numpy as np
import pytest
from sklearn.base import clone

from imexreg.estimator import ContinualClassifier
from imexreg.streams import make_class_il_stream, make_gaussian_dataset


@pytest.fixture(scope="module")
def stream():
    ds = make_gaussian_dataset(num_classes=6, dim=5, train_per_class=20,
                               test_per_class=10, seed=2)
    return make_class_il_stream(ds, 3, 2)


def small_clf(**overrides):
    params = dict(method="imex-reg", epochs=2, buffer_size=12,
                  encoder_widths=(12, 8), proj_head_widths=(8, 8, 6),
                  clf_proj_widths=(6, 4), ema_decay=0.9, ema_update_rate=0.5,
                  random_state=0)
    params.update(overrides)
    return ContinualClassifier(**params)


class TestSklearnContract:
    def test_get_set_params_roundtrip(self):
        clf = small_clf()
        params = clf.get_params()
        assert params["method"] == "imex-reg"
        assert params["buffer_size"] == 12
        clf.set_params(lr=0.5, method="er")
        assert clf.lr == 0.5 and clf.method == "er"

    def test_clone_preserves_params(self):
        clf = small_clf(lam=0.7)
        twin = clone(clf)
        assert twin.get_params() == clf.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            small_clf().predict(np.zeros((2, 5)))


class TestFitOnStream:
    def test_fit_sets_learned_attributes(self, stream):
        clf = small_clf().fit(stream)
        assert clf.accuracy_matrix_.values.shape == (3, 3)
        assert clf.classes_.tolist() == list(range(6))
        assert clf.n_features_in_ == 5
        assert clf.task_classes_ == [(0, 1), (2, 3), (4, 5)]

    def test_predict_and_proba(self, stream):
        clf = small_clf().fit(stream)
        x = stream.tasks[0].x_test
        pred = clf.predict(x)
        assert pred.shape == (x.shape[0],)
        assert set(pred.tolist()) <= set(range(6))
        proba = clf.predict_proba(x)
        assert proba.shape == (x.shape[0], 6)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(proba.argmax(axis=1), pred)

    def test_task_restricted_predict(self, stream):
        clf = small_clf().fit(stream)
        pred = clf.predict(stream.tasks[1].x_test, task_id=1)
        assert set(pred.tolist()) <= {2, 3}

    def test_score_is_accuracy(self, stream):
        clf = small_clf().fit(stream)
        task = stream.tasks[2]
        expected = (clf.predict(task.x_test) == task.y_test).mean()
        assert clf.score(task.x_test, task.y_test) == pytest.approx(expected)

    def test_evaluate_stream_matches_matrix_final_row(self, stream):
        clf = small_clf().fit(stream)
        per_task = clf.evaluate_stream("class-il")
        np.testing.assert_allclose(per_task, clf.accuracy_matrix_.values[-1], atol=1e-12)

    def test_deterministic_under_random_state(self, stream):
        a = small_clf(random_state=7).fit(stream)
        b = small_clf(random_state=7).fit(stream)
        np.testing.assert_array_equal(a.accuracy_matrix_.values, b.accuracy_matrix_.values)

    def test_preset_overrides_optimization_params(self, stream):
        clf = small_clf(preset="desk-gaussian", lr=123.0, epochs=1)
        config = clf.build_config(stream)
        assert config.lr == 0.05 and config.epochs == 5
        assert config.buffer_size == 50

    def test_unknown_preset(self, stream):
        with pytest.raises(KeyError, match="unknown preset"):
            small_clf(preset="warp-speed").fit(stream)


class TestFitOnArrays:
    def test_single_task_fit(self):
        rng = np.random.default_rng(3)
        x = np.concatenate([rng.normal(size=(30, 4)) + 3, rng.normal(size=(30, 4)) - 3])
        y = np.array([0] * 30 + [1] * 30)
        clf = small_clf(method="er", epochs=3).fit(x, y)
        assert clf.accuracy_matrix_.values.shape == (1, 1)
        assert clf.score(x, y) > 0.9

    def test_input_validation(self):
        clf = small_clf()
        with pytest.raises(ValueError, match="NaN"):
            clf.fit(np.array([[np.nan, 1.0]]), np.array([0]))
        with pytest.raises(ValueError, match="integer"):
            clf.fit(np.ones((2, 3)), np.array([0.5, 1.0]))
        with pytest.raises(ValueError, match="negative"):
            clf.fit(np.ones((2, 3)), np.array([-1, 0]))

    def test_predict_dimension_check(self, stream):
        clf = small_clf().fit(stream)
        with pytest.raises(ValueError, match="features"):
            clf.predict(np.zeros((2, 9)))
