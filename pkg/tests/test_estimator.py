import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from embedood.estimator import MultiEmbeddingClassifier, SoftmaxClassifier

from test_decoder import random_codebook
from test_model import separable_toy


@pytest.fixture(scope="module")
def fitted():
    cb = random_codebook(2, 2, 4, seed=0)
    X, y = separable_toy(n_per_class=40)
    clf = MultiEmbeddingClassifier(codebook=cb, trunk=(8,), epochs=40, seed=0)
    return clf.fit(X, y), cb, X, y


class TestMultiEmbeddingClassifier:
    def test_get_params_round_trip(self):
        cb = random_codebook(2, 2, 4, seed=0)
        clf = MultiEmbeddingClassifier(codebook=cb, epochs=3, lr=0.01)
        params = clf.get_params()
        assert params["epochs"] == 3
        assert params["lr"] == 0.01
        cloned = clone(clf)
        assert cloned.get_params()["lr"] == 0.01
        assert not hasattr(cloned, "model_")

    def test_unfitted_predict_raises(self):
        cb = random_codebook(2, 2, 4, seed=0)
        with pytest.raises(NotFittedError):
            MultiEmbeddingClassifier(codebook=cb).predict(np.zeros((1, 4)))

    def test_missing_codebook(self):
        X, y = separable_toy(n_per_class=3)
        with pytest.raises(ValueError, match="codebook"):
            MultiEmbeddingClassifier().fit(X, y)

    def test_labels_outside_codebook(self):
        cb = random_codebook(2, 2, 4, seed=0)
        X, _ = separable_toy(n_per_class=3)
        with pytest.raises(ValueError):
            MultiEmbeddingClassifier(codebook=cb).fit(X, np.full(6, 5))

    def test_fit_predict_accuracy(self, fitted):
        clf, _, X, y = fitted
        assert clf.score(X, y) >= 0.95

    def test_score_samples_positive(self, fitted):
        clf, _, X, _ = fitted
        scores = clf.score_samples(X)
        assert scores.shape == (X.shape[0],)
        assert np.all(scores > 0)

    def test_threshold_calibration(self, fitted):
        clf, _, X, _ = fitted
        alpha = clf.fit_threshold(X, tpr=0.95)
        assert clf.alpha_ == alpha
        kept = np.sum(clf.score_samples(X) >= alpha)
        assert kept == int(np.ceil(0.95 * X.shape[0]))

    def test_rejection_marks_minus_one(self, fitted):
        clf, _, X, _ = fitted
        clf.fit_threshold(X)
        # tiny inputs land far from the training clusters -> low norms
        weird = np.full((5, 3), 0.0)
        out = clf.predict_with_rejection(np.vstack([X[:5], weird]))
        assert set(np.unique(out)) <= {-1, 0, 1}

    def test_explicit_alpha_overrides(self, fitted):
        clf, _, X, _ = fitted
        everything_rejected = clf.predict_with_rejection(X, alpha=np.inf)
        assert np.all(everything_rejected == -1)
        nothing_rejected = clf.predict_with_rejection(X, alpha=0.0)
        assert np.all(nothing_rejected >= 0)

    def test_seed_determinism(self):
        cb = random_codebook(2, 2, 4, seed=1)
        X, y = separable_toy(n_per_class=10)
        a = MultiEmbeddingClassifier(codebook=cb, epochs=3, seed=5).fit(X, y)
        b = MultiEmbeddingClassifier(codebook=cb, epochs=3, seed=5).fit(X, y)
        assert a.score_samples(X).tobytes() == b.score_samples(X).tobytes()


class TestSoftmaxClassifier:
    def test_fit_predict(self):
        X, y = separable_toy(n_per_class=30)
        clf = SoftmaxClassifier(n_classes=2, trunk=(8,), epochs=30, seed=0).fit(X, y)
        assert clf.score(X, y) >= 0.95

    def test_predict_proba_rows_sum_to_one(self):
        X, y = separable_toy(n_per_class=10)
        clf = SoftmaxClassifier(n_classes=2, epochs=2, seed=0).fit(X, y)
        probs = clf.predict_proba(X)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs >= 0)

    def test_score_samples_is_max_probability(self):
        X, y = separable_toy(n_per_class=10)
        clf = SoftmaxClassifier(n_classes=2, epochs=2, seed=0).fit(X, y)
        np.testing.assert_allclose(
            clf.score_samples(X), clf.predict_proba(X).max(axis=1), atol=1e-12
        )

    def test_clone_and_params(self):
        clf = SoftmaxClassifier(n_classes=3, lr=0.2)
        assert clone(clf).get_params()["n_classes"] == 3
