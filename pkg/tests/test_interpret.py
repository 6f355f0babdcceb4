import numpy as np
import pytest

from stylus import classifier, interpret
from stylus.classifier import LRConfig, LRModel


def identity_model(d, labels=("a", "b")):
    """Model whose score for class i is feature i."""
    W = np.zeros((len(labels), d))
    for i in range(len(labels)):
        W[i, i] = 10.0
    return LRModel(W=W, b=np.zeros(len(labels)), class_labels=labels,
                   config=LRConfig())


class TestPermutationImportance:
    def _planted(self, rng, n=200, noise_cols=4):
        signal = rng.normal(size=n)
        y = ["a" if s > 0 else "b" for s in signal]
        X = np.column_stack([signal, -signal]
                            + [rng.normal(size=n) for _ in range(noise_cols)])
        model = identity_model(X.shape[1])
        return model, X, y

    def test_signal_group_hurts_noise_group_does_not(self):
        rng = np.random.default_rng(0)
        model, X, y = self._planted(rng)
        signal = interpret.permutation_importance(model, X, y, [0, 1],
                                                  n_iter=100, seed=0,
                                                  group="signal")
        noise = interpret.permutation_importance(model, X, y, [2, 3],
                                                 n_iter=100, seed=0,
                                                 group="noise")
        assert signal.mean_accuracy_loss > 0.3
        assert abs(noise.mean_accuracy_loss) <= 0.02

    def test_shared_permutation_within_group(self):
        # class score depends only on the difference of two equal columns;
        # one shared row permutation keeps that difference at zero
        rng = np.random.default_rng(1)
        col = rng.normal(size=50)
        X = np.column_stack([col, col])
        y = ["a"] * 50
        W = np.array([[1.0, -1.0], [-1.0, 1.0]])
        model = LRModel(W=W, b=np.array([1.0, 0.0]),
                        class_labels=("a", "b"), config=LRConfig())
        report = interpret.permutation_importance(model, X, y, [0, 1],
                                                  n_iter=50, seed=2)
        assert report.mean_accuracy_loss == 0.0

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        model, X, y = self._planted(rng)
        r1 = interpret.permutation_importance(model, X, y, [0, 1], 20, 5, "g")
        r2 = interpret.permutation_importance(model, X, y, [0, 1], 20, 5, "g")
        assert r1 == r2

    def test_empty_group_zero_loss(self):
        rng = np.random.default_rng(4)
        model, X, y = self._planted(rng)
        r = interpret.permutation_importance(model, X, y, [], 10, 0)
        assert r.mean_accuracy_loss == 0.0 and r.sd == 0.0


class TestSubsetImportance:
    def test_k_exceeds_group_rejected(self):
        model = identity_model(3)
        with pytest.raises(ValueError):
            interpret.subset_importance(model, np.zeros((2, 3)), ["a", "a"],
                                        [0, 1], k=3)

    def test_single_signal_column_k1_expectation(self):
        # permuting the one signal column among {signal, 3 noise} is drawn
        # with probability 1/4, so the mean loss is about loss_signal / 4
        rng = np.random.default_rng(5)
        signal = rng.normal(size=400)
        y = ["a" if s > 0 else "b" for s in signal]
        X = np.column_stack([signal, -signal,
                             rng.normal(size=400), rng.normal(size=400)])
        model = identity_model(4)
        full = interpret.permutation_importance(model, X, y, [0], 300, 0)
        sub = interpret.subset_importance(model, X, y, [0, 2, 3], k=1,
                                          n_iter=900, seed=0)
        assert sub.mean_accuracy_loss == pytest.approx(
            full.mean_accuracy_loss / 3, abs=0.03)


class TestTopKFeatures:
    def brute(self, W, k):
        strength = np.abs(W).max(axis=0)
        order = sorted(range(W.shape[1]), key=lambda j: (-strength[j], j))
        return order[:k]

    def test_matches_brute_force_including_ties(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            W = rng.integers(-3, 4, size=(3, 12)).astype(float)  # many ties
            k = int(rng.integers(1, 13))
            assert list(interpret.top_k_features(W, k)) == self.brute(W, k)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            interpret.top_k_features(np.zeros((2, 3)), 4)


class TestStatistics:
    def test_pearson_hand_value(self):
        assert interpret.pearson_r([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert interpret.pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        assert interpret.pearson_r([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)

    def test_pearson_zero_variance_nan(self):
        assert np.isnan(interpret.pearson_r([1, 1, 1], [1, 2, 3]))

    def test_left_tail_p_add_one(self):
        null = np.array([0.1, 0.2, 0.3, 0.4])
        assert interpret.left_tail_permutation_p(0.0, null) == 1 / 5
        assert interpret.left_tail_permutation_p(0.25, null) == 3 / 5
        assert interpret.left_tail_permutation_p(1.0, null) == 1.0

    def test_left_tail_p_never_zero(self):
        assert interpret.left_tail_permutation_p(-np.inf, np.zeros(99)) == 0.01


class TestDatasetCorrelation:
    def _data(self, rng, flip_trio=False):
        # two performers, strong signature feature per performer, both tags
        X, y, tags = [], [], []
        for tag in ("solo", "trio"):
            for p, col in (("a", 0), ("b", 1)):
                for _ in range(15):
                    row = rng.normal(scale=0.1, size=4)
                    sig = col if not (flip_trio and tag == "trio") \
                        else 1 - col
                    row[sig] += 2.0
                    X.append(row)
                    y.append(p)
                    tags.append(tag)
        return np.array(X), y, tags

    def test_consistent_weights_high_r(self):
        rng = np.random.default_rng(7)
        X, y, tags = self._data(rng)
        report = interpret.dataset_weight_correlation(
            X, y, tags, [0, 1, 2, 3], LRConfig(C=1.0), n_perm=19, seed=0)
        assert report.r["a"] > 0.8 and report.r["b"] > 0.8
        assert report.corrected_alpha_factor == 2

    def test_flipped_signatures_give_low_r_and_small_p(self):
        # trio signatures are swapped, so per-tag weights anti-correlate;
        # shuffled tags mix the data back together, raising the null r
        rng = np.random.default_rng(13)
        X, y, tags = self._data(rng, flip_trio=True)
        report = interpret.dataset_weight_correlation(
            X, y, tags, [0, 1, 2, 3], LRConfig(C=1.0), n_perm=19, seed=0)
        assert report.r["a"] < 0.0
        assert report.p["a"] == pytest.approx(1 / 20)

    def test_performer_missing_one_tag_excluded(self, caplog):
        import logging
        rng = np.random.default_rng(8)
        X, y, tags = self._data(rng)
        # add a performer only present in solo
        extra = rng.normal(size=(6, 4))
        extra[:, 2] += 2
        X = np.vstack([X, extra])
        y += ["c"] * 6
        tags += ["solo"] * 6
        with caplog.at_level(logging.WARNING, logger="stylus"):
            report = interpret.dataset_weight_correlation(
                X, y, tags, [0, 1, 2, 3], LRConfig(), n_perm=5, seed=0)
        assert set(report.r) == {"a", "b"}
        assert any("missing" in r.message for r in caplog.records)

    def test_requires_two_tags(self):
        with pytest.raises(ValueError):
            interpret.dataset_weight_correlation(
                np.zeros((4, 2)), ["a", "a", "b", "b"], ["solo"] * 4,
                [0, 1], LRConfig())


class TestBootstrap:
    def test_shape_determinism_and_positive_sd(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(30, 3))
        X[:15] += 1.5
        y = ["a"] * 15 + ["b"] * 15
        s1 = interpret.bootstrap_weight_sd(X, y, LRConfig(), 15, seed=0)
        s2 = interpret.bootstrap_weight_sd(X, y, LRConfig(), 15, seed=0)
        assert s1.shape == (2, 3)
        assert np.array_equal(s1, s2)
        assert (s1 > 0).all()

    def test_requires_two_resamples(self):
        with pytest.raises(ValueError):
            interpret.bootstrap_weight_sd(np.zeros((4, 2)),
                                          ["a", "a", "b", "b"],
                                          LRConfig(), n_boot=1)


class TestPca:
    def test_components_match_eigendecomposition(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(40, 3)) @ np.array([[3.0, 0.5, 0.1],
                                                 [0.0, 1.0, 0.2],
                                                 [0.0, 0.0, 0.3]])
        model = interpret.pca_fit(X)
        S = interpret._preprocess(X, model.means, model.sds,
                                  model.mins, model.maxs)
        C = np.cov(S, rowvar=False)
        evals, evecs = np.linalg.eigh(C)
        order = np.argsort(evals)[::-1]
        assert np.allclose(model.explained_variance, evals[order])
        for i in range(3):
            v = evecs[:, order[i]]
            cos = abs(np.dot(v, model.components[i]))
            assert cos == pytest.approx(1.0)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(11)
        model = interpret.pca_fit(rng.normal(size=(20, 4)))
        G = model.components @ model.components.T
        assert np.allclose(G, np.eye(G.shape[0]), atol=1e-10)

    def test_preprocessed_range_and_zero_variance_guard(self):
        X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        model = interpret.pca_fit(X)
        S = interpret._preprocess(X, model.means, model.sds,
                                  model.mins, model.maxs)
        assert S[:, 0].min() == 0.0 and S[:, 0].max() == 1.0
        assert np.allclose(S[:, 1], 0.0)   # constant column stays put

    def test_projection_is_preprocess_then_dot(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(15, 3))
        model = interpret.pca_fit(X)
        v = rng.normal(size=3)
        S = interpret._preprocess(v[None, :], model.means, model.sds,
                                  model.mins, model.maxs)
        assert np.allclose(interpret.pca_project(model, v),
                           S @ model.components.T)

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            interpret.pca_fit(np.zeros((1, 3)))

    def test_scale_to_unit_interval(self):
        coords = np.array([[0.0, 10.0], [2.0, 20.0], [4.0, 30.0]])
        out = interpret.scale_to_unit_interval(coords)
        assert np.allclose(out[:, 0], [-1.0, 0.0, 1.0])
        assert np.allclose(out[:, 1], [-1.0, 0.0, 1.0])
