"""Distribution distance, correlation metrics, and the count predictor."""

import numpy as np
import pytest
import scipy.linalg
import torch

from synclay.evaluation import (
    BalancePlan,
    CompositionExample,
    CompositionNet,
    FeatureStats,
    RandomConvFeatures,
    auroc,
    balance_with_synthetic,
    composition_vector,
    evaluate_predictor,
    examples_from_records,
    extract_features,
    fid,
    frechet_distance,
    pearson,
    predict_counts,
    product_sqrtm,
    r2_score,
    report_csv,
    report_markdown,
    spearman,
    symmetric_sqrt,
    train_composition_predictor,
)
from synclay.generator import ModelConfig, SynthesisModel


class TestMatrixSqrt:
    def test_symmetric_sqrt_squares_back(self, rng):
        a = rng.standard_normal((6, 6))
        spd = a @ a.T + 6 * np.eye(6)
        root = symmetric_sqrt(spd)
        np.testing.assert_allclose(root @ root, spd, atol=1e-10)

    def test_product_sqrtm_matches_scipy(self, rng):
        a = rng.standard_normal((5, 5))
        b = rng.standard_normal((5, 5))
        spd_a = a @ a.T + 5 * np.eye(5)
        spd_b = b @ b.T + 5 * np.eye(5)
        ours = product_sqrtm(spd_a, spd_b)
        reference = scipy.linalg.sqrtm(spd_a @ spd_b)
        np.testing.assert_allclose(ours, np.real(reference), atol=1e-8)

    def test_sqrt_of_product_squares_back(self, rng):
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        spd_a = a @ a.T + 4 * np.eye(4)
        spd_b = b @ b.T + 4 * np.eye(4)
        s = product_sqrtm(spd_a, spd_b)
        np.testing.assert_allclose(s @ s, spd_a @ spd_b, atol=1e-8)


class TestFrechet:
    def test_identical_stats_give_zero(self, rng):
        feats = rng.standard_normal((200, 8))
        stats = FeatureStats.from_features(feats)
        assert frechet_distance(stats, stats) == pytest.approx(0.0, abs=1e-9)

    def test_closed_form_univariate(self):
        # d^2 = (m1-m2)^2 + s1^2 + s2^2 - 2 s1 s2
        s1 = FeatureStats(mean=np.array([1.0]), cov=np.array([[4.0]]), count=10)
        s2 = FeatureStats(mean=np.array([3.0]), cov=np.array([[9.0]]), count=10)
        expected = 2.0**2 + 4.0 + 9.0 - 2 * 2.0 * 3.0
        assert frechet_distance(s1, s2) == pytest.approx(expected, abs=1e-12)

    def test_closed_form_diagonal(self):
        s1 = FeatureStats(
            mean=np.zeros(3), cov=np.diag([1.0, 4.0, 9.0]), count=10
        )
        s2 = FeatureStats(
            mean=np.array([1.0, 0.0, 2.0]), cov=np.diag([4.0, 1.0, 1.0]), count=10
        )
        expected = (1.0 + 4.0) + sum(
            (np.sqrt(a) - np.sqrt(b)) ** 2 for a, b in [(1, 4), (4, 1), (9, 1)]
        )
        assert frechet_distance(s1, s2) == pytest.approx(expected, abs=1e-10)

    def test_gaussian_clouds_estimate(self):
        # large same-distribution samples should read as almost identical
        rng = np.random.default_rng(0)
        a = FeatureStats.from_features(rng.standard_normal((5000, 4)))
        b = FeatureStats.from_features(rng.standard_normal((5000, 4)))
        assert frechet_distance(a, b) < 1e-2

    def test_sample_covariance_uses_ddof_one(self):
        feats = np.array([[0.0], [2.0]])
        stats = FeatureStats.from_features(feats)
        assert stats.cov[0, 0] == pytest.approx(2.0)  # not 1.0


class TestExtractor:
    def test_fixed_seed_is_deterministic(self):
        a = RandomConvFeatures(seed=3)
        b = RandomConvFeatures(seed=3)
        x = torch.randn(2, 3, 64, 64)
        torch.testing.assert_close(a(x), b(x), atol=0, rtol=0)

    def test_extract_features_shape(self, tiny_records):
        extractor = RandomConvFeatures(seed=0)
        feats = extract_features([r.image for r in tiny_records], extractor)
        assert feats.shape == (len(tiny_records), 64)
        assert np.isfinite(feats).all()

    def test_fid_of_set_with_itself_is_tiny(self, tiny_records):
        images = [r.image for r in tiny_records]
        value = fid(images, images, RandomConvFeatures(seed=0))
        assert value < 1e-6


class TestCorrelations:
    def test_pearson_textbook(self):
        x = np.array([1.0, 2.0, 3.0])
        y = np.array([1.0, 3.0, 2.0])
        assert pearson(x, y) == pytest.approx(0.5)

    def test_pearson_perfect_line(self):
        x = np.arange(10, dtype=np.float64)
        assert pearson(x, 3 * x + 2) == pytest.approx(1.0)

    def test_pearson_undefined_on_constant(self):
        assert pearson(np.ones(5), np.arange(5.0)) is None

    def test_spearman_monotone_nonlinear(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert spearman(x, x**3) == pytest.approx(1.0)

    def test_spearman_ties_handled(self):
        x = np.array([1.0, 2.0, 2.0, 3.0])
        y = np.array([1.0, 2.0, 2.0, 3.0])
        assert spearman(x, y) == pytest.approx(1.0)

    def test_r2_perfect_and_mean_baseline(self):
        gt = np.array([1.0, 2.0, 3.0])
        assert r2_score(gt, gt.copy()) == pytest.approx(1.0)
        assert r2_score(gt, np.full(3, 2.0)) == pytest.approx(0.0)
        assert r2_score(np.ones(3), np.ones(3)) is None

    def test_auroc_hand_value(self):
        labels = np.array([False, False, True, True])
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        assert auroc(labels, scores) == pytest.approx(0.75)

    def test_auroc_single_class_undefined(self):
        assert auroc(np.array([True, True]), np.array([0.2, 0.4])) is None

    def test_auroc_tied_scores(self):
        labels = np.array([False, True])
        scores = np.array([0.5, 0.5])
        assert auroc(labels, scores) == pytest.approx(0.5)


class TestComposition:
    def test_composition_vector_counts_components(self):
        mask = np.zeros((16, 16), dtype=np.int64)
        mask[1:4, 1:4] = 1  # one neutrophil blob
        mask[1:4, 8:11] = 1  # second, separate
        mask[10:13, 10:13] = 3  # one lymphocyte blob
        counts = composition_vector(mask)
        assert counts.tolist() == [2, 0, 1, 0, 0, 0]

    def test_diagonal_blobs_merge(self):
        mask = np.zeros((8, 8), dtype=np.int64)
        mask[0, 0] = 2
        mask[1, 1] = 2  # 8-connected to the first pixel
        assert composition_vector(mask).tolist() == [0, 1, 0, 0, 0, 0]

    def test_examples_from_records(self, tiny_records):
        examples = examples_from_records(tiny_records)
        assert len(examples) == len(tiny_records)
        ex = examples[0]
        assert ex.counts.shape == (6,)
        assert not ex.synthetic
        # adjacent same-class blobs may merge, so the component count is a
        # lower bound on the instance count
        assert 0 < ex.counts.sum() <= len(tiny_records[0].layout.cells)

    def test_predictor_shapes(self, tiny_records):
        examples = examples_from_records(tiny_records)
        net = train_composition_predictor(examples, epochs=2, seed=0)
        preds = predict_counts(net, examples)
        assert preds.shape == (len(examples), 6)

    def test_predictor_requires_examples(self):
        from synclay.data import DatasetError

        with pytest.raises(DatasetError):
            train_composition_predictor([], epochs=1)

    def test_evaluate_predictor_table(self, tiny_records):
        examples = examples_from_records(tiny_records)
        net = train_composition_predictor(examples, epochs=1, seed=0)
        table = evaluate_predictor(net, examples)
        assert set(table) == {
            "neutrophil", "epithelial", "lymphocyte",
            "plasma", "eosinophil", "connective",
        }
        for row in table.values():
            assert set(row) == {"spearman", "pearson", "r2", "auroc"}

    def test_reports_render_none_as_undefined(self):
        table = {"plasma": {"spearman": None, "pearson": 0.5, "r2": None, "auroc": 1.0}}
        text = report_csv(table)
        assert "undefined" in text and "0.5000" in text
        md = report_markdown(table)
        assert md.startswith("| type |") and "undefined" in md


class TestBalance:
    def test_appends_synthetic_examples(self, tiny_records):
        torch.manual_seed(0)
        model = SynthesisModel(ModelConfig(embed_dim=8, image_size=64, base_channels=16))
        examples = examples_from_records(tiny_records[:3])
        plan = BalancePlan(n_images=2, seed=1)
        augmented, table = balance_with_synthetic(examples, model, plan)
        added = [e for e in augmented if e.synthetic]
        assert len(added) == 2
        assert len(augmented) == len(examples) + 2
        assert table["added_images"] == 2
        for ex in added:
            assert ex.counts.sum() > 0  # labels derive from the layout
        # originals never mutated
        assert all(not e.synthetic for e in augmented[: len(examples)])
