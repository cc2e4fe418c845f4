"""Tests for clustering metrics, baselines and precision/recall@k."""

import numpy as np
import pandas as pd
import pytest

from ppsr.data_io import SyntheticSpec, generate_synthetic
from ppsr.errors import ConfigError, DataError, DimensionError
from ppsr.evaluation import (
    BASELINE_METHODS,
    MetricReport,
    baseline_cluster,
    clustering_accuracy,
    clustering_report,
    make_split,
    metric_at,
    nmi,
    pairwise_f1,
    precision_recall_at_k,
    summarize_curves,
    write_reports,
)
from ppsr.multiview_nmf import normalize_view


class TestClusteringMetrics:
    def test_accuracy_examples(self):
        assert clustering_accuracy([0, 0, 1, 1], [1, 1, 1, 0]) == pytest.approx(0.75)
        assert clustering_accuracy([2, 2, 0, 1], [0, 0, 1, 2]) == 1.0

    def test_f1_examples(self):
        assert pairwise_f1([0, 0, 1, 1], [0, 1, 1, 1]) == pytest.approx(0.4)
        assert pairwise_f1([0, 1, 2, 3], [0, 0, 0, 0]) == 0.0
        assert pairwise_f1([1, 1, 0, 0], [0, 0, 1, 1]) == 1.0

    def test_nmi_examples(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)
        assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
        assert nmi([1, 1, 0, 0, 2], [0, 0, 1, 1, 2]) == pytest.approx(1.0)

    def test_metrics_stay_in_bounds_and_ignore_label_names(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            truth = rng.integers(0, 3, 12)
            pred = rng.integers(0, 4, 12)
            relabeled = rng.permutation(4)[pred]
            for metric in (clustering_accuracy, pairwise_f1, nmi):
                score = metric(pred, truth)
                assert 0.0 <= score <= 1.0
                assert metric(relabeled, truth) == pytest.approx(score)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            clustering_accuracy([0, 1], [0, 1, 1])


class TestBaselines:
    @pytest.fixture(scope="class")
    def clean(self):
        return generate_synthetic(
            SyntheticSpec(n_items=60, n_users=12, K_true=3, view_features=12, noise=0.0, seed=1)
        )

    @pytest.mark.parametrize("method", BASELINE_METHODS)
    def test_zero_noise_is_recovered(self, clean, method):
        pred = baseline_cluster(normalize_view(clean.views[0]), 3, method, seed=0)
        assert clustering_accuracy(pred, clean.planted) == 1.0

    def test_same_seed_same_assignment(self, clean):
        a = baseline_cluster(clean.views[0], 3, "kmeans", seed=5)
        b = baseline_cluster(clean.views[0], 3, "kmeans", seed=5)
        assert np.array_equal(a, b)

    def test_one_cluster(self):
        truth = np.array([0, 0, 0, 1])
        pred = baseline_cluster(np.random.default_rng(0).random((4, 3)), 1, "svd")
        assert pred.tolist() == [0, 0, 0, 0]
        assert clustering_accuracy(pred, truth) == pytest.approx(0.75)

    def test_views_side_by_side(self, clean):
        pred = baseline_cluster(list(clean.views), 3, "kmeans", seed=0)
        assert clustering_accuracy(pred, clean.planted) == 1.0

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            baseline_cluster(np.ones((4, 2)), 2, "spectral")


class TestReports:
    def test_mean_and_std_over_runs(self):
        truth = [0, 0, 1, 1]
        report = clustering_report([[0, 0, 1, 1], [0, 0, 1, 0]], truth, "kmeans-view1", "toy")
        assert report.accuracy == pytest.approx(0.875)
        assert report.accuracy_std == pytest.approx(0.125)
        assert report.runs == 2

    def test_out_of_range_metric_rejected(self):
        with pytest.raises(DataError):
            MetricReport("x", "toy", 1.5, 0.0, 0.5, 0.0, 0.5, 0.0)

    def test_write_reports(self, tmp_path):
        report = clustering_report([[0, 1]], [0, 1], "nmf-view1", "toy")
        write_reports(tmp_path / "clustering.tsv", [report])
        frame = pd.read_csv(tmp_path / "clustering.tsv", sep="\t")
        assert frame["algorithm"].tolist() == ["nmf-view1"]
        assert frame["accuracy"].tolist() == [1.0]


class TestPrecisionRecall:
    def test_two_of_four_relevant_in_top_five(self):
        curve = precision_recall_at_k({1: [1, 2, 9, 8, 7]}, {1: {1, 2, 3, 4}}, [5])
        assert curve["precision"].tolist() == [pytest.approx(0.4)]
        assert curve["recall"].tolist() == [pytest.approx(0.5)]

    def test_exact_and_disjoint_lists(self):
        relevant = {1: {1, 2, 3}}
        assert precision_recall_at_k({1: [3, 1, 2]}, relevant, [3]).iloc[0].tolist() == [3, 1, 1]
        assert precision_recall_at_k({1: [7, 8, 9]}, relevant, [3]).iloc[0].tolist() == [3, 0, 0]

    def test_recall_never_decreases_with_k(self):
        rng = np.random.default_rng(2)
        recs = {u: list(rng.permutation(30)[:10]) for u in range(8)}
        relevant = {u: set(rng.choice(30, 5, replace=False)) for u in range(8)}
        recall = precision_recall_at_k(recs, relevant)["recall"].to_numpy()
        assert np.all(np.diff(recall) >= 0)

    def test_users_without_relevant_items_are_skipped(self):
        curve = precision_recall_at_k({1: [1], 2: [5]}, {1: {1}, 2: set()}, [1])
        assert curve["precision"].tolist() == [1.0]

    def test_no_relevant_items_at_all(self):
        with pytest.raises(DataError):
            precision_recall_at_k({1: [1]}, {1: set()})

    def test_curve_summary(self):
        per_run = pd.DataFrame(
            {
                "model": ["PPSR", "PPSR"],
                "seed": [0, 1],
                "k": [5, 5],
                "precision": [0.2, 0.4],
                "recall": [0.1, 0.3],
            }
        )
        curves = summarize_curves(per_run)
        assert metric_at(curves, "PPSR", 5) == pytest.approx(0.3)
        assert metric_at(curves, "PPSR", 5, "recall") == pytest.approx(0.2)
        with pytest.raises(DataError):
            metric_at(curves, "RM-MV", 5)


class TestSplit:
    def test_split_is_a_partition(self):
        split = make_split(range(100), 0.75, seed=3)
        assert len(split.train_users) == 75
        assert set(split.train_users) | set(split.test_users) == set(range(100))
        assert not set(split.train_users) & set(split.test_users)

    def test_small_population_keeps_both_sides(self):
        split = make_split([1, 2], 0.75)
        assert len(split.train_users) == 1
        assert len(split.test_users) == 1

    def test_split_is_seeded(self):
        assert make_split(range(20), seed=1) == make_split(range(20), seed=1)

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            make_split(range(10), 1.0)
