"""Clustering and recommendation metrics, baseline clusterers and reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.metrics import normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix, pair_confusion_matrix

from ppsr.errors import ConfigError, DataError, DimensionError
from ppsr.matrixfile import atomic_write_text
from ppsr.multiview_nmf import MultiViewConfig, ViewMatrix, nmf_factorize


BASELINE_METHODS: tuple[str, ...] = ("kmeans", "svd", "nmf")
DEFAULT_K_RANGE = range(3, 11)


def _labels(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise DimensionError(f"{pred.size} predicted labels for {truth.size} true labels")
    if pred.size == 0:
        raise DataError("cannot score an empty labeling")
    return pred, truth


def clustering_accuracy(pred, truth) -> float:
    """Best fraction matched over one-to-one relabelings of ``pred``."""
    pred, truth = _labels(pred, truth)
    C = contingency_matrix(truth, pred)
    rows, cols = linear_sum_assignment(C, maximize=True)
    return float(C[rows, cols].sum()) / pred.size


def pairwise_f1(pred, truth) -> float:
    """F1 over unordered item pairs placed in the same cluster."""
    pred, truth = _labels(pred, truth)
    C = pair_confusion_matrix(truth, pred)
    tp, fp, fn = int(C[1, 1]), int(C[0, 1]), int(C[1, 0])
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def nmi(pred, truth) -> float:
    """Mutual information over sqrt(H(pred) H(truth)); 0 if either is constant."""
    pred, truth = _labels(pred, truth)
    if len(np.unique(pred)) < 2 or len(np.unique(truth)) < 2:
        return 0.0
    score = normalized_mutual_info_score(truth, pred, average_method="geometric")
    return float(min(max(score, 0.0), 1.0))


def _stack_views(V) -> np.ndarray:
    if isinstance(V, ViewMatrix):
        return V.data
    if isinstance(V, np.ndarray):
        return np.asarray(V, dtype=float)
    views = [v.data if isinstance(v, ViewMatrix) else np.asarray(v, dtype=float) for v in V]
    if not views:
        raise DimensionError("no views to cluster")
    m = views[0].shape[0]
    if any(v.shape[0] != m for v in views):
        raise DimensionError("views disagree on the number of items")
    return np.hstack(views)


def _kmeans(X: np.ndarray, K: int, seed: int) -> np.ndarray:
    model = KMeans(
        n_clusters=K,
        init="k-means++",
        n_init=10,
        algorithm="lloyd",
        random_state=seed % 2**32,
    )
    return model.fit_predict(X).astype(np.int64)


def baseline_cluster(V, K: int, method: str = "kmeans", seed: int = 0) -> np.ndarray:
    """Cluster the rows of one view (or of several views side by side).

    kmeans: Lloyd's algorithm with k-means++ seeding. svd: k-means on the
    rank-K left-singular embedding U_K S_K. nmf: argmax rows of W.
    """
    X = _stack_views(V)
    m = X.shape[0]
    if not 0 < K <= m:
        raise DimensionError(f"K={K} must lie in [1, {m}]")
    if K == 1:
        return np.zeros(m, dtype=np.int64)
    if method == "kmeans":
        return _kmeans(X, K, seed)
    if method == "svd":
        U, S, _ = np.linalg.svd(X, full_matrices=False)
        return _kmeans(U[:, :K] * S[:K], K, seed)
    if method == "nmf":
        model = nmf_factorize(X, K, MultiViewConfig(K=K, seed=seed))
        return model.assignment
    raise ConfigError(f"unknown baseline method {method!r}")


@dataclass(frozen=True)
class MetricReport:
    algorithm: str
    dataset: str
    accuracy: float
    accuracy_std: float
    f1: float
    f1_std: float
    nmi: float
    nmi_std: float
    runs: int = 1

    def __post_init__(self):
        for name in ("accuracy", "f1", "nmi"):
            value, std = getattr(self, name), getattr(self, f"{name}_std")
            if not (0.0 <= value <= 1.0 and std >= 0.0):
                raise DataError(f"{self.algorithm}: {name}={value} std={std} out of range")


def clustering_report(
    predictions: Sequence, truth, algorithm: str, dataset: str
) -> MetricReport:
    """Mean and population std of Accuracy, F1 and NMI over several runs."""
    if not predictions:
        raise DataError(f"{algorithm}: no runs to report")
    scores = np.array(
        [[clustering_accuracy(p, truth), pairwise_f1(p, truth), nmi(p, truth)] for p in predictions]
    )
    mean, std = scores.mean(axis=0), scores.std(axis=0)
    return MetricReport(
        algorithm=algorithm,
        dataset=dataset,
        accuracy=float(mean[0]),
        accuracy_std=float(std[0]),
        f1=float(mean[1]),
        f1_std=float(std[1]),
        nmi=float(mean[2]),
        nmi_std=float(std[2]),
        runs=len(predictions),
    )


def frame_to_tsv(frame: pd.DataFrame) -> str:
    return frame.to_csv(sep="\t", index=False, float_format="%.6f", lineterminator="\n")


def write_reports(path: Union[Path, str], reports: Iterable[MetricReport]) -> None:
    frame = pd.DataFrame([asdict(r) for r in reports], columns=list(MetricReport.__annotations__))
    atomic_write_text(path, frame_to_tsv(frame))


def precision_recall_at_k(
    recommendations: Mapping[int, Sequence],
    relevant: Mapping[int, Iterable],
    k_range: Iterable[int] = DEFAULT_K_RANGE,
) -> pd.DataFrame:
    """Macro-averaged precision@k and recall@k.

    Users with an empty relevant set are skipped; shorter lists are scored as
    they are (missing slots count as misses).
    """
    ks = list(k_range)
    if not ks or min(ks) < 1:
        raise ConfigError("k values must be positive")
    users = [u for u, rel in relevant.items() if len(set(rel))]
    if not users:
        raise DataError("no test user has a relevant item")

    rows = []
    for k in ks:
        precision = recall = 0.0
        for u in users:
            rel = set(relevant[u])
            top = list(recommendations.get(u, ()))[:k]
            hits = len(rel.intersection(top))
            precision += hits / k
            recall += hits / len(rel)
        rows.append((k, precision / len(users), recall / len(users)))
    return pd.DataFrame(rows, columns=["k", "precision", "recall"])


@dataclass(frozen=True)
class EvalSplit:
    """Users split into training and cold-start test users."""

    train_users: tuple[int, ...]
    test_users: tuple[int, ...]
    seed: int
    revealed: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    relevant: Mapping[int, frozenset] = field(default_factory=dict)


def make_split(user_ids: Sequence[int], train_fraction: float = 0.75, seed: int = 0) -> EvalSplit:
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie strictly between 0 and 1")
    user_ids = list(user_ids)
    if len(user_ids) < 2:
        raise DataError("need at least two users to split")
    rng = np.random.default_rng(seed)
    order = [user_ids[i] for i in rng.permutation(len(user_ids))]
    n_train = min(max(int(round(train_fraction * len(user_ids))), 1), len(user_ids) - 1)
    return EvalSplit(
        train_users=tuple(sorted(order[:n_train])),
        test_users=tuple(sorted(order[n_train:])),
        seed=seed,
    )


def summarize_curves(per_run: pd.DataFrame) -> pd.DataFrame:
    """Mean precision/recall per (model, k) over runs."""
    return (
        per_run.groupby(["model", "k"], sort=False)[["precision", "recall"]]
        .mean()
        .reset_index()
    )


def metric_at(curves: pd.DataFrame, model: str, k: int, metric: str = "precision") -> float:
    rows = curves[(curves["model"] == model) & (curves["k"] == k)]
    if rows.empty:
        raise DataError(f"no {metric}@{k} for {model}")
    return float(rows[metric].iloc[0])
