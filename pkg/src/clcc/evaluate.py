"""Angular-error statistics, k-fold cross-validation and per-cluster robustness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import ESTIMATORS
from .color_math import angular_errors_degrees
from .scene_synth import illuminant_chromaticity

COLUMNS = ("Mean", "Median", "Tri.", "Best-25%", "Worst-25%")


@dataclass
class MetricsReport:
    mean: float
    median: float
    trimean: float
    best25_mean: float
    worst25_mean: float
    n: int
    errors: np.ndarray = field(repr=False)

    def row(self) -> list:
        """Statistics in table column order (see ``COLUMNS``)."""
        return [self.mean, self.median, self.trimean, self.best25_mean, self.worst25_mean]

    def as_dict(self) -> dict:
        return dict(zip(COLUMNS, self.row()), n=self.n)


def compute_metrics(errors) -> MetricsReport:
    """Mean, median, trimean and the means of the best/worst ceil(n/4) errors.

    Quartiles use linear interpolation between order statistics (inclusive).
    """
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    n = e.size
    if n == 0:
        raise ValueError("no errors to summarize")
    q1, q2, q3 = np.percentile(e, [25, 50, 75])
    k = math.ceil(n / 4)
    return MetricsReport(float(e.mean()), float(np.median(e)), float((q1 + 2 * q2 + q3) / 4),
                         float(e[:k].mean()), float(e[-k:].mean()), n, e)


class BaselineMethod:
    """Learning-free estimator wrapped in the cross-validation method protocol."""

    learns = False

    def __init__(self, name: str, **kwargs):
        if name not in ESTIMATORS:
            raise ValueError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}")
        self.name = name
        self.fn = ESTIMATORS[name]
        self.kwargs = kwargs

    def fit(self, train_samples=None):
        return self.predict

    def predict(self, samples) -> np.ndarray:
        out = []
        for s in samples:
            y0, x0, h, w = s.checker_region
            mask = np.ones(s.image.shape[:2], dtype=bool)
            mask[y0:y0 + h, x0:x0 + w] = False
            out.append(self.fn(s.image, mask=mask, **self.kwargs))
        return np.stack(out)


@dataclass
class CVResult:
    folds: list
    fold_reports: list
    pooled: MetricsReport
    errors: np.ndarray       # per sample, dataset order
    estimates: np.ndarray    # per sample, dataset order


def fold_indices(n: int, k_folds: int = 3, seed: int = 0) -> list:
    if n < k_folds or k_folds < 2:
        raise ValueError(f"cannot split {n} samples into {k_folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k_folds)]


def cross_validate(dataset, method, k_folds: int = 3, seed: int = 0) -> CVResult:
    """k-fold CV of ``method`` (anything with ``fit(train) -> predictor`` and ``learns``).

    Learning-free methods are fitted once on nothing; learned ones are fitted on
    the k-1 training folds and scored only on the held-out fold.
    """
    n = len(dataset)
    folds = fold_indices(n, k_folds, seed)
    gts = np.stack([s.illuminant for s in dataset])
    est = np.zeros((n, 3))
    reports = []
    shared = None if getattr(method, "learns", True) else method.fit([])
    for k, test in enumerate(folds):
        if shared is None:
            train_idx = np.concatenate([f for j, f in enumerate(folds) if j != k])
            predictor = method.fit([dataset[i] for i in train_idx])
        else:
            predictor = shared
        est[test] = predictor([dataset[i] for i in test])
        reports.append(compute_metrics(angular_errors_degrees(est[test], gts[test])))
    errors = angular_errors_degrees(est, gts)
    return CVResult(folds, reports, compute_metrics(errors), errors, est)


@dataclass
class ClusterReport:
    centroids: np.ndarray    # (K, 2) in (r/g, b/g)
    labels: np.ndarray       # cluster index per sample
    reports: list            # MetricsReport per cluster
    counts: np.ndarray


def kmeans(points, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100):
    """k-means++ seeded Lloyd iterations; best of ``n_init`` restarts by inertia."""
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=max_iter,
                random_state=seed, algorithm="lloyd").fit(points)
    # re-derive labels from the final centroids so the partition is exactly Voronoi
    d = ((points[:, None, :] - km.cluster_centers_[None]) ** 2).sum(-1)
    return km.cluster_centers_, d.argmin(axis=1)


def cluster_robustness(illuminants, errors, k: int = 5, seed: int = 0) -> ClusterReport:
    """Group samples by K-means on illuminant chromaticity and summarize each group.

    ``illuminants`` is an Nx3 array (or a list of LabeledImage).
    """
    if len(illuminants) and hasattr(illuminants[0], "illuminant"):
        illuminants = [s.illuminant for s in illuminants]
    chroma = illuminant_chromaticity(np.asarray(illuminants, dtype=np.float64))
    errors = np.asarray(errors, dtype=np.float64)
    if len(chroma) != len(errors):
        raise ValueError("need one error per illuminant")
    if len(np.unique(chroma, axis=0)) < k:
        raise ValueError(f"fewer than {k} distinct illuminants")
    centroids, labels = kmeans(chroma, k, seed)
    reports = [compute_metrics(errors[labels == c]) for c in range(k)]
    return ClusterReport(centroids, labels, reports, np.bincount(labels, minlength=k))
