"""Estimate the total number of classes from k-means sweeps scored on labeled samples."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .evaluate import contingency, hungarian
from .numerics import RngStream, as_rng

MAX_LLOYD_ITERS = 300


@dataclass(frozen=True)
class EstimatorConfig:
    """``k_min``/``k_max`` default to the labeled class count and four times it."""

    k_min: int | None = None
    k_max: int | None = None
    runs_per_k: int = 3
    top_values: int = 10
    reassign: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.k_min is not None and self.k_min < 1:
            raise ValueError("k_min must be >= 1")
        if self.k_min is not None and self.k_max is not None and self.k_max < self.k_min:
            raise ValueError(f"k_max ({self.k_max}) < k_min ({self.k_min})")
        if self.runs_per_k < 1 or self.top_values < 1:
            raise ValueError("runs_per_k and top_values must be >= 1")

    def k_range(self, labeled_classes: int) -> tuple[int, int]:
        lo = labeled_classes if self.k_min is None else self.k_min
        hi = 4 * labeled_classes if self.k_max is None else self.k_max
        if hi < lo:
            raise ValueError(f"k_max ({hi}) < k_min ({lo})")
        return lo, hi


@dataclass
class KmeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


def _sq_dists(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp_init(X: np.ndarray, k: int, g: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[g.integers(n)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = g.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), g.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[c:c + 1])[:, 0])
    return centers


def kmeans(X, k: int, rng=None, max_iter: int = MAX_LLOYD_ITERS) -> KmeansResult:
    """k-means++ seeding followed by Lloyd iterations until assignments stop changing.

    An emptied cluster is re-seeded at the point farthest from its current center.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    g = as_rng(rng)
    centers = kmeans_pp_init(X, k, g)
    assign = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(X, centers)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, X)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            own = ((X - centers[assign]) ** 2).sum(1)
            far = int(own.argmax())
            centers[c] = X[far]
            assign[far] = c
    d = _sq_dists(X, centers)
    assign = d.argmin(axis=1)
    inertia = float(((X - centers[assign]) ** 2).sum())
    return KmeansResult(centers=centers, assignments=assign, inertia=inertia,
                        inertia_history=history)


def labeled_cluster_score(result: KmeansResult, X, labeled_idx, labeled_gt,
                          reassign: bool = True) -> float:
    """Accuracy of the clustering on labeled samples after Hungarian matching.

    The matched clusters are the dominant clusters. With ``reassign``, each
    labeled sample sitting in a non-dominant cluster is moved to the nearest
    dominant cluster center before scoring.
    """
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    gt_raw = np.asarray(labeled_gt, dtype=np.int64)
    classes, gt = np.unique(gt_raw, return_inverse=True)
    k = len(result.centers)
    L = len(classes)
    if k < L:
        raise ValueError(f"{k} clusters cannot cover {L} labeled classes")
    clusters = result.assignments[labeled_idx]
    W = contingency(clusters, gt, k)
    cluster_to_row, _ = hungarian(-W)
    # cluster c is dominant iff matched to a real (non-padding) class
    dominant = cluster_to_row < L
    mapped = cluster_to_row[clusters]
    correct = dominant[clusters] & (mapped == gt)
    if reassign:
        stray = ~dominant[clusters]
        if stray.any():
            dom_ids = np.flatnonzero(dominant)
            pts = np.asarray(X, dtype=np.float64)[labeled_idx[stray]]
            nearest = dom_ids[_sq_dists(pts, result.centers[dom_ids]).argmin(axis=1)]
            correct[stray] = cluster_to_row[nearest] == gt[stray]
    return float(correct.mean())


@dataclass
class EstimateResult:
    estimate: int
    ks: np.ndarray
    scores: np.ndarray
    top_ks: np.ndarray

    def write_table(self, path) -> None:
        top = set(self.top_ks.tolist())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "score", "in_top"])
            for k, s in zip(self.ks, self.scores):
                w.writerow([int(k), repr(float(s)), int(k in top)])


def score_sweep(X, labeled_idx, labeled_gt, cfg: EstimatorConfig) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    root = RngStream(cfg.seed)
    lo, hi = cfg.k_range(len(np.unique(labeled_gt)))
    if hi > len(X):
        raise ValueError(f"k_max ({hi}) exceeds the number of samples ({len(X)})")
    ks = np.arange(lo, hi + 1)
    scores = np.empty(len(ks))
    for i, k in enumerate(ks):
        runs = [labeled_cluster_score(kmeans(X, int(k), root.child(int(k), r)), X,
                                      labeled_idx, labeled_gt, cfg.reassign)
                for r in range(cfg.runs_per_k)]
        scores[i] = np.mean(runs)
    return ks, scores


def estimate_class_count(X, labeled_idx, labeled_gt, cfg: EstimatorConfig) -> EstimateResult:
    """Rounded mean of the ``top_values`` k's with the highest mean labeled score.

    Ties in score go to the smaller k.
    """
    ks, scores = score_sweep(X, labeled_idx, labeled_gt, cfg)
    order = np.lexsort((ks, -scores))
    top = ks[order[:cfg.top_values]]
    return EstimateResult(estimate=int(round(float(top.mean()))), ks=ks, scores=scores,
                          top_ks=np.sort(top))
