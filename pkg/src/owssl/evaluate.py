"""Hungarian matching and open-world accuracy metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching on a square matrix.

    Shortest-augmenting-path Kuhn-Munkres with row/column potentials, O(n^3).
    Returns ``(assignment, total)`` with ``assignment[i]`` the column matched
    to row ``i``.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix must be finite")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0

    # 1-based arrays; column 0 is a virtual start column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=np.int64)  # match_col[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match_col[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1

    assignment = np.empty(n, dtype=np.int64)
    assignment[match_col[1:] - 1] = np.arange(n)
    total = float(a[np.arange(n), assignment].sum())
    return assignment, total


@dataclass
class MatchResult:
    """``mapping[c]`` is the ground-truth class matched to predicted cluster ``c``."""

    mapping: np.ndarray
    total_matched_correct: int


def contingency(pred, gt, size: int) -> np.ndarray:
    W = np.zeros((size, size), dtype=np.int64)
    np.add.at(W, (pred, gt), 1)
    return W


def clustering_accuracy(pred, gt, num_classes: int | None = None) -> tuple[float, MatchResult]:
    """Best accuracy over one-to-one relabelings of the predicted clusters."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.size == 0:
        raise ValueError("empty prediction vector")
    if pred.shape != gt.shape:
        raise ValueError("pred and gt must have the same length")
    if pred.min() < 0 or gt.min() < 0:
        raise ValueError("ids must be non-negative")
    size = max(int(pred.max()), int(gt.max())) + 1
    if num_classes is not None:
        size = max(size, num_classes)
    W = contingency(pred, gt, size)
    mapping, neg = hungarian(-W)
    correct = int(-neg)
    return correct / pred.size, MatchResult(mapping=mapping, total_matched_correct=correct)


@dataclass
class EvalReport:
    seen_acc: float
    novel_acc: float
    all_acc: float
    confusion: np.ndarray
    removed_count: int

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or np.isnan(x) else float(x)

        return {
            "seen_acc": num(self.seen_acc),
            "novel_acc": num(self.novel_acc),
            "all_acc": num(self.all_acc),
            "removed_count": int(self.removed_count),
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def confusion_csv(self, path) -> None:
        k = self.confusion.shape[0]
        with open(path, "w") as fh:
            fh.write("true_class," + ",".join(f"pred_{j}" for j in range(k)) + "\n")
            for i, row in enumerate(self.confusion):
                fh.write(f"{i}," + ",".join(str(int(c)) for c in row) + "\n")


def open_world_report(pred, gt, seen_count: int, novel_count: int) -> EvalReport:
    """Seen accuracy, novel clustering accuracy and all-class clustering accuracy.

    Novel-class samples predicted as a seen class are removed before matching
    and still count as errors in the novel denominator. Predicted cluster ids
    may exceed the true class count (over-sized heads).
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    C = seen_count + novel_count
    if gt.size and (gt.min() < 0 or gt.max() >= C):
        raise ValueError("ground-truth id out of range")

    seen_mask = gt < seen_count
    seen_acc = float(np.mean(pred[seen_mask] == gt[seen_mask])) if seen_mask.any() else float("nan")

    novel_mask = ~seen_mask
    removed = int(np.sum(novel_mask & (pred < seen_count)))
    if novel_mask.any():
        keep = novel_mask & (pred >= seen_count)
        if keep.any():
            _, m = clustering_accuracy(pred[keep] - seen_count, gt[keep] - seen_count)
            novel_acc = m.total_matched_correct / int(novel_mask.sum())
        else:
            novel_acc = 0.0
    else:
        novel_acc = float("nan")

    size = max(C, int(pred.max()) + 1 if pred.size else C)
    all_acc, match = clustering_accuracy(pred, gt, size)
    mapped = match.mapping[pred]
    confusion = contingency(gt, mapped, size)
    return EvalReport(seen_acc=seen_acc, novel_acc=novel_acc, all_acc=all_acc,
                      confusion=confusion, removed_count=removed)
