"""Synthetic Gaussian-mixture data with seen/novel splits, augmentation and mixup."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import RngStream, as_rng, sample_beta
from .tensorio import read_tensors, write_tensors

DATASET_FORMAT = "owssl-dataset"
DATASET_VERSION = 1
SPLITS = ("labeled", "unlabeled", "test", "mean")


@dataclass(frozen=True)
class DatasetSpec:
    dim: int = 8
    num_seen: int = 3
    num_novel: int = 3
    samples_per_class: int = 500
    labeled_fraction: float = 0.1
    imbalance_factor: float = 1.0
    class_sep: float = 6.0
    sigma: float = 1.0
    test_per_class: int = 100
    seed: int = 0
    # novel-class-discovery split: every seen sample is labeled
    novel_only_unlabeled: bool = False

    def __post_init__(self):
        if self.num_seen < 1:
            raise ValueError("need at least one seen class")
        if self.num_novel < 0:
            raise ValueError("num_novel must be >= 0")
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must be in (0, 1]")
        if self.imbalance_factor < 1:
            raise ValueError("imbalance_factor must be >= 1")
        if self.dim < 1 or self.samples_per_class < 1:
            raise ValueError("dim and samples_per_class must be positive")

    @property
    def num_classes(self) -> int:
        return self.num_seen + self.num_novel


@dataclass
class SplitDataset:
    """Labeled seen-class samples, unlabeled samples from every class, a test split.

    ``y_u`` and ``y_test`` are ground truth for evaluation only; training code
    never reads ``y_u``.
    """

    X_l: np.ndarray
    y_l: np.ndarray
    X_u: np.ndarray
    y_u: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    class_means: np.ndarray
    num_seen: int

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def num_novel(self) -> int:
        return self.num_classes - self.num_seen

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @property
    def Y_l(self) -> np.ndarray:
        return np.eye(self.num_classes)[self.y_l]

    def unlabeled_class_counts(self) -> np.ndarray:
        return np.bincount(self.y_u, minlength=self.num_classes)


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.5
    scale_jitter: tuple[float, float] = (0.9, 1.1)
    mask_prob: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.scale_jitter
        if lo > hi:
            raise ValueError("scale_jitter must be (low, high) with low <= high")
        if not 0 <= self.mask_prob <= 1:
            raise ValueError("mask_prob must be in [0, 1]")


def class_counts(n_max: int, num_classes: int, imbalance_factor: float) -> np.ndarray:
    """Exponential long-tail profile ``round(n_max * IF ** (-j / (C - 1)))``."""
    if num_classes == 1:
        return np.array([n_max])
    j = np.arange(num_classes)
    return np.rint(n_max * imbalance_factor ** (-j / (num_classes - 1))).astype(np.int64)


def spread_on_sphere(num_points: int, dim: int, radius: float, rng, steps: int = 500) -> np.ndarray:
    """Approximately max-min separated points on a sphere via projected repulsion."""
    g = as_rng(rng)
    P = g.normal(size=(num_points, dim))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    if num_points == 1:
        return P * radius
    if num_points == 2:
        P[1] = -P[0]
        return P * radius
    for t in range(steps):
        diff = P[:, None, :] - P[None, :, :]
        dist = np.linalg.norm(diff, axis=2) + np.eye(num_points)
        force = (diff / dist[..., None] ** 8).sum(axis=1)
        step = 0.05 * (1 - t / steps) + 1e-3
        P = P + step * force / (np.linalg.norm(force, axis=1, keepdims=True) + 1e-12)
        P /= np.linalg.norm(P, axis=1, keepdims=True)
    return P * radius


def generate(spec: DatasetSpec, rng: RngStream | None = None) -> SplitDataset:
    """Draw a Gaussian-mixture dataset; classes ``0..num_seen-1`` are seen."""
    root = RngStream(spec.seed) if rng is None else rng
    C, d = spec.num_classes, spec.dim
    counts = class_counts(spec.samples_per_class, C, spec.imbalance_factor)
    if np.any(counts < 1):
        raise ValueError(
            f"class sizes {counts.tolist()} include empty classes; increase samples_per_class"
        )
    radius = spec.class_sep * spec.sigma * np.sqrt(d)
    means = spread_on_sphere(C, d, radius, root.child(0))

    g = root.child(1).generator()
    X_l, y_l, X_u, y_u = [], [], [], []
    for j in range(C):
        X = means[j] + spec.sigma * g.normal(size=(counts[j], d))
        if j < spec.num_seen:
            n_lab = min(counts[j], max(1, int(round(spec.labeled_fraction * counts[j]))))
            if spec.novel_only_unlabeled:
                n_lab = counts[j]
            X_l.append(X[:n_lab])
            y_l.append(np.full(n_lab, j))
            X, n = X[n_lab:], counts[j] - n_lab
        else:
            n = counts[j]
        X_u.append(X)
        y_u.append(np.full(n, j))
    X_l, y_l = np.concatenate(X_l), np.concatenate(y_l)
    X_u, y_u = np.concatenate(X_u), np.concatenate(y_u)
    order = g.permutation(len(X_u))
    X_u, y_u = X_u[order], y_u[order]

    gt = root.child(2).generator()
    y_test = np.repeat(np.arange(C), spec.test_per_class)
    X_test = means[y_test] + spec.sigma * gt.normal(size=(len(y_test), d))
    return SplitDataset(X_l=X_l, y_l=y_l, X_u=X_u, y_u=y_u, X_test=X_test, y_test=y_test,
                        class_means=means, num_seen=spec.num_seen)


def augment(x, cfg: AugmentConfig, rng) -> np.ndarray:
    """``mask * (s * x + eps)``, drawn independently for every row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = as_rng(rng)
    rows = x.reshape(-1, x.shape[-1])
    lo, hi = cfg.scale_jitter
    s = g.uniform(lo, hi, size=(rows.shape[0], 1)) if hi > lo else np.full((rows.shape[0], 1), lo)
    out = s * rows
    if cfg.noise_sigma > 0:
        out = out + cfg.noise_sigma * g.normal(size=rows.shape)
    if cfg.mask_prob > 0:
        out = out * (g.random(rows.shape) >= cfg.mask_prob)
    return out.reshape(x.shape)


def mixup(X, Y, u, gamma: float, rng):
    """Convexly mix each row with a uniformly drawn partner row.

    The same weight ``lam_i ~ Beta(gamma, gamma)`` mixes inputs, label rows
    and uncertainties of row ``i``. Returns ``(X_m, Y_m, u_m)``.
    """
    X, Y, u = (np.asarray(a, dtype=np.float64) for a in (X, Y, u))
    n = X.shape[0]
    if not (Y.shape[0] == n and u.shape[0] == n):
        raise ValueError("mixup inputs are not row-aligned")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if n < 2:
        return X.copy(), Y.copy(), u.copy()
    g = as_rng(rng)
    lam = sample_beta(g, gamma, gamma, size=n)
    partner = g.integers(0, n, size=n)
    return mix_rows(X, Y, u, lam, partner)


def mix_rows(X, Y, u, lam, partner):
    lam = np.asarray(lam, dtype=np.float64)
    lx = lam.reshape(-1, 1)
    X_m = lx * X + (1 - lx) * X[partner]
    Y_m = lx * Y + (1 - lx) * Y[partner]
    u_m = lam * u + (1 - lam) * u[partner]
    return X_m, Y_m, u_m


def to_csv(ds: SplitDataset, path) -> None:
    """Header ``f0..f{d-1},class,split``; class means stored as ``split=mean`` rows."""
    d = ds.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(d)] + ["class", "split"])
        for split, X, y in (
            ("labeled", ds.X_l, ds.y_l),
            ("unlabeled", ds.X_u, ds.y_u),
            ("test", ds.X_test, ds.y_test),
            ("mean", ds.class_means, np.arange(ds.num_classes)),
        ):
            for row, c in zip(X, y):
                w.writerow([repr(float(v)) for v in row] + [int(c), split])


def from_csv(path) -> SplitDataset:
    parts = {s: ([], []) for s in SPLITS}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[-2:] != ["class", "split"]:
            raise ValueError(f"{path}: unexpected header {header}")
        d = len(header) - 2
        for row in r:
            split = row[-1]
            if split not in parts:
                raise ValueError(f"{path}: unknown split {split!r}")
            parts[split][0].append([float(v) for v in row[:d]])
            parts[split][1].append(int(row[d]))

    def arr(split):
        X, y = parts[split]
        return np.array(X, dtype=np.float64).reshape(-1, d), np.array(y, dtype=np.int64)

    X_l, y_l = arr("labeled")
    X_u, y_u = arr("unlabeled")
    X_t, y_t = arr("test")
    means, mean_ids = arr("mean")
    means = means[np.argsort(mean_ids)]
    return SplitDataset(X_l=X_l, y_l=y_l, X_u=X_u, y_u=y_u, X_test=X_t, y_test=y_t,
                        class_means=means, num_seen=len(np.unique(y_l)))


def save_binary(ds: SplitDataset, path) -> None:
    tensors = {k: v for k, v in asdict(ds).items() if k != "num_seen"}
    tensors["num_seen"] = np.array([ds.num_seen], dtype=np.int64)
    write_tensors(path, tensors, kind=DATASET_FORMAT, version=DATASET_VERSION)


def load_binary(path) -> SplitDataset:
    t, meta = read_tensors(path)
    if meta.get("kind") != DATASET_FORMAT:
        raise ValueError(f"{path} is not a dataset file")
    num_seen = int(t.pop("num_seen")[0])
    return SplitDataset(num_seen=num_seen, **t)
