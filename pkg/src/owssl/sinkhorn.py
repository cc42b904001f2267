"""Class-distribution-aware pseudo-labels via Sinkhorn-Knopp scaling.

Unlabeled predictions ``Y_hat`` (N x C) are turned into a transport plan
``A`` whose rows sum to ``1/N`` and whose column ``j`` sums to the prior
fraction assigned to that column. Seen columns keep their own prior entry;
novel prior entries are matched to novel columns by ranking predicted
marginals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ZERO_CLAMP = 1e-30


@dataclass(frozen=True)
class ClassPrior:
    """Expected class fractions over seen + novel classes (seen first)."""

    fractions: np.ndarray
    seen_count: int
    novel_count: int

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=np.float64).copy()
        f.setflags(write=False)
        object.__setattr__(self, "fractions", f)
        if f.ndim != 1 or len(f) != self.seen_count + self.novel_count:
            raise ValueError(
                f"prior has {f.size} entries, expected {self.seen_count + self.novel_count}"
            )
        if self.seen_count < 0 or self.novel_count < 0:
            raise ValueError("class counts must be non-negative")
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise ValueError("prior fractions must be finite and non-negative")
        if abs(f.sum() - 1.0) > 1e-9:
            raise ValueError(f"prior fractions sum to {f.sum()!r}, not 1")

    @property
    def num_classes(self) -> int:
        return self.seen_count + self.novel_count

    @classmethod
    def balanced(cls, seen_count: int, novel_count: int) -> "ClassPrior":
        c = seen_count + novel_count
        return cls(np.full(c, 1.0 / c), seen_count, novel_count)

    @classmethod
    def from_counts(cls, counts, seen_count: int) -> "ClassPrior":
        counts = np.asarray(counts, dtype=np.float64)
        return cls(counts / counts.sum(), seen_count, len(counts) - seen_count)


@dataclass(frozen=True)
class SinkhornConfig:
    """``lam`` is the exponent applied to ``Y_hat / N`` before scaling.

    ``lam=0.05`` with ``entropic=False`` is the literal power kernel. With
    ``entropic=True`` the kernel is ``exp(log(Y_hat / N) / lam)``, i.e. the
    exponent is ``1 / lam`` and ``lam`` acts as an entropic regularization
    strength.
    """

    lam: float = 0.05
    iterations: int = 3
    hard_threshold: float = 0.5
    entropic: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.hard_threshold <= 1.0:
            raise ValueError("hard_threshold must be in [0, 1]")

    @property
    def exponent(self) -> float:
        return 1.0 / self.lam if self.entropic else self.lam


@dataclass
class AssignmentMatrix:
    """Joint transport plan; ``permutation[j]`` is the prior index used for column j."""

    A: np.ndarray
    permutation: np.ndarray

    def column_targets(self, prior: ClassPrior) -> np.ndarray:
        return prior.fractions[self.permutation]


@dataclass
class PseudoLabelBatch:
    labels: np.ndarray
    is_hard: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def _check_predictions(Y_hat, prior: ClassPrior) -> np.ndarray:
    Y = np.asarray(Y_hat, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError("Y_hat must be a 2-D matrix")
    if Y.shape[1] != prior.num_classes:
        raise ValueError(
            f"Y_hat has {Y.shape[1]} columns but prior covers {prior.num_classes} classes"
        )
    if not np.all(np.isfinite(Y)) or np.any(Y < 0):
        raise ValueError("Y_hat must be finite and non-negative")
    return Y


def estimate_permutation(Y_hat, prior: ClassPrior) -> np.ndarray:
    """Align novel prior fractions with novel columns by marginal rank.

    The novel column with the k-th largest predicted marginal receives the
    k-th largest novel prior fraction. Seen columns map to themselves. Ties
    are broken by column index, and columns that end up with equal fractions
    keep their own index where possible, so a balanced prior gives identity.
    """
    Y = _check_predictions(Y_hat, prior)
    s = prior.seen_count
    perm = np.arange(prior.num_classes)
    if prior.novel_count <= 1:
        return perm

    marginals = Y[:, s:].sum(axis=0)
    novel_prior = prior.fractions[s:]
    col_rank = np.argsort(-marginals, kind="stable")
    prior_rank = np.argsort(-novel_prior, kind="stable")
    value_for_col = np.empty_like(novel_prior)
    value_for_col[col_rank] = novel_prior[prior_rank]

    # among equal values, pair columns and prior indices in ascending order
    novel_perm = np.empty(prior.novel_count, dtype=np.int64)
    for v in np.unique(novel_prior):
        cols = np.flatnonzero(value_for_col == v)
        idxs = np.flatnonzero(novel_prior == v)
        novel_perm[cols] = idxs
    perm[s:] = novel_perm + s
    return perm


def sinkhorn_assign(
    Y_hat,
    prior: ClassPrior,
    cfg: SinkhornConfig = SinkhornConfig(),
    permutation=None,
) -> AssignmentMatrix:
    """Scale ``(Y_hat / N) ** exponent`` onto the prior's transport polytope.

    Alternates ``m <- r / (K n)`` and ``n <- c / (K^T m)`` for
    ``cfg.iterations`` rounds with ``r = 1/N`` and ``c`` the permuted prior.
    The returned plan has exact column marginals; row marginals converge
    as the iteration count grows.
    """
    Y = _check_predictions(Y_hat, prior)
    N = Y.shape[0]
    if N == 0:
        raise ValueError("Y_hat has no rows")
    perm = estimate_permutation(Y, prior) if permutation is None else np.asarray(permutation)
    col_target = prior.fractions[perm]
    row_target = np.full(N, 1.0 / N)

    log_k = cfg.exponent * np.log(np.maximum(Y, ZERO_CLAMP) / N)
    # per-row shifts are absorbed by m and keep the kernel representable
    log_k -= log_k.max(axis=1, keepdims=True)
    K = np.exp(log_k)

    n = np.ones(Y.shape[1])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for it in range(cfg.iterations):
            m = row_target / (K @ n)
            n = col_target / (K.T @ m)
            # zero-target columns: any n works; keep them at zero mass
            n[col_target == 0] = 0.0
            if not (np.all(np.isfinite(m)) and np.all(np.isfinite(n))):
                raise FloatingPointError(f"Sinkhorn scaling produced NaN/inf at iteration {it}")
    A = m[:, None] * K * n[None, :]
    return AssignmentMatrix(A=A, permutation=perm)


def mixed_pseudo_labels(
    assignment: AssignmentMatrix,
    prior: ClassPrior,
    cfg: SinkhornConfig = SinkhornConfig(),
) -> PseudoLabelBatch:
    """Row-normalize the plan; harden rows confidently assigned to a novel class.

    A row becomes one-hot when its argmax column is novel and the
    row-normalized maximum reaches ``cfg.hard_threshold``. Columns of the
    plan are already in model-output order, so no un-permuting is needed.
    """
    A = np.asarray(assignment.A, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] != prior.num_classes:
        raise ValueError("assignment shape does not match prior")
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise ValueError("assignment has negative or non-finite entries")
    sums = A.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValueError("assignment has an all-zero row")
    soft = A / sums
    top = soft.argmax(axis=1)
    hard = (top >= prior.seen_count) & (soft[np.arange(len(soft)), top] >= cfg.hard_threshold)
    labels = soft.copy()
    if hard.any():
        labels[hard] = 0.0
        labels[np.flatnonzero(hard), top[hard]] = 1.0
    return PseudoLabelBatch(labels=labels, is_hard=hard)


def transport_objective(A, Y_hat) -> float:
    """Cross-entropy transport cost ``-Tr(A^T log(Y_hat / N))``."""
    Y = np.maximum(np.asarray(Y_hat, dtype=np.float64), ZERO_CLAMP)
    return float(-(np.asarray(A) * np.log(Y / Y.shape[0])).sum())
