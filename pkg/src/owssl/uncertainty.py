"""Per-sample uncertainty from prediction variance under random input transforms.

The variance is reduced to a scalar, normalized by the population maximum and
clipped, and then used as that sample's softmax temperature during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import softmax

REDUCTIONS = ("mean", "max", "predicted")


@dataclass(frozen=True)
class UncertaintyConfig:
    mc_samples: int = 10
    clip_lo: float = 0.1
    clip_hi: float = 1.0
    reduction: str = "mean"

    def __post_init__(self):
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be >= 2")
        if not 0 < self.clip_lo < self.clip_hi:
            raise ValueError("need 0 < clip_lo < clip_hi")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")


def population_variance(preds) -> np.ndarray:
    """Variance over axis 0 with divisor ``T`` (the number of draws)."""
    P = np.asarray(preds, dtype=np.float64)
    if P.shape[0] < 2:
        raise ValueError("need at least two draws")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise ValueError("predictions must be finite and non-negative")
    if np.any(np.abs(P.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("predictions are not probability distributions")
    mean = P.mean(axis=0)
    return ((P - mean) ** 2).mean(axis=0)


def mc_variance(predict, x, augmenter, cfg: UncertaintyConfig, rng) -> np.ndarray:
    """Per-class variance of ``predict(augmenter(x, rng_t))`` over ``cfg.mc_samples`` draws.

    ``predict`` maps an input (or batch) to probabilities; ``augmenter`` is
    called as ``augmenter(x, rng)`` with a fresh child stream per draw.
    ``x`` may be a single sample or a batch (rows).
    """
    draws = [np.asarray(predict(augmenter(x, rng.child(t))), dtype=np.float64)
             for t in range(cfg.mc_samples)]
    return population_variance(np.stack(draws))


def reduce_uncertainty(var, reduction: str = "mean", mean_pred=None):
    """Collapse per-class variances (last axis) to one scalar per sample."""
    v = np.asarray(var, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise ValueError("empty variance vector")
    if np.any(v < 0):
        raise ValueError("variances must be non-negative")
    if reduction == "mean":
        return v.mean(axis=-1)
    if reduction == "max":
        return v.max(axis=-1)
    if reduction == "predicted":
        if mean_pred is None:
            raise ValueError("'predicted' reduction needs the mean prediction")
        idx = np.asarray(mean_pred).argmax(axis=-1)
        return np.take_along_axis(v, np.expand_dims(idx, -1), axis=-1)[..., 0]
    raise ValueError(f"unknown reduction {reduction!r}")


def normalize_and_clip(raw, cfg: UncertaintyConfig = UncertaintyConfig()) -> np.ndarray:
    """Scale by the population max, then clamp into ``[clip_lo, clip_hi]``.

    An all-zero population means every sample is fully certain and maps to
    ``clip_lo``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValueError("raw uncertainties must be finite and non-negative")
    top = raw.max() if raw.size else 0.0
    if top <= 0:
        return np.full(raw.shape, cfg.clip_lo)
    return np.clip(raw / top, cfg.clip_lo, cfg.clip_hi)


def uncertainty_softmax(z, u) -> np.ndarray:
    """Softmax of ``z / u``; ``u`` is a per-sample temperature."""
    if np.any(np.asarray(u) <= 0):
        raise ValueError("uncertainty temperature must be positive")
    return softmax(z, temperature=u)


@dataclass
class UncertaintyStore:
    """Temperatures for every labeled and unlabeled training sample."""

    labeled: np.ndarray
    unlabeled: np.ndarray
    default_temperature: float = 0.1

    @classmethod
    def initial(cls, n_labeled: int, n_unlabeled: int, temperature: float = 0.1):
        return cls(np.full(n_labeled, temperature), np.full(n_unlabeled, temperature),
                   temperature)
