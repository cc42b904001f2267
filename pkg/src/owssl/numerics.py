"""Shared numeric primitives: stable softmax, entropy, and a splittable RNG."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PROB_ATOL = 1e-9


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    The stream is a value: every call to :meth:`generator` starts from the
    beginning of the same Philox sequence, so two holders of equal streams
    draw identical numbers. Use :meth:`child` to derive independent streams
    for sub-tasks (epochs, steps, samples) instead of sharing a generator.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *path: int) -> "RngStream":
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id, *path]
        state = np.random.SeedSequence(entropy).generate_state(1, np.uint64)
        return RngStream(self.seed, int(state[0]))


def as_rng(rng: RngStream | np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(0 if rng is None else int(rng)).generator()


def softmax(z, temperature=1.0) -> np.ndarray:
    """Row-wise ``exp(z / t) / sum(exp(z / t))`` with max-subtraction.

    ``z`` may be a vector or a 2-D batch; ``temperature`` may be a scalar or
    one value per row.
    """
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(temperature, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite values")
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("softmax temperature must be positive and finite")
    if z.ndim == 2 and t.ndim == 1:
        t = t[:, None]
    s = z / t
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def check_prob_vector(p, atol: float = _PROB_ATOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a non-empty 1-D probability vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probability vector has negative or non-finite entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"probability vector sums to {p.sum()!r}, not 1")
    return p


def entropy(p) -> float:
    """Shannon entropy in nats, with ``0 * log 0 = 0``."""
    p = check_prob_vector(p)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def sample_beta(rng, alpha: float, beta: float, size=None):
    """Draw from Beta(alpha, beta).

    Delegates to numpy's generator (Johnk's algorithm below 1, Cheng's
    otherwise); reproducible for a fixed :class:`RngStream`.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("Beta parameters must be positive")
    return as_rng(rng).beta(alpha, beta, size=size)
