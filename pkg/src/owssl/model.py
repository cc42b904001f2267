"""Small softmax classifier with an l2-normalized head and hand-written gradients.

Architecture: optional ReLU hidden layer, then logits ``z_j = h . w_j / |w_j|``
with no head bias. Training uses SGD with momentum and a per-epoch cosine
schedule with linear warmup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_rng
from .tensorio import read_tensors, write_tensors

CHECKPOINT_FORMAT = "owssl-params"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Classifier weights. ``hidden_w`` is ``None`` for the linear variant."""

    head_w: np.ndarray
    hidden_w: np.ndarray | None = None
    hidden_b: np.ndarray | None = None
    # fixed affine input standardization, never trained
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.head_w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.head_w.shape[1] if self.hidden_w is None else self.hidden_w.shape[0]

    def trainable(self) -> dict[str, np.ndarray]:
        out = {"head_w": self.head_w}
        if self.hidden_w is not None:
            out["hidden_w"] = self.hidden_w
            out["hidden_b"] = self.hidden_b
        return out

    def named(self) -> dict[str, np.ndarray]:
        out = self.trainable()
        if self.input_shift is not None:
            out["input_shift"] = self.input_shift
            out["input_scale"] = self.input_scale
        return out

    def standardize(self, X: np.ndarray) -> np.ndarray:
        if self.input_shift is None:
            return X
        return (X - self.input_shift) / self.input_scale

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray]) -> "ModelParams":
        return cls(
            head_w=np.asarray(tensors["head_w"], dtype=np.float64),
            hidden_w=tensors.get("hidden_w"),
            hidden_b=tensors.get("hidden_b"),
            input_shift=tensors.get("input_shift"),
            input_scale=tensors.get("input_scale"),
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_named({k: v.copy() for k, v in self.named().items()})


def fit_standardizer(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and one global scale (root-mean-square distance to the mean)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    shift = X.mean(axis=0)
    scale = np.sqrt(((X - shift) ** 2).sum(axis=1).mean())
    return shift, np.asarray(scale if scale > 0 else 1.0)


def init_params(input_dim: int, num_classes: int, hidden: int | None = 64, rng=None,
                head_std: float = 0.01, hidden_scale: float = 1.0,
                standardizer: tuple[np.ndarray, np.ndarray] | None = None) -> ModelParams:
    """He-normal hidden layer (times ``hidden_scale``), small Gaussian head."""
    g = as_rng(rng)
    if hidden:
        std = hidden_scale * math.sqrt(2.0 / input_dim)
        hidden_w = g.normal(0.0, std, size=(input_dim, hidden))
        hidden_b = np.zeros(hidden)
        head_in = hidden
    else:
        hidden_w = hidden_b = None
        head_in = input_dim
    head_w = g.normal(0.0, head_std, size=(num_classes, head_in))
    shift, scale = standardizer if standardizer is not None else (None, None)
    return ModelParams(head_w=head_w, hidden_w=hidden_w, hidden_b=hidden_b,
                       input_shift=shift, input_scale=scale)


def _normalized_head(head_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(head_w, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("head row with zero norm cannot be normalized")
    return head_w / norms, norms


def _features(params: ModelParams, X: np.ndarray):
    if params.hidden_w is None:
        return X, None
    pre = X @ params.hidden_w + params.hidden_b
    return np.maximum(pre, 0.0), pre


def forward(params: ModelParams, X) -> np.ndarray:
    """Logits for a batch ``X`` of shape (B, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_dim:
        raise ValueError(f"input has {X.shape[1]} features, model expects {params.input_dim}")
    h, _ = _features(params, params.standardize(X))
    V, _ = _normalized_head(params.head_w)
    return h @ V.T


def ce_loss_and_grad(params: ModelParams, X, Y, u=None):
    """Cross-entropy of ``softmax(z_i / u_i)`` against label rows ``Y``.

    Returns ``(loss, grads)`` where ``grads`` maps parameter names to arrays
    shaped like the parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    B = X.shape[0]
    if X.shape[1] != params.input_dim:
        raise ValueError(f"input has {X.shape[1]} features, model expects {params.input_dim}")
    if Y.shape != (B, params.num_classes):
        raise ValueError(f"labels have shape {Y.shape}, expected {(B, params.num_classes)}")
    u = np.ones(B) if u is None else np.broadcast_to(np.asarray(u, dtype=np.float64), (B,))
    if np.any(u <= 0):
        raise ValueError("per-sample temperatures must be positive")

    X = params.standardize(X)
    h, pre = _features(params, X)
    V, norms = _normalized_head(params.head_w)
    z = h @ V.T
    s = z / u[:, None]
    s = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
    log_p = s - lse
    p = np.exp(log_p)
    loss = float(-(Y * log_p).sum() / B)

    dz = (p * Y.sum(axis=1, keepdims=True) - Y) / (B * u[:, None])
    dV = dz.T @ h
    # back through w / |w|: remove the radial component, rescale by 1/|w|
    d_head = (dV - V * (V * dV).sum(axis=1, keepdims=True)) / norms
    grads = {"head_w": d_head}
    if params.hidden_w is not None:
        dh = (dz @ V) * (pre > 0)
        grads["hidden_w"] = X.T @ dh
        grads["hidden_b"] = dh.sum(axis=0)
    return loss, grads


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    base_lr: float = 0.1
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, **kw) -> "OptimizerState":
        st = cls(**kw)
        st.buffers = {k: np.zeros_like(v) for k, v in params.trainable().items()}
        return st


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], opt: OptimizerState,
             lr: float) -> ModelParams:
    """``v <- mu v + g + wd w``; ``w <- w - lr v``. Updates ``opt.buffers`` in place."""
    new = params.named()
    for name, w in params.trainable().items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        v = opt.buffers.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = opt.momentum * v + g + opt.weight_decay * w
        opt.buffers[name] = v
        new[name] = w - lr * v
    return ModelParams.from_named(new)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 0.1
    warmup_epochs: int = 10
    total_epochs: int = 100

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Linear warmup to ``base_lr``, then half-cosine decay toward zero."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    w = schedule.warmup_epochs
    if epoch < w:
        return schedule.base_lr * (epoch + 1) / w
    frac = (epoch - w) / (schedule.total_epochs - w)
    return 0.5 * schedule.base_lr * (1.0 + math.cos(math.pi * frac))


def save_checkpoint(path, params: ModelParams) -> None:
    write_tensors(path, params.named(), kind=CHECKPOINT_FORMAT, version=CHECKPOINT_VERSION)


def load_checkpoint(path) -> ModelParams:
    tensors, meta = read_tensors(path)
    if meta.get("kind") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a parameter checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    return ModelParams.from_named(tensors)
