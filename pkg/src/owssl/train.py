"""Open-world semi-supervised training loop.

Each step pseudo-labels two augmented views of an unlabeled batch with
Sinkhorn-Knopp, swaps the labels between views, hardens confident novel
assignments, concatenates the labeled batch, applies mixup and takes one SGD
step on the per-sample-temperature cross-entropy. Unlabeled temperatures are
refreshed from prediction variance at the end of every epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentConfig, SplitDataset, augment, mixup
from .evaluate import EvalReport, open_world_report
from .model import (
    LrSchedule,
    ModelParams,
    OptimizerState,
    ce_loss_and_grad,
    fit_standardizer,
    forward,
    init_params,
    lr_at,
    sgd_step,
)
from .numerics import RngStream, softmax
from .sinkhorn import ClassPrior, SinkhornConfig, mixed_pseudo_labels, sinkhorn_assign
from .uncertainty import (
    UncertaintyConfig,
    UncertaintyStore,
    normalize_and_clip,
    population_variance,
    reduce_uncertainty,
)

log = logging.getLogger(__name__)

PRIOR_MODES = ("oracle", "balanced", "estimated")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    sinkhorn: SinkhornConfig = SinkhornConfig(entropic=True)
    uncertainty: UncertaintyConfig = UncertaintyConfig()
    augment: AugmentConfig = AugmentConfig()
    temperature: float = 0.1
    base_lr: float = 0.1
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-4
    hidden: int = 64
    head_std: float = 0.01
    hidden_init_scale: float = 0.1
    standardize_inputs: bool = True
    labeled_batch_size: int | None = None
    mixup_gamma: float = 0.75
    prior_mode: str = "oracle"
    prior_update_interval: int = 10
    ncd_mode: bool = False
    num_novel_heads: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.prior_update_interval < 1:
            raise ValueError("prior_update_interval must be >= 1")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.labeled_batch_size is not None and self.labeled_batch_size < 1:
            raise ValueError("labeled_batch_size must be >= 1")

    def schedule(self) -> LrSchedule:
        total = max(self.epochs, 1)
        return LrSchedule(self.base_lr, min(self.warmup_epochs, total - 1), total)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    seen_acc: float
    novel_acc: float
    all_acc: float
    prior: list[float]


@dataclass
class TrainState:
    params: ModelParams
    opt: OptimizerState
    uncertainties: UncertaintyStore
    current_prior: ClassPrior
    epoch: int = 0
    history: list[EpochRecord] = field(default_factory=list)


def head_layout(ds: SplitDataset, cfg: TrainConfig) -> tuple[int, int]:
    novel = ds.num_novel if cfg.num_novel_heads is None else cfg.num_novel_heads
    return ds.num_seen, novel


def initial_prior(ds: SplitDataset, cfg: TrainConfig) -> ClassPrior:
    """Oracle prior from unlabeled class counts; otherwise uniform over the head."""
    seen, novel = head_layout(ds, cfg)
    if cfg.prior_mode == "oracle":
        if novel != ds.num_novel:
            raise ValueError("oracle prior needs the true number of novel classes")
        return ClassPrior.from_counts(ds.unlabeled_class_counts(), seen)
    return ClassPrior.balanced(seen, novel)


def init_state(ds: SplitDataset, cfg: TrainConfig) -> TrainState:
    seen, novel = head_layout(ds, cfg)
    standardizer = None
    if cfg.standardize_inputs:
        standardizer = fit_standardizer(np.concatenate([ds.X_l, ds.X_u]))
    params = init_params(ds.dim, seen + novel, cfg.hidden or None,
                         RngStream(cfg.seed).child(0), head_std=cfg.head_std,
                         hidden_scale=cfg.hidden_init_scale, standardizer=standardizer)
    opt = OptimizerState.for_params(params, momentum=cfg.momentum,
                                    weight_decay=cfg.weight_decay, base_lr=cfg.base_lr)
    store = UncertaintyStore.initial(len(ds.X_l), len(ds.X_u), cfg.temperature)
    return TrainState(params, opt, store, initial_prior(ds, cfg))


def predict_proba(params: ModelParams, X) -> np.ndarray:
    return softmax(forward(params, X))


def pseudo_label(params: ModelParams, X_view, prior: ClassPrior, cfg: TrainConfig) -> np.ndarray:
    """Sinkhorn pseudo-labels (mixed soft/hard) for one view of a batch."""
    probs = predict_proba(params, X_view)
    if cfg.ncd_mode:
        s = prior.seen_count
        novel = ClassPrior.from_counts(prior.fractions[s:], 0)
        assignment = sinkhorn_assign(probs[:, s:], novel, cfg.sinkhorn)
        pl = mixed_pseudo_labels(assignment, novel, cfg.sinkhorn).labels
        out = np.zeros_like(probs)
        out[:, s:] = pl
        return out
    assignment = sinkhorn_assign(probs, prior, cfg.sinkhorn)
    return mixed_pseudo_labels(assignment, prior, cfg.sinkhorn).labels


def build_step_batch(state: TrainState, X_l, Y_l, u_l, X_u, u_u, cfg: TrainConfig,
                     rng: RngStream):
    """Inputs, targets and temperatures for one step, before mixup."""
    X_parts, Y_parts, u_parts = [], [], []
    if len(X_l):
        X_parts.append(augment(X_l, cfg.augment, rng.child(0)))
        Y_parts.append(Y_l)
        u_parts.append(u_l)
    if len(X_u):
        v1 = augment(X_u, cfg.augment, rng.child(1))
        v2 = augment(X_u, cfg.augment, rng.child(2))
        pl1 = pseudo_label(state.params, v1, state.current_prior, cfg)
        pl2 = pseudo_label(state.params, v2, state.current_prior, cfg)
        # each view is supervised by the other view's pseudo-label
        X_parts += [v1, v2]
        Y_parts += [pl2, pl1]
        u_parts += [u_u, u_u]
    return np.concatenate(X_parts), np.concatenate(Y_parts), np.concatenate(u_parts)


def train_step(state: TrainState, labeled_batch, unlabeled_batch, cfg: TrainConfig,
               lr: float, rng: RngStream) -> float:
    """One SGD update; mutates ``state`` and returns the batch loss.

    ``labeled_batch`` is ``(X_l, Y_l, u_l)``; ``unlabeled_batch`` is
    ``(X_u, u_u)``. An empty unlabeled batch gives a supervised-only step.
    """
    X_l, Y_l, u_l = labeled_batch
    X_u, u_u = unlabeled_batch
    X, Y, u = build_step_batch(state, X_l, Y_l, u_l, X_u, u_u, cfg, rng)
    X_m, Y_m, u_m = mixup(X, Y, u, cfg.mixup_gamma, rng.child(3))
    loss, grads = ce_loss_and_grad(state.params, X_m, Y_m, u_m)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at epoch {state.epoch}")
    state.params = sgd_step(state.params, grads, state.opt, lr)
    return loss


def refresh_uncertainties(params: ModelParams, X_u, cfg: TrainConfig, rng: RngStream) -> np.ndarray:
    """Normalized, clipped prediction variance for every unlabeled sample."""
    if len(X_u) == 0:
        return np.zeros(0)
    draws = np.stack([predict_proba(params, augment(X_u, cfg.augment, rng.child(t)))
                      for t in range(cfg.uncertainty.mc_samples)])
    var = population_variance(draws)
    raw = reduce_uncertainty(var, cfg.uncertainty.reduction, mean_pred=draws.mean(axis=0))
    return normalize_and_clip(raw, cfg.uncertainty)


def floor_fractions(frac, floor: float) -> np.ndarray:
    """Raise entries below ``floor`` to it and rescale the rest so the total is 1."""
    frac = np.asarray(frac, dtype=np.float64)
    pinned = np.zeros(frac.shape, dtype=bool)
    out = frac.copy()
    while True:
        low = ~pinned & (out < floor)
        if not low.any():
            return out
        pinned |= low
        free = ~pinned
        out[pinned] = floor
        rest = frac[free].sum()
        out[free] = frac[free] * (1.0 - floor * pinned.sum()) / rest if rest > 0 else 0.0


def update_prior(prior: ClassPrior, unlabeled_probs) -> ClassPrior:
    """Posterior argmax histogram with every class floored at ``1 / (10 C)``."""
    P = np.asarray(unlabeled_probs)
    C = prior.num_classes
    if len(P) == 0:
        return prior
    counts = np.bincount(P.argmax(axis=1), minlength=C).astype(np.float64)
    frac = floor_fractions(counts / len(P), 1.0 / (10 * C))
    return ClassPrior(frac, prior.seen_count, prior.novel_count)


def evaluate_params(params: ModelParams, ds: SplitDataset) -> EvalReport:
    pred = forward(params, ds.X_test).argmax(axis=1)
    return open_world_report(pred, ds.y_test, ds.num_seen, ds.num_novel)


def labeled_batch_size(ds: SplitDataset, cfg: TrainConfig) -> int:
    """Labeled rows per step: explicit override, else the larger of the
    proportional share and a quarter of the unlabeled batch."""
    n_l, n = len(ds.X_l), len(ds.X_l) + len(ds.X_u)
    if not n_l:
        return 0
    if cfg.labeled_batch_size is not None:
        return cfg.labeled_batch_size
    proportional = math.ceil(cfg.batch_size * n_l / n)
    return max(1, proportional, cfg.batch_size // 4)


def run_epoch(state: TrainState, ds: SplitDataset, cfg: TrainConfig, lr: float,
              rng: RngStream) -> float:
    g = rng.child(0).generator()
    n_u = len(ds.X_u)
    Y_l_all = np.eye(state.params.num_classes)[ds.y_l] if len(ds.y_l) else \
        np.zeros((0, state.params.num_classes))
    bl = labeled_batch_size(ds, cfg)
    if n_u:
        steps = max(1, n_u // cfg.batch_size)
        u_order = g.permutation(n_u)
    else:
        steps = max(1, len(ds.X_l) // max(bl, 1))
        u_order = np.zeros(0, dtype=np.int64)
    l_order = g.permutation(len(ds.X_l))
    if bl and len(l_order) < bl * steps:
        reps = math.ceil(bl * steps / len(l_order))
        l_order = np.concatenate([l_order] + [g.permutation(len(ds.X_l)) for _ in range(reps)])

    losses = []
    for step in range(steps):
        ui = u_order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
        li = l_order[step * bl:(step + 1) * bl]
        labeled = (ds.X_l[li], Y_l_all[li], state.uncertainties.labeled[li])
        unlabeled = (ds.X_u[ui], state.uncertainties.unlabeled[ui])
        losses.append(train_step(state, labeled, unlabeled, cfg, lr, rng.child(1, step)))
    return float(np.mean(losses))


def train(ds: SplitDataset, cfg: TrainConfig, callback=None) -> tuple[ModelParams, list[EpochRecord]]:
    """Run the full schedule; returns final parameters and per-epoch records."""
    state = init_state(ds, cfg)
    if cfg.epochs == 0:
        return state.params, state.history
    schedule = cfg.schedule()
    root = RngStream(cfg.seed).child(1)
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        lr = lr_at(schedule, epoch)
        erng = root.child(epoch)
        try:
            loss = run_epoch(state, ds, cfg, lr, erng.child(0))
        except (ValueError, FloatingPointError) as exc:
            raise RuntimeError(f"training failed at epoch {epoch}: {exc}") from exc
        state.uncertainties.unlabeled = refresh_uncertainties(state.params, ds.X_u, cfg,
                                                              erng.child(1))
        if cfg.prior_mode == "estimated" and (epoch + 1) % cfg.prior_update_interval == 0:
            state.current_prior = update_prior(state.current_prior,
                                               predict_proba(state.params, ds.X_u))
        report = evaluate_params(state.params, ds)
        rec = EpochRecord(epoch, lr, loss, report.seen_acc, report.novel_acc, report.all_acc,
                          state.current_prior.fractions.tolist())
        state.history.append(rec)
        log.debug("epoch %d lr %.4f loss %.4f all %.4f", epoch, lr, loss, report.all_acc)
        if callback is not None:
            callback(state, rec)
    return state.params, state.history
