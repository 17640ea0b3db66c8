"""The nine fine-tuning strategies.

All strategies share one plain-gradient-descent loop over masked BCE/MSE;
they differ in which parameters may move (full / lp / surgical / lp_ft), in
an additive penalty (l2sp / feature_map / bss), or in post-hoc weight
interpolation (wise / dwise).  Every run records a per-epoch validation and
test curve so the caller can report the test metric at the best validation
epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Dataset, Split, batches, collate
from .errors import ConfigError, ContractViolationError, TrainingError, ValidationError
from .metrics import better, metric_value
from .model import (
    ParamSet,
    attach_head,
    encode,
    group_of,
    interpolate,
    layer_param_names,
    predict,
)
from .tensor import Tensor

STRATEGY_KINDS = (
    "full",
    "lp",
    "surgical",
    "lp_ft",
    "wise",
    "l2sp",
    "feature_map",
    "bss",
    "dwise",
)


@dataclass
class StrategyConfig:
    kind: str
    alpha: float = 0.5  # wise mixing coefficient
    alpha_init: float = 0.9  # dwise: shared initial per-layer coefficient
    alpha_lr: float = 0.01  # dwise: validation-descent step size
    alpha_epochs: int = 200  # dwise: validation-descent passes
    delta: float = 0.01  # l2sp / feature_map / bss strength
    k: int = 1  # surgical layer index, or bss smallest-value count
    epochs: int = 100
    learning_rate: float = 0.001
    dropout_rate: float = 0.5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.alpha_init <= 1.0:
            raise ConfigError(f"alpha_init must be in [0, 1], got {self.alpha_init}")
        if self.kind in ("l2sp", "feature_map", "bss") and self.delta <= 0.0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.kind == "bss" and self.k < 1:
            raise ConfigError(f"bss penalizes k >= 1 singular values, got {self.k}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")

    @staticmethod
    def from_dict(d: dict) -> "StrategyConfig":
        known = {f.name for f in fields(StrategyConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown strategy fields {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("strategy config requires a 'kind'")
        return StrategyConfig(**d)


@dataclass
class RunArtifacts:
    final_params: ParamSet
    epoch_val_metric: list[float]
    epoch_test_metric: list[float]
    best_epoch: int
    alphas: np.ndarray | None
    train_log: list[dict] = field(default_factory=list)

    @property
    def best_val(self) -> float:
        return self.epoch_val_metric[self.best_epoch]

    @property
    def best_test(self) -> float:
        return self.epoch_test_metric[self.best_epoch]


# ---------------------------------------------------------------------------
# penalties

def l2sp_penalty(theta: ParamSet, theta_pre: ParamSet, delta: float) -> Tensor:
    """(delta/2) * squared distance of the encoder+embed leaves from pretrained."""
    acc: Tensor | None = None
    for name in theta_pre.encoder_names():
        if name not in theta.params:
            raise ContractViolationError(f"parameter {name} missing from current set")
        cur = theta[name]
        ref = theta_pre.value_of(name)
        if cur.data.shape != ref.shape:
            raise ContractViolationError(f"shape mismatch for {name}")
        diff = T.sub(cur, T.constant(ref))
        term = T.tsum(T.mul(diff, diff))
        acc = term if acc is None else T.add(acc, term)
    assert acc is not None
    return T.mul(acc, 0.5 * delta)


def feature_map_penalty(f: Tensor, f_pre, delta: float) -> Tensor:
    """delta * sum over rows of half the squared embedding displacement."""
    f_pre = np.asarray(f_pre.data if isinstance(f_pre, Tensor) else f_pre)
    if f.data.shape != f_pre.shape:
        raise ContractViolationError(
            f"embedding shapes differ: {f.data.shape} vs {f_pre.shape}"
        )
    diff = T.sub(f, T.constant(f_pre))
    return T.mul(T.tsum(T.mul(diff, diff)), 0.5 * delta)


def bss_penalty(f: Tensor, k: int, delta: float) -> Tensor:
    """delta * sum of squares of the k smallest singular values of the batch matrix."""
    if k > min(f.data.shape):
        raise ContractViolationError(
            f"bss k={k} exceeds min dimension of {f.data.shape}"
        )
    tail = T.slice_tail(T.singular_values(f), k)
    return T.mul(T.tsum(T.mul(tail, tail)), delta)


def prediction_loss(scores: Tensor, labels, mask, task_kind: str) -> Tensor:
    if task_kind == "classification":
        return T.bce_with_logits(scores, labels, mask)
    return T.mse_loss(scores, labels, mask)


# ---------------------------------------------------------------------------
# evaluation

def evaluate(
    params: ParamSet, ds: Dataset, indices: Sequence[int], batch_size: int = 256
) -> float:
    """Metric of a parameter set on a subset, in eval mode (dropout off)."""
    if not indices:
        raise ValidationError("evaluate: empty index set")
    rows, labels, masks = [], [], []
    for batch in batches(ds, indices, batch_size, shuffle=False):
        emb = encode(batch, params, mode="eval")
        rows.append(predict(emb, params).data)
        labels.append(batch.labels)
        masks.append(batch.label_mask)
    return metric_value(
        np.concatenate(rows), np.concatenate(labels), np.concatenate(masks), ds.task_kind
    )


# ---------------------------------------------------------------------------
# the shared training loop

def _trainable_names(params: ParamSet, config: StrategyConfig, phase_kind: str) -> set[str]:
    head = {n for n in params.params if n.startswith("head.")}
    if phase_kind == "lp":
        return head
    if phase_kind == "surgical":
        if not 0 <= config.k < params.arch.num_layers:
            raise ConfigError(
                f"surgical layer k={config.k} outside [0, {params.arch.num_layers})"
            )
        return layer_param_names(params, config.k) | head
    return set(params.params)


def _train(
    params: ParamSet,
    pretrained: ParamSet,
    ds: Dataset,
    split: Split,
    config: StrategyConfig,
    task_kind: str,
    phase_kind: str,
    log: list[dict],
):
    """Gradient descent on the train split with the phase's trainable set.

    Returns (best_params, last_params, val_curve, test_curve, best_epoch).
    """
    trainable = {n: params[n] for n in sorted(_trainable_names(params, config, phase_kind))}
    penalized = phase_kind in ("l2sp", "feature_map", "bss")
    frozen_pre = pretrained.copy(requires_grad=False) if phase_kind == "feature_map" else None

    val_curve: list[float] = []
    test_curve: list[float] = []
    best_epoch = 0
    best_params = params.copy()
    for epoch in range(config.epochs):
        epoch_losses = []
        train_batches = batches(
            ds, split.train, config.batch_size, config.seed, epoch
        )
        for b_i, batch in enumerate(train_batches):
            if not batch.label_mask.any():
                continue  # nothing observed; no gradient signal
            emb = encode(
                batch,
                params,
                mode="train",
                dropout_rate=config.dropout_rate,
                rng_key=(config.seed, epoch, b_i),
            )
            scores = predict(emb, params)
            loss = prediction_loss(scores, batch.labels, batch.label_mask, task_kind)
            if penalized:
                loss = T.add(loss, _penalty(phase_kind, config, params, pretrained, frozen_pre, batch, emb))
            if not np.isfinite(loss.data):
                raise TrainingError("non-finite training loss", epoch=epoch, batch=b_i)
            grads = T.grad(loss, trainable)
            for name, p in trainable.items():
                p.data = p.data - config.learning_rate * grads[name].data
            epoch_losses.append(float(loss.data))
        val = evaluate(params, ds, split.val)
        test = evaluate(params, ds, split.test)
        val_curve.append(val)
        test_curve.append(test)
        if epoch == 0 or better(val, val_curve[best_epoch], ds.task_kind):
            best_epoch = epoch
            best_params = params.copy()
        log.append(
            {
                "phase": phase_kind,
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                "val_metric": val,
                "test_metric": test,
            }
        )
    return best_params, params, val_curve, test_curve, best_epoch


def _penalty(phase_kind, config, params, pretrained, frozen_pre, batch, emb):
    if phase_kind == "l2sp":
        return l2sp_penalty(params, pretrained, config.delta)
    if phase_kind == "feature_map":
        pre_emb = encode(batch, frozen_pre, mode="eval")
        return feature_map_penalty(emb, pre_emb, config.delta)
    # bss: batches below 2 graphs carry no meaningful spectrum
    if batch.graph_count < 2:
        return T.constant(0.0)
    return bss_penalty(emb, config.k, config.delta)


# ---------------------------------------------------------------------------
# post-hoc interpolation helpers shared by wise / dwise and the bench driver

def interpolated_eval(
    pretrained: ParamSet,
    ft_params: ParamSet,
    alphas: Sequence[float],
    ds: Dataset,
    split: Split,
) -> tuple[ParamSet, float, float]:
    """Interpolate encoders, keep the fine-tuned head, re-evaluate val/test."""
    mixed = interpolate(pretrained, ft_params, alphas)
    return mixed, evaluate(mixed, ds, split.val), evaluate(mixed, ds, split.test)


def dwise_optimize_alphas(
    pretrained: ParamSet,
    ft_params: ParamSet,
    ds: Dataset,
    val_indices: Sequence[int],
    config: StrategyConfig,
    task_kind: str | None = None,
) -> np.ndarray:
    """Per-layer mixing coefficients descended along the validation-loss gradient.

    Each pass evaluates the validation loss at the interpolated weights and
    moves every coefficient by the chain-rule inner product
    d(loss)/d(alpha_i) = <d(loss)/d(theta_i), ft_i - pre_i>, clamping to
    [0, 1].  Returns the iterate with the best validation metric seen.
    """
    if not val_indices:
        raise ConfigError("dwise alpha optimization requires a non-empty validation set")
    task_kind = task_kind or ds.task_kind
    num_layers = pretrained.arch.num_layers
    alphas = np.full(num_layers, float(config.alpha_init))

    directions = {
        name: ft_params.value_of(name) - pretrained.value_of(name)
        for name in pretrained.encoder_names()
    }
    val_batch = collate(ds, list(val_indices))
    if not val_batch.label_mask.any():
        raise ConfigError("validation set has no observed labels")

    def val_metric(a: np.ndarray) -> float:
        mixed = interpolate(pretrained, ft_params, a)
        return evaluate(mixed, ds, list(val_indices))

    best_alphas = alphas.copy()
    best_metric = val_metric(alphas)
    for _ in range(config.alpha_epochs):
        mixed = interpolate(pretrained, ft_params, alphas)
        emb = encode(val_batch, mixed, mode="eval")
        scores = predict(emb, mixed)
        loss = prediction_loss(scores, val_batch.labels, val_batch.label_mask, task_kind)
        encoder_leaves = {n: mixed[n] for n in mixed.encoder_names()}
        grads = T.grad(loss, encoder_leaves)
        g_alpha = np.zeros(num_layers)
        for name, g in grads.items():
            g_alpha[group_of(name)] += float(np.vdot(g.data, directions[name]))
        alphas = np.clip(alphas - config.alpha_lr * g_alpha, 0.0, 1.0)
        metric = val_metric(alphas)
        if better(metric, best_metric, task_kind):
            best_metric = metric
            best_alphas = alphas.copy()
    return best_alphas


# ---------------------------------------------------------------------------
# entry point

def finetune(
    pretrained: ParamSet,
    ds: Dataset,
    split: Split,
    config: StrategyConfig,
    task_kind: str | None = None,
) -> RunArtifacts:
    """Run one fine-tuning strategy from a pretrained encoder checkpoint.

    The head is always freshly initialized from the run seed.  The reported
    parameters are the best-validation snapshot; for the interpolation
    strategies the snapshot is the post-hoc mixed model with its re-evaluated
    metric as a single-point curve.
    """
    task_kind = task_kind or ds.task_kind
    if not split.val or not split.test:
        raise ValidationError("finetune requires non-empty validation and test sets")
    params = pretrained.copy()
    if params.has_head:
        raise ValidationError("checkpoint unexpectedly carries a head")
    attach_head(params, ds.task_count, config.seed)
    log: list[dict] = []

    if config.kind in ("full", "l2sp", "feature_map", "bss", "lp", "surgical"):
        best, _, val_c, test_c, best_e = _train(
            params, pretrained, ds, split, config, task_kind, config.kind, log
        )
        return RunArtifacts(best, val_c, test_c, best_e, None, log)

    if config.kind == "lp_ft":
        # probe the head first, then release everything from the probed state
        _, probed, _, _, _ = _train(
            params, pretrained, ds, split, config, task_kind, "lp", log
        )
        best, _, val_c, test_c, best_e = _train(
            probed, pretrained, ds, split, config, task_kind, "full", log
        )
        return RunArtifacts(best, val_c, test_c, best_e, None, log)

    # wise / dwise: a full run, then post-hoc interpolation
    base_best, _, base_val, base_test, base_e = _train(
        params, pretrained, ds, split, config, task_kind, "full", log
    )
    if config.kind == "wise":
        alphas = np.full(pretrained.arch.num_layers, float(config.alpha))
    else:
        alphas = dwise_optimize_alphas(
            pretrained, base_best, ds, split.val, config, task_kind
        )
    mixed, val, test = interpolated_eval(pretrained, base_best, alphas, ds, split)
    log.append(
        {
            "phase": config.kind,
            "alphas": [float(a) for a in alphas],
            "val_metric": val,
            "test_metric": test,
        }
    )
    return RunArtifacts(mixed, [val], [test], 0, alphas, log)
