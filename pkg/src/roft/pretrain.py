"""Encoder pretraining: masked-feature reconstruction and supervised multi-task.

Both paradigms emit checkpoints with the identical encoder name inventory,
so every fine-tuning strategy accepts either.  The self-supervised route
reconstructs masked node features through a single linear decoder and scores
them with the scaled cosine error; the supervised route trains a multi-task
head that is dropped from the checkpoint afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset, batches
from .errors import ConfigError, ContractViolationError, TrainingError
from .model import (
    GinConfig,
    GraphBatch,
    ParamSet,
    attach_head,
    encode,
    forward_nodes,
    init_params,
    predict,
)
from .rng import stream
from .tensor import Tensor


@dataclass
class PretrainConfig:
    paradigm: str  # "ssl" | "supervised"
    mask_rate: float = 0.25
    gamma: float = 2.0
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.paradigm not in ("ssl", "supervised"):
            raise ConfigError(f"unknown pretraining paradigm {self.paradigm!r}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError(f"mask_rate must be in (0, 1), got {self.mask_rate}")
        if self.gamma < 1.0:
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")


def sce_loss(x, x_hat, gamma: float, diagnostics: dict | None = None) -> Tensor:
    """Scaled cosine error: mean over rows of (1 - cos(x_row, x_hat_row))^gamma.

    Rows whose target has zero norm are skipped (cosine undefined there) and
    counted in ``diagnostics['zero_norm_rows']`` when a dict is supplied.
    """
    x = T.as_tensor(x)
    x_hat = T.as_tensor(x_hat)
    if x.data.shape != x_hat.data.shape or x.data.ndim != 2:
        raise ContractViolationError(
            f"sce_loss expects matching 2-d shapes, got {x.data.shape} vs {x_hat.data.shape}"
        )
    norms = np.linalg.norm(x.data, axis=1)
    valid = norms > 0.0
    skipped = int((~valid).sum())
    if diagnostics is not None:
        diagnostics["zero_norm_rows"] = diagnostics.get("zero_norm_rows", 0) + skipped
    if not valid.any():
        raise ContractViolationError("sce_loss: every target row has zero norm")
    if skipped:
        keep = np.nonzero(valid)[0]
        x = T.gather_rows(x, keep)
        x_hat = T.gather_rows(x_hat, keep)
    cos = T.clip(T.cosine_rows(x, x_hat), -1.0, 1.0)
    return T.tmean(T.power(T.sub(1.0, cos), gamma))


def mask_nodes(
    batch: GraphBatch,
    mask_rate: float,
    seed,
    mask_token: np.ndarray | None = None,
):
    """Replace ceil(mask_rate * nodes) node rows, keeping originals as targets.

    Returns the masked batch and the sorted masked-row indices.  The
    replacement defaults to zeros; training substitutes the learned token
    differentiably on top of the returned indices.  ``seed`` may be an int or
    a tuple (seed, epoch, batch) for counter-based streams.
    """
    if not 0.0 < mask_rate < 1.0:
        raise ContractViolationError(f"mask_rate must be in (0, 1), got {mask_rate}")
    n = batch.node_count
    count = math.ceil(mask_rate * n)
    key = seed if isinstance(seed, tuple) else (seed,)
    order = stream("mask", *key).permutation(n)
    masked = np.sort(order[:count])
    feats = batch.node_feats.copy()
    feats[masked] = 0.0 if mask_token is None else mask_token
    out = GraphBatch(
        node_feats=feats,
        edges=batch.edges,
        segment=batch.segment,
        labels=batch.labels,
        label_mask=batch.label_mask,
        graph_count=batch.graph_count,
        mol_ids=batch.mol_ids,
    )
    return out, masked


def pretrain_ssl(
    ds: Dataset, arch: GinConfig, config: PretrainConfig
) -> tuple[ParamSet, list[dict]]:
    """Masked-feature reconstruction pretraining; returns encoder-only params.

    The mask token, decoder, and their gradients exist only during training;
    the returned ParamSet carries the encoder + embedding groups.
    """
    params = init_params(arch, config.seed)
    token = Tensor(np.zeros(arch.feat_dim), requires_grad=True, name="mask.token")
    dec_rng = stream("ssl-decoder", config.seed, arch.hidden_dim)
    dec_w = Tensor(
        dec_rng.normal(0.0, 1.0 / np.sqrt(arch.hidden_dim), size=(arch.hidden_dim, arch.feat_dim)),
        requires_grad=True,
        name="dec.weight",
    )
    dec_b = Tensor(
        dec_rng.uniform(
            -1.0 / np.sqrt(arch.hidden_dim), 1.0 / np.sqrt(arch.hidden_dim), arch.feat_dim
        ),
        requires_grad=True,
        name="dec.bias",
    )
    trainables = dict(params.params)
    trainables["mask.token"] = token
    trainables["dec.weight"] = dec_w
    trainables["dec.bias"] = dec_b

    indices = list(range(len(ds)))
    log: list[dict] = []
    for epoch in range(config.epochs):
        losses = []
        for b_i, batch in enumerate(
            batches(ds, indices, config.batch_size, config.seed, epoch)
        ):
            _, masked = mask_nodes(
                batch, config.mask_rate, (config.seed, epoch, b_i)
            )
            indicator = np.zeros((batch.node_count, 1))
            indicator[masked] = 1.0
            x_orig = T.constant(batch.node_feats)
            x_input = T.add(
                T.constant(batch.node_feats * (1.0 - indicator)),
                T.mul(T.constant(indicator), token),
            )
            h = forward_nodes(x_input, batch.edges, batch.node_count, params)
            h_masked = T.gather_rows(h, masked)
            x_hat = T.add(T.matmul(h_masked, dec_w), dec_b)
            target = T.gather_rows(x_orig, masked)
            loss = sce_loss(target, x_hat, config.gamma)
            _step(loss, trainables, config.learning_rate, epoch, b_i)
            losses.append(loss.item())
        log.append({"epoch": epoch, "loss": float(np.mean(losses))})
    return params, log


def pretrain_supervised(
    ds: Dataset, arch: GinConfig, config: PretrainConfig
) -> tuple[ParamSet, list[dict]]:
    """Multi-task supervised pretraining; the task head is dropped afterwards."""
    params = init_params(arch, config.seed, head_tasks=ds.task_count)
    trainables = dict(params.params)
    indices = list(range(len(ds)))
    log: list[dict] = []
    for epoch in range(config.epochs):
        losses = []
        for b_i, batch in enumerate(
            batches(ds, indices, config.batch_size, config.seed, epoch)
        ):
            if not batch.label_mask.any():
                continue
            emb = encode(batch, params, mode="train", dropout_rate=0.0)
            scores = predict(emb, params)
            if ds.task_kind == "classification":
                loss = T.bce_with_logits(scores, batch.labels, batch.label_mask)
            else:
                loss = T.mse_loss(scores, batch.labels, batch.label_mask)
            _step(loss, trainables, config.learning_rate, epoch, b_i)
            losses.append(loss.item())
        log.append({"epoch": epoch, "loss": float(np.mean(losses)) if losses else None})
    encoder_only = {
        name: p for name, p in params.params.items() if not name.startswith("head.")
    }
    return ParamSet(arch, encoder_only), log


def _step(loss: Tensor, trainables: dict[str, Tensor], lr: float, epoch: int, batch: int):
    if not np.isfinite(loss.data):
        raise TrainingError("non-finite pretraining loss", epoch=epoch, batch=batch)
    grads = T.grad(loss, trainables)
    for name, p in trainables.items():
        p.data = p.data - lr * grads[name].data
