"""Finite-difference audits of every loss and penalty gradient.

Each check builds a seeded random configuration, evaluates the reverse-mode
gradient, and compares it against the central-difference estimate of the
same scalar.  The finite-difference side never touches the autodiff graph,
so the two routes are independent.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .model import GinConfig, GraphBatch, encode, init_params
from .pretrain import sce_loss
from .rng import stream
from .strategies import bss_penalty, feature_map_penalty, l2sp_penalty
from .tensor import Tensor, finite_diff_grad

DEFAULT_STEP = 1e-5

CHECKS = ("bce", "mse", "sce", "l2sp", "feature_map", "bss", "gin")


def relative_error(auto: np.ndarray, fd: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(fd))), 1e-8)
    return float(np.max(np.abs(auto - fd))) / scale


def _single_tensor_check(build_loss, x0: np.ndarray, h: float) -> float:
    """Compare grad of build_loss(Tensor) at x0 against finite differences."""
    leaf = Tensor(x0, requires_grad=True, name="x")
    loss = build_loss(leaf)
    auto = T.grad(loss, {"x": leaf})["x"].data

    def f(vec: np.ndarray) -> float:
        return float(build_loss(Tensor(vec.reshape(x0.shape))).data)

    fd = finite_diff_grad(f, x0.reshape(-1), h).reshape(x0.shape)
    return relative_error(auto, fd)


def check_bce(seed: int, h: float = DEFAULT_STEP) -> float:
    rng = stream("gradcheck", "bce", seed)
    logits = rng.normal(size=(5, 3))
    labels = rng.integers(0, 2, size=(5, 3)).astype(np.float64)
    mask = rng.random((5, 3)) < 0.8
    mask.flat[0] = True  # keep at least one observation
    return _single_tensor_check(
        lambda x: T.bce_with_logits(x, labels, mask), logits, h
    )


def check_mse(seed: int, h: float = DEFAULT_STEP) -> float:
    rng = stream("gradcheck", "mse", seed)
    preds = rng.normal(size=(5, 3))
    targets = rng.normal(size=(5, 3))
    mask = rng.random((5, 3)) < 0.8
    mask.flat[0] = True
    return _single_tensor_check(lambda x: T.mse_loss(x, targets, mask), preds, h)


def check_sce(seed: int, h: float = DEFAULT_STEP) -> float:
    rng = stream("gradcheck", "sce", seed)
    target = rng.normal(size=(5, 4))
    recon = rng.normal(size=(5, 4))
    gamma = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
    return _single_tensor_check(lambda x: sce_loss(target, x, gamma), recon, h)


def check_feature_map(seed: int, h: float = DEFAULT_STEP) -> float:
    rng = stream("gradcheck", "fmap", seed)
    f_pre = rng.normal(size=(6, 5))
    f = rng.normal(size=(6, 5))
    delta = float(rng.choice([1.0, 0.1, 0.01]))
    return _single_tensor_check(
        lambda x: feature_map_penalty(x, f_pre, delta), f, h
    )


def check_bss(seed: int, h: float = DEFAULT_STEP) -> float:
    rng = stream("gradcheck", "bss", seed)
    f = rng.normal(size=(8, 6))
    k = int(rng.integers(1, 3))
    delta = float(rng.choice([1.0, 0.1, 0.01]))
    return _single_tensor_check(lambda x: bss_penalty(x, k, delta), f, h)


def check_l2sp(seed: int, h: float = DEFAULT_STEP) -> float:
    arch = GinConfig(feat_dim=3, hidden_dim=4, num_layers=2)
    current = init_params(arch, seed=seed)
    reference = init_params(arch, seed=seed + 10_000)
    delta = 0.1
    names = current.encoder_names()
    shapes = [current.value_of(n).shape for n in names]
    sizes = [int(np.prod(s)) if s else 1 for s in shapes]

    loss = l2sp_penalty(current, reference, delta)
    grads = T.grad(loss, {n: current[n] for n in names})
    auto = np.concatenate([grads[n].data.reshape(-1) for n in names])

    def f(vec: np.ndarray) -> float:
        probe = current.copy()
        offset = 0
        for n, shape, size in zip(names, shapes, sizes):
            probe.params[n].data = vec[offset : offset + size].reshape(shape)
            offset += size
        return float(l2sp_penalty(probe, reference, delta).data)

    x0 = np.concatenate([current.value_of(n).reshape(-1) for n in names])
    fd = finite_diff_grad(f, x0, h)
    return relative_error(auto, fd)


def check_gin(seed: int, h: float = DEFAULT_STEP) -> float:
    """Full forward through one GIN layer, pooled, summed to a scalar."""
    rng = stream("gradcheck", "gin", seed)
    arch = GinConfig(feat_dim=3, hidden_dim=4, num_layers=1)
    params = init_params(arch, seed=seed)
    # perturb away from the zero-bias init so relu kinks are generic
    for p in params.params.values():
        p.data = p.data + 0.1 * rng.normal(size=p.data.shape)
    batch = GraphBatch(
        node_feats=rng.normal(size=(5, 3)),
        edges=np.array([[0, 1], [1, 0], [1, 2], [2, 1], [3, 4], [4, 3]], dtype=np.int64),
        segment=np.array([0, 0, 0, 1, 1], dtype=np.int64),
        labels=np.zeros((2, 1)),
        label_mask=np.ones((2, 1), dtype=bool),
        graph_count=2,
    )
    weights = rng.normal(size=(2, arch.hidden_dim))  # fixed readout weighting

    names = list(params.params)
    shapes = [params.value_of(n).shape for n in names]
    sizes = [int(np.prod(s)) if s else 1 for s in shapes]

    loss = T.tsum(T.mul(encode(batch, params), weights))
    grads = T.grad(loss, {n: params[n] for n in names})
    auto = np.concatenate([grads[n].data.reshape(-1) for n in names])

    def f(vec: np.ndarray) -> float:
        probe = params.copy()
        offset = 0
        for n, shape, size in zip(names, shapes, sizes):
            probe.params[n].data = vec[offset : offset + size].reshape(shape)
            offset += size
        return float(T.tsum(T.mul(encode(batch, probe), weights)).data)

    x0 = np.concatenate([params.value_of(n).reshape(-1) for n in names])
    fd = finite_diff_grad(f, x0, h)
    return relative_error(auto, fd)


_CHECK_FNS = {
    "bce": check_bce,
    "mse": check_mse,
    "sce": check_sce,
    "l2sp": check_l2sp,
    "feature_map": check_feature_map,
    "bss": check_bss,
    "gin": check_gin,
}


def run_all(configs_per_check: int = 50, h: float = DEFAULT_STEP) -> dict[str, float]:
    """Worst relative error per surface over seeded configurations."""
    return {
        name: max(fn(seed, h) for seed in range(configs_per_check))
        for name, fn in _CHECK_FNS.items()
    }
