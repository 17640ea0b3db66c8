"""GIN encoder, prediction head, and the weight-interpolation primitive.

Parameters live in a :class:`ParamSet` keyed by layer-addressable names
("embed.*", "layer.{i}.*", "head.*"), which is what lets the fine-tuning
strategies freeze, penalize, or interpolate individual layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractViolationError, ValidationError
from .rng import stream
from .tensor import Tensor

ENCODER_GROUPS = ("embed", "layer")


@dataclass(frozen=True)
class GinConfig:
    """Encoder architecture; the full-scale stack is 5 x 300, desk scale 3 x 32."""

    feat_dim: int
    hidden_dim: int = 32
    num_layers: int = 3

    def to_dict(self) -> dict:
        return {
            "feat_dim": self.feat_dim,
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
        }

    @staticmethod
    def from_dict(d: dict) -> "GinConfig":
        return GinConfig(
            feat_dim=int(d["feat_dim"]),
            hidden_dim=int(d["hidden_dim"]),
            num_layers=int(d["num_layers"]),
        )


@dataclass
class GraphBatch:
    """A batch of molecular graphs flattened into one node table.

    Edges are directed and store each undirected bond both ways.  Labels use
    NaN for missing values; ``label_mask`` is True exactly where a label is
    observed.
    """

    node_feats: np.ndarray
    edges: np.ndarray
    segment: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    graph_count: int
    mol_ids: list[str] = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return self.node_feats.shape[0]


class ParamSet:
    """Named, layer-indexed parameters of encoder + optional head."""

    def __init__(self, arch: GinConfig, params: dict[str, Tensor]):
        self.arch = arch
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    @property
    def has_head(self) -> bool:
        return "head.weight" in self.params

    def encoder_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(("embed.", "layer."))]

    def copy(self, requires_grad: bool = True) -> "ParamSet":
        fresh = {
            name: Tensor(p.data.copy(), requires_grad=requires_grad, name=name)
            for name, p in self.params.items()
        }
        return ParamSet(self.arch, fresh)

    def value_of(self, name: str) -> np.ndarray:
        return self.params[name].data


def layer_param_names(params: ParamSet, k: int) -> set[str]:
    """Names of the k-th encoder layer's parameters."""
    if not 0 <= k < params.arch.num_layers:
        raise ContractViolationError(
            f"layer index {k} outside [0, {params.arch.num_layers})"
        )
    prefix = f"layer.{k}."
    return {n for n in params.params if n.startswith(prefix)}


def group_of(name: str) -> int | str:
    """Interpolation group of a parameter: embed maps to layer 0's coefficient."""
    if name.startswith("embed."):
        return 0
    if name.startswith("layer."):
        return int(name.split(".")[1])
    return "head"


def init_params(
    arch: GinConfig, seed: int, head_tasks: int | None = None
) -> ParamSet:
    """Seeded init: Gaussian weights, uniform biases, eps at 0."""
    rng = stream("init", seed, arch.feat_dim, arch.hidden_dim, arch.num_layers)
    h = arch.hidden_dim
    params: dict[str, Tensor] = {}

    def gaussian(shape, fan_in):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    def bias(size, fan_in):
        # nonzero bias keeps activations away from exact zeros at init
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=size)

    params["embed.weight"] = _param("embed.weight", gaussian((arch.feat_dim, h), arch.feat_dim))
    params["embed.bias"] = _param("embed.bias", bias(h, arch.feat_dim))
    for i in range(arch.num_layers):
        params[f"layer.{i}.eps"] = _param(f"layer.{i}.eps", 0.0)
        params[f"layer.{i}.w1"] = _param(f"layer.{i}.w1", gaussian((h, h), h))
        params[f"layer.{i}.b1"] = _param(f"layer.{i}.b1", bias(h, h))
        params[f"layer.{i}.w2"] = _param(f"layer.{i}.w2", gaussian((h, h), h))
        params[f"layer.{i}.b2"] = _param(f"layer.{i}.b2", bias(h, h))
    paramset = ParamSet(arch, params)
    if head_tasks is not None:
        attach_head(paramset, head_tasks, seed)
    return paramset


def attach_head(params: ParamSet, task_count: int, seed: int) -> None:
    """Add a freshly initialized prediction head (pretrained models carry none)."""
    rng = stream("head-init", seed, params.arch.hidden_dim, task_count)
    h = params.arch.hidden_dim
    params.params["head.weight"] = _param(
        "head.weight", rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, task_count))
    )
    params.params["head.bias"] = _param(
        "head.bias", rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=task_count)
    )


def _param(name: str, value) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# forward passes

def forward_nodes(
    x: Tensor,
    edges: np.ndarray,
    node_count: int,
    params: ParamSet,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng_key: tuple = (),
) -> Tensor:
    """GIN forward from an arbitrary feature tensor (kept differentiable).

    Per layer: h_v <- MLP((1 + eps) * h_v + sum of neighbor h_u), followed by
    dropout in train mode.  ``rng_key`` identifies the dropout site
    (conventionally seed/epoch/batch); the layer index is appended per draw.
    """
    arch = params.arch
    if x.data.shape != (node_count, arch.feat_dim):
        raise ContractViolationError(
            f"feature shape {x.data.shape} != ({node_count}, {arch.feat_dim})"
        )
    h = T.add(T.matmul(x, params["embed.weight"]), params["embed.bias"])
    if edges.size:
        src = edges[:, 0]
        dst = edges[:, 1]
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    for i in range(arch.num_layers):
        if src.size:
            neigh = T.scatter_sum(T.gather_rows(h, src), dst, node_count)
            agg = T.add(T.mul(T.add(params[f"layer.{i}.eps"], 1.0), h), neigh)
        else:
            agg = T.mul(T.add(params[f"layer.{i}.eps"], 1.0), h)
        pre = T.add(T.matmul(agg, params[f"layer.{i}.w1"]), params[f"layer.{i}.b1"])
        h = T.add(T.matmul(T.relu(pre), params[f"layer.{i}.w2"]), params[f"layer.{i}.b2"])
        h = T.dropout(h, dropout_rate, rng_key + (i,), mode)
    return h


def encode_nodes(
    batch: GraphBatch,
    params: ParamSet,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng_key: tuple = (),
) -> Tensor:
    """Node embeddings of a batch after all GIN layers."""
    x = T.constant(batch.node_feats)
    return forward_nodes(
        x, batch.edges, batch.node_count, params, mode, dropout_rate, rng_key
    )


def encode(
    batch: GraphBatch,
    params: ParamSet,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng_key: tuple = (),
) -> Tensor:
    """Graph embeddings: mean over each graph's node embeddings."""
    nodes = encode_nodes(batch, params, mode, dropout_rate, rng_key)
    return T.segment_mean(nodes, batch.segment, batch.graph_count)


def predict(embeddings: Tensor, params: ParamSet) -> Tensor:
    """Affine head on graph embeddings; raw scores (no sigmoid)."""
    if not params.has_head:
        raise ContractViolationError("predict requires a head; checkpoint has none")
    w = params["head.weight"]
    if embeddings.data.shape[1] != w.data.shape[0]:
        raise ContractViolationError(
            f"embedding width {embeddings.data.shape[1]} != head input {w.data.shape[0]}"
        )
    return T.add(T.matmul(embeddings, w), params["head.bias"])


# ---------------------------------------------------------------------------
# weight interpolation

def interpolate(pre: ParamSet, ft: ParamSet, alphas: Sequence[float]) -> ParamSet:
    """Per-layer convex combination of two encoders; head taken from ``ft``.

    Layer i mixes with alphas[i]; the input embedding group, which feeds
    layer 0 and has no coefficient of its own, shares alphas[0].  The
    endpoints are special-cased so alpha 0/1 reproduce the source bits
    exactly.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (pre.arch.num_layers,):
        raise ContractViolationError(
            f"expected {pre.arch.num_layers} mixing coefficients, got shape {alphas.shape}"
        )
    if np.any((alphas < 0.0) | (alphas > 1.0)):
        raise ContractViolationError("mixing coefficients must lie in [0, 1]")
    out: dict[str, Tensor] = {}
    for name in pre.encoder_names():
        if name not in ft.params:
            raise ContractViolationError(f"parameter {name} missing from fine-tuned set")
        a_pre, a_ft = pre.value_of(name), ft.value_of(name)
        if a_pre.shape != a_ft.shape:
            raise ContractViolationError(
                f"shape mismatch for {name}: {a_pre.shape} vs {a_ft.shape}"
            )
        alpha = float(alphas[group_of(name)])
        if alpha == 0.0:
            mixed = a_pre.copy()
        elif alpha == 1.0:
            mixed = a_ft.copy()
        else:
            # lerp form keeps untouched coordinates bit-identical to pre
            diff = a_ft - a_pre
            mixed = np.where(diff == 0.0, a_pre, a_pre + alpha * diff)
        out[name] = Tensor(mixed, requires_grad=True, name=name)
    for name, p in ft.params.items():
        if name.startswith("head."):
            out[name] = Tensor(p.data.copy(), requires_grad=True, name=name)
    return ParamSet(pre.arch, out)


# ---------------------------------------------------------------------------
# checkpoint serialization: one JSON manifest line, then a raw little-endian
# float64 blob addressed by byte offsets.

FORMAT_TAG = "gin-checkpoint-v1"


def save_checkpoint(
    path,
    params: ParamSet,
    paradigm: str,
    include_head: bool = False,
    extra_meta: dict | None = None,
) -> None:
    names = [
        n
        for n in params.names()
        if include_head or not n.startswith("head.")
    ]
    entries = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params.value_of(name), dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format": FORMAT_TAG,
        "arch": params.arch.to_dict(),
        "paradigm": paradigm,
        "params": entries,
    }
    if extra_meta:
        manifest["meta"] = extra_meta
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"unreadable checkpoint manifest: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise ValidationError(f"unknown checkpoint format {manifest.get('format')!r}")
    arch = GinConfig.from_dict(manifest["arch"])
    params: dict[str, Tensor] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        raw = blob[start : start + count * 8]
        if len(raw) != count * 8:
            raise ValidationError(f"checkpoint blob truncated at {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        params[entry["name"]] = Tensor(arr, requires_grad=True, name=entry["name"])
    return ParamSet(arch, params), manifest
