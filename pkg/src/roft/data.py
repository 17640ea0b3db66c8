"""Dataset ingestion, split protocols, few-shot sampling, batching.

Datasets arrive pre-featurized as JSON Lines; scaffold keys are opaque
precomputed strings, so no chemistry happens here.  All sampling is keyed
through :mod:`roft.rng`, which makes every split and batch order a pure
function of (scheme, seed, epoch).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DatasetParseError, ValidationError
from .model import GraphBatch
from .rng import stream

SPLIT_SCHEMES = ("random", "scaffold", "size")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class Molecule:
    mol_id: str
    node_feats: np.ndarray
    edges: np.ndarray  # directed, both ways, (E, 2) int64
    labels: np.ndarray  # (task_count,) float64, NaN where missing
    scaffold: str | None

    @property
    def node_count(self) -> int:
        return self.node_feats.shape[0]


@dataclass
class Dataset:
    molecules: list[Molecule]
    task_count: int
    task_kind: str  # "classification" | "regression"

    def __len__(self) -> int:
        return len(self.molecules)


@dataclass
class Split:
    train: list[int]
    val: list[int]
    test: list[int]
    scheme: str
    fractions: tuple[float, float, float]
    seed: int

    def to_dict(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


# ---------------------------------------------------------------------------
# ingestion

def load_dataset(path, task_kind: str | None = None) -> Dataset:
    """Parse a JSONL dataset file; see the file schema in the README.

    ``task_kind`` is inferred when omitted: a dataset whose observed labels
    are all 0/1 is treated as classification.
    """
    molecules: list[Molecule] = []
    task_count: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            molecules.append(_parse_molecule(record, lineno))
            n_tasks = molecules[-1].labels.shape[0]
            if task_count is None:
                task_count = n_tasks
            elif n_tasks != task_count:
                raise ValidationError(
                    f"line {lineno}: molecule has {n_tasks} labels, expected {task_count}"
                )
    if not molecules:
        raise ValidationError(f"dataset {path} is empty")
    assert task_count is not None
    if task_kind is None:
        task_kind = _infer_task_kind(molecules)
    if task_kind not in ("classification", "regression"):
        raise ValidationError(f"unknown task kind {task_kind!r}")
    if task_kind == "classification":
        _check_binary_labels(molecules)
    return Dataset(molecules=molecules, task_count=task_count, task_kind=task_kind)


def _parse_molecule(record: dict, lineno: int) -> Molecule:
    try:
        mol_id = str(record["id"])
        feats = np.asarray(record["node_feats"], dtype=np.float64)
        raw_edges = record["edges"]
        raw_labels = record["labels"]
        scaffold = record.get("scaffold")
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"malformed record ({exc})", lineno) from exc
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise DatasetParseError("node_feats must be a non-empty 2-d list", lineno)
    if not np.all(np.isfinite(feats)):
        raise DatasetParseError("node features must be finite", lineno)
    n = feats.shape[0]
    directed: list[tuple[int, int]] = []
    for pair in raw_edges:
        if len(pair) != 2:
            raise DatasetParseError(f"edge {pair} is not a pair", lineno)
        u, v = int(pair[0]), int(pair[1])
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetParseError(f"edge ({u}, {v}) exceeds node count {n}", lineno)
        directed.append((u, v))
        directed.append((v, u))
    edges = (
        np.asarray(directed, dtype=np.int64)
        if directed
        else np.zeros((0, 2), dtype=np.int64)
    )
    labels = np.empty(len(raw_labels), dtype=np.float64)
    for t, value in enumerate(raw_labels):
        if value is None:
            labels[t] = np.nan
        else:
            labels[t] = float(value)
            if not math.isfinite(labels[t]):
                raise DatasetParseError(f"label {t} is non-finite", lineno)
    if labels.size == 0:
        raise DatasetParseError("molecule has no labels", lineno)
    return Molecule(
        mol_id=mol_id,
        node_feats=feats,
        edges=edges,
        labels=labels,
        scaffold=None if scaffold is None else str(scaffold),
    )


def _infer_task_kind(molecules: list[Molecule]) -> str:
    for mol in molecules:
        observed = mol.labels[~np.isnan(mol.labels)]
        if np.any((observed != 0.0) & (observed != 1.0)):
            return "regression"
    return "classification"


def _check_binary_labels(molecules: list[Molecule]) -> None:
    for mol in molecules:
        observed = mol.labels[~np.isnan(mol.labels)]
        if np.any((observed != 0.0) & (observed != 1.0)):
            raise ValidationError(
                f"molecule {mol.mol_id}: classification labels must be 0/1/null"
            )


def write_dataset(path, molecules: Sequence[dict]) -> None:
    """Write molecules (already in record form) as canonical JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in molecules:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def molecule_to_record(mol: Molecule) -> dict:
    """Inverse of loading: undirected edges stored once, NaN back to null."""
    seen = set()
    undirected = []
    for u, v in mol.edges.tolist():
        key = (min(u, v), max(u, v))
        if key not in seen:
            seen.add(key)
            undirected.append(list(key))
    undirected.sort()
    labels = [None if math.isnan(x) else x for x in mol.labels.tolist()]
    return {
        "id": mol.mol_id,
        "node_feats": mol.node_feats.tolist(),
        "edges": undirected,
        "labels": labels,
        "scaffold": mol.scaffold,
    }


# ---------------------------------------------------------------------------
# split protocols

def split(
    ds: Dataset,
    scheme: str,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> Split:
    """Partition the dataset under one of the three protocols.

    random: seeded shuffle, contiguous cuts.  size: ascending node count
    (train on small, test on large).  scaffold: groups sorted largest first,
    greedily packed into train up to its quota, then val, remainder to test.
    """
    if scheme not in SPLIT_SCHEMES:
        raise ValidationError(f"unknown split scheme {scheme!r}")
    f_train, f_val, f_test = (float(f) for f in fractions)
    if min(f_train, f_val, f_test) <= 0.0 or f_train + f_val + f_test > 1.0 + 1e-9:
        raise ValidationError(f"bad split fractions {fractions}")
    n = len(ds)
    cut1 = int(math.floor(f_train * n))
    cut2 = int(math.floor((f_train + f_val) * n))
    cut3 = int(math.floor(min(f_train + f_val + f_test, 1.0) * n))

    if scheme == "random":
        order = stream("split", "random", seed).permutation(n).tolist()
        train, val, test = order[:cut1], order[cut1:cut2], order[cut2:cut3]
    elif scheme == "size":
        order = sorted(
            range(n), key=lambda i: (ds.molecules[i].node_count, ds.molecules[i].mol_id)
        )
        train, val, test = order[:cut1], order[cut1:cut2], order[cut2:cut3]
    else:
        train, val, test = _scaffold_fill(ds, cut1, cut2 - cut1)

    return Split(
        train=train,
        val=val,
        test=test,
        scheme=scheme,
        fractions=(f_train, f_val, f_test),
        seed=seed,
    )


def _scaffold_fill(ds: Dataset, train_quota: int, val_quota: int):
    groups: dict[str, list[int]] = {}
    for i, mol in enumerate(ds.molecules):
        if mol.scaffold is None:
            raise ValidationError(
                f"molecule {mol.mol_id} lacks a scaffold key; scaffold split impossible"
            )
        groups.setdefault(mol.scaffold, []).append(i)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    for _, members in ordered:
        if len(train) + len(members) <= train_quota:
            train.extend(members)
        elif len(val) + len(members) <= val_quota:
            val.extend(members)
        else:
            test.extend(members)
    return train, val, test


def save_split(path, sp: Split) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sp.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_split(path, scheme: str = "random", seed: int = 0) -> Split:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return Split(
        train=[int(i) for i in d["train"]],
        val=[int(i) for i in d["val"]],
        test=[int(i) for i in d["test"]],
        scheme=scheme,
        fractions=DEFAULT_FRACTIONS,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# few-shot subsampling and batching

def fewshot(train_indices: Sequence[int], n: int, seed: int) -> list[int]:
    """Uniform subsample of the train indices; val/test stay untouched."""
    pool = list(train_indices)
    if n > len(pool):
        raise ValidationError(f"few-shot size {n} exceeds train size {len(pool)}")
    order = stream("fewshot", seed, n).permutation(len(pool))
    return sorted(pool[i] for i in order[:n])


def batches(
    ds: Dataset,
    indices: Sequence[int],
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = True,
) -> list[GraphBatch]:
    """Per-epoch shuffled batches; the final short batch is kept."""
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    idx = list(indices)
    if shuffle:
        order = stream("batches", seed, epoch).permutation(len(idx))
        idx = [idx[i] for i in order]
    return [
        collate(ds, idx[start : start + batch_size])
        for start in range(0, len(idx), batch_size)
    ]


def collate(ds: Dataset, indices: Sequence[int]) -> GraphBatch:
    """Flatten a list of molecules into one GraphBatch."""
    mols = [ds.molecules[i] for i in indices]
    feats = np.concatenate([m.node_feats for m in mols], axis=0)
    segment = np.concatenate(
        [np.full(m.node_count, g, dtype=np.int64) for g, m in enumerate(mols)]
    )
    edge_parts = []
    offset = 0
    for m in mols:
        if m.edges.size:
            edge_parts.append(m.edges + offset)
        offset += m.node_count
    edges = (
        np.concatenate(edge_parts, axis=0)
        if edge_parts
        else np.zeros((0, 2), dtype=np.int64)
    )
    labels = np.stack([m.labels for m in mols], axis=0)
    mask = ~np.isnan(labels)
    labels = np.where(mask, labels, 0.0)
    return GraphBatch(
        node_feats=feats,
        edges=edges,
        segment=segment,
        labels=labels,
        label_mask=mask,
        graph_count=len(mols),
        mol_ids=[m.mol_id for m in mols],
    )
