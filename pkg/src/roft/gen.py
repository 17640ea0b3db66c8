"""Synthetic molecular-graph datasets with planted label rules.

Graphs are random trees plus a few chord edges; node features are Gaussian.
Classification labels threshold a hidden linear functional of the mean node
features (so a perfect ranking exists), regression labels add noise to the
same functional.  Scaffold keys hash the topology, which naturally groups
structurally identical graphs.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError
from .rng import stream


def gen_dataset(
    count: int,
    tasks: int = 1,
    seed: int = 0,
    task_kind: str = "classification",
    feat_dim: int = 8,
    min_nodes: int = 6,
    max_nodes: int = 14,
    noise: float = 0.1,
    missing_rate: float = 0.0,
    margin: float = 0.5,
) -> list[dict]:
    """Generate ``count`` molecule records ready for JSONL serialization.

    ``margin`` rejects classification molecules whose functional values sit
    within ``margin`` standard deviations of the threshold, which keeps the
    planted rule clean; a resample cap keeps generation total.
    """
    if task_kind not in ("classification", "regression"):
        raise ConfigError(f"unknown task kind {task_kind!r}")
    if count < 1 or tasks < 1 or min_nodes < 1 or max_nodes < min_nodes:
        raise ConfigError("bad generation sizes")
    rng = stream("gen", seed, count, tasks, feat_dim)
    weights = rng.normal(size=(tasks, feat_dim))
    # the functional of mean features has std ~ ||w|| / sqrt(n * feat-var)
    records = []
    for i in range(count):
        for _attempt in range(50):
            n = int(rng.integers(min_nodes, max_nodes + 1))
            edges = _random_tree_with_chords(rng, n)
            feats = rng.normal(size=(n, feat_dim))
            z = weights @ feats.mean(axis=0)
            scale = np.linalg.norm(weights, axis=1) / np.sqrt(n)
            if task_kind != "classification" or np.all(np.abs(z) >= margin * scale):
                break
        if task_kind == "classification":
            labels = [1.0 if v > 0 else 0.0 for v in z]
        else:
            labels = [float(v + noise * rng.normal()) for v in z]
        masked_labels = [
            None if (missing_rate > 0.0 and rng.random() < missing_rate) else v
            for v in labels
        ]
        records.append(
            {
                "id": f"mol-{i:05d}",
                "node_feats": feats.tolist(),
                "edges": edges,
                "labels": masked_labels,
                "scaffold": _topology_key(n, edges),
            }
        )
    return records


def _random_tree_with_chords(rng: np.random.Generator, n: int) -> list[list[int]]:
    edges = {(0, 0)}  # sentinel to forbid self loops in the chord sampler
    edge_list: list[list[int]] = []
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
        edge_list.append([u, v])
    n_chords = int(rng.integers(0, max(n // 4, 1) + 1))
    for _ in range(n_chords):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        a, b = min(u, v), max(u, v)
        if a != b and (a, b) not in edges:
            edges.add((a, b))
            edge_list.append([a, b])
    edge_list.sort()
    return edge_list


def _topology_key(n: int, edges: list[list[int]]) -> str:
    degrees = [0] * n
    for u, v in edges:
        degrees[u] += 1
        degrees[v] += 1
    payload = f"{n}|{len(edges)}|{sorted(degrees)}"
    return "scf-" + hashlib.sha1(payload.encode("utf-8")).hexdigest()[:8]
