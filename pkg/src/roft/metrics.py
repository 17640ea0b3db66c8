"""Evaluation metrics and the benchmark aggregation columns.

AUC is computed per task from mid-ranked scores (equivalent to the pairwise
count with half-credit ties) and averaged over tasks that have both classes;
RMSE runs over observed cells only.  Aggregation produces the four summary
columns used in the result tables: plain mean, filtered mean (one max and
one min removed), mean rank, and rank of the mean min-max-normalized score.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import UndefinedMetricError, ValidationError


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels, mask=None) -> float:
    """Mean per-task AUC over tasks that contain both classes.

    Ties in the scores earn half credit.  Tasks with a single class are
    skipped; if every task is skipped the metric is undefined.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64).T).T
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64).T).T
    if mask is None:
        mask = np.ones(labels.shape, dtype=bool)
    mask = np.atleast_2d(np.asarray(mask, dtype=bool).T).T
    if scores.shape != labels.shape or labels.shape != mask.shape:
        raise ValidationError(
            f"shape mismatch: scores {scores.shape}, labels {labels.shape}, mask {mask.shape}"
        )
    task_aucs = []
    for t in range(labels.shape[1]):
        use = mask[:, t]
        y = labels[use, t]
        s = scores[use, t]
        pos = int((y == 1.0).sum())
        neg = int((y == 0.0).sum())
        if pos == 0 or neg == 0:
            continue
        ranks = _midranks(s)
        rank_sum = ranks[y == 1.0].sum()
        task_aucs.append((rank_sum - pos * (pos + 1) / 2.0) / (pos * neg))
    if not task_aucs:
        raise UndefinedMetricError("AUC undefined: no task has both classes")
    return float(np.mean(task_aucs))


def rmse(preds, targets, mask=None) -> float:
    """Root mean squared error over observed cells."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if mask is None:
        mask = np.ones(preds.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if preds.shape != targets.shape or preds.shape != mask.shape:
        raise ValidationError(
            f"shape mismatch: preds {preds.shape}, targets {targets.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise UndefinedMetricError("RMSE undefined over an empty mask")
    diff = preds[mask] - targets[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def metric_value(scores, labels, mask, task_kind: str) -> float:
    if task_kind == "classification":
        return roc_auc(scores, labels, mask)
    return rmse(scores, labels, mask)


def better(candidate: float, incumbent: float, metric_kind: str) -> bool:
    """Strictly better under the metric's orientation (ties keep the incumbent)."""
    if metric_kind in ("auc", "classification"):
        return candidate > incumbent
    return candidate < incumbent


def select_best(
    curve: Sequence[tuple[float, float]], metric_kind: str
) -> tuple[int, float]:
    """Best-validation epoch and its paired test metric; ties pick the earliest."""
    if not curve:
        raise ValidationError("select_best on an empty curve")
    best_idx = 0
    for i in range(1, len(curve)):
        if better(curve[i][0], curve[best_idx][0], metric_kind):
            best_idx = i
    return best_idx, curve[best_idx][1]


def aggregate(
    values: Mapping[str, Mapping[str, float]],
    metric_kinds: Mapping[str, str],
) -> dict[str, dict[str, float | None]]:
    """Summary columns per strategy over a complete strategy x dataset grid.

    values[strategy][dataset] is that strategy's score on the dataset;
    metric_kinds[dataset] is "auc" or "rmse" and controls rank orientation
    and the negation applied before min-max normalization.  The filtered
    mean removes exactly one maximal and one minimal value and needs at
    least three datasets.
    """
    strategies = list(values)
    if not strategies:
        raise ValidationError("aggregate: no strategies")
    dataset_names = list(values[strategies[0]])
    for strat in strategies:
        for d in dataset_names:
            if d not in values[strat]:
                raise ValidationError(f"aggregate: missing cell ({strat}, {d})")
        if set(values[strat]) != set(dataset_names):
            extra = set(values[strat]) - set(dataset_names)
            raise ValidationError(f"aggregate: strategy {strat} has extra datasets {extra}")
    for d in dataset_names:
        if d not in metric_kinds:
            raise ValidationError(f"aggregate: no metric kind for dataset {d}")

    out: dict[str, dict[str, float | None]] = {
        s: {"avg": None, "avg_f": None, "avg_r": None, "avg_r_star": None}
        for s in strategies
    }

    for strat in strategies:
        vals = np.array([values[strat][d] for d in dataset_names], dtype=np.float64)
        out[strat]["avg"] = float(vals.mean())
        if vals.size >= 3:
            out[strat]["avg_f"] = _filtered_mean(vals)

    # mean rank: rank 1 is best per dataset (highest AUC, lowest RMSE)
    rank_rows = np.zeros((len(strategies), len(dataset_names)))
    norm_rows = np.zeros_like(rank_rows)
    for j, d in enumerate(dataset_names):
        col = np.array([values[s][d] for s in strategies], dtype=np.float64)
        oriented = col if metric_kinds[d] == "auc" else -col
        rank_rows[:, j] = _midranks(-oriented)
        span = oriented.max() - oriented.min()
        if span == 0.0:
            norm_rows[:, j] = 0.5
        else:
            norm_rows[:, j] = (oriented - oriented.min()) / span
    mean_rank = rank_rows.mean(axis=1)
    mean_norm = norm_rows.mean(axis=1)
    star_rank = _midranks(-mean_norm)
    for i, strat in enumerate(strategies):
        out[strat]["avg_r"] = float(mean_rank[i])
        out[strat]["avg_r_star"] = float(star_rank[i])
    return out


def _filtered_mean(vals: np.ndarray) -> float:
    """Mean after removing exactly one maximal and one minimal element."""
    keep = list(range(vals.size))
    keep.remove(int(np.argmax(vals)))
    del keep[int(np.argmin(vals[keep]))]
    return float(vals[keep].mean())
