"""Run-matrix driver: strategies x datasets x splits x shots x seeds.

Each cell selects hyperparameters on validation inside its own grid, then
reports the paired test metric.  Cells are independent jobs executed by a
bounded thread pool (ROFT_WORKERS); the report is assembled from sorted
cells so reruns are byte-identical.  Per-cell failures are recorded and the
remaining cells continue.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, Split, fewshot, load_dataset, split as make_split
from .errors import ConfigError, ValidationError
from .metrics import aggregate, better
from .model import ParamSet, load_checkpoint
from .strategies import (
    StrategyConfig,
    dwise_optimize_alphas,
    finetune,
    interpolated_eval,
)

GRIDDABLE = ("alpha", "alpha_init", "alpha_lr", "delta", "k")


@dataclass
class ResultCell:
    strategy: str
    dataset: str
    split_scheme: str
    shot: str
    seed: int
    value: float
    metric_kind: str

    def __post_init__(self):
        if self.metric_kind == "auc" and not 0.0 <= self.value <= 1.0:
            raise ValidationError(f"AUC {self.value} outside [0, 1]")
        if self.metric_kind == "rmse" and self.value < 0.0:
            raise ValidationError(f"RMSE {self.value} negative")

    def sort_key(self):
        return (self.strategy, self.dataset, self.split_scheme, self.shot, self.seed)


@dataclass
class BenchReport:
    cells: list[ResultCell] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    strategy_order: list[str] = field(default_factory=list)
    dataset_order: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["strategy,dataset,split,shot,seed,metric,value"]
        for cell in sorted(self.cells, key=ResultCell.sort_key):
            lines.append(
                f"{cell.strategy},{cell.dataset},{cell.split_scheme},"
                f"{cell.shot},{cell.seed},{cell.metric_kind},{cell.value!r}"
            )
        return "\n".join(lines) + "\n"

    def blocks(self) -> list[tuple[str, str]]:
        seen = []
        for cell in sorted(self.cells, key=ResultCell.sort_key):
            key = (cell.split_scheme, cell.shot)
            if key not in seen:
                seen.append(key)
        return sorted(seen)

    def block_summary(self, scheme: str, shot: str):
        """Per-strategy per-dataset (mean, std, metric_kind) over seeds."""
        table: dict[str, dict[str, tuple[float, float, str]]] = {}
        for strat in self.strategy_order:
            row = {}
            for dsname in self.dataset_order:
                vals = [
                    c.value
                    for c in self.cells
                    if c.strategy == strat
                    and c.dataset == dsname
                    and c.split_scheme == scheme
                    and c.shot == shot
                ]
                kinds = {
                    c.metric_kind
                    for c in self.cells
                    if c.dataset == dsname and c.split_scheme == scheme and c.shot == shot
                }
                if vals:
                    row[dsname] = (
                        float(np.mean(vals)),
                        float(np.std(vals)),
                        kinds.pop(),
                    )
            table[strat] = row
        return table

    def to_markdown(self) -> str:
        out = ["# Benchmark report", ""]
        for scheme, shot in self.blocks():
            out.append(f"## split={scheme}, shot={shot}")
            out.append("")
            summary = self.block_summary(scheme, shot)
            complete = all(
                set(summary[s]) == set(self.dataset_order) for s in self.strategy_order
            )
            agg = None
            if complete and len(self.dataset_order) >= 3:
                values = {
                    s: {d: summary[s][d][0] for d in self.dataset_order}
                    for s in self.strategy_order
                }
                kinds = {d: summary[self.strategy_order[0]][d][2] for d in self.dataset_order}
                agg = aggregate(values, kinds)
            header = ["Strategy"] + list(self.dataset_order)
            if agg:
                header += ["Avg", "Avg-F", "Avg-R", "Avg-R*"]
            out.append("| " + " | ".join(header) + " |")
            out.append("|" + "---|" * len(header))
            best = _best_per_dataset(summary, self.strategy_order, self.dataset_order)
            for strat in self.strategy_order:
                row = [strat]
                for dsname in self.dataset_order:
                    if dsname in summary[strat]:
                        mean, std, _ = summary[strat][dsname]
                        text = f"{mean:.4f} ± {std:.4f}"
                        if best.get(dsname) == strat:
                            text = f"**{text}**"
                        row.append(text)
                    else:
                        row.append("—")
                if agg:
                    a = agg[strat]
                    row += [
                        f"{a['avg']:.4f}",
                        "—" if a["avg_f"] is None else f"{a['avg_f']:.4f}",
                        f"{a['avg_r']:.2f}",
                        f"{a['avg_r_star']:.2f}",
                    ]
                out.append("| " + " | ".join(row) + " |")
            if not complete:
                out.append("")
                out.append("_aggregates omitted: block has missing cells_")
            elif len(self.dataset_order) < 3:
                out.append("")
                out.append(
                    "_aggregates omitted: fewer than 3 datasets (filtered mean undefined)_"
                )
            out.append("")
        if self.failures:
            out.append("## Failed cells")
            out.append("")
            for failure in sorted(self.failures, key=lambda f: sorted(f.items())):
                out.append(f"- {failure['cell']}: {failure['error']}")
            out.append("")
        return "\n".join(out)


def _best_per_dataset(summary, strategies, datasets) -> dict[str, str]:
    best: dict[str, str] = {}
    for d in datasets:
        incumbent = None
        for s in strategies:
            if d not in summary[s]:
                continue
            mean, _, kind = summary[s][d]
            if incumbent is None or better(mean, summary[incumbent][d][0], kind):
                incumbent = s
        if incumbent is not None:
            best[d] = incumbent
    return best


# ---------------------------------------------------------------------------
# matrix execution

def worker_count() -> int:
    env = os.environ.get("ROFT_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"ROFT_WORKERS must be an integer, got {env!r}") from exc
    return min(4, os.cpu_count() or 1)


def _grid_configs(entry: dict) -> tuple[str, list[StrategyConfig]]:
    entry = dict(entry)
    name = entry.pop("name", None) or entry.get("kind")
    grid: dict = entry.pop("grid", {}) or {}
    for key in grid:
        if key not in GRIDDABLE:
            raise ConfigError(f"grid over {key!r} is not supported")
    base = StrategyConfig.from_dict(entry)
    if not grid:
        return name, [base]
    keys = sorted(grid)
    configs = [
        replace(base, **dict(zip(keys, combo)))
        for combo in itertools.product(*(grid[k] for k in keys))
    ]
    return name, configs


def _run_cell(
    pretrained: ParamSet,
    ds: Dataset,
    base_split: Split,
    shot,
    seed: int,
    configs: list[StrategyConfig],
) -> float:
    """Best-validation hyperparameter selection inside the cell; returns the
    paired test metric."""
    sp = base_split
    if shot != "non":
        sp = replace(base_split, train=fewshot(base_split.train, int(shot), seed))
    configs = [replace(c, seed=seed) for c in configs]
    kind = configs[0].kind
    best_val: float | None = None
    best_test: float | None = None
    if kind in ("wise", "dwise"):
        # the underlying full run is shared across the interpolation grid
        base = finetune(pretrained, ds, sp, replace(configs[0], kind="full"))
        for cfg in configs:
            if kind == "wise":
                alphas = np.full(pretrained.arch.num_layers, float(cfg.alpha))
            else:
                alphas = dwise_optimize_alphas(
                    pretrained, base.final_params, ds, sp.val, cfg
                )
            _, val, test = interpolated_eval(
                pretrained, base.final_params, alphas, ds, sp
            )
            if best_val is None or better(val, best_val, ds.task_kind):
                best_val, best_test = val, test
    else:
        for cfg in configs:
            art = finetune(pretrained, ds, sp, cfg)
            if best_val is None or better(art.best_val, best_val, ds.task_kind):
                best_val, best_test = art.best_val, art.best_test
    assert best_test is not None
    return best_test


def run_matrix(config: dict, workers: int | None = None) -> BenchReport:
    """Execute the benchmark described by ``config``; see README for the schema."""
    pretrained, _ = load_checkpoint(config["checkpoint"])
    datasets: dict[str, Dataset] = {}
    for entry in config["datasets"]:
        datasets[entry["name"]] = load_dataset(entry["path"], entry.get("task_kind"))
    schemes = config.get("splits", ["random"])
    fractions = tuple(config.get("split_fractions", (0.8, 0.1, 0.1)))
    split_seed = int(config.get("split_seed", 0))
    shots = config.get("shots", ["non"])
    seeds = [int(s) for s in config.get("seeds", [0])]
    strategy_entries = [_grid_configs(e) for e in config.get("strategies", [])]
    if not strategy_entries:
        raise ConfigError("bench config lists no strategies")

    splits = {
        (name, scheme): make_split(ds, scheme, fractions, split_seed)
        for name, ds in datasets.items()
        for scheme in schemes
    }

    report = BenchReport(
        strategy_order=[name for name, _ in strategy_entries],
        dataset_order=list(datasets),
    )
    jobs = [
        (strat_name, configs, ds_name, scheme, shot, seed)
        for strat_name, configs in strategy_entries
        for ds_name in datasets
        for scheme in schemes
        for shot in shots
        for seed in seeds
    ]

    def execute(job):
        strat_name, configs, ds_name, scheme, shot, seed = job
        ds = datasets[ds_name]
        value = _run_cell(
            pretrained, ds, splits[(ds_name, scheme)], shot, seed, configs
        )
        metric_kind = "auc" if ds.task_kind == "classification" else "rmse"
        return ResultCell(
            strategy=strat_name,
            dataset=ds_name,
            split_scheme=scheme,
            shot=str(shot),
            seed=seed,
            value=value,
            metric_kind=metric_kind,
        )

    pool_size = workers if workers is not None else worker_count()
    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        futures = {pool.submit(execute, job): job for job in jobs}
        for future, job in futures.items():
            strat_name, _, ds_name, scheme, shot, seed = job
            try:
                report.cells.append(future.result())
            except Exception as exc:  # per-cell isolation; the matrix continues
                report.failures.append(
                    {
                        "cell": f"{strat_name}/{ds_name}/{scheme}/{shot}/seed{seed}",
                        "error": f"{type(exc).__name__}: {exc}",
                    }
                )
    report.cells.sort(key=ResultCell.sort_key)
    return report
