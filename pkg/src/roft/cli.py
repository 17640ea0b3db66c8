"""Command-line front end.

Subcommands take a JSON config file plus an output directory, validate every
referenced path up front, and exit with 0 on success, 1 on verification
failure, 2 on configuration or IO errors.  All outputs are byte-identical
across reruns of the same config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import run_matrix
from .data import load_dataset, load_split, split as make_split, write_dataset
from .errors import ConvergenceError, RoftError, ValidationError
from .gen import gen_dataset
from .gradcheck import run_all as run_gradchecks
from .model import GinConfig, save_checkpoint, load_checkpoint
from .pretrain import PretrainConfig, pretrain_ssl, pretrain_supervised
from .quadlab import verify as verify_prop
from .strategies import StrategyConfig, finetune
from .errors import ConfigError

DELTA_GRID = (1.0, 0.1, 0.01, 0.001, 0.0001)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RoftError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roft", description="Robust fine-tuning toolkit for small GNNs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (
        ("pretrain", _cmd_pretrain),
        ("finetune", _cmd_finetune),
        ("bench", _cmd_bench),
        ("gen-data", _cmd_gen_data),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.set_defaults(func=fn)

    v = sub.add_parser("verify")
    v.add_argument("suite", choices=["prop1", "gradcheck"])
    v.add_argument("--dim", type=int, default=8)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=20)
    v.add_argument("--checks", type=int, default=50, help="configs per gradcheck surface")
    v.add_argument("--tol", type=float, default=None)
    v.add_argument("--out", default=None, help="also write records to this directory")
    v.add_argument(
        "--inject-failure",
        action="store_true",
        help="self-test: flip a sign so the suite must fail",
    )
    v.set_defaults(func=_cmd_verify)
    return parser


def _load_config(args) -> tuple[dict, Path]:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.seed is not None:
        config["seed"] = args.seed
    return config, out_dir


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"referenced path not found: {p}")


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_pretrain(args) -> int:
    config, out_dir = _load_config(args)
    _require_files(config.get("dataset"))
    ds = load_dataset(config["dataset"], config.get("task_kind"))
    arch_cfg = dict(config.get("arch", {}))
    arch_cfg.setdefault("feat_dim", ds.molecules[0].node_feats.shape[1])
    arch = GinConfig(
        feat_dim=int(arch_cfg["feat_dim"]),
        hidden_dim=int(arch_cfg.get("hidden_dim", 32)),
        num_layers=int(arch_cfg.get("num_layers", 3)),
    )
    pcfg = PretrainConfig(
        paradigm=config.get("paradigm", "ssl"),
        mask_rate=float(config.get("mask_rate", 0.25)),
        gamma=float(config.get("gamma", 2.0)),
        epochs=int(config.get("epochs", 50)),
        learning_rate=float(config.get("learning_rate", 0.001)),
        batch_size=int(config.get("batch_size", 32)),
        seed=int(config.get("seed", 0)),
    )
    if pcfg.paradigm == "ssl":
        params, log = pretrain_ssl(ds, arch, pcfg)
    else:
        params, log = pretrain_supervised(ds, arch, pcfg)
    ckpt_path = out_dir / config.get("checkpoint_name", f"{pcfg.paradigm}.ckpt")
    save_checkpoint(ckpt_path, params, paradigm=pcfg.paradigm)
    _write_json(out_dir / config.get("log_name", "pretrain_log.json"), log)
    print(f"checkpoint written: {ckpt_path}")
    return 0


def _resolve_split(config: dict, ds) -> object:
    spec = config.get("split", {"scheme": "random"})
    if "path" in spec:
        _require_files(spec["path"])
        return load_split(spec["path"])
    return make_split(
        ds,
        spec.get("scheme", "random"),
        tuple(spec.get("fractions", (0.8, 0.1, 0.1))),
        int(spec.get("seed", 0)),
    )


def _cmd_finetune(args) -> int:
    config, out_dir = _load_config(args)
    _require_files(config.get("checkpoint"), config.get("dataset"))
    pretrained, _ = load_checkpoint(config["checkpoint"])
    ds = load_dataset(config["dataset"], config.get("task_kind"))
    sp = _resolve_split(config, ds)
    shot = config.get("shot", "non")
    if shot != "non":
        from .data import fewshot

        sp = replace(sp, train=fewshot(sp.train, int(shot), int(config.get("seed", 0))))
    strat = dict(config.get("strategy", {}))
    if "seed" in config:
        strat.setdefault("seed", int(config["seed"]))
    scfg = StrategyConfig.from_dict(strat)
    artifacts = finetune(pretrained, ds, sp, scfg)
    ckpt_path = out_dir / config.get("artifact_name", "model.ckpt")
    save_checkpoint(ckpt_path, artifacts.final_params, paradigm="finetuned", include_head=True)
    _write_json(
        out_dir / config.get("log_name", "run_log.json"),
        {
            "strategy": scfg.kind,
            "best_epoch": artifacts.best_epoch,
            "best_val": artifacts.best_val,
            "best_test": artifacts.best_test,
            "epoch_val_metric": artifacts.epoch_val_metric,
            "epoch_test_metric": artifacts.epoch_test_metric,
            "log": artifacts.train_log,
        },
    )
    if artifacts.alphas is not None:
        _write_json(out_dir / "alphas.json", [float(a) for a in artifacts.alphas])
    print(f"artifacts written: {ckpt_path}")
    return 0


def _cmd_bench(args) -> int:
    config, out_dir = _load_config(args)
    _require_files(config.get("checkpoint"), *(d["path"] for d in config.get("datasets", [])))
    report = run_matrix(config)
    (out_dir / "results.csv").write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    print(f"bench complete: {len(report.cells)} cells, {len(report.failures)} failures")
    return 0


def _cmd_gen_data(args) -> int:
    config, out_dir = _load_config(args)
    records = gen_dataset(
        count=int(config["count"]),
        tasks=int(config.get("tasks", 1)),
        seed=int(config.get("seed", 0)),
        task_kind=config.get("task_kind", "classification"),
        feat_dim=int(config.get("feat_dim", 8)),
        min_nodes=int(config.get("min_nodes", 6)),
        max_nodes=int(config.get("max_nodes", 14)),
        noise=float(config.get("noise", 0.1)),
        missing_rate=float(config.get("missing_rate", 0.0)),
        margin=float(config.get("margin", 0.5)),
    )
    path = out_dir / config.get("filename", "dataset.jsonl")
    write_dataset(path, records)
    print(f"dataset written: {path}")
    return 0


def _cmd_verify(args) -> int:
    records_out = []
    if args.suite == "prop1":
        tol = args.tol if args.tol is not None else 1e-6
        try:
            worst, records = verify_prop(
                args.dim, args.seed, DELTA_GRID, instances=args.instances
            )
        except ConvergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if args.inject_failure:
            worst = worst + 2 * tol  # self-test: force the gate to trip
        for record in records:
            line = json.dumps(record, sort_keys=True)
            print(line)
            records_out.append(record)
        ok = worst < tol
        print(f"prop1: max discrepancy {worst:.3e} (tol {tol:.1e}) -> {'PASS' if ok else 'FAIL'}")
    else:
        tol = args.tol if args.tol is not None else 1e-4
        results = run_gradchecks(configs_per_check=args.checks)
        if args.inject_failure:
            results = {k: -v for k, v in results.items()}  # wrong sign trips every gate
        ok = True
        for name, err in sorted(results.items()):
            passed = 0.0 <= err < tol
            ok = ok and passed
            record = {"check": name, "max_relative_error": err, "tol": tol}
            print(json.dumps(record, sort_keys=True))
            records_out.append(record)
        print(f"gradcheck: {'PASS' if ok else 'FAIL'}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / f"verify_{args.suite}.json", records_out)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
