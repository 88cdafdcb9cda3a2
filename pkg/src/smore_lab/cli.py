"""Command-line entry point: ``smore-lab {verify,gen-data,train,eval,sweep,report}``.

Exit codes: 0 on success, 1 when a check or run fails, 2 for configuration
and usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ._validation import ValidationError
from .agents import load_agent
from .config import ConfigError, ExperimentConfig, load_config, replicate_seeds
from .data import export_csv, save_dataset
from .eval import aggregate, evaluate, markdown_table, write_rows_csv, write_summary_csv
from .experiment import (METRICS, build_env, make_configured_agent, make_dataset, perf_drop,
                         perf_drop_table, run_sweep, sort_rows)
from .nn import TrainingDivergedError
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _single_setting(cfg: ExperimentConfig):
    settings = cfg.settings()
    if len(settings) != 1:
        raise ConfigError(f"this command needs a config without sweep axes "
                          f"({len(settings)} settings found); use `sweep` instead")
    return settings[0]


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _log_csv(log: list[dict]) -> str:
    keys = sorted({k for row in log for k in row} - {"step"})
    lines = [",".join(["step", *keys])]
    for row in log:
        lines.append(",".join([str(row["step"]), *(repr(float(row[k])) if k in row else ""
                                                   for k in keys)]))
    return "\r\n".join(lines) + "\r\n"


# ---------------------------------------------------------------------------
# commands


def cmd_verify(args) -> int:
    report = run_suite(args.suite)
    text = report.to_json()
    print(text)
    if args.out is not None:
        _write_text(Path(args.out) / f"verify_{args.suite}.json", text + "\n")
    for name in report.failed():
        print(f"FAILED: {name}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    setting = _single_setting(cfg)
    out = Path(cfg.out) / "data"
    for rep in cfg.seeds:
        ds = make_dataset(setting.env, setting.data, replicate_seeds(cfg.seed, rep)["data"])
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out / f"seed{rep}.bin")
        export_csv(ds, out / f"seed{rep}.csv")
        print(out / f"seed{rep}.bin")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    setting = _single_setting(cfg)
    out = Path(cfg.out) / "train"
    stamp = out / "config.json"
    if stamp.exists():
        previous = json.loads(stamp.read_text()).get("fingerprint")
        if previous != cfg.fingerprint():
            raise ConfigError(f"{out} holds a run with a different config; refusing to resume "
                              f"(choose another --out)")
    out.mkdir(parents=True, exist_ok=True)
    stamp.write_text(json.dumps({"fingerprint": cfg.fingerprint(), "config": cfg.to_dict()},
                                indent=2, sort_keys=True) + "\n")
    for rep in cfg.seeds:
        ckpt = out / f"{setting.agent_name}_seed{rep}.ckpt"
        if ckpt.exists():
            print(f"{ckpt} (already trained)")
            continue
        seeds = replicate_seeds(cfg.seed, rep)
        dataset = make_dataset(setting.env, setting.data, seeds["data"])
        agent = make_configured_agent(setting, seeds["agent"]).fit(dataset)
        _write_text(out / f"{setting.agent_name}_seed{rep}_log.csv", _log_csv(agent.training_log_))
        agent.save(ckpt)
        print(ckpt)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    setting = _single_setting(cfg)
    mdp = build_env(setting.env)
    rows = []
    for rep in cfg.seeds:
        ckpt = Path(cfg.out) / "train" / f"{setting.agent_name}_seed{rep}.ckpt"
        if not ckpt.exists():
            raise ConfigError(f"missing checkpoint {ckpt}; run `train` first")
        agent = load_agent(ckpt)
        metrics = evaluate(mdp, agent, cfg.eval["episodes"], cfg.eval["horizon"],
                           seed=replicate_seeds(cfg.seed, rep)["eval"])
        rows += [{"env": setting.env_label, "agent": setting.agent_name, "setting": setting.label,
                  "seed": rep, "metric": m, "value": float(metrics[m])} for m in METRICS]
    path = Path(cfg.out) / "eval.csv"
    _write_text(path, write_rows_csv(sort_rows(rows)))
    print(path)
    return EXIT_OK


def _report(out: Path, rows, base) -> None:
    summary = aggregate(rows)
    _write_text(out / "summary.csv", write_summary_csv(summary))
    tables = [f"## {metric}\n\n{markdown_table(summary, metric)}" for metric in METRICS]
    if base is not None:
        drops = perf_drop(summary, base)
        tables.append(f"## relative change vs {base}\n\n{perf_drop_table(drops)}")
    _write_text(out / "table.md", "\n".join(tables))
    print(out / "summary.csv")
    print(out / "table.md")


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out)
    cache = out / "cells" if args.cache else None
    rows = run_sweep(cfg, jobs=args.jobs, cache_dir=cache)
    _write_text(out / "rows.csv", write_rows_csv(rows))
    print(out / "rows.csv")
    _report(out, rows, cfg.sweep.get("base"))
    return EXIT_OK


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{**row, "seed": int(row["seed"]), "value": float(row["value"])}
                for row in csv.DictReader(fh)]


def cmd_report(args) -> int:
    cfg = _config(args) if args.config is not None else None
    out = Path(args.out or (cfg.out if cfg else "."))
    path = out / "rows.csv"
    if not path.exists():
        raise ConfigError(f"missing {path}; run `sweep` first")
    _report(out, read_rows(path), cfg.sweep.get("base") if cfg else None)
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "gen-data": cmd_gen_data, "train": cmd_train,
            "eval": cmd_eval, "sweep": cmd_sweep, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (TOML)")
    common.add_argument("--seed", type=int, metavar="K", help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="parallel sweep cells (capped by SMORE_LAB_THREADS)")
    parser = argparse.ArgumentParser(prog="smore-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    verify = sub.add_parser("verify", parents=[common], help="run numerical certificate suites")
    verify.add_argument("suite", nargs="?", default="all", choices=[*SUITES, "all"])
    sub.add_parser("gen-data", parents=[common], help="collect offline datasets")
    sub.add_parser("train", parents=[common], help="train one agent per seed")
    sub.add_parser("eval", parents=[common], help="evaluate trained checkpoints")
    sweep = sub.add_parser("sweep", parents=[common], help="train and evaluate every setting")
    sweep.add_argument("--cache", action="store_true",
                       help="reuse finished cells from <out>/cells")
    sub.add_parser("report", parents=[common], help="summarize <out>/rows.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
