"""Command-line entry point: ``fedhd <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
CSV outputs are assembled in memory and written only after a command has
finished, so a failure never leaves partial rows behind.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cohort, distill, federation, privacy
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("fedhd")

SWEEP_PARAMS = ("T", "M", "t0", "q")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.6g}"


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.run.out)


def _seeds(args, cfg: RunConfig) -> list[int]:
    return [args.seed] if args.seed is not None else [int(s) for s in cfg.run.seeds]


def _clients(args, cfg: RunConfig, seed: int):
    if args.manifest:
        return cohort.load_clients(args.manifest, cfg.cohort.class_count,
                                   cfg.cohort.mil_variants, cfg.cohort.hidden_dims)
    return cohort.generate_cohort(cfg.cohort, seed)


def cmd_gen_cohort(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    if (out / "manifest.csv").exists() and not args.force:
        raise UsageError(f"{out}/manifest.csv exists; pass --force to overwrite")
    seed = _seeds(args, cfg)[0]
    clients = cohort.generate_cohort(cfg.cohort, seed)
    entries = cohort.write_cohort(out, clients)
    print(f"wrote {len(entries)} slides for {len(clients)} clients to {out}")
    return 0


def cmd_distill(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    seed = _seeds(args, cfg)[0]
    dcfg = cfg.effective_distill()
    clients = _clients(args, cfg, seed)
    all_syn, trace_rows, report = [], [], {}
    for i, cl in enumerate(clients):
        syn, traces = distill.distill_client(cl.train, dcfg, master_seed=federation._mix(seed, 7, i),
                                             client_id=cl.client_id, threads=cfg.run.threads,
                                             return_traces=True)
        for s, tr in zip(syn, traces):
            trace_rows.extend((s.slide_id, it, _fmt(v)) for it, v in enumerate(tr))
        all_syn.extend(syn)
        report[cl.client_id] = distill.payload_report(syn)
    if (out / "manifest.csv").exists() and not args.force:
        raise UsageError(f"{out}/manifest.csv exists; pass --force to overwrite")
    cohort.write_synthetic(out, all_syn)
    (out / "loss_traces.csv").write_text(_csv_text(["slide_id", "iteration", "loss"], trace_rows))
    for cid, rep in report.items():
        print(f"payload {cid}: {rep['slides']} slides, {rep['floats']} floats "
              f"(+{rep['labels']} labels), {rep['mib']:.2f} MiB at 32-bit")
    return 0


def _run_seeds(cfg: RunConfig, args, arms=None, override=None):
    rows, payloads = [], {}
    for seed in _seeds(args, cfg):
        run_cfg = override(cfg) if override else cfg
        clients = _clients(args, run_cfg, seed)
        res = federation.run_federation(clients, run_cfg.protocol(seed, arms))
        rows.extend(res.rows)
        payloads[seed] = res.payload
    return rows, payloads


def cmd_federate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    rows, payloads = _run_seeds(cfg, args)
    table = [(r["client_id"], r["arm"], r["seed"], _fmt(r["accuracy"]), _fmt(r["mcc"]),
              _fmt(r["auc"])) for r in rows]
    summary = {"config": _config_dict(cfg), "payload": payloads, "weighted": {}}
    for arm in dict.fromkeys(r["arm"] for r in rows):
        per_seed = [federation.weighted_averages([r for r in rows
                                                  if r["seed"] == s and r["arm"] == arm])[arm]
                    for s in dict.fromkeys(r["seed"] for r in rows)]
        summary["weighted"][arm] = {
            k: {"mean": float(np.mean([p[k] for p in per_seed])),
                "std": float(np.std([p[k] for p in per_seed]))}
            for k in ("accuracy", "mcc", "auc")}
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(
        _csv_text(["client_id", "arm", "seed", "accuracy", "mcc", "auc"], table))
    (out / "summary.txt").write_text(json.dumps(summary, indent=2, default=str))
    for arm, vals in summary["weighted"].items():
        acc, mcc = vals["accuracy"], vals["mcc"]
        print(f"{arm:>8}: acc {acc['mean']:.3f} +/- {acc['std']:.3f}  "
              f"mcc {mcc['mean']:.3f} +/- {mcc['std']:.3f}")
    return 0


def cmd_mia(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    seed = _seeds(args, cfg)[0]
    clients = _clients(args, cfg, seed)
    rows, summary = [], []
    for i, cl in enumerate(clients):
        res = privacy.mia_attack(cl.train, cfg.effective_distill(), cfg.mia,
                                 master_seed=federation._mix(seed, 13, i))
        rows.extend((cl.client_id, r, _fmt(a)) for r, a in enumerate(res.aucs))
        summary.append((cl.client_id, _fmt(res.max_auc), _fmt(res.mean_auc)))
    out.mkdir(parents=True, exist_ok=True)
    (out / "mia.csv").write_text(_csv_text(["client_id", "seed", "auc"], rows))
    (out / "mia_summary.csv").write_text(_csv_text(["client_id", "max_auc", "mean_auc"], summary))
    for cid, mx, mean in summary:
        print(f"{cid}: max AUC {mx}  mean AUC {mean}")
    return 0


def _sweep_override(param, value):
    def apply(cfg: RunConfig) -> RunConfig:
        if param in ("T", "M"):
            return dataclasses.replace(cfg, distill=dataclasses.replace(cfg.distill, **{param: value}))
        return dataclasses.replace(cfg, curriculum=dataclasses.replace(cfg.curriculum,
                                                                       **{param: value}))
    return apply


def parse_sweep_values(param: str, text: str, cfg: RunConfig) -> list:
    if param not in SWEEP_PARAMS:
        raise UsageError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    conv = float if param == "q" else int
    try:
        values = [conv(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad sweep value: {exc}") from None
    if not values:
        raise UsageError("no sweep values given")
    for v in values:
        if param == "q" and not 0.0 < v <= 1.0:
            raise UsageError(f"q={v} outside (0, 1]")
        if param == "M" and (v < 1 or cfg.distill.T < 2 * v):
            raise UsageError(f"M={v} invalid for T={cfg.distill.T}")
        if param == "T" and v < 2 * cfg.distill.M:
            raise UsageError(f"T={v} < 2M={2 * cfg.distill.M}")
        if param == "t0" and not 0 <= v <= cfg.train.epochs:
            raise UsageError(f"t0={v} outside [0, epochs={cfg.train.epochs}]")
    return values


def cmd_sweep(args, cfg: RunConfig) -> int:
    values = parse_sweep_values(args.param, args.values, cfg)
    out = _out_dir(args, cfg)
    table = []
    for v in values:
        rows, _ = _run_seeds(cfg, args, arms=("fedhd",), override=_sweep_override(args.param, v))
        table.extend((args.param, v, r["seed"], r["client_id"], _fmt(r["accuracy"]),
                      _fmt(r["mcc"])) for r in rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{args.param}.csv").write_text(
        _csv_text(["param", "value", "seed", "client", "accuracy", "mcc"], table))
    print(f"wrote {len(table)} rows to {out / f'sweep_{args.param}.csv'}")
    return 0


def _config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


COMMANDS = {
    "gen-cohort": cmd_gen_cohort,
    "distill": cmd_distill,
    "federate": cmd_federate,
    "mia": cmd_mia,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedhd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config's seed list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--threads", type=int, help="worker threads for distillation")
        if name != "gen-cohort":
            p.add_argument("--manifest", help="manifest.csv of real slides (default: generate)")
        if name == "sweep":
            p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
            p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.threads:
            cfg.run.threads = args.threads
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
