"""Command-line driver: train, eval, analyze, sweep, gen-synthetic.

Every failure prints a single line ``higflow-error: <kind>: <message>`` on
stderr and exits non-zero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, dataio
from . import numerics as nm
from .config import FIELD_TYPES, ConfigError, RunConfig, parse_config
from .hierarchy import (HiGFlowModel, evaluate, load_checkpoint, save_checkpoint,
                        train_epoch)

log = logging.getLogger("higflow")

METRICS_COLUMNS = ["epoch", "train_loss", "val_mae", "val_rmse"]
SWEEP_COLUMNS = ["axis", "axis_value", "mae", "rmse", "embed_drop", "energy_h", "energy_u"]
REPORT_COLUMNS = ["theorem", "depth", "B", "gap", "energy", "color_count", "trial_seed"]
SWEEP_AXES = {"depth": (1, 4), "transition_depth": (1, 3), "horizon": (3, 12)}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path, columns, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def load_dataset(cfg: RunConfig) -> dataio.RawSeries:
    if cfg.dataset == "synthetic":
        return dataio.synthetic_series(cfg.synthetic_vars, cfg.synthetic_length,
                                       noise=cfg.synthetic_noise, seed=cfg.synthetic_seed)
    path = Path(cfg.dataset)
    header = {"auto": None, "true": True, "false": False}[cfg.has_header]
    n_vars = cfg.n_vars or None
    if path.suffix in (".cfg", ".manifest", ".txt"):
        man = dataio.read_manifest(path)
        path = man["path"]
        header = man.get("has_header", header)
        n_vars = man.get("n_vars", n_vars)
    return dataio.load_series(path, has_header=header, n_vars=n_vars)


def embed_drop(energies: list[float]) -> float:
    """Mean energy decrease across the embedding maps, level i -> i+1."""
    if len(energies) < 2:
        return 0.0
    return float(np.mean([a - b for a, b in zip(energies, energies[1:])]))


def test_metrics(model, split: dataio.DatasetSplit, denormalize: bool = False) -> dict:
    if not split.test:
        return {"test_mae": float("nan"), "test_rmse": float("nan")}
    if denormalize and split.stats is not None:
        preds = np.stack([split.stats.invert(model.predict(s.input)) for s in split.test])
        targets = np.stack([split.stats.invert(s.target) for s in split.test])
        return {"test_mae": analysis.mae(preds, targets), "test_rmse": analysis.rmse(preds, targets)}
    m, r = evaluate(model, split.test)
    return {"test_mae": m, "test_rmse": r}


def energy_report(model, samples) -> dict:
    if not samples:
        return {"h": [], "u": [], "embed_drop": 0.0, "samples": 0}
    rep = analysis.smoothness_probe(model, samples)
    h, u = rep["h"].level_energy, rep["u"].level_energy
    return {"h": h, "u": u, "embed_drop": embed_drop(h), "samples": len(samples)}


def cmd_train(cfg: RunConfig) -> dict:
    raw = load_dataset(cfg)
    split = dataio.prepare(raw, cfg.t_in, cfg.t_out)
    out = cfg.resolved_out_dir("train")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    model = HiGFlowModel(cfg.model_config(raw.n_vars))
    opt = nm.RMSProp(model.parameters(), lr=cfg.lr)

    rows = []
    best_mae, best_state, stale = float("inf"), model.state_dict(), 0
    for epoch in range(1, cfg.epochs + 1):
        res = train_epoch(model, split.train, split.validation, opt, cfg.batch_size)
        rows.append({"epoch": epoch, "train_loss": res.train_loss,
                     "val_mae": res.val_mae, "val_rmse": res.val_rmse})
        log.info("epoch %d loss %.5f val_mae %.5f", epoch, res.train_loss, res.val_mae)
        if cfg.freeze_clusters:
            model.freeze_clusters = True
        if res.val_mae < best_mae:
            best_mae, best_state, stale = res.val_mae, model.state_dict(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.freeze_clusters = False

    save_checkpoint(model, out / "checkpoint.json")
    write_csv(out / "metrics.csv", METRICS_COLUMNS, rows)
    metrics = test_metrics(model, split, cfg.denormalize)
    energy = energy_report(model, split.test[:cfg.probe_samples])
    (out / "energy.json").write_text(json.dumps(energy, indent=2))
    result = {"run_dir": str(out), "epochs_run": len(rows), **metrics,
              "energy_h": energy["h"], "energy_u": energy["u"], "embed_drop": energy["embed_drop"]}
    (out / "test_metrics.json").write_text(json.dumps(metrics, indent=2))
    if cfg.figures:
        from . import plotting
        if rows:
            plotting.training_curves(rows, out / "training_curves.png")
        if energy["h"]:
            plotting.level_energies(energy["h"], energy["u"], out / "level_energy.png")
    return result


def cmd_eval(checkpoint, cfg: RunConfig) -> dict:
    raw = load_dataset(cfg)
    split = dataio.prepare(raw, cfg.t_in, cfg.t_out)
    model = load_checkpoint(checkpoint, cfg.model_config(raw.n_vars))
    return test_metrics(model, split, cfg.denormalize)


def cmd_analyze(cfg: RunConfig) -> dict:
    out = cfg.resolved_out_dir("analyze")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    report_rows: list[dict] = []

    t1 = analysis.contraction_trials(cfg.theorem1_trials, cfg.seed, cfg.max_nodes)
    for r in t1:
        report_rows.append({"theorem": 1, "depth": 1, "energy": r["energy_fine"], "trial_seed": r["trial_seed"]})
        report_rows.append({"theorem": 1, "depth": 2, "energy": r["energy_coarse"], "trial_seed": r["trial_seed"]})
    per_rate = float(np.mean([r["per_clique"] for r in t1]))
    glob_rate = float(np.mean([r["global"] for r in t1]))

    gaps = analysis.gap_trials(cfg.theorem2_trials, cfg.seed, cfg.max_nodes)
    for b, vals in gaps.items():
        for t, g in enumerate(vals):
            report_rows.append({"theorem": 2, "B": b, "gap": g, "trial_seed": t})
    trend = analysis.gap_trend(gaps)

    t3 = analysis.expressivity_trials(cfg.theorem3_trials, cfg.seed, cfg.max_nodes, cfg.max_depth)
    for r in t3:
        for d, c in enumerate(r["counts"], start=1):
            report_rows.append({"theorem": 3, "depth": d, "color_count": c, "trial_seed": r["trial_seed"]})
    t3_rate = float(np.mean([r["holds"] for r in t3]))
    separates = analysis.memory_wl_separates(analysis.cycle_graph(6), analysis.disjoint_union(
        analysis.cycle_graph(3), analysis.cycle_graph(3)), 2)

    summary = {
        "seed": cfg.seed,
        "theorem1": {"trials": len(t1), "per_clique_pass_rate": per_rate, "global_pass_rate": glob_rate,
                     "pass": per_rate == 1.0 and glob_rate == 1.0},
        "theorem2": {"trials": cfg.theorem2_trials, "median_gap": {str(k): v for k, v in trend["medians"].items()},
                     "non_increasing": trend["non_increasing"], "ratio_last_first": trend["ratio_last_first"],
                     "pass": trend["holds"]},
        "theorem3": {"trials": len(t3), "pass_rate": t3_rate, "pass": t3_rate == 1.0,
                     "c6_vs_2c3_depth2_separated": separates},
    }
    write_csv(out / "report.csv", REPORT_COLUMNS, report_rows)
    (out / "analysis.json").write_text(json.dumps(summary, indent=2))
    if cfg.figures:
        from . import plotting
        plotting.gap_trend(trend["medians"], out / "theorem2_gap.png")
        plotting.color_counts([r["counts"] for r in t3], out / "theorem3_colors.png")
    return summary


def cmd_sweep(cfg: RunConfig, axis: str, values: list[int]) -> list[dict]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis={axis!r} must be one of {sorted(SWEEP_AXES)}")
    lo, hi = SWEEP_AXES[axis]
    for v in values:
        if not lo <= v <= hi:
            raise ConfigError(f"values: {axis}={v} outside legal range [{lo}, {hi}]")
    out = cfg.resolved_out_dir(f"sweep-{axis}")
    out.mkdir(parents=True, exist_ok=True)
    key = "t_out" if axis == "horizon" else axis
    rows = []
    for v in values:
        sub = dataclasses.replace(cfg, **{key: v, "out_dir": str(out / f"{axis}-{v}")}).validate()
        res = cmd_train(sub)
        rows.append({"axis": axis, "axis_value": v, "mae": res["test_mae"], "rmse": res["test_rmse"],
                     "embed_drop": res["embed_drop"],
                     "energy_h": ";".join(repr(e) for e in res["energy_h"]),
                     "energy_u": ";".join(repr(e) for e in res["energy_u"])})
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    if cfg.figures:
        from . import plotting
        plotting.sweep(rows, axis, out / "sweep.png")
    return rows


def cmd_gen_synthetic(cfg: RunConfig, path) -> Path:
    raw = dataio.synthetic_series(cfg.synthetic_vars, cfg.synthetic_length,
                                  noise=cfg.synthetic_noise, seed=cfg.synthetic_seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_series(raw, path)
    return path


# ---------------------------------------------------------------- argument parsing

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    for key in FIELD_TYPES:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar=FIELD_TYPES[key].upper())


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="higflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "analyze"):
        _add_config_flags(sub.add_parser(name))
    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    _add_config_flags(p)
    p = sub.add_parser("sweep")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    _add_config_flags(p)
    p = sub.add_parser("gen-synthetic")
    p.add_argument("--output", required=True, help="CSV path to write")
    _add_config_flags(p)
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k) for k in FIELD_TYPES if getattr(args, k, None) is not None}
    return parse_config(args.config, overrides)


def _fail(kind: str, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"higflow-error: {kind}: {text}", file=sys.stderr)
    return 2 if kind in ("config", "usage") else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "eval":
            result = cmd_eval(args.checkpoint, cfg)
        elif args.command == "analyze":
            result = cmd_analyze(cfg)
        elif args.command == "sweep":
            try:
                values = [int(v) for v in args.values.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"values: expected comma-separated integers, got {args.values!r}") from None
            result = cmd_sweep(cfg, args.axis, values)
        else:
            result = {"output": str(cmd_gen_synthetic(cfg, args.output))}
    except ConfigError as exc:
        return _fail("config", exc)
    except FileNotFoundError as exc:
        return _fail("io", exc)
    except (dataio.DataError, dataio.ConfigurationError) as exc:
        return _fail("data", exc)
    except FloatingPointError as exc:
        return _fail("numeric", exc)
    except ValueError as exc:
        return _fail("value", exc)
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
