"""Command-line front end: ``bdgstn <command> [--config run.yaml]``.

Exit codes: 0 success, 2 configuration error, 3 data contract violation,
1 anything else. Failures print a single diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import tensor as tn
from .checkpoint import config_dict, load_checkpoint, save_checkpoint
from .config import ConfigKeyError, dump_config, load_config, sim_config, train_config
from .data import EpidemicDataset, load_dataset, make_windows
from .exceptions import ConfigurationError, DataFormatError
from .info import dynamic_graph_report
from .metrics import METRIC_NAMES, evaluate, per_step_metrics
from .model import model_forward
from .simulator import export, simulate
from .training import TrainResult, baseline_persistence, baseline_sir_fit, evaluate_split, train

log = logging.getLogger("bdgstn")

COMMANDS = ("simulate", "train", "eval", "ablate", "graph-report", "info-report", "compare")
SPLITS = ("train", "val", "test")

GRAPH_LABELS = {
    "fused": "Backbone-based graph", "backbone-only": "Backbone graph", "temporal-only": "Temporal graph",
    "geography": "Geography-based graph", "gravity": "Gravity-based graph", "dtw": "DTW-based graph",
    "pcc": "PCC-based graph",
}
ABLATION_LABELS = {
    "temporal-only": "BDGSTN-Temporal", "spatial-only": "BDGSTN-Spatial",
    "no-loss": "BDGSTN w/o Loss", "no-trend": "BDGSTN w/o Trend",
}
COMPARE_HEADER = ["run", *METRIC_NAMES, "graph_mode", "ablation", "horizon", "epochs", "seed"]


# -- shared helpers -----------------------------------------------------------

def _output_dir(cfg: dict, command: str) -> Path:
    out = Path(cfg["output"]["dir"] or Path("runs") / command)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg: dict) -> EpidemicDataset:
    d = cfg["data"]
    if d["series"] is None:
        return simulate(sim_config(cfg))
    ds = load_dataset(d["series"], d["meta"], d["adjacency"])
    ds.validate()
    return ds


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _metrics_block(result: TrainResult, ds: EpidemicDataset, split: str) -> dict:
    report, steps = evaluate_split(result, ds, split, per_step=True)
    return {"overall": report.as_dict(), "per_step": [s.as_dict() for s in steps]}


def _baseline_block(result: TrainResult, ds: EpidemicDataset, split: str) -> dict:
    c = result.config
    w = make_windows(ds, result.splits[SPLITS.index(split)], c.t_in, c.horizon)
    return {
        "persistence": evaluate(baseline_persistence(w, c.horizon), w.raw_targets).as_dict(),
        "sir_fit": evaluate(baseline_sir_fit(w, c.horizon, ds.population), w.raw_targets).as_dict(),
    }


def _metrics_doc(result: TrainResult, ds: EpidemicDataset, splits=SPLITS) -> dict:
    doc = {"config": config_dict(result.config), "best_epoch": result.best_epoch}
    for s in splits:
        doc[s] = _metrics_block(result, ds, s)
    if "test" in splits:
        doc["baselines"] = {"test": _baseline_block(result, ds, "test")}
    return doc


def _write_history(path: Path, history: list[dict]) -> None:
    header = ["epoch", "train_loss"] + [f"val_{k}" for k in METRIC_NAMES]
    _write_csv(path, header, [[_fmt(row.get(k, "")) for k in header] for row in history])


def _train_into(ds: EpidemicDataset, tcfg, out: Path) -> TrainResult:
    result = train(ds, tcfg)
    save_checkpoint(result, out / "checkpoint")
    _write_history(out / "history.csv", result.history)
    _write_json(out / "metrics.json", _metrics_doc(result, ds))
    return result


def _checkpoint(cfg: dict, section: str) -> TrainResult:
    path = cfg[section]["checkpoint"]
    if path is None:
        raise ConfigKeyError(f"{section}.checkpoint", "a checkpoint directory is required")
    return load_checkpoint(path)


def _split(cfg: dict, section: str) -> str:
    split = cfg[section]["split"]
    if split not in SPLITS:
        raise ConfigKeyError(f"{section}.split", f"must be one of {SPLITS}")
    return split


def _forward_split(result: TrainResult, ds: EpidemicDataset, split: str):
    c = result.config
    batch = make_windows(ds, result.splits[SPLITS.index(split)], c.t_in, c.horizon, result.normalizer)
    with tn.no_grad():
        out = model_forward(result.params, batch.inputs, batch.raw_last_step, result.population,
                            result.normalizer.min_[:, 1], result.normalizer.scale_[:, 1],
                            c.model_config(), result.static_graph)
    return batch, out


# -- commands -------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> None:
    export(simulate(sim_config(cfg)), out)


def cmd_train(cfg: dict, out: Path) -> None:
    result = _train_into(_dataset(cfg), train_config(cfg), out)
    log.info("best epoch %d, test MAE %.6g", result.best_epoch,
             json.loads((out / "metrics.json").read_text())["test"]["overall"]["mae"])


def cmd_eval(cfg: dict, out: Path) -> None:
    """metrics.json over every window of the split; forecast.csv for the
    split's last forecast origin."""
    ds = _dataset(cfg)
    result = _checkpoint(cfg, "eval")
    split = _split(cfg, "eval")
    _check_compatible(result, ds)
    doc = {"config": config_dict(result.config), "split": split, split: _metrics_block(result, ds, split)}
    _write_json(out / "metrics.json", doc)
    batch, fwd = _forward_split(result, ds, split)
    pred = result.normalizer.inverse_infected(fwd.y_st.data)[-1]
    actual = batch.raw_targets[-1]
    rows = [[pid, h + 1, _fmt(pred[i, h]), _fmt(actual[i, h])]
            for i, pid in enumerate(ds.patch_ids) for h in range(pred.shape[1])]
    _write_csv(out / "forecast.csv", ["patch", "horizon", "predicted", "actual"], rows)


def ablation_variants(cfg: dict) -> list[tuple[str, str, dict]]:
    """``(name, label, overrides)`` for every graph mode and ablation flag."""
    variants = []
    for mode in cfg["ablate"]["graph_modes"]:
        if mode not in GRAPH_LABELS:
            raise ConfigKeyError("ablate.graph_modes", f"unknown graph mode {mode!r}")
        variants.append((f"graph-{mode}", GRAPH_LABELS[mode], {"graph_mode": mode, "ablation": "none"}))
    for flag in cfg["ablate"]["ablations"]:
        if flag not in ABLATION_LABELS:
            raise ConfigKeyError("ablate.ablations", f"unknown ablation {flag!r}")
        variants.append((f"ablation-{flag}", ABLATION_LABELS[flag], {"graph_mode": "fused", "ablation": flag}))
    return variants


def cmd_ablate(cfg: dict, out: Path) -> None:
    ds = _dataset(cfg)
    rows = []
    for name, label, overrides in ablation_variants(cfg):
        tcfg = train_config(cfg, **overrides)
        vdir = out / name
        vdir.mkdir(parents=True, exist_ok=True)
        result = _train_into(ds, tcfg, vdir)
        test = evaluate_split(result, ds, "test")
        rows.append([name, label, tcfg.graph_mode, tcfg.ablation] + [_fmt(getattr(test, k)) for k in METRIC_NAMES])
        log.info("%s: test MAE %.6g", name, test.mae)
    _write_csv(out / "comparison.csv", ["variant", "label", "graph_mode", "ablation", *METRIC_NAMES], rows)


def _edge_rows(A: np.ndarray, ids) -> list[list[str]]:
    n = len(ids)
    return [[ids[i], ids[j], _fmt(A[i, j])] for i in range(n) for j in range(n)]


def cmd_graph_report(cfg: dict, out: Path) -> None:
    """One src,dst,weight CSV per graph; time-varying graphs are averaged over
    windows and steps."""
    ds = _dataset(cfg)
    result = _checkpoint(cfg, "report")
    _check_compatible(result, ds)
    _, fwd = _forward_split(result, ds, _split(cfg, "report"))
    header = ["src", "dst", "weight"]
    if fwd.graphs is not None:
        g = fwd.graphs
        _write_csv(out / "a_back.csv", header, _edge_rows(g.a_back.data, ds.patch_ids))
        _write_csv(out / "a_temp.csv", header, _edge_rows(g.a_temp.data.mean(axis=(0, 1)), ds.patch_ids))
        _write_csv(out / "a_dyn.csv", header, _edge_rows(g.a_dyn.data.mean(axis=(0, 1)), ds.patch_ids))
    if result.static_graph is not None:
        _write_csv(out / f"{result.config.graph_mode}.csv", header, _edge_rows(result.static_graph, ds.patch_ids))
    if fwd.graphs is None and result.static_graph is None:
        raise ConfigurationError("checkpoint variant uses no graph; nothing to report")


def cmd_info_report(cfg: dict, out: Path) -> None:
    ds = _dataset(cfg)
    result = _checkpoint(cfg, "report")
    _check_compatible(result, ds)
    _, fwd = _forward_split(result, ds, _split(cfg, "report"))
    if fwd.graphs is None:
        raise ConfigurationError("info-report needs a checkpoint with learned backbone and temporal graphs")
    g = fwd.graphs
    rep = dynamic_graph_report(g.a_back.data, g.a_temp.data, g.a_dyn.data)
    doc = rep.as_dict()
    doc["all_finite"] = rep.all_finite()
    _write_json(out / "info_report.json", doc)


def compare_table(run_dirs) -> tuple[list[list[str]], list[str]]:
    """Rows (sorted by test MAE) of every run with a metrics.json, plus the
    list of skipped directories."""
    rows, skipped = [], []
    for d in run_dirs:
        path = Path(d) / "metrics.json"
        try:
            doc = json.loads(path.read_text())
            block = doc["test"]["overall"] if "test" in doc else doc[doc["split"]]["overall"]
            conf = doc.get("config", {})
        except (OSError, KeyError, json.JSONDecodeError):
            warnings.warn(f"skipping {d}: no usable metrics.json", stacklevel=2)
            skipped.append(str(d))
            continue
        rows.append((float(block["mae"]), str(d), [str(d)] + [_fmt(block[k]) for k in METRIC_NAMES]
                     + [str(conf.get(k, "")) for k in ("graph_mode", "ablation", "horizon", "epochs", "seed")]))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [r[2] for r in rows], skipped


def cmd_compare(cfg: dict, out: Path) -> None:
    rows, _ = compare_table(cfg["compare"]["runs"])
    _write_csv(out / "comparison.csv", COMPARE_HEADER, rows)


def _check_compatible(result: TrainResult, ds: EpidemicDataset) -> None:
    if len(result.population) != ds.n_patches or not np.array_equal(result.population, ds.population):
        raise DataFormatError("dataset patches/populations do not match the checkpoint")
    if result.splits[-1].stop != ds.n_days:
        raise DataFormatError(f"checkpoint was trained on {result.splits[-1].stop} days, dataset has {ds.n_days}")


HANDLERS = {
    "simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
    "graph-report": cmd_graph_report, "info-report": cmd_info_report, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdgstn", description="Dynamic-graph epidemic forecasting pipeline")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", help="YAML run configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(command: str, config_path=None) -> Path:
    cfg = load_config(config_path)
    out = _output_dir(cfg, command)
    (out / "config.yaml").write_text(dump_config(cfg))
    HANDLERS[command](cfg, out)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        out = run(args.command, args.config)
    except ConfigKeyError as exc:
        print(f"bdgstn: config error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"bdgstn: data error: {exc}", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"bdgstn: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"bdgstn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %s", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
