"""Command-line entry point.

``imexreg run <config.json>`` executes every (method, seed) combination in
the experiment config, writing one JSON report per run plus an aggregate
with mean and sample standard deviation across seeds. ``imexreg report
<run-dir>`` renders the aggregate as an aligned text table and CSV.

Exit codes: 0 success, 2 config/report problems (schema violations print the
offending field path), 3 training divergence (prints the run id).

The default output root comes from $IMEXREG_OUTPUT_ROOT when the config and
--output flag leave it unset.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .losses import LossWeights
from .metrics import (AccuracyMatrix, ece, forgetting, make_calibration_dump,
                      recency_bias, stability_plasticity)
from .nets import ModelConfig
from .presets import resolve_preset
from .streams import (AugmentConfig, load_csv_dataset, make_class_il_stream,
                      make_gaussian_dataset, make_gcil_stream)
from .trainer import (RUN_NOTES, DivergenceError, TrainConfig, _config_to_dict,
                      evaluate, predict_logits, train_stream)

SCHEMA_VERSION = 1

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "stream", "train", "seeds"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "output_dir": {"type": "string"},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "stream": {
            "type": "object",
            "required": ["kind", "dataset"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["class-il", "gcil-uniform", "gcil-longtail"]},
                "seed": {"type": "integer"},
                "num_tasks": {"type": "integer", "minimum": 1},
                "classes_per_task": {"type": "integer", "minimum": 1},
                "shuffle_classes": {"type": "boolean"},
                "samples_per_task": {"type": "integer", "minimum": 1},
                "max_classes": {"type": "integer", "minimum": 1},
                "longtail_power": {"type": "number", "exclusiveMinimum": 0},
                "dataset": {
                    "type": "object",
                    "required": ["type"],
                    "additionalProperties": False,
                    "properties": {
                        "type": {"enum": ["gaussian", "csv"]},
                        "num_classes": {"type": "integer", "minimum": 2},
                        "dim": {"type": "integer", "minimum": 1},
                        "train_per_class": {"type": "integer", "minimum": 1},
                        "test_per_class": {"type": "integer", "minimum": 1},
                        "separation": {"type": "number", "minimum": 0},
                        "noise": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer"},
                        "train": {"type": "string"},
                        "test": {"type": "string"},
                    },
                },
            },
        },
        "train": {
            "type": "object",
            "required": ["methods"],
            "additionalProperties": False,
            "properties": {
                "methods": {"type": "array", "minItems": 1,
                            "items": {"enum": ["imex-reg", "er", "sgd", "joint"]}},
                "preset": {"type": ["string", "null"]},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "buffer_batch_size": {"type": "integer", "minimum": 1},
                "buffer_size": {"type": "integer", "minimum": 0},
                "alpha": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "lam": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "ema_decay": {"type": "number", "minimum": 0, "maximum": 1},
                "ema_update_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "teacher_targets": {"enum": ["logits", "probs"]},
                "precision": {"enum": ["float64", "float32"]},
                "eval_every_epoch": {"type": "boolean"},
                "model": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "encoder_widths": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                        "proj_head_widths": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                        "clf_proj_widths": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                    },
                },
                "augment": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "noise_std": {"type": "number", "minimum": 0},
                        "mask_rate": {"type": "number", "minimum": 0, "maximum": 1},
                        "jitter_scale": {"type": "number", "minimum": 0, "maximum": 1},
                        "standard_noise_std": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ece_bins": {"type": "integer", "minimum": 1},
                "use_max_trace": {"type": "boolean"},
                "recency": {"type": "boolean"},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigError(f"config field '{field}': {exc.message}")
    return config


def build_stream(spec: dict):
    ds = spec["dataset"]
    if ds["type"] == "gaussian":
        dataset = make_gaussian_dataset(
            num_classes=ds.get("num_classes", 10), dim=ds.get("dim", 20),
            train_per_class=ds.get("train_per_class", 100),
            test_per_class=ds.get("test_per_class", 50),
            separation=ds.get("separation", 3.0), noise=ds.get("noise", 1.0),
            seed=ds.get("seed", 0))
    else:
        for key in ("train", "test"):
            if key not in ds:
                raise ConfigError(f"config field 'stream/dataset/{key}': required for csv datasets")
        dataset = load_csv_dataset(ds["train"], ds["test"])
    kind = spec["kind"]
    seed = spec.get("seed", 0)
    if kind == "class-il":
        num_tasks = spec.get("num_tasks", 5)
        cpt = spec.get("classes_per_task", dataset.num_classes // num_tasks)
        return make_class_il_stream(dataset, num_tasks, cpt, seed=seed,
                                    shuffle_classes=spec.get("shuffle_classes", False))
    return make_gcil_stream(dataset, num_tasks=spec.get("num_tasks", 20),
                            samples_per_task=spec.get("samples_per_task", 1000),
                            max_classes=spec.get("max_classes", dataset.num_classes // 2),
                            distribution=kind.split("-", 1)[1], seed=seed,
                            longtail_power=spec.get("longtail_power", 1.0))


def build_train_config(train_spec: dict, method: str, seed: int, stream,
                       preset_override=None) -> TrainConfig:
    values = dict(lr=train_spec.get("lr", 0.03), epochs=train_spec.get("epochs", 5),
                  ema_update_rate=train_spec.get("ema_update_rate", 0.08),
                  ema_decay=train_spec.get("ema_decay", 0.999),
                  alpha=train_spec.get("alpha", 0.1), beta=train_spec.get("beta", 0.3),
                  lam=train_spec.get("lam", 0.15),
                  buffer_size=train_spec.get("buffer_size", 200))
    preset = preset_override if preset_override is not None else train_spec.get("preset")
    if preset:
        values.update(resolve_preset(preset))
    model = None
    if "model" in train_spec:
        m = train_spec["model"]
        model = ModelConfig(
            input_dim=stream.input_dim, num_classes=stream.num_classes,
            encoder_widths=tuple(m.get("encoder_widths", (64, 32))),
            proj_head_widths=tuple(m.get("proj_head_widths", (128, 128, 128))),
            clf_proj_widths=tuple(m.get("clf_proj_widths", (64, 32))))
    aug = train_spec.get("augment", {})
    buffer_size = values["buffer_size"] if method != "sgd" else 0
    return TrainConfig(
        method=method, lr=values["lr"], epochs=values["epochs"],
        batch_size=train_spec.get("batch_size", 32),
        buffer_batch_size=train_spec.get("buffer_batch_size", 32),
        buffer_size=buffer_size,
        weights=LossWeights(alpha=values["alpha"], beta=values["beta"],
                            lam=values["lam"], tau=train_spec.get("tau", 0.5)),
        ema_decay=values["ema_decay"], ema_update_rate=values["ema_update_rate"],
        model=model, augment=AugmentConfig(
            noise_std=aug.get("noise_std", 0.1), mask_rate=aug.get("mask_rate", 0.05),
            jitter_scale=aug.get("jitter_scale", 0.1),
            standard_noise_std=aug.get("standard_noise_std", 0.02)),
        seed=seed, precision=train_spec.get("precision", "float64"),
        teacher_targets=train_spec.get("teacher_targets", "logits"),
        eval_every_epoch=train_spec.get("eval_every_epoch", True))


def execute_run(stream, config: TrainConfig, metrics_spec: dict) -> dict:
    """Train one (method, seed) run and compute its full report payload."""
    state, values = train_stream(stream, config)
    n_tasks = stream.num_tasks
    trace = [state.max_acc.get(j, None) for j in range(n_tasks)]
    class_il = evaluate(state, stream, "class-il")
    task_il = evaluate(state, stream, "task-il")

    report = {
        "schema_version": SCHEMA_VERSION,
        "run_id": f"{config.method}-seed{config.seed}",
        "method": config.method,
        "seed": config.seed,
        "config": _config_to_dict(config),
        "notes": dict(RUN_NOTES),
        "accuracy_matrix": [[None if np.isnan(v) else float(v) for v in row]
                            for row in values],
        "max_trace": trace,
        "class_il": {"per_task": [float(v) for v in class_il],
                     "final_mean": float(class_il.mean())},
        "task_il": {"per_task": [float(v) for v in task_il],
                    "final_mean": float(task_il.mean())},
        "epoch_log": state.epoch_log,
    }

    if values.shape[0] == values.shape[1] and n_tasks >= 2:
        acc = AccuracyMatrix(values, max_trace=np.array(
            [state.max_acc.get(j, np.nan) for j in range(n_tasks)]))
        use_trace = metrics_spec.get("use_max_trace", True)
        per_task_f, mean_f = forgetting(acc, use_max_trace=use_trace)
        s, p, tradeoff = stability_plasticity(acc)
        report["forgetting"] = {"per_task": [float(v) for v in per_task_f],
                                "mean": mean_f,
                                "protocol": "max-trace" if use_trace else "boundary"}
        report["stability"] = s
        report["plasticity"] = p
        report["tradeoff"] = tradeoff

    params = state.ema.params if state.eval_with_ema else state.model.params
    x_test = np.concatenate([t.x_test for t in stream.tasks])
    y_test = np.concatenate([t.y_test for t in stream.tasks])
    logits = predict_logits(params, state.model.config, x_test, dtype=state.model.dtype)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    covered = set().union(*(t.classes for t in stream.tasks))
    if covered == set(range(stream.num_classes)):
        dump = make_calibration_dump(probs, y_test, stream.task_classes())
        report["ece"] = ece(dump, bins=metrics_spec.get("ece_bins", 15))
        if metrics_spec.get("recency", True):
            report["recency"] = [float(v) for v in recency_bias(dump)]
    return report


def aggregate_reports(reports) -> dict:
    """Mean and sample standard deviation (ddof=1) across seeds, per method."""
    by_method: dict = {}
    for rep in reports:
        by_method.setdefault(rep["method"], []).append(rep)

    def stats(vals):
        vals = [v for v in vals if v is not None]
        if not vals:
            return None
        mean = float(np.mean(vals))
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return {"mean": mean, "std": std}

    out = {}
    for method, reps in by_method.items():
        entry = {
            "n_seeds": len(reps),
            "seeds": sorted(r["seed"] for r in reps),
            "class_il": stats([r["class_il"]["final_mean"] for r in reps]),
            "task_il": stats([r["task_il"]["final_mean"] for r in reps]),
            "forgetting": stats([r.get("forgetting", {}).get("mean") for r in reps]),
            "stability": stats([r.get("stability") for r in reps]),
            "plasticity": stats([r.get("plasticity") for r in reps]),
            "tradeoff": stats([r.get("tradeoff") for r in reps]),
            "ece": stats([r.get("ece") for r in reps]),
        }
        out[method] = entry
    return out


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_command(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = args.output or config.get("output_dir")
    if out_dir is None:
        root = os.environ.get("IMEXREG_OUTPUT_ROOT", "runs")
        out_dir = os.path.join(root, config.get("name", Path(args.config).stem))
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    seeds = args.seed_override if args.seed_override else config["seeds"]
    methods = [args.method] if args.method else config["train"]["methods"]
    metrics_spec = config.get("metrics", {})
    stream = build_stream(config["stream"])

    reports = []
    for method in methods:
        for seed in seeds:
            train_config = build_train_config(config["train"], method, seed, stream,
                                              preset_override=args.preset)
            run_id = f"{method}-seed{seed}"
            try:
                report = execute_run(stream, train_config, metrics_spec)
            except DivergenceError as exc:
                print(f"error: run {run_id} diverged: {exc}", file=sys.stderr)
                return 3
            report["created_at"] = _timestamp()
            _dump_json(out_path / f"run-{run_id}.json", report)
            reports.append(report)
            print(f"run {run_id}: class-il {report['class_il']['final_mean']:.2f}%")

    aggregate = {
        "schema_version": SCHEMA_VERSION,
        "created_at": _timestamp(),
        "config_file": str(args.config),
        "methods": aggregate_reports(reports),
    }
    _dump_json(out_path / "aggregate.json", aggregate)
    print(f"wrote {len(reports)} run reports + aggregate to {out_path}")
    return 0


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


REPORT_COLUMNS = ["method", "n_seeds", "class_il_mean", "class_il_std",
                  "task_il_mean", "task_il_std", "forgetting_mean", "forgetting_std",
                  "stability_mean", "plasticity_mean", "tradeoff_mean", "ece_mean"]


def _aggregate_rows(aggregate: dict):
    rows = []
    for method, entry in aggregate["methods"].items():
        def get(metric, field):
            block = entry.get(metric)
            return block[field] if block else None
        rows.append({
            "method": method,
            "n_seeds": entry["n_seeds"],
            "class_il_mean": get("class_il", "mean"), "class_il_std": get("class_il", "std"),
            "task_il_mean": get("task_il", "mean"), "task_il_std": get("task_il", "std"),
            "forgetting_mean": get("forgetting", "mean"),
            "forgetting_std": get("forgetting", "std"),
            "stability_mean": get("stability", "mean"),
            "plasticity_mean": get("plasticity", "mean"),
            "tradeoff_mean": get("tradeoff", "mean"),
            "ece_mean": get("ece", "mean"),
        })
    rows.sort(key=lambda r: -(r["class_il_mean"] if r["class_il_mean"] is not None else -1e18))
    return rows


def render_table(rows) -> str:
    headers = REPORT_COLUMNS
    cells = [[("" if r[h] is None else (f"{r[h]:.4f}" if isinstance(r[h], float) else str(r[h])))
              for h in headers] for r in rows]
    widths = [max(len(h), *(len(row[i]) for row in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def report_command(args) -> int:
    run_dir = Path(args.run_dir)
    agg_path = run_dir / "aggregate.json"
    problems = []
    if not run_dir.is_dir():
        problems.append(str(run_dir))
    elif not agg_path.exists():
        problems.append(str(agg_path))
    aggregate = None
    if not problems:
        try:
            aggregate = json.loads(agg_path.read_text())
        except json.JSONDecodeError:
            problems.append(str(agg_path))
    if problems:
        print("error: missing or corrupt report files: " + ", ".join(problems),
              file=sys.stderr)
        return 2

    rows = _aggregate_rows(aggregate)
    csv_path = Path(args.csv) if args.csv else run_dir / "summary.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else repr(row[k])
                             if isinstance(row[k], float) else row[k])
                             for k in REPORT_COLUMNS})
    print(render_table(rows))
    print(f"\nwrote {csv_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="imexreg",
                                     description="continual-learning experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("config", help="path to the JSON experiment config")
    run_p.add_argument("--output", help="output directory (overrides config and env)")
    run_p.add_argument("--seed-override", type=lambda s: [int(v) for v in s.split(",")],
                       default=None, help="comma-separated seeds replacing the config's")
    run_p.add_argument("--method", choices=["imex-reg", "er", "sgd", "joint"],
                       help="run only this method")
    run_p.add_argument("--preset", default=None,
                       help="hyperparameter preset name overriding the config's")
    run_p.set_defaults(func=run_command)

    rep_p = sub.add_parser("report", help="summarize a finished run directory")
    rep_p.add_argument("run_dir", help="directory holding run-*.json and aggregate.json")
    rep_p.add_argument("--csv", default=None, help="where to write the CSV summary")
    rep_p.set_defaults(func=report_command)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
