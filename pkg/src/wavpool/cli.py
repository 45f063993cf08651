"""``wavpool`` command line: decompose, reconstruct, train, evaluate, hpo, report.

Exit codes: 0 success, 2 user/input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import dump_config, load_config
from .errors import ConfigError, DivergenceError, FormatError, WavPoolError
from .hpo import default_space, evaluate_config, read_log, realize, search
from .models import build_model, config_from_dict, config_to_dict, default_config
from .nn import OptimizerConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, format_row, run_trials
from .wavelet import (
    DetailTriple,
    MRDecomposition,
    PadRecord,
    decompose,
    haar_filters_2d,
    reconstruct,
)

log = logging.getLogger("wavpool")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
IMAGE_SHAPES = {"mnist": (28, 28), "fashion": (28, 28), "cifar10": (32, 32)}
TRAIN_KEYS = ("max_epochs", "patience", "batch_size", "optimizer", "learning_rate",
              "adam_beta1", "adam_beta2", "adam_eps", "n_train", "n_val")
# keys echoed into resolved_config.txt that are fixed by flags, not by the file
ECHO_ONLY_KEYS = ("task", "arch", "seed", "trial_seeds")
REPORT_METRICS = ("accuracy", "roc_auc", "f1", "loss")


class UsageError(WavPoolError):
    pass


def echo_config(resolved: dict, out_dir=None):
    print("resolved config:")
    print(dump_config(resolved), end="")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.txt").write_text(dump_config(resolved))


# ---------------------------------------------------------------- decompose

def read_grid(path) -> np.ndarray:
    """Read a grayscale PGM/PNG image or a raw float grid (``.npy`` or text)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".npy":
        grid = np.load(path)
    elif suffix in (".txt", ".csv"):
        grid = np.loadtxt(path, delimiter="," if suffix == ".csv" else None, ndmin=2)
    elif suffix in (".pgm", ".png"):
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "I", "I;16", "F"):
                raise FormatError(f"{path}: image mode {im.mode} is not single-channel")
            grid = np.asarray(im, dtype=np.float64)
    else:
        raise FormatError(f"{path}: unsupported input format {suffix or '(none)'}")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise FormatError(f"{path}: expected a 2D grid, got shape {grid.shape}")
    return grid


def write_mrd(mrd: MRDecomposition, out_dir, source=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    views = {}
    for name, arr in mrd.views():
        np.save(out_dir / f"{name}.npy", arr)
        views[name] = {"file": f"{name}.npy", "shape": list(arr.shape)}
    manifest = {
        "input_shape": list(mrd.input_shape),
        "levels": mrd.num_levels,
        "level_order": "finest_first",
        "wavelet": "haar",
        "normalization": "2d filters with entries +-1/2 (orthonormal, self-inverse)",
        "pad_mode": "replicate-edge, bottom/right, before each level",
        "pad_log": [asdict(r) for r in mrd.pad_log],
        "views": views,
        "source": str(source) if source else None,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_mrd(in_dir) -> tuple[MRDecomposition, dict]:
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {in_dir}")
    manifest = json.loads(manifest_path.read_text())
    load = lambda name: np.load(in_dir / manifest["views"][name]["file"])  # noqa: E731
    levels = [DetailTriple(*(load(f"level{i}_{a}") for a in "vhd"))
              for i in range(1, manifest["levels"] + 1)]
    pad_log = [PadRecord(tuple(r["original_shape"]), r["rows_added"], r["cols_added"])
               for r in manifest["pad_log"]]
    mrd = MRDecomposition(load("smooth"), levels, tuple(manifest["input_shape"]), pad_log)
    return mrd, manifest


def cmd_decompose(args):
    grid = read_grid(args.input)
    echo_config({"command": "decompose", "input": str(args.input), "out": str(args.out),
                 "levels": args.levels})
    mrd = decompose(grid, haar_filters_2d(), args.levels)
    write_mrd(mrd, args.out, source=Path(args.input).resolve())
    for name, arr in mrd.views():
        print(f"{name:12s} {arr.shape[0]}x{arr.shape[1]}")
    err = float(np.max(np.abs(reconstruct(mrd) - grid)))
    print(f"round-trip max-abs error: {err:.3e}")
    return EXIT_OK


def cmd_reconstruct(args):
    mrd, manifest = read_mrd(args.input)
    echo_config({"command": "reconstruct", "in": str(args.input), "out": str(args.out)})
    signal = reconstruct(mrd, haar_filters_2d())
    if args.out:
        np.save(args.out, signal)
        print(f"wrote {args.out}")
    reference = args.reference or manifest.get("source")
    if reference and Path(reference).exists():
        err = float(np.max(np.abs(signal - read_grid(reference))))
        print(f"max-abs error vs {reference}: {err:.3e}")
        if err > 1e-10:
            return EXIT_NUMERIC
    return EXIT_OK


# ------------------------------------------------------------------ train

def resolve_train_settings(args, file_values: dict):
    """Split file + flag values into (model config, TrainConfig, split sizes, resolved dict)."""
    values = {k: v for k, v in file_values.items() if k not in ECHO_ONLY_KEYS}
    for key in ("max_epochs", "patience", "batch_size", "optimizer", "learning_rate", "n_train", "n_val"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    train_values = {k: values.pop(k) for k in TRAIN_KEYS if k in values}
    shape = IMAGE_SHAPES[args.task]
    base = config_to_dict(default_config(args.arch, shape))
    base.update(values)
    model_cfg = config_from_dict(args.arch, base)
    opt = OptimizerConfig(kind=train_values.get("optimizer", "adam"),
                          learning_rate=float(train_values.get("learning_rate", 1e-3)),
                          beta1=float(train_values.get("adam_beta1", 0.9)),
                          beta2=float(train_values.get("adam_beta2", 0.999)),
                          eps=float(train_values.get("adam_eps", 1e-8)))
    patience = train_values.get("patience", 5)
    train_cfg = TrainConfig(int(train_values.get("max_epochs", 120)),
                            None if patience in (None, 0, "none") else int(patience),
                            int(train_values.get("batch_size", 64)), opt, args.seed)
    n_train = int(train_values.get("n_train", 4000))
    n_val = int(train_values.get("n_val", 2000))
    resolved = {"task": args.task, "arch": args.arch, "seed": args.seed,
                **config_to_dict(model_cfg),
                "max_epochs": train_cfg.max_epochs, "patience": train_cfg.patience,
                "batch_size": train_cfg.batch_size, "optimizer": opt.kind,
                "learning_rate": opt.learning_rate, "adam_beta1": opt.beta1,
                "adam_beta2": opt.beta2, "adam_eps": opt.eps,
                "n_train": n_train, "n_val": n_val}
    return model_cfg, train_cfg, n_train, n_val, resolved


def write_trials(result: dict, out_dir: Path, task: str, resolved: dict):
    for report in result["reports"]:
        trial_dir = out_dir / f"trial_seed{report.seed}"
        report.write(trial_dir)
        save_checkpoint(trial_dir / "checkpoint", report.model, resolved, report.seed, report.best_epoch)
    agg = result["aggregate"]
    summary = {"task": task, "arch": result["arch"], "seeds": [r.seed for r in result["reports"]],
               "aggregate": agg, "config": resolved}
    (out_dir / "aggregate.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_train(args):
    file_values = load_config(args.config) if args.config else {}
    model_cfg, train_cfg, n_train, n_val, resolved = resolve_train_settings(args, file_values)
    seeds = [args.seed + i for i in range(args.trials)]
    resolved["trial_seeds"] = seeds
    out_dir = Path(args.out)
    echo_config(resolved, out_dir)
    dataset = data_mod.load_task(args.task, args.data_dir, "train")
    result = run_trials(args.arch, model_cfg, dataset, train_cfg, seeds, n_train, n_val)
    summary = write_trials(result, out_dir, args.task, resolved)
    print("block | parameters | ROC AUC | accuracy")
    print(format_row(args.arch, summary["aggregate"]))
    return EXIT_OK


def cmd_evaluate(args):
    ckpt = Path(args.checkpoint)
    manifest = json.loads((ckpt / "manifest.json").read_text())
    cfg = manifest["config"]
    arch, task = cfg["arch"], args.task or cfg["task"]
    model_keys = set(config_to_dict(default_config(arch, IMAGE_SHAPES[task])))
    model_cfg = config_from_dict(arch, {k: v for k, v in cfg.items() if k in model_keys})
    echo_config({"command": "evaluate", "checkpoint": str(ckpt), "task": task, "split": args.split,
                 "seed": manifest["seed"]})
    model = build_model(arch, model_cfg, manifest["seed"])
    load_checkpoint(ckpt, model)
    ds = data_mod.load_task(task, args.data_dir, args.split)
    result = evaluate(model, ds, getattr(model_cfg, "num_classes", None))
    cm = result.pop("confusion")
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"confusion_{args.split}.csv", "w", newline="") as f:
        csv.writer(f).writerows(cm.tolist())
    (out / f"metrics_{args.split}.json").write_text(json.dumps(result, indent=2))
    for k, v in result.items():
        print(f"{k}: {v:.4f}")
    return EXIT_OK


# -------------------------------------------------------------------- hpo

def cmd_hpo(args):
    shape = IMAGE_SHAPES[args.task]
    strategy = {"gp": "gp_ei", "gp_ei": "gp_ei", "random": "random"}[args.strategy]
    out_dir = Path(args.out)
    resolved = {"command": "hpo", "task": args.task, "arch": args.arch, "budget": args.budget,
                "strategy": strategy, "seed": args.seed, "search_epochs": args.epochs,
                "final_max_epochs": args.max_epochs, "final_patience": args.patience,
                "batch_size": args.batch_size, "n_train": args.n_train, "n_val": args.n_val,
                "final_trials": args.trials}
    echo_config(resolved, out_dir)
    dataset = data_mod.load_task(args.task, args.data_dir, "train")
    train_ds, val_ds = data_mod.subset_split(dataset, data_mod.SplitSpec(args.seed, args.n_train, args.n_val))
    log_path = out_dir / "trials.jsonl"
    history = read_log(log_path) if args.resume else []
    if not args.resume and log_path.exists():
        log_path.unlink()

    def objective(config):
        rec = evaluate_config(args.arch, config, train_ds, val_ds, args.seed, args.epochs, args.batch_size)
        print(f"trial f1={rec.f1:.4f}{' (diverged)' if rec.diverged else ''} {json.dumps(config)}")
        return rec

    best, records = search(default_space(args.arch), objective, args.budget, strategy, args.seed,
                           history=history, log_path=log_path)
    if all(r.diverged for r in records):
        print("all trials diverged", file=sys.stderr)
        return EXIT_NUMERIC
    (out_dir / "best_config.json").write_text(json.dumps(best, indent=2))
    print(f"best config: {json.dumps(best)}")

    model_cfg, opt = realize(args.arch, best, shape, 10)
    train_cfg = TrainConfig(args.max_epochs, args.patience, args.batch_size, opt, args.seed)
    seeds = [args.seed + i for i in range(args.trials)]
    final_resolved = {"task": args.task, "arch": args.arch, "seed": args.seed,
                      **config_to_dict(model_cfg), "optimizer": opt.kind,
                      "learning_rate": opt.learning_rate, "max_epochs": args.max_epochs,
                      "patience": args.patience, "batch_size": args.batch_size,
                      "n_train": args.n_train, "n_val": args.n_val, "trial_seeds": seeds}
    result = run_trials(args.arch, model_cfg, dataset, train_cfg, seeds, args.n_train, args.n_val)
    summary = write_trials(result, out_dir / "final", args.task, final_resolved)
    print("block | parameters | ROC AUC | accuracy")
    print(format_row(args.arch, summary["aggregate"]))
    return EXIT_OK


# ----------------------------------------------------------------- report

def relative_gain(wavpool: float, other: float) -> float:
    """Fractional change of WavPool over another block; negative loss entries favour WavPool."""
    return (wavpool - other) / other


def load_summaries(dirs):
    summaries = []
    for d in dirs:
        path = Path(d) / "aggregate.json"
        if not path.exists():
            raise FileNotFoundError(f"no aggregate.json in {d}")
        summaries.append(json.loads(path.read_text()))
    return summaries


def comparison_rows(summaries):
    """Per-run rows plus WavPool-vs-other relative rows, grouped by task."""
    runs, gains = [], []
    by_task = {}
    for s in summaries:
        by_task.setdefault(s["task"], {})[s["arch"]] = s["aggregate"]
        row = {"task": s["task"], "arch": s["arch"], "param_count": s["aggregate"].get("param_count")}
        for m in REPORT_METRICS:
            if m in s["aggregate"]:
                row[m] = s["aggregate"][m]["mean"]
                row[f"{m}_spread"] = s["aggregate"][m]["spread"]
        runs.append(row)
    for task, archs in by_task.items():
        if "wavpool" not in archs:
            continue
        for other, agg in archs.items():
            if other == "wavpool":
                continue
            row = {"task": task, "versus": other}
            for m in REPORT_METRICS:
                if m not in agg or m not in archs["wavpool"]:
                    log.warning("metric %s missing for %s/%s; column omitted", m, task, other)
                    continue
                row[m] = relative_gain(archs["wavpool"][m]["mean"], agg[m]["mean"])
            gains.append(row)
    return runs, gains


def _table(rows, fmt: str) -> str:
    if not rows:
        return ""
    columns = list(dict.fromkeys(k for r in rows for k in r))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, columns)
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    cell = lambda v: f"{v:.4f}" if isinstance(v, float) else ("" if v is None else str(v))  # noqa: E731
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(cell(r.get(c)) for c in columns) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def render_report(summaries, fmt: str) -> str:
    runs, gains = comparison_rows(summaries)
    if fmt == "json":
        return json.dumps({"runs": runs, "relative_to_wavpool": gains}, indent=2) + "\n"
    if fmt == "csv":
        return _table(runs, "csv") + "\n" + _table(gains, "csv")
    return "## Runs\n\n" + _table(runs, fmt) + "\n## WavPool fractional change\n\n" + _table(gains, fmt)


def cmd_report(args):
    echo_config({"command": "report", "in": [str(d) for d in args.input], "format": args.format})
    text = render_report(load_summaries(args.input), args.format)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavpool", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="Haar MRD of a grayscale image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", help="invert an MRD directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--reference", help="grid to compare against (default: manifest source)")
    p.set_defaults(func=cmd_reconstruct)

    def data_flags(p):
        p.add_argument("--task", required=True, choices=sorted(IMAGE_SHAPES))
        p.add_argument("--data-dir", help="dataset root (default $WAVPOOL_DATA_DIR)")

    def train_flags(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--n-train", type=int)
        p.add_argument("--n-val", type=int)

    p = sub.add_parser("train", help="train one architecture (one or more seeded trials)")
    data_flags(p)
    p.add_argument("--arch", required=True, choices=["wavpool", "mlp", "cnn"])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--learning-rate", "--lr", type=float)
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the official test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=sorted(IMAGE_SHAPES))
    p.add_argument("--data-dir")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("hpo", help="hyperparameter search followed by final three-seed training")
    data_flags(p)
    p.add_argument("--arch", required=True, choices=["wavpool", "mlp", "cnn"])
    p.add_argument("--budget", type=int, default=25)
    p.add_argument("--strategy", choices=["random", "gp", "gp_ei"], default="gp")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--epochs", type=int, default=20, help="abbreviated training length per trial")
    p.add_argument("--max-epochs", type=int, default=120)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--n-train", type=int, default=4000)
    p.add_argument("--n-val", type=int, default=2000)
    p.set_defaults(func=cmd_hpo)

    p = sub.add_parser("report", help="comparison tables from training output directories")
    p.add_argument("--in", dest="input", nargs="+", required=True)
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, FormatError, ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
