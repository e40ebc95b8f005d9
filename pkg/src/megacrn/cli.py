"""Command-line entry point: ``megacrn {train,eval,ablate,export,synth}``.

Option names match the ``ModelConfig`` / ``TrainConfig`` field names
(``--batch_size`` and ``--batch-size`` both work). Values are resolved as
dataclass defaults, then ``--config`` (a ``key = value`` file or a previous
run's ``manifest.json``), then flags. Output goes to ``--output_dir``, else
``$MEGACRN_OUTPUT_DIR``, else ``./runs``.
"""
import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .data import build_split, default_window, fingerprint, load_adjacency, load_dataset, prepare, save_dataset
from .errors import ConfigError, EmptyDatasetError, TrainingAborted, UnsupportedOperation
from .model import VARIANTS, ModelConfig
from .synthetic import SyntheticSpec, generate, regime_switching_fixture, save_labels
from .training import (
    TrainConfig,
    build_model,
    default_horizons,
    evaluate,
    load_checkpoint,
    train,
)

log = logging.getLogger("megacrn")

OUTPUT_ENV = "MEGACRN_OUTPUT_DIR"
EXPORTS = ("embeddings", "attention", "graph")


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional_float(text):
    return None if str(text).strip().lower() in ("none", "off", "") else float(text)


def _int_list(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _float_list(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _variant(text):
    if text not in VARIANTS:
        raise argparse.ArgumentTypeError(f"invalid variant {text!r}; choose from {', '.join(VARIANTS)}")
    return text


MODEL_OPTIONS = {
    "variant": _variant,
    "hidden": int,
    "layers": int,
    "cheb_order": int,
    "embed_dim": int,
    "memory_size": int,
    "memory_dim": int,
    "lookback": int,
    "horizon": int,
    "hyper_bias": _bool,
}
TRAIN_OPTIONS = {
    "lr": float,
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "kappa1": float,
    "kappa2": float,
    "margin": float,
    "seed": int,
    "grad_clip": _optional_float,
    "deterministic": _bool,
    "mask_zeros": _bool,
    "horizons": _int_list,
}
DATA_OPTIONS = {
    "data": str,
    "interval_minutes": int,
    "ratios": _float_list,
    "include_zeros": _bool,
    "val_start": str,
    "test_start": str,
    "adjacency": str,
}
ALL_OPTIONS = {**MODEL_OPTIONS, **TRAIN_OPTIONS, **DATA_OPTIONS}


def read_config_file(path):
    """Parse a ``key = value`` file (``#`` comments) or a run manifest."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix.lower() == ".json":
        raw = json.loads(path.read_text()).get("config", {})
        return {k: v for k, v in raw.items() if k in ALL_OPTIONS and v is not None}
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "epochs":
            key = "max_epochs"
        if key not in ALL_OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = ALL_OPTIONS[key](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def _add_options(parser, names):
    for name in names:
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        if name == "max_epochs":
            flags.append("--epochs")
        parser.add_argument(*flags, dest=name, type=ALL_OPTIONS[name], default=None)


def _add_common(parser):
    parser.add_argument("--config", help="key = value file or a previous manifest.json")
    parser.add_argument("--output_dir", "--output-dir", dest="output_dir", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="megacrn", description="Meta-graph convolutional recurrent forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant")
    _add_common(p)
    _add_options(p, ALL_OPTIONS)

    p = sub.add_parser("ablate", help="train all four variants with a shared config")
    _add_common(p)
    _add_options(p, [k for k in ALL_OPTIONS if k != "variant"])

    p = sub.add_parser("eval", help="masked metrics of a checkpoint on one split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    _add_options(p, ["data", "interval_minutes", "ratios", "include_zeros", "val_start", "test_start",
                     "horizons", "mask_zeros"])

    p = sub.add_parser("export", help="write embeddings, attention or graph tables for one sample")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--what", choices=EXPORTS, required=True)
    p.add_argument("--at", type=int, default=0, help="window index within the split")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    _add_options(p, ["data", "interval_minutes", "ratios", "include_zeros", "val_start", "test_start"])

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", default=None, help="dataset path (.csv, .tsv, .txt or .npz)")
    p.add_argument("--fixture", action="store_true", help="the two-incident regime-switching fixture")
    p.add_argument("--n_nodes", "--n-nodes", dest="n_nodes", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--interval_minutes", "--interval-minutes", dest="interval_minutes", type=int, default=None)
    p.add_argument("--noise_std", "--noise-std", dest="noise_std", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    return parser


# ---------------------------------------------------------------- resolution

def resolve(args):
    """Merge config file and flags into one flat dict of explicitly set options."""
    merged = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in ALL_OPTIONS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return merged


def output_dir(args):
    return Path(args.output_dir or os.environ.get(OUTPUT_ENV) or "runs")


def load_data(opts):
    if "data" not in opts:
        raise ConfigError("--data is required")
    path = Path(opts["data"])
    if not path.exists():
        raise ConfigError(f"dataset {path} does not exist")
    return load_dataset(path, opts.get("interval_minutes"))


def _boundaries(opts):
    if opts.get("val_start") or opts.get("test_start"):
        if not (opts.get("val_start") and opts.get("test_start")):
            raise ConfigError("val_start and test_start must be given together")
        return opts["val_start"], opts["test_start"]
    return None


def prepare_data(tm, opts, lookback, horizon):
    return prepare(
        tm, lookback, horizon,
        ratios=tuple(opts.get("ratios", (0.7, 0.1, 0.2))),
        include_zeros=opts.get("include_zeros", True),
        boundaries=_boundaries(opts),
    )


def model_config(opts, tm, variant=None):
    kw = {k: opts[k] for k in MODEL_OPTIONS if k in opts}
    window = default_window(tm.interval_minutes)
    kw.setdefault("lookback", window)
    kw.setdefault("horizon", window)
    if variant is not None:
        kw["variant"] = variant
    return ModelConfig(n_nodes=tm.n_nodes, **kw)


def train_config(opts):
    kw = {k: opts[k] for k in TRAIN_OPTIONS if k in opts}
    defaults = TrainConfig()
    max_epochs = kw.get("max_epochs", defaults.max_epochs)
    patience = kw.get("patience", defaults.patience)
    if patience > max_epochs:
        log.warning("patience %d exceeds max_epochs %d; clamping patience", patience, max_epochs)
        kw["patience"] = max_epochs
    return TrainConfig(**kw)


def resolved_config(opts, mcfg, tcfg):
    """Every option with defaults materialized, flat, in manifest form."""
    out = {k: v for k, v in mcfg.to_dict().items() if k in MODEL_OPTIONS}
    out.update(tcfg.to_dict())
    out.update(
        data=str(opts["data"]),
        interval_minutes=opts.get("interval_minutes"),
        ratios=list(opts.get("ratios", (0.7, 0.1, 0.2))),
        include_zeros=opts.get("include_zeros", True),
        val_start=opts.get("val_start"),
        test_start=opts.get("test_start"),
        adjacency=opts.get("adjacency"),
    )
    return out


def config_hash(config):
    shared = {k: v for k, v in config.items() if k != "variant"}
    return hashlib.sha256(json.dumps(shared, sort_keys=True).encode()).hexdigest()[:12]


def write_manifest(path, command, config, tm_path, artifacts, adjacency=None):
    manifest = {
        "tool": "megacrn",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": config["seed"],
        "dataset": {"path": str(tm_path), "sha256": fingerprint(tm_path)},
        "adjacency": None if adjacency is None else {"path": str(adjacency), "sha256": fingerprint(adjacency)},
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "torch": torch.__version__,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2))
    return manifest


def _check_adjacency(opts, tm):
    # no variant consumes a predefined graph; the file is checked and fingerprinted only
    if opts.get("adjacency"):
        load_adjacency(opts["adjacency"], tm.n_nodes)
        return opts["adjacency"]
    return None


# ---------------------------------------------------------------- commands

def _train_one(opts, tm, data, out, variant=None, command="train"):
    mcfg = model_config(opts, tm, variant)
    tcfg = train_config(opts)
    config = resolved_config(opts, mcfg, tcfg)
    artifacts = {"manifest": out / "manifest.json", "log": out / "train_log.jsonl",
                 "checkpoint": out / "checkpoint.pt", "metrics": out / "metrics.csv"}
    write_manifest(artifacts["manifest"], command, config, opts["data"], artifacts, _check_adjacency(opts, tm))
    model = build_model(mcfg, seed=tcfg.seed)
    result = train(model, data, tcfg, out_dir=out)
    horizons = tcfg.horizons or default_horizons(mcfg.horizon)
    report = evaluate(model, data.normalizer, data.test, horizons, tcfg.mask_zeros, tcfg.batch_size)
    artifacts["metrics"].write_text(report.to_csv())
    return config, result, report


def cmd_train(args):
    opts = resolve(args)
    tm = load_data(opts)
    opts.setdefault("variant", "mega")
    mcfg = model_config(opts, tm)
    data = prepare_data(tm, opts, mcfg.lookback, mcfg.horizon)
    out = output_dir(args)
    _, result, report = _train_one(opts, tm, data, out)
    print(f"best_epoch = {result.best_epoch}")
    print(f"val_mae = {result.best_val_mae:.6f}")
    print(report.to_text())
    print(f"wrote {out}")
    return 0


def cmd_ablate(args):
    opts = resolve(args)
    opts.pop("variant", None)
    tm = load_data(opts)
    probe = model_config(opts, tm, "mega")
    data = prepare_data(tm, opts, probe.lookback, probe.horizon)
    out = output_dir(args)
    rows = []
    horizons = None
    for variant in VARIANTS:
        config, result, report = _train_one(opts, tm, data, out / variant, variant, command="ablate")
        horizons = list(report.horizons)
        rows.append((variant, config_hash(config), result.best_val_mae, report))
    header = ["variant", "config_hash", "val_mae"]
    for h in horizons:
        header += [f"horizon{h}_mae", f"horizon{h}_rmse"]
    header += ["all_mae", "all_rmse"]
    lines = [",".join(header)]
    for variant, digest, val, report in rows:
        cells = [variant, digest, f"{val:.6f}"]
        for _, m in report.rows():
            cells += [_fmt(m.mae), _fmt(m.rmse)]
        lines.append(",".join(cells))
    table = "\n".join(lines) + "\n"
    (out / "ablation.csv").write_text(table)
    print(table, end="")
    return 0


def _fmt(x):
    return "undefined" if x is None else f"{x:.6f}"


def _checkpoint_split(args, opts):
    model, normalizer, _ = load_checkpoint(args.checkpoint)
    tm = load_data(opts)
    c = model.config
    if tm.n_nodes != c.n_nodes:
        raise ConfigError(f"dataset has {tm.n_nodes} nodes, checkpoint expects {c.n_nodes}")
    data = prepare_data(tm, opts, c.lookback, c.horizon)
    split = build_split(data.raw[args.split], normalizer, c.lookback, c.horizon)
    return model, normalizer, split, tm


def cmd_eval(args):
    opts = resolve(args)
    model, normalizer, split, _ = _checkpoint_split(args, opts)
    horizons = opts.get("horizons") or default_horizons(model.config.horizon)
    report = evaluate(model, normalizer, split, horizons, opts.get("mask_zeros", True))
    out = output_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"metrics_{args.split}.csv").write_text(report.to_csv())
    print(report.to_text())
    return 0


def write_table(path, matrix, row_ids, col_ids):
    lines = [",".join(["node"] + list(col_ids))]
    for rid, row in zip(row_ids, np.asarray(matrix)):
        lines.append(",".join([rid] + [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path):
    """Inverse of ``write_table``: returns ``(matrix, row_ids, col_ids)``."""
    rows = [line.split(",") for line in Path(path).read_text().splitlines()]
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]]), [r[0] for r in rows[1:]], rows[0][1:]


def export_tables(model, x, what, nodes, out, tag):
    """Write the requested tables for one normalized input window ``x`` (alpha, N, C)."""
    model.eval()
    with torch.no_grad():
        trace = model(torch.as_tensor(x, dtype=next(model.parameters()).dtype))
    written = []
    if what == "graph":
        written.append(write_table(out / f"graph_{tag}.csv", trace.decoder_graph, nodes, nodes))
    elif what == "attention":
        if trace.readout is None:
            raise UnsupportedOperation(f"variant {model.variant!r} has no memory; attention export needs mega or memory")
        cols = [f"proto{j}" for j in range(model.config.memory_size)]
        written.append(write_table(out / f"attention_{tag}.csv", trace.readout.A, nodes, cols))
    else:
        cols = [f"e{j}" for j in range(model.config.embed_dim)]
        written.append(write_table(out / "embeddings_static.csv", model.node_embedding.detach(), nodes, cols))
        if trace.decoder_embedding is not None:
            written.append(write_table(out / f"embeddings_{tag}.csv", trace.decoder_embedding, nodes, cols))
        elif model.momentary_proj is not None:
            emb = trace.hidden @ model.momentary_proj
            written.append(write_table(out / f"embeddings_{tag}.csv", emb, nodes, cols))
    return written


def cmd_export(args):
    opts = resolve(args)
    model, _, split, tm = _checkpoint_split(args, opts)
    if not 0 <= args.at < len(split):
        raise ConfigError(f"--at {args.at} out of range; {args.split} split has {len(split)} windows")
    if args.what == "attention" and model.memory is None:
        raise UnsupportedOperation(f"variant {model.variant!r} has no memory; attention export needs mega or memory")
    out = output_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    nodes = list(tm.node_ids) if tm.node_ids is not None else [f"node{i}" for i in range(tm.n_nodes)]
    for path in export_tables(model, split.inputs[args.at][..., None], args.what, nodes, out, f"{args.split}{args.at}"):
        print(path)
    return 0


def cmd_synth(args):
    if args.fixture:
        spec = regime_switching_fixture(seed=args.seed or 0, noise_std=1.0 if args.noise_std is None else args.noise_std)
    else:
        kw = {k: getattr(args, k) for k in ("n_nodes", "steps", "interval_minutes", "noise_std", "seed")
              if getattr(args, k) is not None}
        spec = SyntheticSpec(**kw)
    tm, labels = generate(spec)
    out = Path(args.out) if args.out else output_dir(args) / "synthetic.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(tm, out)
    labels_path = save_labels(labels, out.with_name(out.stem + "_labels.json"))
    print(out)
    print(labels_path)
    return 0


COMMANDS = {"train": cmd_train, "ablate": cmd_ablate, "eval": cmd_eval, "export": cmd_export, "synth": cmd_synth}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"megacrn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"megacrn {args.command}: training aborted: {exc}", file=sys.stderr)
        return 1
    except (UnsupportedOperation, EmptyDatasetError, ValueError, OSError) as exc:
        print(f"megacrn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
