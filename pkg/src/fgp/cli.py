"""Command-line driver: ``fgp <command> [--config FILE] [flags]``.

Every command resolves its settings from built-in defaults, the matching
section of a JSON config file and command-line flags (in increasing
priority), computes all outputs in memory, and only then writes them into
a fresh run directory in one rename. A failed command leaves nothing behind.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import benchdata as bd
from .encoder import EncoderConfig, EncoderModel, encode_batch, predict_graphs
from .errors import (
    BatchSurrogateError,
    ConfigError,
    FGPError,
    GraphError,
    InvalidHyperparameter,
    IoError,
    LabelAccessError,
    NumericOverflow,
    ParseError,
    SchemaError,
    ShapeMismatch,
)
from .evalmetrics import evaluate, pca_points_csv, pca_project
from .nassearch import EncoderPredictor, OracleEvaluator, OraclePredictor, random_search, run_npenas, trace_to_csv
from .surrogate import batch_surrogates, init_params, surrogates_to_csv
from .training import LAMBDA_PRESETS, FinetuneConfig, PretrainConfig, finetune, pretrain
from .training import trace_to_csv as loss_trace_csv

DEFAULT_SEED = 97
OUTPUT_ENV = "FGP_OUTPUT_DIR"

ENCODER_KEYS = {
    "hidden_dim": 64,
    "num_layers": 3,
    "epsilon": 0.0,
    "epsilon_learnable": False,
    "decoder_dims": [64],
    "head_dims": [64],
}
TUNE_KEYS = {
    "margin": 0.1,
    "train_ratio": 0.01,
    "epochs": 300,
    "patience": 50,
    "batch_size": 256,
    "lr": 1e-3,
    "weight_decay": 1e-6,
    "regressor_init": "proxy",
}

DEFAULTS = {
    "generate": {
        "family": "cell201-like", "count": 2000, "oracle_seed": 0, "label": True,
        "train_frac": 0.5, "val_count": 40,
        "min_nodes": None, "max_nodes": None, "max_edges": None, "edge_prob": None,
    },
    "surrogate": {"dataset": None, "k": 8, "sigma": 0.1, "alpha": 0.5, "aggregation": "sum"},
    "pretrain": {
        "dataset": None, **ENCODER_KEYS, "lambda_preset": None, "lambda1": 0.5, "lambda2": 0.5,
        "margin": 0.1, "batch_size": 256, "epochs": 200, "lr": 1e-3, "weight_decay": 1e-6, "train_only": False,
    },
    "finetune": {"dataset": None, "checkpoint": None, "baseline": False, **ENCODER_KEYS, **TUNE_KEYS},
    "eval": {"dataset": None, "checkpoint": None, "predictions": None, "split": "test", "percents": [1, 5]},
    "nas": {
        "family": "cell201-like", "predictor": "pretrained", "checkpoint": None, **ENCODER_KEYS,
        "budget": 200, "initial": 20, "select": 20, "mutants_per_parent": 5, "oracle_seed": 0,
        "finetune_epochs": 50, "reference_dataset": None, "reference_count": 2000,
    },
    "pca": {"dataset": None, "checkpoint": None, "source": "surrogate"},
}
PIPELINE = ("generate", "surrogate", "pretrain", "finetune", "eval")
COMMANDS = (*DEFAULTS, "pipeline")

# exit status per error category
EXIT_CODES = (
    (ConfigError, 2),
    (InvalidHyperparameter, 2),
    (IoError, 3),
    (ParseError, 4),
    (SchemaError, 4),
    (ShapeMismatch, 4),
    (LabelAccessError, 5),
    (GraphError, 5),
    (NumericOverflow, 6),
    (BatchSurrogateError, 6),
)


def exit_code_for(err: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(err, cls):
            return code
    return 1


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    """Read a JSON config; ``"smoke"`` names the bundled smoke-test config."""
    if path is None:
        return {}
    if str(path) == "smoke":
        text = resources.files("fgp").joinpath("configs/smoke.json").read_text()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} does not exist")
        text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(DEFAULTS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; known: {['seed', *DEFAULTS]}")
    return doc


def resolve_section(command: str, config: dict, overrides: dict) -> dict:
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {command!r} must be an object")
    unknown = set(section) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError(f"unknown keys in section {command!r}: {sorted(unknown)}")
    out = {**DEFAULTS[command], **section}
    out.update({k: v for k, v in overrides.items() if v is not None and k in out})
    return out


def resolve_seed(flag, config: dict) -> int:
    seed = flag if flag is not None else config.get("seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return seed


def _require_file(section: dict, key: str, command: str) -> Path:
    value = section.get(key)
    if not value:
        raise ConfigError(f"{command}: no {key} given (use --{key.replace('_', '-')} or the config)")
    p = Path(value)
    if not p.is_file():
        raise ConfigError(f"{command}: {key} {value!r} does not exist")
    return p


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from None


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _build(fn, what, **kwargs):
    try:
        return fn(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, FGPError):
            raise
        raise ConfigError(f"invalid {what} settings: {e}") from None


def _encoder_config(section, num_ops, surrogate_dim=8) -> EncoderConfig:
    return _build(
        EncoderConfig, "encoder", num_ops=num_ops, surrogate_dim=surrogate_dim,
        **{k: section[k] for k in ENCODER_KEYS},
    )


def _load_checkpoint(path: Path):
    text = _read(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"checkpoint {path} is not JSON: {e}") from None
    return EncoderModel.from_dict(doc), text


def _dump_checkpoint(model: EncoderModel) -> str:
    return json.dumps(model.to_dict()) + "\n"


# ---------------------------------------------------------------- stages

def stage_generate(sec: dict, seed: int) -> bd.BenchDataset:
    overrides = {k: sec[k] for k in ("min_nodes", "max_nodes", "max_edges", "edge_prob") if sec[k] is not None}
    spec = _build(bd.space_spec, "space", family=sec["family"], **overrides)
    ds = bd.generate_space(spec, int(sec["count"]), seed=seed)
    if sec["label"]:
        bd.label_dataset(ds, int(sec["oracle_seed"]))
    return bd.make_splits(ds, sec["train_frac"], int(sec["val_count"]), seed=seed)


def stage_surrogate(ds, sec: dict, seed: int, jobs: int):
    params = _build(
        init_params, "surrogate", vocab=ds.vocab, k=int(sec["k"]), sigma=sec["sigma"],
        alpha=sec["alpha"], seed=seed, aggregation=sec["aggregation"],
    )
    surrogates = batch_surrogates(ds.graphs(), params, jobs=jobs)
    return bd.with_surrogates(ds, surrogates, params.describe()), surrogates


def stage_pretrain(ds, sec: dict, seed: int):
    lam = (sec["lambda1"], sec["lambda2"])
    if sec["lambda_preset"] is not None:
        if sec["lambda_preset"] not in LAMBDA_PRESETS:
            raise ConfigError(f"lambda_preset must be one of {sorted(LAMBDA_PRESETS)}")
        lam = LAMBDA_PRESETS[sec["lambda_preset"]]
    k = ds.k or 8
    model = EncoderModel(_encoder_config(sec, len(ds.vocab), k), seed=seed)
    cfg = _build(
        PretrainConfig, "pretrain", lambda1=lam[0], lambda2=lam[1], margin=sec["margin"],
        batch_size=int(sec["batch_size"]), epochs=int(sec["epochs"]), lr=sec["lr"],
        weight_decay=sec["weight_decay"], seed=seed, train_only=bool(sec["train_only"]),
    )
    model, trace = pretrain(model, ds, cfg=cfg)
    model.meta["seed"] = seed
    return model, trace


def stage_finetune(ds, model, sec: dict, seed: int):
    if model is None:
        model = EncoderModel(_encoder_config(sec, len(ds.vocab), ds.k or 8), seed=seed)
    cfg = _build(FinetuneConfig, "finetune", seed=seed, **{k: sec[k] for k in TUNE_KEYS})
    model, history = finetune(model, ds, cfg)
    model.meta["seed"] = seed
    model.meta["baseline"] = bool(sec["baseline"])
    return model, history


def _history_csv(history, seed) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "val_tau"])
    for row in history:
        w.writerow([row["epoch"], "" if row["loss"] is None else repr(row["loss"]), repr(row.get("val_tau", ""))])
    return buf.getvalue()


def _predictions_csv(ids, preds, seed) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "prediction"])
    for i, p in zip(ids, preds):
        w.writerow([i, repr(float(p))])
    return buf.getvalue()


def read_predictions(text: str) -> dict:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or header[:2] != ["id", "prediction"]:
        raise SchemaError("predictions file needs an 'id,prediction' header")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            out[row[0]] = float(row[1])
        except (IndexError, ValueError):
            raise ParseError(f"bad prediction row {row!r}", line=lineno) from None
    return out


def stage_eval(ds, sec: dict, seed: int, model=None, predictions=None, meta=None):
    split = sec["split"]
    if split not in ds.splits:
        raise ConfigError(f"dataset has no split {split!r}; available: {sorted(ds.splits)}")
    idx = ds.splits[split]
    ids = ds.ids(idx)
    if predictions is None:
        preds = predict_graphs(model, ds.graphs(idx))
    else:
        missing = [i for i in ids if i not in predictions]
        if missing:
            raise SchemaError(f"predictions lack {len(missing)} ids of split {split!r}, e.g. {missing[0]!r}")
        preds = np.array([predictions[i] for i in ids])
    truth = ds.labels(idx)
    report = evaluate(truth, preds, tuple(sec["percents"]), meta={"seed": seed, "split": split, **(meta or {})})
    return report, ids, preds


# ---------------------------------------------------------------- commands

def cmd_generate(sec, seed, args):
    ds = stage_generate(sec, seed)
    return {"dataset.jsonl": bd.dumps_jsonl(ds)}, f"generated {len(ds)} architectures"


def _load_dataset(sec, command):
    path = _require_file(sec, "dataset", command)
    text = _read(path)
    return bd.loads_jsonl(text), text


def cmd_surrogate(sec, seed, args):
    ds, _ = _load_dataset(sec, "surrogate")
    ds, surrogates = stage_surrogate(ds, sec, seed, args.jobs)
    return {
        "dataset.jsonl": bd.dumps_jsonl(ds),
        "surrogates.csv": surrogates_to_csv(ds.ids(), surrogates, seed=seed),
    }, f"computed {len(ds)} surrogates (k={ds.k})"


def cmd_pretrain(sec, seed, args):
    ds, _ = _load_dataset(sec, "pretrain")
    model, trace = stage_pretrain(ds, sec, seed)
    last = trace[-1]["L_total"] if trace else float("nan")
    return {
        "checkpoint.json": _dump_checkpoint(model),
        "pretrain_loss.csv": loss_trace_csv(trace, seed=seed),
    }, f"pre-trained {len(trace)} epochs, final loss {last:.6g}"


def cmd_finetune(sec, seed, args):
    ds, _ = _load_dataset(sec, "finetune")
    model = None
    if not sec["baseline"]:
        model, _ = _load_checkpoint(_require_file(sec, "checkpoint", "finetune"))
    model, history = stage_finetune(ds, model, sec, seed)
    return {
        "checkpoint.json": _dump_checkpoint(model),
        "finetune_history.csv": _history_csv(history, seed),
    }, f"fine-tuned, best validation tau {model.meta['finetune']['best_val_tau']}"


def cmd_eval(sec, seed, args):
    ds, ds_text = _load_dataset(sec, "eval")
    meta = {"dataset_sha256": _sha(ds_text)}
    outputs = {}
    if sec["predictions"]:
        text = _read(_require_file(sec, "predictions", "eval"))
        meta["predictions_sha256"] = _sha(text)
        report, _, _ = stage_eval(ds, sec, seed, predictions=read_predictions(text), meta=meta)
    elif sec["checkpoint"]:
        model, text = _load_checkpoint(_require_file(sec, "checkpoint", "eval"))
        meta["checkpoint_sha256"] = _sha(text)
        report, ids, preds = stage_eval(ds, sec, seed, model=model, meta=meta)
        outputs["predictions.csv"] = _predictions_csv(ids, preds, seed)
    else:
        raise ConfigError("eval: give either a checkpoint or a predictions file")
    outputs["eval.json"] = report.to_json()
    return outputs, f"kendall tau {report.kendall_tau:.4f} on {report.n} architectures"


def cmd_nas(sec, seed, args):
    spec = _build(bd.space_spec, "space", family=sec["family"])
    evaluator = OracleEvaluator(spec, int(sec["oracle_seed"]))
    if sec["reference_dataset"]:
        ref_ds = bd.loads_jsonl(_read(_require_file(sec, "reference_dataset", "nas")))
        reference = float(np.max(ref_ds.labels()))
    else:
        ref_ds = bd.label_dataset(bd.generate_space(spec, int(sec["reference_count"]), seed=int(sec["oracle_seed"])),
                                  int(sec["oracle_seed"]))
        reference = float(np.max(ref_ds.labels()))
    kind = sec["predictor"]
    run = dict(budget=int(sec["budget"]), seed=seed, initial=int(sec["initial"]), select=int(sec["select"]),
               mutants_per_parent=int(sec["mutants_per_parent"]), reference_best=reference)
    if kind == "random":
        state = random_search(spec, run["budget"], seed, evaluator, run["select"], reference)
    else:
        if kind == "oracle":
            predictor = OraclePredictor(evaluator)
        elif kind in ("pretrained", "scratch"):
            if kind == "pretrained":
                model, _ = _load_checkpoint(_require_file(sec, "checkpoint", "nas"))
            else:
                model = EncoderModel(_encoder_config(sec, len(spec.vocab)), seed=seed)
            tune = FinetuneConfig(epochs=int(sec["finetune_epochs"]), patience=int(sec["finetune_epochs"]), seed=seed)
            predictor = EncoderPredictor(model, tune)
        else:
            raise ConfigError("nas predictor must be one of pretrained, scratch, oracle, random")
        state = run_npenas(spec, predictor, evaluator, **run)
    header = {"seed": seed, "predictor": kind, "predictor_updates": "warm-start once, fine-tune every round",
              "reference_best": repr(reference)}
    final = state.trace[-1]
    return {"nas_trace.csv": trace_to_csv(state, header)}, \
        f"{kind}: best {final['best']:.4f}, regret {final['regret']:.4f} after {final['pool_size']} evaluations"


def cmd_pca(sec, seed, args):
    ds, _ = _load_dataset(sec, "pca")
    if sec["source"] == "surrogate":
        vectors = ds.surrogates()
        if vectors is None:
            raise SchemaError("dataset carries no surrogates; run the surrogate command first")
    elif sec["source"] == "embedding":
        model, _ = _load_checkpoint(_require_file(sec, "checkpoint", "pca"))
        vectors = np.concatenate([encode_batch(model, ds.graphs()[lo:lo + 512]).data
                                  for lo in range(0, len(ds), 512)])
    else:
        raise ConfigError("pca source must be 'surrogate' or 'embedding'")
    points, ratio = pca_project(vectors, 2)
    labelled = all(r.performance is not None for r in ds.records)
    truth = ds.labels() if labelled else None
    summary = json.dumps({"seed": seed, "source": sec["source"], "explained_ratio": ratio.tolist()},
                         indent=2, sort_keys=True) + "\n"
    return {
        "pca_points.csv": pca_points_csv(ds.ids(), points, truth, seed=seed),
        "pca.json": summary,
    }, f"explained variance ratio {ratio[0]:.3f}, {ratio[1]:.3f}"


def cmd_pipeline(sections, seed, args):
    gen, sur, pre, fin, ev = (sections[c] for c in PIPELINE)
    ds = stage_generate(gen, seed)
    ds, surrogates = stage_surrogate(ds, sur, seed, args.jobs)
    ds_text = bd.dumps_jsonl(ds)
    model, trace = stage_pretrain(ds, pre, seed)
    pre_text = _dump_checkpoint(model)
    tuned, history = stage_finetune(ds, None if fin["baseline"] else model, fin, seed)
    ckpt = _dump_checkpoint(tuned)
    report, ids, preds = stage_eval(ds, ev, seed, model=tuned,
                                    meta={"dataset_sha256": _sha(ds_text), "checkpoint_sha256": _sha(ckpt)})
    return {
        "dataset.jsonl": ds_text,
        "surrogates.csv": surrogates_to_csv(ds.ids(), surrogates, seed=seed),
        "pretrain_checkpoint.json": pre_text,
        "pretrain_loss.csv": loss_trace_csv(trace, seed=seed),
        "checkpoint.json": ckpt,
        "finetune_history.csv": _history_csv(history, seed),
        "predictions.csv": _predictions_csv(ids, preds, seed),
        "eval.json": report.to_json(),
    }, f"kendall tau {report.kendall_tau:.4f} on {report.n} architectures"


HANDLERS = {
    "generate": cmd_generate, "surrogate": cmd_surrogate, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "eval": cmd_eval, "nas": cmd_nas, "pca": cmd_pca,
}


# ---------------------------------------------------------------- output

def output_base(flag) -> Path:
    return Path(flag or os.environ.get(OUTPUT_ENV) or "runs")


def commit_outputs(base: Path, name: str, files: dict) -> Path:
    """Write ``files`` into a staging directory, then rename it to ``base/name``."""
    try:
        base.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=base))
    except OSError as e:
        raise IoError(f"cannot create output directory under {base}: {e}") from None
    try:
        for fname, content in files.items():
            with open(stage / fname, "w", newline="") as fh:
                fh.write(content)
        final, n = base / name, 1
        while final.exists():
            final, n = base / f"{name}-{n}", n + 1
        os.rename(stage, final)
    except OSError as e:
        shutil.rmtree(stage, ignore_errors=True)
        raise IoError(f"cannot write outputs: {e}") from None
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return final


# ---------------------------------------------------------------- argparse

def _keys_help(command):
    if command == "pipeline":
        return "config sections: " + ", ".join(PIPELINE)
    keys = ", ".join(f"{k}={json.dumps(v)}" for k, v in DEFAULTS[command].items())
    return f"config section {command!r} keys (defaults): {keys}"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file, or 'smoke' for the bundled smoke config")
    common.add_argument("--seed", type=int, help=f"overrides the config seed (default {DEFAULT_SEED})")
    common.add_argument("--out", help=f"base output directory (default ${OUTPUT_ENV} or ./runs)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for batch surrogate computation")
    parser = argparse.ArgumentParser(
        prog="fgp",
        description="Flow-surrogate pre-training for neural architecture encoders.",
        epilog=f"Each run writes into <out>/<UTC timestamp>-seed<seed>-<command>/ together with a "
               f"resolved config snapshot. Seed precedence: --seed, then config 'seed', then {DEFAULT_SEED}.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, parents=[common], epilog=_keys_help(command))
        if command in ("surrogate", "pretrain", "finetune", "eval", "pca"):
            p.add_argument("--dataset", help="input dataset (JSONL)")
        if command in ("finetune", "eval", "nas", "pca"):
            p.add_argument("--checkpoint", help="encoder checkpoint (JSON)")
        if command == "finetune":
            p.add_argument("--baseline", action="store_true", default=None,
                           help="start from a randomly initialised encoder instead of a checkpoint")
        if command == "eval":
            p.add_argument("--predictions", help="CSV with id,prediction columns instead of a checkpoint")
            p.add_argument("--split", help="split to evaluate (default test)")
        if command in ("pretrain", "finetune"):
            p.add_argument("--epochs", type=int)
        if command == "generate":
            p.add_argument("--family", choices=sorted(bd.FAMILIES))
            p.add_argument("--count", type=int)
        if command == "nas":
            p.add_argument("--family", choices=sorted(bd.FAMILIES))
            p.add_argument("--predictor", choices=["pretrained", "scratch", "oracle", "random"])
            p.add_argument("--budget", type=int)
    return parser


def run(argv=None) -> Path:
    """Execute one command; returns the run directory. Raises on failure."""
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    config = load_config(args.config)
    seed = resolve_seed(args.seed, config)
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "seed", "out", "jobs", "command")}
    if args.command == "pipeline":
        sections = {c: resolve_section(c, config, {}) for c in PIPELINE}
        files, summary = cmd_pipeline(sections, seed, args)
        resolved = {"command": "pipeline", "seed": seed, "jobs": args.jobs, **sections}
    else:
        section = resolve_section(args.command, config, overrides)
        files, summary = HANDLERS[args.command](section, seed, args)
        resolved = {"command": args.command, "seed": seed, "jobs": args.jobs, args.command: section}
    files["config.json"] = json.dumps(resolved, indent=2, sort_keys=True) + "\n"
    name = f"{time.strftime('%Y%m%dT%H%M%SZ', time.gmtime())}-seed{seed}-{args.command}"
    run_dir = commit_outputs(output_base(args.out), name, files)
    print(f"{args.command}: {summary}", file=sys.stderr)
    return run_dir


def main(argv=None) -> int:
    try:
        run_dir = run(argv)
    except FGPError as e:
        code = exit_code_for(e)
        print(f"fgp: error ({type(e).__name__}): {e}", file=sys.stderr)
        return code
    print(run_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
