"""Command-line entry point: ``tcan <command> ...``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O error.
Set ``TCAN_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control logging.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import feature_baseline
from .cascade import (DatasetSplit, build_views, filter_dataset, filter_publish_time, parse_cascade_file,
                      split_dataset, write_cascade_file)
from .diagnostics import MODEL_TOLERANCE, OP_TOLERANCE, model_gradcheck, op_gradcheck
from .model import ModelConfig, forward
from .numerics import T
from .synthgen import GenConfig, generate
from .training import evaluate, load_model, predict_log, save_model, to_popularity, train

log = logging.getLogger("tcan")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
PARTS = ("train", "val", "test")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- run manifest -------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def version_string() -> str:
    """Package version, plus the short commit hash when run from a git checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = ""
    wall_clock_seconds: float = 0.0

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))


class _Run:
    """Collects inputs and outputs of one command and writes its manifest."""

    def __init__(self, command: str, config: dict, seed=None):
        self.m = RunManifest(command, config, seed, version=version_string())
        self.t0 = time.perf_counter()

    def input(self, path):
        self.m.inputs[str(path)] = sha256_file(path)

    def output(self, path, text: str):
        Path(path).write_text(text)
        self.m.outputs[str(path)] = sha256_file(path)

    def finish(self, manifest_path):
        self.m.wall_clock_seconds = time.perf_counter() - self.t0
        self.m.write(manifest_path)


# -- config helpers ---------------------------------------------------------------

def _read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _gen_config(args) -> GenConfig:
    data = _read_json(args.config) if args.config else {}
    known = {f.name for f in fields(GenConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
    data.update(_overrides(args, ["seed", "n_cascades"]))
    cfg = GenConfig(**data)
    cfg.validate()
    return cfg


MODEL_FLAGS = ["seed", "variant", "max_epochs", "max_steps", "patience", "batch_size", "lr", "dropout"]


def _model_config(args) -> ModelConfig:
    data = _read_json(args.config) if getattr(args, "config", None) else {}
    data.update(_overrides(args, MODEL_FLAGS))
    return ModelConfig.from_dict(data)


def _load_split(split_dir) -> tuple[DatasetSplit, dict, list[Path]]:
    d = Path(split_dir)
    meta = _read_json(d / "split.json")
    parts, paths = {}, []
    for part in PARTS:
        p = d / f"{part}.txt"
        paths.append(p)
        cascades = parse_cascade_file(p.read_text(encoding="utf-8"))
        parts[part] = [build_views(c, meta["t_obs"], meta["t_end"]) for c in cascades]
    split = DatasetSplit(parts["train"], parts["val"], parts["test"], meta["seed"], tuple(meta["ratios"]))
    return split, meta, [d / "split.json", *paths]


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _gen_config(args)
    run = _Run("gen", asdict(cfg), cfg.seed)
    if args.config:
        run.input(args.config)
    run.output(args.out, write_cascade_file(generate(cfg)))
    run.finish(f"{args.out}.manifest.json")
    log.info("wrote %d cascades to %s", cfg.n_cascades, args.out)
    return EXIT_OK


def _parse_ratios(s: str):
    try:
        r = tuple(float(x) for x in s.split(","))
    except ValueError:
        raise ValueError(f"bad --ratios {s!r}") from None
    return r


def cmd_prepare(args) -> int:
    ratios = _parse_ratios(args.ratios)
    config = {"t_obs": args.t_obs, "t_end": args.t_end, "min_obs": args.min_obs, "ratios": list(ratios),
              "seed": args.seed, "publish_range": args.publish_range}
    run = _Run("prepare", config, args.seed)
    run.input(args.input)
    cascades = parse_cascade_file(Path(args.input).read_text(encoding="utf-8"))
    if args.publish_range:
        bounds = [float(x) for x in args.publish_range.split(",")]
        if len(bounds) not in (2, 3):
            raise ValueError("--publish-range takes lo,hi or lo,hi,period")
        cascades = filter_publish_time(cascades, bounds[0], bounds[1], bounds[2] if len(bounds) == 3 else None)
    pairs = [(c, build_views(c, args.t_obs, args.t_end)) for c in cascades]
    keep = {id(v) for v in filter_dataset([v for _, v in pairs], args.min_obs)}
    kept = [c for c, v in pairs if id(v) in keep]
    if len(kept) < 3:
        raise ValueError(f"only {len(kept)} cascades pass min_obs={args.min_obs}; need at least 3")
    split = split_dataset(kept, ratios, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for part in PARTS:
        run.output(out / f"{part}.txt", write_cascade_file(getattr(split, part)))
    meta = {**config, "counts": {p: len(getattr(split, p)) for p in PARTS}, "n_input": len(cascades)}
    run.output(out / "split.json", json.dumps(meta, indent=1, sort_keys=True))
    run.finish(out / "manifest.json")
    log.info("split %d cascades into %s", len(kept), meta["counts"])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _model_config(args)
    split, meta, inputs = _load_split(args.split_dir)
    run = _Run("train", cfg.to_dict(), cfg.seed)
    for p in inputs:
        run.input(p)
    if args.config:
        run.input(args.config)
    params, hist = train(split, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.json", params, {"split": meta})
    run.m.outputs[str(out / "model.json")] = sha256_file(out / "model.json")
    run.output(out / "history.json", json.dumps(hist.to_dict(), indent=1))
    run.finish(out / "manifest.json")
    log.info("best val MSLE %.4f at epoch %d (%s)", hist.best_val, hist.best_epoch, hist.stop_reason)
    return EXIT_OK


def cmd_eval(args) -> int:
    split, meta, inputs = _load_split(args.split_dir)
    params = load_model(args.checkpoint)
    run = _Run("eval", {"part": args.part, "workers": args.workers}, params.cfg.seed)
    for p in [*inputs, args.checkpoint]:
        run.input(p)
    views = getattr(split, args.part)
    if not views:
        raise ValueError(f"split part {args.part!r} is empty")
    report = evaluate(views, params, workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.output(out / "report.json", report.to_json())
    run.output(out / "report.csv", report.to_csv())
    run.finish(out / "manifest.json")
    print(json.dumps({"msle": report.msle, "mae": report.mae, "r2": report.r2, "n": len(report.rows)}))
    return EXIT_OK


def _window_views(path, t_obs):
    cascades = parse_cascade_file(Path(path).read_text(encoding="utf-8"))
    views = []
    for c in cascades:
        t_last = max(r.time for r in c.records)
        views.append(build_views(c, t_obs, max(t_obs, t_last)))
    return views


def cmd_predict(args) -> int:
    params = load_model(args.checkpoint)
    run = _Run("predict", {"t_obs": args.t_obs}, params.cfg.seed)
    run.input(args.checkpoint)
    run.input(args.cascades)
    views = _window_views(args.cascades, args.t_obs)
    o = predict_log(views, params, workers=args.workers)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "y_hat"])
    for v, y in zip(views, to_popularity(o)):
        w.writerow([v.cascade_id, repr(float(y))])
    run.output(args.out, buf.getvalue())
    run.finish(f"{args.out}.manifest.json")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _model_config(args)
    ops = op_gradcheck(cfg.seed)
    model = model_gradcheck(cfg, seed=cfg.seed)
    ok = max(ops.values()) < OP_TOLERANCE and max(model.values()) < MODEL_TOLERANCE
    for name, err in model.items():
        print(f"{name:20s} {err:.3e}  {'ok' if err < MODEL_TOLERANCE else 'FAIL'}")
    worst = max(ops, key=ops.get)
    print(f"{'elementary_ops':20s} {ops[worst]:.3e}  {'ok' if ops[worst] < OP_TOLERANCE else 'FAIL'} (worst: {worst})")
    if args.out:
        run = _Run("gradcheck", cfg.to_dict(), cfg.seed)
        if args.config:
            run.input(args.config)
        run.output(args.out, json.dumps({"modules": model, "ops": ops, "ok": ok}, indent=1))
        run.finish(f"{args.out}.manifest.json")
    return EXIT_OK if ok else EXIT_NUMERIC


def _find_view(args, params):
    if args.split_dir:
        split, _, _ = _load_split(args.split_dir)
        views = [v for part in PARTS for v in getattr(split, part)]
    elif args.cascades and args.t_obs is not None:
        views = _window_views(args.cascades, args.t_obs)
    else:
        raise ValueError("explain needs --split-dir, or --cascades with --t-obs")
    for v in views:
        if v.cascade_id == args.cascade_id:
            return v
    raise ValueError(f"cascade {args.cascade_id!r} not found")


def cmd_explain(args) -> int:
    params = load_model(args.checkpoint)
    v = _find_view(args, params)
    run = _Run("explain", {"cascade_id": args.cascade_id}, params.cfg.seed)
    run.input(args.checkpoint)
    with T.no_grad():
        o, info = forward(v, params, explain=True)
    body = {
        "cascade_id": v.cascade_id,
        "node_ids": list(v.node_ids),
        "times": v.times.tolist(),
        "parents": list(v.parents),
        "prediction": float(to_popularity(o.item())),
        "label": v.label,
        "attention": [{"layer": l, "head": h, "matrix": a.tolist(), "node_order": list(v.node_ids)}
                      for l, layer in enumerate(info.get("trace", [])) for h, a in enumerate(layer)],
        "representation": info["representation"].reshape(-1).tolist(),
        "h_graph": info["h_g"].reshape(-1).tolist(),
        "h_sequence": info["h_s"].reshape(-1).tolist(),
    }
    run.output(args.out, json.dumps(body))
    run.finish(f"{args.out}.manifest.json")
    return EXIT_OK


def cmd_baseline(args) -> int:
    split, meta, inputs = _load_split(args.split_dir)
    run = _Run("baseline", {"lam": args.lam}, meta.get("seed"))
    for p in inputs:
        run.input(p)
    report, model = feature_baseline(split, lam=args.lam)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.output(out / "baseline.json", report.to_json())
    run.output(out / "baseline.csv", report.to_csv())
    run.finish(out / "manifest.json")
    print(json.dumps({"msle": report.msle, "mae": report.mae, "r2": report.r2, "lambda": model.lam}))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcan", description="Cascade popularity prediction toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic cascades")
    g.add_argument("--config", help="JSON file with generator settings")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-cascades", dest="n_cascades", type=int)
    g.set_defaults(func=cmd_gen)

    g = sub.add_parser("prepare", help="window, filter and split a cascade file")
    g.add_argument("--input", required=True)
    g.add_argument("--t-obs", dest="t_obs", type=float, required=True)
    g.add_argument("--t-end", dest="t_end", type=float, required=True)
    g.add_argument("--min-obs", dest="min_obs", type=int, default=10)
    g.add_argument("--ratios", default="0.7,0.15,0.15")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--publish-range", dest="publish_range", help="lo,hi[,period] filter on publish time")
    g.add_argument("--out-dir", dest="out_dir", required=True)
    g.set_defaults(func=cmd_prepare)

    def model_flags(g):
        g.add_argument("--config", help="JSON file keyed by model config field names")
        g.add_argument("--seed", type=int)
        g.add_argument("--variant")
        g.add_argument("--max-epochs", dest="max_epochs", type=int)
        g.add_argument("--max-steps", dest="max_steps", type=int)
        g.add_argument("--patience", type=int)
        g.add_argument("--batch-size", dest="batch_size", type=int)
        g.add_argument("--lr", type=float)
        g.add_argument("--dropout", type=float)

    g = sub.add_parser("train", help="train a model on a prepared split")
    g.add_argument("--split-dir", dest="split_dir", required=True)
    g.add_argument("--out-dir", dest="out_dir", required=True)
    model_flags(g)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="evaluate a checkpoint on one split part")
    g.add_argument("--split-dir", dest="split_dir", required=True)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--part", choices=PARTS, default="test")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out-dir", dest="out_dir", required=True)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("predict", help="predict incremental popularity for a cascade file")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--cascades", required=True)
    g.add_argument("--t-obs", dest="t_obs", type=float, required=True)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_predict)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and model module")
    model_flags(g)
    g.add_argument("--out", help="also write the errors as JSON")
    g.set_defaults(func=cmd_gradcheck)

    g = sub.add_parser("explain", help="dump attention weights and representations for one cascade")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--cascade-id", dest="cascade_id", required=True)
    g.add_argument("--split-dir", dest="split_dir")
    g.add_argument("--cascades")
    g.add_argument("--t-obs", dest="t_obs", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_explain)

    g = sub.add_parser("baseline", help="feature-linear ridge baseline on a prepared split")
    g.add_argument("--split-dir", dest="split_dir", required=True)
    g.add_argument("--lam", type=float, help="ridge strength; chosen on validation if omitted")
    g.add_argument("--out-dir", dest="out_dir", required=True)
    g.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    level = os.environ.get("TCAN_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except FloatingPointError as e:  # includes NonFiniteError and TrainingDiverged
        diag = getattr(e, "diagnostics", None)
        print(f"tcan: numerical failure: {e}", file=sys.stderr)
        if diag:
            print(json.dumps(diag, default=str), file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, np.linalg.LinAlgError) as e:
        print(f"tcan: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"tcan: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
