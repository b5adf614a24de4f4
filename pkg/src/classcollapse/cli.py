"""Command-line runner: verify, train, eval, gen-data, plot.

Exit codes: 0 success (or all tolerances met), 1 tolerance failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import encoder as enc
from .claims import CLAIMS, verify_claim
from .data import Dataset, emit_scatter_svg, gen_multimodal, load_csv, parse_idx, relabel_even_odd, write_csv
from .losses import LossConfig
from .metrics import evaluate
from .mining import MinerConfig
from .trainer import TrainConfig, dumps_json, embed, train_stochastic


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


# -- config ------------------------------------------------------------------

DATA_DEFAULTS = {
    "synthetic": {"classes": 2, "modes_per_class": 3, "samples_per_mode": 50,
                  "feature_dim": 2, "mode_separation": 10.0, "noise_sigma": 1.0,
                  "test_fraction": 0.0},
    "idx": {"images": None, "labels": None, "test_images": None, "test_labels": None,
            "n_train": 0, "train_digits": [0, 1, 2, 3, 4, 5], "test_digits": [6, 7, 8, 9]},
    "csv": {"path": None, "test_path": None},
}
ENCODER_DEFAULTS = {"variant": "free_table", "hidden": [256, 64], "embedding_dim": 2,
                    "init_from_features": False, "init_scale": 1.0}


def _check_type(path, value, default):
    if default is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def _merge(path, given, defaults):
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(defaults[k], dict):
            out[k] = _merge(f"{path}.{k}", v, defaults[k])
        else:
            out[k] = _check_type(f"{path}.{k}", v, defaults[k])
    return out


def _dc_defaults(cls):
    inst = cls()
    out = {}
    for f in dataclasses.fields(cls):
        v = getattr(inst, f.name)
        out[f.name] = _dc_defaults(type(v)) if dataclasses.is_dataclass(v) else v
    return out


def resolve_config(raw: dict) -> dict:
    """Fill every default and validate types; errors name the offending field path."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(raw) - {"seed", "data", "encoder", "train", "output_dir"})
    if unknown:
        raise ConfigError(f"config.{unknown[0]}: unknown field")
    if "seed" not in raw:
        raise ConfigError("config.seed: required field missing")
    seed = _check_type("config.seed", raw["seed"], 0)
    data = raw.get("data", {"source": "synthetic"})
    if not isinstance(data, dict):
        raise ConfigError("config.data: expected an object")
    source = data.get("source", "synthetic")
    if source not in DATA_DEFAULTS:
        raise ConfigError(f"config.data.source: must be one of {sorted(DATA_DEFAULTS)}")
    data = _merge("config.data", {k: v for k, v in data.items() if k != "source"},
                  DATA_DEFAULTS[source])
    data["source"] = source
    for key in ("images", "labels", "path"):
        if key in data and data[key] is None:
            raise ConfigError(f"config.data.{key}: required for source {source!r}")
    for key in ("images", "labels", "test_images", "test_labels", "path", "test_path"):
        if data.get(key) is not None and not Path(data[key]).exists():
            raise ConfigError(f"config.data.{key}: file not found: {data[key]}")
    encoder = _merge("config.encoder", raw.get("encoder", {}), ENCODER_DEFAULTS)
    if encoder["variant"] not in enc.VARIANTS:
        raise ConfigError(f"config.encoder.variant: must be one of {enc.VARIANTS}")
    train = _merge("config.train", raw.get("train", {}), _dc_defaults(TrainConfig))
    train["seed"] = seed
    try:
        build_train_config(train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.train: {exc}") from None
    return {"seed": seed, "data": data, "encoder": encoder, "train": train,
            "output_dir": raw.get("output_dir", "runs/out")}


def build_train_config(train: dict) -> TrainConfig:
    t = dict(train)
    t["loss"] = LossConfig(**t["loss"])
    t["miner"] = MinerConfig(**t["miner"])
    return TrainConfig(**t)


def load_dataset(data: dict, seed: int) -> Dataset:
    src = data["source"]
    if src == "synthetic":
        keys = ("classes", "modes_per_class", "samples_per_mode", "feature_dim",
                "mode_separation", "noise_sigma")
        ds = gen_multimodal(seed=seed, **{k: data[k] for k in keys})
        if data["test_fraction"] > 0:
            rng = np.random.default_rng([seed, 7])
            split = (rng.random(ds.n) < data["test_fraction"]).astype(np.int64)
            ds = Dataset(ds.features, ds.class_labels, ds.mode_labels, split)
        return ds
    if src == "idx":
        train = parse_idx(data["images"], data["labels"])
        if data["n_train"]:
            train = train.subset(np.arange(min(data["n_train"], train.n)))
        test = None
        if data["test_images"]:
            test = parse_idx(data["test_images"], data["test_labels"])
        return relabel_even_odd(train, test, data["train_digits"], data["test_digits"])
    ds = load_csv(data["path"])
    if data["test_path"]:
        te = load_csv(data["test_path"])
        modes = None
        if ds.mode_labels is not None and te.mode_labels is not None:
            modes = np.concatenate([ds.mode_labels, te.mode_labels])
        return Dataset(np.vstack([ds.features, te.features]),
                       np.concatenate([ds.class_labels, te.class_labels]), modes,
                       np.concatenate([np.zeros(ds.n, int), np.ones(te.n, int)]))
    return ds


def build_encoder(encoder: dict, ds: Dataset, seed: int) -> enc.EncoderParams:
    m = encoder["embedding_dim"]
    if encoder["variant"] == "free_table":
        params = enc.init_params("free_table", (ds.n, m), seed)
        if encoder["init_from_features"]:
            if ds.features.shape[1] != m:
                raise ConfigError("config.encoder.init_from_features: feature width must equal embedding_dim")
            params.table[:] = encoder["init_scale"] * ds.features
        return params
    return enc.init_params("mlp", [ds.features.shape[1], *encoder["hidden"], m], seed)


# -- subcommands -------------------------------------------------------------

def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _read_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _parse_n_range(text):
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--sweep-n expects LO:HI, got {text!r}") from None
    return (lo, hi)


def cmd_verify(args) -> int:
    if args.claim not in CLAIMS:
        raise UsageError(f"unknown claim {args.claim!r}; choose from {', '.join(CLAIMS)}")
    params = {"n": args.n, "t": args.t, "p": args.p, "alpha": args.alpha, "m": args.m,
              "seed": args.seed, "restarts": args.restarts, "steps": args.steps}
    if args.sweep_n:
        params["sweep_n"] = _parse_n_range(args.sweep_n)
    report = verify_claim(args.claim, **params)
    text = dumps_json(report)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    print(f"{args.claim}: {'PASS' if report['passed'] else 'FAIL'}", file=sys.stderr)
    return 0 if report["passed"] else 1


def _apply_sweep(cfg: dict, name: str, value) -> dict:
    cfg = copy.deepcopy(cfg)
    if name == "positive_k":
        cfg["train"]["miner"]["samples_per_class"] = int(value)
    elif name == "trim":
        cfg["train"]["loss"]["trim_fraction"] = float(value)
    return cfg


def _metrics_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "metric", "value"])
    for split, vals in (("train", report.final_train), ("test", report.final_test)):
        for k in sorted(vals):
            w.writerow([split, k, repr(float(vals[k])) if vals[k] is not None else ""])
    return buf.getvalue()


def run_one(cfg: dict, out: Path) -> dict:
    ds = load_dataset(cfg["data"], cfg["seed"])
    params = build_encoder(cfg["encoder"], ds, cfg["seed"])
    tc = build_train_config(cfg["train"])
    params, _, report = train_stochastic(ds, params, tc)
    _write(out / "resolved_config.json", dumps_json(cfg))
    _write(out / "report.json", report.to_json())
    _write(out / "history.csv", report.to_csv())
    _write(out / "metrics.csv", _metrics_csv(report))
    enc.save_checkpoint(params, out / "params.bin")
    if params.out_dim == 2:
        x = embed(ds, params, np.arange(ds.n), tc.loss.variant == "multi_similarity")
        emit_scatter_svg(x, ds.class_labels, ds.mode_labels, out / "embedding.svg")
    return {"train": report.final_train, "test": report.final_test}


def cmd_train(args) -> int:
    raw = _read_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = resolve_config(raw)
    out = Path(args.out or cfg["output_dir"])
    if not args.sweep:
        run_one(cfg, out)
        return 0
    name, values = args.sweep
    if name not in ("positive_k", "trim"):
        raise UsageError(f"--sweep supports positive_k and trim, got {name!r}")
    try:
        values = [float(v) if name == "trim" else int(v) for v in values.split(",")]
    except ValueError:
        raise UsageError(f"--sweep {name}: bad value list {values!r}") from None
    rows = []
    for v in values:
        sub = _apply_sweep(cfg, name, v)
        try:
            build_train_config(sub["train"])
        except ValueError as exc:
            raise ConfigError(f"config.train (sweep {name}={v}): {exc}") from None
        res = run_one(sub, out / f"{name}_{v}")
        rows.append({name: v, **{f"train_{k}": x for k, x in res["train"].items()},
                     **{f"test_{k}": x for k, x in res["test"].items()}})
    cols = [name] + sorted({k for r in rows for k in r} - {name})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r.get(c, "") if not isinstance(r.get(c), float) else repr(r[c]) for c in cols])
    _write(out / "sweep.csv", buf.getvalue())
    _write(out / "resolved_config.json", dumps_json(cfg))
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(_read_config(args.config))
    ds = load_dataset(cfg["data"], cfg["seed"])
    try:
        params = enc.load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {args.checkpoint}") from None
    tc = build_train_config(cfg["train"])
    normalize = tc.loss.variant == "multi_similarity"
    reports = {}
    for split in ("train", "test"):
        idx = ds.indices(split)
        if idx.size < 3:
            continue
        x = embed(ds, params, idx, normalize)
        modes = None if ds.mode_labels is None else ds.mode_labels[idx]
        rep = evaluate(x, ds.class_labels[idx], ks=tc.eval_ks, multiplier=tc.nmi_multiplier,
                       seed=cfg["seed"], mode_labels=modes)
        reports[split] = rep.to_dict()
    text = dumps_json(reports)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gen_data(args) -> int:
    ds = gen_multimodal(args.classes, args.modes, args.samples, args.dim,
                        args.separation, args.sigma, args.seed)
    write_csv(ds, args.out)
    return 0


def cmd_plot(args) -> int:
    if args.csv:
        ds = load_csv(args.csv)
        x = ds.features
    else:
        if not (args.config and args.checkpoint):
            raise UsageError("plot needs --csv, or --config with --checkpoint")
        cfg = resolve_config(_read_config(args.config))
        ds = load_dataset(cfg["data"], cfg["seed"])
        x = embed(ds, enc.load_checkpoint(args.checkpoint), np.arange(ds.n))
    emit_scatter_svg(x, ds.class_labels, ds.mode_labels, args.out)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="classcollapse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="check a collapse / anti-collapse statement")
    v.add_argument("--claim", required=True)
    v.add_argument("--n", type=int)
    v.add_argument("--t", type=int)
    v.add_argument("--p", type=float)
    v.add_argument("--alpha", type=float)
    v.add_argument("--m", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--restarts", type=int)
    v.add_argument("--steps", type=int)
    v.add_argument("--sweep-n", help="LO:HI range of n, step 4")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--sweep", nargs=2, metavar=("NAME", "VALUES"),
                   help="positive_k 2,4,8 or trim 0,0.2,0.4")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-data", help="write a synthetic multimodal CSV")
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--modes", type=int, default=3)
    g.add_argument("--samples", type=int, default=50)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--separation", type=float, default=10.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    pl = sub.add_parser("plot", help="SVG scatter of a 2-D CSV or a trained embedding")
    pl.add_argument("--csv")
    pl.add_argument("--config")
    pl.add_argument("--checkpoint")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
