"""Command-line entry point.

Every command reads one JSON config (``--config``) and writes its artifacts
into ``--out``. ``--seed`` and ``--workers`` override the config. Exit codes:
0 success, 2 invalid config, 3 structural conflict (anchors, shapes),
4 unreadable or mismatched checkpoint. Failures print one JSON line to stderr.

Outputs are identical for identical inputs and seed. Training is
single-process; BER evaluation fans SNR points out over ``--workers``
processes, each point on its own random substream.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from hiko.channel import make_rng
from hiko.checkpoint import atomic_write, load_checkpoint, save_checkpoint
from hiko.codes import code_params
from hiko.errors import CheckpointError, ConfigError, HikoError, StructureError
from hiko.evaluation import (
    ClassicalCodec,
    ber_csv,
    ber_curve,
    ber_json,
    gaussian_codebook,
    histogram_csv,
    histogram_json,
    neural_sampler,
    pairwise_distances,
    rm_sampler,
)
from hiko.ko import NeuralCodec
from hiko.nn import param_count
from hiko.training import ConstituentSpec, TrainConfig, assemble_hiko, train_constituent, train_hiko

log = logging.getLogger("hiko")

CHECKPOINT_NAME = "checkpoint.hiko"
METRICS_HEADER = ("epoch", "dec_loss", "enc_loss", "probe_loss", "val_ber", "frozen")

TRAIN_KEYS = TrainConfig.field_names() | {"m", "r", "text_checkpoint"}
ALLOWED = {
    "train-constituent": TRAIN_KEYS,
    "train-hiko": TRAIN_KEYS | {"constituents"},
    "eval-ber": {"codec", "m", "r", "snrs", "min_bits", "min_errors", "seed", "convention", "first_order_leaves", "workers"},
    "eval-distance": {"source", "m", "r", "n", "count", "n_pairs", "bins", "quantize", "seed"},
    "param-count": {"checkpoint", "m", "r", "enc_hidden", "dec_hidden", "coordinatewise", "seed"},
}
CONSTITUENT_KEYS = {"checkpoint", "m", "r", "anchor"}


def _load_config(path: str, command: str) -> tuple[dict, Path]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(cfg) - ALLOWED[command])
    if unknown:
        err = ConfigError(f"unknown config key {unknown[0]!r}")
        err.key = unknown[0]
        raise err
    return cfg, Path(path).resolve().parent


def _require(cfg: dict, key: str):
    if key not in cfg:
        err = ConfigError(f"missing config key {key!r}")
        err.key = key
        raise err
    return cfg[key]


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p).resolve()


def _train_config(cfg: dict) -> TrainConfig:
    fields = {k: v for k, v in cfg.items() if k in TrainConfig.field_names()}
    try:
        return TrainConfig(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _code(cfg: dict):
    try:
        return code_params(int(_require(cfg, "m")), int(_require(cfg, "r")))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _metrics_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for h in history:
        w.writerow([h["epoch"]] + [_fmt(h[k]) for k in METRICS_HEADER[1:]])
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def _write_training(result, out: Path, text: bool) -> None:
    save_checkpoint(result.checkpoint, out / CHECKPOINT_NAME)
    if text:
        save_checkpoint(result.checkpoint, out / "checkpoint.json", text=True)
    atomic_write(out / "metrics.csv", _metrics_csv(result.history))


def cmd_train_constituent(cfg: dict, base: Path, out: Path, workers: int) -> None:
    params = _code(cfg)
    tcfg = _train_config(cfg)
    log.info("training KO(%d, %d) for %d epochs", params.m, params.r, tcfg.epochs)
    result = train_constituent(params, tcfg)
    _write_training(result, out, bool(cfg.get("text_checkpoint", False)))


def cmd_train_hiko(cfg: dict, base: Path, out: Path, workers: int) -> None:
    params = _code(cfg)
    tcfg = _train_config(cfg)
    entries = _require(cfg, "constituents")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("constituents must be a non-empty list")
    specs = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"constituent {i} must be an object")
        unknown = sorted(set(entry) - CONSTITUENT_KEYS)
        if unknown:
            err = ConfigError(f"unknown constituent key {unknown[0]!r}")
            err.key = unknown[0]
            raise err
        path = _resolve(base, _require(entry, "checkpoint"))
        ckpt = load_checkpoint(path)
        declared = (int(_require(entry, "m")), int(_require(entry, "r")))
        if (ckpt.m, ckpt.r) != declared:
            raise CheckpointError(f"{path} holds KO({ckpt.m}, {ckpt.r}), config declares KO{declared}")
        specs.append(ConstituentSpec(ckpt, entry.get("anchor"), str(path)))
    codec, groups, anchors = assemble_hiko(params, specs, tcfg)
    result = train_hiko(codec, tcfg, groups, anchors)
    audit = {
        "code": [params.m, params.r],
        "constituents": [
            {"checkpoint": s.checkpoint_id, "m": s.params.m, "r": s.params.r, "anchor": a, "networks": len(g)}
            for s, a, g in zip(specs, anchors, groups)
        ],
        "unfreeze_epochs": result.checkpoint.metadata["unfreeze_epochs"],
    }
    for c in audit["constituents"]:
        print(f"anchor KO({c['m']}, {c['r']}) -> {c['anchor']!r}")
    print(f"unfreeze epochs {audit['unfreeze_epochs']}")
    _write_training(result, out, bool(cfg.get("text_checkpoint", False)))
    atomic_write(out / "audit.json", json.dumps(audit, sort_keys=True, indent=2) + "\n")


def _codec_from(cfg: dict, base: Path, key: str):
    spec = _require(cfg, key)
    if spec == "rm":
        params = _code(cfg)
        return ClassicalCodec(params.m, params.r, bool(cfg.get("first_order_leaves", True))), f"RM({params.m},{params.r})"
    ckpt = load_checkpoint(_resolve(base, spec))
    return ckpt.to_codec(), f"KO({ckpt.m},{ckpt.r})"


def cmd_eval_ber(cfg: dict, base: Path, out: Path, workers: int) -> None:
    codec, label = _codec_from(cfg, base, "codec")
    snrs = [float(s) for s in _require(cfg, "snrs")]
    if not snrs:
        raise ConfigError("snrs must not be empty")
    min_bits = int(cfg.get("min_bits", 10**5))
    if min_bits < 10**4:
        raise ConfigError("min_bits must be at least 10000")
    convention = cfg.get("convention", "esn0")
    if convention not in ("esn0", "ebn0"):
        raise ConfigError(f"unknown convention {convention!r}")
    points = ber_curve(
        codec, snrs, min_bits, int(cfg.get("min_errors", 100)), int(cfg["seed"]), convention, workers
    )
    atomic_write(out / "ber.csv", ber_csv(points))
    atomic_write(out / "ber.json", ber_json(points, {"codec": label, "convention": convention, "seed": cfg["seed"]}))
    for p in points:
        print(f"{label} {p.snr_db:+.2f} dB  BER {p.ber:.3e}  BLER {p.bler:.3e}  ({p.bits_tested} bits)")


def cmd_eval_distance(cfg: dict, base: Path, out: Path, workers: int) -> None:
    rng = make_rng(int(cfg["seed"]))
    source = _require(cfg, "source")
    quantize = bool(cfg.get("quantize", False))
    if source == "gaussian":
        n = int(_require(cfg, "n"))
        sampler = gaussian_codebook(n, int(cfg.get("count", 2**16)), rng)
        label = f"gaussian(n={n})"
    elif source == "rm":
        params = _code(cfg)
        sampler = rm_sampler(params.m, params.r)
        label = f"RM({params.m},{params.r})"
    else:
        ckpt = load_checkpoint(_resolve(base, source))
        sampler = neural_sampler(ckpt.to_codec(), quantized=quantize)
        label = f"KO({ckpt.m},{ckpt.r})" + (" quantized" if quantize else "")
    n_pairs = int(cfg.get("n_pairs", 10**4))
    if n_pairs < 1000:
        raise ConfigError("n_pairs must be at least 1000")
    hist = pairwise_distances(sampler, n_pairs, rng, int(cfg.get("bins", 64)))
    atomic_write(out / "histogram.csv", histogram_csv(hist))
    atomic_write(out / "histogram.json", histogram_json(hist, {"source": label, "seed": cfg["seed"]}))
    s = hist.stats()
    print(f"{label}: {s['n_pairs']} pairs, mean {s['mean']:.4f}, std {s['std']:.4f}, {s['distinct']} distinct")


def cmd_param_count(cfg: dict, base: Path, out: Path, workers: int) -> None:
    if "checkpoint" in cfg:
        codec = load_checkpoint(_resolve(base, cfg["checkpoint"])).to_codec()
    else:
        params = _code(cfg)
        codec = NeuralCodec.create(
            params.m,
            params.r,
            int(cfg.get("enc_hidden", 32)),
            int(cfg.get("dec_hidden", 120)),
            coordinatewise=bool(cfg.get("coordinatewise", False)),
        )
    rows = []
    for (path, role), net in ((key, codec.nets[key]) for key in codec.keys()):
        block = net.out_dim
        inputs = net.in_dim // block
        formula = param_count(block, net.hidden, net.with_alpha, inputs)
        rows.append(
            {"path": path, "role": role, "ell": block, "hidden": net.hidden, "count": net.n_params(), "formula": formula}
        )
    total = sum(r["count"] for r in rows)
    if any(r["count"] != r["formula"] for r in rows):
        raise StructureError("enumerated parameter count disagrees with the closed form")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("path", "role", "ell", "hidden", "count", "formula"))
    for r in rows:
        w.writerow([r["path"], r["role"], r["ell"], r["hidden"], r["count"], r["formula"]])
    atomic_write(out / "param_count.csv", buf.getvalue())
    atomic_write(out / "param_count.json", json.dumps({"total": total, "nodes": rows}, sort_keys=True, indent=2) + "\n")
    for r in rows:
        print(f"{r['path'] or '<root>':>10} {r['role']:<9} ell={r['ell']:<4} H={r['hidden']:<4} {r['count']} (formula {r['formula']})")
    print(f"total {total}")


COMMANDS = {
    "train-constituent": cmd_train_constituent,
    "train-hiko": cmd_train_hiko,
    "eval-ber": cmd_eval_ber,
    "eval-distance": cmd_eval_distance,
    "param-count": cmd_param_count,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiko", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg, base = _load_config(args.config, args.command)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if "seed" not in cfg:
            err = ConfigError("missing config key 'seed'")
            err.key = "seed"
            raise err
        if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
            raise ConfigError("seed must be an integer")
        workers = args.workers if args.workers is not None else int(cfg.get("workers", os.cpu_count() or 1))
        out = Path(args.out).resolve()
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, base, out, max(1, workers))
    except HikoError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "key", None) is not None:
            payload["key"] = exc.key
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc)}, sort_keys=True), file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
