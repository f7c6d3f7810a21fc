"""Command-line entry point.

    dcevae prepare --adult adult.data [--adult-test adult.test] --out DIR
    dcevae prepare --scm default|spec.json --n 20000 --out DIR --seed 0
    dcevae train   --config cfg.json --data DIR --out DIR
    dcevae report  --data DIR [--checkpoint FILE] [--reference real|truth] [--emit-counterfactuals]
    dcevae theory  --spec spec.json | --checkpoint FILE --data DIR
    dcevae diff    A.json B.json

Exit codes: 0 success, 1 numerical failure, 2 I/O or usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainConfig
from .counterfactual import counterfactual_predict, export_counterfactuals, generate_dataset
from .data import (
    ScmSpec,
    adult_train_test,
    generate_scm,
    ingest_adult,
    load_dataset,
    save_dataset,
    split,
)
from .metrics import counterfactual_effect, effect_report, list_to_table
from .nets import load_checkpoint, make_model, save_checkpoint
from .numerics import NumericalError, Rng
from .theory import LinearModelSpec, model_report, spec_report, write_heatmap_csv

log = logging.getLogger("dcevae")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_hash: str | None
    seed: int | None
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)

    def add(self, *paths) -> None:
        for p in paths:
            p = Path(p)
            self.outputs.append({"path": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})

    def write(self, directory) -> Path:
        self.finished = _timestamp()
        path = Path(directory) / f"{self.command}.manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins timestamps for reproducible reruns
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch is not None else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# prepare


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("prepare", None, args.seed, started=_timestamp())
    if args.adult:
        if args.adult_test:
            train, test = adult_train_test(args.adult, args.adult_test)
        else:
            train, test = split(ingest_adult(args.adult), args.test_fraction, Rng(args.seed))
        manifest.add(*save_dataset(train, out, "train"), *save_dataset(test, out, "test"))
        log.info("adult: %d train / %d test records", len(train), len(test))
    else:
        if args.n is None:
            raise UsageError("--scm needs --n")
        spec = ScmSpec() if args.scm == "default" else ScmSpec.from_dict(_read_json(args.scm))
        spec.seed = args.seed
        sample = generate_scm(spec, args.n)
        paths = save_dataset(sample.dataset, out, "train")
        paths.append(_write_json(out / "truth.json", sample.truth()))
        truth_csv = out / "truth.csv"
        sample.truth_frame().to_csv(truth_csv, index=False, lineterminator="\n")
        paths.append(truth_csv)
        paths.append(_write_json(out / "scm_spec.json", json.loads(spec.to_json())))
        manifest.add(*paths)
        log.info("scm: %d records, true TE %.4f", args.n, sample.true_te)
    manifest.write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    config = TrainConfig.from_dict(_read_json(args.config))
    ds = load_dataset(args.data, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("train", config.hash(), config.seed, started=_timestamp())
    model = make_model(ds, config)
    history = model.fit(ds)
    ckpt = save_checkpoint(model, out / "checkpoint.json")
    hist_path = out / "history.csv"
    keys = list(history[0].keys())
    with hist_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(float(v)) if k != "epoch" else v for k, v in row.items()})
    config_path = _write_json(out / "config.json", config.to_dict())
    manifest.add(ckpt, hist_path, config_path)
    manifest.write(out)
    log.info("trained %s for %d epochs; final total %.4f", config.variant, len(history), history[-1]["total"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _maybe_test(directory):
    try:
        return load_dataset(directory, "test")
    except FileNotFoundError:
        return None


def cmd_report(args) -> int:
    data_dir = Path(args.data)
    ds = load_dataset(data_dir, "train")
    test = _maybe_test(data_dir)
    truth_path = data_dir / "truth.json"
    reference_kind = args.reference or ("truth" if truth_path.is_file() else "real")
    if reference_kind == "truth":
        reference = list_to_table(_read_json(truth_path)["ce"])
    else:
        reference = counterfactual_effect(ds).table

    outputs = []
    if args.checkpoint is None:
        report = effect_report(ds, reference=reference, generated=ds,
                               train_set=ds if test is not None else None, test_set=test)
    else:
        model = load_checkpoint(args.checkpoint)
        if model.partition != ds.partition:
            raise UsageError("checkpoint partition does not match the dataset partition")
        model.check_dataset(ds)
        generated = generate_dataset(model, ds)
        report = effect_report(ds, model=model, reference=reference, generated=generated,
                               train_set=generated if test is not None else None, test_set=test)
        if args.emit_counterfactuals:
            records = counterfactual_predict(model, ds)
            outputs += export_counterfactuals(ds, records, Path(args.out).parent, "counterfactual")
    path = _write_json(args.out, report.to_dict())
    outputs.append(path)
    print(json.dumps(report.to_dict(), sort_keys=True))
    manifest = RunManifest("report", report.config_hash, None, started=_timestamp())
    manifest.add(*outputs)
    manifest.write(Path(args.out).parent)
    return EXIT_OK


# ---------------------------------------------------------------------------
# theory


def cmd_theory(args) -> int:
    if args.spec:
        report = spec_report(LinearModelSpec.from_dict(_read_json(args.spec)))
        matrices = {"sigma_star": report.sigma_star, "sigma_numeric": report.sigma_numeric}
    else:
        if not args.data:
            raise UsageError("--checkpoint needs --data")
        model = load_checkpoint(args.checkpoint)
        ds = load_dataset(args.data, "train")
        model.check_dataset(ds)
        report = model_report(model, ds)
        matrices = {f"empirical_{k}": v["cov"] for k, v in report.sigma_empirical.items()}
    out = _write_json(args.out, report.to_dict())
    outputs = [out]
    if args.heatmaps:
        for name, mat in matrices.items():
            outputs.append(write_heatmap_csv(mat, out.parent / f"{name.replace('=', '')}.csv"))
    manifest = RunManifest("theory", report.config_hash, None, started=_timestamp())
    manifest.add(*outputs)
    manifest.write(out.parent)
    print(json.dumps({"block_score": report.block_score, "agreement": report.agreement,
                      "agrees": report.agrees}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# diff


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}.{k}" if prefix else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def cmd_diff(args) -> int:
    a, b = _read_json(args.a), _read_json(args.b)
    if a.get("config_hash") != b.get("config_hash"):
        raise UsageError(
            f"refusing to compare reports with different config hashes "
            f"({a.get('config_hash')} vs {b.get('config_hash')})"
        )
    fa, fb = dict(_flatten(a)), dict(_flatten(b))
    differ = 0
    for key in sorted(set(fa) | set(fb)):
        va, vb = fa.get(key), fb.get(key)
        if va != vb:
            differ += 1
            delta = ""
            if isinstance(va, (int, float)) and isinstance(vb, (int, float)):
                delta = f"  (delta {vb - va:+.6g})"
            print(f"{key}: {va} -> {vb}{delta}")
    if not differ:
        print("identical")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcevae", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="encode Adult or generate SCM data")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--adult", help="Adult training file")
    src.add_argument("--scm", help="'default' or a JSON SCM spec")
    p.add_argument("--adult-test", help="Adult test file (otherwise a seeded split)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="effect report for real data or a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--reference", choices=("real", "truth"))
    p.add_argument("--emit-counterfactuals", action="store_true")
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("theory", help="covariance theory checks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec")
    src.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--heatmaps", action="store_true", help="also dump matrices as CSV")
    p.add_argument("--out", default="covariance.json")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("diff", help="compare two reports with the same config hash")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_diff)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, UsageError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
