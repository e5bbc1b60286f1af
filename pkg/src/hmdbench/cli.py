"""Command-line entry point: synth, train, detect, evaluate, report.

Every command reads one experiment config JSON (sections per module, see
``ExperimentConfig``); ``--set section.field=value`` and the dedicated flags
override it. The seed comes from ``--seed``, then the config, then the
``HMDBENCH_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import modelio
from .experiment import (DETECTORS, ExperimentConfig, evaluate_manifest, load_manifest_traces,
                         report_bundle, train_from_manifest)
from .synth import SuiteSpec, gen_suite, load_manifest
from .trace import read_trace

log = logging.getLogger("hmdbench")

EXIT_OK, EXIT_ERROR, EXIT_ALARM = 0, 1, 2
ALL_DETECTORS = DETECTORS + ("rf",)
MODEL_SUFFIX = ".model"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- config ----------------------------------------------------------------------------

def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path}: expected a JSON object")
    return doc


def _apply_set(raw: dict, assignment: str) -> None:
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects section.field=value, got {assignment!r}")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    node = raw
    parts = key.split(".")
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise UsageError(f"--set {key}: {p} is not a section")
        node = nxt
    node[parts[-1]] = parsed


def load_raw_config(path=None, sets=()) -> dict:
    raw = _read_json(path) if path else {}
    # a bare suite spec is accepted where an experiment config is expected
    if raw and not set(raw) & set(ExperimentConfig.SECTIONS):
        raw = {"suite": raw}
    for s in sets:
        _apply_set(raw, s)
    return raw


def build_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def resolve_seed(flag, configured=None) -> int:
    if flag is not None:
        return int(flag)
    if configured is not None:
        return int(configured)
    env = os.environ.get("HMDBENCH_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"HMDBENCH_SEED must be an integer, got {env!r}") from None
    return 0


def _config_seed(raw: dict):
    seeds = raw.get("seeds")
    if seeds:
        return seeds[0]
    return (raw.get("suite") or {}).get("seed")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON (sections per module)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                   help="override one config field; VALUE is parsed as JSON when possible")
    p.add_argument("--seed", type=int, help="seed (falls back to the config, then HMDBENCH_SEED)")


def _write_text(path: Path, text: str) -> None:
    modelio.atomic_write_bytes(path, text.encode("utf-8"))


# --- commands --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    raw = load_raw_config(args.config, args.set)
    suite_raw = dict(raw.get("suite") or {})
    suite_raw["seed"] = resolve_seed(args.seed, suite_raw.get("seed"))
    if args.traces_per_cell is not None:
        suite_raw["traces_per_cell"] = args.traces_per_cell
    if args.trace_len_ms is not None:
        suite_raw["trace_len_ms"] = args.trace_len_ms
    try:
        spec = SuiteSpec.from_dict(suite_raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    manifest = gen_suite(spec, args.out)
    n_benign = sum(1 for e in manifest if e["benign"])
    print(f"wrote {n_benign} benign and {len(manifest) - n_benign} injected traces "
          f"({len(spec.archetypes)} archetypes, {len(spec.grid())} payload configs) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = load_raw_config(args.config, args.set)
    seed = resolve_seed(args.seed, _config_seed(raw))
    raw["seeds"] = [seed]
    cfg = build_config(raw)
    doc = _load_manifest(args.manifest)
    suite = load_manifest_traces(doc, cfg.split, archetypes=[args.archetype])
    model = train_from_manifest(cfg, args.detector, suite[args.archetype], seed)
    size = modelio.save_model(model, args.out)
    print(f"wrote {args.detector} model for {args.archetype} to {args.out} ({size} bytes)")
    return EXIT_OK


def cmd_detect(args) -> int:
    model = modelio.load_model(args.model)
    if not hasattr(model, "detect"):
        raise UsageError(f"{args.model} holds a bare {model.kind} model, not a detector")
    trace = read_trace(args.trace)
    report = model.detect(trace, Path(args.trace).stem)
    if args.out:
        _write_text(Path(args.out), report.to_csv())
    n = int(report.flagged.sum())
    print(f"{n} of {len(report)} windows flagged")
    return EXIT_ALARM if n else EXIT_OK


def model_path(models_dir, archetype: str, detector: str) -> Path:
    return Path(models_dir) / archetype / f"{detector}{MODEL_SUFFIX}"


def cmd_evaluate(args) -> int:
    raw = load_raw_config(args.config, args.set)
    seed = resolve_seed(args.seed, _config_seed(raw))
    raw["seeds"] = [seed]
    if args.fp_target is not None:
        raw["fp_target"] = args.fp_target
    if args.detectors:
        raw["detectors"] = [d for d in args.detectors.split(",") if d]
    if args.no_rf:
        raw["rf"] = None
    cfg = build_config(raw)
    doc = _load_manifest(args.manifest)
    archetypes = sorted({e["app_id"] for e in doc["traces"]})
    models = {}
    for arch in archetypes:
        for det in cfg.detectors:
            path = model_path(args.models_dir, arch, det)
            if not path.is_file():
                raise UsageError(f"missing model {path}")
            models[(arch, det)] = modelio.load_model(path)
    records, rf = evaluate_manifest(cfg, doc, models, seed,
                                    progress=lambda m: log.info("%s", m))
    out = Path(args.out)
    for name, text in report_bundle(records, rf).items():
        _write_text(out / name, text)
    print(f"wrote evaluation outputs for {len(archetypes)} archetypes to {out}")
    return EXIT_OK


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    d = Path(args.results)
    auc_path = d / "auc_summary.csv"
    if not auc_path.is_file():
        raise UsageError(f"{auc_path} not found; run 'hmdbench evaluate' first")
    rows = _read_csv(auc_path)
    print("AUC by detector and archetype")
    by_det = {}
    for r in rows:
        auc = float(r["auc"]) if r["auc"] else float("nan")
        by_det.setdefault(r["detector"], []).append(auc)
        print(f"  {r['detector']:<10} {r['archetype']:<18} {auc:.4f}")
    for det, v in by_det.items():
        print(f"  {det:<10} {'mean':<18} {np.nanmean(v):.4f}")
    ttd = d / "ttd.csv"
    if ttd.is_file():
        print("Time to detection (detected intervals)")
        lat = {}
        for r in _read_csv(ttd):
            lat.setdefault(r["detector"], []).append(float(r["latency_ms"]) if r["latency_ms"] else None)
        for det, v in lat.items():
            hit = [x for x in v if x is not None]
            med = f"{np.median(hit) / 1000:.2f} s" if hit else "n/a"
            print(f"  {det:<10} detected {len(hit)}/{len(v)}  median {med}")
    rf = d / "rf_cv.csv"
    if rf.is_file():
        print("Random forest cross-validation")
        for r in _read_csv(rf):
            print(f"  {r['model']:<24} {r['tested_on']:<16} {float(r['auc']):.4f}")
    return EXIT_OK


def _load_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise UsageError(f"manifest {p} not found")
    return load_manifest(p)


# --- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hmdbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic suite and its manifest")
    _common(p)
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--traces-per-cell", type=int, help="benign traces per archetype")
    p.add_argument("--trace-len-ms", type=float, help="trace length in ms")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one detector on one archetype of a suite")
    _common(p)
    p.add_argument("detector", choices=ALL_DETECTORS)
    p.add_argument("--manifest", required=True, help="suite manifest.json or its directory")
    p.add_argument("--archetype", required=True, help="app archetype to train on")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run a model over one trace (exit 0 clean, 2 alarm, 1 error)")
    p.add_argument("model", help="model file")
    p.add_argument("trace", help="trace CSV")
    p.add_argument("--out", help="detection report CSV to write")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score a suite with trained models and write reports")
    _common(p)
    p.add_argument("--manifest", required=True, help="suite manifest.json or its directory")
    p.add_argument("--models-dir", required=True,
                   help=f"directory holding <archetype>/<detector>{MODEL_SUFFIX}")
    p.add_argument("--out", required=True, help="output directory for CSV and SVG reports")
    p.add_argument("--fp-target", type=float, help="benign window flag rate to calibrate to")
    p.add_argument("--detectors", help="comma-separated subset of " + ",".join(DETECTORS))
    p.add_argument("--no-rf", action="store_true", help="skip random forest cross-validation")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a summary of evaluation outputs")
    p.add_argument("results", help="directory written by 'evaluate'")
    p.set_defaults(func=cmd_report)
    for p in sub.choices.values():
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:        # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, modelio.ModelFormatError, FileNotFoundError, ValueError, KeyError,
            OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
