"""End-to-end experiments over a synthetic suite.

Shared by the ``evaluate`` command and the acceptance tests. Per seed and
archetype the benign traces are split into train / validation / test; the
detectors are trained on train, calibrated on validation and scored on test
plus every injected trace. Results are kept as flat per-trace records so the
different summaries (operating range, AUC, latency) are simple reductions.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baseline import BaselineConfig, train_baseline
from .bow import BowConfig, histogram, train_bow
from .codebook import assign_states, build_codebook
from .evaluate import (OperatingRangeCell, config_sort_key, heatmap_svg, kfold, operating_range,
                       payload_window_mask, roc_auc, roc_to_csv, time_to_detection, window_counts)
from .features import FeatureConfig
from .markov import MarkovTrainConfig, train_markov_detector
from .pipeline import FrontEnd
from .preprocess import PreprocessConfig
from .supervised import (BENIGN, LabeledWindowSet, RFConfig, RFDetector, build_balanced_set,
                         score_rf, train_rf)
from .synth import PayloadConfig, SuiteSpec, benign_seed, gen_benign, inject_payload, malicious_seed
from .trace import PayloadKind, read_trace

log = logging.getLogger(__name__)

DETECTORS = ("markov", "bow", "baseline")


@dataclass(frozen=True)
class RFExperimentConfig:
    forest: RFConfig = RFConfig()
    codebook_m: int = 100
    train_size: int = 420
    folds: int = 10
    kmeans_n_init: int = 1
    kmeans_max_iter: int = 100
    codebook_max_vectors: int = 10000

    def to_dict(self):
        return {"forest": self.forest.to_dict(), "codebook_m": self.codebook_m,
                "train_size": self.train_size, "folds": self.folds,
                "kmeans_n_init": self.kmeans_n_init, "kmeans_max_iter": self.kmeans_max_iter,
                "codebook_max_vectors": self.codebook_max_vectors}

    @classmethod
    def from_dict(cls, d: dict) -> "RFExperimentConfig":
        d = dict(d)
        if "forest" in d:
            d["forest"] = RFConfig(**d["forest"])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    suite: SuiteSpec = field(default_factory=SuiteSpec)
    seeds: tuple = (0,)
    # fractions of each archetype's benign traces used for train / validation / test
    split: tuple = (0.4, 0.3, 0.3)
    preprocess: PreprocessConfig = PreprocessConfig()
    features: FeatureConfig = FeatureConfig()
    markov: MarkovTrainConfig = MarkovTrainConfig()
    bow: BowConfig = BowConfig()
    baseline: BaselineConfig = BaselineConfig()
    rf: RFExperimentConfig | None = RFExperimentConfig()
    fp_target: float = 0.2
    detectors: tuple = DETECTORS
    # the per-sample baseline is slow; score it only on payloads at least this long
    baseline_min_duration_ms: float = 0.0
    # extra injected copies (same background) scored by the Markov detector
    overhead_multipliers: tuple = ()

    SECTIONS = ("suite", "seeds", "split", "preprocess", "features", "markov", "bow",
                "baseline", "rf", "fp_target", "detectors", "baseline_min_duration_ms",
                "overhead_multipliers")

    def to_dict(self) -> dict:
        return {"suite": self.suite.to_dict(), "seeds": list(self.seeds), "split": list(self.split),
                "preprocess": self.preprocess.to_dict(), "features": self.features.to_dict(),
                "markov": self.markov.to_dict(), "bow": self.bow.to_dict(),
                "baseline": self.baseline.to_dict(),
                "rf": None if self.rf is None else self.rf.to_dict(),
                "fp_target": self.fp_target, "detectors": list(self.detectors),
                "baseline_min_duration_ms": self.baseline_min_duration_ms,
                "overhead_multipliers": list(self.overhead_multipliers)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ValueError(f"unknown config section(s) {sorted(unknown)}")
        kw = {}
        parsers = {
            "suite": SuiteSpec.from_dict,
            "preprocess": lambda v: PreprocessConfig(**v),
            "features": lambda v: FeatureConfig(**v),
            "markov": MarkovTrainConfig.from_dict,
            "bow": BowConfig.from_dict,
            "baseline": BaselineConfig.from_dict,
            "rf": lambda v: None if v is None else RFExperimentConfig.from_dict(v),
            "seeds": lambda v: tuple(int(x) for x in v),
            "split": lambda v: tuple(float(x) for x in v),
            "fp_target": float,
            "detectors": lambda v: tuple(str(x) for x in v),
            "baseline_min_duration_ms": float,
            "overhead_multipliers": lambda v: tuple(float(x) for x in v),
        }
        for key, value in d.items():
            try:
                kw[key] = parsers[key](value)
            except (TypeError, ValueError, KeyError) as exc:
                raise ValueError(f"{key}: {exc}") from None
        cfg = cls(**kw)
        bad = set(cfg.detectors) - set(DETECTORS)
        if bad:
            raise ValueError(f"detectors: unknown detector(s) {sorted(bad)}")
        if not 0 <= cfg.fp_target <= 1:
            raise ValueError("fp_target: must lie in [0, 1]")
        return cfg


def split_counts(n: int, split) -> tuple:
    """Train / validation / test counts, each at least one."""
    if n < 3:
        raise ValueError("need at least 3 benign traces per archetype")
    fr = np.asarray(split, dtype=float) / float(sum(split))
    n_train = max(1, int(round(fr[0] * n)))
    n_val = max(1, int(round(fr[1] * n)))
    n_train = min(n_train, n - 2)
    n_val = min(n_val, n - n_train - 1)
    return n_train, n_val, n - n_train - n_val


def with_seed(cfg: ExperimentConfig, seed: int):
    return (replace(cfg.markov, seed=seed), replace(cfg.bow, seed=seed),
            replace(cfg.baseline, seed=seed))


def train_detectors(cfg: ExperimentConfig, train_traces, val_traces, seed: int,
                    frontend: FrontEnd | None = None, train_features=None,
                    val_features=None) -> dict:
    """Every requested detector for one archetype, calibrated to ``cfg.fp_target``."""
    mcfg, bcfg, blcfg = with_seed(cfg, seed)
    mcfg = replace(mcfg, target_fp=cfg.fp_target)
    if frontend is None:
        frontend = FrontEnd.fit(train_traces, cfg.preprocess, cfg.features)
    if train_features is None:
        train_features = [frontend.transform(t) for t in train_traces]
    if val_features is None:
        val_features = [frontend.transform(t) for t in val_traces]
    models = {}
    fe_cfgs = (cfg.preprocess, cfg.features)
    if "markov" in cfg.detectors:
        models["markov"] = train_markov_detector(
            train_traces, val_traces, fe_cfgs, mcfg, frontend=frontend,
            train_features=train_features, validation_features=val_features)
    if "bow" in cfg.detectors:
        bow = train_bow(train_traces, val_traces, fe_cfgs, replace(bcfg, target_fp=cfg.fp_target),
                        frontend=frontend, train_features=train_features,
                        validation_features=val_features)
        models["bow"] = bow.recalibrate(val_features, cfg.fp_target)
    if "baseline" in cfg.detectors:
        bl = train_baseline(train_traces, val_traces, replace(blcfg, target_fp=cfg.fp_target))
        models["baseline"] = bl.recalibrate(val_traces, cfg.fp_target)
    return models


def _shared_features(models: dict, trace):
    """Front-end features computed once per distinct front end."""
    cache = {}
    out = {}
    for name, m in models.items():
        fe = getattr(m, "frontend", None)
        if fe is None:
            continue
        key = id(fe)
        if key not in cache:
            cache[key] = fe.transform(trace)
        out[name] = cache[key]
    return out


def score_trace(models: dict, trace, meta: dict, features=None) -> list[dict]:
    """Per-detector records for one trace.

    ``meta`` carries ``seed``, ``archetype``, ``config`` (PayloadConfig or None),
    ``overhead`` and ``trace_id``. ``features`` maps detector name to a
    precomputed feature set.
    """
    feats = features if features is not None else _shared_features(models, trace)
    labels = trace.label_intervals
    cfg = meta.get("config")
    out = []
    for name, model in models.items():
        if name == "baseline" and cfg is not None and \
                cfg.action_duration_ms < meta.get("baseline_min_duration_ms", 0.0):
            continue
        if name in feats and hasattr(model, "detect_features"):
            rep = model.detect_features(feats[name], meta.get("trace_id", ""))
        else:
            rep = model.detect(trace, meta.get("trace_id", ""))
        flagged, total = window_counts(rep, labels)
        mask = payload_window_mask(rep, labels) if labels else np.ones(len(rep), dtype=bool)
        rec = {
            "detector": name, "seed": meta["seed"], "archetype": meta["archetype"],
            "config_id": None if cfg is None else cfg.config_id,
            "kind": None if cfg is None else cfg.payload_kind.value,
            "size": None if cfg is None else cfg.size_level,
            "delay": None if cfg is None else cfg.delay_class.value,
            "duration_ms": None if cfg is None else cfg.action_duration_ms,
            "overhead": meta.get("overhead", 1.0),
            "flagged": flagged, "total": total,
            "scores": rep.scores[mask].copy(),
            "step_ms": rep.window_len_ms,
            "trace_id": meta.get("trace_id", ""),
        }
        if labels:
            rec["latencies"] = time_to_detection(rep, labels)
            rec["interval_starts"] = [iv.start_ms for iv in labels]
        out.append(rec)
    return out


@dataclass
class SeedRun:
    seed: int
    records: list
    models: dict          # archetype -> detector name -> model
    rf: dict | None = None


def run_seed(cfg: ExperimentConfig, seed: int, progress=None) -> SeedRun:
    """Generate the suite for ``seed`` in memory, train, and score everything."""
    spec = replace(cfg.suite, seed=seed)
    grid = spec.grid()
    n_train, n_val, n_test = split_counts(spec.traces_per_cell, cfg.split)
    need_features = cfg.rf is not None or any(d in cfg.detectors for d in ("markov", "bow"))
    records, models_by_arch = [], {}
    rf_rows = []          # (archetype, trace_id, label intervals or None, feature set) per trace
    rf_train_feats = []
    for ai, arch in enumerate(spec.archetypes):
        name = arch.app_id
        benign = [gen_benign(arch, spec.trace_len_ms, benign_seed(seed, ai, k), spec.sample_period_ms)
                  for k in range(spec.traces_per_cell)]
        train, val, test = benign[:n_train], benign[n_train:n_train + n_val], benign[n_train + n_val:]
        frontend, benign_feats = None, [None] * len(benign)
        if need_features:
            frontend = FrontEnd.fit(train, cfg.preprocess, cfg.features)
            benign_feats = [frontend.transform(t) for t in benign]
        models = train_detectors(cfg, train, val, seed, frontend, benign_feats[:n_train],
                                 benign_feats[n_train:n_train + n_val]) if cfg.detectors else {}
        models_by_arch[name] = models
        if progress:
            progress(f"seed {seed} {name}: trained {sorted(models)}")
        for k, (tr, fs) in enumerate(zip(test, benign_feats[n_train + n_val:])):
            meta = {"seed": seed, "archetype": name, "config": None,
                    "trace_id": f"{name}/benign_{n_train + n_val + k:03d}"}
            feats = {n: fs for n, m in models.items() if hasattr(m, "frontend")}
            records += score_trace(models, tr, meta, feats)
        if cfg.rf is not None:
            rf_train_feats.extend(benign_feats[:n_train])
            for k, fs in enumerate(benign_feats):
                rf_rows.append((name, f"{name}/benign_{k:03d}", None, fs))
        del benign, train, val, test
        mseed = malicious_seed(seed, ai)
        background = gen_benign(arch, spec.trace_len_ms, mseed, spec.sample_period_ms)
        for pcfg in grid:
            if not need_features and pcfg.action_duration_ms < cfg.baseline_min_duration_ms:
                continue
            tr = inject_payload(background, pcfg, mseed)
            fs = frontend.transform(tr) if need_features else None
            feats = {n: fs for n, m in models.items() if hasattr(m, "frontend")}
            meta = {"seed": seed, "archetype": name, "config": pcfg, "overhead": 1.0,
                    "trace_id": f"{name}/{pcfg.config_id}",
                    "baseline_min_duration_ms": cfg.baseline_min_duration_ms}
            records += score_trace(models, tr, meta, feats)
            if cfg.rf is not None:
                rf_rows.append((name, f"{name}/{pcfg.config_id}", tr.label_intervals, fs))
            for mult in cfg.overhead_multipliers:
                if "markov" not in models:
                    break
                heavy = inject_payload(background, pcfg.with_overhead(mult), mseed)
                meta_h = dict(meta, overhead=float(mult),
                              trace_id=f"{name}/{pcfg.config_id}@x{mult:g}")
                records += score_trace({"markov": models["markov"]}, heavy, meta_h)
        if progress:
            progress(f"seed {seed} {name}: scored {len(grid)} payload configs")
    rf = None
    if cfg.rf is not None:
        rf = rf_crossval(cfg.rf, rf_rows, rf_train_feats, seed, cfg.bow.ttd_ms)
        if progress:
            progress(f"seed {seed}: random forest cross-validation done")
    return SeedRun(seed, records, models_by_arch, rf)


# --- random forest cross-validation -------------------------------------------------

def rf_windows(rows, codebook, ttd_ms: float) -> dict:
    """Per-trace labeled TTD-window histograms.

    Malicious traces keep only payload-overlapping windows (tagged with the
    payload kind); benign traces keep every window.
    """
    out = {}
    for arch, trace_id, labels, fs in rows:
        st = assign_states(codebook, fs)
        starts, h = histogram(st, fs.starts_ms, ttd_ms, codebook.n_symbols, fs.config.shift_step_ms)
        if labels:
            ends = starts + ttd_ms
            mask = np.zeros(len(starts), dtype=bool)
            for iv in labels:
                mask |= (starts < iv.end_ms) & (ends > iv.start_ms)
            h = h[mask]
            tag = labels[0].payload_kind.value
            y = np.ones(len(h), dtype=np.int64)
        else:
            tag = BENIGN
            y = np.zeros(len(h), dtype=np.int64)
        out[trace_id] = LabeledWindowSet(h, y, np.full(len(h), tag, dtype=object),
                                         np.full(len(h), trace_id, dtype=object))
    return out


def rf_crossval(rcfg: RFExperimentConfig, rows, benign_train_features, seed: int,
                ttd_ms: float = 1500.0) -> dict:
    """Trace-level k-fold comparison of balanced all-behavior vs single-behavior forests.

    Returns mean AUCs: ``all`` (all-behavior model on all test behaviors),
    ``cross[b]`` (model trained on behavior b, tested on the other behaviors)
    and ``inclass[b]`` (tested on b only).
    """
    pooled = np.concatenate([f.vectors for f in benign_train_features])
    cb = build_codebook(pooled, rcfg.codebook_m, seed=seed, n_init=rcfg.kmeans_n_init,
                        max_iter=rcfg.kmeans_max_iter, max_vectors=rcfg.codebook_max_vectors)
    sets = rf_windows(rows, cb, ttd_ms)
    benign_ids = sorted(t for t, s in sets.items() if len(s) and s.labels[0] == 0)
    mal_ids = sorted(t for t, s in sets.items() if len(s) and s.labels[0] == 1)
    behaviors = [k.value for k in PayloadKind
                 if any(sets[t].behavior_tag[0] == k.value for t in mal_ids)]
    b_folds = kfold(benign_ids, rcfg.folds, seed)
    m_folds = kfold(mal_ids, rcfg.folds, seed + 1)
    auc_all, auc_cross, auc_in = [], {b: [] for b in behaviors}, {b: [] for b in behaviors}
    for f in range(rcfg.folds):
        test_ids = set(b_folds[f]) | set(m_folds[f])
        train = LabeledWindowSet.concat([sets[t] for t in benign_ids + mal_ids if t not in test_ids])
        test = LabeledWindowSet.concat([sets[t] for t in sorted(test_ids)])
        fseed = seed * 1000 + f
        size = 2 * _feasible_half(train, behaviors, rcfg.train_size)
        if size == 0:
            raise ValueError(f"fold {f}: not enough labeled windows for a balanced training set")
        if size < rcfg.train_size:
            log.warning("fold %d: balanced training set shrunk to %d rows", f, size)
        model = train_rf(build_balanced_set(train, behaviors, size, fseed), rcfg.forest, fseed)
        p = score_rf(model, test.vectors)
        auc_all.append(roc_auc(p[test.labels == 0], p[test.labels == 1])[1])
        tags = test.behavior_tag.astype(str)
        for b in behaviors:
            size_b = 2 * _feasible_half(train, [b], size)
            model_b = train_rf(build_balanced_set(train, [b], size_b, fseed), rcfg.forest, fseed)
            pb = score_rf(model_b, test.vectors)
            ben = pb[test.labels == 0]
            other = pb[(test.labels == 1) & (tags != b)]
            same = pb[(test.labels == 1) & (tags == b)]
            if len(other):
                auc_cross[b].append(roc_auc(ben, other)[1])
            if len(same):
                auc_in[b].append(roc_auc(ben, same)[1])
    return {"all": float(np.mean(auc_all)),
            "cross": {b: float(np.mean(v)) for b, v in auc_cross.items() if v},
            "inclass": {b: float(np.mean(v)) for b, v in auc_in.items() if v},
            "codebook_m": cb.m}


# --- reductions -----------------------------------------------------------------------

def detection_rates(records, detector: str, overhead: float = 1.0) -> dict:
    """(seed, archetype, config_id) -> detection rate (flagged / countable payload windows)."""
    out = {}
    for r in records:
        if r["detector"] != detector or r["config_id"] is None or r["overhead"] != overhead:
            continue
        if r["total"]:
            out[(r["seed"], r["archetype"], r["config_id"])] = r["flagged"] / r["total"]
    return out


def fp_rates(records, detector: str) -> dict:
    """(seed, archetype) -> benign test window flag rate."""
    acc = {}
    for r in records:
        if r["detector"] == detector and r["config_id"] is None:
            f, t = acc.get((r["seed"], r["archetype"]), (0, 0))
            acc[(r["seed"], r["archetype"])] = (f + r["flagged"], t + r["total"])
    return {k: f / t for k, (f, t) in acc.items() if t}


def auc_by_group(records, detector: str, config_filter=None) -> dict:
    """(seed, archetype) -> AUC of benign test windows vs payload windows."""
    ben, mal = {}, {}
    for r in records:
        if r["detector"] != detector or r["overhead"] != 1.0:
            continue
        key = (r["seed"], r["archetype"])
        if r["config_id"] is None:
            ben.setdefault(key, []).append(r["scores"])
        elif config_filter is None or config_filter(r):
            mal.setdefault(key, []).append(r["scores"])
    out = {}
    for key in sorted(set(ben) & set(mal)):
        b, m = np.concatenate(ben[key]), np.concatenate(mal[key])
        if len(b) and len(m):
            out[key] = roc_auc(b, m)[1]
    return out


def latencies(records, detector: str = "markov"):
    """Detected-interval latencies (ms) and the count of undetected intervals."""
    lat, missed = [], 0
    for r in records:
        if r["detector"] != detector or r["config_id"] is None or r["overhead"] != 1.0:
            continue
        for v in r.get("latencies", []):
            if v is None:
                missed += 1
            else:
                lat.append(v)
    return np.asarray(lat), missed


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties (NaN if either side is constant).

    Doubled average ranks are integers, so the sums are exact and the only
    rounding is the final division; a rank pattern worth exactly 0.8 yields 0.8.
    """
    def doubled_ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v), dtype=np.int64)
        r[order] = np.arange(len(v))
        for val in np.unique(v):
            idx = v == val
            r[idx] = r[idx].min() + r[idx].max()
        return [int(t) for t in r]
    rx, ry = doubled_ranks(x), doubled_ranks(y)
    n = len(rx)
    if n != len(ry):
        raise ValueError("x and y must have the same length")
    sx, sy = sum(rx), sum(ry)
    # n^2 times the centered (co)variances, in integers
    cxy = n * sum(a * b for a, b in zip(rx, ry)) - sx * sy
    cxx = n * sum(a * a for a in rx) - sx * sx
    cyy = n * sum(b * b for b in ry) - sy * sy
    if cxx == 0 or cyy == 0:
        return math.nan
    prod = cxx * cyy
    root = math.isqrt(prod)
    denom = float(root) if root * root == prod else math.sqrt(prod)
    return cxy / denom


# --- suites on disk ------------------------------------------------------------------

@dataclass
class ArchetypeData:
    """One archetype's traces from a manifest, benign ones already split."""

    name: str
    train: list
    validation: list
    test: list               # (trace_id, trace)
    malicious: list          # (trace_id, trace, PayloadConfig)


def load_manifest_traces(doc: dict, split=(0.4, 0.3, 0.3), archetypes=None) -> dict:
    """Read every trace of a suite manifest, grouped by archetype.

    Benign traces are split in manifest order into train / validation / test.
    """
    root = Path(doc["root"])
    grid = {c["config_id"]: PayloadConfig.from_dict(c) for c in doc.get("grid", [])}
    benign, malicious = {}, {}
    for e in doc["traces"]:
        if archetypes is not None and e["app_id"] not in archetypes:
            continue
        tid = e["path"][:-4] if e["path"].endswith(".csv") else e["path"]
        tr = read_trace(root / e["path"], e["app_id"])
        if e["benign"]:
            benign.setdefault(e["app_id"], []).append((tid, tr))
        else:
            if e["config_id"] not in grid:
                raise ValueError(f"manifest: config {e['config_id']!r} missing from the grid")
            malicious.setdefault(e["app_id"], []).append((tid, tr, grid[e["config_id"]]))
    if archetypes is not None:
        missing = sorted(set(archetypes) - set(benign))
        if missing:
            raise ValueError(f"archetype(s) {missing} not in the manifest")
    out = {}
    for name in sorted(benign):
        items = benign[name]
        n_train, n_val, _ = split_counts(len(items), split)
        out[name] = ArchetypeData(name, items[:n_train], items[n_train:n_train + n_val],
                                  items[n_train + n_val:], malicious.get(name, []))
    return out


def _feasible_half(sets: LabeledWindowSet, behaviors, size: int) -> int:
    tags = sets.behavior_tag.astype(str)
    per = size // 2 // len(behaviors)
    per = min([per, int((sets.labels == 0).sum()) // len(behaviors)] +
              [int(((sets.labels == 1) & (tags == b)).sum()) for b in behaviors])
    return per * len(behaviors)


def train_rf_detector(cfg: ExperimentConfig, benign_train, malicious, seed: int) -> RFDetector:
    """Random Forest detector from benign traces and labeled malicious traces.

    The balanced training set uses ``cfg.rf.train_size`` rows, shrunk to the
    largest exactly balanced size the data allows.
    """
    rcfg = cfg.rf or RFExperimentConfig()
    if not malicious:
        raise ValueError("the random forest needs labeled malicious traces")
    frontend = FrontEnd.fit(benign_train, cfg.preprocess, cfg.features)
    bf = [frontend.transform(t) for t in benign_train]
    cb = build_codebook(np.concatenate([f.vectors for f in bf]), rcfg.codebook_m, seed=seed,
                        n_init=rcfg.kmeans_n_init, max_iter=rcfg.kmeans_max_iter,
                        max_vectors=rcfg.codebook_max_vectors)
    rows = [("", f"benign_{k}", None, f) for k, f in enumerate(bf)]
    rows += [("", f"malicious_{k}", t.label_intervals, frontend.transform(t))
             for k, t in enumerate(malicious)]
    data = LabeledWindowSet.concat(list(rf_windows(rows, cb, cfg.bow.ttd_ms).values()))
    behaviors = [k.value for k in PayloadKind if k.value in set(data.behavior_tag.astype(str))]
    half = _feasible_half(data, behaviors, rcfg.train_size)
    if half == 0:
        raise ValueError("not enough labeled windows for a balanced training set")
    forest = train_rf(build_balanced_set(data, behaviors, 2 * half, seed), rcfg.forest, seed)
    return RFDetector(frontend, cb, forest, cfg.bow.ttd_ms)


def train_from_manifest(cfg: ExperimentConfig, detector: str, data: ArchetypeData, seed: int):
    """Train one detector on one archetype of a manifest suite."""
    train = [t for _, t in data.train]
    val = [t for _, t in data.validation]
    if detector == "rf":
        return train_rf_detector(cfg, train, [t for _, t, _ in data.malicious], seed)
    if detector not in DETECTORS:
        raise ValueError(f"unknown detector {detector!r}")
    one = replace(cfg, detectors=(detector,))
    return train_detectors(one, train, val, seed)[detector]


def evaluate_manifest(cfg: ExperimentConfig, doc: dict, models: dict, seed: int,
                      progress=None):
    """Score a suite on disk with trained models.

    ``models`` maps ``(archetype, detector)`` to a loaded model. Thresholds are
    recalibrated to ``cfg.fp_target`` on each archetype's validation traces.
    Returns ``(records, rf)`` where ``rf`` holds the cross-validated forest
    AUCs (None when ``cfg.rf`` is None).
    """
    suite = load_manifest_traces(doc, cfg.split)
    records = []
    rf_rows, rf_train = [], []
    for name, data in suite.items():
        val = [t for _, t in data.validation]
        calibrated = {}
        for det in cfg.detectors:
            if (name, det) not in models:
                raise ValueError(f"missing {det} model for archetype {name}")
            m = models[(name, det)]
            if det == "baseline":
                calibrated[det] = m.recalibrate(val, cfg.fp_target)
            else:
                calibrated[det] = m.recalibrate([m.frontend.transform(t) for t in val],
                                                cfg.fp_target)
        for tid, tr in data.test:
            meta = {"seed": seed, "archetype": name, "config": None, "trace_id": tid}
            records += score_trace(calibrated, tr, meta)
        for tid, tr, pcfg in data.malicious:
            meta = {"seed": seed, "archetype": name, "config": pcfg, "overhead": 1.0,
                    "trace_id": tid, "baseline_min_duration_ms": cfg.baseline_min_duration_ms}
            records += score_trace(calibrated, tr, meta)
        if cfg.rf is not None:
            train = [t for _, t in data.train]
            fe = FrontEnd.fit(train, cfg.preprocess, cfg.features)
            rf_train += [fe.transform(t) for t in train]
            for tid, tr in data.train + data.validation + data.test:
                rf_rows.append((name, tid, None, fe.transform(tr)))
            for tid, tr, _ in data.malicious:
                rf_rows.append((name, tid, tr.label_intervals, fe.transform(tr)))
        if progress:
            progress(f"{name}: scored {len(data.test)} benign and {len(data.malicious)} injected traces")
    rf = None
    if cfg.rf is not None:
        rf = rf_crossval(cfg.rf, rf_rows, rf_train, seed, cfg.bow.ttd_ms)
        if progress:
            progress("random forest cross-validation done")
    return records, rf


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in r])
    return buf.getvalue()


def report_bundle(records, rf=None, kind_order=None) -> dict:
    """File name -> text for the evaluation outputs (deterministic given the records)."""
    kind_order = kind_order or [k.value for k in PayloadKind]
    detectors = list(dict.fromkeys(r["detector"] for r in records))
    archetypes = sorted({r["archetype"] for r in records})
    roc_rows = [["detector", "archetype", "fpr", "tpr", "threshold"]]
    auc_rows = [["detector", "archetype", "auc", "benign_windows", "payload_windows"]]
    for det in detectors:
        for arch in archetypes:
            mine = [r for r in records if r["detector"] == det and r["archetype"] == arch
                    and r["overhead"] == 1.0]
            b = [r["scores"] for r in mine if r["config_id"] is None]
            m = [r["scores"] for r in mine if r["config_id"] is not None]
            b = np.concatenate(b) if b else np.zeros(0)
            m = np.concatenate(m) if m else np.zeros(0)
            if len(b) == 0 or len(m) == 0:
                auc_rows.append([det, arch, None, len(b), len(m)])
                continue
            points, auc = roc_auc(b, m)
            auc_rows.append([det, arch, auc, len(b), len(m)])
            for line in roc_to_csv(points).splitlines()[1:]:
                roc_rows.append([det, arch] + line.split(","))
    op_rows = [["detector", "config_id", "archetype", "detection_rate", "fp_rate_at_threshold"]]
    heat = []
    for det in detectors:
        cells = operating_range([r for r in records if r["detector"] == det and r["overhead"] == 1.0],
                                kind_order)
        for c in cells:
            op_rows.append([det, c.config_id, c.archetype, c.detection_rate, c.fp_rate_at_threshold])
            heat.append(OperatingRangeCell(c.config_id, f"{det}:{c.archetype}", c.detection_rate,
                                           c.fp_rate_at_threshold))
    heat.sort(key=lambda c: config_sort_key(c.config_id, kind_order))
    ttd_rows = [["detector", "archetype", "config_id", "interval", "start_ms", "latency_ms"]]
    for r in records:
        if r["config_id"] is None or r["overhead"] != 1.0:
            continue
        for i, (s0, lat) in enumerate(zip(r["interval_starts"], r["latencies"])):
            ttd_rows.append([r["detector"], r["archetype"], r["config_id"], i, float(s0),
                             None if lat is None else float(lat)])
    out = {"roc.csv": _csv(roc_rows), "auc_summary.csv": _csv(auc_rows),
           "operating_range.csv": _csv(op_rows), "ttd.csv": _csv(ttd_rows),
           "heatmap.svg": heatmap_svg(heat, "detection rate at the calibrated threshold")}
    if rf is not None:
        rf_rows = [["model", "tested_on", "auc"], ["all_behaviors", "all", rf["all"]]]
        for b, v in rf["cross"].items():
            rf_rows.append([f"only_{b}", "other_behaviors", v])
        for b, v in rf["inclass"].items():
            rf_rows.append([f"only_{b}", b, v])
        out["rf_cv.csv"] = _csv(rf_rows)
    return out
