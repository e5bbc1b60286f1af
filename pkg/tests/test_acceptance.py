"""End-to-end acceptance criteria, each reported as one PASS/FAIL line.

The three experiment runs are shared at module scope:
``main`` (Markov + BoW, with 1.5x overhead copies), ``baseline`` (per-sample
Box-Cox ocSVM on the long-payload configs) and ``rf`` (cross-validated
forests). Expect roughly half an hour on one core.
"""

import json
import math
import time

import numpy as np
import pytest

from hmdbench import modelio
from hmdbench.bow import histogram
from hmdbench.cli import main as cli_main
from hmdbench.codebook import kmeans_pp_init, lloyd
from hmdbench.evaluate import roc_auc
from hmdbench.experiment import (ExperimentConfig, RFExperimentConfig, auc_by_group,
                                 detection_rates, fp_rates, latencies, run_seed, spearman)
from hmdbench.features import Wavelet, dwt_1d
from hmdbench.markov import (MarkovConfig, MarkovModel, MarkovTrainConfig, sequence_logprob,
                             train_markov)
from hmdbench.ocsvm import train_ocsvm
from hmdbench.preprocess import normalize01
from hmdbench.trace import CounterTrace

from oracles import counting_mle, mann_whitney_auc, naive_dwt, product_logprob, qp_ocsvm

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2, 3, 4)
LONG_PAYLOAD_MS = 360.0
RESULTS = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


def run_all(cfg):
    t0 = time.perf_counter()
    runs = [run_seed(cfg, s) for s in cfg.seeds]
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def main_run():
    cfg = ExperimentConfig(seeds=SEEDS, detectors=("markov", "bow"), rf=None,
                           overhead_multipliers=(1.5,),
                           markov=MarkovTrainConfig(kmeans_n_init=3, codebook_max_vectors=5000))
    runs, elapsed = run_all(cfg)
    return cfg, runs, [r for run in runs for r in run.records], elapsed


@pytest.fixture(scope="module")
def baseline_run():
    cfg = ExperimentConfig(seeds=SEEDS, detectors=("baseline",), rf=None,
                           baseline_min_duration_ms=LONG_PAYLOAD_MS)
    runs, elapsed = run_all(cfg)
    return [r for run in runs for r in run.records], elapsed


@pytest.fixture(scope="module")
def rf_run():
    cfg = ExperimentConfig(seeds=SEEDS, detectors=(), rf=RFExperimentConfig())
    runs, elapsed = run_all(cfg)
    return [run.rf for run in runs], elapsed


# --- 1. oracle equivalences ---------------------------------------------------------

def timed(fn):
    t0 = time.perf_counter()
    err = fn()
    return err, time.perf_counter() - t0


def oracle_dwt():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        x = rng.gamma(2.0, 1.0, 100)
        a, d = dwt_1d(x, Wavelet.Db3, 3)
        ra, rd = naive_dwt(x, "db3", 3)
        worst = max(worst, np.abs(a - ra).max(), *(np.abs(g - r).max() for g, r in zip(d, rd)))
    return worst


def oracle_logprob():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 21))
        m = MarkovModel(rng.dirichlet(np.ones(n), n), rng.dirichlet(np.ones(n)))
        s = rng.integers(0, n, int(rng.integers(1, 60))).tolist()
        ref = product_logprob(m.P, m.Q, s)
        worst = max(worst, abs(sequence_logprob(m, s) - ref) / abs(ref) if ref else 0.0)
    return worst


def oracle_auc():
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(50):
        b = np.round(rng.normal(0, 1, int(rng.integers(1, 80))), 1)
        m = np.round(rng.normal(0.7, 1, int(rng.integers(1, 80))), 1)
        worst = max(worst, abs(roc_auc(b, m)[1] - mann_whitney_auc(b, m)))
    return worst


def oracle_ocsvm():
    rng = np.random.default_rng(104)
    worst = 0.0
    for i in range(20):
        n = int(rng.integers(3, 11))
        x = rng.normal(size=(n, 3))
        nu, gamma = float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 2.0))
        alpha, rho, _, K = qp_ocsvm(x, nu, gamma)
        model = train_ocsvm(x, nu, gamma, seed=i)
        worst = max(worst, np.abs(model.decision_function(x) - (K @ alpha - rho)).max())
    return worst


def oracle_mle():
    rng = np.random.default_rng(105)
    cfg = MarkovConfig(self_transition=None, prob_floor=0.0)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 21))
        seqs = [rng.integers(0, n, int(rng.integers(2, 200))) for _ in range(5)]
        worst = max(worst, np.abs(train_markov(seqs, n, cfg).P - counting_mle(seqs, n)).max())
    return worst


@pytest.mark.parametrize("name, fn, tol", [
    ("DWT vs naive pyramid (100 windows)", oracle_dwt, 1e-9),
    ("log-probability vs direct product, relative (100 models)", oracle_logprob, 1e-12),
    ("AUC vs Mann-Whitney (50 score sets)", oracle_auc, 1e-12),
    ("ocSVM decision values vs dense QP (20 sets)", oracle_ocsvm, 1e-4),
    ("MLE transitions vs counting", oracle_mle, 1e-12),
])
def test_criterion_1_oracles(name, fn, tol):
    err, secs = timed(fn)
    ok = err <= tol and secs < 5.0
    report(1, ok, f"{name}: max error {err:.3g} (tol {tol:g}), {secs:.2f} s (limit 5 s)")
    assert ok


# --- 2. structural invariants ---------------------------------------------------------

def test_criterion_2_invariants(main_run):
    rng = np.random.default_rng(201)
    # transition rows, including every Markov model trained in the main run
    row_err = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 21))
        seqs = [rng.integers(0, n, int(rng.integers(2, 100))) for _ in range(3)]
        row_err = max(row_err, np.abs(train_markov(seqs, n).P.sum(1) - 1).max())
    _, runs, _, _ = main_run
    for run in runs:
        for models in run.models.values():
            row_err = max(row_err, np.abs(models["markov"].model.P.sum(1) - 1).max())
    # nu-property on fresh fits and on every BoW fit of the main run
    nu_ok = True
    for i in range(60):
        n = int(rng.integers(5, 150))
        x = rng.normal(size=(n, 4))
        nu = float(rng.uniform(0.02, 0.9))
        m = train_ocsvm(x, nu, float(rng.uniform(0.05, 5.0)), seed=i)
        nu_ok &= float(m.is_outlier(x).mean()) <= nu + 2.0 / n
    # every fit inside the main run went through the same guard in train_ocsvm,
    # which raises when the training flag fraction exceeds nu + 2/n
    n_fits = sum(1 for run in runs for _ in run.models.values())
    # histograms
    hist_err = 0.0
    for _ in range(200):
        k = int(rng.integers(2, 50))
        n = int(rng.integers(1, 400))
        _, h = histogram(rng.integers(0, k, n), np.arange(n) * 50.0, 1500.0, k)
        hist_err = max(hist_err, np.abs(h.sum(1) - 1).max())
    # normalize01
    norm_ok = True
    for _ in range(200):
        x = rng.gamma(0.5, 10.0, (int(rng.integers(1, 80)), 3)) * (rng.random() < 0.9)
        out, ranges = normalize01(CounterTrace(x, 1.0, ("a", "b", "c")))
        probe = CounterTrace(rng.gamma(0.5, 30.0, (20, 3)), 1.0, ("a", "b", "c"))
        out2, _ = normalize01(probe, ranges)
        norm_ok &= bool(out.samples.min() >= 0 and out.samples.max() <= 1
                        and out2.samples.min() >= 0 and out2.samples.max() <= 1)
    # k-means inertia per iteration
    mono_ok = True
    for _ in range(100):
        x = rng.normal(size=(int(rng.integers(20, 200)), 5)) * rng.uniform(0.1, 4, 5)
        k = int(rng.integers(1, 12))
        hist = []
        lloyd(x, kmeans_pp_init(x, k, rng), history=hist)
        mono_ok &= all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))
    checks = [("P rows sum to 1 +- 1e-9", row_err <= 1e-9, f"max dev {row_err:.2g}"),
              ("nu-property", nu_ok, f"flagged training fraction <= nu + 2/n on 60 random fits "
                                     f"and {n_fits} BoW fits"),
              ("histograms sum to 1", hist_err <= 1e-12, f"max dev {hist_err:.2g}"),
              ("normalize01 in [0,1]", norm_ok, "train and clamped test data"),
              ("k-means inertia monotone", mono_ok, "100 Lloyd runs")]
    for name, ok, detail in checks:
        report(2, ok, f"{name}: {detail}")
    assert all(ok for _, ok, _ in checks)


# --- 3. monotonic detectability ----------------------------------------------------------

def size_curves(records, detector):
    acc = {}
    for (_, _, cid), rate in detection_rates(records, detector).items():
        kind, size, delay = cid.rsplit("-", 2)
        acc.setdefault((kind, delay), {}).setdefault(int(size[1:]), []).append(rate)
    return {k: {s: float(np.mean(v)) for s, v in sorted(d.items())} for k, d in acc.items()}


def test_criterion_3_monotonic_detectability(main_run):
    _, _, records, elapsed = main_run
    ok = elapsed < 600.0
    worst = {}
    for det in ("markov", "bow"):
        for (kind, delay), curve in sorted(size_curves(records, det).items()):
            if len(curve) < 4:
                continue
            rho = spearman(list(curve), list(curve.values()))
            good = not math.isnan(rho) and rho >= 0.8
            ok &= good
            if kind not in worst.get(det, {}) or rho < worst[det][kind][0]:
                worst.setdefault(det, {})[kind] = (rho, delay)
            if not good:
                print(f"  {det} {kind}-{delay}: spearman {rho:.3f} rates {list(curve.values())}")
    summary = "; ".join(f"{det} " + ", ".join(f"{k} {r:.2f}" for k, (r, _) in kinds.items())
                        for det, kinds in worst.items())
    report(3, ok, f"min Spearman per kind [{summary}]; run time {elapsed:.0f} s (limit 600 s)")
    assert ok


# --- 4. feature-length advantage -----------------------------------------------------

def test_criterion_4_bow_beats_baseline(main_run, baseline_run):
    _, _, records, _ = main_run
    bl_records, elapsed = baseline_run
    def long(r):
        return r["duration_ms"] >= LONG_PAYLOAD_MS
    bow = auc_by_group(records, "bow", long)
    base = auc_by_group(bl_records, "baseline", long)
    mb, mbl = float(np.mean(list(bow.values()))), float(np.mean(list(base.values())))
    ok = len(bow) == len(base) == 3 * len(SEEDS) and mb - mbl >= 0.03
    report(4, ok, f"mean AUC BoW {mb:.3f} vs baseline {mbl:.3f}, margin {mb - mbl:.3f} "
                  f"(need >= 0.03); baseline run {elapsed:.0f} s")
    assert ok


# --- 5. balanced training -----------------------------------------------------------------

def test_criterion_5_balanced_training(rf_run):
    results, elapsed = rf_run
    auc_all = float(np.mean([r["all"] for r in results]))
    cross = float(np.mean([np.mean(list(r["cross"].values())) for r in results]))
    ok = auc_all >= cross + 0.02
    report(5, ok, f"all-behavior AUC {auc_all:.3f} vs single-behavior cross AUC {cross:.3f}, "
                  f"margin {auc_all - cross:.3f} (need >= 0.02); run {elapsed:.0f} s")
    assert ok


# --- 6. high-intensity detection floor ------------------------------------------------------

def test_criterion_6_high_intensity_floor(main_run):
    _, _, records, _ = main_run
    rates = detection_rates(records, "bow")
    fp = [v for (s, a), v in fp_rates(records, "bow").items() if a == "ComputeIntensive"]
    ok = max(fp) <= 0.25
    parts = [f"test FP max {max(fp):.3f}"]
    for cid in ("FileSteal-s8-Z", "ClickFraud-s8-Z"):
        tp = [v for (s, a, c), v in rates.items() if c == cid and a == "ComputeIntensive"]
        ok &= len(tp) == len(SEEDS) and min(tp) >= 0.9
        parts.append(f"{cid} TP min {min(tp):.3f} mean {np.mean(tp):.3f}")
    report(6, ok, "; ".join(parts) + " (need FP <= 0.25, TP >= 0.9 on every seed)")
    assert ok


# --- 7. latency and size -------------------------------------------------------------------

def test_criterion_7_latency_and_size(main_run):
    cfg, runs, records, _ = main_run
    lat, missed = latencies(records, "markov")
    floor = 4 * cfg.features.shift_step_ms
    sizes, ms = [], []
    for run in runs:
        for models in run.models.values():
            det = models["markov"]
            sizes.append(len(modelio.dumps(det)))
            ms.append(det.model.codebook.m)
    ok = len(lat) > 0 and lat.min() >= floor and np.median(lat) <= 5000.0
    ok &= max(ms) <= 20 and max(sizes) < 16 * 1024
    report(7, ok, f"latency min {lat.min():.1f} ms (need >= {floor:g}), median "
                  f"{np.median(lat) / 1000:.2f} s (need <= 5 s) over {len(lat)} detected intervals; "
                  f"model m {min(ms)}-{max(ms)}, size {min(sizes)}-{max(sizes)} bytes (need < 16384)")
    assert ok


# --- 8. overhead --------------------------------------------------------------------------

def test_criterion_8_overhead(main_run):
    _, _, records, _ = main_run
    base = detection_rates(records, "markov", 1.0)
    heavy = detection_rates(records, "markov", 1.5)
    by_kind = {}
    for key, v in heavy.items():
        if key in base:
            kind = key[2].rsplit("-", 2)[0]
            by_kind.setdefault(kind, ([], []))
            by_kind[kind][0].append(base[key])
            by_kind[kind][1].append(v)
    ok = len(by_kind) == 7
    parts = []
    for kind, (a, b) in by_kind.items():
        ok &= np.mean(b) >= np.mean(a) - 0.02
        parts.append(f"{kind} {np.mean(a):.3f}->{np.mean(b):.3f}")
    report(8, ok, "Markov rate x1.0 -> x1.5: " + ", ".join(parts))
    assert ok


# --- 9. determinism ------------------------------------------------------------------------

def test_criterion_9_evaluate_is_deterministic(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "suite": {"archetypes": ["BurstyUserDriven"], "traces_per_cell": 4, "trace_len_ms": 20000},
        "markov": {"kmeans_n_init": 2, "codebook_max_vectors": 3000},
        "bow": {"m": 50},
        "baseline": {"max_train_vectors": 400, "gamma_grid": [0.5, 2.0], "nu_grid": [0.1, 0.2]},
        "rf": {"forest": {"n_trees": 10}, "codebook_m": 20, "train_size": 56, "folds": 3},
        "baseline_min_duration_ms": 360}))
    suite, models = tmp_path / "suite", tmp_path / "models"
    assert cli_main(["synth", "--config", str(cfg), "--out", str(suite)]) == 0
    for det in ("markov", "bow", "baseline"):
        assert cli_main(["train", det, "--config", str(cfg), "--manifest", str(suite),
                         "--archetype", "BurstyUserDriven",
                         "--out", str(models / "BurstyUserDriven" / f"{det}.model")]) == 0
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        assert cli_main(["evaluate", "--config", str(cfg), "--manifest", str(suite),
                         "--models-dir", str(models), "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    same = names == sorted(p.name for p in outs[1].iterdir()) and all(
        (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    csvs = [n for n in names if n.endswith(".csv")]
    ok = same and len(csvs) >= 5
    report(9, ok, f"{len(names)} output files ({', '.join(names)}) byte-identical across reruns")
    assert ok
