import numpy as np
import pytest

from hmdbench.experiment import (ExperimentConfig, detection_rates, fp_rates, latencies,
                                 report_bundle, split_counts)


def test_split_counts():
    assert split_counts(10, (0.4, 0.3, 0.3)) == (4, 3, 3)
    assert split_counts(3, (0.4, 0.3, 0.3)) == (1, 1, 1)
    with pytest.raises(ValueError):
        split_counts(2, (0.4, 0.3, 0.3))


def test_config_roundtrip_and_validation():
    cfg = ExperimentConfig(seeds=(1, 2), detectors=("bow",), rf=None)
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError, match="unknown config section"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"detectors": ["svm"]})


def rec(det, cid, flagged, total, overhead=1.0, scores=(0.1,), lat=None):
    kind = None if cid is None else cid.rsplit("-", 2)[0]
    r = {"detector": det, "seed": 0, "archetype": "A", "config_id": cid, "kind": kind,
         "size": None, "delay": None, "duration_ms": 400.0, "overhead": overhead,
         "flagged": flagged, "total": total, "scores": np.asarray(scores), "step_ms": 1500.0,
         "trace_id": f"A/{cid}"}
    if cid is not None:
        r["latencies"] = lat or [None]
        r["interval_starts"] = [0.0]
    return r


def test_reductions_and_bundle():
    records = [rec("bow", None, 2, 10, scores=(0.0, 0.1)),
               rec("bow", "Ddos-s1-H", 3, 4, scores=(0.5, 0.6), lat=[1500.0]),
               rec("bow", "Ddos-s1-H", 4, 4, overhead=1.5)]
    assert detection_rates(records, "bow") == {(0, "A", "Ddos-s1-H"): 0.75}
    assert detection_rates(records, "bow", 1.5) == {(0, "A", "Ddos-s1-H"): 1.0}
    assert fp_rates(records, "bow") == {(0, "A"): 0.2}
    lat, missed = latencies(records, "bow")
    assert list(lat) == [1500.0] and missed == 0
    files = report_bundle(records)
    assert {"roc.csv", "auc_summary.csv", "operating_range.csv", "ttd.csv",
            "heatmap.svg"} <= set(files)
    assert "1.0" in files["auc_summary.csv"]
