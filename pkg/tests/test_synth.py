import numpy as np
import pytest

from hmdbench.synth import (DelayClass, PayloadConfig, SuiteSpec, default_grid, gen_benign,
                            gen_suite, inject_payload, iter_suite, load_manifest, archetype_by_name)
from hmdbench.trace import PayloadKind, read_trace


def test_default_grid_has_66_unique_cells():
    grid = default_grid()
    assert len(grid) == 66
    assert len({c.config_id for c in grid}) == 66


def test_size_scales_footprint_linearly():
    grid = {c.config_id: c for c in default_grid()}
    s1, s8 = grid["FileSteal-s1-Z"], grid["FileSteal-s8-Z"]
    np.testing.assert_allclose(np.array(s8.footprint), 8 * np.array(s1.footprint))


def test_delay_classes_order_gaps():
    grid = {c.config_id: c for c in default_grid()}
    gaps = [grid[f"SmsSteal-s1-{d}"].gap_ms for d in "HMZ"]
    assert gaps[0] > gaps[1] > gaps[2] == 0.0


def test_benign_is_deterministic_and_non_negative():
    arch = archetype_by_name("BurstyUserDriven")
    a = gen_benign(arch, 5000, 3)
    assert a == gen_benign(arch, 5000, 3)
    assert a.samples.min() >= 0 and a.is_benign
    assert not np.array_equal(a.samples, gen_benign(arch, 5000, 4).samples)


def test_injection_adds_exact_footprint():
    arch = archetype_by_name("RegularNetwork")
    bg = gen_benign(arch, 20_000, 1)
    cfg = PayloadConfig(PayloadKind.Ddos, 1000.0, 3, DelayClass.Medium, (1, 2, 3, 4, 5, 6),
                        config_id="Ddos-s1-M")
    tr = inject_payload(bg, cfg, 0, start_ms=1000.5)
    added = (tr.samples - bg.samples).sum(0)
    np.testing.assert_allclose(added, 3 * np.arange(1, 7), rtol=1e-9)
    assert [(iv.start_ms, iv.end_ms) for iv in tr.label_intervals] == \
        [(1000.5, 2000.5), (4000.5, 5000.5), (7000.5, 8000.5)]
    heavy = inject_payload(bg, cfg.with_overhead(1.5), 0, start_ms=1000.5)
    np.testing.assert_allclose((heavy.samples - bg.samples).sum(0), 1.5 * added, rtol=1e-9)


def test_actions_past_the_end_are_dropped():
    bg = gen_benign(archetype_by_name("RegularNetwork"), 3000, 1)
    cfg = PayloadConfig(PayloadKind.Ddos, 1000.0, 5, DelayClass.Zero, (1,) * 6)
    assert len(inject_payload(bg, cfg, 0, start_ms=500.0).label_intervals) == 2


def test_invalid_payload_config():
    with pytest.raises(ValueError):
        PayloadConfig(PayloadKind.Ddos, 0.0, 1, DelayClass.Zero, (1,) * 6)
    with pytest.raises(ValueError):
        PayloadConfig(PayloadKind.Ddos, 10.0, 1, DelayClass.Zero, (1,) * 6, overhead_multiplier=0.5)


def test_payload_cells_share_one_background():
    spec = SuiteSpec(traces_per_cell=3, trace_len_ms=4000.0,
                     payload_grid=default_grid(4000.0)[:3])
    mal = [tr for e, tr in iter_suite(spec, [0]) if not e["benign"]]
    start = [tr.label_intervals[0].start_ms for tr in mal]
    assert len(set(start)) == 1
    # outside the payload intervals the traces are identical
    end = max(iv.end_ms for tr in mal for iv in tr.label_intervals)
    np.testing.assert_array_equal(mal[0].samples[int(end) + 1:], mal[1].samples[int(end) + 1:])


def test_gen_suite_writes_manifest(tmp_path):
    spec = SuiteSpec(traces_per_cell=3, trace_len_ms=4000.0,
                     payload_grid=default_grid(4000.0)[:2])
    manifest = gen_suite(spec, tmp_path)
    doc = load_manifest(tmp_path / "manifest.json")
    assert len(manifest) == len(doc["traces"]) == 3 * (3 + 2)
    entry = next(e for e in doc["traces"] if not e["benign"])
    tr = read_trace(tmp_path / entry["path"])
    assert tr.label_intervals and tr.app_id == entry["app_id"]
    assert SuiteSpec.from_dict(doc["suite"]).to_dict() == spec.to_dict()


def test_suite_spec_validation():
    with pytest.raises(ValueError, match="unknown"):
        SuiteSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        SuiteSpec.from_dict({"traces_per_cell": 0})
