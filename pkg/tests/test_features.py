import numpy as np
import pytest
import pywt

from hmdbench.features import (FeatureConfig, Wavelet, approx_operator, dwt_1d,
                               extract_features, min_window_samples)

from conftest import random_trace
from oracles import naive_dwt


def test_dwt_matches_naive_pyramid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.random(100)
        a, d = dwt_1d(x, Wavelet.Db3, 3)
        ra, rd = naive_dwt(x, "db3", 3)
        np.testing.assert_allclose(a, ra, atol=1e-9, rtol=0)
        for got, ref in zip(d, rd):
            np.testing.assert_allclose(got, ref, atol=1e-9, rtol=0)


@pytest.mark.parametrize("wavelet, name, mode, n", [
    (Wavelet.Db3, "db3", "symmetric", 100),
    (Wavelet.Db3, "db3", "symmetric", 151),
    (Wavelet.Haar, "haar", "symmetric", 64),
    (Wavelet.Db3, "db3", "periodization", 96),
    (Wavelet.Haar, "haar", "periodization", 96),
])
def test_dwt_matches_pywavelets(wavelet, name, mode, n):
    x = np.random.default_rng(n).normal(size=n)
    a, d = dwt_1d(x, wavelet, 3, mode)
    ref = pywt.wavedec(x, name, mode=mode, level=3)
    np.testing.assert_allclose(a, ref[0], atol=1e-12)
    for got, r in zip(d, ref[:0:-1]):
        np.testing.assert_allclose(got, r, atol=1e-12)


def test_db3_filters_match_reference():
    w = pywt.Wavelet("db3")
    np.testing.assert_allclose(Wavelet.Db3.dec_lo, w.dec_lo, atol=1e-15)
    np.testing.assert_allclose(Wavelet.Db3.dec_hi, w.dec_hi, atol=1e-15)


def test_approx_operator_is_linear_dwt():
    op = approx_operator(100, Wavelet.Db3, 3)
    x = np.random.default_rng(4).random(100)
    np.testing.assert_allclose(op @ x, dwt_1d(x, Wavelet.Db3, 3)[0], atol=1e-12)
    assert op.shape == (16, 100)


def test_feature_vectors_concatenate_channel_approximations(trace):
    fs = extract_features(trace, FeatureConfig())
    assert fs.vectors.shape == (7, 16 * 6)
    w = trace.samples[150:250]
    ref = np.concatenate([naive_dwt(w[:, c], "db3", 3)[0] for c in range(6)])
    np.testing.assert_allclose(fs.vectors[3], ref, atol=1e-9)
    np.testing.assert_array_equal(fs.starts_ms, np.arange(7) * 50.0)


def test_short_window_rejected():
    with pytest.raises(ValueError, match="too short"):
        extract_features(random_trace(period=5.0), FeatureConfig(state_window_ms=100.0))
    assert min_window_samples(Wavelet.Db3, 3) == 48


def test_trace_shorter_than_window_gives_no_segments():
    fs = extract_features(random_trace(n=60), FeatureConfig())
    assert len(fs) == 0 and fs.vectors.shape == (0, 96)


@pytest.mark.parametrize("kw", [dict(state_window_ms=40.0), dict(shift_step_ms=0.0),
                                dict(shift_step_ms=120.0), dict(levels=0)])
def test_invalid_feature_config(kw):
    with pytest.raises(ValueError):
        FeatureConfig(**kw)
