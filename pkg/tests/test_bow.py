import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmdbench.bow import BowConfig, grid_search_ocsvm, histogram, train_bow
from hmdbench.features import FeatureConfig
from hmdbench.preprocess import PreprocessConfig
from hmdbench.synth import archetype_by_name, gen_benign


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 300), st.integers(2, 40))
def test_histograms_sum_to_one(seed, n, bins):
    rng = np.random.default_rng(seed)
    states = rng.integers(0, bins, n)
    starts = np.arange(n) * 50.0
    win, h = histogram(states, starts, 1500.0, bins)
    np.testing.assert_allclose(h.sum(1), 1.0, atol=1e-12)
    assert len(win) == -(-n // 30)


def test_histogram_counts_by_start_time():
    win, h = histogram([0, 1, 1, 2], [0.0, 50.0, 1500.0, 1550.0], 1500.0, 3)
    np.testing.assert_array_equal(win, [0.0, 1500.0])
    np.testing.assert_allclose(h, [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])


def test_histogram_rejects_short_ttd():
    with pytest.raises(ValueError):
        histogram([0, 1], [0.0, 50.0], 20.0, 2)


def test_grid_search_picks_closest_fp():
    rng = np.random.default_rng(0)
    x = rng.dirichlet(np.ones(8), 200)
    val = rng.dirichlet(np.ones(8), 100)
    nu, gamma = grid_search_ocsvm(x, 0.2, (1.0, 10.0), nu_grid=(0.05, 0.2, 0.5), validation=val)
    assert nu in (0.05, 0.2, 0.5) and gamma in (1.0, 10.0)


def test_bow_flags_injected_activity():
    arch = archetype_by_name("ComputeIntensive")
    train = [gen_benign(arch, 30_000, s) for s in range(3)]
    val = [gen_benign(arch, 30_000, 10)]
    cfg = BowConfig(m=40, nu=0.1, gamma=10.0)
    model = train_bow(train, val, (PreprocessConfig(), FeatureConfig()), cfg)
    clean = gen_benign(arch, 30_000, 20)
    noisy = clean.replace(samples=clean.samples * 3.0)
    assert model.detect(noisy).flagged_fraction > model.detect(clean).flagged_fraction
    assert model.n_bins == 41
