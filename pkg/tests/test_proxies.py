import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from govdrift.errors import ConfigError, EmptyReferenceWindow, EmptySample, EmptyWindow
from govdrift.ingest import RecordBatch
from govdrift.proxies import (
    BinProfile,
    ReferenceProfile,
    build_reference_profile,
    compute_window_metrics,
    confidences,
    ks_statistic,
    normalized_entropy,
    psi,
    psi_from_proportions,
    quantile_bins,
)
from govdrift.refmodel import score

finite = st.floats(-1e6, 1e6, allow_nan=False)
samples = st.lists(finite, min_size=1, max_size=40)
probs = st.lists(st.floats(0, 1), min_size=1, max_size=40)


# --- binning -------------------------------------------------------------

def test_uniform_scores_give_deciles():
    values = np.random.default_rng(0).uniform(size=20_000)
    bins = quantile_bins(values, 10)
    assert bins.n_bins == 10
    np.testing.assert_allclose(bins.proportions, 0.1, atol=1e-3)


def test_constant_feature_is_degenerate():
    bins = quantile_bins(np.full(50, 3.0))
    assert bins.degenerate and bins.edges == () and bins.proportions == (1.0,)
    assert psi(bins, [100.0, -5.0]) == 0.0


def test_proportions_sum_to_one():
    bins = quantile_bins(np.random.default_rng(1).normal(size=1000), 10)
    assert math.fsum(bins.proportions) == pytest.approx(1.0, abs=1e-15)


def test_tied_quantiles_collapse():
    values = np.array([0] * 70 + [1] * 20 + [2] * 10, dtype=float)
    bins = quantile_bins(values, 10)
    assert list(bins.edges) == sorted(set(bins.edges))
    assert bins.n_bins < 10
    assert bins.proportions == tuple(oracles.proportions(values.tolist(), list(bins.edges)))


def test_bin_profile_validation():
    with pytest.raises(ValueError):
        BinProfile(edges=(1.0, 1.0), proportions=(0.3, 0.3, 0.4))
    with pytest.raises(ValueError):
        BinProfile(edges=(1.0,), proportions=(1.0,))


# --- PSI -----------------------------------------------------------------

def test_psi_identical_is_zero():
    ref = np.arange(100, dtype=float)
    bins = quantile_bins(ref, 10)
    assert psi(bins, ref) == 0.0


def test_psi_two_bin_hand_value():
    # 0.25 ln 2 + 0.25 ln 1.5 = 0.25 ln 3
    assert psi_from_proportions([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.25 * math.log(3), abs=1e-12)
    assert psi_from_proportions([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.274653, abs=1e-6)


def test_psi_all_mass_in_one_bin_is_large_and_finite():
    p = [0.1] * 10
    q = [1.0] + [0.0] * 9
    value = psi_from_proportions(p, q)
    assert value == pytest.approx(oracles.psi(p, q), abs=1e-12)
    assert value > 2.0 and math.isfinite(value)


def test_psi_empty_sample():
    with pytest.raises(EmptySample):
        psi(quantile_bins([1.0, 2.0, 3.0]), [])


@settings(max_examples=200, deadline=None)
@given(ref=samples, cur=samples, bins=st.integers(1, 12))
def test_psi_matches_oracle(ref, cur, bins):
    profile = quantile_bins(ref, bins)
    expected = oracles.psi(profile.proportions, oracles.proportions(cur, list(profile.edges)))
    assert psi(profile, cur) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(ref=samples, cur=samples)
def test_psi_non_negative_and_symmetric(ref, cur):
    profile = quantile_bins(ref, 10)
    q = profile.proportions_of(cur)
    forward = psi_from_proportions(profile.proportions, q)
    assert forward >= 0
    assert forward == pytest.approx(psi_from_proportions(q, profile.proportions), abs=1e-12)
    floored_p = np.maximum(profile.proportions, 1e-6)
    floored_q = np.maximum(q, 1e-6)
    if np.array_equal(floored_p, floored_q):
        assert forward == 0.0


# --- KS ------------------------------------------------------------------

def test_ks_examples():
    assert ks_statistic([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0
    assert ks_statistic([1, 2, 3, 4], [5, 6, 7, 8]) == 1.0
    assert ks_statistic([1, 2, 3, 4], [2, 3, 4, 5]) == 0.25


def test_ks_empty():
    with pytest.raises(EmptySample):
        ks_statistic([], [1.0])


@settings(max_examples=200, deadline=None)
@given(a=samples, b=samples)
def test_ks_properties(a, b):
    value = ks_statistic(a, b)
    assert 0.0 <= value <= 1.0
    assert value == ks_statistic(b, a)
    assert ks_statistic(a, a) == 0.0
    assert value == pytest.approx(oracles.ks(a, b), abs=1e-12)


# --- entropy -------------------------------------------------------------

def test_entropy_examples():
    assert normalized_entropy([0.5] * 7) == 1.0
    assert normalized_entropy([0.0, 1.0, 1.0]) == pytest.approx(0.0, abs=1e-9)
    assert normalized_entropy([0.25] * 3) == pytest.approx(0.811278, abs=1e-6)


def test_entropy_rejects_bad_input():
    with pytest.raises(EmptySample):
        normalized_entropy([])
    with pytest.raises(ValueError):
        normalized_entropy([1.5])


@settings(max_examples=200, deadline=None)
@given(p=probs)
def test_entropy_bounds_and_oracle(p):
    value = normalized_entropy(p)
    assert 0.0 <= value <= 1.0
    assert value <= normalized_entropy([0.5] * len(p))
    assert value == pytest.approx(oracles.entropy(p), abs=1e-9)


def test_confidence_folding():
    np.testing.assert_array_equal(confidences([0.1, 0.5, 0.8]), [0.9, 0.5, 0.8])
    np.testing.assert_array_equal(confidences([0.1, 0.8], "raw"), [0.1, 0.8])
    with pytest.raises(ConfigError):
        confidences([0.1], "other")


# --- window metrics ------------------------------------------------------

def test_self_comparison(small_prepared, small_profile):
    ref = small_prepared.dataset.reference.records
    raw = compute_window_metrics(small_profile, ref)
    assert raw.score_psi == 0.0
    assert all(v == 0.0 for v in raw.feature_psi_per_feature.values())
    assert raw.feature_psi_aggregate == 0.0
    assert raw.confidence_ks == 0.0
    assert raw.entropy == pytest.approx(normalized_entropy(score(small_profile.scorer, ref)))
    assert raw.entropy > 0


def test_shifting_one_feature(small_prepared, small_profile):
    ref = small_prepared.dataset.reference.records
    col = ref.features["dti"]
    shifted = ref.replace(features={"dti": col + 5 * col.std()})
    raw = compute_window_metrics(small_profile, shifted)
    expected = oracles.psi(
        small_profile.feature_bins["dti"].proportions,
        oracles.proportions(shifted.features["dti"].tolist(), list(small_profile.feature_bins["dti"].edges)),
    )
    assert raw.feature_psi_per_feature["dti"] == pytest.approx(expected, abs=1e-9)
    assert raw.feature_psi_per_feature["dti"] > 5
    others = {k: v for k, v in raw.feature_psi_per_feature.items() if k != "dti"}
    assert all(v == 0.0 for v in others.values())


def test_feature_aggregate_max(small_prepared, small_profile):
    ref = small_prepared.dataset.reference.records
    col = ref.features["dti"]
    shifted = ref.replace(features={"dti": col + col.std()})
    doc = small_profile.to_dict()
    doc["feature_aggregate"] = "max"
    as_max = ReferenceProfile.from_dict(doc)
    mean_raw = compute_window_metrics(small_profile, shifted)
    max_raw = compute_window_metrics(as_max, shifted)
    assert max_raw.feature_psi_aggregate == max(mean_raw.feature_psi_per_feature.values())
    assert mean_raw.feature_psi_aggregate == pytest.approx(
        np.mean(list(mean_raw.feature_psi_per_feature.values()))
    )


def test_metrics_are_pure(small_prepared, small_profile):
    window = small_prepared.dataset.monitoring[0].records
    before = small_profile.to_dict()
    a = compute_window_metrics(small_profile, window)
    b = compute_window_metrics(small_profile, window)
    assert a == b
    assert small_profile.to_dict() == before


def test_empty_window_and_reference(small_profile):
    empty = RecordBatch(ids=[], timestamps=[], features={f: [] for f in small_profile.monitored_features})
    with pytest.raises(EmptyWindow):
        compute_window_metrics(small_profile, empty)
    with pytest.raises(EmptyReferenceWindow):
        build_reference_profile(empty, small_profile.scorer, small_profile.monitored_features)


def test_profile_json_roundtrip(tmp_path, small_prepared, small_profile):
    path = tmp_path / "profile.json"
    small_profile.save(path)
    loaded = ReferenceProfile.load(path)
    window = small_prepared.dataset.monitoring[1].records
    assert compute_window_metrics(loaded, window) == compute_window_metrics(small_profile, window)
    assert loaded.to_dict() == small_profile.to_dict()


def test_reference_confidences_subsampled(small_prepared, small_profile):
    ref = small_prepared.dataset.reference.records
    capped = build_reference_profile(
        ref, small_profile.scorer, small_profile.monitored_features, max_confidences=100
    )
    assert 50 <= len(capped.reference_confidences) <= 100
    assert np.all(np.diff(capped.reference_confidences) >= 0)
