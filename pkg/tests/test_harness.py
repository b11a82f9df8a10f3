import csv
import hashlib
import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from govdrift import synth
from govdrift.errors import WindowCountMismatch
from govdrift.harness import (
    COMPARISON_COLUMNS,
    DELTA_COLUMNS,
    WINDOW_COLUMNS,
    build_profile,
    compute_deltas,
    dump_body,
    emit_report,
    evaluate,
    monitor_windows,
    prepare_windows,
    run_scenario,
    verify_label_blindness,
)
from govdrift.ingest import RecordBatch, WindowPolicy
from govdrift.inject import scenario_schedule
from govdrift.monitor import MonitorConfig, Severity

CFG = MonitorConfig.preset("credit")
TARGETS = synth.TARGET_FEATURES


@pytest.fixture(scope="module")
def result(small_prepared, small_profile):
    return evaluate(small_prepared.dataset, small_profile, CFG, noise_seed=1, flip_seed=2, target_features=TARGETS)


def test_evaluation_shape(result, small_prepared):
    n = len(small_prepared.dataset.monitoring)
    assert set(result.runs) == {"baseline", "covariate", "mixed", "pure_concept"}
    assert set(result.deltas) == {"covariate", "mixed", "pure_concept"}
    assert [v.name for v in result.verifications] == ["label_blindness", "pure_concept_blindspot"]
    assert all(len(r.alerts) == n for r in result.runs.values())
    assert result.passed
    assert all(v.max_discrepancy == 0.0 for v in result.verifications)


def test_self_delta_is_zero(result):
    base = result.runs["baseline"]
    report = compute_deltas(base, base)
    assert all(v == 0.0 for d in report.deltas for v in d.values())


def test_pure_concept_deltas_zero_but_default_rate_moves(result):
    pure, base = result.runs["pure_concept"], result.runs["baseline"]
    assert all(v == 0.0 for d in result.deltas["pure_concept"].deltas for v in d.values())
    assert pure.default_rates != base.default_rates


def test_covariate_raises_feature_psi(result):
    d = result.deltas["covariate"]
    series = [row["feature_psi_aggregate"] for row in d.deltas]
    # sigma 0.3 on a few hundred records can land within sampling noise
    assert series[-1] > series[1] > 0
    assert d.ranges["feature_psi_aggregate"][1] > 0.1


def test_window_count_mismatch(result, small_prepared, small_profile):
    base = result.runs["baseline"]
    short = run_scenario(
        small_prepared.dataset.with_batches([w.records for w in small_prepared.dataset.windows]),
        scenario_schedule("baseline", len(base.window_indices)),
        small_profile,
        CFG,
    )
    short.window_indices = short.window_indices[:-1]
    with pytest.raises(WindowCountMismatch):
        compute_deltas(short, base)


def test_label_blindness_fails_with_different_noise(small_prepared, small_profile):
    ds = small_prepared.dataset
    n = len(ds.monitoring)
    cov = run_scenario(ds, scenario_schedule("covariate", n, target_features=TARGETS, noise_seed=1), small_profile, CFG)
    mix = run_scenario(ds, scenario_schedule("mixed", n, target_features=TARGETS, noise_seed=2), small_profile, CFG)
    check = verify_label_blindness(cov, mix)
    assert not check.passed and check.max_discrepancy > 0


def test_stationary_data_stays_quiet():
    # every year drawn from the same distribution
    prepared = prepare_windows(synth.generate(6000, 4, seed=3), WindowPolicy())
    profile = build_profile(prepared)
    metrics, alerts, _ = monitor_windows(prepared.dataset.monitoring, profile, CFG)
    for m, a in zip(metrics, alerts):
        assert m.score_psi < 0.1 and m.feature_psi_aggregate < 0.1 and m.confidence_ks < 0.1
        assert set(a.triggered) <= {"entropy"}


def test_empty_window_is_skipped(small_prepared, small_profile):
    ds = small_prepared.dataset
    empty = RecordBatch(ids=[], timestamps=[], features={f: [] for f in ds.reference.records.feature_names})
    batches = [w.records for w in ds.windows]
    batches[2] = empty
    holed = ds.with_batches(batches)
    metrics, alerts, state = monitor_windows(holed.monitoring, small_profile, CFG)
    assert metrics[1] is None and alerts[1] is None
    full_metrics, full_alerts, _ = monitor_windows(ds.monitoring, small_profile, CFG)
    assert len(state.history) == len(full_alerts) - 1
    assert metrics[0] == full_metrics[0] and metrics[2] == full_metrics[2]
    res = evaluate(holed, small_profile, CFG, target_features=TARGETS)
    assert res.passed
    assert res.deltas["covariate"].deltas[1] is None


def test_emit_report(tmp_path, result):
    out = tmp_path / "report.json"
    doc = emit_report(result.runs, result.deltas, result.verifications, out, config=CFG, csv_dir=tmp_path)
    on_disk = json.loads(out.read_text())
    assert on_disk == doc
    assert set(doc) == {"schema_version", "generated_at", "body_sha256", "body"}
    body = doc["body"]
    assert len(body["runs"]) == 4 and len(body["deltas"]) == 3 and len(body["verifications"]) == 2
    assert hashlib.sha256(dump_body(body).encode()).hexdigest() == doc["body_sha256"]
    for name, cols in [
        ("window_metrics.csv", WINDOW_COLUMNS),
        ("scenario_comparison.csv", COMPARISON_COLUMNS),
        ("delta_ranges.csv", DELTA_COLUMNS),
    ]:
        with (tmp_path / name).open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == cols
    with (tmp_path / "scenario_comparison.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["scenario"] for r in rows] == ["baseline", "covariate", "mixed", "pure_concept"]


def test_report_body_is_deterministic(tmp_path, small_prepared, small_profile):
    docs = []
    for k in range(2):
        res = evaluate(small_prepared.dataset, small_profile, CFG, noise_seed=4, flip_seed=4, target_features=TARGETS)
        docs.append(emit_report(res.runs, res.deltas, res.verifications, tmp_path / f"r{k}.json", config=CFG))
    assert docs[0]["body_sha256"] == docs[1]["body_sha256"]
    assert dump_body(docs[0]["body"]) == dump_body(docs[1]["body"])


def test_severity_rises_with_covariate_noise(result):
    sev = [a.severity for a in result.runs["covariate"].alerts]
    base = [a.severity for a in result.runs["baseline"].alerts]
    assert max(sev) >= Severity.HIGH
    assert all(s >= b for s, b in zip(sev, base))


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(
    seed=st.integers(0, 10_000),
    years=st.integers(2, 5),
    noise_seed=st.integers(0, 2**31),
    flip_seed=st.integers(0, 2**31),
    drift=st.sampled_from([0.0, 0.3]),
)
def test_structural_boundary_property(seed, years, noise_seed, flip_seed, drift):
    prepared = prepare_windows(synth.generate(400 * years, years, seed, drift=drift), WindowPolicy())
    profile = build_profile(prepared)
    res = evaluate(prepared.dataset, profile, CFG, noise_seed=noise_seed, flip_seed=flip_seed, target_features=TARGETS)
    assert res.passed
    assert all(v.max_discrepancy == 0.0 for v in res.verifications)
    assert not np.isnan([a.composite for r in res.runs.values() for a in r.alerts]).any()
