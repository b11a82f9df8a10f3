"""Evaluation harness: scenario runs, deltas, structural verifications and
report emission."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, IoFailure, ScheduleMismatch, WindowCountMismatch
from .ingest import (
    UNLABELED,
    IngestReport,
    RecordBatch,
    SchemaMapping,
    WindowedDataset,
    WindowPolicy,
    impute_missing,
    load_records,
    partition_windows,
    reference_means,
)
from .inject import DEFAULT_TARGET_FEATURES, SCENARIOS, ScenarioSpec, apply_scenario, scenario_schedule
from .monitor import CumulativeState, GovernanceAlert, MonitorConfig, generate_alert
from .proxies import DEFAULT_BIN_COUNT, RawProxyValues, ReferenceProfile, build_reference_profile, compute_window_metrics
from .refmodel import TrainingConfig, fit_reference

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
DELTA_METRICS = ("score_psi", "feature_psi_aggregate", "entropy", "confidence_ks", "composite")


def config_hash(config: MonitorConfig) -> str:
    text = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class PreparedData:
    dataset: WindowedDataset
    report: IngestReport
    means: dict[str, float]
    mapping: SchemaMapping | None = None


def prepare_windows(records: RecordBatch, policy: WindowPolicy, report: IngestReport | None = None) -> PreparedData:
    """Partition, then impute every window with the reference window's means."""
    report = report or IngestReport(rows_read=len(records))
    dataset = partition_windows(records, policy)
    means = reference_means(dataset.reference.records)
    batches = []
    totals = {name: 0 for name in records.feature_names}
    for w in dataset.windows:
        filled, counts = impute_missing(w.records, means)
        for name, c in counts.items():
            totals[name] += c
        batches.append(filled)
    report.imputed_counts = totals
    return PreparedData(dataset.with_batches(batches), report, means)


def prepare_dataset(path, mapping: SchemaMapping, policy: WindowPolicy) -> PreparedData:
    records, report = load_records(path, mapping)
    prepared = prepare_windows(records, policy, report)
    prepared.mapping = mapping
    return prepared


def build_profile(
    prepared: PreparedData,
    *,
    model_features: Sequence[str] | None = None,
    monitored_features: Sequence[str] | None = None,
    bin_count: int = DEFAULT_BIN_COUNT,
    feature_aggregate: str = "mean",
    confidence_mode: str = "folded",
    training: TrainingConfig = TrainingConfig(),
) -> ReferenceProfile:
    """Fit the scorer on window 0 and freeze the comparison baseline."""
    dataset = prepared.dataset
    ref = dataset.reference.records
    names = list(ref.feature_names)
    model_features = list(model_features or names)
    monitored_features = list(monitored_features or names)
    scorer = fit_reference(ref, model_features, training)
    context = {
        "window_policy": dataset.policy.to_dict(),
        "window_origin": str(dataset.origin),
        "reference_window": [str(dataset.reference.start), str(dataset.reference.end)],
        "imputation_means": dict(prepared.means),
    }
    if prepared.mapping is not None:
        context["schema"] = prepared.mapping.to_dict()
    return build_reference_profile(
        ref,
        scorer,
        monitored_features,
        bin_count,
        feature_aggregate=feature_aggregate,
        confidence_mode=confidence_mode,
        context=context,
    )


@dataclass
class ScenarioRun:
    kind: str
    window_indices: list[int]
    window_starts: list[str]
    window_sizes: list[int]
    default_rates: list[float | None]
    metrics: list[RawProxyValues | None]
    alerts: list[GovernanceAlert | None]
    final_state: CumulativeState
    manifest: dict = field(default_factory=dict)

    def composites(self) -> list[float | None]:
        return [None if a is None else a.composite for a in self.alerts]

    def metric_series(self, metric: str) -> list[float | None]:
        if metric == "composite":
            return self.composites()
        return [None if m is None else m.label_free_items()[metric] for m in self.metrics]

    def to_dict(self) -> dict:
        return {
            "scenario": self.kind,
            "windows": [
                {
                    "window_index": idx,
                    "window_start": start,
                    "records": size,
                    "default_rate": rate,
                    "metrics": None if m is None else m.to_dict(),
                    "alert": None if a is None else a.to_dict(),
                }
                for idx, start, size, rate, m, a in zip(
                    self.window_indices,
                    self.window_starts,
                    self.window_sizes,
                    self.default_rates,
                    self.metrics,
                    self.alerts,
                )
            ],
            "cumulative": self.final_state.to_dict(),
            "manifest": self.manifest,
        }


def _default_rate(batch: RecordBatch) -> float | None:
    if batch.labels is None:
        return None
    known = batch.labels[batch.labels != UNLABELED]
    return float(known.mean()) if known.size else None


def monitor_windows(
    windows, profile: ReferenceProfile, config: MonitorConfig, state: CumulativeState | None = None
):
    """Metrics and alerts for each window in order.

    Empty windows yield ``None`` for both and leave the cumulative state as is.
    """
    state = CumulativeState() if state is None else state
    metrics, alerts = [], []
    for w in windows:
        if w.empty:
            metrics.append(None)
            alerts.append(None)
            continue
        raw = compute_window_metrics(profile, w.records)
        alert, state = generate_alert(w.index, raw, config, state)
        metrics.append(raw)
        alerts.append(alert)
    return metrics, alerts, state


def run_scenario(
    dataset: WindowedDataset,
    spec: ScenarioSpec,
    profile: ReferenceProfile,
    config: MonitorConfig,
) -> ScenarioRun:
    """Inject ``spec`` and monitor every monitoring window against ``profile``."""
    n = len(dataset.monitoring)
    if len(spec.sigma_schedule) != n:
        raise ScheduleMismatch(f"schedule covers {len(spec.sigma_schedule)} windows, dataset has {n}")
    injected, injection = apply_scenario(dataset, spec)
    windows = injected.monitoring
    metrics, alerts, state = monitor_windows(windows, profile, config)
    return ScenarioRun(
        kind=spec.kind,
        window_indices=[w.index for w in windows],
        window_starts=[str(w.start) for w in windows],
        window_sizes=[len(w.records) for w in windows],
        default_rates=[_default_rate(w.records) for w in windows],
        metrics=metrics,
        alerts=alerts,
        final_state=state,
        manifest={
            "injection": injection.to_dict(),
            "config_sha256": config_hash(config),
            "dataset": dataset.fingerprint(),
        },
    )


@dataclass
class DeltaReport:
    scenario: str
    window_indices: list[int]
    deltas: list[dict[str, float] | None]
    ranges: dict[str, tuple[float, float] | None]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "baseline": "baseline",
            "windows": [
                {"window_index": i, "deltas": d} for i, d in zip(self.window_indices, self.deltas)
            ],
            "ranges": {k: None if v is None else list(v) for k, v in self.ranges.items()},
        }


def compute_deltas(injected: ScenarioRun, baseline: ScenarioRun) -> DeltaReport:
    """Injected minus baseline, per window and metric."""
    if injected.window_indices != baseline.window_indices:
        raise WindowCountMismatch(
            f"runs cover different windows: {injected.window_indices} vs {baseline.window_indices}"
        )
    series = {m: (injected.metric_series(m), baseline.metric_series(m)) for m in DELTA_METRICS}
    deltas = []
    for k in range(len(injected.window_indices)):
        if injected.metrics[k] is None or baseline.metrics[k] is None:
            deltas.append(None)
            continue
        deltas.append({m: series[m][0][k] - series[m][1][k] for m in DELTA_METRICS})
    ranges = {}
    for m in DELTA_METRICS:
        vals = [d[m] for d in deltas if d is not None]
        ranges[m] = (min(vals), max(vals)) if vals else None
    return DeltaReport(injected.kind, list(injected.window_indices), deltas, ranges)


@dataclass
class VerificationResult:
    name: str
    passed: bool
    max_discrepancy: float
    per_window: list[dict]

    def to_dict(self) -> dict:
        return {
            "check": self.name,
            "passed": self.passed,
            "max_abs_discrepancy": self.max_discrepancy,
            "per_window": self.per_window,
        }


def _label_free(run: ScenarioRun, k: int) -> dict[str, float] | None:
    if run.metrics[k] is None:
        return None
    items = run.metrics[k].label_free_items()
    items["composite"] = run.alerts[k].composite
    return items


def _exact_match(name: str, a: ScenarioRun, b: ScenarioRun) -> VerificationResult:
    if a.window_indices != b.window_indices:
        return VerificationResult(name, False, math.inf, [{"error": "window mismatch"}])
    worst = 0.0
    detail = []
    for k, idx in enumerate(a.window_indices):
        va, vb = _label_free(a, k), _label_free(b, k)
        if va is None and vb is None:
            detail.append({"window_index": idx, "max_abs_discrepancy": 0.0, "absent": True})
            continue
        if va is None or vb is None or set(va) != set(vb):
            gap = math.inf
        else:
            gap = max(abs(va[m] - vb[m]) if va[m] != vb[m] else 0.0 for m in va)
        worst = max(worst, gap)
        detail.append({"window_index": idx, "max_abs_discrepancy": gap})
    return VerificationResult(name, worst == 0.0, worst, detail)


def verify_label_blindness(covariate: ScenarioRun, mixed: ScenarioRun) -> VerificationResult:
    """Covariate and mixed runs sharing a noise seed must agree exactly on
    every label-free metric."""
    return _exact_match("label_blindness", covariate, mixed)


def verify_pure_concept_blindspot(pure: ScenarioRun, baseline: ScenarioRun) -> VerificationResult:
    """Label-only drift must leave every label-free metric at its baseline value."""
    return _exact_match("pure_concept_blindspot", pure, baseline)


@dataclass
class Evaluation:
    runs: dict[str, ScenarioRun]
    deltas: dict[str, DeltaReport]
    verifications: list[VerificationResult]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verifications)


def evaluate(
    dataset: WindowedDataset,
    profile: ReferenceProfile,
    config: MonitorConfig,
    *,
    noise_seed: int = 0,
    flip_seed: int = 0,
    target_features: Sequence[str] = DEFAULT_TARGET_FEATURES,
    sigma_basis: str = "window",
) -> Evaluation:
    """All four scenarios, three delta tables and both structural checks."""
    n = len(dataset.monitoring)
    runs = {}
    for kind in SCENARIOS:
        spec = scenario_schedule(
            kind,
            n,
            target_features=target_features,
            noise_seed=noise_seed,
            flip_seed=flip_seed,
            sigma_basis=sigma_basis,
        )
        runs[kind] = run_scenario(dataset, spec, profile, config)
    base = runs["baseline"]
    deltas = {k: compute_deltas(runs[k], base) for k in ("covariate", "mixed", "pure_concept")}
    checks = [
        verify_label_blindness(runs["covariate"], runs["mixed"]),
        verify_pure_concept_blindspot(runs["pure_concept"], base),
    ]
    return Evaluation(runs, deltas, checks)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _finite(value):
    """JSON has no infinity; report unbounded discrepancies as strings."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    return value


def report_body(
    runs: Mapping[str, ScenarioRun],
    deltas: Mapping[str, DeltaReport],
    verifications: Sequence[VerificationResult],
    *,
    config: MonitorConfig | None = None,
    extra: Mapping | None = None,
) -> dict:
    if not runs:
        raise ConfigError("a report needs at least one scenario run")
    body = {
        "runs": {k: r.to_dict() for k, r in runs.items()},
        "deltas": {k: d.to_dict() for k, d in deltas.items()},
        "verifications": [v.to_dict() for v in verifications],
    }
    if config is not None:
        body["config"] = config.to_dict()
        body["config_sha256"] = config_hash(config)
    if extra:
        body.update(extra)
    return _finite(body)


def dump_body(body: Mapping) -> str:
    return json.dumps(body, sort_keys=True, indent=2, default=_json_default, allow_nan=False)


def emit_report(
    runs: Mapping[str, ScenarioRun],
    deltas: Mapping[str, DeltaReport],
    verifications: Sequence[VerificationResult],
    out: str | Path,
    *,
    config: MonitorConfig | None = None,
    extra: Mapping | None = None,
    csv_dir: str | Path | None = None,
    representative_window: int | None = None,
) -> dict:
    """Write the JSON report (and optionally CSV tables); return the document.

    ``generated_at`` sits outside ``body`` so identical inputs give an
    identical body and ``body_sha256``.
    """
    body = report_body(runs, deltas, verifications, config=config, extra=extra)
    text = dump_body(body)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "body_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "body": body,
    }
    try:
        Path(out).write_text(
            json.dumps(doc, sort_keys=True, indent=2, default=_json_default, allow_nan=False) + "\n",
            encoding="utf-8",
        )
        if csv_dir is not None:
            write_tables(runs, deltas, csv_dir, representative_window=representative_window)
    except OSError as exc:
        raise IoFailure(f"cannot write report: {exc}") from None
    return doc


WINDOW_COLUMNS = [
    "scenario", "window_index", "window_start", "records", "default_rate",
    "score_psi", "feature_psi", "entropy", "confidence_ks",
    "composite", "severity", "cumulative_wealth",
]
COMPARISON_COLUMNS = [
    "scenario", "window_index", "score_psi", "feature_psi", "entropy",
    "confidence_ks", "composite", "severity",
]
DELTA_COLUMNS = ["scenario"] + [f"{m}_delta_{end}" for m in DELTA_METRICS for end in ("min", "max")]


def _blank(v):
    return "" if v is None else v


def write_tables(
    runs: Mapping[str, ScenarioRun],
    deltas: Mapping[str, DeltaReport],
    csv_dir: str | Path,
    *,
    representative_window: int | None = None,
) -> list[Path]:
    """Flat tables: per-window metrics, one-window scenario comparison, delta ranges."""
    out = Path(csv_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "window_metrics.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WINDOW_COLUMNS)
        for kind, run in runs.items():
            for k, idx in enumerate(run.window_indices):
                m, a = run.metrics[k], run.alerts[k]
                w.writerow([
                    kind, idx, run.window_starts[k], run.window_sizes[k], _blank(run.default_rates[k]),
                    *([m.score_psi, m.feature_psi_aggregate, m.entropy, m.confidence_ks] if m else [""] * 4),
                    *([a.composite, a.severity.label, a.cumulative_wealth] if a else [""] * 3),
                ])
    written.append(path)

    first = next(iter(runs.values()))
    if representative_window is None:
        # fifth monitoring window when available, else the last one
        pos = min(4, len(first.window_indices) - 1)
    else:
        pos = first.window_indices.index(representative_window)
    path = out / "scenario_comparison.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for kind, run in runs.items():
            m, a = run.metrics[pos], run.alerts[pos]
            w.writerow([
                kind, run.window_indices[pos],
                *([m.score_psi, m.feature_psi_aggregate, m.entropy, m.confidence_ks] if m else [""] * 4),
                *([a.composite, a.severity.label] if a else [""] * 2),
            ])
    written.append(path)

    path = out / "delta_ranges.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DELTA_COLUMNS)
        for kind, report in deltas.items():
            row = [kind]
            for m in DELTA_METRICS:
                rng = report.ranges[m]
                row += ["", ""] if rng is None else list(rng)
            w.writerow(row)
    written.append(path)
    return written
