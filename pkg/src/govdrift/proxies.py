"""Label-free proxy metrics computed against a frozen reference profile.

Four monitors are supported: score-distribution PSI, feature PSI, normalized
prediction entropy and a two-sample KS statistic on prediction confidence.
None of them reads labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, EmptyReferenceWindow, EmptySample, EmptyWindow, IoFailure
from .ingest import RecordBatch
from .refmodel import ReferenceScorer, score

PROFILE_SCHEMA_VERSION = 1
DEFAULT_BIN_COUNT = 10
PROPORTION_FLOOR = 1e-6
ENTROPY_CLAMP = 1e-12
MAX_REFERENCE_CONFIDENCES = 100_000

FEATURE_AGGREGATES = ("mean", "max")
CONFIDENCE_MODES = ("folded", "raw")


@dataclass(frozen=True)
class BinProfile:
    """Quantile bins over one reference variable.

    ``edges`` are the interior boundaries; bin ``i`` is ``(edges[i-1], edges[i]]``
    with the outer bins open to -inf and +inf. A degenerate profile has no
    edges and a single bin holding everything.
    """

    edges: tuple[float, ...]
    proportions: tuple[float, ...]
    degenerate: bool = False

    def __post_init__(self):
        if len(self.proportions) != len(self.edges) + 1:
            raise ValueError("need exactly len(edges) + 1 proportions")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("bin edges must be strictly increasing")
        if any(p < 0 for p in self.proportions):
            raise ValueError("proportions must be non-negative")

    @property
    def n_bins(self) -> int:
        return len(self.proportions)

    def assign(self, values) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges, dtype=np.float64), values, side="left")

    def proportions_of(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise EmptySample("cannot bin an empty sample")
        counts = np.bincount(self.assign(values), minlength=self.n_bins)
        return counts / values.size

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "proportions": list(self.proportions),
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "BinProfile":
        return cls(
            edges=tuple(float(e) for e in doc["edges"]),
            proportions=tuple(float(p) for p in doc["proportions"]),
            degenerate=bool(doc.get("degenerate", False)),
        )


def quantile_bins(values, bin_count: int = DEFAULT_BIN_COUNT) -> BinProfile:
    """Equal-frequency bins from a reference sample.

    Tied quantiles collapse into one edge, so heavily discrete variables end up
    with fewer than ``bin_count`` bins.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptySample("cannot build bins from an empty sample")
    if bin_count < 1:
        raise ValueError("bin_count must be positive")
    if values.min() == values.max():
        return BinProfile(edges=(), proportions=(1.0,), degenerate=True)
    qs = np.quantile(values, np.arange(1, bin_count) / bin_count)
    edges = tuple(float(e) for e in np.unique(qs))
    counts = np.bincount(
        np.searchsorted(np.asarray(edges), values, side="left"), minlength=len(edges) + 1
    )
    return BinProfile(edges=edges, proportions=tuple(float(c) for c in counts / values.size))


def psi_from_proportions(reference, current, floor: float = PROPORTION_FLOOR) -> float:
    """PSI between two proportion vectors over the same bins.

    Both vectors are floored at ``floor`` (no renormalization) before the log
    ratio.
    """
    p = np.maximum(np.asarray(reference, dtype=np.float64), floor)
    q = np.maximum(np.asarray(current, dtype=np.float64), floor)
    if p.shape != q.shape:
        raise ValueError("proportion vectors differ in length")
    return float(np.sum((p - q) * np.log(p / q)))


def psi(reference: BinProfile, current_sample) -> float:
    return psi_from_proportions(reference.proportions, reference.proportions_of(current_sample))


def ks_statistic(sample_a, sample_b) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup |F_a - F_b|``."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS needs two non-empty samples")
    points = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, points, side="right") / a.size
    cdf_b = np.searchsorted(b, points, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def normalized_entropy(scores) -> float:
    """Mean binary entropy of the scores, in bits (so within [0, 1])."""
    p = np.asarray(scores, dtype=np.float64)
    if p.size == 0:
        raise EmptySample("entropy of an empty sample")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("scores must lie in [0, 1]")
    p = np.clip(p, ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP)
    h = -(p * np.log(p) + (1.0 - p) * np.log1p(-p)) / math.log(2.0)
    return float(h.mean())


def confidences(scores, mode: str = "folded") -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if mode == "folded":
        return np.maximum(scores, 1.0 - scores)
    if mode == "raw":
        return scores
    raise ConfigError(f"unknown confidence mode {mode!r}")


def _stride_subsample(sorted_values: np.ndarray, limit: int) -> np.ndarray:
    if sorted_values.size <= limit:
        return sorted_values
    step = math.ceil(sorted_values.size / limit)
    return sorted_values[::step]


@dataclass(frozen=True)
class RawProxyValues:
    score_psi: float
    feature_psi_per_feature: Mapping[str, float]
    feature_psi_aggregate: float
    entropy: float
    confidence_ks: float

    def monitor_values(self) -> dict[str, float]:
        """Values the trigger thresholds apply to, keyed by monitor name."""
        return {
            "score_psi": self.score_psi,
            "feature_psi": self.feature_psi_aggregate,
            "entropy": self.entropy,
            "confidence_ks": self.confidence_ks,
        }

    def label_free_items(self) -> dict[str, float]:
        """Every label-free number this record carries, flattened."""
        out = {
            "score_psi": self.score_psi,
            "feature_psi_aggregate": self.feature_psi_aggregate,
            "entropy": self.entropy,
            "confidence_ks": self.confidence_ks,
        }
        for name, value in self.feature_psi_per_feature.items():
            out[f"feature_psi[{name}]"] = value
        return out

    def to_dict(self) -> dict:
        return {
            "score_psi": self.score_psi,
            "feature_psi": dict(self.feature_psi_per_feature),
            "feature_psi_aggregate": self.feature_psi_aggregate,
            "entropy": self.entropy,
            "confidence_ks": self.confidence_ks,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RawProxyValues":
        return cls(
            score_psi=float(doc["score_psi"]),
            feature_psi_per_feature=dict(doc.get("feature_psi", {})),
            feature_psi_aggregate=float(doc["feature_psi_aggregate"]),
            entropy=float(doc["entropy"]),
            confidence_ks=float(doc["confidence_ks"]),
        )


@dataclass(frozen=True, eq=False)
class ReferenceProfile:
    """Frozen comparison baseline built from the reference window.

    ``context`` carries whatever the CLI needs to reproduce ingestion later
    (schema mapping, window policy, imputation means); metric code ignores it.
    """

    score_bins: BinProfile
    feature_bins: Mapping[str, BinProfile]
    reference_confidences: np.ndarray
    scorer: ReferenceScorer
    monitored_features: tuple[str, ...]
    bin_count: int = DEFAULT_BIN_COUNT
    feature_aggregate: str = "mean"
    confidence_mode: str = "folded"
    reference_entropy: float = math.nan
    context: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.feature_aggregate not in FEATURE_AGGREGATES:
            raise ConfigError(f"feature_aggregate must be one of {FEATURE_AGGREGATES}")
        if self.confidence_mode not in CONFIDENCE_MODES:
            raise ConfigError(f"confidence_mode must be one of {CONFIDENCE_MODES}")
        missing = [f for f in self.monitored_features if f not in self.feature_bins]
        if missing:
            raise ValueError(f"no bins for monitored features {missing}")
        conf = np.array(self.reference_confidences, dtype=np.float64)
        conf.flags.writeable = False
        object.__setattr__(self, "reference_confidences", conf)
        object.__setattr__(self, "monitored_features", tuple(self.monitored_features))

    @property
    def degenerate_features(self) -> list[str]:
        return [f for f in self.monitored_features if self.feature_bins[f].degenerate]

    def to_dict(self) -> dict:
        return {
            "schema_version": PROFILE_SCHEMA_VERSION,
            "bin_count": self.bin_count,
            "feature_aggregate": self.feature_aggregate,
            "confidence_mode": self.confidence_mode,
            "monitored_features": list(self.monitored_features),
            "score_bins": self.score_bins.to_dict(),
            "feature_bins": {f: self.feature_bins[f].to_dict() for f in self.monitored_features},
            "reference_confidences": self.reference_confidences.tolist(),
            "reference_entropy": self.reference_entropy,
            "scorer": self.scorer.to_dict(),
            "context": dict(self.context),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ReferenceProfile":
        if doc.get("schema_version") != PROFILE_SCHEMA_VERSION:
            raise ConfigError(f"unsupported profile version {doc.get('schema_version')!r}")
        return cls(
            score_bins=BinProfile.from_dict(doc["score_bins"]),
            feature_bins={f: BinProfile.from_dict(b) for f, b in doc["feature_bins"].items()},
            reference_confidences=np.asarray(doc["reference_confidences"], dtype=np.float64),
            scorer=ReferenceScorer.from_dict(doc["scorer"]),
            monitored_features=tuple(doc["monitored_features"]),
            bin_count=int(doc.get("bin_count", DEFAULT_BIN_COUNT)),
            feature_aggregate=doc.get("feature_aggregate", "mean"),
            confidence_mode=doc.get("confidence_mode", "folded"),
            reference_entropy=float(doc.get("reference_entropy", math.nan)),
            context=dict(doc.get("context", {})),
        )

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write profile {path}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceProfile":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read profile {path}: {exc}") from None
        return cls.from_dict(doc)


def build_reference_profile(
    reference_window: RecordBatch,
    scorer: ReferenceScorer,
    monitored_features: Sequence[str],
    bin_count: int = DEFAULT_BIN_COUNT,
    *,
    feature_aggregate: str = "mean",
    confidence_mode: str = "folded",
    max_confidences: int = MAX_REFERENCE_CONFIDENCES,
    context: Mapping | None = None,
) -> ReferenceProfile:
    if len(reference_window) == 0:
        raise EmptyReferenceWindow("reference window has no records")
    scores = score(scorer, reference_window)
    feature_bins = {}
    for name in monitored_features:
        if name not in reference_window.features:
            raise ConfigError(f"monitored feature {name!r} is not in the data")
        feature_bins[name] = quantile_bins(reference_window.features[name], bin_count)
    conf = np.sort(confidences(scores, confidence_mode))
    return ReferenceProfile(
        score_bins=quantile_bins(scores, bin_count),
        feature_bins=feature_bins,
        reference_confidences=_stride_subsample(conf, max_confidences),
        scorer=scorer,
        monitored_features=tuple(monitored_features),
        bin_count=bin_count,
        feature_aggregate=feature_aggregate,
        confidence_mode=confidence_mode,
        reference_entropy=normalized_entropy(scores),
        context=dict(context or {}),
    )


def compute_window_metrics(profile: ReferenceProfile, window: RecordBatch) -> RawProxyValues:
    """Raw proxy values for one window against the frozen profile."""
    if len(window) == 0:
        raise EmptyWindow("window has no records")
    scores = score(profile.scorer, window)
    per_feature = {}
    for name in profile.monitored_features:
        if name not in window.features:
            raise ConfigError(f"window lacks monitored feature {name!r}")
        per_feature[name] = psi(profile.feature_bins[name], window.features[name])
    values = list(per_feature.values())
    if not values:
        aggregate = 0.0
    elif profile.feature_aggregate == "max":
        aggregate = max(values)
    else:
        aggregate = math.fsum(values) / len(values)
    return RawProxyValues(
        score_psi=psi(profile.score_bins, scores),
        feature_psi_per_feature=per_feature,
        feature_psi_aggregate=aggregate,
        entropy=normalized_entropy(scores),
        confidence_ks=ks_statistic(
            profile.reference_confidences, confidences(scores, profile.confidence_mode)
        ),
    )
