"""Controlled drift injection: baseline, covariate, mixed and pure-concept
scenarios over a windowed dataset.

Feature noise and label flips draw from separate random streams. Each stream
is keyed by (seed, window index, purpose[, feature]), so the feature values a
scenario produces depend on ``noise_seed`` alone and a covariate run and a
mixed run with the same ``noise_seed`` see bit-identical features.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, MissingLabels, ScheduleMismatch, UnknownTargetFeature
from .ingest import UNLABELED, RecordBatch, WindowedDataset

SCENARIOS = ("baseline", "covariate", "mixed", "pure_concept")
SCENARIO_ALIASES = {"pure": "pure_concept"}

# Per monitoring window 1..4, then the plateau used for window 5 onwards.
COVARIATE_SIGMA = (0.30, 0.60, 1.00, 1.50, 2.00)
MIXED_FLIP_RATE = (0.02, 0.04, 0.08, 0.12, 0.20)
PURE_FLIP_RATE = (0.03, 0.06, 0.10, 0.15, 0.25)
DEFAULT_TARGET_FEATURES = ("annual_income", "dti", "revol_util")

RNG_ALGORITHM = "numpy.random.Generator(PCG64) seeded by SeedSequence; normals via Generator.standard_normal"
_PURPOSE_NOISE = 1
_PURPOSE_FLIP = 2


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def derived_rng(seed: int, window_index: int, purpose: int, name: str = "") -> np.random.Generator:
    """Independent generator for one (seed, window, purpose, name) combination."""
    if seed < 0:
        raise ConfigError("seeds must be non-negative integers")
    entropy = [int(seed), int(window_index), purpose, _name_key(name)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def _expand(rows: Sequence[float], n: int) -> tuple[float, ...]:
    return tuple(rows[min(k, len(rows) - 1)] for k in range(n))


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    sigma_schedule: tuple[float, ...]
    flip_schedule: tuple[float, ...]
    target_features: tuple[str, ...] = DEFAULT_TARGET_FEATURES
    noise_seed: int = 0
    flip_seed: int = 0
    # which window's standard deviation scales sigma: "window" or "reference"
    sigma_basis: str = "window"

    def __post_init__(self):
        kind = SCENARIO_ALIASES.get(self.kind, self.kind)
        if kind not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "sigma_schedule", tuple(float(s) for s in self.sigma_schedule))
        object.__setattr__(self, "flip_schedule", tuple(float(r) for r in self.flip_schedule))
        object.__setattr__(self, "target_features", tuple(self.target_features))
        if len(self.sigma_schedule) != len(self.flip_schedule):
            raise ConfigError("sigma and flip schedules differ in length")
        if any(s < 0 for s in self.sigma_schedule):
            raise ConfigError("sigma values must be non-negative")
        if any(not 0 <= r <= 1 for r in self.flip_schedule):
            raise ConfigError("flip rates must lie in [0, 1]")
        if self.sigma_basis not in ("window", "reference"):
            raise ConfigError("sigma_basis must be 'window' or 'reference'")
        if kind in ("baseline", "pure_concept") and any(self.sigma_schedule):
            raise ConfigError(f"{kind} scenario cannot perturb features")
        if kind in ("baseline", "covariate") and any(self.flip_schedule):
            raise ConfigError(f"{kind} scenario cannot flip labels")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sigma_schedule": list(self.sigma_schedule),
            "flip_schedule": list(self.flip_schedule),
            "target_features": list(self.target_features),
            "noise_seed": self.noise_seed,
            "flip_seed": self.flip_seed,
            "sigma_basis": self.sigma_basis,
        }


def scenario_schedule(
    kind: str,
    monitoring_window_count: int,
    *,
    target_features: Sequence[str] = DEFAULT_TARGET_FEATURES,
    noise_seed: int = 0,
    flip_seed: int = 0,
    sigma_basis: str = "window",
) -> ScenarioSpec:
    """Default injection schedule for ``kind`` over ``n`` monitoring windows."""
    n = monitoring_window_count
    if n < 1:
        raise ConfigError("need at least one monitoring window")
    kind = SCENARIO_ALIASES.get(kind, kind)
    zeros = (0.0,) * n
    sigma = _expand(COVARIATE_SIGMA, n) if kind in ("covariate", "mixed") else zeros
    if kind == "mixed":
        flips = _expand(MIXED_FLIP_RATE, n)
    elif kind == "pure_concept":
        flips = _expand(PURE_FLIP_RATE, n)
    else:
        flips = zeros
    return ScenarioSpec(
        kind=kind,
        sigma_schedule=sigma,
        flip_schedule=flips,
        target_features=tuple(target_features),
        noise_seed=noise_seed,
        flip_seed=flip_seed,
        sigma_basis=sigma_basis,
    )


def inject_covariate(
    window: RecordBatch,
    sigma: float,
    target_features: Sequence[str],
    noise_seed: int,
    window_index: int,
    *,
    scale: Mapping[str, float] | None = None,
) -> RecordBatch:
    """Add ``N(0, (sigma * s_f)^2)`` noise to each target feature.

    ``s_f`` is the feature's standard deviation in this window before
    perturbation unless ``scale`` supplies it. Noise is drawn in canonical
    (timestamp, id) order. Labels are not read.
    """
    unknown = [f for f in target_features if f not in window.features]
    if unknown:
        raise UnknownTargetFeature(f"target features not in data: {unknown}")
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    if sigma == 0 or len(window) == 0:
        return window
    order = window.canonical_order()
    perturbed = {}
    for name in target_features:
        col = window.features[name]
        s_f = float(np.std(col)) if scale is None else float(scale[name])
        draws = derived_rng(noise_seed, window_index, _PURPOSE_NOISE, name).standard_normal(len(col))
        noise = np.empty_like(col)
        noise[order] = draws
        perturbed[name] = col + noise * (sigma * s_f)
    return window.replace(features=perturbed)


def flip_count(rate: float, n: int) -> int:
    return round_half_away(rate * n)


def flip_labels(window: RecordBatch, rate: float, flip_seed: int, window_index: int) -> RecordBatch:
    """Invert exactly ``round(rate * n)`` labels chosen without replacement."""
    if not 0 <= rate <= 1:
        raise ConfigError("flip rate must lie in [0, 1]")
    if len(window) == 0 or rate == 0:
        return window
    if window.labels is None or (window.labels == UNLABELED).any():
        raise MissingLabels("label flipping needs every record labeled")
    n = len(window)
    k = flip_count(rate, n)
    order = window.canonical_order()
    chosen = derived_rng(flip_seed, window_index, _PURPOSE_FLIP).choice(n, size=k, replace=False)
    labels = window.labels.copy()
    idx = order[chosen]
    labels[idx] = 1 - labels[idx]
    return window.replace(labels=labels)


@dataclass
class InjectionManifest:
    spec: ScenarioSpec
    flip_counts: list[int] = field(default_factory=list)
    domain_violations: list[dict[str, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scenario": self.spec.to_dict(),
            "rng": RNG_ALGORITHM,
            "numpy_version": np.__version__,
            "flip_counts": list(self.flip_counts),
            "domain_violations": list(self.domain_violations),
        }


def apply_scenario(dataset: WindowedDataset, spec: ScenarioSpec) -> tuple[WindowedDataset, InjectionManifest]:
    """Perturb every monitoring window per ``spec``; window 0 is left alone.

    Features are perturbed before labels are flipped. A value is counted as a
    domain violation when noise pushes it below zero in a feature whose
    unperturbed window values were all non-negative (values are not clamped).
    """
    monitoring = dataset.monitoring
    if not monitoring:
        raise ScheduleMismatch("dataset has no monitoring windows")
    if len(spec.sigma_schedule) != len(monitoring):
        raise ScheduleMismatch(
            f"schedule covers {len(spec.sigma_schedule)} windows, dataset has {len(monitoring)}"
        )
    ref = dataset.reference.records
    scale = None
    if spec.sigma_basis == "reference" and any(spec.sigma_schedule):
        missing = [f for f in spec.target_features if f not in ref.features]
        if missing:
            raise UnknownTargetFeature(f"target features not in data: {missing}")
        scale = {f: float(np.std(ref.features[f])) for f in spec.target_features}

    manifest = InjectionManifest(spec)
    batches = [ref]
    for k, window in enumerate(monitoring):
        batch = window.records
        sigma = spec.sigma_schedule[k]
        rate = spec.flip_schedule[k]
        perturbed = inject_covariate(
            batch, sigma, spec.target_features, spec.noise_seed, window.index, scale=scale
        ) if sigma else batch
        violations = {}
        if sigma:
            for f in spec.target_features:
                before = batch.features[f]
                if len(before) and before.min() >= 0:
                    violations[f] = int((perturbed.features[f] < 0).sum())
        perturbed = flip_labels(perturbed, rate, spec.flip_seed, window.index)
        manifest.flip_counts.append(flip_count(rate, len(batch)) if rate else 0)
        manifest.domain_violations.append(violations)
        batches.append(perturbed)
    return dataset.with_batches(batches), manifest
