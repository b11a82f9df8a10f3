"""Governance layer: triggers, composite score, severity, cumulative drift
score and recommended responses.

Everything here is a pure function of raw proxy values and a
:class:`MonitorConfig`, except :func:`update_cumulative`, which is a fold that
must be applied in window order.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import ConfigError, NoActiveMonitors
from .proxies import RawProxyValues

CONFIG_SCHEMA_VERSION = 1
MONITORS = ("score_psi", "feature_psi", "entropy", "confidence_ks")
# composite values are sums of float weights; keeps e.g. 0.6000000000000001 in the 0.60 band
BAND_TOLERANCE = 1e-9


class Severity(enum.IntEnum):
    NONE = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3
    CRITICAL = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Severity":
        try:
            return cls[text.upper()]
        except KeyError:
            raise ConfigError(f"unknown severity {text!r}") from None


DEFAULT_BANDS = (
    (0.60, Severity.LOW),
    (0.70, Severity.MEDIUM),
    (0.80, Severity.HIGH),
    (1.00, Severity.CRITICAL),
)


def _number(value) -> float:
    """Accept plain numbers or fraction strings such as ``"1/6"``."""
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"not a number: {value!r}") from None
    return float(value)


@dataclass(frozen=True)
class MonitorConfig:
    thresholds: Mapping[str, float] = field(
        default_factory=lambda: {
            "score_psi": 0.25,
            "feature_psi": 0.25,
            "entropy": 0.5,
            "confidence_ks": 0.15,
        }
    )
    weights: Mapping[str, float] = field(
        default_factory=lambda: {
            "score_psi": 1 / 6,
            "feature_psi": 1 / 3,
            "entropy": 1 / 4,
            "confidence_ks": 1 / 4,
        }
    )
    severity_bands: tuple[tuple[float, Severity], ...] = DEFAULT_BANDS
    cumulative_theta: float = 0.5
    betting_fraction: float = 1.0
    alert_wealth_threshold: float = 20.0
    wealth_floor: float = 0.01
    window_policy: str | None = None
    name: str = "credit"

    def __post_init__(self):
        for key in ("thresholds", "weights"):
            table = getattr(self, key)
            unknown = set(table) - set(MONITORS)
            if unknown:
                raise ConfigError(f"unknown monitors in {key}: {sorted(unknown)}")
        if set(self.thresholds) != set(self.weights):
            raise ConfigError("thresholds and weights must name the same monitors")
        if not self.weights:
            raise NoActiveMonitors("configuration enables no monitors")
        if any(not v > 0 for v in self.thresholds.values()):
            raise ConfigError("thresholds must be positive")
        if any(not v > 0 for v in self.weights.values()):
            raise ConfigError("weights must be positive")
        if not 0 < self.cumulative_theta < 1:
            raise ConfigError("cumulative_theta must lie in (0, 1)")
        if not 0 < self.betting_fraction <= 1:
            raise ConfigError("betting_fraction must lie in (0, 1]")
        if not self.alert_wealth_threshold > 1:
            raise ConfigError("alert_wealth_threshold must exceed 1")
        if not self.wealth_floor > 0:
            raise ConfigError("wealth_floor must be positive")
        cutoffs = [c for c, _ in self.severity_bands]
        if not cutoffs or cutoffs != sorted(cutoffs) or len(set(cutoffs)) != len(cutoffs):
            raise ConfigError("severity band cutoffs must be strictly increasing")
        if cutoffs[-1] < 1.0:
            raise ConfigError("the last severity band must reach composite 1.0")

    @property
    def monitors(self) -> tuple[str, ...]:
        return tuple(m for m in MONITORS if m in self.weights)

    def normalized_weights(self, active=None) -> dict[str, float]:
        active = self.monitors if active is None else [m for m in self.monitors if m in active]
        total = math.fsum(self.weights[m] for m in active)
        return {m: self.weights[m] / total for m in active}

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "name": self.name,
            "thresholds": {m: self.thresholds[m] for m in self.monitors},
            "weights": {m: self.weights[m] for m in self.monitors},
            "severity_bands": [[c, s.label] for c, s in self.severity_bands],
            "cumulative_theta": self.cumulative_theta,
            "betting_fraction": self.betting_fraction,
            "alert_wealth_threshold": self.alert_wealth_threshold,
            "wealth_floor": self.wealth_floor,
            "window_policy": self.window_policy,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MonitorConfig":
        if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported monitor config version {doc.get('schema_version')!r}")
        base = cls()
        kwargs = {}
        if "thresholds" in doc:
            kwargs["thresholds"] = {k: _number(v) for k, v in doc["thresholds"].items()}
        if "weights" in doc:
            kwargs["weights"] = {k: _number(v) for k, v in doc["weights"].items()}
        if "severity_bands" in doc:
            kwargs["severity_bands"] = tuple(
                (_number(c), Severity.parse(s)) for c, s in doc["severity_bands"]
            )
        for key in ("cumulative_theta", "betting_fraction", "alert_wealth_threshold", "wealth_floor"):
            if key in doc:
                kwargs[key] = _number(doc[key])
        if "window_policy" in doc:
            kwargs["window_policy"] = doc["window_policy"]
        if "name" in doc:
            kwargs["name"] = str(doc["name"])
        return replace(base, **kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "MonitorConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read monitor config {path}: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def preset(cls, name: str) -> "MonitorConfig":
        """Shipped configurations: ``credit`` (yearly windows) and ``fraud`` (30-day windows)."""
        try:
            text = resources.files("govdrift.presets").joinpath(f"{name}.json").read_text("utf-8")
        except FileNotFoundError:
            raise ConfigError(f"no preset named {name!r}") from None
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TriggerSet:
    triggered: frozenset[str]
    active: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "triggered", frozenset(self.triggered))
        object.__setattr__(self, "active", frozenset(self.active))
        if not self.triggered <= self.active:
            raise ValueError("triggered monitors must be active")

    def __contains__(self, item) -> bool:
        return item in self.triggered

    def __len__(self) -> int:
        return len(self.triggered)

    def sorted(self) -> list[str]:
        return [m for m in MONITORS if m in self.triggered]


def evaluate_triggers(raw: RawProxyValues | Mapping[str, float | None], config: MonitorConfig) -> TriggerSet:
    """A monitor fires when its value is strictly above its threshold.

    ``raw`` may also be a plain mapping of monitor name to value; a ``None`` or
    missing value makes that monitor inactive for the window.
    """
    values = raw.monitor_values() if isinstance(raw, RawProxyValues) else dict(raw)
    active = set()
    triggered = set()
    for m in config.monitors:
        value = values.get(m)
        if value is None or (isinstance(value, float) and math.isnan(value)):
            continue
        active.add(m)
        if value > config.thresholds[m]:
            triggered.add(m)
    return TriggerSet(frozenset(triggered), frozenset(active))


def composite_score(triggers: TriggerSet, config: MonitorConfig) -> float:
    """Weight of the triggered monitors divided by the weight of the active ones."""
    active = [m for m in config.monitors if m in triggers.active]
    if not active:
        raise NoActiveMonitors("no active monitors in this window")
    total = 0.0
    fired = 0.0
    for m in active:
        total += config.weights[m]
        if m in triggers.triggered:
            fired += config.weights[m]
    return fired / total


def assign_severity(composite: float, triggers: TriggerSet | None, config: MonitorConfig) -> Severity:
    # Default bands depend on the composite alone; ``triggers`` only guards
    # the none level (nothing fired means nothing to escalate).
    if composite <= 0 or (triggers is not None and not triggers.triggered):
        return Severity.NONE
    for cutoff, level in config.severity_bands:
        if composite <= cutoff + BAND_TOLERANCE:
            return level
    return config.severity_bands[-1][1]


@dataclass(frozen=True)
class CumulativeState:
    wealth: float = 1.0
    history: tuple[tuple[float, float, float], ...] = ()
    alert_active: bool = False

    def log_wealth(self) -> float:
        return math.log(self.wealth)

    def to_dict(self) -> dict:
        return {
            "wealth": self.wealth,
            "alert_active": self.alert_active,
            "history": [
                {"composite": c, "factor": f, "wealth": w} for c, f, w in self.history
            ],
        }


def betting_factor(composite: float, config: MonitorConfig) -> float:
    return max(config.wealth_floor, 1.0 + config.betting_fraction * (composite - config.cumulative_theta))


def update_cumulative(state: CumulativeState, composite: float, config: MonitorConfig) -> CumulativeState:
    """Multiply the running wealth by this window's betting factor."""
    factor = betting_factor(composite, config)
    wealth = state.wealth * factor
    return CumulativeState(
        wealth=wealth,
        history=state.history + ((composite, factor, wealth),),
        alert_active=wealth >= config.alert_wealth_threshold,
    )


@dataclass(frozen=True)
class ResponseProtocol:
    protocol_id: str
    action: str

    def to_dict(self) -> dict:
        return {"protocol_id": self.protocol_id, "action": self.action}


RESPONSES = {
    Severity.NONE: ResponseProtocol("no_action", "No action required."),
    Severity.LOW: ResponseProtocol(
        "increased_monitoring", "Increase monitoring frequency and track proxy trends."
    ),
    Severity.MEDIUM: ResponseProtocol(
        "increased_manual_review", "Raise the manual review rate for affected decisions."
    ),
    Severity.HIGH: ResponseProtocol(
        "conservative_policy_committee_review",
        "Switch to the conservative decision policy and convene model committee review.",
    ),
    Severity.CRITICAL: ResponseProtocol(
        "model_review_fallback",
        "Open a model review and fall back (roll back) to the prior approved model or policy.",
    ),
}


def recommend_response(severity: Severity) -> ResponseProtocol:
    return RESPONSES[Severity(severity)]


@dataclass(frozen=True)
class GovernanceAlert:
    window_index: int
    triggered: tuple[str, ...]
    raw: RawProxyValues
    composite: float
    severity: Severity
    cumulative_wealth: float
    cumulative_alert: bool
    recommended_response: ResponseProtocol

    def to_dict(self) -> dict:
        return {
            "window_index": self.window_index,
            "triggered": list(self.triggered),
            "raw": self.raw.to_dict(),
            "composite": self.composite,
            "severity": self.severity.label,
            "cumulative_wealth": self.cumulative_wealth,
            "cumulative_alert": self.cumulative_alert,
            "recommended_response": self.recommended_response.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def generate_alert(
    window_index: int,
    raw: RawProxyValues,
    config: MonitorConfig,
    state: CumulativeState | None = None,
) -> tuple[GovernanceAlert, CumulativeState]:
    state = CumulativeState() if state is None else state
    triggers = evaluate_triggers(raw, config)
    composite = composite_score(triggers, config)
    severity = assign_severity(composite, triggers, config)
    state = update_cumulative(state, composite, config)
    alert = GovernanceAlert(
        window_index=window_index,
        triggered=tuple(triggers.sorted()),
        raw=raw,
        composite=composite,
        severity=severity,
        cumulative_wealth=state.wealth,
        cumulative_alert=state.alert_active,
        recommended_response=recommend_response(severity),
    )
    return alert, state
