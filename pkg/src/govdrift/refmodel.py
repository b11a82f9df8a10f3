"""Deterministic logistic-regression reference scorer.

The scorer is deliberately plain: standardized inputs, zero initialization and
full-batch gradient descent on mean log-loss with a fixed learning rate. Its
only job is to produce the prediction probabilities the proxy monitors watch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingLabels, NonFiniteLoss, SingleClassWindow, TooFewRecords, UnknownFeature
from .ingest import RecordBatch

logger = logging.getLogger(__name__)

MIN_RECORDS = 10


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(weights, intercept, X, y, l2=0.0) -> float:
    """Mean binary cross-entropy of ``sigmoid(X @ weights + intercept)``."""
    z = X @ weights + intercept
    # log(1 + e^z) - y z, stable for large |z|
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    if l2:
        loss += 0.5 * l2 * float(weights @ weights)
    return loss


def log_loss_gradient(weights, intercept, X, y, l2=0.0):
    """Analytic gradient of :func:`log_loss`; returns ``(d_weights, d_intercept)``."""
    residual = sigmoid(X @ weights + intercept) - y
    n = len(y)
    grad_w = X.T @ residual / n
    if l2:
        grad_w = grad_w + l2 * weights
    return grad_w, float(residual.sum() / n)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.1
    max_epochs: int = 500
    tolerance: float = 1e-8
    l2: float = 0.0


@dataclass(frozen=True)
class ReferenceScorer:
    feature_order: tuple[str, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    weights: tuple[float, ...]
    intercept: float
    training_meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.feature_order)
        if not (len(self.means) == len(self.stds) == len(self.weights) == n):
            raise ValueError("feature_order, means, stds and weights must align")
        if any(not s > 0 for s in self.stds):
            raise ValueError("stds must be strictly positive")

    def decision_function(self, records: RecordBatch) -> np.ndarray:
        missing = [f for f in self.feature_order if f not in records.features]
        if missing:
            raise UnknownFeature(f"records lack model features: {missing}")
        X = records.matrix(self.feature_order)
        Z = (X - np.asarray(self.means)) / np.asarray(self.stds)
        return Z @ np.asarray(self.weights, dtype=np.float64) + self.intercept

    def to_dict(self) -> dict:
        return {
            "feature_order": list(self.feature_order),
            "means": list(self.means),
            "stds": list(self.stds),
            "weights": list(self.weights),
            "intercept": self.intercept,
            "training_meta": dict(self.training_meta),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ReferenceScorer":
        return cls(
            feature_order=tuple(doc["feature_order"]),
            means=tuple(float(v) for v in doc["means"]),
            stds=tuple(float(v) for v in doc["stds"]),
            weights=tuple(float(v) for v in doc["weights"]),
            intercept=float(doc["intercept"]),
            training_meta=dict(doc.get("training_meta", {})),
        )


def gradient_descent(X, y, config: TrainingConfig = TrainingConfig()):
    """Full-batch gradient descent from zero; returns ``(w, b, epochs, loss)``.

    Each epoch evaluates the loss at the current parameters, stops if it moved
    by less than ``tolerance`` since the previous epoch, and otherwise takes one
    step. ``epochs`` counts the steps taken.
    """
    w = np.zeros(X.shape[1])
    b = 0.0
    prev = None
    epochs = 0
    while True:
        loss = log_loss(w, b, X, y, config.l2)
        if not math.isfinite(loss):
            raise NonFiniteLoss(
                f"loss became {loss} after {epochs} epochs; lower the learning rate"
            )
        if prev is not None and abs(prev - loss) < config.tolerance:
            break
        if epochs == config.max_epochs:
            break
        gw, gb = log_loss_gradient(w, b, X, y, config.l2)
        w = w - config.learning_rate * gw
        b = b - config.learning_rate * gb
        prev = loss
        epochs += 1
    return w, b, epochs, loss


def fit_reference(
    reference_window: RecordBatch,
    features: Sequence[str],
    config: TrainingConfig = TrainingConfig(),
) -> ReferenceScorer:
    """Fit the reference scorer on a fully labeled reference window.

    Features with zero variance in the window are left out of the model and
    listed under ``training_meta["excluded_features"]``.
    """
    n = len(reference_window)
    if n < MIN_RECORDS:
        raise TooFewRecords(f"need at least {MIN_RECORDS} records to fit, got {n}")
    if not reference_window.fully_labeled:
        raise MissingLabels("every reference record needs a label to fit the scorer")
    y = reference_window.labels.astype(np.float64)
    if np.unique(y).size < 2:
        raise SingleClassWindow(f"reference window labels are all {int(y[0])}")
    missing = [f for f in features if f not in reference_window.features]
    if missing:
        raise UnknownFeature(f"reference window lacks features: {missing}")

    X = reference_window.matrix(list(features))
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    keep = stds > 0
    excluded = [f for f, k in zip(features, keep) if not k]
    if excluded:
        logger.warning("excluding zero-variance features from the scorer: %s", excluded)
    kept = [f for f, k in zip(features, keep) if k]
    Z = (X[:, keep] - means[keep]) / stds[keep]

    w, b, epochs, loss = gradient_descent(Z, y, config)
    return ReferenceScorer(
        feature_order=tuple(kept),
        means=tuple(float(v) for v in means[keep]),
        stds=tuple(float(v) for v in stds[keep]),
        weights=tuple(float(v) for v in w),
        intercept=float(b),
        training_meta={
            "epochs_run": epochs,
            "final_loss": loss,
            "learning_rate": config.learning_rate,
            "max_epochs": config.max_epochs,
            "tolerance": config.tolerance,
            "l2": config.l2,
            "n_records": n,
            "excluded_features": excluded,
        },
    )


def score(model: ReferenceScorer, records: RecordBatch) -> np.ndarray:
    """Default probabilities, in input order."""
    return sigmoid(model.decision_function(records))
