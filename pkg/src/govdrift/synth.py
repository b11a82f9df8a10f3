"""Synthetic credit-style decision data with a known logistic ground truth.

Six features are generated from independent standard-normal latents, one
calendar year per window. Labels come from a fixed logistic model of the
latents, so P(Y|X) is the same in every year; ``drift`` shifts latent means
year over year to imitate natural covariate drift.
"""

from __future__ import annotations

import numpy as np

from .ingest import RecordBatch, SchemaMapping

FEATURES = ("loan_amount", "interest_rate", "dti", "annual_income", "fico_score", "revol_util")
TARGET_FEATURES = ("annual_income", "dti", "revol_util")

# latent -> feature value
_TRANSFORMS = {
    "loan_amount": lambda z: np.exp(9.3 + 0.6 * z),
    "interest_rate": lambda z: 13.0 + 4.0 * z,
    "dti": lambda z: 18.0 + 8.0 * z,
    "annual_income": lambda z: np.exp(11.0 + 0.5 * z),
    "fico_score": lambda z: 700.0 + 30.0 * z,
    "revol_util": lambda z: 50.0 + 22.0 * z,
}
# ground-truth log-odds coefficients on the latents
TRUE_INTERCEPT = -1.2
TRUE_COEFS = {
    "loan_amount": 0.10,
    "interest_rate": 0.30,
    "dti": 0.60,
    "annual_income": -0.60,
    "fico_score": -0.30,
    "revol_util": 0.50,
}
# direction of the per-year latent mean shift under natural drift
_DRIFT_DIRECTION = {
    "loan_amount": 1.0,
    "interest_rate": -0.5,
    "dti": 0.8,
    "annual_income": 0.6,
    "fico_score": 0.3,
    "revol_util": -0.4,
}


def generate(
    n_records: int,
    n_years: int,
    seed: int = 0,
    *,
    start_year: int = 2008,
    drift: float = 0.0,
) -> RecordBatch:
    """``n_records`` split evenly across ``n_years`` consecutive calendar years."""
    if n_records < n_years or n_years < 1:
        raise ValueError("need at least one record per year")
    rng = np.random.default_rng(seed)
    per_year = np.full(n_years, n_records // n_years)
    per_year[: n_records % n_years] += 1
    year_of = np.repeat(np.arange(n_years), per_year)

    latents = {}
    for name in FEATURES:
        z = rng.standard_normal(n_records)
        latents[name] = z + drift * _DRIFT_DIRECTION[name] * year_of
    logit = TRUE_INTERCEPT + sum(TRUE_COEFS[f] * latents[f] for f in FEATURES)
    labels = (rng.random(n_records) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int8)

    day_of_year = rng.integers(0, 365, size=n_records)
    starts = np.array(
        [np.datetime64(f"{start_year + y:04d}-01-01", "D") for y in range(n_years)]
    )
    stamps = (starts[year_of] + day_of_year).astype("datetime64[us]")

    return RecordBatch(
        ids=[f"s{i:09d}" for i in range(n_records)],
        timestamps=stamps,
        features={f: _TRANSFORMS[f](latents[f]) for f in FEATURES},
        labels=labels,
    )


def schema_document() -> dict:
    """Schema mapping (plus monitoring hints) for files written from :func:`generate`."""
    doc = SchemaMapping(
        timestamp_column="timestamp",
        feature_columns=FEATURES,
        label_column="label",
        label_positive_value="1",
        timestamp_format="iso",
        id_column="id",
    ).to_dict()
    doc["monitored_features"] = list(FEATURES)
    doc["target_features"] = list(TARGET_FEATURES)
    return doc

