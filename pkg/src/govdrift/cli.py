"""Command-line entry point: ``govdrift {profile,monitor,inject,evaluate,synth}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 verification
failure (``evaluate`` only).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import synth
from .errors import ConfigError, DataError, GovDriftError, IoFailure
from .harness import build_profile, emit_report, evaluate, monitor_windows, prepare_dataset
from .ingest import SchemaMapping, WindowPolicy, impute_missing, load_records, partition_windows, write_records
from .inject import DEFAULT_TARGET_FEATURES, apply_scenario, scenario_schedule
from .monitor import MonitorConfig
from .proxies import DEFAULT_BIN_COUNT, ReferenceProfile

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFICATION = 3

log = logging.getLogger("govdrift")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _schema_doc(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read schema {path}: {exc}") from None


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else None


def _load_config(path, preset):
    if path:
        return MonitorConfig.load(path)
    return MonitorConfig.preset(preset)


def _policy(arg, config: MonitorConfig | None = None) -> WindowPolicy:
    if arg:
        return WindowPolicy.parse(arg)
    if config is not None and config.window_policy:
        return WindowPolicy.parse(config.window_policy)
    return WindowPolicy("calendar_year")


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def cmd_profile(args) -> int:
    doc = _schema_doc(args.schema)
    mapping = SchemaMapping.from_dict(doc)
    prepared = prepare_dataset(args.data, mapping, _policy(args.windows))
    profile = build_profile(
        prepared,
        model_features=_csv_list(args.model_features) or doc.get("model_features"),
        monitored_features=_csv_list(args.monitored) or doc.get("monitored_features"),
        bin_count=args.bins,
        feature_aggregate=args.feature_aggregate,
        confidence_mode=args.confidence_mode,
    )
    profile.save(args.out)
    ref = prepared.dataset.reference
    log.info(
        "profile written to %s (reference window %s, %d records, %d monitoring windows)",
        args.out, ref.start, len(ref.records), len(prepared.dataset.monitoring),
    )
    return EXIT_OK


def cmd_monitor(args) -> int:
    profile = ReferenceProfile.load(args.profile)
    ctx = profile.context
    if "schema" not in ctx or "window_policy" not in ctx:
        raise ConfigError("profile lacks schema/window context; rebuild it with `govdrift profile`")
    mapping = SchemaMapping.from_dict(ctx["schema"])
    policy = WindowPolicy.from_dict(ctx["window_policy"])
    config = _load_config(args.config, args.preset)

    records, _ = load_records(args.data, mapping)
    records, _ = impute_missing(records, ctx["imputation_means"])
    dataset = partition_windows(records, policy, origin=ctx["window_origin"], min_windows=1)
    windows = [w for w in dataset.windows if w.index > 0]
    if not any(not w.empty for w in windows):
        raise DataError("no records fall after the reference window")
    _, alerts, state = monitor_windows(windows, profile, config)
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            for w, alert in zip(windows, alerts):
                if alert is None:
                    continue
                line = alert.to_dict()
                line["window_start"] = str(w.start)
                fh.write(json.dumps(line, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {args.out}: {exc}") from None
    emitted = [a for a in alerts if a is not None]
    log.info(
        "%d alerts written to %s; final cumulative score %.4f%s",
        len(emitted), args.out, state.wealth, " (ALERT)" if state.alert_active else "",
    )
    return EXIT_OK


def cmd_inject(args) -> int:
    doc = _schema_doc(args.schema)
    mapping = SchemaMapping.from_dict(doc)
    prepared = prepare_dataset(args.data, mapping, _policy(args.windows))
    targets = _csv_list(args.targets) or doc.get("target_features") or list(DEFAULT_TARGET_FEATURES)
    spec = scenario_schedule(
        args.scenario,
        len(prepared.dataset.monitoring),
        target_features=targets,
        noise_seed=args.noise_seed,
        flip_seed=args.flip_seed,
        sigma_basis=args.sigma_basis,
    )
    injected, manifest = apply_scenario(prepared.dataset, spec)
    out = Path(args.out)
    out_mapping = write_records(injected.all_records(), out)
    out_schema = out_mapping.to_dict()
    for key in ("monitored_features", "model_features", "target_features"):
        if key in doc:
            out_schema[key] = doc[key]
    manifest_doc = manifest.to_dict()
    manifest_doc["dataset"] = prepared.dataset.fingerprint()
    manifest_doc["window_indices"] = [w.index for w in prepared.dataset.monitoring]
    manifest_doc["schema"] = out_schema
    try:
        _sidecar(out, ".manifest.json").write_text(json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n")
        _sidecar(out, ".schema.json").write_text(json.dumps(out_schema, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from None
    log.info("%s scenario written to %s", spec.kind, out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    doc = _schema_doc(args.schema)
    mapping = SchemaMapping.from_dict(doc)
    config = _load_config(args.config, args.preset)
    prepared = prepare_dataset(args.data, mapping, _policy(args.windows, config))
    profile = build_profile(
        prepared,
        model_features=_csv_list(args.model_features) or doc.get("model_features"),
        monitored_features=_csv_list(args.monitored) or doc.get("monitored_features"),
        bin_count=args.bins,
        feature_aggregate=args.feature_aggregate,
        confidence_mode=args.confidence_mode,
    )
    targets = _csv_list(args.targets) or doc.get("target_features") or list(DEFAULT_TARGET_FEATURES)
    result = evaluate(
        prepared.dataset,
        profile,
        config,
        noise_seed=args.noise_seed,
        flip_seed=args.flip_seed,
        target_features=targets,
        sigma_basis=args.sigma_basis,
    )
    extra = {
        "dataset": prepared.dataset.fingerprint(),
        "ingest": prepared.report.to_dict(),
        "seeds": {"noise_seed": args.noise_seed, "flip_seed": args.flip_seed},
        "target_features": list(targets),
        "profile": {
            "scorer": profile.scorer.to_dict(),
            "monitored_features": list(profile.monitored_features),
            "bin_count": profile.bin_count,
            "feature_aggregate": profile.feature_aggregate,
            "confidence_mode": profile.confidence_mode,
            "degenerate_features": profile.degenerate_features,
            "reference_entropy": profile.reference_entropy,
        },
    }
    emit_report(
        result.runs,
        result.deltas,
        result.verifications,
        args.out,
        config=config,
        extra=extra,
        csv_dir=args.csv_dir,
    )
    for check in result.verifications:
        log.info("%-24s %s (max discrepancy %g)", check.name, "PASS" if check.passed else "FAIL",
                 check.max_discrepancy)
    base = result.runs["baseline"]
    log.info("baseline cumulative drift score %.4f", base.final_state.wealth)
    return EXIT_OK if result.passed else EXIT_VERIFICATION


def cmd_synth(args) -> int:
    batch = synth.generate(args.records, args.years, args.seed, start_year=args.start_year, drift=args.drift)
    out = Path(args.out)
    write_records(batch, out)
    schema_path = _sidecar(out, ".schema.json")
    try:
        schema_path.write_text(json.dumps(synth.schema_document(), indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from None
    log.info("%d records written to %s; schema in %s", len(batch), out, schema_path)
    return EXIT_OK


def _add_profile_options(p):
    p.add_argument("--bins", type=int, default=DEFAULT_BIN_COUNT, help="quantile bins per variable")
    p.add_argument("--monitored", help="comma-separated monitored features (default: all)")
    p.add_argument("--model-features", help="comma-separated scorer features (default: all)")
    p.add_argument("--feature-aggregate", choices=("mean", "max"), default="mean")
    p.add_argument("--confidence-mode", choices=("folded", "raw"), default="folded")


def _add_injection_options(p):
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--flip-seed", type=int, default=0)
    p.add_argument("--targets", help="comma-separated features receiving noise")
    p.add_argument("--sigma-basis", choices=("window", "reference"), default="window",
                   help="whose standard deviation scales sigma")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="govdrift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("profile", help="fit the reference scorer and freeze the reference profile")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--windows", default="calendar_year", help="calendar_year or fixed:N")
    p.add_argument("--out", required=True)
    _add_profile_options(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("monitor", help="score new windows against a saved profile")
    p.add_argument("--data", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--config")
    p.add_argument("--preset", default="credit", choices=("credit", "fraud"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("inject", help="write a perturbed copy of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--windows", default="calendar_year")
    p.add_argument("--scenario", required=True, choices=("baseline", "covariate", "mixed", "pure", "pure_concept"))
    p.add_argument("--out", required=True)
    _add_injection_options(p)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("evaluate", help="run all four scenarios and the structural checks")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config")
    p.add_argument("--preset", default="credit", choices=("credit", "fraud"))
    p.add_argument("--windows", help="override the config's window policy")
    p.add_argument("--out", required=True)
    p.add_argument("--csv-dir")
    _add_profile_options(p)
    _add_injection_options(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--records", type=int, required=True)
    p.add_argument("--years", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-year", type=int, default=2008)
    p.add_argument("--drift", type=float, default=0.0, help="per-year latent mean shift")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DataError, IoFailure) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except GovDriftError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
