import json

import pytest

from govdrift.cli import main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = d / "loans.csv"
    assert main(["synth", "--records", "3000", "--years", "5", "--seed", "4", "--out", str(out)]) == 0
    return out, d / "loans.schema.json"


def test_synth_writes_schema(data):
    csv_path, schema = data
    doc = json.loads(schema.read_text())
    assert doc["target_features"] == ["annual_income", "dti", "revol_util"]
    assert csv_path.read_text().count("\n") == 3001


def test_evaluate(data, tmp_path):
    csv_path, schema = data
    out = tmp_path / "report.json"
    code = main([
        "evaluate", "--data", str(csv_path), "--schema", str(schema),
        "--out", str(out), "--csv-dir", str(tmp_path / "tables"), "--noise-seed", "3",
    ])
    assert code == 0
    body = json.loads(out.read_text())["body"]
    assert all(v["passed"] for v in body["verifications"])
    assert (tmp_path / "tables" / "delta_ranges.csv").exists()


def test_profile_then_monitor(data, tmp_path):
    csv_path, schema = data
    profile = tmp_path / "profile.json"
    assert main(["profile", "--data", str(csv_path), "--schema", str(schema), "--out", str(profile)]) == 0
    alerts = tmp_path / "alerts.jsonl"
    assert main(["monitor", "--data", str(csv_path), "--profile", str(profile), "--out", str(alerts)]) == 0
    lines = [json.loads(x) for x in alerts.read_text().splitlines()]
    assert [x["window_index"] for x in lines] == [1, 2, 3, 4]
    assert all("recommended_response" in x for x in lines)


def test_inject_roundtrip(data, tmp_path):
    csv_path, schema = data
    out = tmp_path / "mixed.csv"
    args = ["inject", "--data", str(csv_path), "--schema", str(schema), "--scenario", "mixed", "--out", str(out)]
    assert main(args + ["--flip-seed", "1"]) == 0
    manifest = json.loads((tmp_path / "mixed.manifest.json").read_text())
    assert manifest["scenario"]["kind"] == "mixed"
    assert len(manifest["flip_counts"]) == 4
    # the injected file can be re-read with the sidecar schema
    assert main(["profile", "--data", str(out), "--schema", str(tmp_path / "mixed.schema.json"),
                 "--out", str(tmp_path / "p.json")]) == 0


def test_fraud_preset_loads(data, tmp_path):
    csv_path, schema = data
    # 30-day windows over five years of data
    code = main([
        "evaluate", "--data", str(csv_path), "--schema", str(schema),
        "--preset", "fraud", "--out", str(tmp_path / "r.json"),
    ])
    assert code == 0
    body = json.loads((tmp_path / "r.json").read_text())["body"]
    assert body["config"]["window_policy"] == "fixed:30"
    assert len(body["runs"]["baseline"]["windows"]) > 12


def test_usage_errors(data, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["evaluate"])
    assert exc.value.code == 1
    csv_path, schema = data
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"schema_version": 1, "cumulative_theta": 2.0}))
    code = main(["evaluate", "--data", str(csv_path), "--schema", str(schema), "--config", str(bad),
                 "--out", str(tmp_path / "r.json")])
    assert code == 1
    assert main(["profile", "--data", str(csv_path), "--schema", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "p.json")]) == 1


def test_data_errors(data, tmp_path):
    _, schema = data
    empty = tmp_path / "empty.csv"
    empty.write_text("id,timestamp\n")
    assert main(["profile", "--data", str(empty), "--schema", str(schema), "--out", str(tmp_path / "p.json")]) == 2
    assert main(["profile", "--data", str(tmp_path / "missing.csv"), "--schema", str(schema),
                 "--out", str(tmp_path / "p.json")]) == 2


def test_verification_failure_exit_code(data, tmp_path, monkeypatch):
    from govdrift import cli, harness

    real = harness.evaluate

    def broken(*args, **kwargs):
        result = real(*args, **kwargs)
        result.verifications[0].passed = False
        return result

    monkeypatch.setattr(cli, "evaluate", broken)
    csv_path, schema = data
    code = main(["evaluate", "--data", str(csv_path), "--schema", str(schema), "--out", str(tmp_path / "r.json")])
    assert code == 3
