import json

import pytest

from app.cli import main
from app.pipeline.events import serialize_event
from app.services.simulator import default_ruleset
from tests.factories import net


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "known.ids").write_text(default_ruleset(), encoding="utf-8")
    return tmp_path


def _read_jsonl(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def test_rules_validate(workdir, capsys):
    assert main(["rules", "validate", str(workdir / "known.ids")]) == 0
    assert "2 rules OK" in capsys.readouterr().out


def test_rules_default_writes_parseable_file(tmp_path):
    out = tmp_path / "shipped.ids"
    assert main(["rules", "default", "--out", str(out)]) == 0
    assert out.read_text(encoding="utf-8") == default_ruleset()
    assert main(["rules", "validate", str(out)]) == 0


def test_rules_validate_reports_position(workdir, capsys):
    bad = workdir / "bad.ids"
    bad.write_text("# ok\nalert tcp any any -> any any (sid:1; bogus:1;)\n", encoding="utf-8")
    assert main(["rules", "validate", str(bad)]) == 2
    assert "line 2, column 38" in capsys.readouterr().err


def test_detect_without_rules_is_usage_error(workdir, capsys):
    code = main(["detect", "--in", "x.jsonl", "--profile", "p.json", "--alerts", "a.jsonl"])
    assert code == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--rules" in err


def test_unknown_attack_kind_is_usage_error(workdir):
    assert main(["gen", "--out", str(workdir / "t.jsonl"), "--attacks", "scan,ddos"]) == 1


def test_missing_file_is_io_error(workdir, capsys):
    assert main(["rules", "validate", str(workdir / "nope.ids")]) == 3


def test_malformed_trace_line_is_input_error(workdir, capsys):
    assert main(["gen", "--seed", "1", "--duration", "60", "--attacks", "none", "--out", str(workdir / "n.jsonl")]) == 0
    assert main(["train", "--in", str(workdir / "n.jsonl"), "--profile", str(workdir / "p.json")]) == 0
    bad = workdir / "bad.jsonl"
    lines = [serialize_event(net(ts=float(i))) for i in range(6)] + ['{"ts": 7, "kind": "net"']
    bad.write_text("\n".join(lines) + "\n", encoding="utf-8")
    code = main([
        "detect", "--in", str(bad), "--rules", str(workdir / "known.ids"),
        "--profile", str(workdir / "p.json"), "--alerts", str(workdir / "a.jsonl"),
    ])
    assert code == 2
    assert "line 7" in capsys.readouterr().err


def test_gen_with_config_file(workdir):
    cfg = workdir / "scenario.json"
    cfg.write_text(json.dumps({
        "seed": 3, "duration_s": 100,
        "attacks": [{"kind": "scan", "start_ts": 40, "attacker": "203.0.113.1", "target": "vm-1", "intensity": 30}],
    }), encoding="utf-8")
    out = workdir / "t.jsonl"
    assert main(["gen", "--config", str(cfg), "--out", str(out)]) == 0
    labels = [r.get("label") for r in _read_jsonl(out)]
    assert labels.count("attack:scan") == 30


def test_gen_rejects_bad_config(workdir, capsys):
    cfg = workdir / "scenario.json"
    cfg.write_text('{"duration_s": 0}', encoding="utf-8")
    assert main(["gen", "--config", str(cfg), "--out", str(workdir / "t.jsonl")]) == 2
    assert "duration_s" in capsys.readouterr().err


def test_end_to_end_workflow_is_deterministic(workdir, capsys):
    w = workdir
    assert main(["gen", "--seed", "42", "--duration", "600", "--attacks", "none", "--out", str(w / "normal.jsonl")]) == 0
    assert main(["gen", "--seed", "42", "--duration", "600", "--out", str(w / "attack.jsonl")]) == 0
    assert main(["gen", "--seed", "42", "--duration", "600", "--out", str(w / "attack2.jsonl")]) == 0
    assert (w / "attack.jsonl").read_bytes() == (w / "attack2.jsonl").read_bytes()

    assert main(["train", "--in", str(w / "normal.jsonl"), "--window", "10", "--profile", str(w / "profile.json")]) == 0

    def detect(rules, alerts, *extra):
        return main([
            "detect", "--in", str(w / "attack.jsonl"), "--rules", str(rules),
            "--profile", str(w / "profile.json"), "--mode", "inline", "--tau", "4",
            "--alerts", str(alerts), *extra,
        ])

    assert detect(w / "known.ids", w / "alerts.jsonl", "--promoted", str(w / "promoted.ids"),
                  "--dump-blocks", str(w / "blocks.jsonl")) == 0
    assert detect(w / "known.ids", w / "alerts2.jsonl") == 0
    assert (w / "alerts.jsonl").read_bytes() == (w / "alerts2.jsonl").read_bytes()

    records = _read_jsonl(w / "alerts.jsonl")
    assert "header" in records[0] and "summary" in records[-1]
    assert records[0]["header"]["mode"] == "inline"
    anomalies = [r for r in records[1:-1] if r["detector"] == "anomaly"]
    assert len(anomalies) >= 3
    assert all(r["evidence"]["promoted_sid"] >= 1_000_000 for r in anomalies)
    assert _read_jsonl(w / "blocks.jsonl")

    assert main(["evaluate", "--alerts", str(w / "alerts.jsonl"), "--truth", str(w / "attack.jsonl"),
                 "--window", "10", "--report", str(w / "report.json")]) == 0
    assert "TOTAL" in capsys.readouterr().out
    report = json.loads((w / "report.json").read_text(encoding="utf-8"))
    assert report["by_kind"]["exploit"]["recall"] == 1.0
    assert report["totals"]["fp"] == 0
    assert report["blocked_events"] == records[-1]["summary"]["blocked"]

    # second pass with the promoted signatures fed back in
    combined = w / "combined.ids"
    combined.write_text((w / "known.ids").read_text() + (w / "promoted.ids").read_text(), encoding="utf-8")
    assert main(["rules", "validate", str(combined)]) == 0
    assert detect(combined, w / "alerts3.jsonl") == 0
    second = _read_jsonl(w / "alerts3.jsonl")[1:-1]
    assert not [r for r in second if r["detector"] == "anomaly"]
    assert {r["evidence"]["sid"] for r in second} & {r["evidence"]["promoted_sid"] for r in anomalies}


def test_evaluate_rejects_alerts_from_another_trace(workdir, capsys):
    w = workdir
    for seed, name in (("1", "a.jsonl"), ("2", "b.jsonl")):
        assert main(["gen", "--seed", seed, "--duration", "100", "--out", str(w / name)]) == 0
    assert main(["train", "--in", str(w / "a.jsonl"), "--profile", str(w / "p.json")]) == 0
    assert main(["detect", "--in", str(w / "a.jsonl"), "--rules", str(w / "known.ids"),
                 "--profile", str(w / "p.json"), "--alerts", str(w / "alerts.jsonl")]) == 0
    assert main(["evaluate", "--alerts", str(w / "alerts.jsonl"), "--truth", str(w / "b.jsonl"),
                 "--window", "10"]) == 2
