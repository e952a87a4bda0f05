import pytest

from app.errors import InputError, TraceDigestError
from app.services.evaluation import DetectionCounts, evaluate
from tests.factories import host, net


def _alert(alert_id, ts, entity, detector="signature", **evidence):
    return {
        "alert_id": alert_id, "ts": ts, "detector": detector, "entity": entity,
        "evidence": evidence, "action_taken": {"kind": "alert_only"}, "mode": "inline",
    }


TRUTH = [
    net(ts=1.0, src="10.0.0.1", label="normal"),
    net(ts=12.0, src="6.6.6.6", label="attack:scan"),
    net(ts=13.0, src="6.6.6.6", label="attack:scan"),
    host(ts=25.0, user="admin", vm="vm-2", category="auth_fail", label="attack:bruteforce"),
    net(ts=31.0, src="10.0.0.1", label="normal"),
]


def test_counts_arithmetic():
    c = DetectionCounts(tp=8, fp=2, fn=2)
    assert c.precision == pytest.approx(0.8)
    assert c.recall == pytest.approx(0.8)
    assert DetectionCounts().precision == 1.0
    assert DetectionCounts().recall == 1.0


def test_no_alerts_on_normal_trace():
    report = evaluate([], [net(ts=1.0, label="normal")], 10.0)
    assert report.totals.fp == 0
    assert report.totals.precision == 1.0


def test_window_attribution():
    alerts = [
        _alert(1, 12.5, "6.6.6.6"),
        # anomaly detected later, attributed to the window it scored
        _alert(2, 31.0, "admin@vm-2", detector="anomaly", window_id=2, score=9.0),
        _alert(3, 1.5, "10.0.0.1"),
    ]
    report = evaluate(alerts, TRUTH, 10.0)
    assert report.by_kind["scan"].to_dict()["tp"] == 1
    assert report.by_kind["bruteforce"].tp == 1
    assert report.totals.fp == 1
    assert report.totals.fn == 0
    assert report.alerts_by_detector == {"anomaly": 1, "signature": 2}
    assert report.events_by_sensor == {"virtual_network": 4, "vm_agent": 1}


def test_missed_attack_is_fn():
    report = evaluate([_alert(1, 12.5, "6.6.6.6")], TRUTH, 10.0)
    assert report.by_kind["bruteforce"].fn == 1
    assert report.by_kind["bruteforce"].recall == 0.0
    assert report.totals.tp + report.totals.fn == 2


def test_alert_order_does_not_matter():
    alerts = [_alert(1, 12.5, "6.6.6.6"), _alert(2, 1.5, "10.0.0.1"), _alert(3, 26.0, "admin@vm-2")]
    forward = evaluate(alerts, TRUTH, 10.0).to_dict()
    assert evaluate(list(reversed(alerts)), TRUTH, 10.0).to_dict() == forward


def test_framing_records_are_used():
    stream = [
        {"header": {"trace_digest": "abc", "mode": "inline", "tau": 4.0, "window_s": 10.0, "rules": 2}},
        _alert(1, 12.5, "6.6.6.6"),
        {"summary": {"events": 5, "blocked": 3}},
    ]
    report = evaluate(stream, TRUTH, 10.0, truth_digest="abc")
    assert report.blocked_events == 3
    assert report.config["tau"] == 4.0
    with pytest.raises(TraceDigestError):
        evaluate(stream, TRUTH, 10.0, truth_digest="def")


def test_bad_alert_record():
    with pytest.raises(InputError, match="record 1"):
        evaluate([{"alert_id": "x"}], TRUTH, 10.0)
