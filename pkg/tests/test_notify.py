import resend

from app.config import settings
from app.pipeline.orchestrator import run
from app.pipeline.rules import parse_rule
from app.services.notify import send_alert_digest
from tests.factories import net, quiet_profile


def _alerts():
    rule = parse_rule('alert tcp any any -> any any (msg:"<scan>"; content:"X"; sid:5;)')
    return run([net(ts=1.0, payload=b"X")], [rule], quiet_profile()).alerts


def test_digest_is_sent(monkeypatch):
    sent = []
    monkeypatch.setattr(settings, "resend_api_key", "re_test")
    monkeypatch.setattr(resend.Emails, "send", lambda params: sent.append(params) or {"id": "1"})
    assert send_alert_digest("ops@example.com", _alerts(), source="trace.jsonl") is True
    assert sent[0]["to"] == "ops@example.com"
    assert "1 alerts" in sent[0]["subject"]
    assert "&lt;scan&gt;" in sent[0]["html"]


def test_failure_is_logged_not_raised(monkeypatch):
    def boom(params):
        raise RuntimeError("smtp down")

    monkeypatch.setattr(settings, "resend_api_key", "re_test")
    monkeypatch.setattr(resend.Emails, "send", boom)
    assert send_alert_digest("ops@example.com", _alerts()) is False


def test_missing_key_skips(monkeypatch):
    monkeypatch.setattr(settings, "resend_api_key", "")
    monkeypatch.setattr(resend.Emails, "send", lambda params: (_ for _ in ()).throw(AssertionError("called")))
    assert send_alert_digest("ops@example.com", _alerts()) is False
    assert send_alert_digest("ops@example.com", []) is False
