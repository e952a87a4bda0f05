import html
import logging
from typing import Iterable

import resend

from app.config import settings
from app.pipeline.orchestrator import Alert

logger = logging.getLogger(__name__)

MAX_LISTED_ALERTS = 50


def _init() -> bool:
    if not settings.resend_api_key:
        return False
    resend.api_key = settings.resend_api_key
    return True


def _row(alert: Alert) -> str:
    ev = alert.evidence
    if "sid" in ev:
        what = f"sid {ev['sid']}: {ev.get('msg', '')}"
    else:
        what = f"{ev.get('top_feature', '?')} z={ev.get('score', 0):.2f}, promoted sid {ev.get('promoted_sid')}"
    return (
        f"<tr><td>{alert.ts:.3f}</td><td>{alert.detector.value}</td>"
        f"<td>{html.escape(alert.entity)}</td><td>{html.escape(what)}</td>"
        f"<td>{alert.action_taken.kind.value}</td></tr>"
    )


def send_alert_digest(to_email: str, alerts: Iterable[Alert], source: str = "") -> bool:
    """Mail administrators a digest of one detection run via Resend."""
    alerts = list(alerts)
    if not alerts:
        logger.info("[notify] No alerts, nothing to send")
        return False
    if not _init():
        logger.warning("[notify] IDPS_RESEND_API_KEY is not set; skipping alert digest")
        return False

    rows = "".join(_row(a) for a in alerts[:MAX_LISTED_ALERTS])
    more = ""
    if len(alerts) > MAX_LISTED_ALERTS:
        more = f"<p>... and {len(alerts) - MAX_LISTED_ALERTS} more.</p>"
    blocking = sum(1 for a in alerts if a.action_taken.kind.value != "alert_only")

    body = f"""
    <div style="font-family: system-ui, sans-serif; max-width: 720px;">
        <h2>IDPS alert digest {html.escape(source)}</h2>
        <p>{len(alerts)} alerts, {blocking} with a prevention action.</p>
        <table cellpadding="4">
            <tr><th>ts</th><th>detector</th><th>entity</th><th>evidence</th><th>action</th></tr>
            {rows}
        </table>
        {more}
    </div>
    """

    try:
        resend.Emails.send({
            "from": settings.alert_from_email,
            "to": to_email,
            "subject": f"IDPS: {len(alerts)} alerts",
            "html": body,
        })
        logger.info(f"[notify] Alert digest ({len(alerts)} alerts) sent to {to_email}")
        return True
    except Exception as e:
        logger.error(f"[notify] Failed to send alert digest: {e}")
        return False
