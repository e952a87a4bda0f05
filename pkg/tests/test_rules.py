import random
from ipaddress import IPv4Network

import pytest

from app.errors import DuplicateSidError, RuleError
from app.pipeline.events import HostCategory
from app.pipeline.rules import (
    Action, Content, PortSpec, Rule, RuleProto, parse_rule, parse_ruleset, serialize_rule, serialize_ruleset,
)
from tests.factories import random_rule


def test_parse_full_rule():
    r = parse_rule(
        'block-attacker tcp 10.0.0.0/8 any -> any 22 '
        '(msg:"ssh banner"; content:"SSH-"; content:"|00 01|"; nocase; sid:42; priority:1; ttl:60;)'
    )
    assert r.action is Action.BLOCK_ATTACKER
    assert r.proto is RuleProto.TCP
    assert r.src_net == IPv4Network("10.0.0.0/8")
    assert r.dst_port == PortSpec(22, 22)
    assert r.contents == (Content(b"SSH-"), Content(b"\x00\x01", nocase=True))
    assert (r.sid, r.priority, r.ttl_s, r.msg) == (42, 1, 60, "ssh banner")


def test_defaults_and_port_range():
    r = parse_rule("alert udp any 1000:2000 -> any any (sid:7;)")
    assert r.src_port == PortSpec(1000, 2000)
    assert 1500 in r.src_port and 2001 not in r.src_port
    assert r.priority == 3
    assert r.ttl_s == 300


def test_host_rule_with_user_and_vm():
    r = parse_rule('alert host any any -> any any (host-category:auth_fail; user:"admin"; vm:"vm-2"; sid:9;)')
    assert r.is_host_rule
    assert r.host_category is HostCategory.AUTH_FAIL
    assert (r.user, r.vm) == ("admin", "vm-2")


@pytest.mark.parametrize("text, message, column", [
    ("alarm tcp any any -> any any (sid:1;)", "expected action", 1),
    ("alert tcp any any -> any any (sid:1; bogus:2;)", "unknown option: bogus", 38),
    ("alert tcp 10.0.0.1/8 any -> any any (sid:1;)", "invalid CIDR", 11),
    ("alert tcp any any -> any 99999 (sid:1;)", "port out of range", 26),
    ("alert tcp any any -> any 90:80 (sid:1;)", "port range inverted", 26),
    ("alert tcp any any -> any any (msg:\"x\";)", "missing option: sid", None),
    ("alert tcp any any -> any any (sid:1; priority:9;)", "priority out of range", None),
    ("alert tcp any any -> any any (nocase; sid:1;)", "nocase without preceding content", None),
    ("alert host any any -> any any (sid:1;)", "host rule requires host-category", None),
    ("alert tcp any any -> any any (host-category:auth_ok; sid:1;)", "requires protocol 'host'", None),
    ("alert tcp any any -> any any (msg:\"bad \\x4g\"; sid:1;)", "expected 2 hex digits", 40),
    ("alert tcp any any -> any any (msg:\"bad \\q\"; sid:1;)", "invalid escape", 40),
])
def test_syntax_errors_carry_position(text, message, column):
    with pytest.raises(RuleError) as exc:
        parse_rule(text, line=3)
    assert message in exc.value.reason
    assert exc.value.line == 3
    if column is not None:
        assert exc.value.column == column


def test_ruleset_skips_comments_and_rejects_duplicate_sids():
    text = "# header\n\nalert tcp any any -> any any (sid:1;)\nalert udp any any -> any any (sid:1;)\n"
    with pytest.raises(DuplicateSidError) as exc:
        parse_ruleset(text)
    assert exc.value.line == 4


def test_serialize_is_canonical():
    r = parse_rule('alert  tcp any any -> any 80 (sid:5; content:"a\\"b"; msg:"m";)')
    assert serialize_rule(r) == 'alert tcp any any -> any 80 (msg:"m"; content:"a|22|b"; sid:5; priority:3;)'


def test_rule_round_trip():
    rng = random.Random(11)
    for sid in range(1, 1001):
        r = random_rule(rng, sid)
        text = serialize_rule(r)
        assert parse_rule(text) == r
        assert serialize_rule(parse_rule(text)) == text


@pytest.mark.parametrize("name", [
    "ad\nmin",
    "cr\rlf",
    "tab\there",
    "vt\x0bff\x0cfs\x1cgs\x1drs\x1e",
    "nel\x85",
    "ls\u2028ps\u2029",
    "quote\"back\\slash",
    "ünïcode",
    "astral\U0001F600",
])
def test_quoted_values_stay_on_one_line(name):
    r = Rule(
        action=Action.BLOCK_ATTACKER, proto=RuleProto.HOST, sid=1_000_000,
        host_category=HostCategory.AUTH_FAIL, user=name, vm=f"vm-{name}", msg=f"login burst {name}@vm",
    )
    text = serialize_ruleset([r])
    assert len(text.splitlines()) == 1
    assert parse_ruleset(text) == [r]
    assert serialize_rule(parse_rule(text.rstrip("\n"))) == text.rstrip("\n")


def test_codepoint_escapes_parse():
    r = parse_rule('alert host any any -> any any (host-category:auth_fail; user:"a\\x0ab\\u2028c\\U0001f600"; sid:3;)')
    assert r.user == "a\nb\u2028c\U0001F600"
