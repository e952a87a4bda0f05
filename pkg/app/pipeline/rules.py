r"""
Signature Rule Language

One rule per line, snort-like:

    alert tcp any any -> any 80 (msg:"admin access"; sid:1001; priority:2; content:"GET /admin";)
    block-attacker host any any -> any any (msg:"ssh guess"; host-category:auth_fail; user:"bob"; vm:"vm-3"; sid:1000001;)

Lines starting with `#` are comments. Content strings may embed raw bytes as
`|0d 0a|` hex runs; a bare `nocase;` applies to the content right before it.
Other quoted values escape `"` and `\` with a backslash and non-printable
characters as `\xNN`, `\uNNNN` or `\UNNNNNNNN`.
sids below 1,000,000 are hand-written; promoted signatures start there.
"""
import logging
from dataclasses import dataclass
from enum import StrEnum
from ipaddress import AddressValueError, IPv4Network, NetmaskValueError

from app.errors import DuplicateSidError, RuleError
from app.pipeline.events import HostCategory, Proto

logger = logging.getLogger(__name__)

DEFAULT_TTL_S = 300
DEFAULT_PRIORITY = 3
PROMOTED_SID_BASE = 1_000_000


class Action(StrEnum):
    ALERT = "alert"
    TERMINATE_SESSION = "terminate-session"
    BLOCK_ATTACKER = "block-attacker"
    BLOCK_TARGET = "block-target"


class RuleProto(StrEnum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"
    ANY = "any"
    HOST = "host"

    def admits(self, proto: Proto) -> bool:
        return self is RuleProto.ANY or self.value == proto.value


@dataclass(frozen=True)
class PortSpec:
    """Inclusive port range; a single port has lo == hi."""
    lo: int
    hi: int

    def __contains__(self, port: int) -> bool:
        return self.lo <= port <= self.hi

    def __str__(self) -> str:
        return str(self.lo) if self.lo == self.hi else f"{self.lo}:{self.hi}"


@dataclass(frozen=True)
class Content:
    pattern: bytes
    nocase: bool = False


@dataclass(frozen=True)
class Rule:
    action: Action
    proto: RuleProto
    sid: int
    src_net: IPv4Network | None = None
    src_port: PortSpec | None = None
    dst_net: IPv4Network | None = None
    dst_port: PortSpec | None = None
    contents: tuple[Content, ...] = ()
    host_category: HostCategory | None = None
    user: str | None = None
    vm: str | None = None
    msg: str = ""
    priority: int = DEFAULT_PRIORITY
    ttl_s: int = DEFAULT_TTL_S

    @property
    def is_host_rule(self) -> bool:
        return self.proto is RuleProto.HOST


# =============================================================================
# PARSER
# =============================================================================

_QUOTED_KEYS = {"msg", "content", "user", "vm"}
_KNOWN_KEYS = {"msg", "sid", "priority", "content", "nocase", "host-category", "ttl", "user", "vm"}


@dataclass
class _Scanner:
    text: str
    line: int
    pos: int = 0

    def fail(self, message: str, pos: int | None = None) -> RuleError:
        col = (self.pos if pos is None else pos) + 1
        return RuleError(message, line=self.line, column=col)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def word(self, expected: str) -> tuple[str, int]:
        """Next whitespace-delimited header token and its start offset."""
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in " \t(":
            self.pos += 1
        if start == self.pos:
            raise self.fail(f"expected {expected}")
        return self.text[start:self.pos], start

    def expect(self, token: str) -> None:
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            raise self.fail(f"expected '{token}'")
        self.pos += len(token)

    def until_semicolon(self, expected: str) -> tuple[str, int]:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in ";)":
            self.pos += 1
        value = self.text[start:self.pos].strip()
        if not value:
            raise self.fail(f"expected {expected}", start)
        return value, start

    def quoted(self) -> tuple[str, int]:
        """Raw body of a double-quoted string; backslash escapes are kept for the caller."""
        self.skip_ws()
        start = self.pos
        if self.peek() != '"':
            raise self.fail("expected '\"'")
        self.pos += 1
        body = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "\\" and self.pos + 1 < len(self.text):
                body.append(self.text[self.pos:self.pos + 2])
                self.pos += 2
                continue
            if ch == '"':
                self.pos += 1
                return "".join(body), start + 1
            body.append(ch)
            self.pos += 1
        raise self.fail("unterminated string", start)


# \xNN, \uNNNN, \UNNNNNNNN in quoted text; keeps serialized rules on one line
_CODEPOINT_ESCAPES = {"x": 2, "u": 4, "U": 8}
_HEX_DIGITS = set("0123456789abcdefABCDEF")


def _unescape_text(raw: str, scanner: _Scanner, start: int) -> str:
    out = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            nxt = raw[i + 1] if i + 1 < len(raw) else ""
            if nxt in _CODEPOINT_ESCAPES:
                width = _CODEPOINT_ESCAPES[nxt]
                digits = raw[i + 2:i + 2 + width]
                if len(digits) != width or not set(digits) <= _HEX_DIGITS or int(digits, 16) > 0x10FFFF:
                    raise scanner.fail(f"expected {width} hex digits", start + i)
                out.append(chr(int(digits, 16)))
                i += 2 + width
                continue
            if nxt not in ('"', "\\"):
                raise scanner.fail("invalid escape", start + i)
            out.append(nxt)
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def _decode_content(raw: str, scanner: _Scanner, start: int) -> bytes:
    out = bytearray()
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            nxt = raw[i + 1] if i + 1 < len(raw) else ""
            if nxt not in ('"', "\\", "|"):
                raise scanner.fail("invalid escape", start + i)
            out += nxt.encode("ascii")
            i += 2
        elif ch == "|":
            end = raw.find("|", i + 1)
            if end < 0:
                raise scanner.fail("unterminated hex run", start + i)
            for chunk in raw[i + 1:end].split():
                if len(chunk) % 2:
                    raise scanner.fail("expected hex byte pairs", start + i)
                try:
                    out += bytes.fromhex(chunk)
                except ValueError:
                    raise scanner.fail("expected hex byte pairs", start + i) from None
            i = end + 1
        else:
            out += ch.encode("utf-8")
            i += 1
    return bytes(out)


def _parse_addr(token: str, scanner: _Scanner, start: int) -> IPv4Network | None:
    if token == "any":
        return None
    try:
        return IPv4Network(token, strict=True)
    except (AddressValueError, NetmaskValueError, ValueError):
        raise scanner.fail(f"invalid CIDR: {token}", start) from None


def _parse_port_number(token: str, scanner: _Scanner, start: int) -> int:
    if not (token.isascii() and token.isdigit()):
        raise scanner.fail(f"expected port, got '{token}'", start)
    value = int(token)
    if value > 65535:
        raise scanner.fail("port out of range", start)
    return value


def _parse_port(token: str, scanner: _Scanner, start: int) -> PortSpec | None:
    if token == "any":
        return None
    if ":" in token:
        a, b = token.split(":", 1)
        lo = _parse_port_number(a, scanner, start)
        hi = _parse_port_number(b, scanner, start + len(a) + 1)
        if lo > hi:
            raise scanner.fail(f"port range inverted: {token}", start)
        return PortSpec(lo, hi)
    port = _parse_port_number(token, scanner, start)
    return PortSpec(port, port)


def _parse_int(value: str, key: str, scanner: _Scanner, start: int) -> int:
    if not (value.isascii() and value.isdigit()):
        raise scanner.fail(f"expected integer for {key}", start)
    return int(value)


def parse_rule(text: str, line: int = 1) -> Rule:
    """Parse a single rule line."""
    s = _Scanner(text, line)

    token, at = s.word("action")
    try:
        action = Action(token)
    except ValueError:
        raise s.fail("expected action (alert|terminate-session|block-attacker|block-target)", at) from None

    token, at = s.word("protocol")
    try:
        proto = RuleProto(token)
    except ValueError:
        raise s.fail("expected protocol (tcp|udp|icmp|any|host)", at) from None

    token, at = s.word("source address")
    src_net = _parse_addr(token, s, at)
    token, at = s.word("source port")
    src_port = _parse_port(token, s, at)
    s.expect("->")
    token, at = s.word("destination address")
    dst_net = _parse_addr(token, s, at)
    token, at = s.word("destination port")
    dst_port = _parse_port(token, s, at)

    s.expect("(")
    contents: list[Content] = []
    seen: dict[str, object] = {}
    while True:
        s.skip_ws()
        if s.peek() == ")":
            s.pos += 1
            break
        if not s.peek():
            raise s.fail("expected ')'")
        key_start = s.pos
        while s.pos < len(s.text) and (s.text[s.pos].isalnum() or s.text[s.pos] == "-"):
            s.pos += 1
        key = s.text[key_start:s.pos]
        if not key:
            raise s.fail("expected option name")
        if key not in _KNOWN_KEYS:
            raise s.fail(f"unknown option: {key}", key_start)

        if key == "nocase":
            s.expect(";")
            if not contents:
                raise s.fail("nocase without preceding content", key_start)
            contents[-1] = Content(contents[-1].pattern, nocase=True)
            continue

        s.expect(":")
        if key in _QUOTED_KEYS:
            raw, vstart = s.quoted()
            if key == "content":
                pattern = _decode_content(raw, s, vstart)
                if not pattern:
                    raise s.fail("empty content", vstart)
                contents.append(Content(pattern))
            else:
                if key in seen:
                    raise s.fail(f"duplicate option: {key}", key_start)
                seen[key] = _unescape_text(raw, s, vstart)
        else:
            if key in seen:
                raise s.fail(f"duplicate option: {key}", key_start)
            value, vstart = s.until_semicolon(f"value for {key}")
            if key == "host-category":
                try:
                    seen[key] = HostCategory(value.strip('"'))
                except ValueError:
                    raise s.fail(f"invalid host-category: {value}", vstart) from None
            else:
                seen[key] = _parse_int(value, key, s, vstart)
                if key == "priority" and not 1 <= seen[key] <= 5:
                    raise s.fail("priority out of range (1-5)", vstart)
                if key == "ttl" and seen[key] <= 0:
                    raise s.fail("ttl must be positive", vstart)
        s.expect(";")

    if not s.at_end():
        raise s.fail("unexpected text after ')'")
    if "sid" not in seen:
        raise s.fail("missing option: sid")

    host_category = seen.get("host-category")
    if proto is RuleProto.HOST:
        if host_category is None:
            raise s.fail("host rule requires host-category", 0)
        if any(x is not None for x in (src_net, src_port, dst_net, dst_port)):
            raise s.fail("host rule addresses and ports must be 'any'", 0)
        if contents:
            raise s.fail("host rule cannot carry content", 0)
    else:
        if host_category is not None:
            raise s.fail("host-category requires protocol 'host'", 0)
        if "user" in seen or "vm" in seen:
            raise s.fail("user/vm options require protocol 'host'", 0)

    return Rule(
        action=action,
        proto=proto,
        sid=seen["sid"],
        src_net=src_net,
        src_port=src_port,
        dst_net=dst_net,
        dst_port=dst_port,
        contents=tuple(contents),
        host_category=host_category,
        user=seen.get("user"),
        vm=seen.get("vm"),
        msg=seen.get("msg", ""),
        priority=seen.get("priority", DEFAULT_PRIORITY),
        ttl_s=seen.get("ttl", DEFAULT_TTL_S),
    )


def parse_ruleset(text: str) -> list[Rule]:
    """Parse a rules file. Duplicate sids are an error."""
    rules: list[Rule] = []
    sids: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rule = parse_rule(stripped, lineno)
        if rule.sid in sids:
            raise DuplicateSidError(f"duplicate sid {rule.sid} (first defined on line {sids[rule.sid]})", line=lineno)
        sids[rule.sid] = lineno
        rules.append(rule)
    logger.debug(f"[rules] Parsed {len(rules)} rules")
    return rules


def load_ruleset(path) -> list[Rule]:
    with open(path, "r", encoding="utf-8") as f:
        rules = parse_ruleset(f.read())
    logger.info(f"[rules] Loaded {len(rules)} rules from {path}")
    return rules


# =============================================================================
# SERIALIZER
# =============================================================================

def _escape_char(ch: str) -> str:
    if ch in ('"', "\\"):
        return "\\" + ch
    if ch.isprintable():
        return ch
    code = ord(ch)
    if code <= 0xFF:
        return f"\\x{code:02x}"
    if code <= 0xFFFF:
        return f"\\u{code:04x}"
    return f"\\U{code:08x}"


def _escape_text(value: str) -> str:
    return "".join(_escape_char(ch) for ch in value)


def _encode_content(pattern: bytes) -> str:
    out = []
    hex_run: list[str] = []
    for b in pattern:
        if 0x20 <= b <= 0x7E and b not in (0x22, 0x5C, 0x7C):
            if hex_run:
                out.append("|" + " ".join(hex_run) + "|")
                hex_run = []
            out.append(chr(b))
        else:
            hex_run.append(f"{b:02x}")
    if hex_run:
        out.append("|" + " ".join(hex_run) + "|")
    return "".join(out)


def _addr(net: IPv4Network | None) -> str:
    return "any" if net is None else str(net.with_prefixlen)


def _port(spec: PortSpec | None) -> str:
    return "any" if spec is None else str(spec)


def serialize_rule(r: Rule) -> str:
    """Canonical single-line form; ttl is omitted when it is the default."""
    opts = [f'msg:"{_escape_text(r.msg)}";']
    if r.host_category is not None:
        opts.append(f"host-category:{r.host_category.value};")
    if r.user is not None:
        opts.append(f'user:"{_escape_text(r.user)}";')
    if r.vm is not None:
        opts.append(f'vm:"{_escape_text(r.vm)}";')
    for c in r.contents:
        opts.append(f'content:"{_encode_content(c.pattern)}";')
        if c.nocase:
            opts.append("nocase;")
    opts.append(f"sid:{r.sid};")
    opts.append(f"priority:{r.priority};")
    if r.ttl_s != DEFAULT_TTL_S:
        opts.append(f"ttl:{r.ttl_s};")
    header = (
        f"{r.action.value} {r.proto.value} {_addr(r.src_net)} {_port(r.src_port)}"
        f" -> {_addr(r.dst_net)} {_port(r.dst_port)}"
    )
    return f"{header} ({' '.join(opts)})"


def serialize_ruleset(rules: list[Rule]) -> str:
    return "".join(serialize_rule(r) + "\n" for r in rules)
