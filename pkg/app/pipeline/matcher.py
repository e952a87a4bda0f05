"""
Signature Matcher

Compiles a ruleset into an immutable matcher:
- content patterns from every rule go into one Aho-Corasick automaton
  (plus a second one over lower-cased text for nocase patterns)
- content-less network rules are indexed by protocol and destination port
- host rules are indexed by category

naive_match() evaluates the same semantics rule by rule and exists to check
the compiled path against.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import ahocorasick

from app.errors import DuplicateSidError
from app.pipeline.events import HostCategory, HostEvent, NetworkEvent, Proto
from app.pipeline.rules import DEFAULT_TTL_S, Action, PortSpec, Rule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Match:
    sid: int
    priority: int
    action: Action
    msg: str
    ttl_s: int = DEFAULT_TTL_S

    @classmethod
    def of(cls, rule: Rule) -> "Match":
        return cls(sid=rule.sid, priority=rule.priority, action=rule.action, msg=rule.msg, ttl_s=rule.ttl_s)


def _ordered(rules: Iterable[Rule]) -> list[Match]:
    return [Match.of(r) for r in sorted(rules, key=lambda r: (r.priority, r.sid))]


def _check_unique(rules: Sequence[Rule]) -> None:
    seen: set[int] = set()
    for r in rules:
        if r.sid in seen:
            raise DuplicateSidError(f"duplicate sid {r.sid}")
        seen.add(r.sid)


# =============================================================================
# NAIVE ORACLE
# =============================================================================

def _naive_rule_matches(rule: Rule, e: NetworkEvent | HostEvent) -> bool:
    if isinstance(e, HostEvent):
        return (
            rule.is_host_rule
            and rule.host_category == e.category
            and (rule.user is None or rule.user == e.user)
            and (rule.vm is None or rule.vm == e.vm)
        )
    if rule.is_host_rule or not rule.proto.admits(e.proto):
        return False
    if rule.src_net is not None and e.src_ip not in rule.src_net:
        return False
    if rule.dst_net is not None and e.dst_ip not in rule.dst_net:
        return False
    if rule.src_port is not None and e.src_port not in rule.src_port:
        return False
    if rule.dst_port is not None and e.dst_port not in rule.dst_port:
        return False
    for c in rule.contents:
        if c.nocase:
            if c.pattern.lower() not in e.payload.lower():
                return False
        elif c.pattern not in e.payload:
            return False
    return True


def naive_match(rules: Sequence[Rule], e: NetworkEvent | HostEvent) -> list[Match]:
    """Rule-by-rule evaluation, ordered by (priority, sid)."""
    return _ordered(r for r in rules if _naive_rule_matches(r, e))


# =============================================================================
# COMPILED RULESET
# =============================================================================

class _NetEntry(NamedTuple):
    rule: Rule
    src_mask: int
    src_addr: int
    dst_mask: int
    dst_addr: int
    src_port: PortSpec | None
    dst_port: PortSpec | None

    @classmethod
    def of(cls, rule: Rule) -> "_NetEntry":
        def net(n):
            return (0, 0) if n is None else (int(n.netmask), int(n.network_address))
        smask, saddr = net(rule.src_net)
        dmask, daddr = net(rule.dst_net)
        return cls(rule, smask, saddr, dmask, daddr, rule.src_port, rule.dst_port)

    def header_ok(self, src: int, dst: int, e: NetworkEvent) -> bool:
        if src & self.src_mask != self.src_addr or dst & self.dst_mask != self.dst_addr:
            return False
        if self.src_port is not None and not self.src_port.lo <= e.src_port <= self.src_port.hi:
            return False
        if self.dst_port is not None and not self.dst_port.lo <= e.dst_port <= self.dst_port.hi:
            return False
        return True


class _PortIndex:
    """Content-less rules for one protocol, keyed by exact destination port."""

    def __init__(self):
        self.exact: dict[int, list[_NetEntry]] = {}
        self.wide: list[_NetEntry] = []

    def add(self, entry: _NetEntry) -> None:
        port = entry.dst_port
        if port is not None and port.lo == port.hi:
            self.exact.setdefault(port.lo, []).append(entry)
        else:
            self.wide.append(entry)

    def candidates(self, dst_port: int) -> list[_NetEntry]:
        exact = self.exact.get(dst_port)
        return exact + self.wide if exact else self.wide


def _automaton(words: dict[str, int]) -> ahocorasick.Automaton | None:
    if not words:
        return None
    automaton = ahocorasick.Automaton()
    for text, key_id in words.items():
        automaton.add_word(text, key_id)
    automaton.make_automaton()
    return automaton


class CompiledRuleset:
    """Immutable matcher over a fixed list of rules. add_rule() builds a new one."""

    def __init__(self, rules: Iterable[Rule] = (), generation: int = 1):
        self.rules: tuple[Rule, ...] = tuple(rules)
        _check_unique(self.rules)
        self.generation = generation

        self._host: dict[HostCategory, list[Rule]] = {}
        self._plain: dict[Proto, _PortIndex] = {p: _PortIndex() for p in Proto}
        self._content: list[_NetEntry] = []
        self._needed: list[int] = []
        self._by_key: dict[int, list[int]] = {}
        exact_words: dict[str, int] = {}
        folded_words: dict[str, int] = {}

        for rule in self.rules:
            if rule.is_host_rule:
                self._host.setdefault(rule.host_category, []).append(rule)
                continue
            entry = _NetEntry.of(rule)
            if not rule.contents:
                for proto in Proto:
                    if rule.proto.admits(proto):
                        self._plain[proto].add(entry)
                continue

            idx = len(self._content)
            self._content.append(entry)
            keys: set[int] = set()
            for c in rule.contents:
                # latin-1 maps bytes 0-255 one-to-one onto code points
                if c.nocase:
                    table, text = folded_words, c.pattern.lower().decode("latin-1")
                else:
                    table, text = exact_words, c.pattern.decode("latin-1")
                if text not in table:
                    table[text] = len(exact_words) + len(folded_words)
                keys.add(table[text])
            self._needed.append(len(keys))
            for key_id in keys:
                self._by_key.setdefault(key_id, []).append(idx)

        self._exact = _automaton(exact_words)
        self._folded = _automaton(folded_words)
        logger.debug(
            f"[matcher] Compiled generation {self.generation}: {len(self.rules)} rules, "
            f"{len(exact_words) + len(folded_words)} content patterns"
        )

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def sids(self) -> set[int]:
        return {r.sid for r in self.rules}

    def _content_hits(self, e: NetworkEvent) -> list[Rule]:
        found: set[int] = set()
        if self._exact is not None:
            found.update(v for _, v in self._exact.iter(e.payload.decode("latin-1")))
        if self._folded is not None:
            found.update(v for _, v in self._folded.iter(e.payload.lower().decode("latin-1")))
        if not found:
            return []
        counts: dict[int, int] = {}
        for key_id in found:
            for idx in self._by_key[key_id]:
                counts[idx] = counts.get(idx, 0) + 1
        src, dst = int(e.src_ip), int(e.dst_ip)
        hits = []
        for idx, n in counts.items():
            if n != self._needed[idx]:
                continue
            entry = self._content[idx]
            if entry.rule.proto.admits(e.proto) and entry.header_ok(src, dst, e):
                hits.append(entry.rule)
        return hits

    def match(self, e: NetworkEvent | HostEvent) -> list[Match]:
        if isinstance(e, HostEvent):
            return _ordered(
                r for r in self._host.get(e.category, ())
                if (r.user is None or r.user == e.user) and (r.vm is None or r.vm == e.vm)
            )
        src, dst = int(e.src_ip), int(e.dst_ip)
        hits = [
            entry.rule for entry in self._plain[e.proto].candidates(e.dst_port)
            if entry.header_ok(src, dst, e)
        ]
        if self._content and e.payload:
            hits.extend(self._content_hits(e))
        return _ordered(hits) if hits else []


def compile_ruleset(rules: Iterable[Rule]) -> CompiledRuleset:
    """Build generation 1 of a matcher."""
    return CompiledRuleset(rules, generation=1)


def match_event(cr: CompiledRuleset, e: NetworkEvent | HostEvent) -> list[Match]:
    return cr.match(e)


def add_rule(cr: CompiledRuleset, rule: Rule) -> CompiledRuleset:
    """New ruleset with one more rule and the next generation; cr is left as is."""
    if rule.sid in cr.sids:
        raise DuplicateSidError(f"duplicate sid {rule.sid}")
    return CompiledRuleset(cr.rules + (rule,), generation=cr.generation + 1)
