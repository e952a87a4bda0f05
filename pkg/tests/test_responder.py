import pytest

from app.pipeline.responder import (
    BlockTable, ReasonKind, ResponseAction, ResponseKind, apply, expire, is_blocked,
)
from tests.factories import host, net


def test_alert_only_leaves_table_unchanged():
    bt = BlockTable()
    assert apply(bt, ResponseAction.alert_only(), 10.0) is bt


def test_block_attacker_window_is_half_open():
    bt = apply(BlockTable(), ResponseAction.block_attacker("6.6.6.6", 60), 100.0)
    assert is_blocked(bt, net(src="6.6.6.6"), 100.0).kind is ReasonKind.ATTACKER_BLOCKED
    assert is_blocked(bt, net(src="6.6.6.6"), 159.999) is not None
    assert is_blocked(bt, net(src="6.6.6.6"), 160.0) is None
    assert is_blocked(bt, net(src="6.6.6.7"), 120.0) is None


def test_reblock_only_extends():
    bt = apply(BlockTable(), ResponseAction.block_attacker("a", 100), 0.0)
    shorter = apply(bt, ResponseAction.block_attacker("a", 10), 50.0)
    assert shorter.attackers["a"] == 100.0
    longer = apply(bt, ResponseAction.block_attacker("a", 100), 50.0)
    assert longer.attackers["a"] == 150.0
    assert bt.attackers["a"] == 100.0


def test_session_precedes_attacker():
    bt = BlockTable()
    bt = apply(bt, ResponseAction.block_attacker("10.0.0.1", 300), 0.0)
    bt = apply(bt, ResponseAction.terminate_session("s-1", 300), 0.0)
    reason = is_blocked(bt, net(session_id="s-1"), 1.0)
    assert reason.kind is ReasonKind.SESSION_TERMINATED
    assert is_blocked(bt, net(session_id="s-2"), 1.0).kind is ReasonKind.ATTACKER_BLOCKED


def test_block_target_covers_ip_and_vm():
    bt = apply(BlockTable(), ResponseAction.block_target("vm:vm-2", 30), 0.0)
    assert is_blocked(bt, net(dst="10.9.9.9", vm_dst="vm-2"), 5.0).kind is ReasonKind.TARGET_BLOCKED
    bt = apply(BlockTable(), ResponseAction.block_target("10.0.0.2", 30), 0.0)
    assert is_blocked(bt, net(dst="10.0.0.2"), 5.0).key == "10.0.0.2"


def test_host_events_blocked_by_user_at_vm():
    bt = apply(BlockTable(), ResponseAction.block_attacker("admin@vm-2", 30), 0.0)
    assert is_blocked(bt, host(user="admin", vm="vm-2"), 1.0) is not None
    assert is_blocked(bt, host(user="admin", vm="vm-3"), 1.0) is None


def test_expire_drops_only_past_entries():
    bt = BlockTable()
    bt = apply(bt, ResponseAction.block_attacker("a", 10), 0.0)
    bt = apply(bt, ResponseAction.block_target("b", 100), 0.0)
    live = expire(bt, 10.0)
    assert "a" not in live.attackers
    assert live.targets == {"b": 100.0}
    assert [row["kind"] for row in live.entries()] == ["target"]


def test_invalid_actions():
    with pytest.raises(ValueError):
        ResponseAction(ResponseKind.BLOCK_ATTACKER, key=None)
    with pytest.raises(ValueError):
        ResponseAction.block_attacker("a", ttl_s=0)
