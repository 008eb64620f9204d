from fractions import Fraction

import numpy as np
import pytest

from tempest.attacker import (
    BroadcastFlood,
    DnsRedirect,
    SlowDrift,
    SpoofedReply,
    attack_from_dict,
    flood_tick,
    on_observe,
    redirect,
)
from tempest.ntp_codec import Mode, NtpTimestamp, SntpPacket
from tempest.sync_client import Accept, Ignored, ServerRole, SntpClient, SyncPolicy

EPOCH = Fraction(3_900_000_000)


def victim_request(clock, true_now=0):
    client = SntpClient(SyncPolicy(poll_interval_s=4096))
    request, _ = client.begin_poll(clock, true_now)
    return client, request


def test_spoof_echoes_originate_and_is_accepted():
    clock = EPOCH + Fraction("0.123456789")
    client, request = victim_request(clock)
    (reply,) = on_observe(SpoofedReply(target="dc"), request)
    assert reply.mode == Mode.SERVER
    assert reply.originate_ts == request.transmit_ts
    result = client.handle_reply(reply, clock, 0)
    assert isinstance(result, Accept)
    assert abs(result.offset_s - 240) < Fraction(1, 2**31)


def test_spoof_offset_exact_when_rtt_known():
    clock = EPOCH + Fraction(1, 3)
    rtt = Fraction(1, 32)
    client, request = victim_request(clock)
    (reply,) = on_observe(SpoofedReply(target="dc", assumed_rtt_s=float(rtt)), request)
    result = client.handle_reply(reply, clock + rtt, rtt)
    assert result.offset_s == 240
    assert result.sample.delay_s == rtt


def test_implied_delay_is_configurable():
    client, request = victim_request(EPOCH)
    attack = SpoofedReply(target="dc", implied_delay_s=0.5, assumed_rtt_s=0.125)
    (reply,) = on_observe(attack, request)
    assert reply.transmit_ts.to_seconds() - reply.receive_ts.to_seconds() == Fraction(1, 2)
    result = client.handle_reply(reply, EPOCH + Fraction(1, 8), Fraction(1, 8))
    # a hold longer than the round trip shows up as negative delay
    assert result.offset_s == 240 and result.sample.delay_s == Fraction(-3, 8)


def test_slow_drift_offset():
    client, request = victim_request(EPOCH)
    (reply,) = on_observe(SlowDrift(target="dc"), request)
    assert client.handle_reply(reply, EPOCH, 0).offset_s == 30


def test_blind_attacker_forges_nothing():
    _, request = victim_request(EPOCH)
    assert on_observe(SpoofedReply(target="dc", observes_requests=False), request) == []
    assert on_observe(BroadcastFlood(), request) == []
    assert on_observe(SpoofedReply(target="dc"), SntpPacket(mode=Mode.SERVER)) == []


def test_drift_accounting_over_polls():
    # +240 s per accepted poll: after n polls the clock is exactly 240 n ahead
    offset = Fraction(0)
    rtt = Fraction(1, 32)
    for n in range(1, 31):
        true_send = Fraction(4096 * n)
        clock = EPOCH + true_send + offset
        client, request = victim_request(clock, true_send)
        (reply,) = on_observe(SpoofedReply(target="dc", assumed_rtt_s=float(rtt)), request)
        offset += client.handle_reply(reply, clock + rtt, true_send + rtt).offset_s
        assert offset == 240 * n


def test_flood_tick_count_and_content():
    rng = np.random.default_rng(1)
    packets = flood_tick(BroadcastFlood(packets_per_second=1000), EPOCH, 1.0, rng)
    assert len(packets) == 1000
    assert {p.mode for p in packets} == {Mode.BROADCAST}
    assert len({p.originate_ts for p in packets}) > 990
    assert all(p.transmit_ts == NtpTimestamp.from_seconds(EPOCH + 240) for p in packets)
    assert len(flood_tick(BroadcastFlood(packets_per_second=1000), EPOCH, 0.0125, rng)) == 12


def test_zero_rate_flood():
    assert flood_tick(BroadcastFlood(packets_per_second=0), EPOCH, 1.0) == []


def test_flood_against_default_and_permissive_clients():
    packets = flood_tick(BroadcastFlood(packets_per_second=50), EPOCH, 1.0, np.random.default_rng(3))
    strict = SntpClient()
    assert all(isinstance(strict.on_broadcast(p, EPOCH), Ignored) for p in packets)
    lax = SntpClient(SyncPolicy(accept_broadcast=True))
    results = [lax.on_broadcast(p, EPOCH) for p in packets]
    assert all(isinstance(r, Accept) and r.offset_s == 240 for r in results)


def test_redirect_is_scoped():
    override = redirect(DnsRedirect(victim="c1", attacker_server="evil", start_s=100, end_s=200))
    assert override.role is ServerRole.EXTERNAL_SERVER
    assert override.to_node == "evil"
    assert [override.active(t) for t in (99, 100, 199, 200)] == [False, True, True, False]
    with pytest.raises(TypeError):
        redirect(SlowDrift(target="dc"))


def test_from_dict():
    spec = attack_from_dict({"variant": "slow_drift", "target": "dc", "per_interval_offset_s": 30})
    assert spec == SlowDrift(target="dc")
    with pytest.raises(ValueError):
        attack_from_dict({"variant": "ddos"})
    with pytest.raises(ValueError):
        BroadcastFlood(packets_per_second=-1)
