from fractions import Fraction

import numpy as np
import pytest

from tempest.ntp_codec import Mode, NtpTimestamp, SntpPacket, decode, encode
from tempest.sync_client import (
    Accept,
    Ignored,
    Reject,
    RejectReason,
    ServerRole,
    SntpClient,
    SyncPolicy,
)

EPOCH = Fraction(3_900_000_000)
SERVERS = {
    ServerRole.DOMAIN_CONTROLLER: "dc",
    ServerRole.DNS_SERVER: "dns",
    ServerRole.EXTERNAL_SERVER: "time.windows.com",
}


def reply_for(request: SntpPacket, server_time, originate=None, mode=Mode.SERVER) -> SntpPacket:
    ts = NtpTimestamp.from_seconds(server_time)
    return SntpPacket(
        version=request.version,
        mode=mode,
        stratum=2,
        originate_ts=request.transmit_ts if originate is None else originate,
        receive_ts=ts,
        transmit_ts=ts,
    )


def test_policy_defaults():
    p = SyncPolicy()
    assert p.poll_interval_s == 604_800
    assert p.listen_window_s == 5
    assert p.require_originate_match and not p.accept_broadcast
    assert p.duty_cycle == pytest.approx(8.267e-6, rel=1e-3)
    assert p.duty_cycle == 5 / 604_800


@pytest.mark.parametrize("interval, window", [(5, 5), (10, 0), (4, 5)])
def test_policy_invariant(interval, window):
    with pytest.raises(ValueError):
        SyncPolicy(poll_interval_s=interval, listen_window_s=window)


def test_request_carries_subsecond_clock():
    client = SntpClient(SyncPolicy(servers=SERVERS))
    request, pending = client.begin_poll(Fraction("1000.123456"), 0)
    assert request.mode == Mode.CLIENT
    assert request.transmit_ts == NtpTimestamp.from_seconds(Fraction("1000.123456"))
    assert request.transmit_ts.fraction != 0
    assert pending.expires_at_true_time == pending.sent_at_true_time + 5
    assert decode(encode(request)) == request


def test_destination_prefers_dc():
    client = SntpClient(SyncPolicy(servers=SERVERS))
    _, pending = client.begin_poll(EPOCH, 0)
    assert pending.destination == "dc"


def test_dc_unreachable_falls_back_to_dns():
    client = SntpClient(SyncPolicy(servers=SERVERS))
    _, pending = client.begin_poll(EPOCH, 0, reachable=lambda n: n != "dc")
    assert pending.destination == "dns"


def test_one_outstanding_request():
    client = SntpClient(SyncPolicy(servers=SERVERS))
    client.begin_poll(EPOCH, 0)
    with pytest.raises(RuntimeError):
        client.begin_poll(EPOCH + 1, 1)
    client.begin_poll(EPOCH + 6, 6)  # the first one expired


def test_exact_echo_within_window_accepted():
    client = SntpClient()
    request, _ = client.begin_poll(EPOCH, 0)
    result = client.handle_reply(reply_for(request, EPOCH + 241), EPOCH + 2, 2)
    assert isinstance(result, Accept)
    assert abs(result.offset_s - 240) < Fraction(1, 2**31)
    assert abs(result.sample.delay_s - 2) < Fraction(1, 2**31)
    assert client.pending is None


def test_originate_off_by_one_ms_rejected():
    client = SntpClient()
    request, _ = client.begin_poll(EPOCH + Fraction("0.5"), 0)
    wrong = NtpTimestamp.from_seconds(request.transmit_ts.to_seconds() + Fraction(1, 1000))
    result = client.handle_reply(reply_for(request, EPOCH + 100, originate=wrong), EPOCH, 0)
    assert result == Reject(RejectReason.ORIGINATE_MISMATCH)
    assert client.pending is not None  # still waiting for the genuine reply


def test_late_reply_rejected():
    client = SntpClient()
    request, _ = client.begin_poll(EPOCH, 100)
    result = client.handle_reply(reply_for(request, EPOCH), EPOCH + 6, Fraction("105.000001"))
    assert result == Reject(RejectReason.WINDOW_CLOSED)


def test_reply_at_window_edge_accepted():
    client = SntpClient()
    request, _ = client.begin_poll(EPOCH, 100)
    assert isinstance(client.handle_reply(reply_for(request, EPOCH), EPOCH + 5, 105), Accept)


def test_no_pending_and_bad_mode():
    client = SntpClient()
    stray = SntpPacket(mode=Mode.SERVER)
    assert client.handle_reply(stray, EPOCH, 0) == Reject(RejectReason.NO_PENDING)
    request, _ = client.begin_poll(EPOCH, 0)
    assert client.handle_reply(reply_for(request, EPOCH, mode=Mode.CLIENT), EPOCH, 0) == Reject(RejectReason.BAD_MODE)


def test_every_accept_consumes_pending():
    client = SntpClient()
    request, _ = client.begin_poll(EPOCH, 0)
    reply = reply_for(request, EPOCH)
    assert isinstance(client.handle_reply(reply, EPOCH, 0), Accept)
    assert client.handle_reply(reply, EPOCH, 0) == Reject(RejectReason.NO_PENDING)


def test_millisecond_matching_mode():
    client = SntpClient(SyncPolicy(originate_match_ms=True))
    request, _ = client.begin_poll(EPOCH + Fraction("0.1234"), 0)
    near = NtpTimestamp.from_seconds(EPOCH + Fraction("0.12345"))
    assert isinstance(client.handle_reply(reply_for(request, EPOCH, originate=near), EPOCH, 0), Accept)


def test_broadcast_ignored_by_default():
    client = SntpClient()
    bcast = SntpPacket(mode=Mode.BROADCAST, transmit_ts=NtpTimestamp.from_seconds(EPOCH + 240))
    assert isinstance(client.on_broadcast(bcast, EPOCH), Ignored)


def test_broadcast_accepted_when_enabled():
    client = SntpClient(SyncPolicy(accept_broadcast=True))
    bcast = SntpPacket(mode=Mode.BROADCAST, transmit_ts=NtpTimestamp.from_seconds(EPOCH + 240))
    result = client.on_broadcast(bcast, EPOCH)
    assert isinstance(result, Accept)
    assert result.offset_s == 240


def test_blind_flood_never_matches():
    # Attacker knows the second but not the fraction the client sent.
    rng = np.random.default_rng(2024)
    client = SntpClient()
    request, _ = client.begin_poll(EPOCH + Fraction(int(rng.integers(0, 2**32)), 2**32), 0)
    second = request.transmit_ts.seconds
    accepted = 0
    for frac in rng.integers(0, 2**32, size=100_000):
        guess = SntpPacket(
            mode=Mode.SERVER,
            originate_ts=NtpTimestamp(second, int(frac)),
            receive_ts=NtpTimestamp(second + 240, 0),
            transmit_ts=NtpTimestamp(second + 240, 0),
        )
        if isinstance(client.handle_reply(guess, EPOCH, 1), Accept):
            accepted += 1
    assert accepted == 0
