from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import slew_by_integration, two_party_replay
from tempest.ntp_codec import NtpTimestamp
from tempest.timekeeping import SimClock, Slew, Step, SyncSample, compute_offset_delay

# micro-second grid values, as the simulator uses
micros = st.integers(-(10**12), 10**12).map(lambda n: Fraction(n, 10**6))
latencies = st.integers(0, 5 * 10**6).map(lambda n: Fraction(n, 10**6))


@pytest.mark.parametrize(
    "times, expected",
    [
        ((0, 0, 0, 0), (0, 0)),
        ((0, 100, 100, 0), (100, 0)),
        ((0, 242, 242, 2), (241, 2)),
    ],
)
def test_offset_delay_examples(times, expected):
    assert compute_offset_delay(*map(Fraction, times)) == expected


@given(micros, micros, latencies, latencies)
def test_symmetric_exchange_recovers_difference(c, s, d, hold):
    t1, t2, t3, t4 = two_party_replay(c, s, d, hold)
    offset, delay = compute_offset_delay(t1, t2, t3, t4)
    assert offset == s - c
    assert delay == 2 * d


@given(micros, micros, latencies)
def test_swapping_roles_negates_offset(c, s, d):
    t1, t2, t3, t4 = two_party_replay(c, s, d)
    fwd = compute_offset_delay(t1, t2, t3, t4)
    # the server now initiates: its send/receive stamps bracket the client's
    u1, u2, u3, u4 = two_party_replay(s, c, d)
    back = compute_offset_delay(u1, u2, u3, u4)
    assert back[0] == -fwd[0]
    assert back[1] == fwd[1]


@given(micros, micros, latencies)
def test_quantized_timestamps_stay_within_one_tick(c, s, d):
    base = Fraction(3_900_000_000)
    stamps = [NtpTimestamp.from_seconds(base + t).to_seconds() for t in two_party_replay(c, s, d)]
    offset, _ = compute_offset_delay(*stamps)
    assert abs(offset - (s - c)) <= Fraction(1, 2**32)


def test_causality_violation_shows_as_negative_delay():
    _, delay = compute_offset_delay(Fraction(10), Fraction(5), Fraction(5), Fraction(9))
    assert delay == -1


def test_sync_sample_matches_formula():
    s = SyncSample.from_times(Fraction(0), Fraction(242), Fraction(242), Fraction(2))
    assert (s.offset_s, s.delay_s) == (241, 2)


def test_read_examples():
    assert SimClock().read(50) == 50
    assert SimClock(base_offset_s=7200).read(0) == 7200
    assert SimClock(drift_ppm=100).read(10_000) == Fraction("10001.0")


def test_read_before_creation_rejected():
    with pytest.raises(ValueError):
        SimClock(created_at=10).read(5)


def test_frozen_clock():
    clock = SimClock.frozen_at(1800)
    assert clock.read(0) == clock.read(30 * 86400) == 1800


def test_step_back_by_four_minutes():
    clock = SimClock(base_offset_s=1000)
    before = clock.read(500)
    after = clock.apply_correction(-240, 500).read(500)
    assert before - after == 240


def test_step_is_default_discipline():
    assert isinstance(SimClock().discipline, Step)


def test_slew_zero_correction_changes_nothing():
    clock = SimClock(discipline=Slew(500))
    slewed = clock.apply_correction(0, 100)
    assert slewed.slew_completes_at is None
    assert [slewed.read(t) for t in (100, 1000, 5000)] == [clock.read(t) for t in (100, 1000, 5000)]


def test_slew_one_second_takes_2000_s():
    done_at, trace = slew_by_integration(1, 500)
    assert done_at == 2000
    clock = SimClock(discipline=Slew(500)).apply_correction(1, 0)
    assert clock.slew_completes_at == done_at
    # every 100 s of the integration trace (1000 ticks of 0.1 s)
    for k in range(0, len(trace), 1000):
        t = Fraction(k, 10)
        assert clock.read(t) - t == trace[k]
    assert clock.read(2000) == 2001
    assert clock.read(5000) == 5001


@given(st.integers(-5000, 5000), st.sampled_from([1, 100, 500, 10_000, 500_000]))
def test_slew_of_negative_correction_never_runs_backward(correction, ppm):
    clock = SimClock(discipline=Slew(ppm)).apply_correction(correction, 0)
    end = int(clock.slew_completes_at or 0) + 10
    step = max(1, end // 200)
    readings = [clock.read(t) for t in range(0, end, step)]
    assert readings == sorted(readings)


def test_slew_correction_mid_slew_is_folded():
    clock = SimClock(discipline=Slew(500)).apply_correction(1, 0)
    clock = clock.apply_correction(1, 1000)  # half done; 1.5 s left
    assert clock.read(1000) == Fraction("1000.5")
    assert clock.slew_completes_at == 1000 + 3000
    assert clock.read(4000) == 4002


def test_operator_step_ignores_slew_discipline():
    clock = SimClock(discipline=Slew(500)).step(7200, 10)
    assert clock.read(10) == 7210
