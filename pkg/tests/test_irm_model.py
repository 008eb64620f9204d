from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tempest.irm_model import (
    CERT_LIFETIME_S,
    CertificateExpired,
    ClientCrashed,
    DenyReason,
    DocumentPolicy,
    Health,
    KerberosResult,
    PolicyDenied,
    Right,
    RmsClient,
    ServerUnreachable,
    kerberos_gate,
)

DOC = DocumentPolicy("doc", 0, 3600, {Right.READ})


@pytest.fixture
def client():
    c = RmsClient({"doc": DOC, "copy-only": DocumentPolicy("copy-only", 0, 3600, {Right.COPY})})
    return c


def test_cert_valid_31_days(client):
    assert CERT_LIFETIME_S == 2_678_400
    assert client.cert_valid_until - client.cert_issued_at == 2_678_400


def test_acquire_online_copies_window(client):
    lic = client.acquire_license("doc", True, 10)
    assert (lic.not_before, lic.not_after) == (0, 3600)
    assert lic.rights == {Right.READ}
    assert client.license_cache["doc"] is lic
    assert lic.key_token


def test_acquire_offline_without_cache(client):
    with pytest.raises(ServerUnreachable):
        client.acquire_license("doc", False, 10)


def test_acquire_offline_uses_cache(client):
    lic = client.acquire_license("doc", True, 10)
    assert client.acquire_license("doc", False, 10**6) is lic


def test_acquire_when_crashed(client):
    client.observe_time_change(0, 7200)
    with pytest.raises(ClientCrashed):
        client.acquire_license("doc", True, 7200)


def test_policy_denied():
    c = RmsClient({"doc": DocumentPolicy("doc", 0, 10, principals={"bob"})}, principal="alice")
    with pytest.raises(PolicyDenied):
        c.acquire_license("doc", True, 0)
    with pytest.raises(PolicyDenied):
        c.acquire_license("missing", True, 0)


def test_cert_expiry_gates_acquisition(client):
    with pytest.raises(CertificateExpired):
        client.acquire_license("doc", True, CERT_LIFETIME_S + 1)


def test_frozen_clock_keeps_access(client):
    client.acquire_license("doc", True, 10)
    # true time is irrelevant: only the client's reading is consulted
    assert client.open_document("doc", 3599).allowed


def test_expired_at_boundary(client):
    client.acquire_license("doc", True, 10)
    assert client.open_document("doc", 3600).allowed
    assert client.open_document("doc", 3601).reason is DenyReason.EXPIRED


def test_not_yet_valid_and_no_license(client):
    assert client.open_document("doc", 0).reason is DenyReason.NO_LICENSE
    client.acquire_license("doc", True, 10)
    assert client.open_document("doc", -1).reason is DenyReason.NOT_YET_VALID


def test_read_right_required(client):
    client.acquire_license("copy-only", True, 10)
    assert client.open_document("copy-only", 10).reason is DenyReason.NO_READ_RIGHT


def test_crashed_denies(client):
    client.acquire_license("doc", True, 10)
    client.observe_time_change(10, 7210)
    assert client.open_document("doc", 20).reason is DenyReason.CRASHED


def test_two_hour_jump_crashes_every_time():
    outcomes = []
    for rep in range(25):
        c = RmsClient()
        start = Fraction(rep * 977)
        c.observe_time_change(start, start + 7200)
        outcomes.append(c.health)
    assert outcomes == [Health.CRASHED] * 25


def test_sub_threshold_sweep_never_crashes():
    for jump in range(0, 7200, 15):
        c = RmsClient()
        c.observe_time_change(1000, 1000 + jump)
        assert c.health is Health.HEALTHY, jump
    c = RmsClient()
    c.observe_time_change(0, Fraction(7200) - Fraction(1, 10**6))
    assert c.health is Health.HEALTHY


def test_backward_sweep_never_crashes():
    for jump in range(0, 100_001, 500):
        c = RmsClient()
        c.observe_time_change(200_000, 200_000 - jump)
        assert c.health is Health.HEALTHY, jump


def test_small_forward_steps_crash_once_cumulative_threshold_reached():
    c = RmsClient()
    reading = Fraction(0)
    for step in range(1, 31):
        c.observe_time_change(reading, reading + 240)
        reading += 240
        assert c.crashed == (step >= 30)


def test_threshold_is_configurable():
    c = RmsClient(crash_threshold_s=600)
    c.observe_time_change(0, 600)
    assert c.crashed


@pytest.mark.parametrize("start", ["crashed", "healthy"])
def test_reinstall(client, start):
    client.acquire_license("doc", True, 10)
    if start == "crashed":
        client.observe_time_change(10, 7210)
    client.reinstall(500)
    assert client.health is Health.HEALTHY
    assert client.license_cache == {}
    assert client.cert_valid_until == 500 + CERT_LIFETIME_S
    assert client.open_document("doc", 600).reason is DenyReason.NO_LICENSE


@pytest.mark.parametrize(
    "skew, expected",
    [
        (0, KerberosResult.ACCEPT),
        (299, KerberosResult.ACCEPT),
        (300, KerberosResult.ACCEPT),
        (-300, KerberosResult.ACCEPT),
        (301, KerberosResult.SKEW_TOO_LARGE),
        (-301, KerberosResult.SKEW_TOO_LARGE),
        (Fraction(300) + Fraction(1, 10**6), KerberosResult.SKEW_TOO_LARGE),
    ],
)
def test_kerberos_gate(skew, expected):
    assert kerberos_gate(1000 + skew, 1000) is expected


@given(st.lists(st.integers(-(10**7), 3600), min_size=1, max_size=50))
def test_clock_within_window_never_expires(readings):
    c = RmsClient({"doc": DOC})
    c.acquire_license("doc", True, 10)
    for r in readings:
        assert c.open_document("doc", r).reason is not DenyReason.EXPIRED


@given(st.integers(3601, 10**8), st.lists(st.integers(0, 10**8), max_size=30))
def test_denial_is_monotone(first_denied, later):
    c = RmsClient({"doc": DOC})
    c.acquire_license("doc", True, 10)
    assert c.open_document("doc", first_denied).reason is DenyReason.EXPIRED
    for delta in later:
        assert c.open_document("doc", first_denied + delta).reason is DenyReason.EXPIRED
