"""Behavioral model of an RMS/IRM client.

Cryptography is opaque: a license carries a token that stands for the
wrapped content key, nothing more. What matters here is timing. Licenses
are cached for offline use and their expiry is judged against the client's
own clock, and the client crashes when it sees its clock pushed forward too
far.
"""

from __future__ import annotations

import enum
import hashlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from fractions import Fraction

from .timekeeping import as_fraction

__all__ = [
    "CERT_LIFETIME_S",
    "KERBEROS_MAX_SKEW_S",
    "Right",
    "Health",
    "DenyReason",
    "DocumentPolicy",
    "UseLicense",
    "AccessDecision",
    "IrmError",
    "ServerUnreachable",
    "PolicyDenied",
    "ClientCrashed",
    "CertificateExpired",
    "RmsClient",
    "KerberosResult",
    "kerberos_gate",
]

CERT_LIFETIME_S = 31 * 86_400
KERBEROS_MAX_SKEW_S = 300


class Right(str, enum.Enum):
    READ = "read"
    COPY = "copy"
    EDIT = "edit"


class Health(str, enum.Enum):
    HEALTHY = "healthy"
    CRASHED = "crashed"


class DenyReason(str, enum.Enum):
    EXPIRED = "expired"
    NOT_YET_VALID = "not_yet_valid"
    NO_LICENSE = "no_license"
    NO_READ_RIGHT = "no_read_right"
    CRASHED = "crashed"


class IrmError(Exception):
    pass


class ServerUnreachable(IrmError):
    pass


class PolicyDenied(IrmError):
    pass


class ClientCrashed(IrmError):
    pass


class CertificateExpired(IrmError):
    pass


def _rights(values: Iterable) -> frozenset[Right]:
    return frozenset(Right(v) for v in values)


@dataclass(frozen=True)
class DocumentPolicy:
    """Server-side policy for one protected document.

    ``principals`` of ``None`` means anyone in the tenant may acquire.
    """

    doc_id: str
    not_before: Fraction
    not_after: Fraction
    rights: frozenset[Right] = frozenset({Right.READ})
    principals: frozenset[str] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "not_before", as_fraction(self.not_before))
        object.__setattr__(self, "not_after", as_fraction(self.not_after))
        object.__setattr__(self, "rights", _rights(self.rights))
        if self.principals is not None:
            object.__setattr__(self, "principals", frozenset(self.principals))
        if self.not_before > self.not_after:
            raise ValueError(f"{self.doc_id}: not_before after not_after")


@dataclass(frozen=True)
class UseLicense:
    doc_id: str
    key_token: str
    rights: frozenset[Right]
    not_before: Fraction
    not_after: Fraction
    acquired_at: Fraction

    def __post_init__(self) -> None:
        if self.not_before > self.not_after:
            raise ValueError("not_before after not_after")


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    rights: frozenset[Right] = frozenset()
    reason: DenyReason | None = None

    def __str__(self) -> str:
        return "allowed" if self.allowed else f"denied:{self.reason.value}"


class RmsClient:
    """One node's RMS client.

    Crashes when a single clock change, or the net clock displacement since
    install, reaches ``crash_threshold_s`` in the forward direction. Once
    crashed, every document operation fails until :meth:`reinstall`.
    """

    def __init__(
        self,
        policies: Mapping[str, DocumentPolicy] | None = None,
        principal: str = "user",
        crash_threshold_s=7200,
        installed_at=0,
    ):
        self.policies = dict(policies or {})
        self.principal = principal
        self.crash_threshold_s = as_fraction(crash_threshold_s)
        self._install(as_fraction(installed_at))

    def _install(self, clock_now: Fraction) -> None:
        self.health = Health.HEALTHY
        self.license_cache: dict[str, UseLicense] = {}
        self.cert_issued_at = clock_now
        self.cert_valid_until = clock_now + CERT_LIFETIME_S
        self.last_observed_clock = clock_now
        self.net_shift_s = Fraction(0)
        self.crashed_at_clock: Fraction | None = None

    @property
    def crashed(self) -> bool:
        return self.health is Health.CRASHED

    def acquire_license(self, doc_id: str, server_reachable: bool, client_clock_now) -> UseLicense:
        """Fetch a use license, or fall back to the cached one when offline."""
        if self.crashed:
            raise ClientCrashed("RMS client has crashed; reinstall required")
        now = as_fraction(client_clock_now)
        if not server_reachable:
            try:
                return self.license_cache[doc_id]
            except KeyError:
                raise ServerUnreachable(f"no cached license for {doc_id!r} and server offline") from None
        if now > self.cert_valid_until:
            raise CertificateExpired(f"client certificate expired at {float(self.cert_valid_until)}")
        policy = self.policies.get(doc_id)
        if policy is None or (policy.principals is not None and self.principal not in policy.principals):
            raise PolicyDenied(f"{self.principal!r} may not access {doc_id!r}")
        token = hashlib.sha256(f"{self.principal}|{doc_id}|{now}".encode()).hexdigest()[:32]
        lic = UseLicense(
            doc_id=doc_id,
            key_token=token,
            rights=policy.rights,
            not_before=policy.not_before,
            not_after=policy.not_after,
            acquired_at=now,
        )
        self.license_cache[doc_id] = lic
        return lic

    def open_document(self, doc_id: str, client_clock_now) -> AccessDecision:
        # Expiry is checked against the client's clock, never true time.
        if self.crashed:
            return AccessDecision(False, reason=DenyReason.CRASHED)
        lic = self.license_cache.get(doc_id)
        if lic is None:
            return AccessDecision(False, reason=DenyReason.NO_LICENSE)
        now = as_fraction(client_clock_now)
        if now < lic.not_before:
            return AccessDecision(False, reason=DenyReason.NOT_YET_VALID)
        if now > lic.not_after:
            return AccessDecision(False, reason=DenyReason.EXPIRED)
        if Right.READ not in lic.rights:
            return AccessDecision(False, reason=DenyReason.NO_READ_RIGHT)
        return AccessDecision(True, rights=lic.rights)

    def observe_time_change(self, old_reading, new_reading) -> RmsClient:
        jump = as_fraction(new_reading) - as_fraction(old_reading)
        self.net_shift_s += jump
        self.last_observed_clock = as_fraction(new_reading)
        if not self.crashed and (jump >= self.crash_threshold_s or self.net_shift_s >= self.crash_threshold_s):
            self.health = Health.CRASHED
            self.crashed_at_clock = self.last_observed_clock
        return self

    def reinstall(self, client_clock_now=0) -> RmsClient:
        """Fresh install: healthy, empty cache, new 31-day certificate."""
        self._install(as_fraction(client_clock_now))
        return self


class KerberosResult(str, enum.Enum):
    ACCEPT = "accept"
    SKEW_TOO_LARGE = "skew_too_large"


def kerberos_gate(client_clock_now, authority_clock_now, max_skew_s=KERBEROS_MAX_SKEW_S) -> KerberosResult:
    """Reject only when the skew is strictly beyond ``max_skew_s``."""
    skew = abs(as_fraction(client_clock_now) - as_fraction(authority_clock_now))
    return KerberosResult.ACCEPT if skew <= as_fraction(max_skew_s) else KerberosResult.SKEW_TOO_LARGE
