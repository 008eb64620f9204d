"""Simulated clocks and the NTP offset/delay estimate.

Clock values are exact :class:`~fractions.Fraction` seconds so that
multi-day scenarios do not accumulate rounding error. ``SimClock`` is an
immutable snapshot; corrections return a new clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Union

__all__ = [
    "Step",
    "Slew",
    "Discipline",
    "SimClock",
    "SyncSample",
    "compute_offset_delay",
    "as_fraction",
]

_PPM = Fraction(1, 10**6)


def as_fraction(value) -> Fraction:
    """Exact conversion; floats are routed through ``repr`` so 0.1 means 1/10."""
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def compute_offset_delay(t1, t2, t3, t4):
    """Return ``(offset, delay)`` for one client/server exchange.

    ``t1`` client send, ``t2`` server receive, ``t3`` server send, ``t4``
    client receive. Inputs are not checked for causality; a reordered
    exchange simply shows up as a negative delay.
    """
    offset = ((t2 - t1) + (t3 - t4)) / 2
    delay = (t4 - t1) - (t3 - t2)
    return offset, delay


@dataclass(frozen=True)
class Step:
    """Corrections jump the clock immediately."""


@dataclass(frozen=True)
class Slew:
    """Corrections are amortized at no more than ``max_slew_ppm``."""

    max_slew_ppm: float = 500.0

    def __post_init__(self) -> None:
        if not 0 < self.max_slew_ppm:
            raise ValueError("max_slew_ppm must be positive")

    @property
    def rate(self) -> Fraction:
        return as_fraction(self.max_slew_ppm) * _PPM


Discipline = Union[Step, Slew]


@dataclass(frozen=True)
class SimClock:
    """A node's view of time.

    ``read(t) = t + base_offset_s + drift_ppm * 1e-6 * (t - created_at)``
    plus whatever part of an in-flight slew has been applied by ``t``.
    A drift of -1e6 ppm freezes the clock.
    """

    base_offset_s: Fraction = Fraction(0)
    drift_ppm: Fraction = Fraction(0)
    discipline: Discipline = field(default_factory=Step)
    created_at: Fraction = Fraction(0)
    slew_start: Fraction = Fraction(0)
    slew_amount: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        for name in ("base_offset_s", "drift_ppm", "created_at", "slew_start", "slew_amount"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))

    @classmethod
    def frozen_at(cls, reading, true_time=0) -> SimClock:
        """A clock that reads ``reading`` forever from ``true_time`` on."""
        t = as_fraction(true_time)
        return cls(base_offset_s=as_fraction(reading) - t, drift_ppm=Fraction(-(10**6)), created_at=t)

    def _slewed(self, t: Fraction) -> Fraction:
        if not self.slew_amount:
            return Fraction(0)
        rate = self.discipline.rate
        done = min((t - self.slew_start) * rate, abs(self.slew_amount))
        return done if self.slew_amount > 0 else -done

    def read(self, true_time) -> Fraction:
        t = as_fraction(true_time)
        if t < self.created_at:
            raise ValueError(f"true time {float(t)} precedes clock creation at {float(self.created_at)}")
        elapsed = t - self.created_at
        return t + self.base_offset_s + self.drift_ppm * _PPM * elapsed + self._slewed(t)

    @property
    def slew_completes_at(self) -> Fraction | None:
        """True time at which the pending slew is fully applied, if any."""
        if not self.slew_amount:
            return None
        return self.slew_start + abs(self.slew_amount) / self.discipline.rate

    def step(self, offset_s, now) -> SimClock:
        """Jump by ``offset_s`` regardless of discipline (an operator setting the clock)."""
        now = as_fraction(now)
        applied = self._slewed(now)
        return replace(
            self,
            base_offset_s=self.base_offset_s + applied + as_fraction(offset_s),
            slew_amount=self.slew_amount - applied,
            slew_start=now,
        )

    def apply_correction(self, offset_s, now) -> SimClock:
        """Apply a sync correction according to the clock's discipline."""
        if isinstance(self.discipline, Step):
            return self.step(offset_s, now)
        now = as_fraction(now)
        applied = self._slewed(now)
        return replace(
            self,
            base_offset_s=self.base_offset_s + applied,
            slew_amount=self.slew_amount - applied + as_fraction(offset_s),
            slew_start=now,
        )


@dataclass(frozen=True)
class SyncSample:
    t1: Fraction
    t2: Fraction
    t3: Fraction
    t4: Fraction
    offset_s: Fraction
    delay_s: Fraction

    @classmethod
    def from_times(cls, t1, t2, t3, t4) -> SyncSample:
        offset, delay = compute_offset_delay(t1, t2, t3, t4)
        return cls(t1, t2, t3, t4, offset, delay)
