"""Time-synchronization attacks on IRM clients: simulator and NTP filter."""

__version__ = "0.1.0"
