"""Independent reference computations used to freeze expected values.

Nothing here imports the code under test.
"""

from fractions import Fraction


def two_party_replay(client_offset, server_offset, one_way, hold=0, start=Fraction(1000)):
    """Walk one exchange through true time and read each party's clock.

    Clocks are ``true + offset``. Returns the four timestamps in the order
    they are taken: client send, server receive, server send, client receive.
    """
    events = []
    t = Fraction(start)
    events.append(("client", t))
    t += Fraction(one_way)
    events.append(("server", t))
    t += Fraction(hold)
    events.append(("server", t))
    t += Fraction(one_way)
    events.append(("client", t))
    offsets = {"client": Fraction(client_offset), "server": Fraction(server_offset)}
    return [true + offsets[who] for who, true in events]


def slew_by_integration(correction, max_slew_ppm, dt=Fraction(1, 10)):
    """Apply ``correction`` in small steps of at most ``rate * dt`` per tick.

    Returns ``(completion_time, readings)`` where readings[k] is the
    accumulated adjustment after k ticks.
    """
    rate = Fraction(max_slew_ppm) / 10**6
    remaining = Fraction(correction)
    applied = Fraction(0)
    t = Fraction(0)
    readings = [applied]
    while remaining != 0:
        step = min(abs(remaining), rate * dt)
        step = step if remaining > 0 else -step
        applied += step
        remaining -= step
        t += dt if abs(step) == rate * dt else abs(step) / rate
        readings.append(applied)
    return t, readings
