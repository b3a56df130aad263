"""Interval send scheduling with a fast cadence for critical entities."""

from __future__ import annotations

from fractions import Fraction
from math import floor


class SendScheduler:
    """Decides which cadence is due on a given physics tick.

    A cadence of ``rate`` Hz on a ``dt`` tick fires at tick k whenever
    floor(k * rate * dt) advances, which spreads sends evenly and gives an
    exact long-run mean interval of 1/rate even when rate does not divide the
    tick rate. Arithmetic is rational so there is no drift.
    """

    def __init__(self, dt: float = 0.02, default_rate: float = 12.0, critical_rate: float = 48.0,
                 critical=(), move_timeout_intervals: float = 2.0):
        if not dt > 0:
            raise ValueError("dt must be positive")
        tick_rate = 1.0 / dt
        for r in (default_rate, critical_rate):
            if not 0 < r <= tick_rate + 1e-9:
                raise ValueError(f"send rate {r} must be in (0, {tick_rate:g}]")
        self.dt = dt
        self.default_rate = default_rate
        self.critical_rate = critical_rate
        self._default_step = Fraction(default_rate).limit_denominator(10000) * Fraction(dt).limit_denominator(10**6)
        self._critical_step = Fraction(critical_rate).limit_denominator(10000) * Fraction(dt).limit_denominator(10**6)
        self.configured: set[int] = set(critical)
        # commands refresh criticality; it lapses after this many ticks without one
        self.move_timeout_ticks = move_timeout_intervals / (default_rate * dt)
        self.last_command: dict[int, int] = {}

    @staticmethod
    def _fires(step: Fraction, tick: int) -> bool:
        return floor(tick * step) != floor((tick - 1) * step)

    def default_due(self, tick: int) -> bool:
        return self._fires(self._default_step, tick)

    def critical_due(self, tick: int) -> bool:
        return self._fires(self._critical_step, tick)

    def note_command(self, entity: int, tick: int):
        self.last_command[entity] = tick

    def forget(self, entity: int):
        self.last_command.pop(entity, None)
        self.configured.discard(entity)

    def commanded(self, tick: int) -> set[int]:
        stale = [e for e, t in self.last_command.items() if tick - t > self.move_timeout_ticks]
        for e in stale:
            del self.last_command[e]
        return set(self.last_command)

    def interval_ticks(self, critical: bool = False) -> float:
        return 1.0 / ((self.critical_rate if critical else self.default_rate) * self.dt)
