"""Virtual clock for the simulated working month."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, time, timedelta

from ..errors import ConfigError
from ..workdays import is_working_day

SESSION_START = time(9, 0)
SESSION_END = time(23, 59)
TURN_MINUTES = 3


@dataclass
class VirtualClock:
    current: datetime
    period_start: date
    working_days_total: int
    working_days_elapsed: int = 0

    @classmethod
    def for_period(cls, period_start: date, working_days_total: int) -> "VirtualClock":
        if working_days_total < 1:
            raise ConfigError("a simulation needs at least one working day")
        if not is_working_day(period_start):
            raise ConfigError(f"period start {period_start} is not a working day")
        return cls(datetime.combine(period_start, SESSION_START), period_start, working_days_total)

    def start_day(self, day: date) -> None:
        """Move to 09:00 on ``day``; the clock never runs backwards."""
        if not is_working_day(day):
            raise ConfigError(f"{day} is not a working day")
        start = datetime.combine(day, SESSION_START)
        if start < self.current.replace(hour=0, minute=0):
            raise ConfigError(f"clock cannot move back from {self.current} to {start}")
        self.current = max(start, self.current)

    def tick(self, minutes: int = TURN_MINUTES) -> None:
        cap = datetime.combine(self.current.date(), SESSION_END)
        self.current = min(self.current + timedelta(minutes=minutes), cap)

    def finish_day(self) -> None:
        if self.working_days_elapsed >= self.working_days_total:
            raise ConfigError("period already complete")
        self.working_days_elapsed += 1
