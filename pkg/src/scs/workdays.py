"""Mon-Fri calendar arithmetic shared by setup and the simulation engine."""

from __future__ import annotations

from datetime import date, timedelta


def is_working_day(day: date) -> bool:
    return day.weekday() < 5


def next_working_day(day: date) -> date:
    """First Monday-to-Friday date strictly after ``day``."""
    nxt = day + timedelta(days=1)
    while not is_working_day(nxt):
        nxt += timedelta(days=1)
    return nxt


def first_working_day_on_or_after(day: date) -> date:
    return day if is_working_day(day) else next_working_day(day)


def working_days(start: date, count: int) -> list[date]:
    """``count`` consecutive working days beginning at ``start`` (rolled forward if needed)."""
    if count < 1:
        return []
    days = [first_working_day_on_or_after(start)]
    while len(days) < count:
        days.append(next_working_day(days[-1]))
    return days


def week_groups(days: list[date]) -> list[list[date]]:
    """Split consecutive working days into ISO-week buckets, in order."""
    groups: list[list[date]] = []
    current_key = None
    for day in days:
        key = day.isocalendar()[:2]
        if key != current_key:
            groups.append([])
            current_key = key
        groups[-1].append(day)
    return groups
