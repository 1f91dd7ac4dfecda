"""Long-horizon simulation: virtual clock, tools, planning/execution loop, telemetry."""

from ..workdays import next_working_day
from .clock import VirtualClock
from .simulation import (
    Activity,
    DayRecord,
    SimulationConfig,
    SimulationRecord,
    WeeklyPlan,
    collaborator_turn,
    file_diff,
    load_messages,
    plan_week,
    reply_latency_draw,
    run_day,
    run_simulation,
)
from .telemetry import RunTelemetry, compute_telemetry
from .tools import Message, SimState, ToolResult, handle_tool_call, run_tool

__all__ = [
    "Activity",
    "DayRecord",
    "Message",
    "RunTelemetry",
    "SimState",
    "SimulationConfig",
    "SimulationRecord",
    "ToolResult",
    "VirtualClock",
    "WeeklyPlan",
    "collaborator_turn",
    "compute_telemetry",
    "file_diff",
    "handle_tool_call",
    "load_messages",
    "next_working_day",
    "plan_week",
    "reply_latency_draw",
    "run_day",
    "run_simulation",
    "run_tool",
]
