"""Surgical scheduling under downstream ICU bed constraints.

Assigns elective procedures to dates on a rolling horizon, trading patient
wait against convex ICU-overflow cost, with deterministic, sample-average
stochastic, and budgeted robust treatments of long-tailed length-of-stay
uncertainty, plus replay and bootstrap evaluation harnesses.
"""

from .domain import (
    AvailabilityWindow,
    CensusSeries,
    Instance,
    OverflowCostParams,
    Patient,
    Schedule,
    SurgeonCalendar,
    availability_window,
    census,
    validate_schedule,
)

__all__ = [
    "AvailabilityWindow",
    "CensusSeries",
    "Instance",
    "OverflowCostParams",
    "Patient",
    "Schedule",
    "SurgeonCalendar",
    "availability_window",
    "census",
    "validate_schedule",
]
