"""Configuration model for the synthetic corpus generator."""

from datetime import date
from enum import Enum
from typing import Dict

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.domain import WorkCalendar


MINUTES_PER_DAY = 24 * 60
# longest run of minutes an injected scenario occupies
PLANTED_SPAN_MINUTES = 15
# benign days need room for logon, activity and logoff
MIN_WORK_MINUTES = 4 * 60


class Scenario(str, Enum):
    EXFIL_DEVICE = "exfil_device"
    MASS_EXTERNAL_EMAIL = "mass_external_email"
    OFFHOUR_ACCESS = "offhour_access"


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    users: int = 10
    days: int = 5
    seed: int = 0
    scenario_rate: float = 0.1
    corporate_domain: str = "dtaa.com"
    scenario_mix: Dict[Scenario, float] = Field(
        default_factory=lambda: {s: 1.0 for s in Scenario}
    )
    # first generated workday
    start_date: date = date(2010, 1, 4)
    calendar: WorkCalendar = Field(default_factory=WorkCalendar)

    @model_validator(mode="after")
    def check_ranges(self):
        if self.users < 1 or self.days < 1:
            raise ValueError("users and days must be positive")
        if not 0 <= self.scenario_rate <= 0.5:
            raise ValueError("scenario_rate must lie in [0, 0.5]")
        weights = list(self.scenario_mix.values())
        if any(w < 0 for w in weights):
            raise ValueError("scenario_mix weights must be non-negative")
        if not any(w > 0 for w in weights):
            raise ValueError("scenario_mix weights must not all be zero")
        cal = self.calendar
        start = cal.work_start.hour * 60 + cal.work_start.minute
        end = cal.work_end.hour * 60 + cal.work_end.minute
        if end - start < MIN_WORK_MINUTES:
            raise ValueError("the calendar must leave at least four working hours")
        if end > MINUTES_PER_DAY - PLANTED_SPAN_MINUTES and start < PLANTED_SPAN_MINUTES:
            raise ValueError("the calendar must leave 15 after-hours minutes before work_start or after work_end")
        return self
