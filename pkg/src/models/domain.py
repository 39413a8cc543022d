"""Pydantic models for audit events, sessions and the work calendar."""

from datetime import date, datetime, time, timedelta, timezone
from enum import Enum, IntEnum
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import EventValidationError, UsageError


class Action(str, Enum):
    """Closed set of action kinds covering the five CERT log sources."""
    LOGON = "logon"
    LOGOFF = "logoff"
    DEVICE_CONNECT = "device_connect"
    DEVICE_DISCONNECT = "device_disconnect"
    HTTP_VISIT = "http_visit"
    EMAIL_SEND = "email_send"
    FILE_OPEN = "file_open"
    FILE_COPY = "file_copy"


ACTION_VALUES = frozenset(a.value for a in Action)

# Actions that never carry a text payload
NO_PAYLOAD_ACTIONS = frozenset({
    Action.LOGON, Action.LOGOFF, Action.DEVICE_CONNECT, Action.DEVICE_DISCONNECT,
})


class Label(IntEnum):
    NORMAL = 0
    ABNORMAL = 1

    @property
    def word(self) -> str:
        return "Abnormal" if self is Label.ABNORMAL else "Normal"

    @classmethod
    def from_word(cls, word: str) -> "Label":
        lowered = word.strip().lower()
        if lowered == "abnormal":
            return cls.ABNORMAL
        if lowered == "normal":
            return cls.NORMAL
        raise ValueError(f"unknown label word '{word}'")


class WorkTime(str, Enum):
    WORKING_HOURS = "WorkingHours"
    AFTER_HOURS = "AfterHours"

    @property
    def phrase(self) -> str:
        return "During working hours" if self is WorkTime.WORKING_HOURS else "After working hours"


AFTER_HOURS_PHRASE = WorkTime.AFTER_HOURS.phrase


def parse_timezone(name: str) -> timezone | ZoneInfo:
    """Resolve 'UTC', a fixed offset like '+02:00', or an IANA zone name"""
    if name.upper() in ("UTC", "Z"):
        return timezone.utc
    if name[:1] in "+-" and ":" in name:
        sign = -1 if name[0] == "-" else 1
        hours, minutes = name[1:].split(":", 1)
        return timezone(sign * timedelta(hours=int(hours), minutes=int(minutes)))
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError) as e:
        raise UsageError(f"unknown timezone '{name}'") from e


def format_timestamp(ts: datetime) -> str:
    """RFC 3339 at second precision, 'Z' for UTC"""
    offset = ts.utcoffset()
    if offset == timedelta(0):
        return ts.strftime("%Y-%m-%dT%H:%M:%SZ")
    return ts.isoformat(timespec="seconds")


def parse_timestamp(raw: str) -> datetime:
    return datetime.fromisoformat(raw.strip())


class WorkCalendar(BaseModel):
    """Working-hours definition used for the When dimension."""
    model_config = ConfigDict(frozen=True)

    work_start: time = time(8, 0)
    work_end: time = time(18, 0)
    # Monday = 0
    workdays: FrozenSet[int] = frozenset({0, 1, 2, 3, 4})

    @model_validator(mode="after")
    def check_bounds(self):
        if not self.work_start < self.work_end:
            raise ValueError("work_start must be earlier than work_end")
        if not self.workdays:
            raise ValueError("workdays must not be empty")
        if any(d < 0 or d > 6 for d in self.workdays):
            raise ValueError("workdays must be weekday numbers 0..6")
        return self

    def classify(self, ts: datetime) -> WorkTime:
        clock = ts.time().replace(tzinfo=None)
        if ts.weekday() in self.workdays and self.work_start <= clock < self.work_end:
            return WorkTime.WORKING_HOURS
        return WorkTime.AFTER_HOURS


def classify_work_time(ts: datetime, cal: WorkCalendar) -> WorkTime:
    """WorkingHours iff the weekday is a workday and work_start <= time < work_end."""
    return cal.classify(ts)


def validate_event(event: Union["EventRecord", Mapping[str, Any]]) -> List[str]:
    """Return every violated EventRecord invariant; an empty list means ok.

    Accepts a constructed record or a raw field mapping, so rows can be
    checked before they are turned into records.
    """
    if isinstance(event, EventRecord):
        data: Mapping[str, Any] = {
            "timestamp": event.timestamp,
            "user": event.user,
            "action": event.action.value,
            "object": event.object,
            "device": event.device,
            "content": event.content,
        }
    else:
        data = event

    violations = []
    action = data.get("action")
    action_value = action.value if isinstance(action, Action) else action
    if action_value not in ACTION_VALUES:
        violations.append(f"unknown action '{action_value}'")

    ts = data.get("timestamp")
    if isinstance(ts, str):
        try:
            ts = parse_timestamp(ts)
        except ValueError:
            violations.append(f"timestamp '{ts}' is not RFC 3339")
            ts = False
    if isinstance(ts, datetime):
        if ts.tzinfo is None or ts.utcoffset() is None:
            violations.append("timestamp must carry a timezone offset")
        if ts.microsecond:
            violations.append("timestamp must have second precision")
    elif ts is not False:
        violations.append("timestamp is missing")

    for name in ("user", "device"):
        value = data.get(name)
        if not isinstance(value, str) or not value.strip():
            violations.append(f"{name} must be non-empty")

    for name in ("object", "content"):
        value = data.get(name, "")
        if not isinstance(value, str):
            violations.append(f"{name} must be a string")

    content = data.get("content", "")
    if action_value in ACTION_VALUES and Action(action_value) in NO_PAYLOAD_ACTIONS and content:
        violations.append(f"content must be empty for {action_value}")
    return violations


class EventRecord(BaseModel):
    """One parsed audit-log entry (timestamp, action, object, device, content)."""
    model_config = ConfigDict(frozen=True)

    timestamp: datetime
    user: str
    action: Action
    object: str = ""
    device: str
    content: str = ""

    @model_validator(mode="after")
    def check_invariants(self):
        violations = validate_event(self)
        if violations:
            raise ValueError("; ".join(violations))
        return self

    @classmethod
    def create(cls, where: str = "", **fields) -> "EventRecord":
        """Validate raw fields first so callers get every violation at once"""
        violations = validate_event(fields)
        if violations:
            raise EventValidationError(violations, where)
        if isinstance(fields.get("timestamp"), str):
            fields["timestamp"] = parse_timestamp(fields["timestamp"])
        return cls(**fields)

    @property
    def day(self) -> date:
        return self.timestamp.date()

    @property
    def has_content(self) -> bool:
        return bool(self.content)


SessionKey = Tuple[str, date]


class Session(BaseModel):
    """All events of one user on one calendar day."""
    model_config = ConfigDict(frozen=True)

    user: str
    day: date
    events: Tuple[EventRecord, ...] = ()
    # None means unlabeled
    label: Optional[Label] = None

    @model_validator(mode="after")
    def check_events(self):
        for e in self.events:
            if e.user != self.user:
                raise ValueError(f"event user {e.user} differs from session user {self.user}")
            if e.day != self.day:
                raise ValueError(f"event on {e.day} outside session day {self.day}")
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.timestamp < prev.timestamp:
                raise ValueError(f"events of session {self.user}/{self.day} are not sorted")
        return self

    @property
    def key(self) -> SessionKey:
        return (self.user, self.day)

    @property
    def key_str(self) -> str:
        return f"{self.user}/{self.day.isoformat()}"

    def with_label(self, label: Optional[Label]) -> "Session":
        return self.model_copy(update={"label": label})


class LabeledCorpus(BaseModel):
    """Sessions plus the set of (user, day) keys marked abnormal."""
    model_config = ConfigDict(frozen=True)

    sessions: Tuple[Session, ...] = ()
    provenance: str = ""
    abnormal_index: FrozenSet[SessionKey] = Field(default_factory=frozenset)

    @model_validator(mode="after")
    def check_index(self):
        keys = {s.key for s in self.sessions}
        missing = [k for k in self.abnormal_index if k not in keys]
        if missing:
            user, day = sorted(missing)[0]
            raise ValueError(f"abnormal key {user}/{day} has no session ({len(missing)} missing)")
        return self

    @property
    def users(self) -> List[str]:
        return sorted({s.user for s in self.sessions})

    def normal(self) -> List[Session]:
        return [s for s in self.sessions if s.label is Label.NORMAL]

    def abnormal(self) -> List[Session]:
        return [s for s in self.sessions if s.label is Label.ABNORMAL]

    def subset(self, sessions, provenance: Optional[str] = None) -> "LabeledCorpus":
        sessions = tuple(sessions)
        keys = {s.key for s in sessions}
        return LabeledCorpus(
            sessions=sessions,
            provenance=provenance if provenance is not None else self.provenance,
            abnormal_index=frozenset(k for k in self.abnormal_index if k in keys),
        )

    def counts(self) -> Dict[str, int]:
        return {
            "sessions": len(self.sessions),
            "normal": len(self.normal()),
            "abnormal": len(self.abnormal()),
            "users": len(self.users),
        }
