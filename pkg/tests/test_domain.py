from datetime import date, datetime, time, timedelta, timezone

import pytest

from src.errors import EventValidationError, UsageError
from src.models.domain import (
    Action,
    EventRecord,
    Label,
    LabeledCorpus,
    Session,
    WorkCalendar,
    WorkTime,
    classify_work_time,
    format_timestamp,
    parse_timestamp,
    parse_timezone,
    validate_event,
)

from tests.conftest import make_event, utc


def test_classify_work_time_boundaries():
    """Working hours are [work_start, work_end) on workdays"""
    cal = WorkCalendar()
    assert classify_work_time(utc(8, 0), cal) is WorkTime.WORKING_HOURS
    assert classify_work_time(utc(17, 59), cal) is WorkTime.WORKING_HOURS
    assert classify_work_time(utc(18, 0), cal) is WorkTime.AFTER_HOURS
    assert classify_work_time(utc(7, 59), cal) is WorkTime.AFTER_HOURS


def test_weekend_is_after_hours():
    saturday = datetime(2010, 1, 16, 10, 0, tzinfo=timezone.utc)
    assert classify_work_time(saturday, WorkCalendar()) is WorkTime.AFTER_HOURS


def test_calendar_rejects_inverted_window():
    with pytest.raises(ValueError):
        WorkCalendar(work_start=time(18, 0), work_end=time(8, 0))
    with pytest.raises(ValueError):
        WorkCalendar(workdays=frozenset())


def test_validate_event_accepts_well_formed_mapping():
    fields = {"timestamp": "2010-01-15T09:12:00Z", "user": "AAM058", "action": "logon",
              "object": "", "device": "PC-1234", "content": ""}
    assert validate_event(fields) == []


def test_validate_event_reports_every_violation():
    fields = {"timestamp": "2010-01-15T09:12:00", "user": "", "action": "logon",
              "object": "", "device": "PC-1234", "content": "hello"}
    violations = validate_event(fields)
    assert "timestamp must carry a timezone offset" in violations
    assert "user must be non-empty" in violations
    assert "content must be empty for logon" in violations


def test_validate_event_unknown_action():
    fields = {"timestamp": "2010-01-15T09:12:00Z", "user": "u", "action": "fly", "device": "d"}
    assert "unknown action 'fly'" in validate_event(fields)


def test_bad_timestamp_is_reported_once():
    fields = {"timestamp": "yesterday", "user": "u", "action": "logon", "device": "d"}
    violations = validate_event(fields)
    assert any("not RFC 3339" in v for v in violations)
    assert "timestamp is missing" not in violations


def test_event_create_raises_with_location():
    with pytest.raises(EventValidationError) as info:
        EventRecord.create(where="events.csv line 4", timestamp="2010-01-15T09:12:00Z",
                           user="u", action="logoff", device="d", content="oops")
    assert "events.csv line 4" in str(info.value)
    assert info.value.violations == ["content must be empty for logoff"]


def test_sub_second_timestamps_rejected():
    with pytest.raises(ValueError):
        EventRecord(timestamp=utc(9, 0) + timedelta(microseconds=5), user="u",
                    action=Action.LOGON, device="d")


def test_timestamp_format_round_trip():
    ts = parse_timestamp("2010-01-15T09:12:00Z")
    assert format_timestamp(ts) == "2010-01-15T09:12:00Z"
    shifted = parse_timestamp("2010-01-15T09:12:00+02:00")
    assert format_timestamp(shifted) == "2010-01-15T09:12:00+02:00"


def test_parse_timezone_variants():
    assert parse_timezone("UTC") is timezone.utc
    assert parse_timezone("-05:00").utcoffset(None) == timedelta(hours=-5)
    assert parse_timezone("Europe/Berlin").key == "Europe/Berlin"
    with pytest.raises(UsageError):
        parse_timezone("Mars/Olympus")


def test_label_words():
    assert Label.from_word(" abnormal ") is Label.ABNORMAL
    assert Label.NORMAL.word == "Normal"
    with pytest.raises(ValueError):
        Label.from_word("maybe")


def test_session_requires_sorted_same_day_events():
    first = make_event(utc(10, 0), Action.LOGON)
    second = make_event(utc(9, 0), Action.LOGOFF)
    with pytest.raises(ValueError):
        Session(user="AAM058", day=date(2010, 1, 15), events=(first, second))
    other_day = make_event(utc(9, 0, day=16), Action.LOGON)
    with pytest.raises(ValueError):
        Session(user="AAM058", day=date(2010, 1, 15), events=(other_day,))


def test_corpus_index_must_reference_sessions(aam058_session):
    with pytest.raises(ValueError):
        LabeledCorpus(sessions=(aam058_session,), abnormal_index=frozenset({("nobody", date(2010, 1, 15))}))
    corpus = LabeledCorpus(sessions=(aam058_session,), abnormal_index=frozenset({aam058_session.key}))
    assert corpus.counts() == {"sessions": 1, "normal": 0, "abnormal": 1, "users": 1}
