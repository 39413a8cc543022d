from datetime import datetime, timezone

import pytest

from src.models.domain import Action, EventRecord, Label, Session
from src.models.synth import SynthConfig
from src.synth_tools import generate_corpus
from src.view_tools import ViewContext


def utc(hour: int, minute: int, day: int = 15) -> datetime:
    return datetime(2010, 1, day, hour, minute, tzinfo=timezone.utc)


def make_event(ts: datetime, action: Action, obj: str = "", content: str = "",
               user: str = "AAM058", device: str = "PC-1234") -> EventRecord:
    return EventRecord(timestamp=ts, user=user, action=action, object=obj, device=device, content=content)


@pytest.fixture
def aam058_events():
    """Six events of one user on 2010-01-15, during and after working hours, all on one PC"""
    return [
        make_event(utc(9, 12), Action.LOGON),
        make_event(utc(9, 20), Action.HTTP_VISIT, "http://www.megaclick.com/deals",
                   "Daily deals on office furniture and printer supplies."),
        make_event(utc(9, 45), Action.HTTP_VISIT, "https://linkedin.com/jobs/view/1",
                   "Senior analyst position, apply with your resume today."),
        make_event(utc(19, 5), Action.EMAIL_SEND, "recruiter@gmail.com",
                   "Please find my resume attached for the open position."),
        make_event(utc(19, 30), Action.FILE_OPEN, "C:\\Users\\AAM058\\Documents\\plan.doc",
                   "Quarterly plan draft."),
        make_event(utc(20, 10), Action.LOGOFF),
    ]


@pytest.fixture
def aam058_session(aam058_events):
    return Session(user="AAM058", day=aam058_events[0].day, events=tuple(aam058_events), label=Label.ABNORMAL)


@pytest.fixture
def view_ctx():
    return ViewContext()


@pytest.fixture(scope="session")
def synth_corpus():
    """50 users x 4 days with planted scenarios"""
    return generate_corpus(SynthConfig(users=50, days=4, seed=3, scenario_rate=0.1))
