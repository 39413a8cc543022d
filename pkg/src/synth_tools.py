"""
Seeded synthetic audit-log corpora with injected insider scenarios.

The marker phrases planted in injected content are shared with the mock
scorer's default rule table, so end-to-end detection on these corpora
measures pipeline wiring rather than model quality.
"""
import logging
from datetime import date, datetime, timedelta, timezone
from typing import Dict, List, Tuple

import numpy as np

from src.common_utils import make_rng
from src.ingest_tools import make_corpus
from src.models.domain import Action, EventRecord, LabeledCorpus, SessionKey
from src.models.synth import MINUTES_PER_DAY, PLANTED_SPAN_MINUTES, Scenario, SynthConfig

logger = logging.getLogger(__name__)

BENIGN_DOMAINS = [
    "megaclick.com", "linkedin.com", "wikipedia.org", "nytimes.com", "weather.com",
    "bbc.co.uk", "github.com", "stackoverflow.com", "reuters.com", "espn.com",
    "amazon.com", "cnn.com", "python.org", "msn.com", "bing.com",
    "yahoo.com", "imdb.com", "craigslist.org", "walmart.com", "target.com",
]

BENIGN_WEB_SENTENCES = [
    "weekly team schedule and meeting notes",
    "local forecast shows light rain in the afternoon",
    "industry news roundup for the quarter",
    "documentation for the reporting library",
    "conference registration opens next month",
    "product review of office chairs",
    "travel guide for the regional office visit",
    "how to format tables in a spreadsheet",
]

BENIGN_EMAIL_SENTENCES = [
    "please find the agenda for tomorrow's meeting",
    "thanks for the update on the project timeline",
    "can we move our sync to thursday afternoon",
    "the draft report is ready for your review",
    "reminder to submit the weekly status update",
]

BENIGN_FILE_SENTENCES = [
    "project plan milestones and owners",
    "budget draft for next quarter",
    "meeting minutes from the design review",
]

# Planted signal; the mock scorer's default rules score these phrases
MARKER_PHRASES = [
    "attached the confidential salary data",
    "forwarding the internal client list",
    "keep this between us",
    "source code archive attached",
    "resume attached for the open position",
]

EXTERNAL_MAIL_DOMAINS = ["gmail.com", "yahoo.com", "hotmail.com"]
EXFIL_EXTENSIONS = [".doc", ".zip"]
BENIGN_FILE_EXTENSIONS = [".docx", ".pdf", ".xlsx"]


def user_id(index: int) -> str:
    return f"U{index:04d}"


def device_id(index: int) -> str:
    return f"PC-{1000 + index:04d}"


def workdays(cfg: SynthConfig) -> List[date]:
    """The first cfg.days calendar days that are workdays from start_date on"""
    days = []
    current = cfg.start_date
    while len(days) < cfg.days:
        if current.weekday() in cfg.calendar.workdays:
            days.append(current)
        current += timedelta(days=1)
    return days


class _SessionWriter:
    """Collects events for one (user, day) with minute-resolution times"""

    def __init__(self, rng: np.random.Generator, user: str, day: date):
        self.rng = rng
        self.user = user
        self.day = day
        self.events: List[EventRecord] = []

    def at(self, minute: int) -> datetime:
        second = int(self.rng.integers(0, 60))
        base = datetime(self.day.year, self.day.month, self.day.day, tzinfo=timezone.utc)
        return base + timedelta(minutes=int(minute), seconds=second)

    def minutes(self, start: int, end: int, count: int) -> List[int]:
        """Sorted distinct minutes in [start, end)"""
        count = min(count, end - start)
        picked = self.rng.choice(np.arange(start, end), size=count, replace=False)
        return sorted(int(m) for m in picked)

    def add(self, minute: int, action: Action, device: str, obj: str = "", content: str = ""):
        self.events.append(EventRecord(
            timestamp=self.at(minute), user=self.user, action=action,
            object=obj, device=device, content=content,
        ))

    def pick(self, pool):
        return pool[int(self.rng.integers(0, len(pool)))]


def _work_window(cfg: SynthConfig) -> Tuple[int, int]:
    cal = cfg.calendar
    return cal.work_start.hour * 60 + cal.work_start.minute, cal.work_end.hour * 60 + cal.work_end.minute


def _benign_day(w: _SessionWriter, cfg: SynthConfig, device: str, colleague: str):
    start, end = _work_window(cfg)
    logon = start + 30 + int(w.rng.integers(0, 60))
    logoff = end - 90 + int(w.rng.integers(0, 60))
    w.add(logon, Action.LOGON, device)

    n_http = int(w.rng.integers(2, 6))
    send_mail = w.rng.random() < 0.3
    open_file = w.rng.random() < 0.2
    slots = w.minutes(logon + 5, logoff - 5, n_http + int(send_mail) + int(open_file))
    kinds = ["http"] * n_http + (["email"] if send_mail else []) + (["file"] if open_file else [])
    w.rng.shuffle(kinds)
    for minute, kind in zip(slots, kinds):
        if kind == "http":
            domain = w.pick(BENIGN_DOMAINS)
            w.add(minute, Action.HTTP_VISIT, device, f"http://www.{domain}/page{int(w.rng.integers(1, 100))}",
                  w.pick(BENIGN_WEB_SENTENCES))
        elif kind == "email":
            w.add(minute, Action.EMAIL_SEND, device, f"{colleague.lower()}@{cfg.corporate_domain}",
                  w.pick(BENIGN_EMAIL_SENTENCES))
        else:
            ext = w.pick(BENIGN_FILE_EXTENSIONS)
            w.add(minute, Action.FILE_OPEN, device, f"C:\\Users\\{w.user}\\Documents\\notes{ext}",
                  w.pick(BENIGN_FILE_SENTENCES))
    w.add(logoff, Action.LOGOFF, device)


def _after_hours_start(cfg: SynthConfig, w: _SessionWriter) -> int:
    """First minute of an after-hours burst that ends before midnight"""
    start, end = _work_window(cfg)
    latest = MINUTES_PER_DAY - PLANTED_SPAN_MINUTES
    if end <= latest:
        lo = min(end + 90, latest)
        hi = min(end + 210, latest + 1)
        return lo + int(w.rng.integers(0, hi - lo))
    # no room in the evening: plant before the working day instead
    return int(w.rng.integers(0, start - PLANTED_SPAN_MINUTES + 1))


def _inject_exfil_device(w: _SessionWriter, cfg: SynthConfig, device: str):
    t = _after_hours_start(cfg, w)
    w.add(t, Action.LOGON, device)
    w.add(t + 2, Action.DEVICE_CONNECT, device)
    copies = int(w.rng.integers(1, 4))
    for i in range(copies):
        ext = w.pick(EXFIL_EXTENSIONS)
        w.add(t + 4 + i, Action.FILE_COPY, device, f"C:\\Users\\{w.user}\\Projects\\archive{i}{ext}",
              w.pick(MARKER_PHRASES))
    w.add(t + 5 + copies, Action.DEVICE_DISCONNECT, device)
    w.add(t + 7 + copies, Action.LOGOFF, device)


def _inject_mass_external_email(w: _SessionWriter, cfg: SynthConfig, device: str):
    start, end = _work_window(cfg)
    t = min(start + 240 + int(w.rng.integers(0, 60)), end - PLANTED_SPAN_MINUTES)
    count = int(w.rng.integers(3, 6))
    for i in range(count):
        address = f"contact{int(w.rng.integers(1, 999))}@{w.pick(EXTERNAL_MAIL_DOMAINS)}"
        w.add(t + i, Action.EMAIL_SEND, device, address, w.pick(MARKER_PHRASES))


def _inject_offhour_access(w: _SessionWriter, cfg: SynthConfig, other_device: str):
    t = _after_hours_start(cfg, w)
    w.add(t, Action.LOGON, other_device)
    w.add(t + 3, Action.FILE_OPEN, other_device, "C:\\Users\\Shared\\Finance\\payroll.xlsx",
          w.pick(MARKER_PHRASES))
    w.add(t + 9, Action.LOGOFF, other_device)


def generate_events(cfg: SynthConfig) -> Tuple[List[EventRecord], Dict[SessionKey, Scenario]]:
    """Generate all events and the injected (user, day) -> scenario map"""
    rng = make_rng(cfg.seed)
    days = workdays(cfg)
    pairs = [(u, d) for u in range(cfg.users) for d in range(len(days))]

    n_injected = int(round(cfg.scenario_rate * len(pairs)))
    injected_idx = rng.choice(len(pairs), size=n_injected, replace=False) if n_injected else []
    scenarios = list(Scenario)
    weights = np.array([cfg.scenario_mix.get(s, 0.0) for s in scenarios], dtype=float)
    weights = weights / weights.sum()
    plan: Dict[int, Scenario] = {
        int(i): scenarios[int(rng.choice(len(scenarios), p=weights))] for i in sorted(int(i) for i in injected_idx)
    }

    events: List[EventRecord] = []
    injected: Dict[SessionKey, Scenario] = {}
    for index, (u, d) in enumerate(pairs):
        user, day = user_id(u), days[d]
        own = device_id(u)
        colleague = user_id((u + 1) % cfg.users)
        w = _SessionWriter(rng, user, day)
        _benign_day(w, cfg, own, colleague)
        scenario = plan.get(index)
        if scenario is Scenario.EXFIL_DEVICE:
            _inject_exfil_device(w, cfg, own)
        elif scenario is Scenario.MASS_EXTERNAL_EMAIL:
            _inject_mass_external_email(w, cfg, own)
        elif scenario is Scenario.OFFHOUR_ACCESS:
            other = device_id((u + 1 + int(rng.integers(0, max(cfg.users - 1, 1)))) % cfg.users)
            if other == own:
                other = device_id(cfg.users + u)
            _inject_offhour_access(w, cfg, other)
        if scenario is not None:
            injected[(user, day)] = scenario
        events.extend(w.events)

    logger.info(
        f"Generated {len(events)} events for {cfg.users} users x {len(days)} days, "
        f"{len(injected)} injected sessions"
    )
    return events, injected


def generate_corpus(cfg: SynthConfig) -> LabeledCorpus:
    """Build a labeled corpus whose abnormal set is exactly the injected set"""
    events, injected = generate_events(cfg)
    return make_corpus(events, set(injected), provenance=f"synth(users={cfg.users},days={cfg.days},seed={cfg.seed})")


def corpus_events(corpus: LabeledCorpus) -> List[EventRecord]:
    return [e for s in corpus.sessions for e in s.events]
