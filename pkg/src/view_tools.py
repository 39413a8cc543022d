"""
Semantic and behavioral session views and the 4W narrative renderer.
"""
import ipaddress
import logging
import re
from collections import Counter, defaultdict
from pathlib import Path, PurePosixPath, PureWindowsPath
from typing import Callable, Dict, Iterable, List, Optional, Sequence, TypeVar
from urllib.parse import urlsplit

from pydantic import BaseModel, ConfigDict, Field

from src.common_utils import write_jsonl
from src.errors import ViewError
from src.models.domain import Action, Session, WorkCalendar, WorkTime
from src.models.views import BehavioralEvent, ContentEntry, ContentKind, DeviceProfile, Narrative

logger = logging.getLogger(__name__)

T = TypeVar("T")

CONTENT_KINDS = {
    Action.HTTP_VISIT: ContentKind.HTTP,
    Action.EMAIL_SEND: ContentKind.EMAIL,
    Action.FILE_OPEN: ContentKind.FILE,
    Action.FILE_COPY: ContentKind.FILE,
}

# Verb phrase of every action; each appears verbatim in rendered clauses
ACTION_VERBS = {
    Action.LOGON: "login",
    Action.LOGOFF: "logged off",
    Action.DEVICE_CONNECT: "connected removable device",
    Action.DEVICE_DISCONNECT: "disconnected removable device",
    Action.HTTP_VISIT: "accessed",
    Action.EMAIL_SEND: "sent",
    Action.FILE_OPEN: "opened",
    Action.FILE_COPY: "copied",
}

# singular / plural nouns for object-bearing actions
_OBJECT_NOUNS = {
    Action.HTTP_VISIT: ("website", "websites"),
    Action.EMAIL_SEND: ("email", "emails"),
    Action.FILE_OPEN: ("file", "files"),
    Action.FILE_COPY: ("file", "files"),
}

GENERIC_SLDS = frozenset({"co", "com", "org", "net", "ac", "gov", "edu"})
SELF_PC = "Self-PC"
OUTSIDER_EMAIL = "from insider address to outsider address"
INSIDER_EMAIL = "to insider address"


def semantic_view(s: Session) -> List[ContentEntry]:
    """Entries for exactly the events with non-empty content, in session order"""
    return [
        ContentEntry(event_index=i, kind=CONTENT_KINDS[e.action], text=e.content)
        for i, e in enumerate(s.events)
        if e.content and e.action in CONTENT_KINDS
    ]


def behavioral_view(s: Session) -> List[BehavioralEvent]:
    return [
        BehavioralEvent(timestamp=e.timestamp, action=e.action, object=e.object, device=e.device)
        for e in s.events
    ]


def registrable_domain(url: str) -> str:
    raw = url.strip()
    if not raw:
        return ""
    host = (urlsplit(raw if "://" in raw else f"http://{raw}").hostname or "").lower().rstrip(".")
    try:
        ipaddress.ip_address(host)
        return host
    except ValueError:
        pass
    if host.startswith("www."):
        host = host[4:]
    labels = host.split(".")
    if len(labels) >= 3 and len(labels[-1]) == 2 and labels[-2] in GENERIC_SLDS:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def file_extension(path: str) -> str:
    name = PureWindowsPath(path).name if "\\" in path else PurePosixPath(path).name
    suffix = PurePosixPath(name).suffix.lower()
    return suffix or "no extension"


def email_which(recipients: str, corporate_domain: str) -> str:
    domain = corporate_domain.lower()
    addresses = [a.strip().lower() for a in re.split(r"[;,]", recipients) if a.strip()]
    for address in addresses:
        host = address.rsplit("@", 1)[-1]
        if host != domain and not host.endswith("." + domain):
            return OUTSIDER_EMAIL
    return INSIDER_EMAIL


def normalize_object(event: BehavioralEvent, corporate_domain: str) -> str:
    """The Which dimension of one event"""
    if event.action is Action.HTTP_VISIT:
        return registrable_domain(event.object) or "unknown site"
    if event.action in (Action.FILE_OPEN, Action.FILE_COPY):
        return file_extension(event.object)
    if event.action is Action.EMAIL_SEND:
        return email_which(event.object, corporate_domain)
    return ""


def describe_where(device: str, self_device: Optional[str]) -> str:
    return SELF_PC if device == self_device else f"Shared-PC {device}"


def maximal_runs(items: Sequence[T], key: Callable[[T], object]) -> List[List[T]]:
    """Split a sequence into maximal runs of consecutive items sharing a key"""
    runs: List[List[T]] = []
    for item in items:
        if runs and key(runs[-1][-1]) == key(item):
            runs[-1].append(item)
        else:
            runs.append([item])
    return runs


def render_clause(action: Action, objects: Sequence[str], at: Optional[str] = None) -> str:
    """One clause for a run of same-action events"""
    n = len(objects)
    verb = ACTION_VERBS[action]
    if action in _OBJECT_NOUNS:
        singular, plural = _OBJECT_NOUNS[action]
        if n == 1:
            if action is Action.HTTP_VISIT:
                return f"{verb} {singular} {objects[0]}"
            return f"{verb} {singular} ({objects[0]})"
        distinct = ", ".join(dict.fromkeys(objects))
        return f"{verb} multiple {plural} ({distinct})"
    clause = verb
    if at:
        clause += f" at {at}"
    if n > 1:
        clause += f" ({n} times)"
    return clause


def join_clauses(clauses: Sequence[str]) -> str:
    if len(clauses) == 1:
        return clauses[0]
    if len(clauses) == 2:
        return f"{clauses[0]}, and then {clauses[1]}"
    return ", then ".join(clauses[:-1]) + f", and {clauses[-1]}"


def _self_device(events: Sequence[BehavioralEvent], profile: DeviceProfile, user: Optional[str]) -> Optional[str]:
    return profile.resolve(user, (e.device for e in events))


def abstract_4w(
    events: Sequence[BehavioralEvent],
    cal: WorkCalendar,
    profile: DeviceProfile,
    *,
    user: Optional[str] = None,
    corporate_domain: str = "dtaa.com",
    compress_after_hours: bool = False,
) -> Narrative:
    """Render a behavioral sequence as a 4W (When, Where, What, Which) narrative.

    Events are split into maximal runs sharing a work-time class, each of
    those into maximal runs sharing a device, and every (time, device)
    group becomes one sentence. Within a group consecutive same-action
    events merge into one clause; after-hours groups keep one clause per
    event unless compress_after_hours is set.
    """
    if not events:
        return Narrative()
    self_device = _self_device(events, profile, user)
    sentences = []
    last_named: Optional[str] = None
    for time_slice in maximal_runs(events, lambda e: cal.classify(e.timestamp)):
        when = cal.classify(time_slice[0].timestamp)
        for group in maximal_runs(time_slice, lambda e: e.device):
            where = describe_where(group[0].device, self_device)
            mention = where if where != last_named else None
            last_named = where

            if when is WorkTime.AFTER_HOURS and not compress_after_hours:
                runs = [[e] for e in group]
            else:
                runs = maximal_runs(group, lambda e: e.action)

            clauses = []
            for i, run in enumerate(runs):
                at = mention if i == 0 and run[0].action is Action.LOGON else None
                objects = [normalize_object(e, corporate_domain) for e in run]
                clauses.append(render_clause(run[0].action, objects, at))

            prefix = f"{when.phrase}, "
            if mention and runs[0][0].action is not Action.LOGON:
                prefix += f"at {mention}, "
            sentences.append(prefix + join_clauses(clauses) + ".")
    return Narrative.from_sentences(sentences, len(events))


def render_per_event(
    events: Sequence[BehavioralEvent],
    cal: WorkCalendar,
    profile: DeviceProfile,
    *,
    user: Optional[str] = None,
    corporate_domain: str = "dtaa.com",
) -> Narrative:
    """Uncompressed baseline: one sentence per event, device named every time"""
    if not events:
        return Narrative()
    self_device = _self_device(events, profile, user)
    sentences = []
    for e in events:
        when = cal.classify(e.timestamp).phrase
        where = describe_where(e.device, self_device)
        objects = [normalize_object(e, corporate_domain)]
        if e.action is Action.LOGON:
            sentences.append(f"{when}, {render_clause(e.action, objects, where)}.")
        else:
            sentences.append(f"{when}, at {where}, {render_clause(e.action, objects)}.")
    return Narrative.from_sentences(sentences, len(events))


def compression_ratio(original: Narrative, compressed: Narrative) -> float:
    if original.token_count <= 0:
        raise ViewError("compression ratio needs an original narrative with tokens")
    return 1 - compressed.token_count / original.token_count


def build_device_profile(sessions: Iterable[Session]) -> DeviceProfile:
    """Modal device per user; ties go to the lexicographically smallest id"""
    counts: Dict[str, Counter] = defaultdict(Counter)
    for s in sessions:
        for e in s.events:
            counts[e.user][e.device] += 1
    primary = {}
    for user, devices in counts.items():
        top = max(devices.values())
        primary[user] = min(d for d, c in devices.items() if c == top)
    logger.debug(f"Device profile covers {len(primary)} users")
    return DeviceProfile(primary=primary)


class ViewContext(BaseModel):
    """Everything needed to turn a session into its two views"""
    model_config = ConfigDict(frozen=True)

    calendar: WorkCalendar = Field(default_factory=WorkCalendar)
    profile: DeviceProfile = Field(default_factory=DeviceProfile)
    corporate_domain: str = "dtaa.com"
    compress_after_hours: bool = False

    def narrate(self, s: Session) -> Narrative:
        return abstract_4w(
            behavioral_view(s), self.calendar, self.profile,
            user=s.user, corporate_domain=self.corporate_domain,
            compress_after_hours=self.compress_after_hours,
        )

    def narrate_per_event(self, s: Session) -> Narrative:
        return render_per_event(
            behavioral_view(s), self.calendar, self.profile,
            user=s.user, corporate_domain=self.corporate_domain,
        )


def narrative_record(s: Session, narrative: Narrative) -> Dict:
    return {
        "user": s.user,
        "day": s.day.isoformat(),
        "sentences": list(narrative.sentences),
        "token_count": narrative.token_count,
    }


def export_narratives(sessions: Iterable[Session], ctx: ViewContext, path: Path) -> int:
    return write_jsonl(path, (narrative_record(s, ctx.narrate(s)) for s in sessions))


def compression_stats(sessions: Iterable[Session], ctx: ViewContext) -> Dict:
    """Per-session token counts and the mean compression ratio"""
    rows = []
    for s in sessions:
        original = ctx.narrate_per_event(s)
        compressed = ctx.narrate(s)
        if original.token_count == 0:
            continue
        rows.append({
            "user": s.user,
            "day": s.day.isoformat(),
            "original_tokens": original.token_count,
            "compressed_tokens": compressed.token_count,
            "original_sentences": len(original.sentences),
            "compressed_sentences": len(compressed.sentences),
            "ratio": compression_ratio(original, compressed),
        })
    mean = sum(r["ratio"] for r in rows) / len(rows) if rows else 0.0
    return {"sessions": rows, "mean_ratio": mean}
