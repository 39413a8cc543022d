"""
Log ingestion: unified and CERT-style CSV parsing, daily sessions and splits.
"""
import asyncio
import csv
import logging
import math
from collections import defaultdict
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, TextIO, Tuple

import pandas as pd

from src.common_utils import make_rng, open_text
from src.errors import EventValidationError, IngestError, SplitError
from src.models.domain import (
    ACTION_VALUES,
    NO_PAYLOAD_ACTIONS,
    Action,
    EventRecord,
    Label,
    LabeledCorpus,
    Session,
    SessionKey,
    format_timestamp,
    parse_timezone,
)
from src.models.ingest import SourceKind, SourceMapping, SplitSpec
from src.schemas.mapping_manager import CERT_FILES, MappingManager

logger = logging.getLogger(__name__)

UNIFIED_HEADER = ["timestamp", "user", "action", "object", "device", "content"]
LABELS_HEADER = ["user", "date"]
EVENTS_FILE = "events.csv"
LABELS_FILE = "labels.csv"


def parse_unified_csv(stream: TextIO, source: str = "<stream>", tz: Optional[str] = None) -> List[EventRecord]:
    """Parse the unified event CSV, one validated EventRecord per data row.

    With tz set, every timestamp is converted to that zone so session days
    and work-time classes follow the configured clock, not each row's own
    offset. Raises IngestError naming the line for malformed rows and
    unknown actions.
    """
    zone = parse_timezone(tz) if tz is not None else None
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise IngestError(f"missing header in {source}")
    if header != UNIFIED_HEADER:
        raise IngestError(f"unexpected header in {source}: {','.join(header)}")

    events = []
    last_line = reader.line_num
    for row in reader:
        line = last_line + 1
        last_line = reader.line_num
        if len(row) != len(UNIFIED_HEADER):
            raise IngestError(
                f"malformed row at line {line} of {source}: expected {len(UNIFIED_HEADER)} fields, got {len(row)}"
            )
        fields = dict(zip(UNIFIED_HEADER, row))
        if fields["action"] not in ACTION_VALUES:
            raise IngestError(f"unknown action '{fields['action']}' at line {line} of {source}")
        try:
            event = EventRecord.create(where=f"{source} line {line}", **fields)
        except EventValidationError as e:
            logger.error(f"Invalid event at line {line} of {source}: {e}")
            raise
        if zone is not None:
            event = event.model_copy(update={"timestamp": event.timestamp.astimezone(zone)})
        events.append(event)
    logger.debug(f"Parsed {len(events)} events from {source}")
    return events


def write_unified_csv(events: Iterable[EventRecord], stream: TextIO) -> int:
    """Write events in the unified format (RFC 4180 quoting, LF endings)"""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(UNIFIED_HEADER)
    count = 0
    for e in events:
        writer.writerow([format_timestamp(e.timestamp), e.user, e.action.value, e.object, e.device, e.content])
        count += 1
    return count


def _cert_line(index: int, mapping: SourceMapping) -> int:
    return index + (1 if mapping.columns else 2)


def parse_cert_source(
    kind: SourceKind,
    stream,
    mapping: SourceMapping,
    tz: str = "UTC",
    source: str = "<stream>",
) -> List[EventRecord]:
    """Parse one CERT per-type CSV into EventRecords using a SourceMapping.

    Naive CERT times are read in the configured timezone. Content is kept
    only for sources whose actions carry a payload (http, email, file).
    """
    if mapping.source_kind != kind:
        raise IngestError(f"mapping for '{mapping.source_kind.value}' used on '{kind.value}' source {source}")

    read_args = {"dtype": str, "keep_default_na": False}
    if mapping.columns:
        read_args.update({"header": None, "names": mapping.columns})
    try:
        df = pd.read_csv(stream, **read_args)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"cannot parse {kind.value} source {source}: {e}") from e
    except UnicodeDecodeError as e:
        raise IngestError(f"{kind.value} source {source} is not valid UTF-8 (byte offset {e.start})") from e

    needed = list(mapping.column_map)
    if mapping.activity_column:
        needed.append(mapping.activity_column)
    for col in needed:
        if col not in df.columns:
            raise IngestError(f"missing column '{col}' in {kind.value} source {source}")

    if mapping.activity_column:
        observed = set(df[mapping.activity_column].unique())
        unmapped = sorted(observed - set(mapping.action_map))
        if unmapped:
            raise IngestError(
                f"unmapped activity {', '.join(repr(u) for u in unmapped)} in {kind.value} source {source}"
            )
        actions = df[mapping.activity_column].map(mapping.action_map)
    else:
        actions = pd.Series([mapping.default_action] * len(df), index=df.index, dtype=object)

    ts_col = mapping.columns_for("timestamp")[0]
    stamps = pd.to_datetime(df[ts_col], format=mapping.timestamp_format, errors="coerce")
    zone = parse_timezone(tz)

    def joined(field: str, row) -> str:
        parts = [row[col].strip() for col in mapping.columns_for(field) if row[col].strip()]
        return ";".join(parts)

    events = []
    for position, (index, row) in enumerate(df.iterrows()):
        line = _cert_line(position, mapping)
        stamp = stamps.loc[index]
        if pd.isna(stamp):
            raise IngestError(f"bad timestamp '{row[ts_col]}' at line {line} of {source}")
        action = Action(actions.loc[index])
        content = "" if action in NO_PAYLOAD_ACTIONS else joined("content", row)
        events.append(EventRecord.create(
            where=f"{source} line {line}",
            timestamp=stamp.to_pydatetime().replace(tzinfo=zone, microsecond=0),
            user=joined("user", row),
            action=action,
            object=joined("object", row),
            device=joined("device", row),
            content=content,
        ))
    logger.info(f"Parsed {len(events)} {kind.value} events from {source}")
    return events


def _parse_cert_file(kind: SourceKind, path: Path, mapping: SourceMapping, tz: str) -> List[EventRecord]:
    with open_text(path) as f:
        return parse_cert_source(kind, f, mapping, tz=tz, source=str(path))


async def load_cert_directory(
    directory: Path, manager: Optional[MappingManager] = None, tz: str = "UTC"
) -> List[EventRecord]:
    """Parse every CERT source present in a directory concurrently, merged by timestamp"""
    directory = Path(directory)
    manager = manager or MappingManager()
    jobs = []
    for kind, filename in CERT_FILES.items():
        path = directory / filename
        if not path.exists():
            logger.debug(f"No {filename} in {directory}")
            continue
        jobs.append(asyncio.to_thread(_parse_cert_file, kind, path, manager.load_mapping(kind), tz))
    if not jobs:
        raise IngestError(f"no CERT source files found in {directory}")
    parsed = await asyncio.gather(*jobs)
    events = [e for chunk in parsed for e in chunk]
    events.sort(key=lambda e: e.timestamp)
    logger.info(f"Loaded {len(events)} events from {len(jobs)} CERT sources in {directory}")
    return events


def read_labels_csv(stream: TextIO, source: str = "<stream>") -> Set[SessionKey]:
    """Read abnormal (user, day) keys from a `user,date` CSV"""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return set()
    if [h.strip() for h in header] != LABELS_HEADER:
        raise IngestError(f"unexpected labels header in {source}: {','.join(header)}")
    keys = set()
    for row in reader:
        if not row:
            continue
        if len(row) != 2:
            raise IngestError(f"malformed labels row at line {reader.line_num} of {source}")
        try:
            keys.add((row[0].strip(), date.fromisoformat(row[1].strip())))
        except ValueError as e:
            raise IngestError(f"bad date '{row[1]}' at line {reader.line_num} of {source}") from e
    return keys


def write_labels_csv(keys: Iterable[SessionKey], stream: TextIO) -> int:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(LABELS_HEADER)
    ordered = sorted(keys)
    for user, day in ordered:
        writer.writerow([user, day.isoformat()])
    return len(ordered)


def build_sessions(events: Iterable[EventRecord], abnormal: Optional[Set[SessionKey]] = None) -> List[Session]:
    """Group events into one Session per (user, calendar day).

    Events are ordered by timestamp with ties kept in source order; a
    session is Abnormal iff its key is in the abnormal set.
    """
    abnormal = abnormal or set()
    grouped: Dict[SessionKey, List[EventRecord]] = defaultdict(list)
    for e in events:
        grouped[(e.user, e.day)].append(e)

    sessions = []
    for key in sorted(grouped):
        user, day = key
        ordered = sorted(grouped[key], key=lambda e: e.timestamp)
        label = Label.ABNORMAL if key in abnormal else Label.NORMAL
        sessions.append(Session(user=user, day=day, events=tuple(ordered), label=label))
    logger.debug(f"Built {len(sessions)} sessions")
    return sessions


def make_corpus(
    events: Iterable[EventRecord], abnormal: Optional[Set[SessionKey]] = None, provenance: str = ""
) -> LabeledCorpus:
    abnormal = set(abnormal or set())
    sessions = build_sessions(events, abnormal)
    present = {s.key for s in sessions}
    dangling = abnormal - present
    if dangling:
        logger.warning(f"{len(dangling)} labeled keys have no events and are ignored")
    return LabeledCorpus(
        sessions=tuple(sessions),
        provenance=provenance,
        abnormal_index=frozenset(abnormal & present),
    )


def split_train_test(corpus: LabeledCorpus, spec: SplitSpec) -> Tuple[LabeledCorpus, LabeledCorpus]:
    """Partition users by a seeded shuffle; each session follows its user.

    The first ceil(train_fraction * users) shuffled users form the training side.
    """
    users = corpus.users
    if len(users) < 2:
        raise SplitError("cannot split without user overlap: corpus has fewer than 2 users")
    order = make_rng(spec.seed).permutation(len(users))
    shuffled = [users[i] for i in order]
    n_train = math.ceil(round(spec.train_fraction * len(users), 9))
    if n_train >= len(users):
        raise SplitError(
            f"test side empty: {len(users)} users with train_fraction {spec.train_fraction} leaves no test user"
        )
    train_users = set(shuffled[:n_train])
    test_users = set(shuffled[n_train:])
    assert not train_users & test_users

    train = corpus.subset([s for s in corpus.sessions if s.user in train_users], f"{corpus.provenance}#train")
    test = corpus.subset([s for s in corpus.sessions if s.user in test_users], f"{corpus.provenance}#test")
    logger.info(
        f"Split {len(users)} users into {len(train_users)} train / {len(test_users)} test "
        f"({len(train.sessions)} / {len(test.sessions)} sessions)"
    )
    return train, test


def benign_target(spec: SplitSpec, abnormal_count: int) -> int:
    if abnormal_count == 0:
        return spec.benign_cap
    return min(spec.benign_cap, math.floor(spec.benign_per_abnormal * abnormal_count + 1e-9))


def undersample(train: LabeledCorpus, spec: SplitSpec, seed: Optional[int] = None) -> LabeledCorpus:
    """Keep every abnormal session; downsample benign ones to min(cap, ratio x abnormal)"""
    seed = spec.seed if seed is None else seed
    benign = train.normal()
    abnormal = train.abnormal()
    target = benign_target(spec, len(abnormal))
    if len(benign) <= target:
        logger.info(f"Keeping all {len(benign)} benign sessions (target {target})")
        return train

    picked = make_rng(seed).choice(len(benign), size=target, replace=False)
    kept = {benign[i].key for i in picked}
    sessions = [s for s in train.sessions if s.label is not Label.NORMAL or s.key in kept]
    logger.info(f"Undersampled benign sessions {len(benign)} -> {target} ({len(abnormal)} abnormal kept)")
    return train.subset(sessions)


def save_corpus(events: Iterable[EventRecord], abnormal: Iterable[SessionKey], out_dir: Path) -> Tuple[Path, Path]:
    """Write events.csv and labels.csv into a corpus directory"""
    out_dir = Path(out_dir)
    events_path = out_dir / EVENTS_FILE
    labels_path = out_dir / LABELS_FILE
    with open_text(events_path, "w") as f:
        count = write_unified_csv(events, f)
    with open_text(labels_path, "w") as f:
        labeled = write_labels_csv(abnormal, f)
    logger.info(f"Wrote {count} events and {labeled} abnormal keys to {out_dir}")
    return events_path, labels_path


def load_corpus(corpus_dir: Path) -> LabeledCorpus:
    """Load a corpus directory written by save_corpus"""
    corpus_dir = Path(corpus_dir)
    events_path = corpus_dir / EVENTS_FILE
    if not events_path.exists():
        raise IngestError(f"missing {events_path}")
    with open_text(events_path) as f:
        events = parse_unified_csv(f, source=str(events_path))
    abnormal: Set[SessionKey] = set()
    labels_path = corpus_dir / LABELS_FILE
    if labels_path.exists():
        with open_text(labels_path) as f:
            abnormal = read_labels_csv(f, source=str(labels_path))
    else:
        logger.warning(f"No {LABELS_FILE} in {corpus_dir}; every session is labeled Normal")
    return make_corpus(events, abnormal, provenance=str(corpus_dir))
