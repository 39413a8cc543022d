import numpy as np
import pytest

from src.common_utils import read_jsonl
from src.errors import EXIT_DATA, ViewError
from src.models.domain import Action, Session, WorkCalendar
from src.models.views import ContentKind, DeviceProfile, Narrative
from src.view_tools import (
    ACTION_VERBS,
    abstract_4w,
    behavioral_view,
    build_device_profile,
    compression_ratio,
    compression_stats,
    email_which,
    export_narratives,
    file_extension,
    join_clauses,
    maximal_runs,
    registrable_domain,
    render_per_event,
    semantic_view,
)

from tests.conftest import make_event, utc

FOUR_W_TEXT = (
    "During working hours, login at Self-PC, and then accessed multiple websites (megaclick.com, linkedin.com). "
    "After working hours, sent email (from insider address to outsider address), then opened file (.doc), "
    "and logged off."
)


def test_semantic_view_keeps_content_events(aam058_session):
    entries = semantic_view(aam058_session)
    assert [e.event_index for e in entries] == [1, 2, 3, 4]
    assert [e.kind for e in entries] == [ContentKind.HTTP, ContentKind.HTTP, ContentKind.EMAIL, ContentKind.FILE]


def test_semantic_view_empty_without_content():
    s = Session(user="AAM058", day=utc(9, 0).date(), events=(make_event(utc(9, 0), Action.LOGON),))
    assert semantic_view(s) == []


def test_behavioral_view_drops_content(aam058_session):
    view = behavioral_view(aam058_session)
    assert len(view) == 6
    assert not hasattr(view[0], "content")
    assert view[3].object == "recruiter@gmail.com"


def test_four_w_narrative_of_example_session(aam058_session):
    """The two-sentence rendering of the mixed work/after-hours session"""
    narrative = abstract_4w(behavioral_view(aam058_session), WorkCalendar(), DeviceProfile(), user="AAM058")
    assert len(narrative.sentences) == 2
    assert narrative.text == FOUR_W_TEXT
    assert narrative.token_count == 31


def test_per_event_rendering_of_example_session(aam058_session):
    original = render_per_event(behavioral_view(aam058_session), WorkCalendar(), DeviceProfile(), user="AAM058")
    assert len(original.sentences) == 6
    assert original.sentences[0] == "During working hours, login at Self-PC."
    assert original.sentences[1] == "During working hours, at Self-PC, accessed website megaclick.com."
    assert original.sentences[-1] == "After working hours, at Self-PC, logged off."
    assert original.token_count == 50


def test_compression_reduces_tokens_by_a_third(aam058_session, view_ctx):
    ratio = compression_ratio(view_ctx.narrate_per_event(aam058_session), view_ctx.narrate(aam058_session))
    assert ratio >= 0.30
    assert ratio == pytest.approx(1 - 31 / 50)


def test_compression_ratio_needs_tokens():
    with pytest.raises(ViewError, match="needs an original narrative") as caught:
        compression_ratio(Narrative(), Narrative())
    assert caught.value.exit_code == EXIT_DATA


def test_empty_sequence_renders_empty_narrative():
    assert abstract_4w([], WorkCalendar(), DeviceProfile()).sentences == ()


def test_single_logon_renders_like_per_event():
    events = behavioral_view(Session(user="u", day=utc(9, 0).date(), events=(make_event(utc(9, 0), Action.LOGON, user="u"),)))
    compressed = abstract_4w(events, WorkCalendar(), DeviceProfile(), user="u")
    original = render_per_event(events, WorkCalendar(), DeviceProfile(), user="u")
    assert compressed.text == original.text == "During working hours, login at Self-PC."


def test_repeated_logons_are_counted():
    events = [make_event(utc(9, m), Action.LOGON, user="u") for m in (0, 5, 10)]
    narrative = abstract_4w(behavioral_view(Session(user="u", day=events[0].day, events=tuple(events))),
                            WorkCalendar(), DeviceProfile(), user="u")
    assert narrative.text == "During working hours, login at Self-PC (3 times)."


def test_device_change_names_shared_pc():
    events = (
        make_event(utc(9, 0), Action.LOGON, user="u", device="PC-1"),
        make_event(utc(9, 5), Action.LOGON, user="u", device="PC-1"),
        make_event(utc(9, 30), Action.FILE_OPEN, "x.pdf", user="u", device="PC-9"),
    )
    narrative = abstract_4w(behavioral_view(Session(user="u", day=events[0].day, events=events)),
                            WorkCalendar(), DeviceProfile(), user="u")
    assert narrative.sentences[1] == "During working hours, at Shared-PC PC-9, opened file (.pdf)."


def test_after_hours_merging_is_optional():
    events = (
        make_event(utc(19, 0), Action.EMAIL_SEND, "a@gmail.com", "hi", user="u"),
        make_event(utc(19, 1), Action.EMAIL_SEND, "b@gmail.com", "hi", user="u"),
    )
    view = behavioral_view(Session(user="u", day=events[0].day, events=events))
    plain = abstract_4w(view, WorkCalendar(), DeviceProfile(), user="u")
    merged = abstract_4w(view, WorkCalendar(), DeviceProfile(), user="u", compress_after_hours=True)
    assert "and then sent email" in plain.text
    assert "sent multiple emails (from insider address to outsider address)" in merged.text


def test_join_clauses():
    assert join_clauses(["a"]) == "a"
    assert join_clauses(["a", "b"]) == "a, and then b"
    assert join_clauses(["a", "b", "c", "d"]) == "a, then b, then c, and d"


@pytest.mark.parametrize("url,expected", [
    ("http://www.megaclick.com/deals", "megaclick.com"),
    ("https://jobs.bbc.co.uk/x", "bbc.co.uk"),
    ("linkedin.com", "linkedin.com"),
    ("http://10.0.0.5/admin", "10.0.0.5"),
])
def test_registrable_domain(url, expected):
    assert registrable_domain(url) == expected


def test_file_extension_handles_windows_paths():
    assert file_extension("C:\\Users\\a\\Plan.DOC") == ".doc"
    assert file_extension("/tmp/README") == "no extension"


def test_email_which():
    assert email_which("a@dtaa.com;b@mail.dtaa.com", "dtaa.com") == "to insider address"
    assert email_which("a@dtaa.com, b@gmail.com", "dtaa.com") == "from insider address to outsider address"


def test_device_profile_ties_break_lexicographically(aam058_session):
    events = (
        make_event(utc(9, 0), Action.LOGON, user="u", device="PC-2"),
        make_event(utc(9, 5), Action.LOGON, user="u", device="PC-1"),
    )
    profile = build_device_profile([Session(user="u", day=events[0].day, events=events), aam058_session])
    assert profile.primary == {"u": "PC-1", "AAM058": "PC-1234"}


def test_export_and_stats(tmp_path, aam058_session, view_ctx):
    path = tmp_path / "narratives.jsonl"
    assert export_narratives([aam058_session], view_ctx, path) == 1
    record = read_jsonl(path)[0]
    assert record["token_count"] == 31
    assert record["day"] == "2010-01-15"
    stats = compression_stats([aam058_session], view_ctx)
    assert stats["sessions"][0]["compressed_sentences"] == 2
    assert stats["mean_ratio"] == pytest.approx(0.38)


def random_events(rng, size):
    """A day of random actions spread over two devices, in time order"""
    minutes = sorted(int(m) for m in rng.choice(24 * 60, size=size, replace=False))
    actions = list(Action)
    events = []
    for minute in minutes:
        action = actions[int(rng.integers(len(actions)))]
        obj = {
            Action.HTTP_VISIT: f"http://www.site{int(rng.integers(4))}.com/page",
            Action.EMAIL_SEND: ["ann@dtaa.com", "bob@gmail.com"][int(rng.integers(2))],
            Action.FILE_OPEN: f"C:\\docs\\report{['.doc', '.pdf', ''][int(rng.integers(3))]}",
            Action.FILE_COPY: f"C:\\docs\\archive{['.zip', '.doc'][int(rng.integers(2))]}",
        }.get(action, "")
        device = ["PC-1234", "PC-9999"][int(rng.integers(2))]
        events.append(make_event(utc(minute // 60, minute % 60), action, obj, device=device))
    return behavioral_view(Session(user="AAM058", day=utc(0, 0).date(), events=tuple(events)))


def test_random_sequences_never_grow_and_keep_every_action():
    rng = np.random.default_rng(21)
    cal, profile = WorkCalendar(), DeviceProfile()
    for _ in range(300):
        events = random_events(rng, int(rng.integers(1, 25)))
        compressed = abstract_4w(events, cal, profile)
        baseline = render_per_event(events, cal, profile)
        assert compressed.token_count <= baseline.token_count
        for action in {e.action for e in events}:
            assert ACTION_VERBS[action] in compressed.text

        groups = maximal_runs(events, lambda e: (cal.classify(e.timestamp), e.device))
        assert len(compressed.sentences) == len(groups)
