import json

import pytest

from src.errors import PromptError, ResponseParseError
from src.models.domain import Label
from src.models.prompts import BEHAVIORAL_INSTRUCTION, SEMANTIC_INSTRUCTION, Modality, PromptRecord, Strategy
from src.models.views import ContentEntry, ContentKind, Narrative
from src.prompt_tools import (
    behavioral_prompt,
    export_sft,
    format_target,
    parse_model_response,
    semantic_prompt,
    session_prompts,
    sft_pair_paths,
)


def test_semantic_prompt_uses_fixed_instruction():
    p = semantic_prompt(ContentEntry(event_index=0, kind=ContentKind.EMAIL, text="keep this between us"))
    assert p.instruction == SEMANTIC_INSTRUCTION
    assert p.input == "keep this between us"


def test_behavioral_prompt_joins_sentences():
    p = behavioral_prompt(Narrative.from_sentences(["During working hours, login at Self-PC.", "B."], 2))
    assert p.instruction == BEHAVIORAL_INSTRUCTION
    assert p.input == "During working hours, login at Self-PC. B."


def test_behavioral_prompt_rejects_empty_narrative():
    with pytest.raises(PromptError, match="empty behavior input"):
        behavioral_prompt(Narrative())


def test_prompt_record_checks_template():
    with pytest.raises(ValueError):
        PromptRecord(modality=Modality.SEMANTIC, instruction=BEHAVIORAL_INSTRUCTION, input="x")


def test_session_prompts_per_modality(aam058_session, view_ctx):
    assert len(session_prompts(aam058_session, Modality.SEMANTIC, view_ctx)) == 4
    behavioral = session_prompts(aam058_session, Modality.BEHAVIORAL, view_ctx)
    assert len(behavioral) == 1
    assert behavioral[0].input.startswith("During working hours, login at Self-PC")


def test_format_target():
    assert format_target(Label.ABNORMAL) == 'Anomaly Score = 0.9, Prediction = "Abnormal"'
    assert format_target(Label.NORMAL) == 'Anomaly Score = 0.1, Prediction = "Normal"'


def test_parse_canonical_response():
    r = parse_model_response('Anomaly Score = 0.9, Prediction = "Abnormal"')
    assert r.score == 0.9
    assert r.prediction is Label.ABNORMAL
    assert r.explanation is None


def test_parse_is_tolerant_of_case_and_quotes():
    r = parse_model_response("anomaly score: 0.15, prediction = normal. Routine browsing.")
    assert r.score == pytest.approx(0.15)
    assert r.prediction is Label.NORMAL
    assert r.explanation == "Routine browsing."


def test_parse_clamps_out_of_range_scores():
    assert parse_model_response('Anomaly Score = 1.7, Prediction = "Abnormal"').score == 1.0


def test_parse_infers_missing_parts():
    only_score = parse_model_response("Anomaly Score = 0.62")
    assert only_score.prediction is Label.ABNORMAL
    assert only_score.inferred_prediction
    only_label = parse_model_response('Prediction = "Normal"')
    assert only_label.score == 0.0
    assert only_label.inferred_score


def test_parse_rejects_free_text():
    with pytest.raises(ResponseParseError):
        parse_model_response("I cannot tell.")


def test_strict_parse_demands_template():
    assert parse_model_response('Anomaly Score = 0.3, Prediction = "Normal"', strict=True).score == 0.3
    with pytest.raises(ResponseParseError):
        parse_model_response("anomaly score: 0.3, prediction = normal", strict=True)


def _lines(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f]


def test_sft_export_dmfi_a_records_parse_back(tmp_path, synth_corpus, view_ctx):
    path = tmp_path / "behavioral.jsonl"
    result = export_sft(synth_corpus, Strategy.DMFI_A, Modality.BEHAVIORAL, path, view_ctx, seed=1)
    records = _lines(path)
    assert result.counts["mix"] == len(records) == len(synth_corpus.sessions)
    for record in records:
        assert set(record) == {"instruction", "input", "output"}
        assert parse_model_response(record["output"]).prediction in (Label.NORMAL, Label.ABNORMAL)
    abnormal = sum(1 for r in records if parse_model_response(r["output"]).prediction is Label.ABNORMAL)
    assert abnormal == len(synth_corpus.abnormal())


def test_sft_pair_partitions_the_mixed_set(tmp_path, synth_corpus, view_ctx):
    mixed_path = tmp_path / "semantic.jsonl"
    export_sft(synth_corpus, Strategy.DMFI_A, Modality.SEMANTIC, mixed_path, view_ctx)
    result = export_sft(synth_corpus, Strategy.DMFI_B, Modality.SEMANTIC, tmp_path / "pair" / "semantic.jsonl", view_ctx)
    norm_path, abn_path = result.paths
    assert (norm_path, abn_path) == sft_pair_paths(tmp_path / "pair" / "semantic.jsonl")
    norm, abn = _lines(norm_path), _lines(abn_path)
    assert all(parse_model_response(r["output"]).prediction is Label.NORMAL for r in norm)
    assert all(parse_model_response(r["output"]).prediction is Label.ABNORMAL for r in abn)
    pair_keys = sorted(json.dumps(r, sort_keys=True) for r in norm + abn)
    assert pair_keys == sorted(json.dumps(r, sort_keys=True) for r in _lines(mixed_path))
