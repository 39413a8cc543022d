"""
Instruction prompts, SFT dataset export and model response parsing.
"""
import logging
import re
from pathlib import Path
from typing import Dict, List

from pydantic import BaseModel

from src.common_utils import make_rng, write_jsonl
from src.errors import PromptError, ResponseParseError
from src.models.domain import Label, LabeledCorpus, Session
from src.models.prompts import Modality, ParsedResponse, PromptRecord, Strategy
from src.models.views import ContentEntry, Narrative
from src.view_tools import ViewContext, semantic_view

logger = logging.getLogger(__name__)

_NUMBER = r"([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)"
SCORE_RE = re.compile(r"anomaly[\s_-]*score\s*[=:]\s*[\"'`]?\s*" + _NUMBER, re.IGNORECASE)
PREDICTION_RE = re.compile(
    r"prediction\s*[=:]\s*[\"'`“”‘’]*\s*(abnormal|normal)\b", re.IGNORECASE
)
STRICT_RE = re.compile(
    r'^\s*Anomaly Score = (\d+(?:\.\d+)?), Prediction = "(Normal|Abnormal)"\.?(?:\s+(.*))?$', re.DOTALL
)
_EXPLANATION_STRIP = " \t\r\n\"'`”’.,;:"


def semantic_prompt(c: ContentEntry) -> PromptRecord:
    return PromptRecord(modality=Modality.SEMANTIC, instruction=Modality.SEMANTIC.instruction, input=c.text)


def behavioral_prompt(t: Narrative) -> PromptRecord:
    if not t.sentences:
        raise PromptError("empty behavior input")
    return PromptRecord(
        modality=Modality.BEHAVIORAL, instruction=Modality.BEHAVIORAL.instruction, input=" ".join(t.sentences)
    )


def session_prompts(s: Session, modality: Modality, ctx: ViewContext) -> List[PromptRecord]:
    """Semantic: one prompt per content entry. Behavioral: one prompt per session."""
    if modality is Modality.SEMANTIC:
        return [semantic_prompt(c) for c in semantic_view(s)]
    narrative = ctx.narrate(s)
    if not narrative.sentences:
        return []
    return [behavioral_prompt(narrative)]


def format_target(label: Label, normal_score: float = 0.1, abnormal_score: float = 0.9) -> str:
    score = abnormal_score if label is Label.ABNORMAL else normal_score
    return f'Anomaly Score = {score:g}, Prediction = "{label.word}"'


def parse_model_response(text: str, strict: bool = False) -> ParsedResponse:
    """Parse 'Anomaly Score = ..., Prediction = "..."' out of model output.

    The tolerant grammar ignores case and quoting and takes the first
    match of each key; trailing text becomes the explanation. A missing
    prediction is inferred from the score at 0.5, a missing score from the
    prediction. Strict mode demands the exact template.
    """
    if strict:
        m = STRICT_RE.match(text)
        if not m:
            raise ResponseParseError(f"unparseable response (strict): {text[:80]!r}")
        explanation = (m.group(3) or "").strip() or None
        return ParsedResponse(
            score=min(max(float(m.group(1)), 0.0), 1.0),
            prediction=Label.from_word(m.group(2)),
            explanation=explanation,
        )

    score_match = SCORE_RE.search(text)
    pred_match = PREDICTION_RE.search(text)
    if score_match is None and pred_match is None:
        raise ResponseParseError(f"unparseable response: {text[:80]!r}")

    end = max(m.end() for m in (score_match, pred_match) if m is not None)
    explanation = text[end:].lstrip(_EXPLANATION_STRIP).strip() or None

    if score_match is not None:
        score = min(max(float(score_match.group(1)), 0.0), 1.0)
    if pred_match is not None:
        prediction = Label.from_word(pred_match.group(1))

    if pred_match is None:
        return ParsedResponse(
            score=score,
            prediction=Label.ABNORMAL if score >= 0.5 else Label.NORMAL,
            explanation=explanation,
            inferred_prediction=True,
        )
    if score_match is None:
        return ParsedResponse(
            score=1.0 if prediction is Label.ABNORMAL else 0.0,
            prediction=prediction,
            explanation=explanation,
            inferred_score=True,
        )
    return ParsedResponse(score=score, prediction=prediction, explanation=explanation)


class SftExport(BaseModel):
    paths: List[Path]
    counts: Dict[str, int]
    skipped: int = 0


def sft_pair_paths(path: Path) -> tuple:
    path = Path(path)
    stem = path.name[: -len(path.suffix)] if path.suffix else path.name
    return path.with_name(f"{stem}.norm.jsonl"), path.with_name(f"{stem}.abn.jsonl")


def export_sft(
    corpus: LabeledCorpus,
    strategy: Strategy,
    modality: Modality,
    path: Path,
    ctx: ViewContext,
    seed: int = 0,
    normal_score: float = 0.1,
    abnormal_score: float = 0.9,
) -> SftExport:
    """Write instruction/input/output JSONL for external fine-tuning.

    DMFI_A writes one shuffled file mixing both classes; DMFI_B writes a
    `.norm.jsonl` / `.abn.jsonl` pair, one per class. Semantic records
    inherit their session's label.
    """
    mixed, normal, abnormal = [], [], []
    skipped = 0
    for s in corpus.sessions:
        if s.label is None:
            skipped += 1
            continue
        target = format_target(s.label, normal_score, abnormal_score)
        records = [
            p.model_copy(update={"expected_output": target}).sft_record()
            for p in session_prompts(s, modality, ctx)
        ]
        mixed.extend(records)
        (abnormal if s.label is Label.ABNORMAL else normal).extend(records)
    if skipped:
        logger.warning(f"Skipped {skipped} unlabeled sessions during SFT export")

    path = Path(path)
    if strategy is Strategy.DMFI_A:
        order = make_rng(seed).permutation(len(mixed))
        count = write_jsonl(path, (mixed[i] for i in order))
        logger.info(f"Exported {count} {modality.value} records to {path}")
        return SftExport(paths=[path], counts={"mix": count}, skipped=skipped)

    norm_path, abn_path = sft_pair_paths(path)
    n_norm = write_jsonl(norm_path, normal)
    n_abn = write_jsonl(abn_path, abnormal)
    logger.info(f"Exported {n_norm} normal / {n_abn} abnormal {modality.value} records to {norm_path.parent}")
    return SftExport(paths=[norm_path, abn_path], counts={"norm": n_norm, "abn": n_abn}, skipped=skipped)
