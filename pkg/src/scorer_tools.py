"""
Scorer backends (mock, remote HTTP, cached) and the DMFI-A / DMFI-B score formulas.
"""
import asyncio
import hashlib
import json
import logging
import math
from abc import ABC, abstractmethod
from datetime import datetime, timezone
from pathlib import Path
from typing import Awaitable, Callable, Dict, List, Optional, Sequence

import aiohttp
from tenacity import (
    AsyncRetrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from src.errors import BackendError, DataError, ResponseParseError
from src.models.domain import AFTER_HOURS_PHRASE, Label
from src.models.prompts import Modality, ParsedResponse, PromptRecord, Strategy
from src.models.scoring import (
    AFTER_HOURS_PATTERN,
    BackendKind,
    MockRule,
    MockRuleTable,
    ScoreCacheEntry,
    ScoreOutcome,
)
from src.prompt_tools import parse_model_response
from src.synth_tools import MARKER_PHRASES

logger = logging.getLogger(__name__)

SCORE_PATH = "/v1/score"

DEFAULT_MOCK_RULES = MockRuleTable(
    base=0.1,
    rules=[
        MockRule(pattern="outsider address", delta=0.4),
        MockRule(pattern=AFTER_HOURS_PATTERN, delta=0.4),
        MockRule(pattern="removable device", delta=0.2),
        MockRule(pattern="copied", delta=0.2),
        MockRule(pattern="multiple emails", delta=0.2),
        MockRule(pattern="Shared-PC", delta=0.3),
        *[MockRule(pattern=phrase, delta=0.8) for phrase in MARKER_PHRASES],
    ],
)


def clamp_unit(value: float) -> float:
    return min(max(float(value), 0.0), 1.0)


def label_for(score: float) -> Label:
    return Label.ABNORMAL if score >= 0.5 else Label.NORMAL


class ScorerBackend(ABC):
    """A prompt -> anomaly score oracle standing in for a fine-tuned model"""
    kind: BackendKind

    def __init__(self, model_id: str):
        self.model_id = model_id
        self.calls = 0

    @abstractmethod
    async def evaluate(self, prompt: PromptRecord) -> ParsedResponse:
        ...

    async def alpha(self, prompt: PromptRecord) -> float:
        return await score(self, prompt)

    async def aclose(self):
        pass

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc):
        await self.aclose()


class MockBackend(ScorerBackend):
    """Deterministic rule-table scorer.

    With invert set the backend answers 1 - rule score, which is how the
    normal-data branch of a dual-branch pair sees planted signals.
    """
    kind = BackendKind.MOCK

    def __init__(self, model_id: str, rules: Optional[MockRuleTable] = None, invert: bool = False):
        super().__init__(model_id)
        self.rules = rules or DEFAULT_MOCK_RULES
        self.invert = invert

    def rule_score(self, text: str) -> float:
        lowered = text.lower()
        total = self.rules.base
        for rule in self.rules.rules:
            if rule.pattern == AFTER_HOURS_PATTERN:
                hit = AFTER_HOURS_PHRASE.lower() in lowered
            else:
                hit = rule.pattern.lower() in lowered
            if hit:
                total += rule.delta
        return clamp_unit(total)

    async def evaluate(self, prompt: PromptRecord) -> ParsedResponse:
        self.calls += 1
        value = self.rule_score(prompt.input)
        if self.invert:
            value = 1.0 - value
        return ParsedResponse(score=value, prediction=label_for(value))


class _RetryableStatus(Exception):
    pass


class HttpBackend(ScorerBackend):
    """Client for the remote scoring endpoint (POST /v1/score)"""
    kind = BackendKind.HTTP

    def __init__(
        self,
        model_id: str,
        endpoint: str,
        api_key: Optional[str] = None,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 1.0,
        strict: bool = False,
        session: Optional[aiohttp.ClientSession] = None,
    ):
        super().__init__(model_id)
        self.url = endpoint.rstrip("/") + SCORE_PATH
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.strict = strict
        self.requests = 0
        self._session = session
        self._owns_session = session is None

    def _client(self) -> aiohttp.ClientSession:
        if self._session is None or self._session.closed:
            headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
            self._session = aiohttp.ClientSession(
                headers=headers, timeout=aiohttp.ClientTimeout(total=self.timeout)
            )
            self._owns_session = True
        return self._session

    async def _post(self, payload: Dict) -> Dict:
        self.requests += 1
        async with self._client().post(self.url, json=payload) as response:
            if response.status >= 500 or response.status == 429:
                raise _RetryableStatus(f"HTTP {response.status}")
            if response.status >= 400:
                text = await response.text()
                raise BackendError(f"{self.model_id} rejected request with HTTP {response.status}: {text[:200]}")
            return await response.json(content_type=None)

    async def evaluate(self, prompt: PromptRecord) -> ParsedResponse:
        self.calls += 1
        payload = {"model": self.model_id, "instruction": prompt.instruction, "input": prompt.input}
        try:
            async for attempt in AsyncRetrying(
                stop=stop_after_attempt(self.retries + 1),
                wait=wait_exponential(multiplier=self.backoff, min=0, max=60),
                retry=retry_if_exception_type((aiohttp.ClientError, asyncio.TimeoutError, _RetryableStatus)),
                before_sleep=before_sleep_log(logger, logging.WARNING),
                reraise=True,
            ):
                with attempt:
                    body = await self._post(payload)
        except BackendError:
            raise
        except (aiohttp.ClientError, asyncio.TimeoutError, _RetryableStatus, json.JSONDecodeError) as e:
            logger.error(f"Scoring request to {self.url} failed after {self.retries} retries: {e}")
            raise BackendError(f"backend unavailable: {self.model_id} at {self.url} ({e or type(e).__name__})") from e
        return self._parse(body)

    def _parse(self, body) -> ParsedResponse:
        if not isinstance(body, dict):
            raise BackendError(f"malformed reply from {self.model_id}: expected a JSON object")
        if "score" in body:
            try:
                value = clamp_unit(body["score"])
                raw_prediction = body.get("prediction")
                prediction = Label.from_word(raw_prediction) if raw_prediction else label_for(value)
            except (TypeError, ValueError) as e:
                raise BackendError(f"malformed reply from {self.model_id}: {e}") from e
            return ParsedResponse(
                score=value,
                prediction=prediction,
                explanation=body.get("explanation") or None,
                inferred_prediction=not raw_prediction,
            )
        if "text" in body:
            try:
                return parse_model_response(str(body["text"]), strict=self.strict)
            except ResponseParseError as e:
                raise BackendError(f"unparseable reply from {self.model_id}: {e}") from e
        raise BackendError(f"malformed reply from {self.model_id}: no 'score' or 'text' field")

    async def aclose(self):
        if self._owns_session and self._session is not None and not self._session.closed:
            await self._session.close()


def cache_key(model_id: str, prompt: PromptRecord) -> str:
    return hashlib.sha256(model_id.encode("utf-8") + b"\x00" + prompt.prompt_bytes()).hexdigest()


class ScoreCache:
    """Append-only JSONL score cache, replayed at startup (last write wins).

    Appends go through one lock, and concurrent misses on the same key
    share a single computation so an entry is never written twice.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self.entries: Dict[str, ScoreCacheEntry] = {}
        self._lock = asyncio.Lock()
        self._inflight: Dict[str, asyncio.Task] = {}
        if self.path is not None and self.path.exists():
            self._replay()

    def _replay(self):
        bad = 0
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                try:
                    entry = ScoreCacheEntry.model_validate_json(line)
                except ValueError:
                    bad += 1
                    continue
                self.entries[entry.key] = entry
        if bad:
            logger.warning(f"Skipped {bad} unreadable lines while replaying {self.path}")
        logger.info(f"Replayed {len(self.entries)} cached scores from {self.path}")

    def get(self, key: str) -> Optional[ScoreCacheEntry]:
        return self.entries.get(key)

    async def _store(self, entry: ScoreCacheEntry):
        async with self._lock:
            self.entries[entry.key] = entry
            if self.path is None:
                return
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8", newline="\n") as f:
                    f.write(entry.model_dump_json() + "\n")
            except OSError as e:
                raise DataError(f"cannot append to score cache {self.path}: {e}") from e

    async def _compute(self, key: str, compute: Callable[[], Awaitable[ParsedResponse]]) -> ParsedResponse:
        response = await compute()
        await self._store(ScoreCacheEntry(
            key=key,
            score=response.score,
            prediction=response.prediction,
            created_at=datetime.now(timezone.utc).replace(microsecond=0),
        ))
        return response

    async def get_or_compute(self, key: str, compute: Callable[[], Awaitable[ParsedResponse]]) -> ParsedResponse:
        entry = self.entries.get(key)
        if entry is not None:
            return ParsedResponse(score=entry.score, prediction=entry.prediction)
        task = self._inflight.get(key)
        if task is None:
            task = asyncio.ensure_future(self._compute(key, compute))
            self._inflight[key] = task
            task.add_done_callback(lambda _: self._inflight.pop(key, None))
        return await asyncio.shield(task)


class CachedBackend(ScorerBackend):
    """Consults the inner backend only on a cache miss"""
    kind = BackendKind.CACHED

    def __init__(self, inner: ScorerBackend, cache: ScoreCache):
        super().__init__(inner.model_id)
        self.inner = inner
        self.cache = cache
        self.hits = 0

    async def evaluate(self, prompt: PromptRecord) -> ParsedResponse:
        self.calls += 1
        key = cache_key(self.model_id, prompt)
        if self.cache.get(key) is not None:
            self.hits += 1
        return await self.cache.get_or_compute(key, lambda: self.inner.evaluate(prompt))

    async def aclose(self):
        await self.inner.aclose()


async def score(b: ScorerBackend, p: PromptRecord) -> float:
    """Anomaly score of one prompt, always within [0, 1]"""
    response = await b.evaluate(p)
    return clamp_unit(response.score)


async def score_dmfi_a(m_mix: ScorerBackend, p: PromptRecord) -> float:
    return await score(m_mix, p)


def margin_sigmoid(s_abn: float, s_norm: float, scale: float = 1.0) -> float:
    return 1.0 / (1.0 + math.exp(-scale * (s_abn - s_norm)))


async def score_dmfi_b(
    m_abn: ScorerBackend, m_norm: ScorerBackend, p: PromptRecord, scale: float = 1.0
) -> float:
    """sigmoid(M_abn(x) - M_norm(x)); lies in [sigmoid(-1), sigmoid(1)] at unit scale"""
    s_abn, s_norm = await asyncio.gather(score(m_abn, p), score(m_norm, p))
    return margin_sigmoid(s_abn, s_norm, scale)


class StrategyScorer:
    """The scoring function of one modality under the selected strategy"""

    def __init__(
        self,
        strategy: Strategy,
        mix: Optional[ScorerBackend] = None,
        abn: Optional[ScorerBackend] = None,
        norm: Optional[ScorerBackend] = None,
        margin_scale: float = 1.0,
    ):
        if strategy is Strategy.DMFI_A and mix is None:
            raise ValueError("DMFI_A needs a mixed-data backend")
        if strategy is Strategy.DMFI_B and (abn is None or norm is None):
            raise ValueError("DMFI_B needs both an abnormal and a normal backend")
        self.strategy = strategy
        self.mix = mix
        self.abn = abn
        self.norm = norm
        self.margin_scale = margin_scale

    @property
    def backends(self) -> List[ScorerBackend]:
        return [b for b in (self.mix, self.abn, self.norm) if b is not None]

    async def alpha(self, prompt: PromptRecord) -> float:
        if self.strategy is Strategy.DMFI_A:
            return await score_dmfi_a(self.mix, prompt)
        return await score_dmfi_b(self.abn, self.norm, prompt, self.margin_scale)

    async def aclose(self):
        for b in self.backends:
            await b.aclose()


async def batch_score(scorer, prompts: Sequence[PromptRecord], parallelism: int = 1) -> List[ScoreOutcome]:
    """Score prompts with bounded concurrency; failures are recorded per element.

    `scorer` is a backend or a StrategyScorer; results follow input order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    gate = asyncio.Semaphore(parallelism)

    async def one(index: int, prompt: PromptRecord) -> ScoreOutcome:
        async with gate:
            try:
                return ScoreOutcome(index=index, score=await scorer.alpha(prompt))
            except Exception as e:
                logger.warning(f"Scoring prompt {index} failed: {e}")
                return ScoreOutcome(index=index, error=str(e) or type(e).__name__)

    outcomes = await asyncio.gather(*(one(i, p) for i, p in enumerate(prompts)))
    failed = sum(1 for o in outcomes if not o.ok)
    logger.debug(f"Scored {len(prompts)} prompts, {failed} failed")
    return list(outcomes)


def build_backend(config, model_id: str, invert: bool, rules: Optional[MockRuleTable], cache: Optional[ScoreCache]) -> ScorerBackend:
    if config.backend is BackendKind.HTTP:
        backend: ScorerBackend = HttpBackend(
            model_id,
            endpoint=config.endpoint,
            api_key=config.api_key.get_secret_value() if config.api_key else None,
            timeout=config.timeout,
            retries=config.retries,
            backoff=config.backoff,
            strict=config.strict_parse,
        )
    else:
        backend = MockBackend(model_id, rules=rules, invert=invert)
    return CachedBackend(backend, cache) if cache is not None else backend


def build_scorers(config, cache: Optional[ScoreCache] = None) -> Dict[Modality, StrategyScorer]:
    """One StrategyScorer per modality, sharing a single score cache"""
    rules = MockRuleTable.from_json(config.mock_rules) if config.mock_rules else None
    if cache is None and config.use_cache:
        cache = ScoreCache(config.resolved_cache_file())
    scorers = {}
    for modality in Modality:
        ids = {name.rsplit("_", 2)[-2]: getattr(config, name) for name in config.model_names(modality)}
        if config.strategy is Strategy.DMFI_A:
            scorers[modality] = StrategyScorer(
                Strategy.DMFI_A, mix=build_backend(config, ids["mix"], False, rules, cache)
            )
        else:
            scorers[modality] = StrategyScorer(
                Strategy.DMFI_B,
                abn=build_backend(config, ids["abn"], False, rules, cache),
                norm=build_backend(config, ids["norm"], True, rules, cache),
                margin_scale=config.margin_scale,
            )
    logger.info(f"Built {config.strategy.value} scorers on {config.backend.value} backends")
    return scorers


def backend_calls(scorers: Dict[Modality, StrategyScorer]) -> Dict[str, int]:
    """Calls that reached an uncached backend, per model id"""
    counts: Dict[str, int] = {}
    for scorer in scorers.values():
        for b in scorer.backends:
            inner = b.inner if isinstance(b, CachedBackend) else b
            counts[inner.model_id] = counts.get(inner.model_id, 0) + inner.calls
    return counts
