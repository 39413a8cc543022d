import asyncio
import json
import math

import pytest
import pytest_asyncio
from aiohttp import web
from aiohttp.test_utils import TestServer

from src.errors import BackendError, DataError
from src.models.domain import Label
from src.models.prompts import ParsedResponse, PromptRecord, Modality, Strategy
from src.models.scoring import MockRuleTable
from src.scorer_tools import (
    CachedBackend,
    HttpBackend,
    MockBackend,
    ScoreCache,
    ScorerBackend,
    StrategyScorer,
    batch_score,
    cache_key,
    margin_sigmoid,
    score,
    score_dmfi_a,
    score_dmfi_b,
)


def behavior(text: str) -> PromptRecord:
    return PromptRecord(modality=Modality.BEHAVIORAL, instruction=Modality.BEHAVIORAL.instruction, input=text)


class FixedBackend(ScorerBackend):
    """Answers a fixed score, or the score mapped to the prompt input"""

    def __init__(self, value=0.5, by_input=None, fail_on=(), delay=0.0):
        super().__init__("fixed")
        self.value = value
        self.by_input = by_input or {}
        self.fail_on = set(fail_on)
        self.delay = delay

    async def evaluate(self, prompt):
        self.calls += 1
        if self.delay:
            await asyncio.sleep(self.delay)
        if prompt.input in self.fail_on:
            raise BackendError(f"backend unavailable for {prompt.input}")
        value = self.by_input.get(prompt.input, self.value)
        return ParsedResponse(score=value, prediction=Label.ABNORMAL if value >= 0.5 else Label.NORMAL)


@pytest.mark.asyncio
async def test_mock_rules_sum_and_clamp():
    mock = MockBackend("m")
    text = "After working hours, sent email (from insider address to outsider address)."
    assert await score(mock, behavior(text)) == pytest.approx(0.9)
    assert await score(mock, behavior("During working hours, login at Self-PC.")) == pytest.approx(0.1)
    everything = text + " copied removable device multiple emails Shared-PC keep this between us"
    assert await score(mock, behavior(everything)) == 1.0


@pytest.mark.asyncio
async def test_inverted_mock_mirrors_scores():
    plain, inverted = MockBackend("abn"), MockBackend("norm", invert=True)
    p = behavior("After working hours, login at Shared-PC PC-1001.")
    assert await score(plain, p) + await score(inverted, p) == pytest.approx(1.0)


def test_mock_rules_file(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps([{"pattern": "zip", "delta": 0.5}, {"base": 0.2}]), encoding="utf-8")
    table = MockRuleTable.from_json(path)
    assert table.base == 0.2
    assert MockBackend("m", rules=table).rule_score("copied file (.zip)") == pytest.approx(0.7)
    path.write_text("{}", encoding="utf-8")
    with pytest.raises(DataError):
        MockRuleTable.from_json(path)


@pytest.mark.asyncio
@pytest.mark.parametrize("value", [0.7, 0.0, 1.0])
async def test_dmfi_a_is_the_raw_score(value):
    assert await score_dmfi_a(FixedBackend(value), behavior("x")) == value


@pytest.mark.asyncio
async def test_dmfi_b_margin_values():
    p = behavior("x")
    assert await score_dmfi_b(FixedBackend(0.4), FixedBackend(0.4), p) == pytest.approx(0.5)
    assert await score_dmfi_b(FixedBackend(0.9), FixedBackend(0.1), p) == pytest.approx(0.689974, abs=1e-6)


def test_dmfi_b_complement_and_range():
    grid = [i / 20 for i in range(21)]
    for a in grid:
        for b in grid:
            value = margin_sigmoid(a, b)
            assert value + margin_sigmoid(b, a) == pytest.approx(1.0, abs=1e-12)
            assert 1 / (1 + math.e) - 1e-12 <= value <= 1 / (1 + math.exp(-1)) + 1e-12


def test_dmfi_b_is_monotone_on_a_grid():
    grid = [i / 20 for i in range(21)]
    for b in grid:
        row = [margin_sigmoid(a, b) for a in grid]
        assert all(x < y for x, y in zip(row, row[1:]))
    for a in grid:
        column = [margin_sigmoid(a, b) for b in grid]
        assert all(x > y for x, y in zip(column, column[1:]))


def test_margin_scale_sharpens():
    assert margin_sigmoid(0.9, 0.1, scale=4.0) > margin_sigmoid(0.9, 0.1)


@pytest.mark.asyncio
async def test_strategy_scorer_wiring():
    p = behavior("x")
    a = StrategyScorer(Strategy.DMFI_A, mix=FixedBackend(0.3))
    assert await a.alpha(p) == 0.3
    b = StrategyScorer(Strategy.DMFI_B, abn=FixedBackend(0.9), norm=FixedBackend(0.1))
    assert await b.alpha(p) == pytest.approx(0.689974, abs=1e-6)
    with pytest.raises(ValueError):
        StrategyScorer(Strategy.DMFI_B, abn=FixedBackend(0.9))


@pytest.mark.asyncio
async def test_batch_score_independent_of_parallelism():
    prompts = [behavior(t) for t in ("After working hours, copied file (.zip).", "login", "outsider address")]
    one = await batch_score(MockBackend("m"), prompts, parallelism=1)
    three = await batch_score(MockBackend("m"), prompts, parallelism=3)
    assert [o.score for o in one] == [o.score for o in three]
    assert [o.index for o in one] == [0, 1, 2]


@pytest.mark.asyncio
async def test_batch_score_empty_and_invalid():
    assert await batch_score(MockBackend("m"), [], parallelism=2) == []
    with pytest.raises(ValueError):
        await batch_score(MockBackend("m"), [], parallelism=0)


@pytest.mark.asyncio
async def test_batch_score_records_failures_per_element():
    backend = FixedBackend(0.2, fail_on={"bad"})
    outcomes = await batch_score(backend, [behavior("a"), behavior("bad"), behavior("c")], parallelism=2)
    assert [o.ok for o in outcomes] == [True, False, True]
    assert "backend unavailable" in outcomes[1].error
    assert outcomes[2].score == 0.2


def test_cache_key_shape():
    key = cache_key("model-a", behavior("x"))
    assert len(key) == 64 and key == key.lower()
    assert key != cache_key("model-b", behavior("x"))


@pytest.mark.asyncio
async def test_cached_backend_skips_inner_calls(tmp_path):
    inner = MockBackend("m")
    cached = CachedBackend(inner, ScoreCache(tmp_path / "cache.jsonl"))
    p = behavior("After working hours, login at Self-PC.")
    first = await score(cached, p)
    second = await score(cached, p)
    assert first == second
    assert inner.calls == 1
    assert cached.hits == 1


@pytest.mark.asyncio
async def test_cache_replays_from_disk(tmp_path):
    path = tmp_path / "cache.jsonl"
    p = behavior("outsider address")
    await score(CachedBackend(MockBackend("m"), ScoreCache(path)), p)
    fresh_inner = MockBackend("m")
    replayed = CachedBackend(fresh_inner, ScoreCache(path))
    assert await score(replayed, p) == pytest.approx(0.5)
    assert fresh_inner.calls == 0


@pytest.mark.asyncio
async def test_concurrent_misses_share_one_call(tmp_path):
    path = tmp_path / "cache.jsonl"
    inner = FixedBackend(0.6, delay=0.01)
    cached = CachedBackend(inner, ScoreCache(path))
    results = await asyncio.gather(*(score(cached, behavior("same")) for _ in range(5)))
    assert results == [0.6] * 5
    assert inner.calls == 1
    assert len(path.read_text(encoding="utf-8").splitlines()) == 1


@pytest_asyncio.fixture
async def score_server():
    """Local scoring endpoint; replies are consumed in order, the last one repeats"""
    state = {"requests": [], "replies": [(200, {"score": 0.8, "prediction": "Abnormal"})]}

    async def handler(request):
        state["requests"].append((await request.json(), request.headers.get("Authorization")))
        status, payload = state["replies"].pop(0) if len(state["replies"]) > 1 else state["replies"][0]
        return web.json_response(payload, status=status)

    app = web.Application()
    app.router.add_post("/v1/score", handler)
    server = TestServer(app)
    await server.start_server()
    yield str(server.make_url("")), state
    await server.close()


@pytest.mark.asyncio
async def test_http_backend_wire_format(score_server):
    endpoint, state = score_server
    async with HttpBackend("beh-abn", endpoint, api_key="secret", backoff=0) as backend:
        response = await backend.evaluate(behavior("login"))
    assert response.score == 0.8
    assert response.prediction is Label.ABNORMAL
    body, auth = state["requests"][0]
    assert body == {"model": "beh-abn", "instruction": Modality.BEHAVIORAL.instruction, "input": "login"}
    assert auth == "Bearer secret"


@pytest.mark.asyncio
async def test_http_backend_parses_raw_text(score_server):
    endpoint, state = score_server
    state["replies"] = [(200, {"text": 'Anomaly Score = 0.35, Prediction = "Normal". Looks routine.'})]
    async with HttpBackend("m", endpoint, backoff=0) as backend:
        response = await backend.evaluate(behavior("login"))
    assert response.score == pytest.approx(0.35)
    assert response.explanation == "Looks routine."


@pytest.mark.asyncio
async def test_http_backend_retries_server_errors(score_server):
    endpoint, state = score_server
    state["replies"] = [(503, {}), (503, {}), (200, {"score": 0.2})]
    async with HttpBackend("m", endpoint, retries=3, backoff=0) as backend:
        assert await score(backend, behavior("login")) == 0.2
        assert backend.requests == 3
        assert backend.calls == 1


@pytest.mark.asyncio
async def test_http_backend_gives_up(score_server):
    endpoint, state = score_server
    state["replies"] = [(503, {})]
    async with HttpBackend("m", endpoint, retries=3, backoff=0) as backend:
        with pytest.raises(BackendError, match="backend unavailable"):
            await backend.evaluate(behavior("login"))
        assert backend.requests == 4


@pytest.mark.asyncio
async def test_http_backend_strict_parse(score_server):
    endpoint, state = score_server
    state["replies"] = [(200, {"text": "score seems high, abnormal"})]
    async with HttpBackend("m", endpoint, strict=True, backoff=0) as backend:
        with pytest.raises(BackendError, match="unparseable"):
            await backend.evaluate(behavior("login"))


@pytest.mark.asyncio
async def test_http_backend_unreachable():
    async with HttpBackend("m", "http://127.0.0.1:9", retries=1, backoff=0, timeout=2) as backend:
        with pytest.raises(BackendError, match="backend unavailable"):
            await backend.evaluate(behavior("login"))
