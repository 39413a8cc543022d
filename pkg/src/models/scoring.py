"""Pydantic models for scorer backends, the score cache and stored scores."""

import json
import re
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.errors import DataError
from src.models.domain import Label
from src.models.prompts import Strategy

AFTER_HOURS_PATTERN = "AFTER_HOURS"
_HEX64 = re.compile(r"^[0-9a-f]{64}$")


class BackendKind(str, Enum):
    MOCK = "mock"
    HTTP = "http"
    CACHED = "cached"


class MockRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    # substring to look for, or AFTER_HOURS for the after-hours phrase
    pattern: str
    delta: float


class MockRuleTable(BaseModel):
    """Ordered substring rules combined as a clamped sum over a base score."""
    model_config = ConfigDict(frozen=True)

    base: float = 0.1
    rules: List[MockRule] = Field(default_factory=list)

    @classmethod
    def from_json(cls, path: Path) -> "MockRuleTable":
        """Load `[{"pattern": ..., "delta": ...}, ..., {"base": ...}]`"""
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as f:
                items = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read mock rules {path}: {e}") from e
        if not isinstance(items, list):
            raise DataError(f"mock rules {path} must be a JSON list")
        base = cls.model_fields["base"].default
        rules = []
        try:
            for item in items:
                if "base" in item:
                    base = float(item["base"])
                else:
                    rules.append(MockRule.model_validate(item))
        except (TypeError, ValidationError) as e:
            raise DataError(f"invalid mock rule in {path}: {e}") from e
        return cls(base=base, rules=rules)


class ScoreCacheEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    score: float = Field(ge=0.0, le=1.0)
    prediction: Label
    created_at: datetime

    @field_validator("key")
    @classmethod
    def check_key(cls, value: str) -> str:
        if not _HEX64.match(value):
            raise ValueError("cache key must be 64 lowercase hex characters")
        return value


class ScoreOutcome(BaseModel):
    """Result for one element of a batch: a score or an error"""
    index: int
    score: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class SessionScores(BaseModel):
    """Branch scores of one session, before fusion"""
    user: str
    day: date
    label: Optional[Label] = None
    # strategy of the scorers that produced these scores
    strategy: Optional[Strategy] = None
    semantic_scores: List[float] = Field(default_factory=list)
    alpha_beh: Optional[float] = None
    errors: List[str] = Field(default_factory=list)

    @property
    def scored(self) -> bool:
        return not self.errors

    @property
    def key_str(self) -> str:
        return f"{self.user}/{self.day.isoformat()}"
