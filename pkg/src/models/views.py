"""Pydantic models for the semantic and behavioral session views."""

from collections import Counter
from datetime import datetime
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.domain import Action


class ContentKind(str, Enum):
    EMAIL = "email"
    HTTP = "http"
    FILE = "file"


class ContentEntry(BaseModel):
    """A content-bearing event of a session (the semantic view)."""
    model_config = ConfigDict(frozen=True)

    event_index: int
    kind: ContentKind
    text: str = Field(min_length=1)


class BehavioralEvent(BaseModel):
    """An event with its content dropped (the behavioral view)."""
    model_config = ConfigDict(frozen=True)

    timestamp: datetime
    action: Action
    object: str = ""
    device: str


class Narrative(BaseModel):
    model_config = ConfigDict(frozen=True)

    sentences: Tuple[str, ...] = ()
    token_count: int = 0
    source_event_count: int = 0

    @model_validator(mode="after")
    def check_counts(self):
        if self.source_event_count > 0 and not self.sentences:
            raise ValueError("narrative of a non-empty sequence needs at least one sentence")
        if self.token_count != len(self.text.split()):
            raise ValueError("token_count does not match the rendered text")
        return self

    @property
    def text(self) -> str:
        return " ".join(self.sentences)

    @classmethod
    def from_sentences(cls, sentences: Iterable[str], source_event_count: int) -> "Narrative":
        sentences = tuple(sentences)
        return cls(
            sentences=sentences,
            token_count=len(" ".join(sentences).split()),
            source_event_count=source_event_count,
        )


class DeviceProfile(BaseModel):
    """Primary device per user, learned from training events."""
    model_config = ConfigDict(frozen=True)

    primary: Dict[str, str] = Field(default_factory=dict)

    def resolve(self, user: Optional[str], devices: Iterable[str]) -> Optional[str]:
        """Primary device of a known user, else the most frequent of the given devices"""
        if user is not None and user in self.primary:
            return self.primary[user]
        counts = Counter(devices)
        if not counts:
            return None
        top = max(counts.values())
        return min(d for d, c in counts.items() if c == top)
