"""Pydantic models describing log sources and the split protocol."""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.domain import Action

EVENT_FIELDS = ("timestamp", "user", "action", "object", "device", "content")
REQUIRED_FIELDS = ("timestamp", "user", "device")


class SourceKind(str, Enum):
    LOGON = "logon"
    DEVICE = "device"
    HTTP = "http"
    EMAIL = "email"
    FILE = "file"
    UNIFIED = "unified"


class SourceMapping(BaseModel):
    """How one source CSV layout maps onto EventRecord fields."""
    model_config = ConfigDict(frozen=True)

    source_kind: SourceKind
    # source column name -> EventRecord field; several columns may feed
    # the same field and are then joined with ';' in column order
    column_map: Dict[str, str]
    # source activity string -> action
    action_map: Dict[str, Action] = Field(default_factory=dict)
    activity_column: Optional[str] = None
    # action for sources without an activity column (http, email)
    default_action: Optional[Action] = None
    timestamp_format: Optional[str] = "%m/%d/%Y %H:%M:%S"
    # column names for headerless files
    columns: Optional[List[str]] = None

    @model_validator(mode="after")
    def check_coverage(self):
        unknown = sorted(set(self.column_map.values()) - set(EVENT_FIELDS))
        if unknown:
            raise ValueError(f"column_map targets unknown fields: {', '.join(unknown)}")
        missing = [f for f in REQUIRED_FIELDS if f not in self.column_map.values()]
        if missing:
            raise ValueError(f"column_map must cover {', '.join(missing)}")
        if self.activity_column is None and self.default_action is None:
            raise ValueError("mapping needs an activity_column with action_map or a default_action")
        if self.activity_column is not None and not self.action_map and self.default_action is None:
            raise ValueError("activity_column given without an action_map")
        return self

    def columns_for(self, field: str) -> List[str]:
        return [col for col, target in self.column_map.items() if target == field]


class SplitSpec(BaseModel):
    """User-disjoint split and training undersampling parameters."""
    model_config = ConfigDict(frozen=True)

    train_fraction: float = 0.7
    seed: int = 0
    benign_cap: int = 20000
    target_benign_to_abnormal: Tuple[int, int] = (8, 2)

    @model_validator(mode="after")
    def check_ranges(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.benign_cap <= 0:
            raise ValueError("benign_cap must be positive")
        benign, abnormal = self.target_benign_to_abnormal
        if benign <= 0 or abnormal <= 0:
            raise ValueError("target_benign_to_abnormal parts must be positive")
        return self

    @property
    def benign_per_abnormal(self) -> float:
        benign, abnormal = self.target_benign_to_abnormal
        return benign / abnormal
