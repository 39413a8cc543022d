"""Pydantic models for semantic aggregation, the fusion MLP and per-session results."""

import math
from datetime import date
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.common_utils import read_json, write_json
from src.errors import FusionError
from src.models.domain import Label
from src.models.prompts import Strategy

NO_SEMANTIC_CONTENT = "no_semantic_content"
UNSCORED = "unscored"


class AggregationMode(str, Enum):
    MAX_ONLY = "MaxOnly"
    MEAN_ONLY = "MeanOnly"
    MEAN_MAX = "MeanMax"
    FULL_STATS = "FullStats"

    @property
    def components(self) -> Tuple[str, ...]:
        return {
            AggregationMode.MAX_ONLY: ("max",),
            AggregationMode.MEAN_ONLY: ("mean",),
            AggregationMode.MEAN_MAX: ("mean", "max"),
            AggregationMode.FULL_STATS: ("mean", "max", "std", "min"),
        }[self]

    @property
    def width(self) -> int:
        return len(self.components)


class ViewSet(str, Enum):
    """Which views feed the joint feature"""
    BOTH = "both"
    SEMANTIC = "semantic"
    BEHAVIORAL = "behavioral"

    @property
    def uses_semantic(self) -> bool:
        return self is not ViewSet.BEHAVIORAL

    @property
    def uses_behavioral(self) -> bool:
        return self is not ViewSet.SEMANTIC


def input_width(mode: AggregationMode, views: ViewSet) -> int:
    return (mode.width if views.uses_semantic else 0) + (1 if views.uses_behavioral else 0)


class SemanticStatVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float = Field(default=0.0, ge=0.0, le=1.0)
    max: float = Field(default=0.0, ge=0.0, le=1.0)
    std: float = Field(default=0.0, ge=0.0, le=0.5)
    min: float = Field(default=0.0, ge=0.0, le=1.0)
    # set when the session had no content entries (all components zero)
    empty: bool = False

    @model_validator(mode="after")
    def check_order(self):
        if not (self.min <= self.mean <= self.max):
            raise ValueError(f"expected min <= mean <= max, got {self.min}, {self.mean}, {self.max}")
        return self

    def select(self, mode: AggregationMode) -> List[float]:
        return [getattr(self, name) for name in mode.components]


class JointFeature(BaseModel):
    model_config = ConfigDict(frozen=True)

    v_sem: SemanticStatVector = Field(default_factory=SemanticStatVector)
    alpha_beh: float = Field(default=0.0, ge=0.0, le=1.0)

    def vector(
        self, mode: AggregationMode = AggregationMode.FULL_STATS, views: ViewSet = ViewSet.BOTH
    ) -> List[float]:
        """[v_sem..., alpha_beh] restricted to the selected mode and views"""
        values = self.v_sem.select(mode) if views.uses_semantic else []
        if views.uses_behavioral:
            values.append(self.alpha_beh)
        return values


class FusionHyper(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=1e-3, gt=0.0)
    epochs: int = Field(default=200, ge=1)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 0
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    mode: AggregationMode = AggregationMode.FULL_STATS
    views: ViewSet = ViewSet.BOTH
    hidden: Tuple[int, ...] = (16, 8)

    @property
    def layer_sizes(self) -> List[int]:
        return [input_width(self.mode, self.views), *self.hidden, 1]


class MlpParams(BaseModel):
    """Trained fusion network; weights[i] has shape (sizes[i], sizes[i+1])"""
    sizes: List[int]
    weights: List[List[List[float]]]
    biases: List[List[float]]
    mode: AggregationMode = AggregationMode.FULL_STATS
    views: ViewSet = ViewSet.BOTH
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    final_loss: Optional[float] = None

    @model_validator(mode="after")
    def check_shapes(self):
        if len(self.sizes) < 2 or self.sizes[-1] != 1:
            raise ValueError("layer sizes must end in a single output unit")
        if self.sizes[0] != input_width(self.mode, self.views):
            raise ValueError(
                f"input width {self.sizes[0]} does not fit mode {self.mode.value} with views {self.views.value}"
            )
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise ValueError("one weight matrix and one bias vector per layer expected")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            if len(w) != fan_in or any(len(row) != fan_out for row in w) or len(b) != fan_out:
                raise ValueError(f"layer {i} does not have shape ({fan_in}, {fan_out})")
            if not all(math.isfinite(x) for row in w for x in row) or not all(math.isfinite(x) for x in b):
                raise ValueError(f"layer {i} has non-finite parameters")
        return self

    @property
    def input_width(self) -> int:
        return self.sizes[0]

    def arrays(self) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        return (
            [np.asarray(w, dtype=float) for w in self.weights],
            [np.asarray(b, dtype=float) for b in self.biases],
        )

    @classmethod
    def from_arrays(
        cls,
        weights: List[np.ndarray],
        biases: List[np.ndarray],
        hyper: FusionHyper,
        final_loss: Optional[float] = None,
    ) -> "MlpParams":
        return cls(
            sizes=[weights[0].shape[0], *(w.shape[1] for w in weights)],
            weights=[w.tolist() for w in weights],
            biases=[b.tolist() for b in biases],
            mode=hyper.mode,
            views=hyper.views,
            threshold=hyper.threshold,
            final_loss=final_loss,
        )

    def save(self, path: Path) -> None:
        write_json(path, self.model_dump(mode="json"))

    @classmethod
    def load(cls, path: Path) -> "MlpParams":
        path = Path(path)
        if not path.exists():
            raise FusionError(f"missing fusion params {path}")
        try:
            return cls.model_validate(read_json(path))
        except ValueError as e:
            raise FusionError(f"invalid fusion params {path}: {e}") from e


class ScoreBundle(BaseModel):
    """Every intermediate of one session's inference, plus the decision"""
    user: str
    day: date
    truth: Optional[Label] = None
    semantic_scores: List[float] = Field(default_factory=list)
    alpha_beh: Optional[float] = None
    v_sem: Optional[SemanticStatVector] = None
    z: List[float] = Field(default_factory=list)
    alpha_joint: Optional[float] = None
    prediction: Optional[Label] = None
    flags: List[str] = Field(default_factory=list)
    errors: List[str] = Field(default_factory=list)
    strategy: Optional[Strategy] = None
    mode: Optional[AggregationMode] = None

    @property
    def scored(self) -> bool:
        return self.prediction is not None

    @property
    def key_str(self) -> str:
        return f"{self.user}/{self.day.isoformat()}"
