"""Pydantic models for evaluation reports."""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class ConfusionMatrix(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)
    tn: int = Field(default=0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class MetricsReport(BaseModel):
    name: str = ""
    prec: float = Field(ge=0.0, le=1.0)
    dr: float = Field(ge=0.0, le=1.0)
    fpr: float = Field(ge=0.0, le=1.0)
    acc: float = Field(ge=0.0, le=1.0)
    # tp, fp, fn, tn, total, unscored
    counts: Dict[str, int]
    flags: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)

    @property
    def matrix(self) -> ConfusionMatrix:
        return ConfusionMatrix(**{k: self.counts[k] for k in ("tp", "fp", "fn", "tn")})


class ReferenceRow(BaseModel):
    """Published figures shown next to measured rows; never used as a pass/fail oracle"""
    model_config = ConfigDict(frozen=True)

    name: str
    source: str
    prec: float
    dr: float
    fpr: float
    acc: float


class ComparisonReport(BaseModel):
    title: str
    rows: List[MetricsReport] = Field(default_factory=list)
    references: List[ReferenceRow] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    note: Optional[str] = None
