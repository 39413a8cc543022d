"""Pydantic models for instruction prompts and parsed model responses."""

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.domain import Label

SEMANTIC_INSTRUCTION = (
    "Please analyze the following content (email or HTTP message) and determine whether it is "
    "semantically abnormal. Respond with both an anomaly score and a classification result."
)
BEHAVIORAL_INSTRUCTION = (
    "Please analyze the following behavior sequence. Respond with both an anomaly score and a "
    'classification result ("Normal" or "Abnormal").'
)


class Modality(str, Enum):
    SEMANTIC = "semantic"
    BEHAVIORAL = "behavioral"

    @property
    def instruction(self) -> str:
        return SEMANTIC_INSTRUCTION if self is Modality.SEMANTIC else BEHAVIORAL_INSTRUCTION


class Strategy(str, Enum):
    # one model trained on normal and abnormal data together
    DMFI_A = "DMFI_A"
    # separate normal and abnormal models, scored by their margin
    DMFI_B = "DMFI_B"


class PromptRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    modality: Modality
    instruction: str
    input: str
    expected_output: Optional[str] = None

    @model_validator(mode="after")
    def check_template(self):
        if self.instruction != self.modality.instruction:
            raise ValueError(f"instruction does not match the {self.modality.value} template")
        return self

    def prompt_bytes(self) -> bytes:
        return f"{self.instruction}\n{self.input}".encode("utf-8")

    def sft_record(self) -> dict:
        return {"instruction": self.instruction, "input": self.input, "output": self.expected_output}


class ParsedResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    score: float = Field(ge=0.0, le=1.0)
    prediction: Label
    explanation: Optional[str] = None
    # set when the score or prediction was not present and had to be derived
    inferred_score: bool = False
    inferred_prediction: bool = False
