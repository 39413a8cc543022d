"""
Pipeline configuration: defaults < environment (.env, DMFI_*) < JSON config file < command-line flags.
"""
import logging
from datetime import time
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

from pydantic import SecretStr, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.common_utils import read_json
from src.errors import DataError, UsageError
from src.models.domain import WorkCalendar
from src.models.fusion import AggregationMode, FusionHyper, ViewSet
from src.models.ingest import SplitSpec
from src.models.prompts import Modality, Strategy
from src.models.scoring import BackendKind
from src.models.views import DeviceProfile
from src.view_tools import ViewContext

logger = logging.getLogger(__name__)


class PipelineConfig(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="DMFI_", env_file=".env", extra="ignore")

    seed: int = 0
    log_level: str = "INFO"
    telemetry: Literal["none", "console", "otlp"] = "none"

    # paths
    work_dir: Path = Path("work")
    cache_file: Optional[Path] = None
    params_file: Optional[Path] = None
    mapping_dir: Optional[Path] = None

    # calendar and rendering
    work_start: time = time(8, 0)
    work_end: time = time(18, 0)
    workdays: List[int] = [0, 1, 2, 3, 4]
    timezone: str = "UTC"
    corporate_domain: str = "dtaa.com"
    compress_after_hours: bool = False

    # split and undersampling
    train_fraction: float = 0.7
    benign_cap: int = 20000
    target_benign_to_abnormal: Tuple[int, int] = (8, 2)

    # fusion
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    threshold: float = 0.5
    aggregation: AggregationMode = AggregationMode.FULL_STATS
    views: ViewSet = ViewSet.BOTH
    hidden_sizes: List[int] = [16, 8]

    # scoring
    strategy: Strategy = Strategy.DMFI_B
    backend: BackendKind = BackendKind.MOCK
    endpoint: Optional[str] = None
    api_key: Optional[SecretStr] = None
    semantic_mix_model: Optional[str] = "semantic-mix"
    behavioral_mix_model: Optional[str] = "behavioral-mix"
    semantic_abn_model: Optional[str] = "semantic-abn"
    semantic_norm_model: Optional[str] = "semantic-norm"
    behavioral_abn_model: Optional[str] = "behavioral-abn"
    behavioral_norm_model: Optional[str] = "behavioral-norm"
    parallelism: int = 4
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 1.0
    strict_parse: bool = False
    margin_scale: float = 1.0
    mock_rules: Optional[Path] = None
    use_cache: bool = True

    # SFT targets
    sft_normal_score: float = 0.1
    sft_abnormal_score: float = 0.9

    @field_validator("train_fraction")
    @classmethod
    def check_fraction(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        return value

    @field_validator("threshold")
    @classmethod
    def check_threshold(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("threshold must lie strictly between 0 and 1")
        return value

    @field_validator("benign_cap", "parallelism", "epochs", "batch_size")
    @classmethod
    def check_positive(cls, value: int, info) -> int:
        if value < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return value

    @field_validator("log_level")
    @classmethod
    def check_log_level(cls, value: str) -> str:
        value = value.upper()
        if value not in logging.getLevelNamesMapping():
            raise ValueError(f"unknown log level {value}")
        return value

    @model_validator(mode="after")
    def check_consistency(self):
        if not self.work_start < self.work_end:
            raise ValueError("work_start must be earlier than work_end")
        if not self.workdays:
            raise ValueError("workdays must not be empty")
        for modality in Modality:
            missing = [name for name in self.model_names(modality) if not getattr(self, name)]
            if missing:
                raise ValueError(f"strategy {self.strategy.value} requires {', '.join(missing)}")
        if self.backend is BackendKind.HTTP and not self.endpoint:
            raise ValueError("backend http requires an endpoint (DMFI_ENDPOINT)")
        if self.backend is BackendKind.CACHED:
            raise ValueError("backend must be mock or http; caching is switched with use_cache")
        return self

    def model_names(self, modality: Modality) -> List[str]:
        """Config keys of the model ids the selected strategy needs"""
        if self.strategy is Strategy.DMFI_A:
            return [f"{modality.value}_mix_model"]
        return [f"{modality.value}_abn_model", f"{modality.value}_norm_model"]

    def calendar(self) -> WorkCalendar:
        return WorkCalendar(work_start=self.work_start, work_end=self.work_end, workdays=frozenset(self.workdays))

    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            train_fraction=self.train_fraction,
            seed=self.seed,
            benign_cap=self.benign_cap,
            target_benign_to_abnormal=self.target_benign_to_abnormal,
        )

    def fusion_hyper(self) -> FusionHyper:
        return FusionHyper(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            threshold=self.threshold,
            mode=self.aggregation,
            views=self.views,
            hidden=tuple(self.hidden_sizes),
        )

    def view_context(self, profile: Optional[DeviceProfile] = None) -> ViewContext:
        return ViewContext(
            calendar=self.calendar(),
            profile=profile or DeviceProfile(),
            corporate_domain=self.corporate_domain,
            compress_after_hours=self.compress_after_hours,
        )

    def resolved_cache_file(self) -> Optional[Path]:
        if not self.use_cache:
            return None
        return self.cache_file or self.work_dir / "score_cache.jsonl"

    def resolved_params_file(self) -> Path:
        return self.params_file or self.work_dir / "fusion_params.json"

    def effective(self) -> Dict[str, Any]:
        """Configuration echo with secrets masked"""
        return self.model_dump(mode="json")


def load_config(config_file: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Merge a JSON config file and command-line overrides over env and defaults"""
    values: Dict[str, Any] = {}
    if config_file is not None:
        try:
            loaded = read_json(config_file)
        except DataError as e:
            raise UsageError(f"cannot load config: {e}") from e
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {config_file} must hold a JSON object")
        unknown = sorted(set(loaded) - set(PipelineConfig.model_fields))
        if unknown:
            raise UsageError(f"unknown config keys in {config_file}: {', '.join(unknown)}")
        values.update(loaded)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = PipelineConfig(**values)
    except ValidationError as e:
        source = f" ({config_file})" if config_file else ""
        raise UsageError(f"invalid configuration{source}: {e}") from e
    logger.debug(f"Effective configuration: {config.effective()}")
    return config
