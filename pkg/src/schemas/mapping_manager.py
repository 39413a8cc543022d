"""
Source mapping management for CERT-style log files.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from src.errors import IngestError
from src.models.domain import Action
from src.models.ingest import SourceKind, SourceMapping

logger = logging.getLogger(__name__)

CERT_FILES = {
    SourceKind.LOGON: "logon.csv",
    SourceKind.DEVICE: "device.csv",
    SourceKind.HTTP: "http.csv",
    SourceKind.EMAIL: "email.csv",
    SourceKind.FILE: "file.csv",
}

_BASE_COLUMNS = {"date": "timestamp", "user": "user", "pc": "device"}

# Layouts of the r4.2 release; later releases add columns that are ignored
DEFAULT_MAPPINGS: Dict[SourceKind, SourceMapping] = {
    SourceKind.LOGON: SourceMapping(
        source_kind=SourceKind.LOGON,
        column_map=dict(_BASE_COLUMNS),
        activity_column="activity",
        action_map={"Logon": Action.LOGON, "Logoff": Action.LOGOFF},
    ),
    SourceKind.DEVICE: SourceMapping(
        source_kind=SourceKind.DEVICE,
        column_map=dict(_BASE_COLUMNS),
        activity_column="activity",
        action_map={"Connect": Action.DEVICE_CONNECT, "Disconnect": Action.DEVICE_DISCONNECT},
    ),
    SourceKind.HTTP: SourceMapping(
        source_kind=SourceKind.HTTP,
        column_map={**_BASE_COLUMNS, "url": "object", "content": "content"},
        default_action=Action.HTTP_VISIT,
    ),
    SourceKind.EMAIL: SourceMapping(
        source_kind=SourceKind.EMAIL,
        column_map={**_BASE_COLUMNS, "to": "object", "cc": "object", "bcc": "object", "content": "content"},
        default_action=Action.EMAIL_SEND,
    ),
    SourceKind.FILE: SourceMapping(
        source_kind=SourceKind.FILE,
        column_map={**_BASE_COLUMNS, "filename": "object", "content": "content"},
        default_action=Action.FILE_OPEN,
    ),
}


class MappingManager:
    """Stores and loads SourceMapping documents as JSON files"""

    def __init__(self, mapping_dir: Optional[Path] = None):
        """Initialize the manager

        Args:
            mapping_dir: Directory holding <kind>.json overrides; None means defaults only
        """
        self.mapping_dir = Path(mapping_dir) if mapping_dir else None

    def get_mapping_path(self, kind: SourceKind) -> Path:
        if self.mapping_dir is None:
            raise IngestError("no mapping directory configured")
        return self.mapping_dir / f"{kind.value}.json"

    def save_mapping(self, mapping: SourceMapping) -> Path:
        path = self.get_mapping_path(mapping.source_kind)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(mapping.model_dump(mode="json"), f, indent=2)
            logger.info(f"Saved mapping for {mapping.source_kind.value} to {path}")
        except OSError as e:
            logger.error(f"Error saving mapping for {mapping.source_kind.value}: {e}")
            raise IngestError(f"cannot write mapping {path}: {e}") from e
        return path

    def load_mapping(self, kind: SourceKind) -> SourceMapping:
        """Load the override for a source kind, falling back to the default layout"""
        if self.mapping_dir is not None:
            path = self.get_mapping_path(kind)
            if path.exists():
                return load_mapping_file(path)
        if kind not in DEFAULT_MAPPINGS:
            raise IngestError(f"no mapping available for source '{kind.value}'")
        logger.debug(f"Using default mapping for {kind.value}")
        return DEFAULT_MAPPINGS[kind]

    def list_mappings(self) -> List[str]:
        if self.mapping_dir is None or not self.mapping_dir.exists():
            return []
        return sorted(f.stem for f in self.mapping_dir.glob("*.json"))


def load_mapping_file(path: Path) -> SourceMapping:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        mapping = SourceMapping.model_validate(data)
    except (OSError, json.JSONDecodeError) as e:
        raise IngestError(f"cannot read mapping {path}: {e}") from e
    except ValidationError as e:
        raise IngestError(f"invalid mapping {path}: {e.errors()[0]['msg']}") from e
    logger.info(f"Loaded mapping for {mapping.source_kind.value} from {path}")
    return mapping
