import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, TextIO

import numpy as np

from src.errors import DataError

logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; every randomized stage draws from one of these"""
    return np.random.default_rng(seed)


@contextmanager
def open_text(path: Path, mode: str = "r", newline: Optional[str] = "") -> Iterator[TextIO]:
    """Open a UTF-8 text file; I/O and decoding failures become DataError naming the path"""
    path = Path(path)
    try:
        if "r" not in mode:
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, mode, encoding="utf-8", newline=newline) as f:
            yield f
    except UnicodeDecodeError as e:
        logger.error(f"Error decoding {path}: {e}")
        raise DataError(f"{path} is not valid UTF-8 (byte offset {e.start})") from e
    except OSError as e:
        action = "read" if "r" in mode else "write"
        logger.error(f"Error accessing {path}: {e}")
        raise DataError(f"cannot {action} {path}: {e.strerror or e}") from e


def write_text(path: Path, text: str) -> None:
    with open_text(path, "w", newline="\n") as f:
        f.write(text)


def dump_json_line(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> int:
    """Write records as JSON lines (UTF-8, LF) and return how many were written"""
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for record in records:
                f.write(dump_json_line(record) + "\n")
                count += 1
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise DataError(f"cannot write {path}: {e.strerror or e}") from e
    logger.debug(f"Wrote {count} records to {path}")
    return count


def iter_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    with open_text(path, newline=None) as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"invalid JSON at {path}:{line_no}: {e.msg}") from e


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    return list(iter_jsonl(path))


def write_json(path: Path, payload: Any) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, ensure_ascii=False, default=str)
            f.write("\n")
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise DataError(f"cannot write {path}: {e.strerror or e}") from e


def read_json(path: Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    try:
        with open_text(path, newline=None) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in {path} at line {e.lineno}: {e.msg}") from e


def sidecar_path(artifact: Path) -> Path:
    artifact = Path(artifact)
    if artifact.suffix:
        return artifact.with_name(artifact.name + ".config.json")
    return artifact / "config.json"


def echo_config(artifact: Path, config: Dict[str, Any]) -> Path:
    """Write the effective configuration next to an output artifact"""
    target = sidecar_path(artifact)
    write_json(target, config)
    return target
