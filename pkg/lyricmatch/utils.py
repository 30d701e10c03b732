import json
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Union

from tagsong.exceptions import ConfigError

LOCK_FILE_NAME = ".lyricmatch.lock"


@contextmanager
def run_lock(config_dir: Union[str, Path]) -> Iterator[Path]:
    """Hold ``.lyricmatch.lock`` in ``config_dir`` for the duration of a run."""
    lock_file_path = Path(config_dir) / LOCK_FILE_NAME
    if lock_file_path.exists():
        raise ConfigError(f"another lyricmatch run holds {lock_file_path}; remove it if that run is gone")
    lock_file_path.write_text(str(os.getpid()))
    try:
        yield lock_file_path
    finally:
        if lock_file_path.exists():
            lock_file_path.unlink()


def ensure_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json_report(data: Any, path: Union[str, Path]) -> Path:
    """Keys in insertion order plus a trailing newline; equal reports are equal bytes."""
    path = Path(path)
    ensure_dir(path.parent)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return path


def report_name(*parts: str) -> str:
    return "-".join(part.replace("/", "_") for part in parts if part) + ".json"
