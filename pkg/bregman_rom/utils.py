"""
Utility functions shared by the services and the CLI.
"""
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union


def config_hash(payload: Any) -> str:
    """
    Stable short hash of a JSON-serializable payload.

    Args:
        payload: Mapping or list (e.g. a dumped ExperimentConfig)

    Returns:
        First 16 hex digits of the SHA-256 of the canonical JSON encoding
    """
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(encoded.encode("utf-8")).hexdigest()[:16]


def atomic_write(path: Union[str, Path], data: Union[bytes, str]) -> Path:
    """
    Write a file through a temporary sibling and rename it into place.

    Readers never observe a partially written artifact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def format_float(value: float) -> str:
    """Compact scientific rendering used in summary tables."""
    if value is None:
        return "-"
    return f"{value:.3e}"
