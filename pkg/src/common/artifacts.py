"""
Artifact writers: RFC-4180 CSV through pandas, JSON for manifests and
diagnostics, and the config hash stamped into every artifact.
"""

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)


def config_hash(config_payload, model_bytes=b""):
    """
    SHA-256 over canonical JSON of the config plus the raw model file bytes.
    Returns the first 16 hex characters.
    """
    canonical = json.dumps(config_payload, sort_keys=True, separators=(",", ":"), default=str)
    digest = hashlib.sha256(canonical.encode("utf-8") + model_bytes).hexdigest()
    return digest[:16]


def write_csv(rows, path, stamp=None):
    """
    Write a list of dicts (or a DataFrame) as CSV.
    `stamp` is a dict of constant columns (config_hash, seed) prepended to every row.
    """
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    if stamp:
        for i, (key, value) in enumerate(stamp.items()):
            frame.insert(i, key, value)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, decimal=".", lineterminator="\r\n", float_format="%.17g")
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def write_json(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    logger.info("Wrote %s", path)
    return path


def write_manifest(payload, path):
    """The run manifest is the only artifact that carries a timestamp."""
    entry = dict(payload)
    entry["timestamp"] = datetime.now(timezone.utc).isoformat()
    return write_json(entry, path)


def _json_default(value):
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")
