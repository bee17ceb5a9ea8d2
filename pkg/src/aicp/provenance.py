"""Config hashing and the comment lines stamped into output files."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def canonical_json(config) -> str:
    return json.dumps(_plain(config), sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    """Short SHA-256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:16]


def provenance_lines(config, master_seed, label=None):
    """Comment lines (without the leading ``#``) for CSV outputs."""
    lines = [f"aicp config_hash={config_hash(config)} master_seed={master_seed}"]
    if label:
        lines.append(label)
    return lines
