"""JSON checkpoints for fitted G-DAN and CG-DAN models.

Document layout: ``{format, version, kind, meta, payload, sha256}``. The hash
covers everything but itself; floats are written with ``repr`` precision so
a reload reproduces every parameter bit for bit.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

from ..errors import ShiftLabError
from .cgdan import CgdanModel
from .gdan import GdanModel
from .temp_utils import atomic_write_text

FORMAT = "shiftlab-checkpoint"
VERSION = 1

_KINDS = {"gdan": GdanModel, "cgdan": CgdanModel}


class CheckpointError(ShiftLabError):
    """Unreadable, tampered or incompatible checkpoint."""


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _digest(body: dict) -> str:
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def to_document(model, meta: dict | None = None) -> dict:
    if model.kind not in _KINDS:
        raise CheckpointError(f"cannot checkpoint model kind {model.kind!r}")
    body = {"format": FORMAT, "version": VERSION, "kind": model.kind,
            "meta": meta or {}, "payload": model.to_dict()}
    return {**body, "sha256": _digest(body)}


def from_document(doc: dict):
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not a shiftlab checkpoint (format {doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    body = {k: v for k, v in doc.items() if k != "sha256"}
    if _digest(body) != doc.get("sha256"):
        raise CheckpointError("checkpoint hash mismatch; the file was modified")
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    return _KINDS[kind].from_dict(doc["payload"])


def save_checkpoint(path: Path, model, meta: dict | None = None) -> str:
    """Write atomically; returns the document hash."""
    doc = to_document(model, meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=1, allow_nan=False))
    return doc["sha256"]


def read_document(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path.name}: not valid JSON ({exc})") from exc


def load_checkpoint(path: Path):
    """Return ``(model, meta, sha256)``."""
    doc = read_document(path)
    return from_document(doc), doc.get("meta", {}), doc["sha256"]
