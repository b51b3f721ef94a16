"""Shared model checkpoint format.

Every trained model in this package serializes to the same JSON document:

    {format_version, model_kind, hyperparams, tensors: [{name, shape, values}]}

Values are written with repr(float), which round-trips IEEE doubles exactly,
so save -> load -> save is bit-identical.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, model_kind: str, hyperparams: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    tensors = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "values": [repr(float(v)) for v in arr.ravel()],
        })
    doc = {
        "format_version": FORMAT_VERSION,
        "model_kind": model_kind,
        "hyperparams": hyperparams,
        "tensors": tensors,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_checkpoint(path, expect_kind: str | None = None
                    ) -> tuple[str, dict, dict[str, np.ndarray]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    kind = doc["model_kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ValueError(f"checkpoint holds a {kind!r} model, expected {expect_kind!r}")
    arrays = {}
    for entry in doc["tensors"]:
        values = np.array([float(v) for v in entry["values"]], dtype=np.float64)
        arrays[entry["name"]] = values.reshape(entry["shape"])
    return kind, doc["hyperparams"], arrays


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
