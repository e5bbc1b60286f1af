"""Versioned model files: gzip-compressed canonical JSON, arrays stored as base64.

Bytes are a pure function of the model (sorted keys, fixed gzip mtime), so
file sizes and digests are reproducible.
"""

from __future__ import annotations

import base64
import gzip
import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT = "hmdbench-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _encode(obj):
    if isinstance(obj, np.ndarray):
        a = np.ascontiguousarray(obj)
        if a.dtype.kind == "f":
            a = a.astype("<f8")
        elif a.dtype.kind in "iub":
            a = a.astype("<i8")
        else:
            raise TypeError(f"cannot serialize array of dtype {a.dtype}")
        return {"__array__": a.dtype.str, "shape": list(a.shape),
                "data": base64.b64encode(a.tobytes()).decode("ascii")}
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v or v in (float("inf"), float("-inf")):
            return {"__float__": repr(v)}
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            raw = base64.b64decode(obj["data"])
            return np.frombuffer(raw, dtype=np.dtype(obj["__array__"])).reshape(obj["shape"]).copy()
        if "__float__" in obj:
            return float(obj["__float__"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def dumps(model) -> bytes:
    d = model.to_dict() if hasattr(model, "to_dict") else dict(model)
    doc = {"format": FORMAT, "version": VERSION, "model": _encode(d)}
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return gzip.compress(text.encode("utf-8"), compresslevel=9, mtime=0)


def _model_classes():
    from .baseline import BaselineModel
    from .bow import BowModel
    from .markov import MarkovDetector
    from .supervised import RandomForestModel, RFDetector
    return {"markov": MarkovDetector, "bow": BowModel, "baseline": BaselineModel,
            "rf": RFDetector, "forest": RandomForestModel}


def loads(data: bytes):
    try:
        doc = json.loads(gzip.decompress(data).decode("utf-8"))
    except (OSError, EOFError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"not a model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError("not a model file: missing format header")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    d = _decode(doc["model"])
    kind = d.get("kind")
    classes = _model_classes()
    if kind not in classes:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    try:
        return classes[kind].from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt {kind} model: {exc}") from None


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model, path) -> int:
    data = dumps(model)
    atomic_write_bytes(path, data)
    return len(data)


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file {path} not found")
    return loads(path.read_bytes())
