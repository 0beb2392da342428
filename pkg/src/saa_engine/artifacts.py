"""Canonical artifact serialization and digesting.

Every JSON artifact is written through :func:`write_artifact` so that
identical inputs always produce identical bytes: keys are sorted, floats
are emitted with a fixed number of decimals (wrap values in :class:`Fixed`
to pin the precision, e.g. 6 decimals for weights, 4 for confidences),
and NaN/inf are rejected outright.
"""

from __future__ import annotations

import hashlib
import math
import os
from typing import Any

SCHEMA_VERSION = "1"

# Default decimal places for bare floats in artifacts.
DEFAULT_PLACES = 6


class Fixed:
    """A float serialized with a fixed number of decimal places."""

    __slots__ = ("value", "places")

    def __init__(self, value: float, places: int = DEFAULT_PLACES):
        self.value = float(value)
        self.places = places

    def __repr__(self):
        return f"Fixed({self.value!r}, {self.places})"


def _format_float(value: float, places: int) -> str:
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"non-finite value {value!r} in artifact")
    # adding 0.0 normalizes -0.0 so rounding never emits "-0.000000"
    rounded = round(value, places) + 0.0
    return f"{rounded:.{places}f}"


def _encode(obj: Any, out: list) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, Fixed):
        out.append(_format_float(obj.value, obj.places))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_format_float(obj, DEFAULT_PLACES))
    elif isinstance(obj, str):
        out.append('"' + obj.replace("\\", "\\\\").replace('"', '\\"')
                   .replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t") + '"')
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"artifact keys must be strings, got {key!r}")
            if i:
                out.append(",")
            _encode(key, out)
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} in artifact")


def canonical_json(obj: Any) -> str:
    """Deterministic compact JSON with sorted keys and fixed float formats."""
    out: list = []
    _encode(obj, out)
    return "".join(out)


def write_artifact(path: str, obj: Any) -> str:
    """Write ``obj`` as canonical JSON (UTF-8, trailing newline); returns path."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    text = canonical_json(obj) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_text(path: str, text: str) -> str:
    """Write a text artifact (markdown reports) with normalized newlines."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def digest_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_tree(root: str, exclude: tuple = ()) -> dict:
    """sha256 of every file under ``root``, keyed by relative posix path."""
    digests = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root).replace(os.sep, "/")
            if rel in exclude:
                continue
            digests[rel] = digest_file(full)
    return digests


def digest_obj(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
