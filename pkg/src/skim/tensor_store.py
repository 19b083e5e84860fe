"""Self-describing binary container (``SKB1``) for dense 2-D tensors.

Layout::

    bytes 0-3      magic b"SKB1"
    bytes 4-7      u32 LE manifest length L
    bytes 8..8+L   UTF-8 JSON manifest
    payload        raw little-endian elements, offsets relative to payload start

The manifest is ``{"tensors": [{"name", "rows", "cols", "dtype", "offset"}, ...],
"meta": {...}}``.  JSON is written with sorted keys and compact separators so
identical inputs give identical bytes on every host.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"SKB1"
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


class BundleError(ValueError):
    """Raised for malformed or inconsistent bundle files."""


@dataclass
class Matrix:
    """Dense row-major matrix; always held as float64 in memory."""

    name: str
    data: np.ndarray
    dtype: str = "f64"  # on-disk element type

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"Matrix {self.name!r} must be 2-D, got shape {arr.shape}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"unknown dtype tag {self.dtype!r}")
        self.data = np.ascontiguousarray(arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Matrix):
            return NotImplemented
        return (
            self.name == other.name
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass
class Bundle:
    tensors: list[Matrix]
    meta: dict[str, Any] = field(default_factory=dict)

    def get(self, name: str) -> Matrix:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)

    def names(self) -> list[str]:
        return [t.name for t in self.tensors]


def encode_bundle(tensors: list[Matrix], meta: dict[str, Any] | None = None) -> bytes:
    names = [t.name for t in tensors]
    if len(set(names)) != len(names):
        raise BundleError(f"duplicate tensor names in {names}")
    entries = []
    chunks = []
    offset = 0
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise BundleError(f"tensor {t.name!r} contains non-finite values")
        raw = t.data.astype(_DTYPES[t.dtype]).tobytes(order="C")
        if t.dtype == "f32" and not np.all(np.isfinite(t.data.astype(np.float32))):
            raise BundleError(f"tensor {t.name!r} overflows float32")
        entries.append(
            {"name": t.name, "rows": t.rows, "cols": t.cols, "dtype": t.dtype, "offset": offset}
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"tensors": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(chunks)


def decode_bundle(buf: bytes) -> Bundle:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise BundleError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    (mlen,) = struct.unpack_from("<I", buf, 4)
    if 8 + mlen > len(buf):
        raise BundleError("truncated manifest")
    try:
        manifest = json.loads(buf[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"unreadable manifest: {exc}") from exc
    payload = memoryview(buf)[8 + mlen :]

    tensors = []
    spans = []
    expected_end = 0
    for e in manifest.get("tensors", []):
        dt = _DTYPES.get(e["dtype"])
        if dt is None:
            raise BundleError(f"unknown dtype {e['dtype']!r} for {e['name']!r}")
        rows, cols, off = int(e["rows"]), int(e["cols"]), int(e["offset"])
        nbytes = rows * cols * dt.itemsize
        if off < 0 or rows < 0 or cols < 0:
            raise BundleError(f"negative shape/offset for {e['name']!r}")
        if off + nbytes > len(payload):
            raise BundleError(
                f"truncated payload: {e['name']!r} needs bytes {off}..{off + nbytes}, "
                f"payload has {len(payload)}"
            )
        spans.append((off, off + nbytes, e["name"]))
        arr = np.frombuffer(payload[off : off + nbytes], dtype=dt).reshape(rows, cols)
        if not np.all(np.isfinite(arr)):
            raise BundleError(f"tensor {e['name']!r} contains non-finite values")
        tensors.append(Matrix(e["name"], arr.astype(np.float64), dtype=e["dtype"]))
        expected_end = max(expected_end, off + nbytes)

    spans.sort()
    for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
        if start < end:
            raise BundleError(f"overlapping tensors {a!r} and {b!r}")
    names = [t.name for t in tensors]
    if len(set(names)) != len(names):
        raise BundleError("duplicate tensor names in manifest")
    if expected_end != len(payload):
        raise BundleError(
            f"manifest/payload size mismatch: manifest covers {expected_end} bytes, "
            f"payload has {len(payload)}"
        )
    return Bundle(tensors, manifest.get("meta", {}))


def write_bundle(path, tensors: list[Matrix], meta: dict[str, Any] | None = None) -> None:
    """Write tensors to ``path``.  Nothing is written if any tensor is invalid."""
    data = encode_bundle(tensors, meta)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_bundle_full(path) -> Bundle:
    return decode_bundle(Path(path).read_bytes())


def read_bundle(path) -> list[Matrix]:
    """Return the tensors stored at ``path`` in manifest order."""
    return read_bundle_full(path).tensors
