"""Mixed-precision packed storage for a quantized layer (``SKQ1``).

Layout (all little-endian)::

    magic "SKQ1" | version u16 | n u32 | m u32 | b_min u8 | b_max u8
    bits[n] u8 | permutation[n] u32 | alpha m x f32
    for bit in b_min..b_max:
        rows u32 | codebooks rows x 2**bit x f16 | labels ceil(rows*m*bit/32) x u32
    crc32 u32 over every preceding byte

Rows are stably sorted by bit width; ``permutation[p]`` is the original index
of packed row ``p``.  Labels form one continuous LSB-first bit stream per
group, so a label may straddle a word boundary.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SKQ1"
VERSION = 1
_HEADER = struct.Struct("<4sHIIBB")


class PackError(ValueError):
    pass


@dataclass
class QuantizedLayer:
    bits: np.ndarray        # (n,) ints
    labels: np.ndarray      # (n, m) ints, row i < 2**bits[i]
    codebooks: list         # row i: exactly 2**bits[i] centroids
    alpha: np.ndarray       # (m,) float32
    b_min: int
    b_max: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.alpha = np.asarray(self.alpha, dtype=np.float32)
        self.codebooks = [np.asarray(c, dtype=np.float64) for c in self.codebooks]

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def m(self) -> int:
        return self.labels.shape[1]

    def validate(self) -> None:
        n, m = self.labels.shape
        if not 1 <= self.b_min <= self.b_max <= 8:
            raise PackError(f"bad bit range {self.b_min}..{self.b_max}")
        if self.bits.shape != (n,) or self.alpha.shape != (m,) or len(self.codebooks) != n:
            raise PackError("bits, alpha, codebooks and labels disagree on shape")
        if np.any(self.bits < self.b_min) or np.any(self.bits > self.b_max):
            raise PackError(f"bits outside [{self.b_min}, {self.b_max}]")
        for i in range(n):
            size = 2 ** int(self.bits[i])
            if self.codebooks[i].shape != (size,):
                raise PackError(f"row {i}: codebook has {self.codebooks[i].size} entries, needs {size}")
            if m and (self.labels[i].min() < 0 or self.labels[i].max() >= size):
                raise PackError(f"row {i}: label out of range for {self.bits[i]} bits")
        if not np.all(np.isfinite(self.alpha)) or np.any(self.alpha <= 0):
            raise PackError("alpha must be finite and positive")

    def rounded(self) -> "QuantizedLayer":
        """Copy with codebooks rounded to binary16, as stored on disk."""
        return QuantizedLayer(
            self.bits.copy(), self.labels.copy(),
            [round_half(c) for c in self.codebooks],
            self.alpha.copy(), self.b_min, self.b_max, dict(self.meta),
        )

    def equals(self, other: "QuantizedLayer") -> bool:
        return (
            self.b_min == other.b_min and self.b_max == other.b_max
            and np.array_equal(self.bits, other.bits)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.alpha.view(np.uint32), other.alpha.view(np.uint32))
            and len(self.codebooks) == len(other.codebooks)
            and all(np.array_equal(a, b) for a, b in zip(self.codebooks, other.codebooks))
        )


def round_half(values) -> np.ndarray:
    """Round to IEEE binary16 (nearest-even) and widen back to float64."""
    with np.errstate(over="ignore"):
        h = np.asarray(values, dtype=np.float64).astype(np.float16)
    if not np.all(np.isfinite(h)):
        raise PackError("codebook value overflows binary16")
    return h.astype(np.float64)


def pad_codebook(centroids, bits: int) -> np.ndarray:
    """Extend ascending centroids to ``2**bits`` entries by repeating the last one."""
    c = np.asarray(centroids, dtype=np.float64)
    size = 2**bits
    if c.size > size or c.size == 0:
        raise ValueError(f"cannot fit {c.size} centroids into {size} slots")
    return np.concatenate([c, np.full(size - c.size, c[-1])])


def pack_labels(values, bit: int) -> bytes:
    """LSB-first bit stream of ``bit``-wide values, zero-padded to whole u32 words."""
    v = np.asarray(values, dtype=np.uint32).ravel()
    stream = ((v[:, None] >> np.arange(bit, dtype=np.uint32)) & 1).astype(np.uint8).ravel()
    words = -(-stream.size // 32)
    stream = np.concatenate([stream, np.zeros(words * 32 - stream.size, dtype=np.uint8)])
    return np.packbits(stream, bitorder="little").tobytes()


def unpack_labels(buf: bytes, count: int, bit: int) -> np.ndarray:
    stream = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    chunks = stream[: count * bit].reshape(count, bit).astype(np.int64)
    return chunks @ (1 << np.arange(bit, dtype=np.int64))


def label_words(rows: int, m: int, bit: int) -> int:
    return -(-rows * m * bit // 32)


def permutation(bits) -> np.ndarray:
    return np.argsort(np.asarray(bits), kind="stable")


def pack(layer: QuantizedLayer) -> bytes:
    layer.validate()
    n, m = layer.n, layer.m
    perm = permutation(layer.bits)
    out = [
        _HEADER.pack(MAGIC, VERSION, n, m, layer.b_min, layer.b_max),
        layer.bits.astype(np.uint8).tobytes(),
        perm.astype("<u4").tobytes(),
        layer.alpha.astype("<f4").tobytes(),
    ]
    for bit in range(layer.b_min, layer.b_max + 1):
        rows = perm[layer.bits[perm] == bit]
        out.append(struct.pack("<I", rows.size))
        if rows.size:
            cb = np.stack([layer.codebooks[r] for r in rows])
            round_half(cb)  # overflow check
            out.append(cb.astype("<f2").tobytes())
        out.append(pack_labels(layer.labels[rows], bit))
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes, what):
        if self.pos + nbytes > len(self.buf):
            raise PackError(f"truncated {what}: need {nbytes} bytes at offset {self.pos}")
        chunk = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return chunk


def unpack(blob: bytes) -> QuantizedLayer:
    blob = bytes(blob)
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise PackError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < _HEADER.size + 4:
        raise PackError("truncated header")
    _, version, n, m, b_min, b_max = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise PackError(f"unsupported SKQ1 version {version} (expected {VERSION})")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise PackError("CRC32 mismatch: blob is corrupted")
    if not 1 <= b_min <= b_max <= 8:
        raise PackError(f"bad bit range {b_min}..{b_max}")

    r = _Reader(body)
    r.pos = _HEADER.size
    bits = np.frombuffer(r.take(n, "bit allocation"), dtype=np.uint8).astype(np.int64)
    perm = np.frombuffer(r.take(4 * n, "permutation"), dtype="<u4").astype(np.int64)
    alpha = np.frombuffer(r.take(4 * m, "alpha"), dtype="<f4").astype(np.float32)
    if np.any(bits < b_min) or np.any(bits > b_max):
        raise PackError(f"bit allocation outside [{b_min}, {b_max}]")
    if not np.array_equal(perm, permutation(bits)):
        raise PackError("row permutation does not match the bit allocation")

    labels = np.zeros((n, m), dtype=np.int64)
    codebooks: list = [None] * n
    for bit in range(b_min, b_max + 1):
        (count,) = struct.unpack("<I", r.take(4, f"{bit}-bit group header"))
        rows = perm[bits[perm] == bit]
        if count != rows.size:
            raise PackError(f"{bit}-bit group holds {count} rows, allocation says {rows.size}")
        size = 2**bit
        cb = np.frombuffer(r.take(2 * count * size, f"{bit}-bit codebooks"), dtype="<f2")
        cb = cb.astype(np.float64).reshape(count, size)
        words = label_words(count, m, bit)
        lab = unpack_labels(r.take(4 * words, f"{bit}-bit labels"), count * m, bit)
        labels[rows] = lab.reshape(count, m)
        for p, row in enumerate(rows):
            codebooks[row] = cb[p]
    if r.pos != len(body):
        raise PackError(f"{len(body) - r.pos} unexpected trailing bytes")
    layer = QuantizedLayer(bits, labels, codebooks, alpha, b_min, b_max)
    layer.validate()
    return layer


def dequantize(layer: QuantizedLayer) -> np.ndarray:
    """``Wq[i, j] = f16(codebook[i][label[i, j]]) * alpha[j]`` evaluated in float64."""
    Wq = np.empty(layer.labels.shape)
    for i, cb in enumerate(layer.codebooks):
        Wq[i] = round_half(cb)[layer.labels[i]]
    return Wq * layer.alpha.astype(np.float64)


@dataclass
class SizeReport:
    n: int
    m: int
    label_bytes: int
    codebook_bytes: int
    alpha_bytes: int
    overhead_bytes: int
    label_payload_bits: int  # sum_i bits[i] * m, before word padding

    @property
    def total_bytes(self) -> int:
        return self.label_bytes + self.codebook_bytes + self.alpha_bytes + self.overhead_bytes

    @property
    def label_bits_per_weight(self) -> float:
        return self.label_payload_bits / (self.n * self.m)

    @property
    def effective_bits(self) -> float:
        return 8 * self.total_bytes / (self.n * self.m)

    def as_dict(self) -> dict:
        return {
            "label_bytes": self.label_bytes,
            "codebook_bytes": self.codebook_bytes,
            "alpha_bytes": self.alpha_bytes,
            "overhead_bytes": self.overhead_bytes,
            "total_bytes": self.total_bytes,
            "label_bits_per_weight": self.label_bits_per_weight,
            "effective_bits": self.effective_bits,
        }


def size_report(layer: QuantizedLayer) -> SizeReport:
    """Byte accounting of the packed form; matches ``len(pack(layer))``."""
    n, m = layer.n, layer.m
    label_bytes = codebook_bytes = 0
    for bit in range(layer.b_min, layer.b_max + 1):
        rows = int(np.sum(layer.bits == bit))
        label_bytes += 4 * label_words(rows, m, bit)
        codebook_bytes += 2 * rows * 2**bit
    groups = layer.b_max - layer.b_min + 1
    overhead = _HEADER.size + n + 4 * n + 4 * groups + 4
    return SizeReport(n, m, label_bytes, codebook_bytes, 4 * m, overhead,
                      int(np.sum(layer.bits)) * m)
