import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skim.packing import (
    PackError, QuantizedLayer, dequantize, pack, pack_labels, pad_codebook, permutation,
    round_half, size_report, unpack, unpack_labels,
)


def random_layer(rng, n=None, m=None, b_min=2, b_max=4):
    n = n or int(rng.integers(1, 17))
    m = m or int(rng.integers(1, 33))
    bits = rng.integers(b_min, b_max + 1, size=n)
    labels = np.stack([rng.integers(0, 2**b, size=m) for b in bits])
    codebooks = [np.sort(rng.standard_normal(2**b)) for b in bits]
    alpha = rng.uniform(0.1, 10, size=m)
    return QuantizedLayer(bits, labels, codebooks, alpha, b_min, b_max)


def hand_layer():
    return QuantizedLayer(
        bits=[2, 2], labels=[[0, 1, 2, 3], [0, 1, 2, 3]],
        codebooks=[[-1.0, 0.0, 0.5, 1.0], [-2.0, -1.0, 1.0, 2.0]],
        alpha=np.ones(4), b_min=2, b_max=2,
    )


def test_hand_packed_labels():
    assert pack_labels([0, 1, 2, 3, 0, 1, 2, 3], 2) == bytes.fromhex("e4e40000")


def test_hand_packed_blob():
    blob = pack(hand_layer())
    assert blob[:4] == b"SKQ1"
    assert bytes.fromhex("e4e40000") in blob
    # header 16, bits 2, perm 8, alpha 16, group count 4, codebooks 16, labels 4, crc 4
    assert len(blob) == 70 == size_report(hand_layer()).total_bytes
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])


def test_straddling_labels():
    vals = np.arange(11) % 8
    buf = pack_labels(vals, 3)
    assert len(buf) == 8  # 33 bits -> two words
    assert np.array_equal(unpack_labels(buf, 11, 3), vals)


def test_round_half():
    assert round_half([1 / 3])[0] == np.float64(np.float16(1 / 3))
    with pytest.raises(PackError):
        round_half([1e6])


def test_pad_codebook():
    np.testing.assert_array_equal(pad_codebook([1.0, 2.0], 2), [1.0, 2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        pad_codebook(np.arange(5.0), 2)


def test_permutation_stable():
    assert list(permutation([3, 2, 3, 2])) == [1, 3, 0, 2]


def test_dequantize():
    layer = hand_layer()
    np.testing.assert_array_equal(dequantize(layer), [[-1, 0, 0.5, 1], [-2, -1, 1, 2]])


def test_corruption_detected(rng):
    blob = bytearray(pack(random_layer(rng)))
    blob[20] ^= 0xFF
    with pytest.raises(PackError, match="CRC32"):
        unpack(bytes(blob))


def test_bad_magic_version_truncation(rng):
    blob = pack(random_layer(rng))
    with pytest.raises(PackError, match="magic"):
        unpack(b"XXXX" + blob[4:])
    bumped = bytearray(blob)
    bumped[4] = 99
    with pytest.raises(PackError, match="version"):
        unpack(bytes(bumped))
    with pytest.raises(PackError):
        unpack(blob[:-9])


def test_validate_rejects(rng):
    layer = random_layer(rng, n=3, m=4)
    layer.labels[0, 0] = 2 ** int(layer.bits[0])
    with pytest.raises(PackError):
        pack(layer)
    layer = random_layer(rng, n=3, m=4)
    layer.codebooks[1] = layer.codebooks[1][:-1]
    with pytest.raises(PackError):
        pack(layer)


def test_size_uniform_3bit():
    n = m = 1024
    layer = QuantizedLayer(np.full(n, 3), np.zeros((n, m), dtype=np.int64),
                           [np.zeros(8)] * n, np.ones(m), 3, 3)
    rep = size_report(layer)
    assert rep.label_bytes == 393216
    assert rep.label_bits_per_weight == 3.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(0, 3))
def test_roundtrip_property(seed, b_min, span):
    rng = np.random.default_rng(seed)
    layer = random_layer(rng, b_min=b_min, b_max=min(b_min + span, 8))
    blob = pack(layer)
    back = unpack(blob)
    assert back.equals(layer.rounded())
    assert np.array_equal(back.bits, layer.bits) and np.array_equal(back.labels, layer.labels)
    assert np.array_equal(back.alpha, layer.alpha)
    assert pack(back) == blob
    assert size_report(layer).total_bytes == len(blob)
