import json
import struct

import numpy as np
import pytest

from orbitllp import chippack as P
from orbitllp import data as D


def tiny_dataset():
    rng = np.random.default_rng(5)
    chip = D.Chip(
        id=2**40 + 3,
        grid_x=-4,
        grid_y=9,
        rgb=rng.integers(0, 256, (100, 100, 3), dtype=np.uint8),
        overlaps=((11, 0.25), (4, 0.75)),
        labels=rng.integers(0, 3, (100, 100), dtype=np.uint8),
        split="validation",
    )
    return D.ChipDataset(3, [chip])


def test_empty_dataset_is_header_only():
    raw = P.pack_bytes(D.ChipDataset(5, []))
    assert len(raw) == 10 + 4
    assert raw[:4] == b"LLPK"
    back = P.unpack_bytes(raw)
    assert back.n_classes == 5 and back.chips == []
    assert P.pack_bytes(back) == raw


def test_one_chip_roundtrip():
    ds = tiny_dataset()
    raw = P.pack_bytes(ds)
    assert len(raw) == 10 + 18 + 2 * 8 + 30000 + 1 + 10000 + 1 + 4
    back = P.unpack_bytes(raw)
    c, d = ds.chips[0], back.chips[0]
    assert (c.id, c.grid_x, c.grid_y, c.split) == (d.id, d.grid_x, d.grid_y, d.split)
    assert d.overlaps == c.overlaps
    np.testing.assert_array_equal(c.rgb, d.rgb)
    np.testing.assert_array_equal(c.labels, d.labels)
    assert P.pack_bytes(back) == raw


def test_unlabelled_chip_roundtrip():
    ds = tiny_dataset()
    ds.chips[0].labels = None
    raw = P.pack_bytes(ds)
    assert P.unpack_bytes(raw).chips[0].labels is None
    assert len(raw) == 10 + 18 + 16 + 30000 + 1 + 1 + 4


def test_crc_is_the_final_word():
    import zlib

    raw = P.pack_bytes(tiny_dataset())
    assert struct.unpack("<I", raw[-4:])[0] == zlib.crc32(raw[:-4])


def test_world_write_read_write_idempotent(world, tmp_path):
    D.assign_splits(world, 12)
    P.write_dataset(world, tmp_path / "a")
    back = P.read_dataset(tmp_path / "a")
    P.write_dataset(back, tmp_path / "b")
    for name in (P.PACK_NAME, P.MANIFEST_NAME):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert back.split_counts() == world.split_counts()
    manifest = json.loads((tmp_path / "a" / P.MANIFEST_NAME).read_text())
    assert len(manifest["communes"]) == 40 and manifest["seed"] == 1234


def test_errors_are_distinct():
    raw = P.pack_bytes(tiny_dataset())
    with pytest.raises(P.BadMagicError):
        P.unpack_bytes(b"LLPX" + raw[4:])
    with pytest.raises(P.UnsupportedVersionError):
        P.unpack_bytes(raw[:4] + b"\x07" + raw[5:])
    with pytest.raises(P.TruncatedPackError):
        P.unpack_bytes(raw[:5000])
    with pytest.raises(P.TruncatedPackError):
        P.unpack_bytes(raw[:6])
    corrupt = bytearray(raw)
    corrupt[1000] ^= 0xFF
    with pytest.raises(P.ChecksumMismatchError):
        P.unpack_bytes(bytes(corrupt))
    kinds = {P.BadMagicError, P.UnsupportedVersionError, P.TruncatedPackError, P.ChecksumMismatchError}
    assert len(kinds) == 4 and all(issubclass(k, P.ChipPackError) for k in kinds)


def test_rejects_bad_shapes():
    ds = tiny_dataset()
    ds.chips[0].rgb = np.zeros((50, 50, 3), np.uint8)
    with pytest.raises(ValueError):
        P.pack_bytes(ds)
