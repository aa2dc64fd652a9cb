"""Binary chip-pack container (``chips.llpk``) and its ``manifest.json`` sidecar.

Layout, little-endian::

    "LLPK" u8 version u8 n_classes u32 chip_count
    per chip:
        u64 id, i32 grid_x, i32 grid_y, u16 n_overlaps,
        n_overlaps x (u32 commune_id, f32 weight),
        30000 x u8 RGB (row-major, channel-last),
        u8 has_labels, [10000 x u8 class ids],
        u8 split (0 train, 1 validation, 2 test, 255 unassigned)
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .data import SPLIT_CODES, SPLIT_NAMES, Chip, ChipDataset, ClassScheme, CommuneTable, synthetic_scheme

MAGIC = b"LLPK"
VERSION = 1
PACK_NAME = "chips.llpk"
MANIFEST_NAME = "manifest.json"
RGB_BYTES = 100 * 100 * 3
LABEL_BYTES = 100 * 100

_HEADER = struct.Struct("<4sBBI")
_CHIP_HEAD = struct.Struct("<QiiH")
_OVERLAP = struct.Struct("<If")


class ChipPackError(ValueError):
    pass


class BadMagicError(ChipPackError):
    pass


class UnsupportedVersionError(ChipPackError):
    pass


class TruncatedPackError(ChipPackError):
    pass


class ChecksumMismatchError(ChipPackError):
    pass


def pack_bytes(dataset: ChipDataset) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, dataset.n_classes, len(dataset.chips))]
    for chip in dataset.chips:
        parts.append(_CHIP_HEAD.pack(chip.id, chip.grid_x, chip.grid_y, len(chip.overlaps)))
        parts.extend(_OVERLAP.pack(cid, w) for cid, w in chip.overlaps)
        rgb = np.asarray(chip.rgb, dtype=np.uint8)
        if rgb.shape != (100, 100, 3):
            raise ValueError(f"chip {chip.id}: rgb must be (100, 100, 3), got {rgb.shape}")
        parts.append(rgb.tobytes())
        if chip.labels is None:
            parts.append(b"\x00")
        else:
            labels = np.asarray(chip.labels, dtype=np.uint8)
            if labels.shape != (100, 100):
                raise ValueError(f"chip {chip.id}: labels must be (100, 100), got {labels.shape}")
            if labels.max() >= dataset.n_classes:
                raise ValueError(f"chip {chip.id}: label id out of range")
            parts.append(b"\x01" + labels.tobytes())
        parts.append(bytes([SPLIT_CODES[chip.split]]))
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def unpack_bytes(buf: bytes) -> ChipDataset:
    if len(buf) < _HEADER.size + 4:
        if buf[:4] and buf[:4] != MAGIC[: len(buf[:4])]:
            raise BadMagicError("not a chip pack")
        raise TruncatedPackError("chip pack shorter than its header")
    magic, version, n_classes, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported chip pack version {version}")
    view = memoryview(buf)
    end = len(buf) - 4
    off = _HEADER.size

    def need(nbytes):
        if off + nbytes > end:
            raise TruncatedPackError(f"chip pack truncated at byte {off}")

    chips = []
    for _ in range(count):
        need(_CHIP_HEAD.size)
        cid, gx, gy, n_ov = _CHIP_HEAD.unpack_from(buf, off)
        off += _CHIP_HEAD.size
        need(n_ov * _OVERLAP.size)
        overlaps = tuple(_OVERLAP.unpack_from(buf, off + i * _OVERLAP.size) for i in range(n_ov))
        off += n_ov * _OVERLAP.size
        need(RGB_BYTES + 1)
        rgb = np.frombuffer(view[off : off + RGB_BYTES], dtype=np.uint8).reshape(100, 100, 3).copy()
        off += RGB_BYTES
        has_labels = buf[off]
        off += 1
        labels = None
        if has_labels:
            need(LABEL_BYTES)
            labels = np.frombuffer(view[off : off + LABEL_BYTES], dtype=np.uint8).reshape(100, 100).copy()
            off += LABEL_BYTES
        need(1)
        code = buf[off]
        off += 1
        if code not in SPLIT_NAMES:
            raise ChipPackError(f"chip {cid}: unknown split code {code}")
        chips.append(
            Chip(id=cid, grid_x=gx, grid_y=gy, rgb=rgb, overlaps=_fix_weights(overlaps), labels=labels, split=SPLIT_NAMES[code])
        )
    if off != end:
        raise ChipPackError(f"{end - off} unexpected bytes before checksum")
    (crc,) = struct.unpack_from("<I", buf, end)
    if crc != zlib.crc32(view[:end]):
        raise ChecksumMismatchError("chip pack CRC32 mismatch")
    return ChipDataset(n_classes=n_classes, chips=chips)


def _fix_weights(overlaps):
    # f32 weights are stored as-is; Chip validation tolerates their rounding
    return tuple((int(c), float(w)) for c, w in overlaps)


def manifest_dict(dataset: ChipDataset) -> dict:
    scheme = dataset.scheme or synthetic_scheme(dataset.n_classes)
    out = {
        "scheme": scheme.name,
        "class_labels": list(scheme.labels),
        "n_classes": dataset.n_classes,
        "chip_count": len(dataset.chips),
        "seed": dataset.seed,
        "communes": {},
    }
    if dataset.communes is not None:
        out["communes"] = {
            str(cid): {
                "proportions": [float(v) for v in dataset.communes[cid]],
                "chip_count": int(dataset.communes.chip_counts.get(cid, 0)),
            }
            for cid in dataset.communes.ids
        }
    return out


def write_dataset(dataset: ChipDataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / PACK_NAME).write_bytes(pack_bytes(dataset))
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest_dict(dataset), indent=2) + "\n")
    return directory


def read_dataset(directory) -> ChipDataset:
    directory = Path(directory)
    dataset = unpack_bytes((directory / PACK_NAME).read_bytes())
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        dataset.scheme = ClassScheme(manifest["scheme"], tuple(manifest["class_labels"]))
        dataset.seed = manifest.get("seed")
        communes = manifest.get("communes") or {}
        if communes:
            dataset.communes = CommuneTable(
                {int(k): np.asarray(v["proportions"], dtype=np.float64) for k, v in communes.items()},
                {int(k): int(v["chip_count"]) for k, v in communes.items()},
            )
    return dataset
