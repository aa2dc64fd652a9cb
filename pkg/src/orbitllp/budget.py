"""On-orbit budget arithmetic: label footprints, the float16 uplink, volumetry.

Uplink wire format, little-endian::

    "LLPU" u8 version u8 n_classes u32 n_communes
    per commune: u32 commune_id, n_classes x binary16
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

PROPORTION_BYTES = 2  # float16 per class per commune
LABEL_PIXEL_BYTES = 1  # uint8 class id per pixel
PIXELS_PER_CHIP = 100 * 100
KB = 1024
MB = 1_024_000  # display unit for "Mb"; raw byte counts are reported alongside

UPLINK_MAGIC = b"LLPU"
UPLINK_VERSION = 1
_UP_HEADER = struct.Struct("<4sBBI")
SUM_TOL = 1e-6
HALF_ULP_AT_ONE = 2.0**-11


def _round_half_up(value: float, places: int) -> Decimal:
    quantum = Decimal(1).scaleb(-places)
    return Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP)


def format_kb(nbytes: int) -> str:
    return f"{_round_half_up(nbytes / KB, 1)} Kb"


def format_mb(nbytes: int) -> str:
    return f"{_round_half_up(nbytes / MB, 0)} Mb"


@dataclass
class FootprintReport:
    proportions_bytes: int | None
    segmentation_bytes: int | None

    @property
    def proportions_display(self) -> str | None:
        return None if self.proportions_bytes is None else format_kb(self.proportions_bytes)

    @property
    def segmentation_display(self) -> str | None:
        return None if self.segmentation_bytes is None else format_mb(self.segmentation_bytes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["proportions_display"] = self.proportions_display
        out["segmentation_display"] = self.segmentation_display
        if self.proportions_bytes and self.segmentation_bytes:
            out["ratio"] = self.segmentation_bytes / self.proportions_bytes
        return out


def footprint(n_classes=None, n_communes=None, n_chips=None) -> FootprintReport:
    """Storage for commune proportions and for per-pixel segmentation labels.

    Either side may be omitted; its fields are then ``None``.
    """
    for name, v in (("n_classes", n_classes), ("n_communes", n_communes), ("n_chips", n_chips)):
        if v is not None and v < 1:
            raise ValueError(f"{name} must be positive")
    props = None
    if n_classes is not None and n_communes is not None:
        props = PROPORTION_BYTES * n_classes * n_communes
    seg = None if n_chips is None else LABEL_PIXEL_BYTES * PIXELS_PER_CHIP * n_chips
    return FootprintReport(props, seg)


# --- uplink codec ---------------------------------------------------------------


class UplinkError(ValueError):
    pass


class UplinkMagicError(UplinkError):
    pass


class UplinkTruncatedError(UplinkError):
    pass


class UplinkValueError(UplinkError):
    pass


def uplink_encode(communes: dict[int, np.ndarray] | list, n_classes: int | None = None) -> bytes:
    """Pack ``{commune_id: proportions}`` as binary16 per class."""
    items = sorted(communes.items()) if isinstance(communes, dict) else list(communes)
    if n_classes is None:
        if not items:
            raise ValueError("n_classes is required for an empty table")
        n_classes = len(items[0][1])
    out = [_UP_HEADER.pack(UPLINK_MAGIC, UPLINK_VERSION, n_classes, len(items))]
    for cid, vec in items:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (n_classes,):
            raise ValueError(f"commune {cid}: expected {n_classes} proportions, got {vec.shape}")
        # decoded packets carry binary16 rounding, so re-encoding them must pass
        if np.any(vec < 0) or abs(vec.sum() - 1) > SUM_TOL + n_classes * HALF_ULP_AT_ONE:
            raise ValueError(f"commune {cid}: proportions must be nonnegative and sum to 1")
        out.append(struct.pack("<I", cid))
        out.append(vec.astype("<f2").tobytes())
    return b"".join(out)


def uplink_decode(buf: bytes, renormalize: bool = True) -> dict[int, np.ndarray]:
    if len(buf) < 4 or buf[:4] != UPLINK_MAGIC:
        raise UplinkMagicError("not an uplink packet")
    if len(buf) < _UP_HEADER.size:
        raise UplinkTruncatedError("uplink header truncated")
    _, version, n, count = _UP_HEADER.unpack_from(buf, 0)
    if version != UPLINK_VERSION:
        raise UplinkError(f"unsupported uplink version {version}")
    rec = 4 + 2 * n
    expected = _UP_HEADER.size + rec * count
    if len(buf) < expected:
        raise UplinkTruncatedError(f"uplink packet has {len(buf)} bytes, expected {expected}")
    if len(buf) > expected:
        raise UplinkError(f"{len(buf) - expected} trailing bytes in uplink packet")
    out = {}
    for i in range(count):
        off = _UP_HEADER.size + i * rec
        (cid,) = struct.unpack_from("<I", buf, off)
        vec = np.frombuffer(buf, dtype="<f2", count=n, offset=off + 4).astype(np.float64)
        if not np.all(np.isfinite(vec)):
            raise UplinkValueError(f"commune {cid}: NaN or infinite half-float")
        if np.any(vec < 0):
            raise UplinkValueError(f"commune {cid}: negative proportion")
        if renormalize:
            total = vec.sum()
            if total <= 0:
                raise UplinkValueError(f"commune {cid}: all-zero proportions")
            vec = vec / total
        out[cid] = vec
    return out


def uplink_sizes(buf_or_count, n_classes: int | None = None) -> dict:
    """Header, id and proportion-payload byte counts of a packet."""
    if isinstance(buf_or_count, (bytes, bytearray)):
        _, _, n_classes, count = _UP_HEADER.unpack_from(buf_or_count, 0)
    else:
        count = buf_or_count
    payload = PROPORTION_BYTES * n_classes * count
    return {"header_bytes": _UP_HEADER.size, "id_bytes": 4 * count, "payload_bytes": payload, "total_bytes": _UP_HEADER.size + 4 * count + payload}


# --- volumetry -----------------------------------------------------------------------


@dataclass
class VolumetryReport:
    swath_km: float
    circumference_km: float
    land_fraction: float
    orbit_minutes: float
    km2_per_orbit: float
    land_km2_per_orbit: float
    land_km2_per_min: float


def volumetry(swath_km=290, circumference_km=40_000, land_fraction=0.299, orbit_minutes=100) -> VolumetryReport:
    if swath_km <= 0 or circumference_km <= 0 or orbit_minutes <= 0 or not 0 <= land_fraction <= 1:
        raise ValueError("swath, circumference and orbit time must be positive; land fraction in [0, 1]")
    area = swath_km * circumference_km
    land = area * land_fraction
    return VolumetryReport(swath_km, circumference_km, land_fraction, orbit_minutes, area, land, land / orbit_minutes)


# Values quoted for the default orbit that do not follow from the arithmetic.
QUOTED_LAND_KM2_PER_ORBIT = 3.7e6
QUOTED_LAND_KM2_PER_MIN = 37_000


def volumetry_discrepancy(report: VolumetryReport) -> dict:
    return {
        "land_km2_per_orbit": report.land_km2_per_orbit,
        "quoted_land_km2_per_orbit": QUOTED_LAND_KM2_PER_ORBIT,
        "land_km2_per_min": report.land_km2_per_min,
        "quoted_land_km2_per_min": QUOTED_LAND_KM2_PER_MIN,
        "relative_gap": QUOTED_LAND_KM2_PER_MIN / report.land_km2_per_min - 1,
    }


def throughput_report(chips_per_sec: float, report: VolumetryReport, inference_seconds=None, train_seconds=None) -> dict:
    """Training pace versus acquisition pace (one chip is one km2).

    ``ratio >= 1`` means training keeps up with the land imaged per minute.
    """
    if report.land_km2_per_min > 0:
        ratio = chips_per_sec * 60 / report.land_km2_per_min
    else:
        ratio = float("inf")
    out = {"chips_per_sec": chips_per_sec, "land_km2_per_min": report.land_km2_per_min, "ratio": ratio}
    if inference_seconds is not None and train_seconds:
        out["inference_train_ratio"] = inference_seconds / train_seconds
        out["reference_inference_train_ratio"] = 0.15
    return out
