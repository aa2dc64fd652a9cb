"""Chip datasets: class schemes, label proportions, blended targets and splits."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SPLITS = ("train", "validation", "test")
SPLIT_CODES = {"train": 0, "validation": 1, "test": 2, "unassigned": 255}
SPLIT_NAMES = {v: k for k, v in SPLIT_CODES.items()}
DEFAULT_PATTERN = ("train", "test", "train", "validation", "train")
DEFAULT_BAND_WIDTH = 15
# tie-break order when a commune's chips are evenly split between bands
_SPLIT_PRIORITY = {"train": 0, "test": 1, "validation": 2}
WEIGHT_TOL = 1e-6


class UnknownSourceClass(KeyError):
    pass


@dataclass(frozen=True)
class ClassScheme:
    name: str
    labels: tuple[str, ...]
    source_map: Mapping[int, int] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def map(self, source_id: int) -> int:
        try:
            return self.source_map[source_id]
        except KeyError:
            raise UnknownSourceClass(f"{self.name}: undeclared source class id {source_id}") from None


ESAWORLDCOVER = ClassScheme(
    name="esaworldcover",
    labels=("infrequent", "treecover", "vegetation", "cropland", "built-up"),
    source_map={
        70: 0, 80: 0, 90: 0, 95: 0, 100: 0,
        10: 1,
        20: 2, 30: 2, 60: 2,
        40: 3,
        50: 4,
    },
)

HUMANPOP = ClassScheme(name="humanpop", labels=("0-15/km2", "16-1600/km2", ">1600/km2"))

# inhabitants per 250 m cell -> per km2
HUMANPOP_CELL_TO_KM2 = 16


def map_esaworldcover(source_id: int) -> int:
    return ESAWORLDCOVER.map(source_id)


def map_humanpop(cell_count: float) -> int:
    """Class of a 250 m population cell, thresholded on density per km2."""
    if cell_count < 0:
        raise ValueError(f"negative population count {cell_count}")
    density = cell_count * HUMANPOP_CELL_TO_KM2
    if density <= 15:
        return 0
    if density <= 1600:
        return 1
    return 2


def synthetic_scheme(n_classes: int) -> ClassScheme:
    return ClassScheme(name="synthetic", labels=tuple(f"class{i}" for i in range(n_classes)))


@dataclass
class Chip:
    id: int
    grid_x: int
    grid_y: int
    rgb: np.ndarray  # (100, 100, 3) uint8
    overlaps: tuple[tuple[int, float], ...]
    labels: np.ndarray | None = None  # (100, 100) uint8 class ids
    split: str = "unassigned"

    def __post_init__(self):
        if not self.overlaps:
            raise ValueError(f"chip {self.id} has no commune overlaps")
        total = sum(w for _, w in self.overlaps)
        if any(w <= 0 for _, w in self.overlaps) or abs(total - 1) > WEIGHT_TOL:
            raise ValueError(f"chip {self.id}: overlap weights must be positive and sum to 1 (got {total})")
        if self.split not in SPLIT_CODES:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def image(self) -> np.ndarray:
        return self.rgb.astype(np.float32) / np.float32(255)

    @property
    def dominant_commune(self) -> int:
        # max weight, ties to the smaller id
        return min(self.overlaps, key=lambda cw: (-cw[1], cw[0]))[0]


@dataclass
class CommuneTable:
    proportions: dict[int, np.ndarray]
    chip_counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for cid, p in self.proportions.items():
            if abs(float(np.sum(p)) - 1) > WEIGHT_TOL or np.any(np.asarray(p) < 0):
                raise ValueError(f"commune {cid}: proportions must be nonnegative and sum to 1")

    def __getitem__(self, commune_id: int) -> np.ndarray:
        return self.proportions[commune_id]

    def __contains__(self, commune_id) -> bool:
        return commune_id in self.proportions

    def __len__(self):
        return len(self.proportions)

    @property
    def ids(self) -> list[int]:
        return sorted(self.proportions)


@dataclass
class ChipDataset:
    n_classes: int
    chips: list[Chip]
    scheme: ClassScheme | None = None
    communes: CommuneTable | None = None
    seed: int | None = None

    def __len__(self):
        return len(self.chips)

    def select(self, split: str) -> list[Chip]:
        return [c for c in self.chips if c.split == split]

    def split_counts(self) -> dict[str, int]:
        counts = Counter(c.split for c in self.chips)
        return {s: counts.get(s, 0) for s in SPLIT_CODES}


def _renormalize(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    if s <= 0:
        raise ValueError("cannot renormalize a zero vector")
    return v / s


def chip_proportions(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label map")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label ids must lie in [0, {n_classes}), found {labels.min()}..{labels.max()}")
    counts = np.bincount(labels.ravel().astype(np.int64), minlength=n_classes)
    return counts / labels.size


def commune_proportions(chips: Iterable[Chip], n_classes: int) -> CommuneTable:
    """Overlap-weighted mean of member chips' label proportions per commune."""
    sums: dict[int, np.ndarray] = {}
    weights: dict[int, float] = defaultdict(float)
    counts: dict[int, int] = defaultdict(int)
    for chip in chips:
        if chip.labels is None:
            raise ValueError(f"chip {chip.id} has no labels")
        p = chip_proportions(chip.labels, n_classes)
        for cid, w in chip.overlaps:
            sums[cid] = sums.get(cid, np.zeros(n_classes)) + w * p
            weights[cid] += w
            counts[cid] += 1
    if not sums:
        raise ValueError("no chips to aggregate")
    return CommuneTable(
        {cid: _renormalize(sums[cid] / weights[cid]) for cid in sorted(sums)},
        dict(sorted(counts.items())),
    )


def blended_target(chip: Chip, communes: CommuneTable) -> np.ndarray:
    total = None
    for cid, w in chip.overlaps:
        if cid not in communes:
            raise KeyError(f"chip {chip.id}: commune {cid} missing from commune table")
        part = w * np.asarray(communes[cid], dtype=np.float64)
        total = part if total is None else total + part
    return _renormalize(total)


def band_index(grid_x: int, grid_y: int, band_width_km: int) -> int:
    return math.floor((grid_x + grid_y) / band_width_km)


def band_split(chips: Sequence[Chip], band_width_km: int = DEFAULT_BAND_WIDTH, pattern: Sequence[str] = DEFAULT_PATTERN) -> list[str]:
    """Assign diagonal (45 degree) bands of chips to splits by cycling ``pattern``."""
    if band_width_km < 1:
        raise ValueError("band width must be at least 1 km")
    if not pattern or any(p not in SPLITS for p in pattern):
        raise ValueError(f"pattern must be a nonempty sequence over {SPLITS}")
    return [pattern[band_index(c.grid_x, c.grid_y, band_width_km) % len(pattern)] for c in chips]


def commune_coherent_split(chips: Sequence[Chip], assignment: Sequence[str]) -> list[str]:
    """Move every chip to its dominant commune's majority split."""
    votes: dict[int, Counter] = defaultdict(Counter)
    for chip, s in zip(chips, assignment):
        votes[chip.dominant_commune][s] += 1
    commune_split = {
        cid: min(v.items(), key=lambda kv: (-kv[1], _SPLIT_PRIORITY[kv[0]]))[0] for cid, v in votes.items()
    }
    return [commune_split[c.dominant_commune] for c in chips]


def assign_splits(dataset: ChipDataset, band_width_km: int = DEFAULT_BAND_WIDTH, pattern: Sequence[str] = DEFAULT_PATTERN) -> ChipDataset:
    """Band split followed by commune coherence, written onto the chips in place."""
    final = commune_coherent_split(dataset.chips, band_split(dataset.chips, band_width_km, pattern))
    for chip, s in zip(dataset.chips, final):
        chip.split = s
    return dataset


def split_arrays(dataset: ChipDataset, split: str, communes: CommuneTable | None = None):
    """Stack a split into model-ready arrays.

    Returns ``(chips, images, targets, truths)``: float32 images in [0, 1],
    blended commune targets (if a commune table is available) and chip-level
    ground-truth proportions (if labels are present).
    """
    chips = dataset.select(split)
    communes = communes if communes is not None else dataset.communes
    images = np.stack([c.image for c in chips]) if chips else np.zeros((0, 100, 100, 3), np.float32)
    targets = None
    if communes is not None and chips:
        targets = np.stack([blended_target(c, communes) for c in chips])
    truths = None
    if chips and all(c.labels is not None for c in chips):
        truths = np.stack([chip_proportions(c.labels, dataset.n_classes) for c in chips])
    return chips, images, targets, truths
