"""Deterministic synthetic worlds for desk-scale LLP experiments.

A multi-octave value-noise field is thresholded into a class map, each class
is painted with a palette colour plus uniform pixel noise, and communes are
the Voronoi cells of seeded chip positions. All randomness comes from
SplitMix64, so a (seed, config) pair always yields the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Chip, ChipDataset, commune_proportions, synthetic_scheme

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
CHIP = 100

_DEFAULT_PALETTES = {
    1: ((0.5, 0.5, 0.5),),
    2: ((0.15, 0.45, 0.15), (0.65, 0.55, 0.35)),
    3: ((0.15, 0.45, 0.15), (0.7, 0.6, 0.3), (0.2, 0.3, 0.65)),
    4: ((0.15, 0.45, 0.15), (0.7, 0.6, 0.3), (0.2, 0.3, 0.65), (0.75, 0.3, 0.3)),
    5: ((0.15, 0.45, 0.15), (0.7, 0.6, 0.3), (0.2, 0.3, 0.65), (0.75, 0.3, 0.3), (0.55, 0.55, 0.6)),
}


def splitmix64_next(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns ``(value, new_state)``."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31), state


def splitmix64_stream(state: int, count: int) -> np.ndarray:
    """The next ``count`` outputs from ``state``, vectorized (uint64 wraps mod 2**64)."""
    steps = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(state & MASK64) + steps * np.uint64(GOLDEN)
        return _mix(z)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))


def to_unit(values: np.ndarray) -> np.ndarray:
    """uint64 -> float64 in [0, 1) using the top 53 bits."""
    return (values >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def default_thresholds(n_classes: int) -> tuple[float, ...]:
    # value-noise sums concentrate near 0.5; these cut roughly equal areas
    return {
        1: (),
        2: (0.5,),
        3: (0.44, 0.56),
        4: (0.41, 0.5, 0.59),
        5: (0.39, 0.46, 0.54, 0.61),
    }[n_classes]


@dataclass
class SynthConfig:
    seed: int = 1234
    world_chips_x: int = 40
    world_chips_y: int = 50
    n_classes: int = 3
    noise_octaves: int = 3
    commune_count: int = 40
    class_thresholds: tuple[float, ...] | None = None
    palette: tuple[tuple[float, float, float], ...] | None = None
    pixel_noise_amp: float = 0.05
    # lattice spacing of the first octave, in pixels
    base_period_px: int = 1600

    def __post_init__(self):
        if self.class_thresholds is None:
            self.class_thresholds = default_thresholds(self.n_classes)
        if self.palette is None:
            self.palette = _DEFAULT_PALETTES[self.n_classes]
        self.class_thresholds = tuple(float(t) for t in self.class_thresholds)
        self.palette = tuple(tuple(float(v) for v in rgb) for rgb in self.palette)
        th = self.class_thresholds
        if len(th) != self.n_classes - 1:
            raise ValueError(f"{self.n_classes} classes need {self.n_classes - 1} thresholds, got {len(th)}")
        if any(not 0 < t < 1 for t in th) or any(a >= b for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly increasing within (0, 1)")
        if len(self.palette) != self.n_classes:
            raise ValueError("palette length must equal n_classes")
        if self.commune_count < 1 or self.commune_count > self.world_chips_x * self.world_chips_y:
            raise ValueError("commune_count must be in [1, number of chips]")
        if self.noise_octaves < 1 or self.base_period_px < 2:
            raise ValueError("need at least one octave and a period of 2+ pixels")


def _lattice(seed: int, octave: int, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    """Hash lattice corners to [0, 1) values; independent of chip layout."""
    with np.errstate(over="ignore"):
        key = (
            np.uint64(seed & MASK64)
            + np.uint64(octave + 1) * np.uint64(0xD1B54A32D192ED03)
            + ix.astype(np.uint64) * np.uint64(0xABC98388FB8FAC03)
            + iy.astype(np.uint64) * np.uint64(0x8CB92BA72F3D8DD7)
        )
        return to_unit(_mix(_mix(key) + np.uint64(GOLDEN)))


def noise_field(config: SynthConfig, x0: int, y0: int, width: int, height: int) -> np.ndarray:
    """Value noise in [0, 1) on the pixel window starting at (x0, y0); rows are y."""
    xs = np.arange(x0, x0 + width, dtype=np.float64) + 0.5
    ys = np.arange(y0, y0 + height, dtype=np.float64) + 0.5
    total = np.zeros((height, width))
    amp, norm = 1.0, 0.0
    period = float(config.base_period_px)
    for octave in range(config.noise_octaves):
        fx, fy = xs / period, ys / period
        ix, iy = np.floor(fx).astype(np.int64), np.floor(fy).astype(np.int64)
        tx, ty = fx - ix, fy - iy
        gx0, gy0 = np.meshgrid(ix, iy)
        v00 = _lattice(config.seed, octave, gx0, gy0)
        v10 = _lattice(config.seed, octave, gx0 + 1, gy0)
        v01 = _lattice(config.seed, octave, gx0, gy0 + 1)
        v11 = _lattice(config.seed, octave, gx0 + 1, gy0 + 1)
        wx, wy = tx[None, :], ty[:, None]
        top = v00 * (1 - wx) + v10 * wx
        bottom = v01 * (1 - wx) + v11 * wx
        total += amp * (top * (1 - wy) + bottom * wy)
        norm += amp
        amp /= 2
        period /= 2
    return total / norm


def classify(field: np.ndarray, thresholds) -> np.ndarray:
    return np.searchsorted(np.asarray(thresholds), field, side="right").astype(np.uint8)


def commune_seeds(config: SynthConfig) -> np.ndarray:
    """Distinct chip cells (x, y) chosen as Voronoi sites, in draw order."""
    nx, ny = config.world_chips_x, config.world_chips_y
    state = config.seed ^ 0x5EED_C0DE
    chosen: list[int] = []
    taken = set()
    while len(chosen) < config.commune_count:
        value, state = splitmix64_next(state)
        cell = value % (nx * ny)
        if cell not in taken:
            taken.add(cell)
            chosen.append(cell)
    cells = np.asarray(chosen, dtype=np.int64)
    return np.stack([cells % nx, cells // nx], axis=1)


def assign_communes(config: SynthConfig) -> np.ndarray:
    """(ny, nx) commune id per chip: nearest site, ties to the smaller id."""
    seeds = commune_seeds(config)
    gx, gy = np.meshgrid(np.arange(config.world_chips_x), np.arange(config.world_chips_y))
    d2 = (gx[..., None] - seeds[:, 0]) ** 2 + (gy[..., None] - seeds[:, 1]) ** 2
    return np.argmin(d2, axis=-1)


def chip_id(config: SynthConfig, grid_x: int, grid_y: int) -> int:
    return grid_y * config.world_chips_x + grid_x


def render_chip(config: SynthConfig, grid_x: int, grid_y: int) -> tuple[np.ndarray, np.ndarray]:
    """(rgb uint8, labels uint8) for one chip; pixel noise streams from seed ^ chip id."""
    labels = classify(noise_field(config, grid_x * CHIP, grid_y * CHIP, CHIP, CHIP), config.class_thresholds)
    palette = np.asarray(config.palette)
    noise = to_unit(splitmix64_stream(config.seed ^ chip_id(config, grid_x, grid_y), CHIP * CHIP * 3))
    noise = (2 * noise - 1).reshape(CHIP, CHIP, 3) * config.pixel_noise_amp
    rgb = np.clip(palette[labels] + noise, 0, 1)
    return np.round(rgb * 255).astype(np.uint8), labels


def generate_world(config: SynthConfig) -> ChipDataset:
    communes = assign_communes(config)
    chips = []
    for gy in range(config.world_chips_y):
        for gx in range(config.world_chips_x):
            rgb, labels = render_chip(config, gx, gy)
            chips.append(
                Chip(
                    id=chip_id(config, gx, gy),
                    grid_x=gx,
                    grid_y=gy,
                    rgb=rgb,
                    overlaps=((int(communes[gy, gx]), 1.0),),
                    labels=labels,
                )
            )
    return ChipDataset(
        n_classes=config.n_classes,
        chips=chips,
        scheme=synthetic_scheme(config.n_classes),
        communes=commune_proportions(chips, config.n_classes),
        seed=config.seed,
    )
