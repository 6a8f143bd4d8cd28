"""Two-channel (red/blue) log-odds cone map.

Each channel holds ``S = log(p / (1 - p))`` per cell and is updated only by
adding the log-odds of a detection: ``S <- clamp(S + lomeas, +-S_max)``.
``S == 0`` is the uninformed prior. The grid grows on demand without moving
existing content in world coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .sensors import BLUE, RED, body_to_world

RESOLUTION = 0.1
S_MAX = 10.0
S_MIN_EXTRACT = 2.0
LIDAR_COLORLESS_P = 0.6
GROW_MARGIN = 64

DEFAULT_STAMP = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def update_cell(S_prev: float, lomeas: float, s_max: float = S_MAX) -> float:
    if not (math.isfinite(S_prev) and math.isfinite(lomeas)):
        raise ValueError("non-finite log-odds")
    return min(max(S_prev + lomeas, -s_max), s_max)


@dataclass
class ConeMap:
    """Log-odds grid; channel arrays are indexed ``[i, j]`` with i along x.

    ``origin`` is fixed at construction; growth only changes ``offset``, the
    integer cell index of array element ``[0, 0]`` relative to ``origin``.
    A point therefore always falls in the same world cell.
    """

    resolution: float = RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)
    shape: tuple[int, int] = (1, 1)
    s_max: float = S_MAX
    stamp: np.ndarray = field(default_factory=lambda: DEFAULT_STAMP.copy())
    red: np.ndarray = field(default=None)
    blue: np.ndarray = field(default=None)
    offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.red is None:
            self.red = np.zeros(self.shape)
        if self.blue is None:
            self.blue = np.zeros(self.shape)
        self.stamp = np.asarray(self.stamp, dtype=float)
        if self.stamp.shape != (3, 3):
            raise ValueError("smoothing stamp must be 3x3")
        self.shape = self.red.shape

    def channel(self, color: int) -> np.ndarray:
        if color == RED:
            return self.red
        if color == BLUE:
            return self.blue
        raise ValueError(f"unknown color code {color}")

    def copy(self) -> "ConeMap":
        return ConeMap(
            self.resolution, self.origin, self.shape, self.s_max, self.stamp.copy(), self.red.copy(), self.blue.copy(), self.offset
        )

    @property
    def corner(self) -> tuple[float, float]:
        """World position of the lower-left corner of array element ``[0, 0]``."""
        return (self.origin[0] + self.offset[0] * self.resolution, self.origin[1] + self.offset[1] * self.resolution)

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin[0] + (self.offset[0] + i + 0.5) * self.resolution,
            self.origin[1] + (self.offset[1] + j + 0.5) * self.resolution,
        )

    def _ensure(self, i: int, j: int) -> tuple[int, int]:
        """Grow so that (i, j) plus a stamp border is inside; returns shifted indices."""
        ni, nj = self.red.shape
        pad_lo_i = GROW_MARGIN if i - 1 < 0 else 0
        pad_lo_j = GROW_MARGIN if j - 1 < 0 else 0
        pad_hi_i = GROW_MARGIN if i + 1 >= ni else 0
        pad_hi_j = GROW_MARGIN if j + 1 >= nj else 0
        if i - 1 < -pad_lo_i:
            pad_lo_i = -(i - 1) + GROW_MARGIN
        if j - 1 < -pad_lo_j:
            pad_lo_j = -(j - 1) + GROW_MARGIN
        if i + 1 >= ni + pad_hi_i:
            pad_hi_i = i + 2 - ni + GROW_MARGIN
        if j + 1 >= nj + pad_hi_j:
            pad_hi_j = j + 2 - nj + GROW_MARGIN
        if pad_lo_i or pad_lo_j or pad_hi_i or pad_hi_j:
            widths = ((pad_lo_i, pad_hi_i), (pad_lo_j, pad_hi_j))
            self.red = np.pad(self.red, widths)
            self.blue = np.pad(self.blue, widths)
            self.offset = (self.offset[0] - pad_lo_i, self.offset[1] - pad_lo_j)
            self.shape = self.red.shape
        return i + pad_lo_i, j + pad_lo_j

    def add(self, x: float, y: float, color: int, lomeas: float, stamped: bool = True) -> None:
        i, j = world_to_cell(self, x, y)
        i, j = self._ensure(i, j)
        ch = self.channel(color)
        if not stamped:
            ch[i, j] = update_cell(ch[i, j], lomeas, self.s_max)
            return
        block = ch[i - 1 : i + 2, j - 1 : j + 2]
        np.clip(block + self.stamp * lomeas, -self.s_max, self.s_max, out=block)


def world_to_cell(cmap: ConeMap, x: float, y: float) -> tuple[int, int]:
    """Array index by flooring; points on a boundary belong to the upper cell."""
    return (
        int(math.floor((x - cmap.origin[0]) / cmap.resolution)) - cmap.offset[0],
        int(math.floor((y - cmap.origin[1]) / cmap.resolution)) - cmap.offset[1],
    )


def integrate_detections(cmap: ConeMap, detections, pose=None, stamped: bool = True) -> ConeMap:
    """Add ``(x, y, color, confidence)`` detections to the map in place.

    With ``pose`` the positions are body-frame and transformed to the world
    first. ``color`` may be ``None`` for a colorless LiDAR detection, which
    goes into both channels.

    Raises:
        ValueError: a confidence outside (0, 1).
    """
    for x, y, color, p in detections:
        if not 0.0 < p < 1.0:
            raise ValueError(f"detection confidence {p} outside (0, 1)")
        if pose is not None:
            x, y = body_to_world(pose, x, y)
        lo = logit(p)
        if lo == 0.0:
            continue
        colors = (RED, BLUE) if color is None else (int(color),)
        for c in colors:
            cmap.add(float(x), float(y), c, lo, stamped)
    return cmap


@dataclass(frozen=True)
class MappedCone:
    x: float
    y: float
    color: int
    strength: float


def extract_cones(cmap: ConeMap, threshold: float = S_MIN_EXTRACT, window=None) -> list[MappedCone]:
    """One cone per 8-connected blob of confident cells.

    A cell is labelled with the channel of higher ``S`` if that value reaches
    ``threshold``; cells with exactly equal channels carry no color evidence
    and are skipped. Blob positions are ``S``-weighted centroids.
    ``window = (xmin, ymin, xmax, ymax)`` restricts extraction to a region.
    """
    if not threshold > 0:
        raise ValueError("extraction threshold must be positive")
    red, blue = cmap.red, cmap.blue
    i0 = j0 = 0
    if window is not None:
        xmin, ymin, xmax, ymax = window
        i0, j0 = (max(0, v) for v in world_to_cell(cmap, xmin, ymin))
        i1, j1 = (v + 1 for v in world_to_cell(cmap, xmax, ymax))
        red, blue = red[i0:i1, j0:j1], blue[i0:i1, j0:j1]
    is_red = (red >= threshold) & (red > blue)
    is_blue = (blue >= threshold) & (blue > red)
    out: list[MappedCone] = []
    structure = np.ones((3, 3), dtype=bool)
    for color, mask, ch in ((RED, is_red, red), (BLUE, is_blue, blue)):
        if not mask.any():
            continue
        labels, n = ndimage.label(mask, structure=structure)
        idx = np.arange(1, n + 1)
        weights = np.where(mask, ch, 0.0)
        total = ndimage.sum(weights, labels, idx)
        ii, jj = np.indices(mask.shape)
        ci = ndimage.sum(weights * ii, labels, idx) / total
        cj = ndimage.sum(weights * jj, labels, idx) / total
        peak = ndimage.maximum(weights, labels, idx)
        for a, b, w in zip(ci, cj, peak):
            x = cmap.origin[0] + (cmap.offset[0] + i0 + a + 0.5) * cmap.resolution
            y = cmap.origin[1] + (cmap.offset[1] + j0 + b + 0.5) * cmap.resolution
            out.append(MappedCone(float(x), float(y), color, float(w)))
    return out


def probability(S):
    return 1.0 / (1.0 + np.exp(-np.asarray(S, dtype=float)))


def write_pgm(channel: np.ndarray, path, s_max: float | None = None) -> None:
    """Plain-text graymap (P2): 0 = no evidence, 255 = saturated evidence.

    Rows run along +y (top row = largest y), columns along +x.
    """
    s_max = float(np.abs(channel).max()) if s_max is None else s_max
    img = np.zeros_like(channel) if s_max == 0 else np.clip(channel / s_max, 0.0, 1.0)
    img = np.rint(img * 255).astype(int).T[::-1]
    with open(path, "w") as fh:
        fh.write(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n")
        for row in img:
            fh.write(" ".join(str(v) for v in row))
            fh.write("\n")


def suppress_duplicates(cones: list[MappedCone], radius: float = 1.0) -> list[MappedCone]:
    """Keep the strongest cone within ``radius`` of each other, any color."""
    kept: list[MappedCone] = []
    for c in sorted(cones, key=lambda c: (-c.strength, c.x, c.y)):
        if all((c.x - k.x) ** 2 + (c.y - k.y) ** 2 > radius * radius for k in kept):
            kept.append(c)
    return kept
