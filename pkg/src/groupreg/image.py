"""Grayscale image container and file I/O (8/16-bit PGM and PNG)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np


@dataclass(frozen=True)
class ImageGrid:
    """Row-major grayscale image with values in [0, 1], center-origin coordinates.

    The point (x, y) in meters maps to column x / meters_per_px + (width-1)/2
    and row y / meters_per_px + (height-1)/2.
    """

    pixels: np.ndarray
    meters_per_px: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if px.shape[0] < 64 or px.shape[1] < 64:
            raise ValueError(f"image must be at least 64x64, got {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError("pixel values must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.meters_per_px <= 0:
            raise ValueError("meters_per_px must be positive")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def extent_m(self) -> tuple[float, float]:
        """(width, height) in meters."""
        return (self.width * self.meters_per_px, self.height * self.meters_per_px)

    def center_px(self) -> tuple[float, float]:
        """(col, row) of the center-origin in pixel coordinates."""
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def to_pixel(self, xy) -> np.ndarray:
        """Center-origin meters -> (col, row) pixel coordinates."""
        xy = np.asarray(xy, dtype=float)
        cx, cy = self.center_px()
        return xy / self.meters_per_px + np.array([cx, cy])

    def to_meters(self, colrow) -> np.ndarray:
        colrow = np.asarray(colrow, dtype=float)
        cx, cy = self.center_px()
        return (colrow - np.array([cx, cy])) * self.meters_per_px


def load_image(path: str | Path, meters_per_px: float = 1.0) -> ImageGrid:
    """Read an 8- or 16-bit grayscale PGM/PNG file."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2GRAY)
    if raw.dtype == np.uint8:
        px = raw.astype(float) / 255.0
    elif raw.dtype == np.uint16:
        px = raw.astype(float) / 65535.0
    else:
        px = np.clip(raw.astype(float), 0.0, 1.0)
    return ImageGrid(px, meters_per_px=meters_per_px)


def save_image(img: ImageGrid, path: str | Path) -> None:
    """Write as 8-bit grayscale; format chosen by file extension."""
    data = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), data):
        raise IOError(f"cannot write image: {path}")
