"""Wavelet-maxima candidates, 3x3 patches and subband-to-image coordinate mapping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .wavelet import Subband

DEFAULT_THRESHOLD_RATIO = 0.2


@dataclass(frozen=True, order=True)
class MaximaPoint:
    row: int
    col: int
    magnitude: float


@dataclass(frozen=True)
class Patch9:
    values: np.ndarray  # 9 reals, row-major 3x3
    center: MaximaPoint


@dataclass(frozen=True)
class Window:
    """Image-space tile of a subband cell, clipped to the original image."""

    center_row: float
    center_col: float
    side: int
    top: int
    left: int
    bottom: int  # exclusive
    right: int  # exclusive
    is_artifact: bool = False  # center falls in the padding


def _magnitudes(band) -> np.ndarray:
    data = band.data if isinstance(band, Subband) else band
    return np.abs(np.asarray(data, dtype=np.float64))


def detect_maxima(band, threshold_ratio: float = DEFAULT_THRESHOLD_RATIO) -> List[MaximaPoint]:
    """Strict 8-neighbour maxima of |band| at or above ``threshold_ratio * max|band|``.

    Neighbours outside the band are ignored.  Results are sorted by descending
    magnitude, then by (row, col).
    """
    if not 0.0 <= threshold_ratio <= 1.0:
        raise ValueError("threshold_ratio must lie in [0, 1]")
    mag = _magnitudes(band)
    if mag.ndim != 2 or min(mag.shape) < 3:
        raise ValueError(f"band must be at least 3x3, got shape {mag.shape}")
    peak = mag.max()
    if peak == 0.0:
        return []

    h, w = mag.shape
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = mag
    is_max = mag >= threshold_ratio * peak
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                is_max &= mag > padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]

    rows, cols = np.nonzero(is_max)
    vals = mag[rows, cols]
    order = np.lexsort((cols, rows, -vals))
    return [MaximaPoint(int(rows[i]), int(cols[i]), float(vals[i])) for i in order]


def extract_patch(band, p: MaximaPoint, normalize: bool = True) -> Patch9:
    """3x3 magnitude neighbourhood around ``p``; cells outside the band are 0.

    With ``normalize`` the values are divided by the band's global max magnitude.
    """
    mag = _magnitudes(band)
    h, w = mag.shape
    if not (0 <= p.row < h and 0 <= p.col < w):
        raise ValueError(f"point ({p.row}, {p.col}) outside {h}x{w} band")
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = mag
    values = padded[p.row : p.row + 3, p.col : p.col + 3].ravel().copy()
    if normalize:
        peak = mag.max()
        if peak > 0:
            values /= peak
    return Patch9(values, p)


def map_to_image(
    p: MaximaPoint,
    levels: int,
    pad_offsets: Tuple[int, int] = (0, 0),
    image_shape: Tuple[int, int] | None = None,
) -> Window:
    """Map a level-``levels`` subband cell to its tile in the original image.

    The center sits at the middle of the ``2**levels`` pixel tile, shifted back
    by the padding offsets; the tile is clipped to ``image_shape`` when given.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    scale = 2**levels
    top_pad, left_pad = pad_offsets
    center_row = (p.row + 0.5) * scale - top_pad
    center_col = (p.col + 0.5) * scale - left_pad
    top = p.row * scale - top_pad
    left = p.col * scale - left_pad
    bottom, right = top + scale, left + scale
    artifact = False
    if image_shape is not None:
        h, w = image_shape
        artifact = not (0 <= center_row < h and 0 <= center_col < w)
        top, left = min(max(top, 0), h), min(max(left, 0), w)
        bottom, right = max(min(bottom, h), top), max(min(right, w), left)
    return Window(center_row, center_col, scale, top, left, bottom, right, artifact)


def image_to_subband(point: Tuple[float, float], levels: int, pad_offsets: Tuple[int, int] = (0, 0)) -> Tuple[int, int]:
    """Subband cell containing an original-image pixel."""
    scale = 2**levels
    return (
        int((point[0] + pad_offsets[0]) // scale),
        int((point[1] + pad_offsets[1]) // scale),
    )


def format_maxima(points: List[MaximaPoint]) -> str:
    return "".join(f"{p.row} {p.col} {p.magnitude!r}\n" for p in points)
