"""Grayscale image container, binary PGM codec, dyadic padding and eye annotations."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Tuple

import numpy as np


class ParseError(ValueError):
    """Raised for malformed PGM payloads or annotation sidecars."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class GrayImage:
    """Normalized grayscale raster; ``pixels`` is a (height, width) float64 array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2D pixel array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class EyeAnnotation:
    left_eye: Tuple[int, int]
    right_eye: Tuple[int, int]

    @property
    def eyes(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        return (self.left_eye, self.right_eye)

    def inside(self, height: int, width: int) -> bool:
        return all(0 <= r < height and 0 <= c < width for r, c in self.eyes)


_WS = b" \t\n\r\v\f"


def _header_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    # Skip whitespace and '#' comments, then read one token.
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch in (b" ", b"\t", b"\n", b"\r", b"\v", b"\f"):
            pos += 1
        elif ch == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WS and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("truncated PGM header", start)
    return data[start:pos], pos


def load_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) PGM, scaling samples by maxval into [0, 1]."""
    data = bytes(data)
    if data[:2] != b"P5":
        raise ParseError(f"bad magic {data[:2]!r}, expected b'P5'", 0)
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _header_token(data, pos)
        if not tok.isdigit():
            raise ParseError(f"invalid {name} {tok!r}", start)
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ParseError(f"invalid dimensions {width}x{height}", pos)
    if maxval == 0 or maxval > 65535:
        raise ParseError(f"maxval {maxval} out of range 1..65535", pos)
    if pos >= len(data) or data[pos] not in _WS:
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(data) - pos < need:
        raise ParseError(f"truncated payload: need {need} bytes, have {len(data) - pos}", len(data))
    raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    if raw.max(initial=0) > maxval:
        raise ParseError("sample exceeds maxval", pos)
    pixels = raw.astype(np.float64).reshape(height, width) / maxval
    return GrayImage(pixels)


def save_pgm(img: GrayImage) -> bytes:
    """Encode as binary P5 with maxval 255."""
    payload = np.round(img.pixels * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + payload.tobytes()


def read_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        return load_pgm(fh.read())


def dyadic_layout(height: int, width: int, target_lowband: int = 32) -> Tuple[int, int, int]:
    """Return ``(side, top, left)`` for centering a ``height x width`` image in
    the smallest square of side ``target_lowband * 2**k`` (k >= 1) that holds it."""
    if target_lowband < 1:
        raise ValueError("target_lowband must be >= 1")
    side = target_lowband * 2
    while side < max(height, width):
        side *= 2
    return side, (side - height) // 2, (side - width) // 2


def pad_to_dyadic(img: GrayImage, target_lowband: int = 32) -> GrayImage:
    """Center ``img`` in a dyadic square, filling the border by edge replication."""
    side, top, left = dyadic_layout(img.height, img.width, target_lowband)
    if (side, side) == img.shape:
        return img
    padded = np.pad(
        img.pixels,
        ((top, side - img.height - top), (left, side - img.width - left)),
        mode="edge",
    )
    return GrayImage(padded)


def parse_annotation(text: str) -> EyeAnnotation:
    """Parse an ``.eyes`` sidecar: ``L_row L_col R_row R_col``."""
    tokens = text.split()
    if len(tokens) != 4:
        raise ParseError(f"expected 4 integers, found {len(tokens)} tokens")
    if not all(re.fullmatch(r"[+-]?\d+", t) for t in tokens):
        raise ParseError(f"non-integer token in annotation {text.strip()!r}")
    lr, lc, rr, rc = (int(t) for t in tokens)
    return EyeAnnotation((lr, lc), (rr, rc))


def format_annotation(ann: EyeAnnotation) -> str:
    (lr, lc), (rr, rc) = ann.eyes
    return f"{lr} {lc} {rr} {rc}\n"


def scaled_to_unit(values: np.ndarray) -> GrayImage:
    """Min-max scale an arbitrary real matrix into a GrayImage (for debug dumps)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return GrayImage(np.zeros_like(values))
    return GrayImage((values - lo) / (hi - lo))
