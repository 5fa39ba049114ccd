"""Separable Haar and CDF(2,2) wavelet transforms and the Mallat pyramid.

All 1D routines operate along the last axis so a single call transforms every
row of a matrix at once.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .imageio import GrayImage

SQRT2 = np.sqrt(2.0)


class WaveletKind(str, enum.Enum):
    HAAR = "haar"
    CDF22 = "cdf22"


class WaveletError(ValueError):
    pass


def _check_even(x: np.ndarray) -> None:
    n = x.shape[-1]
    if n < 2 or n % 2:
        raise WaveletError(f"signal length must be even and >= 2, got {n}")


def dwt1d_haar(signal) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal Haar analysis: pairwise sums and differences scaled by 1/sqrt(2)."""
    x = np.asarray(signal, dtype=np.float64)
    _check_even(x)
    even, odd = x[..., 0::2], x[..., 1::2]
    return (even + odd) / SQRT2, (even - odd) / SQRT2


def idwt1d_haar(approx, detail) -> np.ndarray:
    a = np.asarray(approx, dtype=np.float64)
    d = np.asarray(detail, dtype=np.float64)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
    out[..., 0::2] = (a + d) / SQRT2
    out[..., 1::2] = (a - d) / SQRT2
    return out


def _next_even(s: np.ndarray) -> np.ndarray:
    # s_{i+1} with s_{n/2} mirrored to s_{n/2-1}
    return np.concatenate([s[..., 1:], s[..., -1:]], axis=-1)


def _prev_odd(d: np.ndarray) -> np.ndarray:
    # d_{i-1} with d_{-1} mirrored to d_0
    return np.concatenate([d[..., :1], d[..., :-1]], axis=-1)


def dwt1d_cdf22(signal) -> Tuple[np.ndarray, np.ndarray]:
    """CDF(2,2) (5/3) analysis by lifting: linear predict, then update."""
    x = np.asarray(signal, dtype=np.float64)
    _check_even(x)
    s = x[..., 0::2].copy()
    d = x[..., 1::2].copy()
    d -= (s + _next_even(s)) / 2.0
    s += (_prev_odd(d) + d) / 4.0
    return s, d


def idwt1d_cdf22(approx, detail) -> np.ndarray:
    s = np.array(approx, dtype=np.float64)
    d = np.asarray(detail, dtype=np.float64)
    s -= (_prev_odd(d) + d) / 4.0
    d = d + (s + _next_even(s)) / 2.0
    out = np.empty(s.shape[:-1] + (2 * s.shape[-1],))
    out[..., 0::2] = s
    out[..., 1::2] = d
    return out


_ANALYSIS = {WaveletKind.HAAR: dwt1d_haar, WaveletKind.CDF22: dwt1d_cdf22}
_SYNTHESIS = {WaveletKind.HAAR: idwt1d_haar, WaveletKind.CDF22: idwt1d_cdf22}


def dwt2d_level(img, kind: WaveletKind = WaveletKind.HAAR):
    """One separable 2D step.

    Rows are transformed first (low half | high half), then columns.  Returns
    ``(LL, LH, HL, HH)`` where the first letter is the filter applied along
    rows and the second the filter applied along columns, so LH responds to
    horizontal edges.
    """
    kind = WaveletKind(kind)
    x = np.asarray(img, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] % 2 or x.shape[1] % 2 or min(x.shape) < 2:
        raise WaveletError(f"both dimensions must be even and >= 2, got {x.shape}")
    analysis = _ANALYSIS[kind]
    row_lo, row_hi = analysis(x)
    # column pass: transpose so columns sit on the last axis
    ll, lh = (b.T for b in analysis(row_lo.T))
    hl, hh = (b.T for b in analysis(row_hi.T))
    return ll, lh, hl, hh


def idwt2d_level(ll, lh, hl, hh, kind: WaveletKind = WaveletKind.HAAR) -> np.ndarray:
    kind = WaveletKind(kind)
    shapes = {np.shape(b) for b in (ll, lh, hl, hh)}
    if len(shapes) != 1:
        raise WaveletError(f"inconsistent subband shapes {sorted(shapes)}")
    synthesis = _SYNTHESIS[kind]
    row_lo = synthesis(np.asarray(ll).T, np.asarray(lh).T).T
    row_hi = synthesis(np.asarray(hl).T, np.asarray(hh).T).T
    return synthesis(row_lo, row_hi)


@dataclass(frozen=True)
class Subband:
    kind: str  # "LL", "LH", "HL" or "HH"
    level: int
    data: np.ndarray

    @property
    def side(self) -> int:
        return self.data.shape[0]


@dataclass
class WaveletPyramid:
    """Mallat pyramid: detail bands for levels 1..L plus the final LL band.

    ``details[l - 1]`` maps ``"LH"``, ``"HL"`` and ``"HH"`` to the level-``l``
    coefficient matrices.
    """

    kind: WaveletKind
    details: List[Dict[str, np.ndarray]]
    ll: np.ndarray
    original_shape: Tuple[int, int] = field(default=(0, 0))

    @property
    def levels(self) -> int:
        return len(self.details)

    def band(self, name: str, level: int | None = None) -> Subband:
        level = self.levels if level is None else level
        if not 1 <= level <= self.levels:
            raise WaveletError(f"level {level} outside 1..{self.levels}")
        if name == "LL":
            if level != self.levels:
                raise WaveletError("only the coarsest LL band is retained")
            return Subband("LL", level, self.ll)
        return Subband(name, level, self.details[level - 1][name])

    @property
    def lh(self) -> Subband:
        """The coarsest LH band, the one eye candidates are taken from."""
        return self.band("LH")

    def coefficient_count(self) -> int:
        return self.ll.size + sum(b.size for lvl in self.details for b in lvl.values())

    def coefficients(self) -> np.ndarray:
        parts = [self.ll.ravel()]
        for lvl in self.details:
            parts.extend(lvl[k].ravel() for k in ("LH", "HL", "HH"))
        return np.concatenate(parts)


def pyramid_levels(side: int, target_lowband: int) -> int:
    """Number of levels taking ``side`` down to ``target_lowband``; raises unless
    ``side == target_lowband * 2**k`` with k >= 1."""
    levels, s = 0, side
    while s > target_lowband and s % 2 == 0:
        s //= 2
        levels += 1
    if s != target_lowband or levels < 1:
        raise WaveletError(
            f"side {side} is not target_lowband ({target_lowband}) times a power of two >= 2; "
            "use imageio.pad_to_dyadic first"
        )
    return levels


def decompose(img, kind: WaveletKind = WaveletKind.HAAR, target_lowband: int = 32) -> WaveletPyramid:
    kind = WaveletKind(kind)
    x = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise WaveletError(f"square input required, got shape {x.shape}; use imageio.pad_to_dyadic")
    levels = pyramid_levels(x.shape[0], target_lowband)
    details = []
    ll = x
    for _ in range(levels):
        ll, lh, hl, hh = dwt2d_level(ll, kind)
        details.append({"LH": lh, "HL": hl, "HH": hh})
    return WaveletPyramid(kind, details, ll, tuple(x.shape))


def reconstruct(pyr: WaveletPyramid) -> np.ndarray:
    ll = pyr.ll
    for level in range(pyr.levels, 0, -1):
        bands = pyr.details[level - 1]
        if any(bands[k].shape != ll.shape for k in ("LH", "HL", "HH")):
            raise WaveletError(f"level {level} subband shapes do not match LL {ll.shape}")
        ll = idwt2d_level(ll, bands["LH"], bands["HL"], bands["HH"], pyr.kind)
    return ll
