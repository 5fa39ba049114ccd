"""Deterministic synthetic face corpus.

Faces are bright ellipses on a mid-gray background with two dark Gaussian eye
blobs, optional eyebrow and mouth distractors, an illumination ramp and
additive noise.  Per-person appearance (eye shape and darkness, brow
placement, face tone) comes from :class:`PersonTraits`; per-image variation
(placement jitter, lighting, noise) comes from the image seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .imageio import EyeAnnotation, GrayImage

SIDES = (64, 128, 256)
EYE_JITTER = 0.10  # max eye displacement from nominal, fraction of side
_FACE_JITTER = 0.08
_EYE_ONLY_JITTER = EYE_JITTER - _FACE_JITTER

# nominal layout, fractions of the side
_EYE_ROW = 0.42
_EYE_HALF_SPACING = 0.17
_FACE_CENTER_ROW = 0.52
_MOUTH_ROW = 0.72


@dataclass(frozen=True)
class PersonTraits:
    eye_sigma_row: float = 0.022  # fractions of the side
    eye_sigma_col: float = 0.035
    eye_depth: float = 0.5
    brow_gap: float = 0.11
    brow_depth: float = 0.10
    mouth_depth: float = 0.22
    face_tone: float = 0.74

    @classmethod
    def from_unit(cls, u) -> "PersonTraits":
        """Traits from a point of the unit cube, one coordinate per field."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (len(_TRAIT_RANGES),) or np.any((u < 0) | (u > 1)):
            raise ValueError(f"expected {len(_TRAIT_RANGES)} values in [0, 1]")
        return cls(**{name: float(lo + x * (hi - lo)) for (name, (lo, hi)), x in zip(_TRAIT_RANGES.items(), u)})

    @classmethod
    def from_seed(cls, seed: int) -> "PersonTraits":
        rng = np.random.default_rng([seed, 0x5EED])
        return cls.from_unit(rng.uniform(0.0, 1.0, len(_TRAIT_RANGES)))

    @classmethod
    def gallery(cls, n: int, seed: int = 0, pool_size: int = 400) -> List["PersonTraits"]:
        """``n`` people spread apart in trait space.

        Candidates are drawn uniformly in the unit cube of trait ranges and
        picked greedily by farthest-point sampling, so no two people in a
        small gallery look alike.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng([seed, 0x6A11])
        pool = rng.uniform(0.0, 1.0, (max(pool_size, n), len(_TRAIT_RANGES)))
        chosen = [0]
        dist = ((pool - pool[0]) ** 2).sum(axis=1)
        while len(chosen) < n:
            nxt = int(dist.argmax())
            chosen.append(nxt)
            dist = np.minimum(dist, ((pool - pool[nxt]) ** 2).sum(axis=1))
        return [cls.from_unit(pool[i]) for i in chosen]


# per-person trait ranges, fractions of the side or intensities
_TRAIT_RANGES = {
    "eye_sigma_row": (0.016, 0.030),
    "eye_sigma_col": (0.026, 0.046),
    "eye_depth": (0.40, 0.65),
    "brow_gap": (0.10, 0.12),
    "brow_depth": (0.06, 0.15),
    "mouth_depth": (0.15, 0.28),
    "face_tone": (0.68, 0.78),
}


def _blob(rr, cc, center, sigma_r, sigma_c):
    return np.exp(-((rr - center[0]) ** 2) / (2 * sigma_r**2) - ((cc - center[1]) ** 2) / (2 * sigma_c**2))


def generate_synthetic_face(
    seed: int,
    side: int = 128,
    traits: Optional[PersonTraits] = None,
    *,
    closed_eyes: bool = False,
    distractors: bool = True,
    noise_sigma: float = 0.02,
) -> Tuple[GrayImage, EyeAnnotation]:
    """Render one face; returns the image and its integer eye centers."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side}")
    if not 0 <= noise_sigma <= 0.05:
        raise ValueError("noise_sigma must lie in [0, 0.05]")
    traits = traits or PersonTraits()
    rng = np.random.default_rng([seed, side])
    s = float(side)

    face_shift = rng.uniform(-_FACE_JITTER, _FACE_JITTER, 2) * s
    eyes = []
    for sign in (-1, 1):
        nominal = np.array([_EYE_ROW * s, (0.5 + sign * _EYE_HALF_SPACING) * s])
        jitter = rng.uniform(-_EYE_ONLY_JITTER, _EYE_ONLY_JITTER, 2) * s
        eyes.append(np.round(nominal + face_shift + jitter))

    rr, cc = np.mgrid[0:side, 0:side].astype(np.float64)
    background = rng.uniform(0.48, 0.56)
    face_center = np.array([_FACE_CENTER_ROW * s, 0.5 * s]) + face_shift
    semi_r, semi_c = 0.36 * s, 0.28 * s
    radius = np.sqrt(((rr - face_center[0]) / semi_r) ** 2 + ((cc - face_center[1]) / semi_c) ** 2)
    # soft face boundary about 1.5 px wide
    inside = 1.0 / (1.0 + np.exp((radius - 1.0) * min(semi_r, semi_c) / 1.5))
    img = background + (traits.face_tone - background) * inside

    sr, sc = traits.eye_sigma_row * s, traits.eye_sigma_col * s
    depth = traits.eye_depth * (0.45 if closed_eyes else 1.0)
    for eye in eyes:
        img -= depth * _blob(rr, cc, eye, sr, sc)
    if distractors:
        for eye in eyes:
            brow = eye - np.array([traits.brow_gap * s, 0.0])
            img -= traits.brow_depth * _blob(rr, cc, brow, 0.010 * s, 0.055 * s)
        mouth = np.array([_MOUTH_ROW * s, 0.5 * s]) + face_shift
        img -= traits.mouth_depth * _blob(rr, cc, mouth, 0.014 * s, 0.085 * s)

    ramp = rng.uniform(-0.06, 0.06, 2)
    img += ramp[0] * (rr / s - 0.5) + ramp[1] * (cc / s - 0.5)
    img += rng.normal(0.0, noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)

    (lr, lc), (rr_, rc) = (tuple(int(v) for v in e) for e in eyes)
    return GrayImage(img), EyeAnnotation((lr, lc), (rr_, rc))
