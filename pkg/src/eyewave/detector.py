"""End-to-end eye detection: candidate extraction, training-set labelling, localization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import mlp
from .imageio import EyeAnnotation, GrayImage, dyadic_layout, pad_to_dyadic, parse_annotation, read_pgm
from .maxima import (
    DEFAULT_THRESHOLD_RATIO,
    MaximaPoint,
    Window,
    detect_maxima,
    extract_patch,
    image_to_subband,
    map_to_image,
)
from .synthetic import PersonTraits, generate_synthetic_face  # noqa: F401  (re-export)
from .wavelet import WaveletKind, decompose

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Bad or unusable input data (files, annotations, image sizes)."""


@dataclass(frozen=True)
class DetectorConfig:
    wavelet: WaveletKind = WaveletKind.HAAR
    lowband: int = 32
    threshold_ratio: float = DEFAULT_THRESHOLD_RATIO
    label_radius: int = 1
    normalize_patches: bool = True

    def __post_init__(self):
        object.__setattr__(self, "wavelet", WaveletKind(self.wavelet))
        if self.lowband < 3:
            raise ValueError("lowband must be >= 3")
        if not 0.0 <= self.threshold_ratio <= 1.0:
            raise ValueError("threshold_ratio must lie in [0, 1]")
        if self.label_radius < 0:
            raise ValueError("label_radius must be >= 0")

    def fingerprint(self) -> dict:
        """Settings a trained network is bound to."""
        return {
            "wavelet": self.wavelet.value,
            "lowband": self.lowband,
            "normalize_patches": self.normalize_patches,
            "threshold_ratio": self.threshold_ratio,
        }


@dataclass(frozen=True)
class Candidates:
    """Wavelet maxima of one image with their patches and geometry."""

    points: List[MaximaPoint]
    patches: np.ndarray  # (N, 9)
    levels: int
    offsets: Tuple[int, int]
    image_shape: Tuple[int, int]
    band: np.ndarray

    def windows(self) -> List[Window]:
        return [map_to_image(p, self.levels, self.offsets, self.image_shape) for p in self.points]


def candidates(img: GrayImage, cfg: DetectorConfig = DetectorConfig()) -> Candidates:
    """pad -> decompose -> detect maxima -> extract 3x3 patches."""
    side, top, left = dyadic_layout(img.height, img.width, cfg.lowband)
    pyr = decompose(pad_to_dyadic(img, cfg.lowband), cfg.wavelet, cfg.lowband)
    band = pyr.lh.data
    points = detect_maxima(band, cfg.threshold_ratio)
    if points:
        patches = np.stack([extract_patch(band, p, cfg.normalize_patches).values for p in points])
    else:
        patches = np.zeros((0, mlp.N_INPUT))
    return Candidates(points, patches, pyr.levels, (top, left), img.shape, band)


@dataclass(frozen=True)
class LabeledImage:
    image: GrayImage
    annotation: EyeAnnotation
    person_id: str = ""
    path: str = ""


@dataclass(frozen=True)
class DatasetSpec:
    """``<root>/<person_id>/<image>.pgm`` with ``<image>.eyes`` sidecars."""

    root: Path
    config: DetectorConfig = DetectorConfig()

    def load(self) -> List[LabeledImage]:
        return load_dataset(self.root)


def load_dataset(root) -> List[LabeledImage]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    items = []
    for pgm in sorted(root.glob("*/*.pgm")):
        eyes = pgm.with_suffix(".eyes")
        if not eyes.exists():
            log.warning("skipping %s: no .eyes annotation", pgm)
            continue
        try:
            image = read_pgm(pgm)
            ann = parse_annotation(eyes.read_text())
        except ValueError as exc:
            raise DataError(f"{pgm}: {exc}") from exc
        if not ann.inside(image.height, image.width):
            raise DataError(f"{eyes}: eye annotation outside {image.width}x{image.height} image")
        items.append(LabeledImage(image, ann, pgm.parent.name, str(pgm)))
    return items


@dataclass(frozen=True)
class ImageLabelStats:
    path: str
    samples: int
    eye_samples: int
    missed_eyes: int


@dataclass
class TrainingSet:
    data: mlp.Dataset
    stats: List[ImageLabelStats] = field(default_factory=list)

    def __len__(self):
        return len(self.data.inputs)

    @property
    def eye_count(self) -> int:
        return int(np.sum(self.data.targets[:, 1] > 0.5))


def eye_mask(cand: Candidates, ann: EyeAnnotation, label_radius: int, path: str = "") -> Tuple[np.ndarray, int]:
    """Flags maxima within ``label_radius`` (Chebyshev, subband cells) of an
    annotated eye; also returns how many eyes got no positive."""
    band_side = cand.band.shape[0]
    hits = np.zeros(len(cand.points), dtype=bool)
    missed = 0
    for eye in ann.eyes:
        er, ec = image_to_subband(eye, cand.levels, cand.offsets)
        if not (0 <= er < band_side and 0 <= ec < band_side):
            raise DataError(f"{path or 'image'}: eye {eye} maps outside the {band_side}x{band_side} subband")
        near = np.array(
            [max(abs(p.row - er), abs(p.col - ec)) <= label_radius for p in cand.points], dtype=bool
        )
        if not near.any():
            missed += 1
            log.info("%s: no maximum within radius %d of eye %s", path or "image", label_radius, eye)
        hits |= near
    return hits, missed


def build_training_set(items: Iterable, cfg: DetectorConfig = DetectorConfig()) -> TrainingSet:
    """Label every maximum of every image as eye / non-eye and stack the patches.

    ``items`` holds :class:`LabeledImage` values or ``(image, annotation)``
    pairs, or is a :class:`DatasetSpec`.
    """
    if isinstance(items, DatasetSpec):
        cfg = items.config
        items = items.load()
    inputs, flags, stats = [], [], []
    for i, item in enumerate(items):
        if not isinstance(item, LabeledImage):
            item = LabeledImage(*item)
        path = item.path or f"#{i}"
        cand = candidates(item.image, cfg)
        hits, missed = eye_mask(cand, item.annotation, cfg.label_radius, path)
        inputs.append(cand.patches)
        flags.append(hits)
        stats.append(ImageLabelStats(path, len(hits), int(hits.sum()), missed))
    if not inputs:
        return TrainingSet(mlp.Dataset(np.zeros((0, mlp.N_INPUT)), np.zeros((0, mlp.N_OUTPUT))), stats)
    return TrainingSet(mlp.samples_from_arrays(np.vstack(inputs), np.concatenate(flags)), stats)


def train_detector(
    items: Iterable,
    cfg: DetectorConfig = DetectorConfig(),
    train_cfg: Optional[mlp.TrainingConfig] = None,
) -> Tuple[mlp.Mlp, mlp.TrainingReport, TrainingSet]:
    """Label ``items``, then train ``train_cfg.restarts`` networks from seeds
    ``seed, seed+1, ...`` and return the one with the lowest final MSE."""
    train_cfg = train_cfg or mlp.TrainingConfig(normalize_patches=cfg.normalize_patches)
    tset = build_training_set(items, cfg)
    if len(tset) == 0:
        raise DataError("no samples")
    net, report = mlp.train_best(tset.data, train_cfg)
    return net, report, tset


@dataclass(frozen=True)
class Detection:
    center: Tuple[float, float]
    window_side: int
    score: float
    source_maximum: MaximaPoint
    window: Window


def detect_eyes(img: GrayImage, net: mlp.Mlp, cfg: DetectorConfig = DetectorConfig()) -> List[Detection]:
    """Eye-classified maxima mapped back to image coordinates, best score first."""
    if min(img.shape) < 1:
        raise DataError("empty image")
    cand = candidates(img, cfg)
    if not cand.points:
        return []
    scores = mlp.classify_batch(net, cand.patches)
    found = []
    for p, score, win in zip(cand.points, scores, cand.windows()):
        if score > 0 and not win.is_artifact:
            found.append(Detection((win.center_row, win.center_col), win.side, float(score), p, win))
    found.sort(key=lambda d: (-d.score, d.source_maximum.row, d.source_maximum.col))
    return found


def select_pair(detections: Sequence[Detection], min_separation: Optional[float] = None) -> List[Detection]:
    """Best two detections at least ``min_separation`` pixels apart (default:
    three window sides), so the edge maxima above and below one eye are not
    taken for both eyes."""
    if not detections:
        return []
    first = detections[0]
    sep = 3 * first.window_side if min_separation is None else min_separation
    for other in detections[1:]:
        if np.hypot(other.center[0] - first.center[0], other.center[1] - first.center[1]) >= sep:
            return [first, other]
    return [first]


def hits_eye(det: Detection, eye: Tuple[int, int], tolerance: int = 1) -> bool:
    """True when ``eye`` lies within ``tolerance`` window sides of the
    detection's tile, i.e. within a (2*tolerance+1)^2 block of cells around it."""
    w = det.window
    side = det.window_side
    top, left = w.center_row - side / 2, w.center_col - side / 2
    return (
        top - tolerance * side <= eye[0] < top + (tolerance + 1) * side
        and left - tolerance * side <= eye[1] < left + (tolerance + 1) * side
    )


def eyes_localized(detections: Sequence[Detection], ann: EyeAnnotation, tolerance: int = 1) -> bool:
    """True when the first two detections cover the two annotated eyes, one each."""
    if len(detections) < 2:
        return False
    a, b = detections[:2]
    left, right = ann.eyes
    return (hits_eye(a, left, tolerance) and hits_eye(b, right, tolerance)) or (
        hits_eye(a, right, tolerance) and hits_eye(b, left, tolerance)
    )


def format_detections(detections: Sequence[Detection]) -> str:
    return "".join(f"{d.center[0]!r} {d.center[1]!r} {d.window_side} {d.score!r}\n" for d in detections)


def overlay(img: GrayImage, detections: Sequence[Detection]) -> GrayImage:
    """Copy of ``img`` with each detection window brightened."""
    px = np.array(img.pixels)
    for d in detections:
        w = d.window
        px[w.top : w.bottom, w.left : w.right] = np.minimum(1.0, px[w.top : w.bottom, w.left : w.right] + 0.5)
    return GrayImage(px)


# -- network files ----------------------------------------------------------

NETWORK_FORMAT_VERSION = 1


def network_to_json(net: mlp.Mlp, cfg: DetectorConfig, report: Optional[mlp.TrainingReport] = None) -> bytes:
    """Versioned JSON holding the parameters (as exact decimal strings) and
    the pipeline fingerprint the network was trained under."""
    doc = {
        "format_version": NETWORK_FORMAT_VERSION,
        "fingerprint": cfg.fingerprint(),
        "parameters": [repr(float(v)) for v in net.flatten()],
    }
    if report is not None:
        doc["training"] = {
            "epochs": report.epochs,
            "final_mse": report.final_mse,
            "stop_reason": report.stop_reason.value,
        }
    return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode("utf-8")


def network_from_json(data: bytes) -> Tuple[mlp.Mlp, dict]:
    """Inverse of :func:`network_to_json`; returns ``(net, fingerprint)``."""
    try:
        doc = json.loads(data)
        if doc.get("format_version") != NETWORK_FORMAT_VERSION:
            raise DataError(f"unsupported network format_version {doc.get('format_version')!r}")
        params = doc["parameters"]
        if not all(isinstance(v, str) for v in params):
            raise DataError("network parameters must be decimal strings")
        net = mlp.Mlp.from_flat(np.array([float(v) for v in params]))
        fingerprint = dict(doc["fingerprint"])
    except DataError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise DataError(f"unreadable network file: {exc}") from exc
    return net, fingerprint
