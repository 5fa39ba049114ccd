"""Per-person network templates: enrollment, probe scoring, identification and storage.

Each enrolled person gets their own 9-6-2 network, trained to fire on that
person's eye patches and to reject both their non-eye maxima and the eyes of
everybody else.  A probe is scored by running it through a stored network.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import mlp
from .detector import Candidates, DetectorConfig, LabeledImage, candidates, eye_mask
from .imageio import GrayImage
from .wavelet import WaveletKind

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 0.5
MAX_ENROLL_MSE = 0.25


class EnrollmentError(RuntimeError):
    """Enrollment failed; ``numeric`` separates training failures from missing data."""

    def __init__(self, message: str, numeric: bool = False):
        super().__init__(message)
        self.numeric = numeric


class FingerprintMismatch(ValueError):
    pass


class StoreError(ValueError):
    """Unreadable, unknown-version or inconsistent template store."""


@dataclass(frozen=True)
class Template:
    person_id: str
    parameters: np.ndarray  # flat, Mlp.flatten order
    fingerprint: Dict[str, object]
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        params = np.array(self.parameters, dtype=np.float64)
        if params.shape != (mlp.N_PARAMS,):
            raise ValueError(f"template needs {mlp.N_PARAMS} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ValueError("template parameters must be finite")
        if not self.person_id:
            raise ValueError("empty person_id")
        params.setflags(write=False)
        object.__setattr__(self, "parameters", params)
        config_from_fingerprint(self.fingerprint)

    @property
    def net(self) -> mlp.Mlp:
        return mlp.Mlp.from_flat(self.parameters)

    @property
    def config(self) -> DetectorConfig:
        return config_from_fingerprint(self.fingerprint)


@dataclass(frozen=True)
class MatchResult:
    person_id: str
    match_score: float
    accepted: bool


def config_from_fingerprint(fp: Dict[str, object]) -> DetectorConfig:
    try:
        return DetectorConfig(
            wavelet=WaveletKind(fp["wavelet"]),
            lowband=int(fp["lowband"]),
            threshold_ratio=float(fp["threshold_ratio"]),
            normalize_patches=bool(fp["normalize_patches"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad fingerprint {fp!r}: {exc}") from exc


def _as_items(items) -> List[LabeledImage]:
    return [it if isinstance(it, LabeledImage) else LabeledImage(*it) for it in items]


def _eye_split(items: Sequence[LabeledImage], cfg: DetectorConfig):
    """Stack (eye patches, non-eye patches) over ``items``."""
    eyes, others = [np.zeros((0, mlp.N_INPUT))], [np.zeros((0, mlp.N_INPUT))]
    for i, item in enumerate(items):
        cand = candidates(item.image, cfg)
        hits, _ = eye_mask(cand, item.annotation, cfg.label_radius, item.path or f"#{i}")
        eyes.append(cand.patches[hits])
        others.append(cand.patches[~hits])
    return np.vstack(eyes), np.vstack(others)


def enroll(
    person_id: str,
    images: Iterable,
    negatives: Iterable = (),
    cfg: DetectorConfig = DetectorConfig(),
    train_cfg: Optional[mlp.TrainingConfig] = None,
    *,
    negative_patches: Optional[np.ndarray] = None,
    balance: bool = True,
) -> Template:
    """Train a network for one person and wrap it as a template.

    ``images`` are the person's annotated images; ``negatives`` are annotated
    images of other people, whose eye patches become negatives.  Precomputed
    negative patches may be passed instead through ``negative_patches``.
    """
    train_cfg = train_cfg or mlp.TrainingConfig(normalize_patches=cfg.normalize_patches)
    own = _as_items(images)
    if not own:
        raise EnrollmentError(f"{person_id}: no enrollment images")
    pos, own_neg = _eye_split(own, cfg)
    if len(pos) == 0:
        raise EnrollmentError(f"{person_id}: no eye-labelled samples (no positives)")
    if negative_patches is None:
        negative_patches, _ = _eye_split(_as_items(negatives), cfg)
    negative_patches = np.asarray(negative_patches, dtype=np.float64).reshape(-1, mlp.N_INPUT)
    neg = np.vstack([own_neg, negative_patches])
    if len(neg) == 0:
        raise EnrollmentError(f"{person_id}: no negative samples")

    data = mlp.samples_from_arrays(np.vstack([pos, neg]), [True] * len(pos) + [False] * len(neg))
    if balance:
        data = mlp.balanced(data)
    try:
        net, report = mlp.train_best(data, train_cfg)
    except mlp.TrainingError as exc:
        raise EnrollmentError(f"{person_id}: training diverged: {exc}", numeric=True) from exc
    if report.final_mse > MAX_ENROLL_MSE:
        raise EnrollmentError(
            f"{person_id}: training ended ({report.stop_reason.value}) with MSE {report.final_mse:.4g}",
            numeric=True,
        )
    return Template(
        person_id,
        net.flatten(),
        cfg.fingerprint(),
        {
            "image_count": len(own),
            "final_mse": report.final_mse,
            "epochs": report.epochs,
            "stop_reason": report.stop_reason.value,
            "positives": int(len(pos)),
            "negatives": int(len(neg)),
        },
    )


def eye_patches(items: Iterable, cfg: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Eye-labelled patches of annotated images, for reuse as enrollment negatives."""
    return _eye_split(_as_items(items), cfg)[0]


def _check_fingerprint(tpl: Template, cfg: Optional[DetectorConfig]) -> DetectorConfig:
    if cfg is None:
        return tpl.config
    mine = cfg.fingerprint()
    if mine != tpl.fingerprint:
        raise FingerprintMismatch(f"{tpl.person_id}: enrolled with {tpl.fingerprint}, probe pipeline is {mine}")
    return cfg


def score_candidates(tpl: Template, cand: Candidates) -> float:
    if not cand.points:
        return 0.0
    scores = np.sort(mlp.classify_batch(tpl.net, cand.patches))[::-1]
    accepted = scores[scores > 0][:2]
    if accepted.size == 0:
        return 0.0
    return float(accepted.size / 2.0 * np.mean((accepted + 1.0) / 2.0))


def match_score(tpl: Template, probe: GrayImage, cfg: Optional[DetectorConfig] = None) -> float:
    """Score in [0, 1]: fraction of the two expected eyes found, times the mean
    output margin of the (at most two) best Eye-classified maxima.

    ``cfg`` is only a guard: passing a pipeline configuration that differs
    from the template's fingerprint raises :class:`FingerprintMismatch`.
    """
    cfg = _check_fingerprint(tpl, cfg)
    return score_candidates(tpl, candidates(probe, cfg))


def identify(
    store: Sequence[Template],
    probe: GrayImage,
    threshold: float = DEFAULT_THRESHOLD,
    cfg: Optional[DetectorConfig] = None,
) -> Optional[MatchResult]:
    """Best-scoring template (ties -> smallest person_id); ``None`` for an empty store."""
    if not store:
        return None
    cache: Dict[str, Candidates] = {}
    best = None
    for tpl in sorted(store, key=lambda t: t.person_id):
        pipeline = _check_fingerprint(tpl, cfg)
        key = json.dumps(tpl.fingerprint, sort_keys=True)
        if key not in cache:
            cache[key] = candidates(probe, pipeline)
        score = score_candidates(tpl, cache[key])
        if best is None or score > best[1]:
            best = (tpl.person_id, score)
    return MatchResult(best[0], best[1], best[1] >= threshold)


def score_matrix(store: Sequence[Template], probes: Sequence[GrayImage]) -> np.ndarray:
    """``(len(probes), len(store))`` matrix of match scores."""
    return np.array([[match_score(t, p) for t in store] for p in probes]).reshape(len(probes), len(store))


# -- persistence ------------------------------------------------------------


def store_save(store: Sequence[Template]) -> bytes:
    ids = [t.person_id for t in store]
    if len(set(ids)) != len(ids):
        raise StoreError("duplicate person_id in store")
    doc = {
        "format_version": FORMAT_VERSION,
        "templates": [
            {
                "person_id": t.person_id,
                "fingerprint": t.fingerprint,
                # repr round-trips float64 exactly
                "parameters": [repr(float(v)) for v in t.parameters],
                "metadata": t.metadata,
            }
            for t in sorted(store, key=lambda t: t.person_id)
        ],
    }
    return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode("utf-8")


def store_load(data: bytes) -> List[Template]:
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreError(f"template store is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise StoreError(f"unsupported template store format_version {doc.get('format_version') if isinstance(doc, dict) else None!r}")
    entries = doc.get("templates")
    if not isinstance(entries, list):
        raise StoreError("template store lacks a 'templates' list")
    out, seen = [], set()
    for i, entry in enumerate(entries):
        try:
            pid = entry["person_id"]
            params = entry["parameters"]
            if len(params) != mlp.N_PARAMS:
                raise StoreError(f"template {i} ({pid}): expected {mlp.N_PARAMS} parameters, found {len(params)}")
            if not all(isinstance(v, str) for v in params):
                raise StoreError(f"template {i} ({pid}): parameters must be decimal strings")
            tpl = Template(pid, np.array([float(v) for v in params]), dict(entry["fingerprint"]), dict(entry.get("metadata", {})))
        except StoreError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreError(f"template {i}: {exc}") from exc
        if tpl.person_id in seen:
            raise StoreError(f"duplicate person_id {tpl.person_id!r}")
        seen.add(tpl.person_id)
        out.append(tpl)
    return out


def upsert(store: Sequence[Template], tpl: Template) -> List[Template]:
    """Store with ``tpl`` added, replacing any template with the same person_id."""
    return sorted([t for t in store if t.person_id != tpl.person_id] + [tpl], key=lambda t: t.person_id)
