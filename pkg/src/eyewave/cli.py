"""Command-line front end: decompose, train, detect, enroll, identify, eval, synth.

Every command takes ``--config FILE`` (flat ``key = value`` lines); flags
override file values, which override built-in defaults.  Outputs are written
to a temporary file and renamed into place, so an interrupted run never leaves
a half-written file behind.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from filelock import FileLock, Timeout

from . import identity, mlp
from .detector import (
    DataError,
    DetectorConfig,
    detect_eyes,
    eyes_localized,
    format_detections,
    load_dataset,
    network_from_json,
    network_to_json,
    overlay,
    select_pair,
    train_detector,
)
from .imageio import ParseError, format_annotation, pad_to_dyadic, read_pgm, save_pgm, scaled_to_unit
from .maxima import detect_maxima, format_maxima
from .synthetic import SIDES, PersonTraits, generate_synthetic_face
from .wavelet import WaveletError, WaveletKind, decompose

log = logging.getLogger("eyewave")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class RunConfig:
    wavelet: str = WaveletKind.HAAR.value
    lowband: int = 32
    threshold_ratio: float = 0.2
    label_radius: int = 1
    normalize_patches: bool = True
    mse_goal: float = 1e-3
    max_epochs: int = 1000
    min_gradient: float = 1e-6
    initial_step: float = 0.5
    armijo_c1: float = 1e-4
    max_step_doublings: int = 20
    restart_interval: int = mlp.N_PARAMS
    seed: int = 0
    restarts: int = 1
    dataset: str = ""
    store: str = ""
    output: str = ""

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            wavelet=WaveletKind(self.wavelet),
            lowband=self.lowband,
            threshold_ratio=self.threshold_ratio,
            label_radius=self.label_radius,
            normalize_patches=self.normalize_patches,
        )

    def training(self) -> mlp.TrainingConfig:
        return mlp.TrainingConfig(
            mse_goal=self.mse_goal,
            max_epochs=self.max_epochs,
            min_gradient=self.min_gradient,
            initial_step=self.initial_step,
            armijo_c1=self.armijo_c1,
            max_step_doublings=self.max_step_doublings,
            restart_interval=self.restart_interval,
            seed=self.seed,
            normalize_patches=self.normalize_patches,
            restarts=self.restarts,
        )


PIPELINE_KEYS = ("wavelet", "lowband", "threshold_ratio", "label_radius", "normalize_patches")
TRAINING_KEYS = (
    "mse_goal",
    "max_epochs",
    "min_gradient",
    "initial_step",
    "armijo_c1",
    "max_step_doublings",
    "restart_interval",
    "seed",
    "restarts",
)
_DEFAULTS = RunConfig()
_FIELD_TYPES = {f.name: type(getattr(_DEFAULTS, f.name)) for f in fields(RunConfig)}
_HELP = {
    "wavelet": "wavelet kind, haar or cdf22",
    "lowband": "side of the coarsest subband",
    "threshold_ratio": "maxima threshold as a fraction of the band max",
    "label_radius": "eye label radius in subband cells",
    "normalize_patches": "divide patches by the band max (true/false)",
    "mse_goal": "stop training once the MSE reaches this",
    "max_epochs": "maximum training epochs",
    "min_gradient": "stop training once the gradient norm falls to this",
    "initial_step": "first line-search step",
    "armijo_c1": "sufficient-decrease constant",
    "max_step_doublings": "line-search step expansions after an accepted first trial",
    "restart_interval": "reset the search direction every this many epochs",
    "seed": "random seed",
    "restarts": "independent training runs; the lowest final MSE is kept",
}


def _wavelet_name(text: str) -> str:
    return WaveletKind(text.strip()).value


def _convert(key: str, text: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind is bool:
            return _parse_bool(text)
        if key == "wavelet":
            return _wavelet_name(text)
        return kind(text.strip())
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {text!r} ({exc})") from exc


def parse_config_text(text: str, source: str = "config") -> Dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set]:
    """Merge defaults, the config file and flags; returns the config and the
    set of keys given explicitly (by file or flag)."""
    values: Dict[str, object] = {}
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        values.update(parse_config_text(text, args.config))
    for key in _FIELD_TYPES:
        if key in vars(args):
            values[key] = getattr(args, key)
    cfg = dataclasses.replace(_DEFAULTS, **values)
    try:
        cfg.detector()
        cfg.training()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg, set(values)


# -- file helpers -------------------------------------------------------------


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, output: str) -> None:
    if output:
        atomic_write(output, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def _require(cfg: RunConfig, key: str) -> str:
    value = getattr(cfg, key)
    if not value:
        raise UsageError(f"--{key} is required")
    return value


def _pipeline_for(fingerprint: dict, cfg: RunConfig, explicit: set) -> DetectorConfig:
    """Pipeline bound to a stored network; explicit settings must agree with it."""
    stored = identity.config_from_fingerprint(fingerprint)
    stored = dataclasses.replace(stored, label_radius=cfg.label_radius)
    asked = cfg.detector()
    for key in PIPELINE_KEYS:
        if key in explicit and key != "label_radius" and getattr(asked, key) != getattr(stored, key):
            given, trained = (getattr(getattr(c, key), "value", getattr(c, key)) for c in (asked, stored))
            raise identity.FingerprintMismatch(f"{key}={given} given, but the network was trained with {trained}")
    return stored


# -- commands ---------------------------------------------------------------


def cmd_decompose(args, cfg: RunConfig, explicit: set) -> int:
    out = Path(_require(cfg, "output"))
    img = read_pgm(args.image)
    det = cfg.detector()
    pyr = decompose(pad_to_dyadic(img, det.lowband), det.wavelet, det.lowband)
    for level in range(1, pyr.levels + 1):
        for name in ("LH", "HL", "HH"):
            band = pyr.band(name, level).data
            atomic_write(out / f"level{level}_{name}.pgm", save_pgm(scaled_to_unit(band)))
    atomic_write(out / f"level{pyr.levels}_LL.pgm", save_pgm(scaled_to_unit(pyr.ll)))
    maxima = detect_maxima(pyr.lh.data, det.threshold_ratio)
    atomic_write(out / "maxima.txt", format_maxima(maxima).encode("utf-8"))
    print(f"{pyr.levels} level(s), {len(maxima)} maxima")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, explicit: set) -> int:
    out = Path(_require(cfg, "output"))
    items = load_dataset(_require(cfg, "dataset"))
    det = cfg.detector()
    net, report, tset = train_detector(items, det, cfg.training())
    atomic_write(out / "network.json", network_to_json(net, det, report))
    atomic_write(out / "report.txt", report.to_text().encode("utf-8"))
    print(
        f"{len(items)} images, {len(tset)} samples ({tset.eye_count} eye); "
        f"{report.stop_reason.value} after {report.epochs} epochs, mse {report.final_mse!r}"
    )
    return EXIT_OK


def _load_network(path: str):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read network: {exc}") from exc
    return network_from_json(data)


def cmd_detect(args, cfg: RunConfig, explicit: set) -> int:
    net, fingerprint = _load_network(args.network)
    pipeline = _pipeline_for(fingerprint, cfg, explicit)
    img = read_pgm(args.image)
    found = detect_eyes(img, net, pipeline)
    _emit(format_detections(found), cfg.output)
    if args.overlay:
        atomic_write(args.overlay, save_pgm(overlay(img, select_pair(found))))
    return EXIT_OK


def _load_store(path: Path) -> List[identity.Template]:
    if not path.exists():
        return []
    return identity.store_load(path.read_bytes())


def cmd_enroll(args, cfg: RunConfig, explicit: set) -> int:
    store_path = Path(_require(cfg, "store"))
    items = load_dataset(_require(cfg, "dataset"))
    det = cfg.detector()
    people = sorted({it.person_id for it in items})
    wanted = args.person or people
    missing = sorted(set(wanted) - set(people))
    if missing:
        raise DataError(f"no images for person(s) {', '.join(missing)}")
    eyes = {p: identity.eye_patches([it for it in items if it.person_id == p], det) for p in people}
    store_path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(store_path) + ".lock", timeout=args.lock_timeout):
        store = _load_store(store_path)
        for person in sorted(set(wanted)):
            own = [it for it in items if it.person_id == person]
            others = [eyes[q] for q in people if q != person]
            negatives = np.vstack(others) if others else np.zeros((0, mlp.N_INPUT))
            tpl = identity.enroll(person, own, cfg=det, train_cfg=cfg.training(), negative_patches=negatives)
            store = identity.upsert(store, tpl)
            print(f"{person}\t{tpl.metadata['final_mse']!r}\t{tpl.metadata['stop_reason']}")
        atomic_write(store_path, identity.store_save(store))
    return EXIT_OK


def _guard_store(store, cfg: RunConfig, explicit: set) -> Optional[DetectorConfig]:
    for tpl in store:
        _pipeline_for(tpl.fingerprint, cfg, explicit)
    return None


def cmd_identify(args, cfg: RunConfig, explicit: set) -> int:
    store = identity.store_load(Path(_require(cfg, "store")).read_bytes())
    _guard_store(store, cfg, explicit)
    result = identity.identify(store, read_pgm(args.image), args.threshold)
    if result is None:
        _emit("NoMatch\n", cfg.output)
    else:
        _emit(f"{result.person_id}\t{result.match_score!r}\t{str(result.accepted).lower()}\n", cfg.output)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, explicit: set) -> int:
    if not (args.network or cfg.store):
        raise UsageError("eval needs --network, --store or both")
    items = load_dataset(_require(cfg, "dataset"))
    if not items:
        raise DataError("no annotated images in dataset")
    lines = []
    if args.network:
        net, fingerprint = _load_network(args.network)
        pipeline = _pipeline_for(fingerprint, cfg, explicit)
        hits = sum(eyes_localized(select_pair(detect_eyes(it.image, net, pipeline)), it.annotation) for it in items)
        lines.append(f"detection_rate {hits / len(items):.4f} ({hits}/{len(items)})")
    if cfg.store:
        store = identity.store_load(Path(cfg.store).read_bytes())
        _guard_store(store, cfg, explicit)
        rows, correct = [], 0
        for it in items:
            res = identity.identify(store, it.image, args.threshold)
            matched, score, accepted = (res.person_id, res.match_score, res.accepted) if res else ("", 0.0, False)
            correct += matched == it.person_id
            rows.append(f"{it.person_id},{matched},{score!r},{str(accepted).lower()}")
        lines.append(f"identification_rate {correct / len(items):.4f} ({correct}/{len(items)})")
        lines.append("probe_person,matched_person,score,accepted")
        lines.extend(rows)
    _emit("".join(line + "\n" for line in lines), cfg.output)
    return EXIT_OK


def face_seed(seed: int, index: int) -> int:
    """Per-image generator seed derived from the corpus seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_synth(args, cfg: RunConfig, explicit: set) -> int:
    out = Path(_require(cfg, "output"))
    if args.n < 1 or args.persons < 1:
        raise UsageError("--n and --persons must be >= 1")
    traits = PersonTraits.gallery(args.persons, cfg.seed)
    width = max(2, len(str(args.persons - 1)))
    for i in range(args.n):
        person = i % args.persons
        img, ann = generate_synthetic_face(
            face_seed(cfg.seed, i), args.side, traits[person], closed_eyes=args.closed_eyes
        )
        stem = out / f"p{person:0{width}d}" / f"img{i:04d}"
        atomic_write(stem.with_suffix(".pgm"), save_pgm(img))
        atomic_write(stem.with_suffix(".eyes"), format_annotation(ann).encode("ascii"))
    print(f"wrote {args.n} images for {args.persons} person(s) under {out}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_fields(parser, keys: Sequence[str]) -> None:
    for key in keys:
        default = getattr(_DEFAULTS, key)
        kind = _FIELD_TYPES[key]
        conv = _parse_bool if kind is bool else _wavelet_name if key == "wavelet" else kind
        parser.add_argument(
            "--" + key.replace("_", "-"),
            dest=key,
            type=conv,
            default=argparse.SUPPRESS,
            metavar=key.upper(),
            help=f"{_HELP[key]} (default: {default})",
        )


def _add_paths(parser, *keys: str) -> None:
    text = {
        "dataset": "dataset root laid out as <root>/<person>/<image>.pgm plus .eyes files",
        "store": "template store file",
        "output": "output path",
    }
    for key in keys:
        parser.add_argument(
            f"--{key}", dest=key, default=argparse.SUPPRESS, metavar="PATH", help=f"{text[key]} (default: none)"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eyewave", description="Wavelet-maxima eye detection and identification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error (default: off)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text, pipeline=True, training=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="FILE", help="key = value settings file; flags take precedence (default: none)")
        if pipeline:
            _add_fields(p, PIPELINE_KEYS)
        _add_fields(p, TRAINING_KEYS if training else ("seed",) if name == "synth" else ())
        p.set_defaults(func=func)
        return p

    p = command("decompose", cmd_decompose, "write subband images and the maxima list of one image")
    p.add_argument("image", help="input PGM")
    _add_paths(p, "output")

    p = command("train", cmd_train, "train the eye/non-eye network on an annotated dataset", training=True)
    _add_paths(p, "dataset", "output")

    p = command("detect", cmd_detect, "locate eyes in one image with a trained network")
    p.add_argument("image", help="input PGM")
    p.add_argument("--network", required=True, metavar="FILE", help="network.json written by train (required)")
    p.add_argument("--overlay", metavar="FILE", help="also write a PGM with the best pair brightened (default: none)")
    _add_paths(p, "output")

    p = command("enroll", cmd_enroll, "train per-person templates and add them to a store", training=True)
    p.add_argument(
        "--person", action="append", metavar="ID", help="person to enroll; repeatable (default: every person in the dataset)"
    )
    p.add_argument("--lock-timeout", type=float, default=60.0, metavar="SECONDS", help="store lock wait (default: 60)")
    _add_paths(p, "dataset", "store")

    p = command("identify", cmd_identify, "match one image against a template store")
    p.add_argument("image", help="probe PGM")
    p.add_argument(
        "--threshold", type=float, default=identity.DEFAULT_THRESHOLD, help=f"acceptance threshold (default: {identity.DEFAULT_THRESHOLD})"
    )
    _add_paths(p, "store", "output")

    p = command("eval", cmd_eval, "report detection rate and identification results over a dataset")
    p.add_argument("--network", metavar="FILE", help="network.json to score detection with (default: none)")
    p.add_argument(
        "--threshold", type=float, default=identity.DEFAULT_THRESHOLD, help=f"acceptance threshold (default: {identity.DEFAULT_THRESHOLD})"
    )
    _add_paths(p, "dataset", "store", "output")

    p = command("synth", cmd_synth, "generate an annotated synthetic face corpus", pipeline=False)
    p.add_argument("--n", type=int, default=50, help="number of images (default: 50)")
    p.add_argument("--persons", type=int, default=5, help="number of distinct people (default: 5)")
    p.add_argument("--side", type=int, choices=SIDES, default=128, help="image side in pixels (default: 128)")
    p.add_argument("--closed-eyes", action="store_true", help="render shallow closed-eye blobs (default: off)")
    _add_paths(p, "output")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, explicit = resolve_config(args)
        return args.func(args, cfg, explicit)
    except UsageError as exc:
        print(f"eyewave {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (mlp.TrainingError, FloatingPointError) as exc:
        print(f"eyewave {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except identity.EnrollmentError as exc:
        print(f"eyewave {args.command}: enrollment failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if exc.numeric else EXIT_DATA
    except Timeout as exc:
        print(f"eyewave {args.command}: store is locked: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ParseError, identity.StoreError, identity.FingerprintMismatch, WaveletError, ValueError, OSError) as exc:
        print(f"eyewave {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
