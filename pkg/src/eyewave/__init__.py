"""Wavelet-maxima eye detection and per-person network identification."""

from .detector import Detection, DetectorConfig, LabeledImage, detect_eyes, load_dataset, train_detector
from .identity import MatchResult, Template, enroll, identify, match_score, store_load, store_save
from .imageio import EyeAnnotation, GrayImage, load_pgm, pad_to_dyadic, save_pgm
from .maxima import MaximaPoint, Patch9, detect_maxima, extract_patch, map_to_image
from .mlp import Mlp, TrainingConfig, TrainingReport, classify, forward, train
from .synthetic import PersonTraits, generate_synthetic_face
from .wavelet import WaveletKind, WaveletPyramid, decompose, reconstruct

__version__ = "0.1.0"
