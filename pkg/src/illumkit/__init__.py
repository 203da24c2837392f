"""illumkit: statistical illuminant estimation with projective bias correction.

The library is built around scale-free illuminant rays (plain 3-vectors):
estimators produce them from raw images, a fitted 3x3 projective transform
corrects their systematic bias, a locally weighted refit adapts the
transform per query, and a chromaticity-grid LUT makes the local variant
constant-time.
"""

from . import errors
from .color import angular_error, from_chromaticity, normalize, to_chromaticity
from .correction import (
    AlsConfig,
    ApapConfig,
    CorrectedVec,
    CorrectionMode,
    ProjectiveTransform,
    TrainingCorpus,
    apap_weights,
    apply_transform,
    correct,
    fit_apap,
    fit_global,
    white_balance,
)
from .dataset import DatasetManifest, SampleRecord, load_manifest, load_sample, split_folds
from .estimators import (
    EstimatorConfig,
    Method,
    RawImage,
    downsample,
    estimate,
    gray_edge,
    gray_world,
    max_rgb,
    normalize_raw,
    pca_bright_dark,
    shades_of_gray,
)
from .evaluate import ErrorStats, EvalReport, emit_report, run_cross_validation, summarize
from .lut import LutGrid, build as build_lut, deserialize, query as query_lut, serialize
from .synth import SynthSpec, brute_force_weighted_fit, generate

__version__ = "0.1.0"

__all__ = [
    "errors",
    "angular_error", "from_chromaticity", "normalize", "to_chromaticity",
    "AlsConfig", "ApapConfig", "CorrectedVec", "CorrectionMode",
    "ProjectiveTransform", "TrainingCorpus",
    "apap_weights", "apply_transform", "correct", "fit_apap", "fit_global",
    "white_balance",
    "DatasetManifest", "SampleRecord", "load_manifest", "load_sample", "split_folds",
    "EstimatorConfig", "Method", "RawImage",
    "downsample", "estimate", "gray_edge", "gray_world", "max_rgb",
    "normalize_raw", "pca_bright_dark", "shades_of_gray",
    "ErrorStats", "EvalReport", "emit_report", "run_cross_validation", "summarize",
    "LutGrid", "build_lut", "deserialize", "query_lut", "serialize",
    "SynthSpec", "brute_force_weighted_fit", "generate",
]
