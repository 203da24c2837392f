"""Command-line front door: train transforms, build LUTs, correct
estimates, evaluate datasets, generate synthetic data.

Settings merge as flags > ILLUM_* environment variables > config file >
built-in defaults. Exit codes: 0 ok, 2 config error, 3 data error,
4 numeric failure. stdout carries data; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import cv2
import numpy as np

from . import dataset, evaluate, lut, synth
from .color import normalize
from .correction import (
    AlsConfig,
    ApapConfig,
    ProjectiveTransform,
    TrainingCorpus,
    apply_transform,
    fit_global,
    white_balance,
)
from .errors import (
    AllMasked,
    BadMagic,
    BadVersion,
    ChecksumMismatch,
    DecodeError,
    IllumError,
    InvalidLevels,
    MissingFoldLabel,
    MissingImage,
    ParseError,
    TruncatedStream,
)
from .estimators import EstimatorConfig, downsample, estimate, normalize_raw, parse_method

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ENV_PREFIX = "ILLUM_"

# name -> (default, description)
DEFAULTS = {
    "sigma_w": (3.0, "local weighting fall-off scale, degrees"),
    "gamma": (0.0625, "local weighting floor"),
    "lut_size": (16, "LUT nodes per chromaticity axis"),
    "sog_p": (4.0, "Shades-of-Gray Minkowski order"),
    "ge_p": (6.0, "Gray Edge Minkowski order"),
    "ge_sigma": (2.0, "Gray Edge Gaussian blur std-dev, pixels"),
    "pca_percent": (0.035, "PCA bright/dark selection fraction"),
    "downsample_w": (384, "working image width, pixels"),
    "downsample_h": (256, "working image height, pixels"),
    "als_threshold": (1e-8, "alternating solver D-change stop threshold"),
    "als_max_iters": (100, "alternating solver iteration cap"),
    "lut_u1_min": (0.0, "LUT grid lower bound, first chromaticity axis"),
    "lut_u1_max": (1.0, "LUT grid upper bound, first chromaticity axis"),
    "lut_u2_min": (0.0, "LUT grid lower bound, second chromaticity axis"),
    "lut_u2_max": (1.0, "LUT grid upper bound, second chromaticity axis"),
    "threads": (1, "worker cap for batch operations"),
}

_DATA_ERRORS = (
    ParseError,
    MissingImage,
    InvalidLevels,
    MissingFoldLabel,
    DecodeError,
    AllMasked,
    BadMagic,
    BadVersion,
    TruncatedStream,
    ChecksumMismatch,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    OSError,
)


class ConfigError(Exception):
    pass


def _parse_scalar(text: str):
    low = text.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    for cast in (int, float):
        try:
            return cast(low)
        except ValueError:
            pass
    if len(low) >= 2 and low[0] == low[-1] and low[0] in "\"'":
        return low[1:-1]
    return low


def _read_config_file(path: Path) -> dict:
    """Flat key = value text with # comments."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line.rstrip()!r}")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{line_no}: unknown setting {key!r}")
            values[key] = _parse_scalar(raw)
    return values


class Settings:
    """Merged configuration with provenance-aware lookup."""

    def __init__(self, config_path: str | None = None, overrides: dict | None = None):
        self.values = {k: v for k, (v, _) in DEFAULTS.items()}
        self.sources = {k: "default" for k in DEFAULTS}
        if config_path:
            p = Path(config_path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            for k, v in _read_config_file(p).items():
                self._set(k, v, "config-file")
        for key in DEFAULTS:
            env_key = ENV_PREFIX + key.upper()
            if env_key in os.environ:
                self._set(key, _parse_scalar(os.environ[env_key]), "environment")
        for k, v in (overrides or {}).items():
            if v is not None:
                self._set(k, v, "flag")

    def _set(self, key: str, value, source: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown setting {key!r}")
        default = DEFAULTS[key][0]
        try:
            value = type(default)(value)
        except (TypeError, ValueError):
            raise ConfigError(f"setting {key!r}: cannot interpret {value!r}") from None
        self.values[key] = value
        self.sources[key] = source

    def __getitem__(self, key: str):
        return self.values[key]

    def apap(self) -> ApapConfig:
        return ApapConfig(sigma_w=self["sigma_w"], gamma=self["gamma"])

    def als(self) -> AlsConfig:
        return AlsConfig(threshold=self["als_threshold"], max_iters=self["als_max_iters"])

    def target(self) -> tuple[int, int]:
        return (self["downsample_w"], self["downsample_h"])

    def lut_bounds(self) -> tuple[float, float, float, float]:
        return (self["lut_u1_min"], self["lut_u1_max"], self["lut_u2_min"], self["lut_u2_max"])

    def estimator(self, name: str) -> EstimatorConfig:
        method = parse_method(name)
        p = {"shades-of-gray": self["sog_p"], "gray-edge-1": self["ge_p"], "gray-edge-2": self["ge_p"]}
        return EstimatorConfig(
            method=method,
            p=p.get(method.value),
            sigma=self["ge_sigma"],
            pca_percent=self["pca_percent"],
        )

    def print_table(self, stream) -> None:
        width = max(len(k) for k in DEFAULTS)
        for key in DEFAULTS:
            default, desc = DEFAULTS[key]
            val = self.values[key]
            mark = "" if self.sources[key] == "default" else f"  [{self.sources[key]}]"
            print(f"{key.ljust(width)}  {val!r:>10}  {desc}{mark}", file=stream)


def _build_parser() -> argparse.ArgumentParser:
    # shared flags accepted both before and after the subcommand; SUPPRESS
    # keeps the subparser from clobbering a value parsed at the root
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="key = value settings file")
    common.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                        help="print effective settings and exit")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker cap for batch operations")

    parser = argparse.ArgumentParser(
        prog="illumkit",
        description="Illuminant estimation with projective bias correction.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command")

    p_train = sub.add_parser("train", parents=[common],
                             help="fit a correction artifact from a manifest")
    p_train.add_argument("manifest")
    p_train.add_argument("--estimator", default="gray-world")
    p_train.add_argument("--mode", choices=["global", "apap-lut"], default="global")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--camera", help="camera to train (required for multi-camera manifests)")
    p_train.add_argument("--train-folds", help="comma-separated folds to train on (default: all)")
    p_train.add_argument("--lut-size", type=int, dest="lut_size")

    p_corr = sub.add_parser("correct", parents=[common],
                            help="bias-correct one estimate")
    p_corr.add_argument("--estimate", help="r,g,b illuminant estimate")
    p_corr.add_argument("--input", help="16-bit image to estimate from")
    p_corr.add_argument("--estimator", default="gray-world")
    p_corr.add_argument("--black", default="0,0,0", help="per-channel black levels for --input")
    p_corr.add_argument("--sat", default="65535,65535,65535",
                        help="per-channel saturation levels for --input")
    p_corr.add_argument("--transform", help="JSON transform file")
    p_corr.add_argument("--lut", help="APLU LUT file")
    p_corr.add_argument("--preview", help="write the white-balanced 16-bit preview here")

    p_eval = sub.add_parser("eval", parents=[common],
                            help="cross-validated evaluation")
    p_eval.add_argument("manifest")
    p_eval.add_argument("--estimators", default="gray-world")
    p_eval.add_argument("--modes", default="raw,global,apap,apap-lut")
    p_eval.add_argument("--format", choices=["table", "csv", "json"], default="table")
    p_eval.add_argument("--out", help="write the report here instead of stdout")
    p_eval.add_argument("--lut-size", type=int, dest="lut_size")

    p_synth = sub.add_parser("synth", parents=[common],
                             help="generate and export a synthetic dataset")
    p_synth.add_argument("spec", help="JSON spec file")
    p_synth.add_argument("--out", required=True, help="output directory")

    p_li = sub.add_parser("lut-inspect", parents=[common],
                          help="dump an APLU file header and nodes")
    p_li.add_argument("lut")
    p_li.add_argument("--nodes", action="store_true", help="dump every node matrix")
    p_li.add_argument("--json", action="store_true",
                      help="emit the full grid in the JSON mirror format")
    return parser


def _load_manifest_filtered(path: str, camera: str | None):
    manifest = dataset.load_manifest(path)
    if camera is not None:
        records = [r for r in manifest.records if r.camera_id == camera]
        if not records:
            raise ConfigError(f"manifest has no records for camera {camera!r}")
        return dataset.DatasetManifest(records, manifest.name)
    cams = manifest.cameras()
    if len(cams) > 1:
        raise ConfigError(f"manifest covers cameras {cams}; pick one with --camera")
    return manifest


def _corpus_from_manifest(manifest, est_cfg, settings, folds=None) -> TrainingCorpus:
    records = manifest.records
    if folds is not None:
        records = [r for r in records if r.fold in folds]
        if not records:
            raise ConfigError(f"no records in folds {sorted(folds)}")
    pairs = []
    for rec in records:
        img = dataset.load_sample(rec, settings.target())
        pairs.append((estimate(img, est_cfg), rec.gt_illuminant))
    camera = records[0].camera_id
    return TrainingCorpus.from_pairs(pairs, method_tag=est_cfg.method.value, camera_tag=camera)


def _cmd_train(args, settings: Settings) -> int:
    folds = None
    if args.train_folds:
        try:
            folds = {int(f) for f in args.train_folds.split(",")}
        except ValueError:
            raise ConfigError(f"bad --train-folds {args.train_folds!r}") from None
    est_cfg = settings.estimator(args.estimator)
    manifest = _load_manifest_filtered(args.manifest, args.camera)
    corpus = _corpus_from_manifest(manifest, est_cfg, settings, folds)
    out = Path(args.out)
    if args.mode == "global":
        transform = fit_global(corpus, settings.als())
        out.write_text(transform.to_json(), encoding="utf-8")
    else:
        grid = lut.build(corpus, settings["lut_size"], settings.lut_bounds(),
                         settings.apap(), settings.als(), threads=settings["threads"])
        out.write_bytes(lut.serialize(grid))
    print(out)
    return EXIT_OK


def _parse_vec3(text: str, what: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"{what} must be three comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise ConfigError(f"{what}: cannot parse {text!r}") from None


def _read_input_image(path: str, black, sat, settings: Settings):
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DecodeError(f"cannot decode {path}")
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint16:
        raise DecodeError(f"{path}: expected 16-bit 3-channel image")
    img = normalize_raw(arr[:, :, ::-1], black, sat)
    w, h = settings.target()
    return downsample(img, w, h)


def _cmd_correct(args, settings: Settings) -> int:
    if (args.estimate is None) == (args.input is None):
        raise ConfigError("provide exactly one of --estimate or --input")
    if (args.transform is None) == (args.lut is None):
        raise ConfigError("provide exactly one of --transform or --lut")
    img = None
    if args.estimate is not None:
        est = normalize(_parse_vec3(args.estimate, "--estimate"))
    else:
        img = _read_input_image(
            args.input,
            _parse_vec3(args.black, "--black"),
            _parse_vec3(args.sat, "--sat"),
            settings,
        )
        est = estimate(img, settings.estimator(args.estimator))
    if args.transform is not None:
        transform = ProjectiveTransform.from_json(Path(args.transform).read_text(encoding="utf-8"))
        corrected = apply_transform(transform, est)
    else:
        grid = lut.deserialize(Path(args.lut).read_bytes())
        corrected = lut.query(grid, est)
    print(",".join(f"{v:.4f}" for v in corrected))
    if corrected.clamped:
        print("note: negative components were clamped to zero", file=sys.stderr)
    if args.preview:
        if img is None:
            raise ConfigError("--preview needs --input")
        balanced = white_balance(img, corrected)
        out16 = np.round(balanced.pixels * 65535.0).astype(np.uint16)
        if not cv2.imwrite(str(args.preview), out16[:, :, ::-1]):
            raise OSError(f"failed to write {args.preview}")
        print(args.preview, file=sys.stderr)
    return EXIT_OK


def _cmd_eval(args, settings: Settings) -> int:
    manifest = dataset.load_manifest(args.manifest)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in evaluate.MODES:
            raise ConfigError(f"unknown mode {m!r}; expected one of {evaluate.MODES}")
    report = evaluate.EvalReport({})
    for name in (e.strip() for e in args.estimators.split(",") if e.strip()):
        try:
            est_cfg = settings.estimator(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for mode in modes:
            part = evaluate.run_cross_validation(
                manifest,
                est_cfg,
                mode,
                apap=settings.apap(),
                als=settings.als(),
                lut_size=settings["lut_size"],
                lut_bounds=settings.lut_bounds(),
                target=settings.target(),
                threads=settings["threads"],
            )
            report = report.merged_with(part)
    text = evaluate.emit_report(report, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(args.out)
    return EXIT_OK


def _cmd_synth(args, settings: Settings) -> int:
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        raise FileNotFoundError(f"spec file not found: {spec_path}")
    try:
        spec = synth.spec_from_json(spec_path)
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad synth spec: {exc}") from None
    result = synth.generate(spec)
    manifest_path = synth.export_dataset(result, args.out)
    print(manifest_path)
    return EXIT_OK


def _cmd_lut_inspect(args, settings: Settings) -> int:
    grid = lut.deserialize(Path(args.lut).read_bytes())
    if args.json:
        print(json.dumps(lut.to_json_dict(grid)))
        return EXIT_OK
    print(f"size: {grid.size} x {grid.size}")
    print(f"bounds: u1 [{grid.bounds[0]}, {grid.bounds[1]}], u2 [{grid.bounds[2]}, {grid.bounds[3]}]")
    print(f"method: {grid.method_tag!r}")
    print(f"camera: {grid.camera_tag!r}")
    print(f"matrix payload: {lut.payload_size(grid.size)} bytes")
    if args.nodes:
        for i in range(grid.size):
            for j in range(grid.size):
                u1, u2 = grid.node_chromaticity(i, j)
                print(f"node ({i}, {j}) at ({u1:.6f}, {u2:.6f}):")
                for row in grid.nodes[i, j]:
                    print("   " + " ".join(f"{v: .12g}" for v in row))
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "correct": _cmd_correct,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "lut-inspect": _cmd_lut_inspect,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        settings = Settings(
            getattr(args, "config", None),
            {"threads": getattr(args, "threads", None),
             "lut_size": getattr(args, "lut_size", None)},
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "print_config", False):
        settings.print_table(sys.stdout)
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args, settings)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IllumError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
