"""Benchmark dataset ingestion: manifests, 16-bit images, masks, folds.

A dataset is described by a UTF-8 CSV manifest with header row:

    image_path, gt_r, gt_g, gt_b, black_r, black_g, black_b,
    sat_r, sat_g, sat_b, mask, camera_id, fold

``mask`` holds semicolon-separated "x,y,w,h" chart rectangles (may be
empty); ``fold`` is 1-3 (may be empty when cross-validation is not used).
Relative image paths resolve against the manifest's directory. Ground-truth
illuminants are stored in the file as measured and unit-normalized at load.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .color import normalize
from .errors import (
    AllMasked,
    DecodeError,
    InvalidLevels,
    MissingFoldLabel,
    MissingImage,
    ParseError,
)
from .estimators import RawImage, downsample, normalize_raw

__all__ = [
    "SampleRecord",
    "DatasetManifest",
    "MANIFEST_COLUMNS",
    "load_manifest",
    "load_sample",
    "split_folds",
    "write_manifest",
]

MANIFEST_COLUMNS = [
    "image_path",
    "gt_r", "gt_g", "gt_b",
    "black_r", "black_g", "black_b",
    "sat_r", "sat_g", "sat_b",
    "mask",
    "camera_id",
    "fold",
]

DEFAULT_TARGET = (384, 256)  # (width, height)


@dataclass(frozen=True)
class SampleRecord:
    image_path: Path
    gt_illuminant: np.ndarray  # unit-normalized
    black_level: np.ndarray    # per-channel, (3,)
    saturation_level: np.ndarray
    mask_rects: tuple[tuple[int, int, int, int], ...] = ()
    camera_id: str = ""
    fold: int | None = None


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    name: str = ""

    def cameras(self) -> list[str]:
        return sorted({r.camera_id for r in self.records})


def _cell(row: dict, col: str, row_no: int) -> str:
    val = row.get(col)
    if val is None:
        raise ParseError(f"row {row_no}: missing column {col!r}")
    return val.strip()


def _floats(row: dict, cols: list[str], row_no: int) -> np.ndarray:
    out = []
    for col in cols:
        text = _cell(row, col, row_no)
        try:
            out.append(float(text))
        except ValueError:
            raise ParseError(f"row {row_no}, column {col!r}: not a number: {text!r}") from None
    return np.array(out)


def _parse_rects(text: str, row_no: int) -> tuple[tuple[int, int, int, int], ...]:
    if not text:
        return ()
    rects = []
    for part in text.split(";"):
        fields = part.split(",")
        if len(fields) != 4:
            raise ParseError(f"row {row_no}, column 'mask': bad rect {part!r} (want x,y,w,h)")
        try:
            x, y, w, h = (int(f) for f in fields)
        except ValueError:
            raise ParseError(f"row {row_no}, column 'mask': non-integer rect {part!r}") from None
        if w < 1 or h < 1 or x < 0 or y < 0:
            raise ParseError(f"row {row_no}, column 'mask': degenerate rect {part!r}")
        rects.append((x, y, w, h))
    return tuple(rects)


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest CSV.

    Raises:
        ParseError: empty file, missing columns, or malformed cells
            (message names the row and column).
        InvalidLevels: a row with saturation <= black on any channel.
        MissingImage: a referenced image file does not exist.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty manifest")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: header missing columns {missing}")
        records = []
        for row_no, row in enumerate(reader, start=2):
            rel = _cell(row, "image_path", row_no)
            if not rel:
                raise ParseError(f"row {row_no}: empty image_path")
            img_path = (base / rel).resolve() if not Path(rel).is_absolute() else Path(rel)
            if not img_path.is_file():
                raise MissingImage(f"row {row_no}: {img_path} does not exist")
            gt = _floats(row, ["gt_r", "gt_g", "gt_b"], row_no)
            if np.any(gt <= 0):
                raise ParseError(f"row {row_no}: ground truth must be positive, got {gt.tolist()}")
            black = _floats(row, ["black_r", "black_g", "black_b"], row_no)
            sat = _floats(row, ["sat_r", "sat_g", "sat_b"], row_no)
            if np.any(sat <= black):
                raise InvalidLevels(
                    f"row {row_no}: saturation {sat.tolist()} <= black {black.tolist()}"
                )
            fold_text = _cell(row, "fold", row_no)
            fold = None
            if fold_text:
                try:
                    fold = int(fold_text)
                except ValueError:
                    raise ParseError(f"row {row_no}, column 'fold': not an integer: {fold_text!r}") from None
                if fold not in (1, 2, 3):
                    raise ParseError(f"row {row_no}: fold must be 1, 2 or 3, got {fold}")
            records.append(
                SampleRecord(
                    image_path=img_path,
                    gt_illuminant=normalize(gt),
                    black_level=black,
                    saturation_level=sat,
                    mask_rects=_parse_rects(_cell(row, "mask", row_no), row_no),
                    camera_id=_cell(row, "camera_id", row_no),
                    fold=fold,
                )
            )
    if not records:
        raise ParseError(f"{path}: no data rows")
    return DatasetManifest(records, name=path.stem)


def load_sample(rec: SampleRecord, target: tuple[int, int] = DEFAULT_TARGET) -> RawImage:
    """Decode, normalize, mask and downsample one sample.

    The chart mask applies before downsampling, so chart pixels never leak
    into the box averages. ``target`` is (width, height).

    Raises:
        DecodeError: the file is not a readable 16-bit 3-channel image.
        AllMasked: the mask rectangles cover the whole image.
    """
    arr = cv2.imread(str(rec.image_path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DecodeError(f"cannot decode {rec.image_path}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DecodeError(f"{rec.image_path}: expected 3 channels, got shape {arr.shape}")
    if arr.dtype != np.uint16:
        raise DecodeError(f"{rec.image_path}: expected 16-bit data, got {arr.dtype}")
    rgb = arr[:, :, ::-1]  # cv2 decodes BGR
    img = normalize_raw(rgb, rec.black_level, rec.saturation_level)
    if rec.mask_rects:
        mask = np.zeros(img.pixels.shape[:2], dtype=bool)
        for x, y, w, h in rec.mask_rects:
            mask[y:y + h, x:x + w] = True
        if mask.all():
            raise AllMasked(f"{rec.image_path}: mask covers every pixel")
        img = RawImage(img.pixels, mask)
    return downsample(img, target[0], target[1])


def split_folds(manifest: DatasetManifest, k: int = 3) -> list[tuple[list[SampleRecord], list[SampleRecord]]]:
    """Per-camera fold splits: one (train, test) pair per camera per fold.

    Within each camera, fold f's test set is the records labeled f and the
    train set is everything else. Pairs are ordered by (camera, fold).

    Raises:
        MissingFoldLabel: some record has no fold label.
    """
    unlabeled = [r for r in manifest.records if r.fold is None]
    if unlabeled:
        raise MissingFoldLabel(
            f"{len(unlabeled)} records have no fold label (first: {unlabeled[0].image_path})"
        )
    splits = []
    for camera in manifest.cameras():
        cam_records = [r for r in manifest.records if r.camera_id == camera]
        for fold in range(1, k + 1):
            test = [r for r in cam_records if r.fold == fold]
            train = [r for r in cam_records if r.fold != fold]
            splits.append((train, test))
    return splits


def write_manifest(path, records: list[SampleRecord], image_paths: list[str] | None = None) -> None:
    """Write records back out in the manifest CSV schema.

    ``image_paths`` overrides the stored absolute paths (used by exporters
    that want paths relative to the manifest).
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for i, rec in enumerate(records):
            rel = image_paths[i] if image_paths is not None else str(rec.image_path)
            mask = ";".join(f"{x},{y},{w},{h}" for x, y, w, h in rec.mask_rects)
            writer.writerow(
                [rel]
                + [f"{v:.12g}" for v in rec.gt_illuminant]
                + [f"{v:g}" for v in rec.black_level]
                + [f"{v:g}" for v in rec.saturation_level]
                + [mask, rec.camera_id, "" if rec.fold is None else str(rec.fold)]
            )
