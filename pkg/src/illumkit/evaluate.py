"""Cross-validated evaluation of estimator + correction pipelines.

Per camera and fold, the correction is fitted on the train records'
(estimate, truth) pairs and scored on the test fold with the recovery
angular error. Fold errors are pooled per camera before the summary
statistics are computed. Timing covers only the per-query bias-correction
call (grid builds and global fits are training artifacts).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass

import numpy as np

from .color import angular_error
from .correction import (
    AlsConfig,
    ApapConfig,
    TrainingCorpus,
    apply_transform,
    fit_apap,
    fit_global,
)
from .dataset import DEFAULT_TARGET, DatasetManifest, SampleRecord, load_sample, split_folds
from .errors import EmptyInput, IllumError
from .estimators import EstimatorConfig, estimate
from . import lut as lutmod

__all__ = [
    "MODES",
    "ErrorStats",
    "TimingStats",
    "ReportEntry",
    "EvalReport",
    "summarize",
    "run_cross_validation",
    "emit_report",
    "report_from_json",
]

MODES = ("raw", "global", "apap", "apap-lut")


@dataclass(frozen=True)
class ErrorStats:
    """The four reported statistics over a pooled error list (degrees)."""

    mean: float
    median: float
    best25: float
    worst25: float
    n: int


@dataclass(frozen=True)
class TimingStats:
    """Per-query correction wall-clock summary, milliseconds."""

    mean_ms: float
    median_ms: float
    total_ms: float
    n: int


@dataclass(frozen=True)
class ReportEntry:
    stats: ErrorStats
    timing: TimingStats | None
    failures: int = 0


@dataclass
class EvalReport:
    """Keyed by (camera, estimator, mode)."""

    entries: dict[tuple[str, str, str], ReportEntry]

    def merged_with(self, other: "EvalReport") -> "EvalReport":
        joined = dict(self.entries)
        joined.update(other.entries)
        return EvalReport(joined)


def summarize(errors) -> ErrorStats:
    """Mean, median and best/worst quarter means of an error list.

    The quarter statistics average the ceil(n/4) smallest and largest
    values; the median is the midpoint average for even n.

    Raises:
        EmptyInput: on an empty list.
    """
    arr = np.sort(np.asarray(list(errors), dtype=np.float64))
    n = arr.size
    if n == 0:
        raise EmptyInput("no errors to summarize")
    k = -(-n // 4)
    return ErrorStats(
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        best25=float(arr[:k].mean()),
        worst25=float(arr[n - k:].mean()),
        n=int(n),
    )


def _summarize_timing(seconds: list[float]) -> TimingStats | None:
    if not seconds:
        return None
    ms = np.asarray(seconds) * 1e3
    return TimingStats(
        mean_ms=float(ms.mean()),
        median_ms=float(np.median(ms)),
        total_ms=float(ms.sum()),
        n=int(ms.size),
    )


def run_cross_validation(
    manifest: DatasetManifest,
    est_cfg: EstimatorConfig,
    mode: str,
    *,
    apap: ApapConfig | None = None,
    als: AlsConfig | None = None,
    lut_size: int = 16,
    lut_bounds: tuple[float, float, float, float] = lutmod.DEFAULT_BOUNDS,
    target: tuple[int, int] = DEFAULT_TARGET,
    k: int = 3,
    loader=load_sample,
    threads: int = 1,
) -> EvalReport:
    """Evaluate one (estimator, mode) combination over all cameras.

    Per-image failures (estimator or correction) exclude the image and are
    counted in the entry's ``failures``; they never abort the run.
    ``loader`` maps (record, target) to a RawImage; the default reads from
    disk, synthetic runs may serve in-memory images instead.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    apap = apap or ApapConfig()
    als = als or AlsConfig()

    estimates: dict[int, np.ndarray | None] = {}
    failures_by_camera: dict[str, int] = {c: 0 for c in manifest.cameras()}
    for rec in manifest.records:
        try:
            estimates[id(rec)] = estimate(loader(rec, target), est_cfg)
        except IllumError:
            estimates[id(rec)] = None
            failures_by_camera[rec.camera_id] += 1

    errors_by_camera: dict[str, list[float]] = {c: [] for c in manifest.cameras()}
    times_by_camera: dict[str, list[float]] = {c: [] for c in manifest.cameras()}

    for train, test in split_folds(manifest, k):
        if not test:
            continue
        camera = test[0].camera_id
        _assert_fold_hygiene(manifest, camera, train, test)
        train_pairs = [
            (estimates[id(r)], r.gt_illuminant) for r in train if estimates[id(r)] is not None
        ]
        corpus = None
        transform = None
        grid = None
        if mode != "raw":
            corpus = TrainingCorpus.from_pairs(
                train_pairs, method_tag=est_cfg.method.value, camera_tag=camera
            )
            if mode == "global":
                transform = fit_global(corpus, als)
            elif mode == "apap-lut":
                grid = lutmod.build(corpus, lut_size, lut_bounds, apap, als, threads=threads)
        for rec in test:
            est = estimates[id(rec)]
            if est is None:
                continue
            try:
                if mode == "raw":
                    corrected = est
                elif mode == "global":
                    t0 = time.perf_counter()
                    corrected = apply_transform(transform, est)
                    times_by_camera[camera].append(time.perf_counter() - t0)
                elif mode == "apap":
                    t0 = time.perf_counter()
                    corrected = apply_transform(fit_apap(est, corpus, apap, als), est)
                    times_by_camera[camera].append(time.perf_counter() - t0)
                else:
                    t0 = time.perf_counter()
                    corrected = lutmod.query(grid, est)
                    times_by_camera[camera].append(time.perf_counter() - t0)
            except IllumError:
                failures_by_camera[camera] += 1
                continue
            errors_by_camera[camera].append(angular_error(corrected, rec.gt_illuminant))

    entries = {}
    for camera in manifest.cameras():
        entries[(camera, est_cfg.method.value, mode)] = ReportEntry(
            stats=summarize(errors_by_camera[camera]),
            timing=_summarize_timing(times_by_camera[camera]),
            failures=failures_by_camera[camera],
        )
    return EvalReport(entries)


def _assert_fold_hygiene(
    manifest: DatasetManifest, camera: str, train: list[SampleRecord], test: list[SampleRecord]
) -> None:
    # No test image may influence the transform it is corrected with.
    train_ids = {id(r) for r in train}
    test_ids = {id(r) for r in test}
    if train_ids & test_ids:
        raise AssertionError(f"camera {camera}: train and test folds overlap")
    cam_ids = {id(r) for r in manifest.records if r.camera_id == camera}
    if train_ids | test_ids != cam_ids:
        raise AssertionError(f"camera {camera}: folds do not cover the camera's records")


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------

_STAT_COLUMNS = ["Mean", "Median", "Best 25%", "Worst 25%"]


def _sorted_items(report: EvalReport):
    def mode_rank(m: str) -> int:
        return MODES.index(m) if m in MODES else len(MODES)

    return sorted(report.entries.items(), key=lambda kv: (kv[0][0], kv[0][1], mode_rank(kv[0][2])))


def emit_report(report: EvalReport, fmt: str = "table", path=None) -> str:
    """Render a report as ``table``, ``csv`` or ``json``; optionally write it.

    The table mirrors the benchmark layout: statistics columns ordered
    Mean, Median, Best 25%, Worst 25% for each (camera, estimator, mode).
    """
    if fmt == "json":
        text = json.dumps(_to_json_obj(report), indent=2)
    elif fmt == "csv":
        text = _to_csv(report)
    elif fmt == "table":
        text = _to_table(report)
    else:
        raise ValueError(f"format must be table, csv or json, got {fmt!r}")
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _to_json_obj(report: EvalReport) -> dict:
    entries = []
    for (camera, estimator, mode), entry in _sorted_items(report):
        obj = {
            "camera": camera,
            "estimator": estimator,
            "mode": mode,
            "stats": {
                "mean": entry.stats.mean,
                "median": entry.stats.median,
                "best25": entry.stats.best25,
                "worst25": entry.stats.worst25,
                "n": entry.stats.n,
            },
            "failures": entry.failures,
        }
        if entry.timing is not None:
            obj["timing"] = {
                "mean_ms": entry.timing.mean_ms,
                "median_ms": entry.timing.median_ms,
                "total_ms": entry.timing.total_ms,
                "n": entry.timing.n,
            }
        entries.append(obj)
    return {"version": 1, "entries": entries}


def report_from_json(text: str) -> EvalReport:
    obj = json.loads(text)
    entries = {}
    for e in obj["entries"]:
        timing = None
        if "timing" in e:
            timing = TimingStats(**e["timing"])
        entries[(e["camera"], e["estimator"], e["mode"])] = ReportEntry(
            stats=ErrorStats(**e["stats"]), timing=timing, failures=e.get("failures", 0)
        )
    return EvalReport(entries)


def _to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["camera", "estimator", "mode", "mean", "median", "best25", "worst25", "n",
         "failures", "mean_ms", "median_ms", "total_ms"]
    )
    for (camera, estimator, mode), entry in _sorted_items(report):
        s = entry.stats
        t = entry.timing
        writer.writerow(
            [camera, estimator, mode,
             f"{s.mean:.6f}", f"{s.median:.6f}", f"{s.best25:.6f}", f"{s.worst25:.6f}",
             s.n, entry.failures]
            + ([f"{t.mean_ms:.6f}", f"{t.median_ms:.6f}", f"{t.total_ms:.6f}"] if t else ["", "", ""])
        )
    return buf.getvalue()


def _to_table(report: EvalReport) -> str:
    rows = []
    header = ["Camera", "Estimator", "Mode"] + _STAT_COLUMNS + ["n", "Failures"]
    for (camera, estimator, mode), entry in _sorted_items(report):
        s = entry.stats
        rows.append(
            [camera, estimator, mode,
             f"{s.mean:.2f}", f"{s.median:.2f}", f"{s.best25:.2f}", f"{s.worst25:.2f}",
             str(s.n), str(entry.failures)]
        )
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    for r in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)))
    return "\n".join(lines) + "\n"
