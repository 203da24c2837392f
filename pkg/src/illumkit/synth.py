"""Seeded synthetic scenes, planted bias transforms and reference solvers.

Every numeric claim the package makes at desk scale gets an independent
oracle here: scenes whose achromatic mean makes gray world exact, corpora
with planted transforms the fitters must recover, and a weighted-fit
reference solver that shares no code path with the production solver.

Generation is keyed by (seed, stream, index) through numpy SeedSequence
spawn keys, so corpora are bit-identical across runs and independent of
generation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .color import angular_error, normalize
from .correction import (
    ApapConfig,
    ProjectiveTransform,
    TrainingCorpus,
    apap_weights,
)
from .dataset import DatasetManifest, SampleRecord, write_manifest
from .errors import DegenerateCorpus, SingularPlant, SingularSystem
from .estimators import RawImage

__all__ = [
    "SynthSpec",
    "SynthSample",
    "SynthAnswers",
    "SynthResult",
    "generate",
    "brute_force_weighted_fit",
    "random_transform",
    "two_cluster_spec",
    "export_dataset",
    "spec_from_json",
]

SAMPLERS = ("uniform-simplex", "two-cluster")
REFLECTANCE_MODELS = ("achromatic-mean", "random")

# Default cluster centers sit ~29.5 degrees apart, comfortably separated
# relative to the 3-degree weighting e-folding scale.
DEFAULT_CLUSTER_CENTERS = ((1.0, 1.0, 1.0), (3.0, 1.0, 1.0))

# Streams of the per-spec random tree.
_STREAM_ILLUMINANT = 0
_STREAM_REFLECTANCE = 1
_STREAM_PLANT = 2


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic recipe for a synthetic dataset.

    ``planted_transforms`` maps estimates to truths per cluster (one entry
    for uniform sampling, two for two-cluster); None means the identity
    bias (estimates equal truths). Image pixels come out as per-pixel
    reflectance times the scene illuminant.
    """

    seed: int
    n_images: int = 50
    width: int = 24
    height: int = 16
    sampler: str = "uniform-simplex"
    cluster_centers: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        DEFAULT_CLUSTER_CENTERS
    )
    spread_deg: float = 4.0
    margin: float = 0.05
    planted_transforms: tuple | None = None
    reflectance: str = "achromatic-mean"
    camera_id: str = "synthcam"

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.reflectance not in REFLECTANCE_MODELS:
            raise ValueError(
                f"reflectance must be one of {REFLECTANCE_MODELS}, got {self.reflectance!r}"
            )
        if self.n_images < 3:
            raise ValueError("need at least 3 images to form a fittable corpus")
        if not 0.0 < self.margin < 1.0 / 3.0:
            raise ValueError(f"margin must be in (0, 1/3), got {self.margin}")
        if self.planted_transforms is not None:
            mats = tuple(
                np.asarray(m, dtype=np.float64).reshape(3, 3) for m in self.planted_transforms
            )
            want = 2 if self.sampler == "two-cluster" else 1
            if len(mats) != want:
                raise ValueError(f"{self.sampler} needs {want} planted transform(s), got {len(mats)}")
            for m in mats:
                if abs(np.linalg.det(m)) < 1e-12:
                    raise SingularPlant(f"planted transform is not invertible:\n{m}")
            object.__setattr__(self, "planted_transforms", mats)

    def n_clusters(self) -> int:
        return 2 if self.sampler == "two-cluster" else 1


@dataclass(frozen=True)
class SynthSample:
    image: RawImage
    truth: np.ndarray
    estimate: np.ndarray
    cluster: int
    fold: int


@dataclass(frozen=True)
class SynthAnswers:
    """Ground truth for assertions: what each stage must recover."""

    truths: np.ndarray      # (3, N) unit columns
    estimates: np.ndarray   # (3, N) unit columns
    clusters: np.ndarray    # (N,) int
    planted: tuple | None   # per-cluster matrices mapping estimate -> truth


@dataclass
class SynthResult:
    samples: list[SynthSample]
    corpus: TrainingCorpus
    answers: SynthAnswers

    def manifest(self) -> tuple[DatasetManifest, dict]:
        """In-memory manifest plus a loader for float-exact evaluation.

        The loader has the load_sample signature and serves the generated
        images directly (resized only if the target differs), avoiding
        16-bit quantization for tolerance-critical tests.
        """
        from .estimators import downsample

        records = []
        images = {}
        for i, s in enumerate(self.samples):
            rec = SampleRecord(
                image_path=Path(f"mem://img_{i:04d}.png"),
                gt_illuminant=s.truth,
                black_level=np.zeros(3),
                saturation_level=np.full(3, 65535.0),
                camera_id=self.corpus.camera_tag,
                fold=s.fold,
            )
            records.append(rec)
            images[rec.image_path] = s.image

        def loader(rec: SampleRecord, target=(384, 256)) -> RawImage:
            img = images[rec.image_path]
            if (img.width, img.height) != tuple(target):
                img = downsample(img, target[0], target[1])
            return img

        return DatasetManifest(records, name="synthetic"), loader


def _sample_simplex(rng: np.random.Generator, margin: float) -> np.ndarray:
    w = rng.dirichlet((1.0, 1.0, 1.0))
    return normalize(margin + (1.0 - 3.0 * margin) * w)


def _perturb_direction(rng: np.random.Generator, center: np.ndarray, spread_deg: float) -> np.ndarray:
    """Random direction within ``spread_deg`` of ``center``, kept positive."""
    c = normalize(center)
    for _ in range(256):
        t = rng.normal(size=3)
        t -= (t @ c) * c
        tn = np.linalg.norm(t)
        if tn < 1e-12:
            continue
        theta = math.radians(spread_deg * math.sqrt(rng.uniform()))
        v = math.cos(theta) * c + math.sin(theta) * (t / tn)
        if np.all(v > 1e-3):
            return normalize(v)
    raise ValueError(f"could not sample a positive direction around {center} at {spread_deg} deg")


def random_transform(
    rng: np.random.Generator, strength: float = 0.3, max_cond: float = 100.0
) -> np.ndarray:
    """Random well-conditioned 3x3 matrix near the identity."""
    for _ in range(256):
        m = np.eye(3) + strength * rng.uniform(-1.0, 1.0, size=(3, 3))
        if np.linalg.cond(m) <= max_cond and abs(np.linalg.det(m)) > 1e-3:
            return m
    raise ValueError("could not draw a well-conditioned transform")


def _rotation_about(axis: np.ndarray, angle_deg: float) -> np.ndarray:
    a = normalize(axis)
    s, c = math.sin(math.radians(angle_deg)), math.cos(math.radians(angle_deg))
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + s * k + (1 - c) * (k @ k)


def two_cluster_spec(
    seed: int,
    n_images: int = 60,
    spread_deg: float = 3.0,
    separation_deg: float = 10.0,
    **overrides,
) -> SynthSpec:
    """Two-cluster spec whose planted transforms demonstrably disagree.

    The second plant is the first composed with a ``separation_deg``
    rotation about an axis perpendicular to both cluster centers, so the
    plants' actions differ by the full angle on cluster-2 queries: no
    single global matrix can satisfy both clusters while a locally
    weighted fit can.
    """
    rng = _rng(seed, _STREAM_PLANT)
    p1 = random_transform(rng, strength=0.12)
    centers = overrides.get("cluster_centers", DEFAULT_CLUSTER_CENTERS)
    c1 = normalize(np.asarray(centers[0], dtype=np.float64))
    c2 = normalize(np.asarray(centers[1], dtype=np.float64))
    axis = np.cross(c1, c2)
    p2 = _rotation_about(axis, separation_deg) @ p1
    return SynthSpec(
        seed=seed,
        n_images=n_images,
        sampler="two-cluster",
        spread_deg=spread_deg,
        planted_transforms=(p1, p2),
        **overrides,
    )


def _scene_image(rng: np.random.Generator, spec: SynthSpec, light: np.ndarray) -> RawImage:
    refl = rng.uniform(0.1, 1.0, size=(spec.height, spec.width, 3))
    if spec.reflectance == "achromatic-mean":
        means = refl.reshape(-1, 3).mean(axis=0)
        refl = refl * (means.mean() / means)
    refl /= refl.max()
    pixels = refl * (light / light.max())
    return RawImage(np.clip(pixels, 0.0, 1.0))


def generate(spec: SynthSpec) -> SynthResult:
    """Build scenes, corpus and answers for a spec.

    Truth illuminants are sampled per the spec; for planted corpora the
    estimate is ``normalize(P_cluster^-1 @ truth)``, so a fitted correction
    must recover the planted action. Scenes are lit with the *estimate*
    direction: a pipeline estimator then reproduces the biased estimate,
    while the manifest ground truth carries the target ray.
    """
    inverses = None
    if spec.planted_transforms is not None:
        inverses = tuple(np.linalg.inv(m) for m in spec.planted_transforms)

    samples: list[SynthSample] = []
    centers = tuple(normalize(np.asarray(c, dtype=np.float64)) for c in spec.cluster_centers)
    for i in range(spec.n_images):
        rng_l = _rng(spec.seed, _STREAM_ILLUMINANT, i)
        if spec.sampler == "two-cluster":
            cluster = i % 2
            truth = _perturb_direction(rng_l, centers[cluster], spec.spread_deg)
        else:
            cluster = 0
            truth = _sample_simplex(rng_l, spec.margin)
        if inverses is not None:
            est = normalize(inverses[cluster] @ truth)
            if np.any(est <= 0):
                raise ValueError(
                    f"planted transform pushes estimate {i} out of the positive octant; "
                    "use a milder plant or tighter clusters"
                )
        else:
            est = truth
        image = _scene_image(_rng(spec.seed, _STREAM_REFLECTANCE, i), spec, est)
        samples.append(SynthSample(image, truth, est, cluster, fold=i % 3 + 1))

    truths = np.stack([s.truth for s in samples], axis=1)
    estimates = np.stack([s.estimate for s in samples], axis=1)
    corpus = TrainingCorpus(estimates, truths, method_tag="synthetic", camera_tag=spec.camera_id)
    if _distinct_directions(corpus.estimates) < 3:
        raise DegenerateCorpus("generated corpus has fewer than 3 non-parallel estimates")
    answers = SynthAnswers(
        truths=corpus.truths,
        estimates=corpus.estimates,
        clusters=np.array([s.cluster for s in samples]),
        planted=spec.planted_transforms,
    )
    return SynthResult(samples, corpus, answers)


def _distinct_directions(columns: np.ndarray, tol_deg: float = 1e-9) -> int:
    reps: list[np.ndarray] = []
    for i in range(columns.shape[1]):
        v = columns[:, i]
        if all(angular_error(v, r) > tol_deg for r in reps):
            reps.append(v)
            if len(reps) >= 3:
                break
    return len(reps)


def brute_force_weighted_fit(
    query,
    corpus: TrainingCorpus,
    apap: ApapConfig | None = None,
) -> ProjectiveTransform:
    """Reference solver for the weighted objective, sharing no solver code.

    Scales each column pair explicitly, eliminates the per-pair scales by
    substituting their closed-form optimum inside the objective, and drives
    the 9 matrix entries with quasi-Newton minimization (scipy BFGS, exact
    gradient via the envelope theorem) from a dense pseudo-inverse start.
    Intended for small corpora (N <= 200) in tests.
    """
    if corpus.n > 200:
        raise ValueError(f"oracle is meant for small corpora, got N={corpus.n}")
    from scipy import optimize

    w = apap_weights(query, corpus, apap)
    a = np.column_stack([corpus.estimates[:, i] * w[i] for i in range(corpus.n)])
    b = np.column_stack([corpus.truths[:, i] * w[i] for i in range(corpus.n)])

    def scales_for(p: np.ndarray) -> np.ndarray:
        pa = p @ a
        den = np.einsum("ij,ij->j", pa, pa)
        if np.any(den < 1e-30):
            raise SingularSystem("a scaled estimate column collapsed under the iterate")
        return np.einsum("ij,ij->j", pa, b) / den

    def objective(x: np.ndarray):
        p = x.reshape(3, 3)
        d = scales_for(p)
        r = p @ (a * d) - b
        # the dD/dP terms vanish because D sits at its inner optimum
        return float(np.sum(r * r)), (2.0 * r @ (a * d).T).ravel()

    d0 = np.einsum("ij,ij->j", a, b) / np.einsum("ij,ij->j", a, a)
    p0 = b @ np.linalg.pinv(a * d0)
    if not np.all(np.isfinite(p0)):
        raise SingularSystem("pseudo-inverse of the scaled system is not finite")
    result = optimize.minimize(
        objective, p0.ravel(), jac=True, method="BFGS",
        options={"gtol": 1e-14, "maxiter": 2000},
    )
    return ProjectiveTransform(
        result.x.reshape(3, 3), method=corpus.method_tag, camera=corpus.camera_tag
    )


def export_dataset(result: SynthResult, out_dir, name: str = "synthetic") -> Path:
    """Write a result as 16-bit PNGs plus a manifest CSV; returns the CSV path.

    The exported dataset round-trips through the standard loading path (16
    bits of quantization apply).
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    records = []
    rel_paths = []
    for i, s in enumerate(result.samples):
        rel = f"images/img_{i:04d}.png"
        arr = np.round(s.image.pixels * 65535.0).astype(np.uint16)
        if not cv2.imwrite(str(out_dir / rel), arr[:, :, ::-1]):
            raise OSError(f"failed to write {out_dir / rel}")
        records.append(
            SampleRecord(
                image_path=out_dir / rel,
                gt_illuminant=s.truth,
                black_level=np.zeros(3),
                saturation_level=np.full(3, 65535.0),
                camera_id=result.corpus.camera_tag,
                fold=s.fold,
            )
        )
        rel_paths.append(rel)
    manifest_path = out_dir / f"{name}.csv"
    write_manifest(manifest_path, records, rel_paths)
    return manifest_path


def spec_from_json(path) -> SynthSpec:
    """Load a spec from a JSON file (keys mirror the dataclass fields)."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if "planted_transforms" in obj and obj["planted_transforms"] is not None:
        obj["planted_transforms"] = tuple(obj["planted_transforms"])
    if "cluster_centers" in obj:
        obj["cluster_centers"] = tuple(tuple(c) for c in obj["cluster_centers"])
    known = {f for f in SynthSpec.__dataclass_fields__}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown spec keys: {sorted(unknown)}")
    return SynthSpec(**obj)
