"""Projective bias correction of illuminant estimates.

A 3x3 matrix P maps estimated illuminant rays toward their ground-truth
rays. Because rays are scale-free, the fit introduces a per-sample scale
diagonal D and alternates two closed-form least-squares steps:

    minimize over P, D of  || P A D - B ||_F

with A holding estimate columns and B the matching ground truths. The
locally-adaptive variant refits P per query after scaling each training
column pair by an angular-proximity weight, which floors at ``gamma`` so
extrapolation queries degrade to the global fit instead of blowing up.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .color import angular_error, as_vec3, normalize
from .errors import (
    CollapsedOutput,
    DegenerateCorpus,
    NearSingularWarning,
    NoConvergenceWarning,
    NonPositiveIlluminant,
    SingularSystem,
)
from .estimators import RawImage

__all__ = [
    "ProjectiveTransform",
    "TrainingCorpus",
    "AlsConfig",
    "ApapConfig",
    "CorrectionMode",
    "CorrectedVec",
    "AlsTrace",
    "alternating_least_squares",
    "fit_global",
    "apply_transform",
    "apap_weights",
    "fit_apap",
    "correct",
    "white_balance",
]

_COLLAPSE_EPS = 1e-12
# Gram condition number beyond which the normal-equation solve falls back
# to an eigendecomposition pseudo-inverse.
_GRAM_COND_LIMIT = 1e12
_GRAM_SINGULAR_REL = 1e-14


@dataclass(frozen=True)
class AlsConfig:
    """Alternating-solver stopping rule: D-change threshold and iteration cap."""

    threshold: float = 1e-8
    max_iters: int = 100

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class ApapConfig:
    """Locally-adaptive weighting: angular fall-off scale and weight floor."""

    sigma_w: float = 3.0
    gamma: float = 0.0625

    def __post_init__(self):
        if self.sigma_w <= 0:
            raise ValueError(f"sigma_w must be positive, got {self.sigma_w}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")


class CorrectionMode(str, Enum):
    GLOBAL = "global"
    APAP = "apap"
    APAP_LUT = "apap-lut"


@dataclass
class ProjectiveTransform:
    """A 3x3 correction matrix with provenance tags.

    ``converged`` is False when the alternating solver hit its iteration cap
    (a warning, not a failure: the last iterate is still returned).
    """

    matrix: np.ndarray
    method: str = ""
    camera: str = ""
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix has non-finite entries")
        self.matrix = m
        sv = np.linalg.svd(m, compute_uv=False)
        if sv[-1] <= 1e-10 * max(sv[0], 1.0):
            warnings.warn(
                "transform is near-singular; corrections may collapse rays",
                NearSingularWarning,
                stacklevel=2,
            )

    def to_json(self) -> str:
        return json.dumps(
            {"m": self.matrix.reshape(9).tolist(), "method": self.method, "camera": self.camera}
        )

    @classmethod
    def from_json(cls, text: str) -> "ProjectiveTransform":
        obj = json.loads(text)
        m = np.asarray(obj["m"], dtype=np.float64).reshape(3, 3)
        return cls(m, method=obj.get("method", ""), camera=obj.get("camera", ""))


class CorrectedVec(np.ndarray):
    """Unit illuminant produced by a correction; ``clamped`` marks whether
    negative components were zeroed before normalization."""

    def __new__(cls, vec, clamped: bool = False):
        obj = np.asarray(vec, dtype=np.float64).view(cls)
        obj.clamped = bool(clamped)
        return obj

    def __array_finalize__(self, obj):
        if obj is not None:
            self.clamped = getattr(obj, "clamped", False)


@dataclass
class TrainingCorpus:
    """Paired (estimate, truth) illuminants stored as unit columns.

    ``estimates`` and ``truths`` are (3, N) arrays; column i of one pairs
    with column i of the other. Columns are unit-normalized on construction
    (only ray directions matter; the solver's scale diagonal absorbs the rest).
    """

    estimates: np.ndarray
    truths: np.ndarray
    method_tag: str = ""
    camera_tag: str = ""

    def __post_init__(self):
        est = np.asarray(self.estimates, dtype=np.float64)
        tru = np.asarray(self.truths, dtype=np.float64)
        if est.ndim != 2 or est.shape[0] != 3:
            raise ValueError(f"estimates must be (3, N), got {est.shape}")
        if tru.shape != est.shape:
            raise ValueError(f"shape mismatch: estimates {est.shape}, truths {tru.shape}")
        if est.shape[1] < 3:
            raise DegenerateCorpus(f"need at least 3 pairs, got {est.shape[1]}")
        for name, arr in (("estimates", est), ("truths", tru)):
            norms = np.linalg.norm(arr, axis=0)
            if np.any(norms < 1e-15):
                raise ValueError(f"{name} contain a zero column")
        self.estimates = est / np.linalg.norm(est, axis=0)
        self.truths = tru / np.linalg.norm(tru, axis=0)

    @classmethod
    def from_pairs(cls, pairs, method_tag: str = "", camera_tag: str = "") -> "TrainingCorpus":
        """Build from an iterable of (estimate, truth) 3-vector pairs."""
        ests, trus = [], []
        for e, t in pairs:
            ests.append(as_vec3(e))
            trus.append(as_vec3(t))
        return cls(np.array(ests).T, np.array(trus).T, method_tag, camera_tag)

    @property
    def n(self) -> int:
        return self.estimates.shape[1]


def _count_nonparallel(columns: np.ndarray, need: int = 3, tol_deg: float = 1e-9) -> int:
    """Count pairwise non-parallel directions, stopping once ``need`` found."""
    reps: list[np.ndarray] = []
    for i in range(columns.shape[1]):
        v = columns[:, i]
        if all(angular_error(v, r) > tol_deg for r in reps):
            reps.append(v)
            if len(reps) >= need:
                break
    return len(reps)


def _solve_p_step(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """argmin over P of ||P m - b||_F via 3x3 normal equations.

    Falls back to an eigendecomposition pseudo-inverse when the Gram matrix
    is ill-conditioned; raises SingularSystem when it is rank-deficient.
    """
    gram = m @ m.T
    rhs = b @ m.T
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[-1] <= 0 or eigvals[0] <= _GRAM_SINGULAR_REL * eigvals[-1]:
        raise SingularSystem(
            "estimate columns span fewer than 3 dimensions; the normal "
            "equations are numerically singular"
        )
    if eigvals[-1] / eigvals[0] > _GRAM_COND_LIMIT:
        w, v = np.linalg.eigh(gram)
        inv = np.where(w > _GRAM_SINGULAR_REL * w[-1], 1.0 / w, 0.0)
        return rhs @ (v * inv) @ v.T
    return np.linalg.solve(gram, rhs.T).T


def _solve_d_step(pa: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closed-form per-column scales: d_i = (pa_i . b_i) / ||pa_i||^2."""
    num = np.einsum("ij,ij->j", pa, b)
    den = np.einsum("ij,ij->j", pa, pa)
    if np.any(den < 1e-30):
        raise SingularSystem("a transformed estimate column collapsed to zero")
    return num / den


@dataclass
class AlsTrace:
    """Raw alternating-solver output, including the per-iteration objective."""

    matrix: np.ndarray
    scales: np.ndarray
    objectives: list[float] = field(default_factory=list)
    converged: bool = True
    iterations: int = 0


def _sweep(a: np.ndarray, b: np.ndarray, d: np.ndarray):
    """One exact alternation: P given D, then D given P, plus the objective."""
    p = _solve_p_step(a * d, b)
    d_new = _solve_d_step(p @ a, b)
    obj = float(np.linalg.norm(p @ (a * d_new) - b))
    return p, d_new, obj

# Anderson mixing depth. The scale iteration factors through the 9 entries
# of P, so its Jacobian has rank <= 9 and this depth captures every slow
# mode regardless of corpus size.
_ANDERSON_DEPTH = 10


def alternating_least_squares(a: np.ndarray, b: np.ndarray, cfg: AlsConfig | None = None) -> AlsTrace:
    """Alternate closed-form P- and D-steps on ||PAD - B||_F.

    D starts at its closed-form optimum for P = I; iteration stops when the
    Frobenius change of D between consecutive sweeps drops to the threshold,
    or at the iteration cap (with a NoConvergenceWarning; the last iterate
    is kept).

    Plain alternation converges linearly and can be very slow, so the start
    of each sweep is Anderson-extrapolated from recent iterates. Every
    accepted (P, D) pair still comes from one exact P-step/D-step sweep, and
    a safeguard rejects any extrapolated sweep that would raise the
    objective, falling back to the plain sweep (non-increasing by
    construction). The objective therefore never increases; a violation
    raises ArithmeticError since it can only mean numerical breakdown.
    """
    cfg = cfg or AlsConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = _solve_d_step(a, b)
    start = d
    starts: list[np.ndarray] = []
    residuals: list[np.ndarray] = []
    objectives: list[float] = []
    p = np.eye(3)
    prev = np.inf
    converged = False
    q = 0
    while q < cfg.max_iters:
        q += 1
        accepted = True
        try:
            p_t, d_t, obj = _sweep(a, b, start)
            if not (np.isfinite(obj) and obj <= prev * (1.0 + 1e-12) + 1e-15):
                accepted = False
        except SingularSystem:
            if q == 1:
                raise
            accepted = False
        if not accepted:
            start = d
            starts.clear()
            residuals.clear()
            p_t, d_t, obj = _sweep(a, b, start)
        if obj > prev * (1.0 + 1e-12) + 1e-15:
            raise ArithmeticError(f"objective increased at iteration {q}: {prev} -> {obj}")
        d_old = d
        p, d, prev = p_t, d_t, obj
        objectives.append(obj)
        if np.linalg.norm(d - d_old) <= cfg.threshold:
            converged = True
            break
        starts.append(start)
        residuals.append(d - start)
        if len(starts) > _ANDERSON_DEPTH + 1:
            starts.pop(0)
            residuals.pop(0)
        start = d
        if len(starts) >= 2:
            df = np.column_stack([residuals[i + 1] - residuals[i] for i in range(len(residuals) - 1)])
            dx = np.column_stack([starts[i + 1] - starts[i] for i in range(len(starts) - 1)])
            gamma, *_ = np.linalg.lstsq(df, residuals[-1], rcond=1e-12)
            candidate = d - (dx + df) @ gamma
            if np.all(np.isfinite(candidate)):
                start = candidate
    if not converged:
        warnings.warn(
            f"alternating solver hit the {cfg.max_iters}-iteration cap "
            f"(last D-change above {cfg.threshold:g}); returning last iterate",
            NoConvergenceWarning,
            stacklevel=2,
        )
    return AlsTrace(p, d, objectives, converged, q)


def fit_global(corpus: TrainingCorpus, cfg: AlsConfig | None = None) -> ProjectiveTransform:
    """Fit one correction matrix to the whole corpus.

    Raises:
        DegenerateCorpus: fewer than 3 pairwise non-parallel estimates.
        SingularSystem: the normal equations are numerically singular.
    """
    if _count_nonparallel(corpus.estimates) < 3:
        raise DegenerateCorpus("need at least 3 pairwise non-parallel estimates")
    trace = alternating_least_squares(corpus.estimates, corpus.truths, cfg)
    return ProjectiveTransform(
        trace.matrix,
        method=corpus.method_tag,
        camera=corpus.camera_tag,
        converged=trace.converged,
        iterations=trace.iterations,
    )


def apply_transform(transform: ProjectiveTransform, est) -> CorrectedVec:
    """Correct an estimate: normalize(P @ est), clamping negatives to zero.

    The returned vector carries ``clamped=True`` when any component had to
    be zeroed (out-of-gamut query).

    Raises:
        CollapsedOutput: if P @ est (or its clamped form) is ~zero.
    """
    v = transform.matrix @ as_vec3(est)
    if np.linalg.norm(v) < _COLLAPSE_EPS:
        raise CollapsedOutput("transform mapped the estimate to the zero vector")
    clamped = bool(np.any(v < 0))
    if clamped:
        v = np.clip(v, 0.0, None)
        if np.linalg.norm(v) < _COLLAPSE_EPS:
            raise CollapsedOutput("estimate collapsed to zero after clamping negatives")
    return CorrectedVec(normalize(v), clamped)


def apap_weights(query, corpus: TrainingCorpus, cfg: ApapConfig | None = None) -> np.ndarray:
    """Per-pair weights ``max(exp(-angle_deg / sigma_w^2), gamma)``.

    The angle is the angular error in degrees between the query and each
    training estimate, entering the exponent linearly; every weight lies in
    [gamma, 1], and a training estimate parallel to the query gets exactly 1.
    """
    cfg = cfg or ApapConfig()
    q = normalize(query)
    cross = np.linalg.norm(np.cross(corpus.estimates.T, q), axis=1)
    dot = corpus.estimates.T @ q
    theta = np.degrees(np.arctan2(cross, dot))
    return np.maximum(np.exp(-theta / cfg.sigma_w**2), cfg.gamma)


def fit_apap(
    query,
    corpus: TrainingCorpus,
    apap: ApapConfig | None = None,
    als: AlsConfig | None = None,
) -> ProjectiveTransform:
    """Refit the correction for one query, weighting nearby training pairs.

    Equivalent to the global fit on the column-scaled corpus (A W, B W) with
    W = diag of :func:`apap_weights`; gamma = 1 makes all weights equal and
    reduces exactly to :func:`fit_global`.
    """
    if _count_nonparallel(corpus.estimates) < 3:
        raise DegenerateCorpus("need at least 3 pairwise non-parallel estimates")
    w = apap_weights(query, corpus, apap)
    trace = alternating_least_squares(corpus.estimates * w, corpus.truths * w, als)
    return ProjectiveTransform(
        trace.matrix,
        method=corpus.method_tag,
        camera=corpus.camera_tag,
        converged=trace.converged,
        iterations=trace.iterations,
    )


def correct(
    query,
    mode: CorrectionMode | str,
    *,
    corpus: TrainingCorpus | None = None,
    transform: ProjectiveTransform | None = None,
    grid=None,
    apap: ApapConfig | None = None,
    als: AlsConfig | None = None,
) -> CorrectedVec:
    """Dispatch facade over the three correction routes.

    Global uses ``transform`` if given, else fits one from ``corpus``.
    Apap refits per query from ``corpus``. Apap-LUT queries ``grid``
    (an :class:`illumkit.lut.LutGrid`), building one from ``corpus`` with
    default bounds when absent.
    """
    mode = CorrectionMode(mode)
    if mode is CorrectionMode.GLOBAL:
        if transform is None:
            if corpus is None:
                raise ValueError("global mode needs a transform or a corpus")
            transform = fit_global(corpus, als)
        return apply_transform(transform, query)
    if mode is CorrectionMode.APAP:
        if corpus is None:
            raise ValueError("apap mode needs a corpus")
        return apply_transform(fit_apap(query, corpus, apap, als), query)
    if mode is CorrectionMode.APAP_LUT:
        from . import lut as _lut

        if grid is None:
            if corpus is None:
                raise ValueError("apap-lut mode needs a grid or a corpus")
            grid = _lut.build(corpus, apap=apap, als=als)
        return _lut.query(grid, query)
    raise ValueError(f"unhandled mode {mode}")


def white_balance(img: RawImage, illum) -> RawImage:
    """Diagonal white balance: scale channels by (G/R, 1, G/B) of ``illum``.

    Output is clamped to [0, 1]; intended for rendering corrected previews.

    Raises:
        NonPositiveIlluminant: if any channel of ``illum`` is <= 0.
    """
    v = as_vec3(illum)
    if np.any(v <= 0):
        raise NonPositiveIlluminant(f"illuminant must be strictly positive, got {v.tolist()}")
    gains = np.array([v[1] / v[0], 1.0, v[1] / v[2]])
    return RawImage(np.clip(img.pixels * gains, 0.0, 1.0), img.mask)
