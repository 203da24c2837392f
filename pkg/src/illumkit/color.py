"""Core color types: illuminant rays, chromaticity coordinates, angular error.

Illuminants are 3-vectors meaningful only up to positive scale. The canonical
stored form is unit Euclidean norm; all equality-of-direction checks go
through :func:`angular_error`, which is reported in degrees (the convention
of the color-constancy benchmarks this toolkit targets).
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateSum, ZeroVector

_NORM_EPS = 1e-15


def as_vec3(v) -> np.ndarray:
    """Coerce to a float64 3-vector, validating shape and finiteness."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite components")
    return arr


def normalize(v) -> np.ndarray:
    """Return the unit-norm representative of the ray through ``v``.

    Raises:
        ZeroVector: if ``v`` has Euclidean norm below 1e-15.
    """
    arr = as_vec3(v)
    n = np.linalg.norm(arr)
    if n < _NORM_EPS:
        raise ZeroVector("cannot normalize a (near-)zero vector")
    return arr / n


def angular_error(a, b) -> float:
    """Angle in degrees between the rays through ``a`` and ``b``.

    Symmetric in its arguments and invariant to positive scaling of either.
    Evaluated as atan2(||a x b||, a . b): identical to the arccos of the
    clamped normalized dot product, but it stays accurate near 0 and 180
    degrees where arccos of a rounded cosine cannot resolve below ~1e-6
    degrees, and it never produces NaN on parallel inputs.

    Raises:
        ZeroVector: if either input is (near-)zero.
    """
    av = as_vec3(a)
    bv = as_vec3(b)
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na < _NORM_EPS or nb < _NORM_EPS:
        raise ZeroVector("angular error undefined for zero vectors")
    if np.array_equal(av, bv):
        return 0.0
    cross = np.linalg.norm(np.cross(av, bv))
    dot = float(np.dot(av, bv))
    return float(np.degrees(np.arctan2(cross, dot)))


def to_chromaticity(v) -> np.ndarray:
    """Project a color ray onto the 2D chromaticity plane.

    Returns ``(R/(R+G+B), G/(R+G+B))``; the result is invariant to positive
    scaling of ``v``.

    Raises:
        DegenerateSum: if the component sum is at or below 1e-15.
    """
    arr = as_vec3(v)
    s = arr[0] + arr[1] + arr[2]
    if s <= _NORM_EPS:
        raise DegenerateSum("chromaticity undefined: component sum ~ 0")
    return np.array([arr[0] / s, arr[1] / s])


def from_chromaticity(c) -> np.ndarray:
    """Lift a 2D chromaticity back to a representative 3-vector.

    Returns ``(u1, u2, 1 - u1 - u2)``. The inverse embedding is exact:
    ``to_chromaticity(from_chromaticity(c)) == c`` up to rounding. Points
    with ``u1 + u2 > 1`` are lifted as-is (the third component goes
    negative); LUT construction relies on this for out-of-simplex nodes.
    """
    arr = np.asarray(c, dtype=np.float64)
    if arr.shape != (2,):
        raise ValueError(f"expected a 2-vector, got shape {arr.shape}")
    return np.array([arr[0], arr[1], 1.0 - arr[0] - arr[1]])
