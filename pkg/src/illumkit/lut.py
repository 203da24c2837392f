"""Chromaticity-grid acceleration of the locally-adaptive correction.

The locally-adaptive fit is expensive per query, but nearby queries get
nearly identical weights, so their transforms are nearly identical too.
This module precomputes the transform at every node of an L x L grid over
2D chromaticity and answers queries by bilinear interpolation. Blending the
four corner outputs equals applying the bilinearly-blended matrix, by
linearity.

Binary format "APLU" (all integers and floats little-endian):

    offset  0: magic "APLU" (4 bytes)
    offset  4: version u32 = 1
    offset  8: L u16, reserved u16
    offset 12: bounds u1_min, u1_max, u2_min, u2_max as 4 x f64
    offset 44: 20 reserved zero bytes (fixed 64-byte header)
    offset 64: method_tag, camera_tag as u16-length-prefixed UTF-8
    then     : node payload, L*L*9 f64 (nodes row-major, matrices row-major)
    last 4   : CRC32 of all preceding bytes

For L = 16 the matrix payload is exactly 16*16*9*8 = 18432 bytes.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from .color import from_chromaticity, normalize, to_chromaticity
from .correction import (
    AlsConfig,
    ApapConfig,
    CorrectedVec,
    ProjectiveTransform,
    TrainingCorpus,
    fit_apap,
    fit_global,
)
from .errors import (
    BadMagic,
    BadVersion,
    ChecksumMismatch,
    CollapsedOutput,
    FailedNodeWarning,
    IllumError,
    TruncatedStream,
)

__all__ = ["LutGrid", "DEFAULT_BOUNDS", "build", "query", "serialize", "deserialize"]

MAGIC = b"APLU"
VERSION = 1
HEADER_SIZE = 64
DEFAULT_BOUNDS = (0.0, 1.0, 0.0, 1.0)
_COLLAPSE_EPS = 1e-12


@dataclass
class LutGrid:
    """L x L grid of precomputed transforms indexed by chromaticity.

    ``nodes[i, j]`` is the 3x3 matrix fitted at chromaticity
    ``(u1_min + i*du1, u2_min + j*du2)`` with du = span / (L - 1).
    """

    nodes: np.ndarray
    bounds: tuple[float, float, float, float] = DEFAULT_BOUNDS
    method_tag: str = ""
    camera_tag: str = ""
    failed_nodes: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if nodes.ndim != 4 or nodes.shape[0] != nodes.shape[1] or nodes.shape[2:] != (3, 3):
            raise ValueError(f"nodes must be (L, L, 3, 3), got {nodes.shape}")
        if nodes.shape[0] < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid contains non-finite transforms")
        u1_min, u1_max, u2_min, u2_max = self.bounds
        if not (u1_max > u1_min and u2_max > u2_min):
            raise ValueError(f"bounds must have positive span, got {self.bounds}")
        self.nodes = nodes
        self.bounds = (float(u1_min), float(u1_max), float(u2_min), float(u2_max))

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def node_chromaticity(self, i: int, j: int) -> np.ndarray:
        u1_min, u1_max, u2_min, u2_max = self.bounds
        n = self.size - 1
        return np.array(
            [u1_min + i * (u1_max - u1_min) / n, u2_min + j * (u2_max - u2_min) / n]
        )


def build(
    corpus: TrainingCorpus,
    size: int = 16,
    bounds: tuple[float, float, float, float] = DEFAULT_BOUNDS,
    apap: ApapConfig | None = None,
    als: AlsConfig | None = None,
    threads: int = 1,
) -> LutGrid:
    """Fit the locally-adaptive transform at every grid node.

    Node chromaticities outside the unit simplex are fitted anyway; their
    weights mostly sit at the gamma floor, so they come out near-global. A
    node whose fit fails outright is replaced by the global transform and
    reported through ``failed_nodes`` plus a FailedNodeWarning.

    Node fits are independent; ``threads`` > 1 builds them in a thread
    pool with results assembled by index, so output is identical to the
    sequential build.
    """
    if size < 2:
        raise ValueError(f"grid size must be >= 2, got {size}")
    apap = apap or ApapConfig()
    als = als or AlsConfig()
    u1_min, u1_max, u2_min, u2_max = bounds

    def fit_node(i: int, j: int):
        u1 = u1_min + i * (u1_max - u1_min) / (size - 1)
        u2 = u2_min + j * (u2_max - u2_min) / (size - 1)
        node_illum = from_chromaticity((u1, u2))
        try:
            return fit_apap(node_illum, corpus, apap, als).matrix, False
        except IllumError:
            return None, True

    coords = [(i, j) for i in range(size) for j in range(size)]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ij: fit_node(*ij), coords))
    else:
        results = [fit_node(i, j) for i, j in coords]

    nodes = np.empty((size, size, 3, 3))
    failed: list[tuple[int, int]] = []
    fallback: ProjectiveTransform | None = None
    for (i, j), (matrix, bad) in zip(coords, results):
        if bad:
            if fallback is None:
                fallback = fit_global(corpus, als)
            matrix = fallback.matrix
            failed.append((i, j))
        nodes[i, j] = matrix
    if failed:
        warnings.warn(
            f"{len(failed)} node fits failed; substituted the global transform",
            FailedNodeWarning,
            stacklevel=2,
        )
    return LutGrid(nodes, bounds, corpus.method_tag, corpus.camera_tag, failed)


def query(grid: LutGrid, est) -> CorrectedVec:
    """Correct an estimate through the grid by bilinear interpolation.

    The query chromaticity is clamped into the grid bounds; the four corner
    transforms of the enclosing cell are applied to the estimate and their
    outputs blended with bilinear weights (non-negative, summing to 1),
    then clamped/normalized exactly like a direct transform application.
    """
    est = np.asarray(est, dtype=np.float64)
    c = to_chromaticity(est)
    u1_min, u1_max, u2_min, u2_max = grid.bounds
    n = grid.size - 1
    x = (np.clip(c[0], u1_min, u1_max) - u1_min) / (u1_max - u1_min) * n
    y = (np.clip(c[1], u2_min, u2_max) - u2_min) / (u2_max - u2_min) * n
    i = min(int(x), n - 1)
    j = min(int(y), n - 1)
    tx = x - i
    ty = y - j
    w00 = (1.0 - tx) * (1.0 - ty)
    w10 = tx * (1.0 - ty)
    w01 = (1.0 - tx) * ty
    w11 = tx * ty
    v = (
        w00 * (grid.nodes[i, j] @ est)
        + w10 * (grid.nodes[i + 1, j] @ est)
        + w01 * (grid.nodes[i, j + 1] @ est)
        + w11 * (grid.nodes[i + 1, j + 1] @ est)
    )
    if np.linalg.norm(v) < _COLLAPSE_EPS:
        raise CollapsedOutput("interpolated correction collapsed to the zero vector")
    clamped = bool(np.any(v < 0))
    if clamped:
        v = np.clip(v, 0.0, None)
        if np.linalg.norm(v) < _COLLAPSE_EPS:
            raise CollapsedOutput("query collapsed to zero after clamping negatives")
    return CorrectedVec(normalize(v), clamped)


def _tagged(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("provenance tag longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def serialize(grid: LutGrid) -> bytes:
    """Encode a grid in the APLU binary format."""
    header = MAGIC
    header += struct.pack("<IHH", VERSION, grid.size, 0)
    header += struct.pack("<4d", *grid.bounds)
    header += b"\x00" * (HEADER_SIZE - len(header))
    body = _tagged(grid.method_tag) + _tagged(grid.camera_tag)
    payload = np.ascontiguousarray(grid.nodes, dtype="<f8").tobytes()
    blob = header + body + payload
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def _take(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise TruncatedStream(f"stream ended inside {what}")
    return buf[offset:offset + count], offset + count


def deserialize(data: bytes) -> LutGrid:
    """Decode an APLU stream; the round-trip with serialize is bit-exact.

    Raises:
        BadMagic, BadVersion, TruncatedStream, ChecksumMismatch.
    """
    raw, off = _take(data, 0, 4, "magic")
    if raw != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {raw!r}")
    raw, off = _take(data, off, 8, "version/size")
    version, size, _reserved = struct.unpack("<IHH", raw)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    raw, off = _take(data, off, 32, "bounds")
    bounds = struct.unpack("<4d", raw)
    _, off = _take(data, off, HEADER_SIZE - off, "header padding")
    tags = []
    for what in ("method tag", "camera tag"):
        raw, off = _take(data, off, 2, what)
        (tag_len,) = struct.unpack("<H", raw)
        raw, off = _take(data, off, tag_len, what)
        tags.append(raw.decode("utf-8"))
    n_payload = size * size * 9 * 8
    raw, off = _take(data, off, n_payload, "node payload")
    nodes = np.frombuffer(raw, dtype="<f8").reshape(size, size, 3, 3).copy()
    raw, off = _take(data, off, 4, "checksum")
    (stored,) = struct.unpack("<I", raw)
    actual = zlib.crc32(data[:off - 4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumMismatch(f"crc32 {actual:#010x} != stored {stored:#010x}")
    if off != len(data):
        raise TruncatedStream(f"{len(data) - off} trailing bytes after checksum")
    return LutGrid(nodes, tuple(bounds), tags[0], tags[1])


def payload_size(size: int) -> int:
    """Byte count of the matrix payload for an ``size`` x ``size`` grid."""
    return size * size * 9 * 8


def to_json_dict(grid: LutGrid) -> dict:
    """JSON mirror of the binary format, for debugging."""
    return {
        "version": VERSION,
        "size": grid.size,
        "bounds": list(grid.bounds),
        "method": grid.method_tag,
        "camera": grid.camera_tag,
        "nodes": grid.nodes.tolist(),
    }


def from_json_dict(obj: dict) -> LutGrid:
    return LutGrid(
        np.asarray(obj["nodes"], dtype=np.float64),
        tuple(obj["bounds"]),
        obj.get("method", ""),
        obj.get("camera", ""),
    )


def node_illuminant(grid: LutGrid, i: int, j: int) -> np.ndarray:
    """Representative 3-vector at a grid node (may have a negative B)."""
    return from_chromaticity(grid.node_chromaticity(i, j))
