"""Grids, per-pixel fields, labelings and their binary file formats.

Two container formats are used throughout:

* OGF: ``b"OGRD"``, then little-endian u32 version, height, width, channels,
  then ``height*width*channels`` float32 values (row-major, channel-interleaved).
* OLBL: ``b"OLBL"``, then little-endian u32 version, height, width, then
  ``height*width`` u32 labels.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

DIRECTIONS = ("left", "right", "top", "bottom")
# (drow, dcol) per direction, same order as DIRECTIONS
OFFSETS = ((0, -1), (0, 1), (-1, 0), (1, 0))
OPPOSITE = {"left": "right", "right": "left", "top": "bottom", "bottom": "top"}

OGF_MAGIC = b"OGRD"
OLBL_MAGIC = b"OLBL"
FORMAT_VERSION = 1
MAX_ELEMENTS = 1 << 30

SUM_TOL = 1e-6        # type invariant
LOAD_SUM_TOL = 1e-4   # tolerant load: renormalize within, reject beyond


class FieldFormatError(ValueError):
    code = "format"


class BadMagicError(FieldFormatError):
    code = "bad-magic"


class BadVersionError(FieldFormatError):
    code = "bad-version"


class DimensionError(FieldFormatError):
    code = "dimension-overflow"


class ProbabilitySumError(FieldFormatError):
    code = "probability-sum"


class TruncatedFileError(FieldFormatError):
    code = "truncated"


class TrailingDataError(FieldFormatError):
    code = "trailing-data"


@dataclass(frozen=True)
class Grid2D:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def size(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError(f"({row}, {col}) outside {self.height}x{self.width} grid")
        return row * self.width + col

    def rowcol(self, p: int) -> tuple[int, int]:
        if not 0 <= p < self.size:
            raise IndexError(f"pixel {p} outside grid of {self.size} pixels")
        return divmod(p, self.width)

    def neighbor(self, p: int, direction: str) -> int | None:
        r, c = self.rowcol(p)
        dr, dc = OFFSETS[DIRECTIONS.index(direction)]
        r, c = r + dr, c + dc
        if 0 <= r < self.height and 0 <= c < self.width:
            return r * self.width + c
        return None

    def neighbors4(self, p: int) -> list[tuple[int, str]]:
        """In-bounds 4-neighbors of ``p`` as ``(q, direction)`` pairs."""
        out = []
        for d in DIRECTIONS:
            q = self.neighbor(p, d)
            if q is not None:
                out.append((q, d))
        return out

    def edges(self) -> np.ndarray:
        """Unordered 4-connected pixel pairs, each once, as an (m, 2) array with i < j.

        Horizontal edges come first (raster order), then vertical ones.
        """
        idx = np.arange(self.size, dtype=np.int64).reshape(self.shape)
        h = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
        v = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
        return np.concatenate([h, v], axis=0)

    def n_edges(self) -> int:
        return self.height * (self.width - 1) + (self.height - 1) * self.width


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_distribution(a: np.ndarray, what: str, allow_zero: np.ndarray | None = None):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")
    if np.any(a < 0):
        raise ValueError(f"{what} has negative probabilities")
    s = a.astype(np.float64).sum(axis=-1)
    bad = np.abs(s - 1.0) > SUM_TOL
    if allow_zero is not None:
        bad &= ~(allow_zero & (s == 0))
    if np.any(bad):
        worst = float(np.max(np.abs(s[bad] - 1.0)))
        raise ValueError(f"{what} does not sum to 1 (max deviation {worst:.3g})")


class SemanticField:
    """Per-pixel distribution over ``C >= 2`` classes; class 0 is background.

    Probabilities are held as read-only float32, which is also the on-disk
    precision, so a save/load round trip is exact.
    """

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float32)
        if probs.ndim != 3 or probs.shape[2] < 2:
            raise ValueError(f"semantic probs must be (H, W, C>=2), got {probs.shape}")
        self.grid = Grid2D(probs.shape[0], probs.shape[1])
        _check_distribution(probs, "semantic field")
        self.probs = _frozen(probs)

    @classmethod
    def from_background(cls, sigma) -> "SemanticField":
        """Two-class field with background probability ``sigma``."""
        sigma = np.asarray(sigma, dtype=np.float64)
        return cls(np.stack([sigma, 1.0 - sigma], axis=-1))

    @property
    def n_classes(self) -> int:
        return self.probs.shape[2]

    @property
    def background(self) -> np.ndarray:
        return self.probs[:, :, 0]

    def __eq__(self, other):
        return isinstance(other, SemanticField) and _same(self.probs, other.probs)

    __hash__ = None


class OrientedBoundaryField:
    """Boundary probability ``b`` and conditional orientation ``e`` over
    [left, right, top, bottom].

    ``e`` may be all-zero at pixels with ``b == 0``: ground-truth targets leave
    the orientation undefined off the boundary.
    """

    def __init__(self, b, e):
        b = np.asarray(b, dtype=np.float32)
        e = np.asarray(e, dtype=np.float32)
        if b.ndim != 2 or e.shape != b.shape + (4,):
            raise ValueError(f"boundary field needs b (H, W) and e (H, W, 4), got {b.shape}, {e.shape}")
        if not np.all(np.isfinite(b)) or np.any(b < 0) or np.any(b > 1):
            raise ValueError("boundary probabilities must lie in [0, 1]")
        _check_distribution(e, "orientation field", allow_zero=(b == 0))
        self.grid = Grid2D(*b.shape)
        self.b = _frozen(b)
        self.e = _frozen(e)

    def __eq__(self, other):
        return (isinstance(other, OrientedBoundaryField)
                and _same(self.b, other.b) and _same(self.e, other.e))

    __hash__ = None


class OcclusionLabeling:
    """Per-pixel occlusion-order labels; 0 is background."""

    def __init__(self, labels):
        raw = np.asarray(labels)
        if raw.ndim != 2:
            raise ValueError(f"labeling must be 2-D, got shape {raw.shape}")
        integral = np.issubdtype(raw.dtype, np.integer) or bool(np.all(raw == np.round(raw)))
        if not integral or (raw.size and raw.min() < 0):
            raise ValueError("labels must be nonnegative integers")
        self.grid = Grid2D(*raw.shape)
        self.labels = _frozen(raw.astype(np.int64))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "OcclusionLabeling":
        return cls(np.zeros(grid.shape, dtype=np.int64))

    @property
    def flat(self) -> np.ndarray:
        return self.labels.ravel()

    def __eq__(self, other):
        return isinstance(other, OcclusionLabeling) and _same(self.labels, other.labels)

    __hash__ = None


class OcclusionPairSet:
    """Ordered 4-adjacent pixel pairs ``(p, q)`` meaning p occludes q.

    Stored as a lexicographically sorted (k, 2) int64 array.
    """

    def __init__(self, grid: Grid2D, pairs=()):
        arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        self.grid = grid
        if len(arr):
            if arr.min() < 0 or arr.max() >= grid.size:
                raise ValueError("pair index outside grid")
            p, q = arr[:, 0], arr[:, 1]
            pr, pc = np.divmod(p, grid.width)
            qr, qc = np.divmod(q, grid.width)
            if np.any(np.abs(pr - qr) + np.abs(pc - qc) != 1):
                raise ValueError("pairs must be 4-adjacent distinct pixels")
            arr = np.unique(arr, axis=0)
            keys = set(map(tuple, arr.tolist()))
            if any((b, a) in keys for a, b in keys):
                raise ValueError("pair set contains both (p, q) and (q, p)")
        self.pairs = _frozen(arr)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        for p, q in self.pairs.tolist():
            yield (p, q)

    def __contains__(self, pq):
        return tuple(pq) in self.as_set()

    def as_set(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.pairs.tolist()))

    def __eq__(self, other):
        return (isinstance(other, OcclusionPairSet) and self.grid == other.grid
                and np.array_equal(self.pairs, other.pairs))

    __hash__ = None


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# File formats

FIELD_KINDS = ("semantic", "boundary", "composed", "labeling")


def write_grid(path, data: np.ndarray):
    """Write an (H, W, C) array as OGF."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(OGF_MAGIC + struct.pack("<4I", FORMAT_VERSION, h, w, c) + payload)


def read_grid(path) -> np.ndarray:
    """Read an OGF file into an (H, W, C) float32 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[:4] != OGF_MAGIC:
        raise BadMagicError(f"{path}: not an OGF file")
    if len(raw) < 20:
        raise TruncatedFileError(f"{path}: header truncated")
    version, h, w, c = struct.unpack_from("<4I", raw, 4)
    if version != FORMAT_VERSION:
        raise BadVersionError(f"{path}: unsupported OGF version {version}")
    n = h * w * c
    if h == 0 or w == 0 or c == 0 or n > MAX_ELEMENTS:
        raise DimensionError(f"{path}: bad dimensions {h}x{w}x{c}")
    need = 20 + 4 * n
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise TrailingDataError(f"{path}: {len(raw) - need} unexpected trailing bytes")
    return np.frombuffer(raw, dtype="<f4", offset=20, count=n).astype(np.float32).reshape(h, w, c)


def write_labels(path, labels: np.ndarray):
    labels = np.asarray(labels)
    h, w = labels.shape
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFFFFFF):
        raise ValueError("labels do not fit in u32")
    payload = np.ascontiguousarray(labels, dtype="<u4").tobytes()
    with open(path, "wb") as f:
        f.write(OLBL_MAGIC + struct.pack("<3I", FORMAT_VERSION, h, w) + payload)


def read_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[:4] != OLBL_MAGIC:
        raise BadMagicError(f"{path}: not an OLBL file")
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: header truncated")
    version, h, w = struct.unpack_from("<3I", raw, 4)
    if version != FORMAT_VERSION:
        raise BadVersionError(f"{path}: unsupported OLBL version {version}")
    n = h * w
    if h == 0 or w == 0 or n > MAX_ELEMENTS:
        raise DimensionError(f"{path}: bad dimensions {h}x{w}")
    need = 16 + 4 * n
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise TrailingDataError(f"{path}: {len(raw) - need} unexpected trailing bytes")
    return np.frombuffer(raw, dtype="<u4", offset=16, count=n).astype(np.int64).reshape(h, w)


def _tolerant(probs: np.ndarray, path, what: str, allow_zero=None) -> np.ndarray:
    s = probs.astype(np.float64).sum(axis=-1)
    dev = np.abs(s - 1.0)
    ok_zero = np.zeros_like(dev, dtype=bool) if allow_zero is None else (allow_zero & (s == 0))
    if np.any((dev > LOAD_SUM_TOL) & ~ok_zero):
        raise ProbabilitySumError(f"{path}: {what} sums deviate from 1 by up to {dev[~ok_zero].max():.3g}")
    fix = (dev > SUM_TOL) & ~ok_zero
    if np.any(fix):
        probs = probs.copy()
        probs[fix] = (probs[fix].astype(np.float64) / s[fix, None]).astype(np.float32)
    return probs


def load_field(path, kind: str):
    """Decode a field of the given ``kind`` from disk, validating invariants.

    Pixels whose distributions miss 1 by more than 1e-6 but at most 1e-4 are
    renormalized; anything further off raises ProbabilitySumError.
    """
    if kind == "labeling":
        return OcclusionLabeling(read_labels(path))
    data = read_grid(path)
    if np.any(~np.isfinite(data)) or np.any(data < 0):
        raise FieldFormatError(f"{path}: negative or non-finite values")
    if kind == "semantic":
        if data.shape[2] < 2:
            raise DimensionError(f"{path}: semantic field needs >= 2 channels")
        return SemanticField(_tolerant(data, path, "class probabilities"))
    if kind == "boundary":
        if data.shape[2] != 5:
            raise DimensionError(f"{path}: boundary field needs 5 channels [b, e0..e3]")
        b = data[:, :, 0]
        if np.any(b > 1):
            raise FieldFormatError(f"{path}: boundary probability above 1")
        e = _tolerant(data[:, :, 1:], path, "orientation", allow_zero=(b == 0))
        return OrientedBoundaryField(b, e)
    if kind == "composed":
        from .boundary import ComposedBoundary
        if data.shape[2] != 5:
            raise DimensionError(f"{path}: composed boundary needs 5 channels")
        return ComposedBoundary(_tolerant(data, path, "oriented boundary"))
    raise ValueError(f"unknown field kind {kind!r}; expected one of {FIELD_KINDS}")


def save_field(field, path):
    """Write a field in its native format (OLBL for labelings, OGF otherwise)."""
    from .boundary import ComposedBoundary

    if isinstance(field, OcclusionLabeling):
        write_labels(path, field.labels)
    elif isinstance(field, SemanticField):
        write_grid(path, field.probs)
    elif isinstance(field, OrientedBoundaryField):
        write_grid(path, np.concatenate([field.b[:, :, None], field.e], axis=2))
    elif isinstance(field, ComposedBoundary):
        write_grid(path, field.o)
    else:
        raise TypeError(f"cannot save {type(field).__name__}")


def field_kind_from_path(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    return "labeling" if ext == ".olbl" else "semantic"


# ---------------------------------------------------------------------------
# Run-length masks, shared by the annotation and instance JSON files.
# Counts alternate background/foreground over the row-major flattened mask,
# starting with a (possibly empty) background run.

def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return counts


def rle_decode(counts, shape) -> np.ndarray:
    n = int(np.prod(shape))
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts) or sum(counts) != n:
        raise ValueError(f"run-length counts do not cover {n} pixels")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts).reshape(shape)
