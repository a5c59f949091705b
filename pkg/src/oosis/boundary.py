"""Oriented occlusion boundaries: composition, losses, ground truth, thinning,
pair extraction and angle conversion.

Orientation channels are always ordered [left, right, top, bottom]; a direction
names the side on which the occluded neighbor lies.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DIRECTIONS,
    OFFSETS,
    SUM_TOL,
    Grid2D,
    OcclusionPairSet,
    OrientedBoundaryField,
    _frozen,
    rle_decode,
    rle_encode,
)

LOG_CLAMP = 1e-12
DEFAULT_WEIGHT = 0.9
DEFAULT_TAU = 0.1
NO_BOUNDARY = 4


class ComposedBoundary:
    """Distribution over [left, right, top, bottom, no-boundary] per pixel."""

    def __init__(self, o):
        o = np.asarray(o, dtype=np.float64)
        if o.ndim != 3 or o.shape[2] != 5:
            raise ValueError(f"composed boundary must be (H, W, 5), got {o.shape}")
        if np.any(~np.isfinite(o)) or np.any(o < 0):
            raise ValueError("composed boundary has negative or non-finite entries")
        if np.any(np.abs(o.sum(axis=2) - 1.0) > SUM_TOL):
            raise ValueError("composed boundary rows must sum to 1")
        self.grid = Grid2D(o.shape[0], o.shape[1])
        self.o = _frozen(o)

    @property
    def mass(self) -> np.ndarray:
        """Boundary probability 1 - o[no-boundary] per pixel."""
        return 1.0 - self.o[:, :, NO_BOUNDARY]

    def __eq__(self, other):
        return isinstance(other, ComposedBoundary) and np.array_equal(self.o, other.o)

    __hash__ = None


def compose_arrays(b, e) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    return np.concatenate([b[..., None] * e, (1.0 - b)[..., None]], axis=-1)


def compose(f: OrientedBoundaryField) -> ComposedBoundary:
    return ComposedBoundary(compose_arrays(f.b, f.e))


# ---------------------------------------------------------------------------
# Losses

def _log(x):
    return np.log(np.clip(np.asarray(x, dtype=np.float64), LOG_CLAMP, 1.0))


def _one_hot(S, n_classes: int) -> np.ndarray:
    S = np.asarray(S)
    if S.ndim == 2 and np.issubdtype(S.dtype, np.integer):
        return np.eye(n_classes, dtype=np.float64)[S]
    return S.astype(np.float64)


def cross_entropy(target, pred) -> np.ndarray:
    """Per-pixel categorical cross-entropy over the last axis."""
    return -(np.asarray(target, dtype=np.float64) * _log(pred)).sum(axis=-1)


def binary_cross_entropy(B, b, w: float | None = None) -> np.ndarray:
    """Per-pixel binary cross-entropy; with ``w`` set, positives weigh ``w``
    and negatives ``1 - w``."""
    B = np.asarray(B, dtype=np.float64)
    pos = -B * _log(b)
    neg = -(1.0 - B) * _log(1.0 - np.asarray(b, dtype=np.float64))
    if w is None:
        return pos + neg
    return w * pos + (1.0 - w) * neg


def loss_joint(S, s, B, b, E, e, w: float = DEFAULT_WEIGHT) -> float:
    """Semantic CE + weighted boundary BCE + orientation CE on GT boundaries.

    ``S`` is either one-hot (H, W, C) or an integer class map (H, W).
    """
    s = np.asarray(s, dtype=np.float64)
    S = _one_hot(S, s.shape[-1])
    B = np.asarray(B, dtype=np.float64)
    if S.shape != s.shape or B.shape != s.shape[:-1] or np.shape(b) != B.shape:
        raise ValueError("loss inputs have mismatched shapes")
    if np.shape(E) != B.shape + (4,) or np.shape(e) != B.shape + (4,):
        raise ValueError("orientation inputs must be (H, W, 4)")
    sem = cross_entropy(S, s)
    bnd = binary_cross_entropy(B, b, w)
    ori = np.where(B > 0, B * cross_entropy(E, e), 0.0)
    return float(np.sum(sem + bnd + ori))


def loss_identity_check(B, b, E, e) -> tuple[float, float]:
    """Both sides of the boundary loss decomposition.

    lhs is the cross-entropy of the composed 5-way prediction against the
    composed target; rhs is unweighted BCE on ``b`` plus orientation CE gated
    by ``B``. They agree whenever B is binary and E sums to one where B = 1.
    """
    B = np.asarray(B, dtype=np.float64)
    O = compose_arrays(B, E)
    o = compose_arrays(b, e)
    lhs = float(np.sum(cross_entropy(O, o)))
    ori = np.where(B > 0, B * cross_entropy(E, e), 0.0)
    rhs = float(np.sum(binary_cross_entropy(B, b) + ori))
    return lhs, rhs


# ---------------------------------------------------------------------------
# Ground truth from instance annotations

@dataclass(frozen=True, eq=False)
class InstanceAnnotation:
    """Visible instance map plus an annotated occlusion relation.

    ``instance_id`` is 0 on background. ``occludes`` holds ordered instance
    pairs ``(i, j)`` meaning i is in front of j.
    """
    instance_id: np.ndarray
    class_of: dict = field(default_factory=dict)
    occludes: frozenset = frozenset()

    def __post_init__(self):
        ids = np.asarray(self.instance_id, dtype=np.int64)
        if ids.ndim != 2 or ids.size == 0:
            raise ValueError("instance_id must be a non-empty 2-D array")
        if ids.min() < 0:
            raise ValueError("instance ids must be nonnegative")
        object.__setattr__(self, "instance_id", _frozen(ids))
        object.__setattr__(self, "class_of", {int(k): int(v) for k, v in self.class_of.items()})
        occ = frozenset((int(i), int(j)) for i, j in self.occludes)
        object.__setattr__(self, "occludes", occ)
        missing = set(np.unique(ids).tolist()) - {0} - set(self.class_of)
        if missing:
            raise ValueError(f"instances without a class: {sorted(missing)}")
        if any(i == j for i, j in occ):
            raise ValueError("occludes relation must be irreflexive")
        if any(c < 1 for c in self.class_of.values()):
            raise ValueError("instance classes must be nonbackground (>= 1)")

    @property
    def grid(self) -> Grid2D:
        return Grid2D(*self.instance_id.shape)

    def ids(self) -> list[int]:
        return sorted(self.class_of)

    def to_json(self) -> dict:
        h, w = self.instance_id.shape
        return {
            "height": h,
            "width": w,
            "instances": [
                {"id": i, "class": self.class_of[i], "rle": rle_encode(self.instance_id == i)}
                for i in self.ids()
            ],
            "occludes": sorted([list(pair) for pair in self.occludes]),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "InstanceAnnotation":
        h, w = int(doc["height"]), int(doc["width"])
        ids = np.zeros((h, w), dtype=np.int64)
        class_of = {}
        for inst in doc["instances"]:
            i = int(inst["id"])
            if i <= 0:
                raise ValueError("instance ids must be positive")
            mask = rle_decode(inst["rle"], (h, w))
            if np.any(ids[mask] != 0):
                raise ValueError(f"instance {i} overlaps another instance")
            ids[mask] = i
            class_of[i] = int(inst["class"])
        return cls(ids, class_of, frozenset(tuple(p) for p in doc.get("occludes", [])))

    def __eq__(self, other):
        return (isinstance(other, InstanceAnnotation)
                and np.array_equal(self.instance_id, other.instance_id)
                and self.class_of == other.class_of and self.occludes == other.occludes)

    __hash__ = None


def load_annotation(path) -> InstanceAnnotation:
    with open(path) as f:
        return InstanceAnnotation.from_json(json.load(f))


def save_annotation(a: InstanceAnnotation, path):
    with open(path, "w") as f:
        json.dump(a.to_json(), f)


def _shifted(a: np.ndarray, d: int, fill):
    """Value of the neighbor in direction ``d`` at every pixel, ``fill`` out of bounds."""
    dr, dc = OFFSETS[d]
    h, w = a.shape[:2]
    out = np.full_like(a, fill)
    rs = slice(max(dr, 0), h + min(dr, 0))
    rd = slice(max(-dr, 0), h + min(-dr, 0))
    cs = slice(max(dc, 0), w + min(dc, 0))
    cd = slice(max(-dc, 0), w + min(-dc, 0))
    out[rd, cd] = a[rs, cs]
    return out


def occlusion_directions(a: InstanceAnnotation) -> np.ndarray:
    """(H, W, 4) boolean: pixel occludes its neighbor in each direction.

    Instance pixels occlude adjacent background and any adjacent instance they
    are annotated to occlude.
    """
    ids = a.instance_id
    top = int(ids.max())
    rel = np.zeros((top + 1, top + 1), dtype=bool)
    rel[1:, 0] = True
    for i, j in a.occludes:
        if i <= top and j <= top:
            rel[i, j] = True
    out = np.zeros(ids.shape + (4,), dtype=bool)
    for d in range(4):
        q = _shifted(ids, d, -1)
        inb = q >= 0
        out[:, :, d] = inb & (ids != 0) & (q != ids) & rel[ids, np.where(inb, q, 0)]
    return out


def gt_from_annotation(a: InstanceAnnotation) -> tuple[np.ndarray, np.ndarray]:
    """Binary boundary map B and normalized orientation indicator E.

    E is all-zero wherever B is 0.
    """
    occ = occlusion_directions(a)
    count = occ.sum(axis=2)
    B = (count > 0).astype(np.float64)
    E = np.zeros(occ.shape, dtype=np.float64)
    on = count > 0
    E[on] = occ[on] / count[on, None]
    return B, E


def gt_field(a: InstanceAnnotation) -> OrientedBoundaryField:
    B, E = gt_from_annotation(a)
    return OrientedBoundaryField(B, E)


# ---------------------------------------------------------------------------
# Thinning and pair extraction

def nms_thin(c: ComposedBoundary, tau: float = DEFAULT_TAU) -> ComposedBoundary:
    """Suppress weak pixels and non-maxima across the dominant orientation axis.

    A pixel is compared with its two neighbors along the horizontal axis if
    its strongest direction is left/right, else along the vertical axis. It
    is dropped if a neighbor carries strictly more boundary mass, or equal
    mass on the same axis while coming earlier in raster order.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    o = c.o
    m = c.mass
    horiz = np.argmax(o[:, :, :4], axis=2) < 2
    keep = m >= tau
    neg = -np.inf
    for d_before, d_after, on_axis in ((0, 1, horiz), (2, 3, ~horiz)):
        m_before = _shifted(m, d_before, neg)
        m_after = _shifted(m, d_after, neg)
        axis_before = _shifted(on_axis, d_before, False)
        lose = (m_before > m) | ((m_before == m) & axis_before) | (m_after > m)
        keep &= ~(on_axis & lose)
    out = o.copy()
    out[~keep] = (0.0, 0.0, 0.0, 0.0, 1.0)
    return ComposedBoundary(out)


def extract_pairs(c: ComposedBoundary, tau: float = DEFAULT_TAU) -> OcclusionPairSet:
    """Ordered pairs (p, neighbor) for every direction with o_p[d] >= tau.

    When both (p, q) and (q, p) arise, the one with the larger generating
    probability survives; on a tie, the one with the smaller p.
    """
    grid = c.grid
    idx = np.arange(grid.size, dtype=np.int64).reshape(grid.shape)
    P, Q, W = [], [], []
    for d in range(4):
        q = _shifted(idx, d, -1)
        prob = c.o[:, :, d]
        sel = (q >= 0) & (prob >= tau) & (prob > 0)
        P.append(idx[sel])
        Q.append(q[sel])
        W.append(prob[sel])
    P = np.concatenate(P)
    Q = np.concatenate(Q)
    W = np.concatenate(W)
    if len(P) == 0:
        return OcclusionPairSet(grid)
    n = grid.size
    fwd = P * n + Q
    order = np.argsort(fwd)
    sorted_keys = fwd[order]
    rev = Q * n + P
    pos = np.searchsorted(sorted_keys, rev)
    pos_c = np.minimum(pos, len(sorted_keys) - 1)
    has_rev = sorted_keys[pos_c] == rev
    j = order[pos_c]
    lose = has_rev & ((W < W[j]) | ((W == W[j]) & (P > P[j])))
    return OcclusionPairSet(grid, np.stack([P[~lose], Q[~lose]], axis=1))


def pairs_from_annotation(a: InstanceAnnotation) -> set[tuple[int, int]]:
    """Every adjacent pixel pair (p, q) with instance(p) occluding instance(q)."""
    occ = occlusion_directions(a)
    grid = a.grid
    idx = np.arange(grid.size, dtype=np.int64).reshape(grid.shape)
    out = set()
    for d in range(4):
        q = _shifted(idx, d, -1)
        sel = occ[:, :, d]
        out.update(zip(idx[sel].tolist(), q[sel].tolist()))
    return out


# ---------------------------------------------------------------------------
# Angles

def _wrap(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def to_angle(o) -> tuple[float, float]:
    """Normal and boundary angle of one oriented-boundary vector.

    Angles are measured clockwise from image-up (x right, y down), so pure
    left is -pi/2 and pure bottom is pi. The stronger of left/right and of
    top/bottom give the horizontal and vertical components; the deviation from
    the vertical axis is arctan(h / v). The boundary angle follows the left
    rule: walking along it, the occluder lies on the left.
    """
    o = [float(x) for x in o]
    left, right, top, bottom = o[:4]
    h = max(left, right)
    v = max(top, bottom)
    if h <= 0.0 and v <= 0.0:
        raise ValueError("no orientation mass to convert")
    # + 0.0 turns -0.0 into 0.0 so a pure-bottom normal lands on +pi
    x = (-h if left >= right else h) + 0.0
    up = (v if top >= bottom else -v) + 0.0
    normal = math.atan2(x, up)
    return normal, _wrap(normal - math.pi / 2.0)


def angle_table(c: ComposedBoundary, tau: float = DEFAULT_TAU) -> list[tuple[int, int, float, float, float]]:
    """(row, col, mass, normal, boundary) for each pixel with mass >= tau."""
    rows = []
    m = c.mass
    for r, col in zip(*np.nonzero((m >= tau) & (m > 0))):
        n, b = to_angle(c.o[r, col])
        rows.append((int(r), int(col), float(m[r, col]), n, b))
    return rows


__all__ = [
    "ComposedBoundary", "InstanceAnnotation", "DIRECTIONS",
    "compose", "compose_arrays", "loss_joint", "loss_identity_check",
    "gt_from_annotation", "gt_field", "nms_thin", "extract_pairs", "to_angle",
]
