"""Synthetic layered scenes with exact ground truth.

Shapes are painted back to front; the visible instance map, the occlusion
relation and the oriented boundary field all follow from the painting.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .boundary import InstanceAnnotation, gt_from_annotation
from .core import OrientedBoundaryField, SemanticField

SHAPES = ("rect", "ellipse")
MIN_VISIBLE = 9


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    n_instances: int = 3
    n_classes: int = 2  # nonbackground classes
    shapes: tuple = SHAPES
    eta: float = 0.0
    seed: int = 0
    min_side: float = 0.15  # shape extents as fractions of the grid side
    max_side: float = 0.45
    max_retries: int = 200

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise SceneError("grid must be at least 4x4")
        if self.n_instances < 1:
            raise SceneError("need at least one instance")
        if self.n_classes < 1:
            raise SceneError("need at least one nonbackground class")
        if not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise SceneError(f"shapes must be drawn from {SHAPES}")
        if not 0.0 <= self.eta < 1.0:
            raise SceneError("eta must lie in [0, 1)")
        if not 0 < self.min_side <= self.max_side <= 1:
            raise SceneError("need 0 < min_side <= max_side <= 1")
        if self.max_retries < 1:
            raise SceneError("max_retries must be positive")

    @classmethod
    def from_json(cls, doc: dict) -> "SceneSpec":
        doc = dict(doc)
        if "shapes" in doc:
            doc["shapes"] = tuple(doc["shapes"])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SceneError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        d = asdict(self)
        d["shapes"] = list(self.shapes)
        return d


def load_spec(path) -> SceneSpec:
    with open(path) as f:
        return SceneSpec.from_json(json.load(f))


def rect_mask(shape, r0, c0, r1, c1) -> np.ndarray:
    """Inclusive row/column bounds."""
    m = np.zeros(shape, dtype=bool)
    m[r0:r1 + 1, c0:c1 + 1] = True
    return m


def ellipse_mask(shape, cr, cc, ar, ac) -> np.ndarray:
    r, c = np.ogrid[:shape[0], :shape[1]]
    return ((r - cr) / ar) ** 2 + ((c - cc) / ac) ** 2 <= 1.0


def paint(extents, classes) -> tuple[InstanceAnnotation, str | None]:
    """Paint full-extent masks in order (last is front-most).

    Returns the annotation and, when the layout is unusable, the reason.
    Instance ``k + 1`` is ``extents[k]``. Instance i occludes j when i is in
    front and some visible pixel of i next to a visible pixel of j lies
    inside j's full extent.
    """
    shape = extents[0].shape
    ids = np.zeros(shape, dtype=np.int64)
    for k, m in enumerate(extents):
        ids[m] = k + 1
    n = len(extents)
    for k in range(n):
        vis = ids == k + 1
        if vis.sum() < MIN_VISIBLE:
            return None, f"instance {k + 1} has fewer than {MIN_VISIBLE} visible pixels"
        if ndimage.label(vis)[1] != 1:
            return None, f"instance {k + 1} is split into several visible parts"
    occ = set()
    touching = set()
    h, w = shape
    rr, cc = np.mgrid[:h, :w]
    for dr, dc in ((0, 1), (1, 0)):
        a = ids[: h - dr, : w - dc]
        b = ids[dr:, dc:]
        sel = (a != 0) & (b != 0) & (a != b)
        ra, ca = rr[: h - dr, : w - dc][sel], cc[: h - dr, : w - dc][sel]
        ia, ib = a[sel], b[sel]
        a_front = ia > ib
        front = np.where(a_front, ia, ib)
        back = np.where(a_front, ib, ia)
        fr = np.where(a_front, ra, ra + dr)
        fc = np.where(a_front, ca, ca + dc)
        for f, bk, r, c in zip(front.tolist(), back.tolist(), fr.tolist(), fc.tolist()):
            touching.add((f, bk))
            if extents[bk - 1][r, c]:
                occ.add((f, bk))
    loose = touching - occ
    if loose:
        return None, f"instances {sorted(loose)[0]} touch without overlapping"
    class_of = {k + 1: int(classes[k]) for k in range(n)}
    return InstanceAnnotation(ids, class_of, frozenset(occ)), None


def _random_extent(rng, spec: SceneSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    kind = spec.shapes[rng.integers(len(spec.shapes))]
    sh = rng.integers(max(3, int(spec.min_side * h)), max(4, int(spec.max_side * h)) + 1)
    sw = rng.integers(max(3, int(spec.min_side * w)), max(4, int(spec.max_side * w)) + 1)
    sh, sw = min(sh, h), min(sw, w)
    r0 = rng.integers(0, h - sh + 1)
    c0 = rng.integers(0, w - sw + 1)
    if kind == "rect":
        return rect_mask((h, w), r0, c0, r0 + sh - 1, c0 + sw - 1)
    return ellipse_mask((h, w), r0 + (sh - 1) / 2, c0 + (sw - 1) / 2, sh / 2, sw / 2)


def fields_from_annotation(a: InstanceAnnotation, n_classes: int, eta: float = 0.0, rng=None):
    """Semantic and boundary fields for an annotation, degraded at level eta."""
    h, w = a.instance_id.shape
    cls = np.zeros(a.instance_id.max() + 1, dtype=np.int64)
    for i, c in a.class_of.items():
        cls[i] = c
    cmap = cls[a.instance_id]
    probs = np.zeros((h, w, n_classes + 1), dtype=np.float64)
    np.put_along_axis(probs, cmap[:, :, None], 1.0, axis=2)
    B, E = gt_from_annotation(a)
    if eta > 0:
        rng = rng if rng is not None else np.random.default_rng()
        hit = rng.random((h, w)) < eta
        probs[hit] = (1.0 - eta) * probs[hit] + eta / (n_classes + 1)
        B = np.clip(B + rng.uniform(-eta, eta, size=(h, w)), 0.0, 1.0)
        E = E.copy()
        E[E.sum(axis=2) == 0] = 0.25
    return SemanticField(probs), OrientedBoundaryField(B, E)


def generate(spec: SceneSpec):
    """Random scene -> (annotation, semantic field, boundary field).

    Layouts with a tiny, split or fully hidden instance, or with two
    instances that touch without either covering the other, are redrawn.
    """
    rng = np.random.default_rng(spec.seed)
    reason = None
    for _ in range(spec.max_retries):
        extents = [_random_extent(rng, spec) for _ in range(spec.n_instances)]
        classes = rng.integers(1, spec.n_classes + 1, size=spec.n_instances)
        a, reason = paint(extents, classes)
        if a is not None:
            sem, bnd = fields_from_annotation(a, spec.n_classes, spec.eta, rng)
            return a, sem, bnd
    raise SceneError(f"no valid layout after {spec.max_retries} tries (last: {reason})")


def staggered_cars_scene(n_classes: int = 1):
    """Three staggered rectangles, car 3 in front of car 2 in front of car 1.

    Car 3 shares a longer boundary with car 2 (9 edges) than car 2 does with
    car 1 (5 edges), so lifting car 3 alone is the best second move.
    """
    shape = (14, 24)
    extents = [
        rect_mask(shape, 1, 1, 6, 8),
        rect_mask(shape, 4, 7, 12, 16),
        rect_mask(shape, 4, 12, 12, 22),
    ]
    a, reason = paint(extents, [1, 1, 1])
    if a is None:
        raise SceneError(reason)
    sem, bnd = fields_from_annotation(a, n_classes)
    return a, sem, bnd
