"""Evaluation: OAIR curves, Weighted Coverage, AP and occlusion-cycle statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .instances import InstanceSet, OcclusionGraph

IOU_SWEEP = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
N_CONF_THRESHOLDS = 6
AP_RECALL_GRID = np.linspace(0.0, 1.0, 101)


# ---------------------------------------------------------------------------
# Matching

def iou_matrix(pred: InstanceSet, gt: InstanceSet) -> np.ndarray:
    """IoU between every prediction (rows) and ground-truth instance (columns)."""
    if pred.grid != gt.grid:
        raise ValueError("predictions and ground truth live on different grids")
    if not len(pred) or not len(gt):
        return np.zeros((len(pred), len(gt)))
    pm = pred.masks().astype(np.float64)
    gm = gt.masks().astype(np.float64)
    inter = pm @ gm.T
    union = pm.sum(1)[:, None] + gm.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def _rank(pred: InstanceSet) -> list[int]:
    """Row order: confidence descending, then larger mask, then lower id."""
    return sorted(range(len(pred)), key=lambda r: (-pred.instances[r].confidence,
                                                   -pred.instances[r].size, pred.instances[r].id))


@dataclass
class Matching:
    pairs: dict = field(default_factory=dict)  # predicted id -> ground-truth id
    iou_threshold: float = 0.5
    confidence_threshold: float = -math.inf

    def inverse(self) -> dict:
        return {g: p for p, g in self.pairs.items()}

    def __len__(self):
        return len(self.pairs)


def match(pred: InstanceSet, gt: InstanceSet, iou_t: float = 0.5, conf_t: float = -math.inf,
          iou: np.ndarray | None = None) -> Matching:
    """Greedy matching from the most confident prediction down.

    Each prediction takes the unmatched same-class ground-truth instance of
    highest IoU (lower id on ties) and keeps it only if the IoU reaches iou_t.
    """
    iou = iou_matrix(pred, gt) if iou is None else iou
    taken = np.zeros(len(gt), dtype=bool)
    gcls = np.array([g.cls for g in gt], dtype=np.int64)
    out = {}
    for r in _rank(pred):
        p = pred.instances[r]
        if p.confidence < conf_t:
            continue
        cand = (~taken) & (gcls == p.cls)
        if not cand.any():
            continue
        scores = np.where(cand, iou[r], -1.0)
        c = int(np.argmax(scores))
        if scores[c] >= iou_t and scores[c] > 0:
            taken[c] = True
            out[p.id] = gt.instances[c].id
    return Matching(out, iou_t, conf_t)


# ---------------------------------------------------------------------------
# OAIR

@dataclass(frozen=True)
class OairPoint:
    recall: float
    accuracy: float | None  # None when no pair was recovered
    threshold: float
    total: int = 0
    recovered: int = 0
    correct: int = 0

    @classmethod
    def from_counts(cls, total, recovered, correct, threshold) -> "OairPoint":
        recall = recovered / total if total else 1.0
        accuracy = correct / recovered if recovered else None
        return cls(recall, accuracy, threshold, total, recovered, correct)

    @classmethod
    def pool(cls, points, threshold=None) -> "OairPoint":
        points = list(points)
        t = points[0].threshold if threshold is None and points else threshold
        return cls.from_counts(sum(p.total for p in points), sum(p.recovered for p in points),
                               sum(p.correct for p in points), t)


def _as_digraph(g) -> nx.DiGraph:
    if isinstance(g, OcclusionGraph):
        return g.to_networkx()
    if isinstance(g, nx.DiGraph):
        return g
    nodes, edges = g
    d = nx.DiGraph()
    d.add_nodes_from(nodes)
    d.add_edges_from(edges)
    return d


def oair_point(pred_graph, gt_graph, matching: Matching, threshold: float | None = None) -> OairPoint:
    """Recall and accuracy of occlusion order over the ground-truth edges.

    A ground-truth edge is recovered when both of its instances are matched;
    it is correct when the prediction has a directed path between the matched
    instances in the same direction and none in the reverse direction.
    """
    P = _as_digraph(pred_graph)
    G = _as_digraph(gt_graph)
    inv = matching.inverse()
    reach = {}

    def reaches(a, b):
        if a not in reach:
            reach[a] = nx.descendants(P, a) if a in P else set()
        return b in reach[a]

    total = G.number_of_edges()
    recovered = correct = 0
    for g1, g2 in G.edges():
        if g1 in inv and g2 in inv:
            recovered += 1
            m1, m2 = inv[g1], inv[g2]
            if reaches(m1, m2) and not reaches(m2, m1):
                correct += 1
    t = matching.iou_threshold if threshold is None else threshold
    return OairPoint.from_counts(total, recovered, correct, t)


@dataclass
class Scene:
    """One evaluated image: predictions and ground truth with their graphs."""
    pred: InstanceSet
    pred_graph: OcclusionGraph
    gt: InstanceSet
    gt_graph: OcclusionGraph

    def __post_init__(self):
        self._iou = None

    @property
    def iou(self) -> np.ndarray:
        if self._iou is None:
            self._iou = iou_matrix(self.pred, self.gt)
        return self._iou


def confidence_thresholds(confidences, k: int = N_CONF_THRESHOLDS) -> list[float]:
    """k thresholds from 'nothing passes' down to 'everything passes'.

    The first sits just above the largest confidence; the rest are quantiles
    at 1 - i/(k-1) of the pooled confidences, ending at the minimum.
    """
    c = np.asarray(list(confidences), dtype=np.float64)
    if not len(c):
        return [math.inf] * k
    first = float(np.nextafter(c.max(), np.inf))
    rest = [float(np.quantile(c, 1.0 - i / (k - 1))) for i in range(1, k)]
    return [first] + rest


def oair_curve(scenes, mode: str = "iou", iou_t: float = 0.5) -> list[OairPoint]:
    """OAIR points pooled over scenes.

    ``mode="iou"`` sweeps the IoU threshold over 0.50..0.95 keeping every
    prediction; ``mode="confidence"`` sweeps six confidence thresholds at a
    fixed IoU threshold.
    """
    if isinstance(scenes, Scene):
        scenes = [scenes]
    scenes = list(scenes)
    points = []
    if mode == "iou":
        for t in IOU_SWEEP:
            pts = [oair_point(s.pred_graph, s.gt_graph, match(s.pred, s.gt, t, iou=s.iou)) for s in scenes]
            points.append(OairPoint.pool(pts, t) if pts else OairPoint.from_counts(0, 0, 0, t))
    elif mode == "confidence":
        confs = [i.confidence for s in scenes for i in s.pred]
        for t in confidence_thresholds(confs):
            pts = [oair_point(s.pred_graph, s.gt_graph, match(s.pred, s.gt, iou_t, t, iou=s.iou), t)
                   for s in scenes]
            points.append(OairPoint.pool(pts, t) if pts else OairPoint.from_counts(0, 0, 0, t))
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    return points


def write_curve_csv(path, points):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "recall", "accuracy"])
        for p in points:
            acc = "nan" if p.accuracy is None else repr(p.accuracy)
            w.writerow([repr(float(p.threshold)), repr(p.recall), acc])


def read_curve_csv(path) -> list[tuple[float, float, float]]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [(float(r["threshold"]), float(r["recall"]), float(r["accuracy"])) for r in rows]


# ---------------------------------------------------------------------------
# Mask quality

def weighted_coverage(gt: InstanceSet, pred: InstanceSet, normalize: str = "image") -> float:
    """Size-weighted best IoU of each ground-truth instance.

    ``normalize="image"`` divides by the pixel count of the image;
    ``normalize="gt"`` divides by the pixels covered by ground truth, which
    makes an exact prediction score 1 even when instances leave background.
    """
    iou = iou_matrix(pred, gt)
    sizes = np.array([g.size for g in gt], dtype=np.float64)
    if normalize == "image":
        n = gt.grid.size
    elif normalize == "gt":
        n = sizes.sum()
        if n == 0:
            return math.nan
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    if not len(pred) or not len(gt):
        return 0.0
    return float((sizes * iou.max(axis=0)).sum() / n)


def _interp_ap(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        return math.nan
    if not len(tp):
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    # precision envelope: best precision at any recall >= r
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, AP_RECALL_GRID, side="left")
    vals = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(vals.mean())


def average_precision(scenes, iou_thresholds=IOU_SWEEP) -> float:
    """COCO-style mAP: 101-point interpolated AP per class and IoU threshold.

    ``scenes`` is a list of ``(pred, gt)`` InstanceSet pairs (or Scene
    objects). Predictions are ranked by confidence across all scenes; classes
    without ground truth are skipped. Returns nan when there is no ground truth.
    """
    pairs = []
    for s in scenes:
        if isinstance(s, Scene):
            pairs.append((s.pred, s.gt, s.iou))
        else:
            p, g = s
            pairs.append((p, g, iou_matrix(p, g)))
    classes = sorted({g.cls for _, gt, _ in pairs for g in gt})
    per_t = []
    for t in iou_thresholds:
        aps = []
        for c in classes:
            n_gt = sum(1 for _, gt, _ in pairs for g in gt if g.cls == c)
            ranked = []
            for si, (pred, gt, iou) in enumerate(pairs):
                for r in range(len(pred)):
                    p = pred.instances[r]
                    if p.cls == c:
                        ranked.append((-p.confidence, -p.size, si, p.id, r))
            ranked.sort()
            taken = [np.zeros(len(gt), dtype=bool) for _, gt, _ in pairs]
            tp = np.zeros(len(ranked))
            for k, (_, _, si, _, r) in enumerate(ranked):
                _, gt, iou = pairs[si]
                gcls = np.array([g.cls for g in gt], dtype=np.int64)
                cand = (~taken[si]) & (gcls == c)
                if not cand.any():
                    continue
                scores = np.where(cand, iou[r], -1.0)
                j = int(np.argmax(scores))
                if scores[j] >= t and scores[j] > 0:
                    taken[si][j] = True
                    tp[k] = 1
            aps.append(_interp_ap(tp, n_gt))
        if aps:
            per_t.append(float(np.mean(aps)))
    return float(np.mean(per_t)) if per_t else math.nan


# ---------------------------------------------------------------------------
# Cycles

def cycle_stats(g) -> float:
    """Fraction of nodes that sit on a directed cycle (a self-loop counts)."""
    d = _as_digraph(g)
    n = d.number_of_nodes()
    if n == 0:
        return 0.0
    on = set(u for u, _ in nx.selfloop_edges(d))
    for comp in nx.strongly_connected_components(d):
        if len(comp) > 1:
            on |= comp
    return len(on) / n


def random_decycle(g, seed, return_removed: bool = False):
    """Break cycles by deleting one random edge from each cycle found.

    The output has the type of the input (OcclusionGraph, networkx DiGraph,
    or a ``(nodes, edges)`` tuple becomes a DiGraph).
    """
    d = nx.DiGraph()
    src = _as_digraph(g)
    d.add_nodes_from(sorted(src.nodes()))
    d.add_edges_from(sorted(src.edges()))
    rng = np.random.default_rng(seed)
    removed = []
    while True:
        try:
            cycle = nx.find_cycle(d)
        except nx.NetworkXNoCycle:
            break
        u, v = cycle[int(rng.integers(len(cycle)))][:2]
        # the edge lies on a cycle iff its head still reaches its tail
        if not nx.has_path(d, v, u):
            raise AssertionError(f"edge ({u}, {v}) is not on a cycle")
        d.remove_edge(u, v)
        removed.append((u, v))
    out = OcclusionGraph(tuple(d.nodes()), frozenset(d.edges())) if isinstance(g, OcclusionGraph) else d
    return (out, removed) if return_removed else out
