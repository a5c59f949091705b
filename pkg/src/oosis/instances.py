"""Instances, occlusion graphs and depth maps derived from a labeling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np
from scipy import ndimage

from .boundary import ComposedBoundary, InstanceAnnotation
from .core import Grid2D, OcclusionLabeling, SemanticField, rle_decode, rle_encode


@dataclass(frozen=True, eq=False)
class Instance:
    id: int
    pixels: np.ndarray  # sorted flat indices
    label: int
    cls: int
    confidence: float = 0.0

    @property
    def size(self) -> int:
        return len(self.pixels)


@dataclass(eq=False)
class InstanceSet:
    """Disjoint instances on one grid.

    Sets extracted from a labeling also have 4-connected instances with one
    shared nonzero label each; sets read from annotations need not.
    """
    grid: Grid2D
    instances: list[Instance] = field(default_factory=list)

    def __post_init__(self):
        seen = np.zeros(self.grid.size, dtype=bool)
        ids = set()
        for inst in self.instances:
            if inst.id in ids:
                raise ValueError(f"duplicate instance id {inst.id}")
            ids.add(inst.id)
            if len(inst.pixels) and (inst.pixels.min() < 0 or inst.pixels.max() >= self.grid.size):
                raise ValueError(f"instance {inst.id} has pixels outside the grid")
            if np.any(seen[inst.pixels]):
                raise ValueError(f"instance {inst.id} overlaps another instance")
            seen[inst.pixels] = True

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def ids(self) -> list[int]:
        return [i.id for i in self.instances]

    def by_id(self, i: int) -> Instance:
        for inst in self.instances:
            if inst.id == i:
                return inst
        raise KeyError(i)

    def id_map(self) -> np.ndarray:
        """Flat array of instance ids, 0 where no instance."""
        out = np.zeros(self.grid.size, dtype=np.int64)
        for inst in self.instances:
            out[inst.pixels] = inst.id
        return out

    def masks(self) -> np.ndarray:
        """(k, n) boolean matrix, one row per instance in list order."""
        m = np.zeros((len(self.instances), self.grid.size), dtype=bool)
        for r, inst in enumerate(self.instances):
            m[r, inst.pixels] = True
        return m

    def with_confidences(self, conf: dict) -> "InstanceSet":
        return InstanceSet(self.grid, [replace(i, confidence=float(conf[i.id])) for i in self.instances])

    def to_json(self, graph: "OcclusionGraph | None" = None) -> dict:
        doc = {
            "height": self.grid.height,
            "width": self.grid.width,
            "instances": [
                {"id": i.id, "class": i.cls, "label": i.label, "confidence": i.confidence,
                 "rle": rle_encode(_mask(self.grid, i.pixels))}
                for i in self.instances
            ],
        }
        if graph is not None:
            doc["occludes"] = sorted([list(e) for e in graph.edges])
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "InstanceSet":
        grid = Grid2D(int(doc["height"]), int(doc["width"]))
        occ = [tuple(e) for e in doc.get("occludes", [])]
        raw = doc["instances"]
        derived = {}
        if any("label" not in r for r in raw):
            derived = layer_labels([int(r["id"]) for r in raw], occ)
        out = []
        for r in raw:
            i = int(r["id"])
            pix = np.flatnonzero(rle_decode(r["rle"], grid.shape).ravel())
            out.append(Instance(i, pix, int(r.get("label", derived.get(i, 1))), int(r["class"]),
                                float(r.get("confidence", 0.0))))
        return cls(grid, out)

    def __eq__(self, other):
        if not isinstance(other, InstanceSet) or self.grid != other.grid or len(self) != len(other):
            return False
        return all(a.id == b.id and a.label == b.label and a.cls == b.cls and a.confidence == b.confidence
                   and np.array_equal(a.pixels, b.pixels) for a, b in zip(self, other))

    __hash__ = None


def _mask(grid: Grid2D, pixels) -> np.ndarray:
    m = np.zeros(grid.size, dtype=bool)
    m[pixels] = True
    return m.reshape(grid.shape)


def layer_labels(ids, edges) -> dict[int, int]:
    """1 + the largest label among each node's occludees (longest chain).

    A cyclic relation has no layering; its strongly connected components are
    collapsed and share one label.
    """
    g = nx.DiGraph()
    g.add_nodes_from(ids)
    g.add_edges_from((u, v) for u, v in edges if u != v)
    c = nx.condensation(g)
    level = {}
    for k in reversed(list(nx.topological_sort(c))):
        level[k] = 1 + max((level[w] for w in c.successors(k)), default=0)
    return {v: level[c.graph["mapping"][v]] for v in g.nodes}


@dataclass(frozen=True, eq=True)
class OcclusionGraph:
    """Instances as nodes, directed edges from occluder to occludee."""
    nodes: tuple = ()
    edges: frozenset = frozenset()

    def __post_init__(self):
        nodes = tuple(sorted(int(n) for n in self.nodes))
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        known = set(nodes)
        for a, b in edges:
            if a == b:
                raise ValueError(f"self-loop on {a}")
            if a not in known or b not in known:
                raise ValueError(f"edge ({a}, {b}) references an unknown node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(sorted(self.edges))
        return g

    def to_json(self) -> dict:
        return {"nodes": list(self.nodes), "edges": sorted([list(e) for e in self.edges])}

    @classmethod
    def from_json(cls, doc: dict) -> "OcclusionGraph":
        return cls(tuple(doc["nodes"]), frozenset(tuple(e) for e in doc["edges"]))

    @classmethod
    def from_annotation(cls, a: InstanceAnnotation) -> "OcclusionGraph":
        ids = a.ids()
        return cls(tuple(ids), frozenset(e for e in a.occludes if e[0] in a.class_of and e[1] in a.class_of))


def extract_instances(labeling: OcclusionLabeling, semantic: SemanticField | None = None) -> InstanceSet:
    """4-connected components of equal nonzero label, ids in raster order.

    Each instance's class is the nonbackground class with the largest summed
    probability over its pixels (class 1 when no semantic field is given).
    """
    grid = labeling.grid
    lab = labeling.labels
    if semantic is not None and semantic.grid != grid:
        raise ValueError("labeling and semantic field live on different grids")
    comps = []
    for value in np.unique(lab):
        if value == 0:
            continue
        cc, k = ndimage.label(lab == value)
        flat = cc.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(1, k + 2))
        for c in range(k):
            pix = order[bounds[c]:bounds[c + 1]]
            comps.append((int(pix[0]), int(value), pix))
    comps.sort(key=lambda t: t[0])
    probs = None if semantic is None else semantic.probs.reshape(grid.size, -1).astype(np.float64)
    out = []
    for new_id, (_, value, pix) in enumerate(comps, start=1):
        cls = 1 if probs is None else int(np.argmax(probs[pix, 1:].sum(axis=0))) + 1
        out.append(Instance(new_id, pix, value, cls, 0.0))
    return InstanceSet(grid, out)


def instances_from_annotation(a: InstanceAnnotation) -> InstanceSet:
    grid = a.grid
    flat = a.instance_id.ravel()
    labels = layer_labels(a.ids(), OcclusionGraph.from_annotation(a).edges)
    return InstanceSet(grid, [
        Instance(i, np.flatnonzero(flat == i), labels[i], a.class_of[i], 0.0) for i in a.ids()
    ])


def graph_from_labeling(inst: InstanceSet, labeling: OcclusionLabeling) -> OcclusionGraph:
    """Edge i -> j whenever a pixel of i is 4-adjacent to a lower-labeled pixel of j."""
    ids = inst.id_map()
    lab = labeling.flat
    e = inst.grid.edges()
    a, b = e[:, 0], e[:, 1]
    ia, ib = ids[a], ids[b]
    sel = (ia != 0) & (ib != 0) & (lab[a] != lab[b])
    fwd = lab[a] > lab[b]
    src = np.where(fwd, ia, ib)[sel]
    dst = np.where(fwd, ib, ia)[sel]
    return OcclusionGraph(tuple(inst.ids()), frozenset(zip(src.tolist(), dst.tolist())))


def depth_map(inst: InstanceSet, labeling: OcclusionLabeling | None = None) -> np.ndarray:
    """8-bit relative depth image: background 0, labels scaled linearly into [1, 255]."""
    grid = inst.grid
    out = np.zeros(grid.size, dtype=np.uint8)
    if not len(inst):
        return out.reshape(grid.shape)
    lab = None if labeling is None else labeling.flat
    values = {}
    for i in inst:
        values[i.id] = i.label if lab is None else int(lab[i.pixels[0]])
    top = max(values.values())
    if top > 255:
        raise ValueError(f"{top} occlusion labels do not fit an 8-bit depth map")
    for i in inst:
        out[i.pixels] = 255 * values[i.id] // top
    return out.reshape(grid.shape)


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    data = parts[4]
    return np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w)


def border_interior(grid: Grid2D, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an instance into pixels with an in-bounds neighbor outside it, and the rest."""
    m = _mask(grid, pixels)
    inner = m.copy()
    inner[1:, :] &= m[:-1, :]
    inner[:-1, :] &= m[1:, :]
    inner[:, 1:] &= m[:, :-1]
    inner[:, :-1] &= m[:, 1:]
    flat_inner = inner.ravel()[pixels]
    return pixels[~flat_inner], pixels[flat_inner]


def adhoc_confidence(inst: InstanceSet, composed: ComposedBoundary) -> InstanceSet:
    """Boundary mass on an instance's border minus the mass inside it."""
    if composed.grid != inst.grid:
        raise ValueError("boundary field and instances live on different grids")
    mass = composed.mass.ravel()
    conf = {}
    for i in inst:
        border, interior = border_interior(inst.grid, i.pixels)
        conf[i.id] = float(mass[border].sum() - mass[interior].sum())
    return inst.with_confidences(conf)


def save_instances(path, inst: InstanceSet, graph: OcclusionGraph | None = None):
    with open(path, "w") as f:
        json.dump(inst.to_json(graph), f)


def load_instances(path) -> tuple[InstanceSet, OcclusionGraph | None]:
    """Instances plus the embedded occlusion graph, if the file carries one."""
    with open(path) as f:
        doc = json.load(f)
    inst = InstanceSet.from_json(doc)
    graph = None
    if "occludes" in doc:
        graph = OcclusionGraph(tuple(inst.ids()), frozenset(tuple(e) for e in doc["occludes"]))
    return inst, graph
