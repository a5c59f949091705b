import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oosis.core import Grid2D
from oosis.instances import Instance, InstanceSet, OcclusionGraph
from oosis.metrics import (
    IOU_SWEEP, Matching, Scene, average_precision, confidence_thresholds, cycle_stats, iou_matrix, match, oair_curve, oair_point,
    random_decycle, read_curve_csv, weighted_coverage, write_curve_csv,
)
from tests import oracles
from tests.fixtures import toy_oair

G = Grid2D(4, 8)


def _mask(r0, c0, r1, c1, grid=G):
    m = np.zeros(grid.shape, dtype=bool)
    m[r0:r1, c0:c1] = True
    return np.flatnonzero(m.ravel())


def _set(*inst, grid=G):
    return InstanceSet(grid, list(inst))


def _dense(inst):
    m = np.zeros(G.size, dtype=bool)
    m[inst.pixels] = True
    return m


def test_iou_matrix_against_oracle():
    a = Instance(1, _mask(0, 0, 2, 4), 1, 1)
    b = Instance(2, _mask(0, 2, 2, 6), 1, 1)
    iou = iou_matrix(_set(a), _set(b))
    assert iou[0, 0] == pytest.approx(oracles.iou(_dense(a), _dense(b))) == pytest.approx(1 / 3)


def test_identical_sets_match_perfectly():
    gt = _set(Instance(1, _mask(0, 0, 2, 2), 1, 1), Instance(2, _mask(2, 4, 4, 8), 1, 2))
    for t in (0.5, 0.95, 1.0):
        assert match(gt, gt, t).pairs == {1: 1, 2: 2}


def test_low_iou_is_unmatched():
    gt = _set(Instance(1, _mask(0, 0, 2, 5), 1, 1))
    pred = _set(Instance(1, _mask(0, 3, 2, 7), 1, 1))  # 4 shared of 14 -> 2/7 < 0.5
    assert not match(pred, gt, 0.5).pairs


def test_higher_confidence_wins():
    # predictions are disjoint, so both cover part of the one GT instance
    pred = _set(Instance(1, _mask(0, 0, 2, 3), 1, 1, 0.9), Instance(2, _mask(0, 3, 2, 4), 1, 1, 0.2))
    gt = _set(Instance(1, _mask(0, 0, 2, 4), 1, 1))
    assert match(pred, gt, 0.2).pairs == {1: 1}
    flipped = pred.with_confidences({1: 0.1, 2: 0.9})
    assert match(flipped, gt, 0.2).pairs == {2: 1}


def test_class_must_agree():
    gt = _set(Instance(1, _mask(0, 0, 2, 2), 1, 1))
    pred = _set(Instance(1, _mask(0, 0, 2, 2), 1, 2))
    assert not match(pred, gt, 0.5).pairs


def test_confidence_threshold_skips():
    gt = _set(Instance(1, _mask(0, 0, 2, 2), 1, 1))
    pred = _set(Instance(1, _mask(0, 0, 2, 2), 1, 1, 0.3))
    assert not match(pred, gt, 0.5, conf_t=0.5).pairs


def _random_sets(rng, grid, k):
    lab = np.zeros(grid.size, dtype=np.int64)
    for i in range(1, k + 1):
        r0, c0 = rng.integers(0, grid.height), rng.integers(0, grid.width)
        m = np.zeros(grid.shape, dtype=bool)
        m[r0:r0 + rng.integers(1, 4), c0:c0 + rng.integers(1, 4)] = True
        lab[m.ravel()] = i
    inst = [Instance(i, np.flatnonzero(lab == i), 1, int(rng.integers(1, 3)), float(rng.random()))
            for i in range(1, k + 1) if (lab == i).any()]
    return InstanceSet(grid, inst)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_matching_monotone_in_iou(seed):
    rng = np.random.default_rng(seed)
    g = Grid2D(6, 6)
    pred, gt = _random_sets(rng, g, 4), _random_sets(rng, g, 4)
    iou = iou_matrix(pred, gt)
    prev = None
    for t in IOU_SWEEP:
        m = match(pred, gt, t, iou=iou)
        assert len(set(m.pairs.values())) == len(m)
        for p, q in m.pairs.items():
            assert iou[pred.ids().index(p), gt.ids().index(q)] >= t
            assert pred.by_id(p).cls == gt.by_id(q).cls
        if prev is not None:
            assert len(m) <= prev
        prev = len(m)


def test_toy_oair():
    pred, pg, gt, gg = toy_oair()
    m = match(pred, gt, 0.5)
    assert m.pairs == {11: 1, 12: 2, 14: 3, 15: 4}
    p = oair_point(pg, gg, m)
    assert (p.recall, p.accuracy) == (0.8, 0.75)
    assert (p.total, p.recovered, p.correct) == (5, 4, 3)


def test_length_two_path_counts():
    pred, pg, gt, gg = toy_oair()
    m = match(pred, gt, 0.5)
    only = OcclusionGraph(gg.nodes, frozenset({(2, 3)}))
    assert oair_point(pg, only, m).accuracy == 1.0


def test_reverse_path_makes_it_wrong():
    g = OcclusionGraph((1, 2), frozenset({(1, 2)}))
    rev = OcclusionGraph((1, 2), frozenset({(2, 1)}))
    m = Matching({1: 1, 2: 2})
    assert oair_point(g, g, m).accuracy == 1.0
    assert oair_point(rev, g, m).accuracy == 0.0


def test_perfect_prediction_curve():
    pred, pg, gt, gg = toy_oair()
    s = Scene(gt, gg, gt, gg)
    for mode in ("iou", "confidence"):
        pts = oair_curve([s], mode)
        assert all((p.recall, p.accuracy) == (1.0, 1.0) for p in pts[1:] if mode == "confidence")
        if mode == "iou":
            assert len(pts) == 10 and all((p.recall, p.accuracy) == (1.0, 1.0) for p in pts)


def test_confidence_sweep_starts_empty():
    pred, pg, gt, gg = toy_oair()
    pts = oair_curve([Scene(pred, pg, gt, gg)], "confidence")
    assert len(pts) == 6
    assert pts[0].recall == 0.0 and pts[0].accuracy is None
    assert pts[-1].recall == 0.8
    assert [p.recall for p in pts] == sorted(p.recall for p in pts)


def test_empty_prediction_curve():
    _, _, gt, gg = toy_oair()
    empty = InstanceSet(gt.grid, [])
    pts = oair_curve([Scene(empty, OcclusionGraph((), frozenset()), gt, gg)], "iou")
    assert all(p.recall == 0.0 and p.accuracy is None for p in pts)


def test_confidence_thresholds():
    t = confidence_thresholds([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    assert len(t) == 6 and t[0] > 0.6 and t[-1] == 0.1
    assert t == sorted(t, reverse=True)


def test_curve_csv_round_trip(tmp_path):
    pred, pg, gt, gg = toy_oair()
    pts = oair_curve([Scene(pred, pg, gt, gg)], "confidence")
    write_curve_csv(tmp_path / "c.csv", pts)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "threshold,recall,accuracy"
    rows = read_curve_csv(tmp_path / "c.csv")
    assert math.isnan(rows[0][2])
    assert [r[1] for r in rows] == [p.recall for p in pts]


def test_wc_full_cover_is_one():
    gt = _set(Instance(1, _mask(0, 0, 4, 3), 1, 1), Instance(2, _mask(0, 3, 4, 8), 1, 1))
    assert weighted_coverage(gt, gt) == 1.0


def test_wc_partial_cover():
    gt = _set(Instance(1, _mask(0, 0, 2, 4), 1, 1))
    assert weighted_coverage(gt, gt) == 8 / 32
    assert weighted_coverage(gt, gt, normalize="gt") == 1.0


def test_wc_empty_prediction():
    gt = _set(Instance(1, _mask(0, 0, 2, 4), 1, 1))
    assert weighted_coverage(gt, _set()) == 0.0


def test_wc_half_overlap():
    gt = _set(Instance(1, _mask(0, 0, 2, 4), 1, 1))
    pred = _set(Instance(1, _mask(0, 2, 2, 6), 1, 1))
    assert weighted_coverage(gt, pred) == pytest.approx(8 * (1 / 3) / 32)


def test_ap_perfect_and_empty():
    gt = _set(Instance(1, _mask(0, 0, 2, 2), 1, 1), Instance(2, _mask(2, 4, 4, 8), 1, 2))
    assert average_precision([(gt.with_confidences({1: 0.3, 2: 0.7}), gt)]) == 1.0
    assert average_precision([(_set(), gt)]) == 0.0


def test_ap_two_predictions_by_hand():
    gt = _set(Instance(1, _mask(0, 0, 2, 2), 1, 1), Instance(2, _mask(2, 4, 4, 8), 1, 1))
    pred = _set(Instance(1, _mask(0, 0, 2, 2), 1, 1, 0.9), Instance(2, _mask(0, 5, 1, 8), 1, 1, 0.4))
    # recall 0.5 at precision 1, then a false positive: 51 of 101 grid points score 1
    assert average_precision([(pred, gt)]) == pytest.approx(51 / 101)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100.0))
def test_ap_rank_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    g = Grid2D(6, 6)
    pred, gt = _random_sets(rng, g, 4), _random_sets(rng, g, 3)
    scaled = pred.with_confidences({i.id: i.confidence * scale for i in pred})
    assert average_precision([(scaled, gt)]) == average_precision([(pred, gt)])


def test_cycle_stats_examples():
    assert cycle_stats(OcclusionGraph((), frozenset())) == 0.0
    assert cycle_stats(OcclusionGraph((1, 2, 3), frozenset({(1, 2), (2, 3)}))) == 0.0
    d = nx.DiGraph([(1, 2), (2, 3), (3, 1)])
    d.add_node(4)
    assert cycle_stats(d) == 0.75
    assert cycle_stats(nx.DiGraph([(1, 1), (1, 2)])) == 0.5


def test_decycle_acyclic_unchanged():
    g = OcclusionGraph((1, 2, 3), frozenset({(1, 2), (2, 3)}))
    assert random_decycle(g, 0) == g


def test_decycle_two_cycle():
    g = OcclusionGraph((1, 2), frozenset({(1, 2), (2, 1)}))
    out, removed = random_decycle(g, 3, return_removed=True)
    assert len(removed) == 1 and len(out.edges) == 1 and out.edges | set(removed) == g.edges


def _random_cyclic(rng, n):
    nodes = list(range(n))
    edges = {(int(a), int(b)) for a, b in rng.integers(0, n, size=(rng.integers(n, 3 * n), 2)) if a != b}
    cyc = rng.permutation(n)[:rng.integers(2, n + 1)]
    edges |= {(int(cyc[i]), int(cyc[(i + 1) % len(cyc)])) for i in range(len(cyc))}
    return OcclusionGraph(tuple(nodes), frozenset(edges))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_decycle_property(seed):
    rng = np.random.default_rng(seed)
    g = _random_cyclic(rng, int(rng.integers(2, 20)))
    out, removed = random_decycle(g, seed, return_removed=True)
    assert not oracles.has_cycle(list(out.nodes), list(out.edges))
    assert cycle_stats(out) == 0.0
    assert out.edges | set(removed) == g.edges
    # every removed edge was on a cycle of the input
    on = oracles.on_cycle_nodes(list(g.nodes), list(g.edges))
    assert all(u in on and v in on for u, v in removed)
    assert random_decycle(g, seed) == out
