import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from oosis.boundary import ComposedBoundary
from oosis.core import Grid2D, OcclusionLabeling, SemanticField
from oosis.instances import (
    Instance, InstanceSet, OcclusionGraph, adhoc_confidence, depth_map, extract_instances, graph_from_labeling,
    load_instances, read_pgm, save_instances, write_pgm,
)
from oosis.metrics import cycle_stats
from tests import oracles


def _lab(a):
    return OcclusionLabeling(np.array(a))


def test_all_zero_labeling_is_empty():
    assert len(extract_instances(_lab(np.zeros((3, 3), dtype=int)))) == 0


def test_disjoint_blobs_are_separate_instances():
    inst = extract_instances(_lab([[1, 0, 1]]))
    assert len(inst) == 2 and inst.ids() == [1, 2]


def test_ids_follow_raster_order():
    inst = extract_instances(_lab([[0, 2], [1, 0]]))
    assert [i.label for i in inst] == [2, 1]


def test_soft_majority_vote():
    # 3 classes; pixel 0 leans to class 1, pixels 1..2 to class 2 -> 60% of nonbackground mass on class 2
    probs = np.array([[[0.0, 0.8, 0.2], [0.0, 0.3, 0.7], [0.0, 0.3, 0.7]]])
    inst = extract_instances(_lab([[1, 1, 1]]), SemanticField(probs))
    assert inst.instances[0].cls == 2


def test_background_class_excluded_from_vote():
    probs = np.array([[[0.9, 0.1]]])
    assert extract_instances(_lab([[1]]), SemanticField(probs)).instances[0].cls == 1


def test_overlapping_instances_rejected():
    g = Grid2D(1, 2)
    with pytest.raises(ValueError):
        InstanceSet(g, [Instance(1, np.array([0, 1]), 1, 1), Instance(2, np.array([1]), 1, 1)])


def test_graph_single_instance():
    lab = _lab([[1, 1], [1, 1]])
    assert not graph_from_labeling(extract_instances(lab), lab).edges


def test_graph_two_levels():
    lab = _lab([[2, 1]])
    inst = extract_instances(lab)
    assert graph_from_labeling(inst, lab).edges == {(1, 2)}


def test_graph_three_strips():
    lab = _lab([[3, 3, 2, 2, 1, 1]])
    inst = extract_instances(lab)
    assert graph_from_labeling(inst, lab).edges == {(1, 2), (2, 3)}


def test_self_loop_rejected():
    with pytest.raises(ValueError):
        OcclusionGraph((1,), frozenset({(1, 1)}))


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.int64, st.tuples(st.integers(1, 7), st.integers(1, 7)), elements=st.integers(0, 4)))
def test_graphs_from_labelings_are_acyclic(labels):
    lab = OcclusionLabeling(labels)
    inst = extract_instances(lab)
    g = graph_from_labeling(inst, lab)
    assert not oracles.has_cycle(list(g.nodes), list(g.edges))
    assert cycle_stats(g) == 0.0
    covered = sum(i.size for i in inst)
    assert covered + int((labels == 0).sum()) == labels.size
    depth = depth_map(inst, lab).ravel()
    for a, b in g.edges:
        assert depth[inst.by_id(a).pixels[0]] > depth[inst.by_id(b).pixels[0]]


@pytest.mark.parametrize("labels, want", [
    ([[0, 1]], {0, 255}),
    ([[0, 1, 2, 3]], {0, 85, 170, 255}),
])
def test_depth_scaling(labels, want):
    lab = _lab(labels)
    assert set(depth_map(extract_instances(lab), lab).ravel().tolist()) == want


def test_empty_depth_map():
    lab = _lab(np.zeros((2, 2), dtype=int))
    assert not depth_map(extract_instances(lab), lab).any()


def test_too_many_labels_for_depth_map():
    lab = _lab([list(range(1, 258))])
    with pytest.raises(ValueError):
        depth_map(extract_instances(lab), lab)


def test_pgm_round_trip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    write_pgm(tmp_path / "d.pgm", img)
    assert (tmp_path / "d.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "d.pgm"), img)


def _mass_field(mass):
    o = np.zeros(mass.shape + (5,))
    o[:, :, 0] = mass
    o[:, :, 4] = 1.0 - mass
    return ComposedBoundary(o)


def test_confidence_border_length():
    lab = np.zeros((5, 5), dtype=int)
    lab[1:4, 1:4] = 1
    mass = np.zeros((5, 5))
    mass[1:4, 1:4] = 1.0
    mass[2, 2] = 0.0
    inst = adhoc_confidence(extract_instances(_lab(lab)), _mass_field(mass))
    assert inst.instances[0].confidence == 8.0


def test_confidence_penalizes_inner_ridge():
    lab = np.zeros((5, 7), dtype=int)
    lab[1:4, 1:6] = 1
    border = np.zeros((5, 7))
    border[1:4, 1:6] = 1.0
    border[2, 2:5] = 0.0
    ridge = border.copy()
    ridge[2, 3] = 0.8  # two blobs merged across a strong internal boundary
    inst = extract_instances(_lab(lab))
    clean = adhoc_confidence(inst, _mass_field(border)).instances[0].confidence
    merged = adhoc_confidence(inst, _mass_field(ridge)).instances[0].confidence
    assert merged == pytest.approx(clean - 0.8)


def test_zero_boundary_zero_confidence():
    lab = _lab([[1, 1, 0, 2]])
    inst = adhoc_confidence(extract_instances(lab), _mass_field(np.zeros((1, 4))))
    assert [i.confidence for i in inst] == [0.0, 0.0]


def test_instance_json_round_trip(tmp_path):
    lab = _lab([[2, 2, 1], [0, 1, 1]])
    inst = adhoc_confidence(extract_instances(lab), _mass_field(np.full((2, 3), 0.3)))
    g = graph_from_labeling(inst, lab)
    save_instances(tmp_path / "i.json", inst, g)
    inst2, g2 = load_instances(tmp_path / "i.json")
    assert inst2 == inst and g2 == g
