import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oosis.boundary import (
    ComposedBoundary, InstanceAnnotation, compose_arrays, extract_pairs, gt_from_annotation, loss_identity_check,
    loss_joint, nms_thin, pairs_from_annotation, to_angle,
)
from oosis.core import Grid2D
from tests import oracles


def _c(o):
    return ComposedBoundary(np.asarray(o, dtype=np.float64))


# --- composition -----------------------------------------------------------------

@pytest.mark.parametrize("b, e, o", [
    (0.0, [0.1, 0.2, 0.3, 0.4], [0, 0, 0, 0, 1]),
    (1.0, [1, 0, 0, 0], [1, 0, 0, 0, 0]),
    (0.5, [0.5, 0, 0.5, 0], [0.25, 0, 0.25, 0, 0.5]),
])
def test_compose_examples(b, e, o):
    assert np.allclose(compose_arrays(np.array([[b]]), np.array([[e]]))[0, 0], o, atol=0, rtol=0)


# --- losses ----------------------------------------------------------------------

def test_perfect_prediction_has_near_zero_loss():
    rng = np.random.default_rng(0)
    S = rng.integers(0, 3, size=(4, 4))
    s = np.eye(3)[S]
    B = (rng.random((4, 4)) < 0.5).astype(float)
    E = np.eye(4)[rng.integers(0, 4, size=(4, 4))]
    assert loss_joint(S, s, B, B, E, E) < 1e-9


def test_orientation_gated_off_boundary():
    s = np.array([[[1.0, 0.0]]])
    base = loss_joint(np.array([[0]]), s, np.zeros((1, 1)), np.full((1, 1), 0.3),
                      np.zeros((1, 1, 4)), np.full((1, 1, 4), 0.25))
    other = loss_joint(np.array([[0]]), s, np.zeros((1, 1)), np.full((1, 1), 0.3),
                       np.zeros((1, 1, 4)), np.array([[[0.97, 0.01, 0.01, 0.01]]]))
    assert base == other


def test_loss_matches_scalar_rederivation():
    rng = np.random.default_rng(1)
    h = w = 4
    S = rng.integers(0, 3, size=(h, w))
    s = rng.dirichlet(np.ones(3), size=(h, w))
    B = (rng.random((h, w)) < 0.4).astype(float)
    b = rng.uniform(0.05, 0.95, size=(h, w))
    E = rng.dirichlet(np.ones(4), size=(h, w))
    e = rng.dirichlet(np.ones(4), size=(h, w))
    wgt = 0.5
    ref = 0.0
    for r in range(h):
        for c in range(w):
            ref -= math.log(s[r, c, S[r, c]])
            ref -= wgt * B[r, c] * math.log(b[r, c]) + (1 - wgt) * (1 - B[r, c]) * math.log(1 - b[r, c])
            if B[r, c]:
                ref -= sum(E[r, c, d] * math.log(e[r, c, d]) for d in range(4))
    assert loss_joint(S, s, B, b, E, e, w=wgt) == pytest.approx(ref, rel=1e-12)


def test_identity_no_boundary():
    b = np.array([[0.2, 0.7]])
    lhs, rhs = loss_identity_check(np.zeros((1, 2)), b, np.zeros((1, 2, 4)), np.full((1, 2, 4), 0.25))
    ref = -math.log(0.8) - math.log(0.3)
    assert lhs == pytest.approx(ref, rel=1e-15) and rhs == pytest.approx(ref, rel=1e-15)


def test_identity_single_boundary_pixel():
    B = np.ones((1, 1))
    E = np.array([[[1.0, 0, 0, 0]]])
    b = np.full((1, 1), 0.7)
    e = np.array([[[0.7, 0.1, 0.1, 0.1]]])
    lhs, rhs = loss_identity_check(B, b, E, e)
    # -ln(0.7 * 0.7) on the left, -ln 0.7 - ln 0.7 on the right
    assert lhs == pytest.approx(-2 * math.log(0.7), rel=1e-14)
    assert lhs == pytest.approx(rhs, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_identity_property_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    B = (rng.random((8, 8)) < 0.5).astype(float)
    E = rng.dirichlet(np.ones(4), size=(8, 8))
    b = rng.uniform(0.01, 0.99, size=(8, 8))
    e = rng.dirichlet(np.ones(4), size=(8, 8))
    lhs, rhs = loss_identity_check(B, b, E, e)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))
    assert lhs == pytest.approx(oracles.ce_composed(B, E, b, e), rel=1e-12)
    assert rhs == pytest.approx(oracles.ce_split(B, E, b, e), rel=1e-12)


# --- ground truth ----------------------------------------------------------------

def test_left_occluder_fixture():
    # instance 1 on the right occludes instance 2 on its left
    a = InstanceAnnotation(np.array([[2, 1]]), {1: 1, 2: 1}, {(1, 2)})
    B, E = gt_from_annotation(a)
    assert B.tolist() == [[0.0, 1.0]]
    assert E[0, 1].tolist() == [1.0, 0.0, 0.0, 0.0]


def test_left_and_top_fixture():
    ids = np.array([[0, 0], [0, 1]])
    a = InstanceAnnotation(ids, {1: 1})
    B, E = gt_from_annotation(a)
    assert B[1, 1] == 1.0
    assert E[1, 1].tolist() == [0.5, 0.0, 0.5, 0.0]


def test_single_instance_covering_image_has_no_boundary():
    a = InstanceAnnotation(np.ones((3, 3), dtype=int), {1: 2})
    B, E = gt_from_annotation(a)
    assert not B.any() and not E.any()


def test_gt_pairs_follow_occlusion():
    a = InstanceAnnotation(np.array([[0, 1, 2]]), {1: 1, 2: 1}, {(2, 1)})
    assert pairs_from_annotation(a) == {(1, 0), (2, 1)}


# --- thinning ----------------------------------------------------------------------

def _field(h, w):
    o = np.zeros((h, w, 5))
    o[:, :, 4] = 1.0
    return o


def _put(o, r, c, d, m):
    o[r, c] = 0.0
    o[r, c, d] = m
    o[r, c, 4] = 1.0 - m


def test_weak_boundaries_vanish():
    o = _field(3, 3)
    _put(o, 1, 1, 0, 0.05)
    assert np.all(nms_thin(_c(o)).o[:, :, 4] == 1.0)


def test_ideal_step_edge_is_already_thin():
    o = _field(4, 4)
    for r in range(4):
        _put(o, r, 2, 0, 1.0)
    out = nms_thin(_c(o))
    assert np.array_equal(out.o, o)


def test_ridge_keeps_middle_column():
    o = _field(3, 5)
    for r in range(3):
        _put(o, r, 1, 0, 0.4)
        _put(o, r, 2, 0, 0.9)
        _put(o, r, 3, 0, 0.4)
    out = nms_thin(_c(o))
    kept = out.o[:, :, 4] < 1.0
    assert kept[:, 2].all() and kept.sum() == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_thinning_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    b = rng.random((6, 6))
    e = rng.dirichlet(np.ones(4), size=(6, 6))
    once = nms_thin(ComposedBoundary(compose_arrays(b, e)))
    assert nms_thin(once) == once


# --- pairs -------------------------------------------------------------------------

def test_no_boundary_no_pairs():
    assert len(extract_pairs(_c(_field(3, 3)))) == 0


def test_single_left_boundary_pair():
    o = _field(3, 3)
    _put(o, 1, 1, 0, 1.0)
    g = Grid2D(3, 3)
    assert extract_pairs(_c(o)).as_set() == {(g.index(1, 1), g.index(1, 0))}


def test_opposing_claims_keep_stronger():
    o = _field(1, 2)
    _put(o, 0, 0, 1, 0.6)  # pixel 0 claims to occlude its right neighbor
    _put(o, 0, 1, 0, 0.8)  # pixel 1 claims to occlude its left neighbor
    assert extract_pairs(_c(o)).as_set() == {(1, 0)}


def test_pairs_respect_threshold():
    o = _field(1, 2)
    o[0, 1] = (0.09, 0.0, 0.0, 0.0, 0.91)
    assert len(extract_pairs(_c(o))) == 0
    assert extract_pairs(_c(o), tau=0.05).as_set() == {(1, 0)}


# --- angles ------------------------------------------------------------------------

def test_angle_fixture():
    normal, _ = to_angle([0.5, 0.1, 0.4, 0.0, 0.0])
    assert abs(abs(normal) - math.atan(0.5 / 0.4)) <= 1e-12


def test_pure_left_and_horizontal_limit():
    normal, boundary = to_angle([1, 0, 0, 0, 0])
    assert normal == -math.pi / 2
    assert abs(boundary) == math.pi  # left rule: tangent points down the image
    assert abs(to_angle([0, 0.7, 0, 0, 0.3])[0]) == math.pi / 2


def test_left_rule_rotates_by_quarter_turn():
    for o in ([0.2, 0.0, 0.5, 0.0, 0.3], [0.0, 0.3, 0.0, 0.6, 0.1]):
        n, b = to_angle(o)
        d = (n - b) % (2 * math.pi)
        assert d == pytest.approx(math.pi / 2)
