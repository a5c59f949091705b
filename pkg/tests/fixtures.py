"""Hand-built scenes shared by several test modules."""
import numpy as np

from oosis.core import Grid2D
from oosis.instances import Instance, InstanceSet, OcclusionGraph

GRID = Grid2D(10, 30)


def _block(r0, c0, h=4, w=4):
    m = np.zeros(GRID.shape, dtype=bool)
    m[r0:r0 + h, c0:c0 + w] = True
    return np.flatnonzero(m.ravel())


def toy_oair():
    """Five ground-truth and six predicted instances with the toy graphs.

    Matches: 1-A, 2-B, 3-D, 4-E; ground truth 5 and predictions C, F stay
    unmatched. GT edges 1->2, 2->3, 4->3, 4->1, 5->4. Predicted edges
    A->B, B->C, C->D, E->D, F->E. Four GT edges are recovered (5->4 is not);
    of those, 4->1 has no predicted path from E to A, so three are correct,
    one of them (2->3) through the length-2 path B->C->D.
    """
    gt = InstanceSet(GRID, [Instance(k, _block(0, 6 * (k - 1)), 1, 1) for k in range(1, 6)])
    A, B, C, D, E, F = range(11, 17)
    pred = InstanceSet(GRID, [
        Instance(A, _block(0, 0), 1, 1, 0.9),
        Instance(B, _block(0, 6), 1, 1, 0.8),
        Instance(C, _block(6, 0), 1, 1, 0.7),
        Instance(D, _block(0, 12), 1, 1, 0.6),
        Instance(E, _block(0, 18), 1, 1, 0.5),
        Instance(F, _block(6, 10), 1, 1, 0.4),
    ])
    gt_graph = OcclusionGraph(tuple(range(1, 6)), frozenset({(1, 2), (2, 3), (4, 3), (4, 1), (5, 4)}))
    pred_graph = OcclusionGraph((A, B, C, D, E, F), frozenset({(A, B), (B, C), (C, D), (E, D), (F, E)}))
    return pred, pred_graph, gt, gt_graph
