"""Multi-label occlusion-order CRF energy.

E(x) = sum_p u_p(x_p) + lam * sum_N [x_p != x_q] + mu * sum_O o(x_p, x_q)

with u_p(0) = 1 - sigma_p, u_p(k > 0) = sigma_p and
o(a, b) = c_inf * [a < b] - [a > b] for an ordered pair (p, q) where p occludes q.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import OcclusionLabeling, OcclusionPairSet, SemanticField

DEFAULT_LAMBDA = 20.0
DEFAULT_MU = 100.0


@dataclass(frozen=True)
class EnergyParams:
    lam: float = DEFAULT_LAMBDA
    mu: float = DEFAULT_MU
    c_inf: float | None = None  # None: derive a safe value per problem

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError("lambda and mu must be positive")
        if self.c_inf is not None and not self.c_inf > 0:
            raise ValueError("c_inf must be positive")


def prohibitive_cost(n_pixels: int, n_edges: int, n_pairs: int, lam: float, mu: float) -> float:
    """Smallest safe c_inf (plus one) for a problem of the given size.

    mu * c_inf must beat every unary, every smoothness penalty and every
    occlusion reward combined, so that a single violated pair is never worth it.
    """
    bound = n_pixels + lam * n_edges + mu * n_pairs
    return (1.0 + bound) / min(1.0, mu)


class EnergyProblem:
    """Semantic field, occlusion pairs and weights for one image."""

    def __init__(self, semantic: SemanticField, pairs: OcclusionPairSet, params: EnergyParams | None = None):
        params = params or EnergyParams()
        if pairs.grid != semantic.grid:
            raise ValueError("occlusion pairs and semantic field live on different grids")
        grid = semantic.grid
        self.semantic = semantic
        self.pairs = pairs
        self.grid = grid
        self.sigma = semantic.background.astype(np.float64).ravel()
        self.edges = grid.edges()
        self.pair_array = pairs.pairs
        if params.c_inf is None:
            params = replace(params, c_inf=prohibitive_cost(
                grid.size, len(self.edges), len(pairs), params.lam, params.mu))
        else:
            need = (grid.size + params.lam * len(self.edges) + params.mu * len(pairs)) / min(1.0, params.mu)
            if not params.c_inf > need:
                raise ValueError(f"c_inf={params.c_inf} is not prohibitive for this problem (need > {need:.6g})")
        self.params = params

    @classmethod
    def from_background(cls, sigma, pairs=(), params: EnergyParams | None = None) -> "EnergyProblem":
        """Convenience constructor from a background-probability map."""
        semantic = SemanticField.from_background(sigma)
        if not isinstance(pairs, OcclusionPairSet):
            pairs = OcclusionPairSet(semantic.grid, pairs)
        return cls(semantic, pairs, params)

    @property
    def n_pixels(self) -> int:
        return self.grid.size


def unary(problem: EnergyProblem, p: int, label: int) -> float:
    s = float(problem.sigma[p])
    return (1.0 - s) if label == 0 else s


def smooth(xp: int, xq: int) -> float:
    return 0.0 if xp == xq else 1.0


def occl(params: EnergyParams, xp: int, xq: int) -> float:
    if params.c_inf is None:
        raise ValueError("occlusion term needs a resolved c_inf")
    if xp < xq:
        return params.c_inf
    if xp > xq:
        return -1.0
    return 0.0


def unary_vec(sigma: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.where(labels == 0, 1.0 - sigma, sigma)


def occl_vec(c_inf: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a < b, c_inf, np.where(a > b, -1.0, 0.0))


def energy_terms(problem: EnergyProblem, x) -> tuple[float, int, int, int]:
    """(unary sum, #discontinuous N-pairs, #violated O-pairs, #activated O-pairs)."""
    labels = _flat(problem, x)
    u = float(np.sum(unary_vec(problem.sigma, labels)))
    e = problem.edges
    v = int(np.count_nonzero(labels[e[:, 0]] != labels[e[:, 1]]))
    if len(problem.pair_array):
        lp = labels[problem.pair_array[:, 0]]
        lq = labels[problem.pair_array[:, 1]]
        viol = int(np.count_nonzero(lp < lq))
        act = int(np.count_nonzero(lp > lq))
    else:
        viol = act = 0
    return u, v, viol, act


def evaluate(problem: EnergyProblem, x) -> float:
    u, v, viol, act = energy_terms(problem, x)
    prm = problem.params
    return u + prm.lam * v + prm.mu * (prm.c_inf * viol - act)


def activated_pairs(problem: EnergyProblem, x) -> int:
    return energy_terms(problem, x)[3]


def _flat(problem: EnergyProblem, x) -> np.ndarray:
    if isinstance(x, OcclusionLabeling):
        if x.grid != problem.grid:
            raise ValueError("labeling grid does not match the problem")
        return x.flat
    labels = np.asarray(x, dtype=np.int64).ravel()
    if labels.shape[0] != problem.n_pixels:
        raise ValueError("labeling size does not match the problem")
    return labels
