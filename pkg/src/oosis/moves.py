"""Move-making minimization of the occlusion-order energy.

A jump move lets any subset of pixels raise its label by exactly one. The
optimal jump is a binary problem; smoothness terms on neighbors whose labels
differ by exactly one are not submodular, so they are replaced by the constant
lam (an upper bound that is tight at y = 0). Occlusion pairs already violated
by one label get the constant mu * c_inf for the same reason. For comparison, a single
increasing-order alpha-expansion cycle is also provided.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import OcclusionLabeling
from .energy import EnergyProblem, _flat, activated_pairs, evaluate, occl_vec, unary_vec
from .maxflow import BinaryEnergy, NonSubmodularError, minimize_binary

# relative slack under which an energy increase is treated as round-off
ROUNDOFF = 1e-12


class IterationCapError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class SubmodularityError(AssertionError):
    pass


@dataclass
class MoveRecord:
    index: int
    kind: str
    label: int | None
    energy_before: float
    energy_after: float
    pixels_changed: int
    activated_pairs: int


@dataclass
class MoveTrace:
    records: list[MoveRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def monotone(self) -> bool:
        return all(r.energy_after <= r.energy_before for r in self.records)

    def to_json(self) -> dict:
        return {"moves": [asdict(r) for r in self.records]}

    @classmethod
    def from_json(cls, doc) -> "MoveTrace":
        return cls([MoveRecord(**r) for r in doc["moves"]])

    def dump(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)


def _pair_rows(problem: EnergyProblem) -> tuple[np.ndarray, np.ndarray]:
    """Row of each occlusion pair in problem.edges, and whether (p, q) is (j, i)."""
    pairs = problem.pair_array
    n = problem.n_pixels
    e = problem.edges
    ekey = e[:, 0] * n + e[:, 1]
    order = np.argsort(ekey)
    p, q = pairs[:, 0], pairs[:, 1]
    key = np.minimum(p, q) * n + np.maximum(p, q)
    rows = order[np.searchsorted(ekey[order], key)]
    return rows, p > q


def _assemble(problem: EnergyProblem, unary, smooth_tab, occ_tab) -> BinaryEnergy:
    """Merge smoothness and occlusion tables onto the shared 4-connected pairs."""
    tab = smooth_tab
    if len(problem.pair_array):
        rows, flip = _pair_rows(problem)
        occ_tab = occ_tab.copy()
        # (p, q) stored as (j, i): swap the mixed entries
        occ_tab[flip] = occ_tab[flip][:, [0, 2, 1, 3]]
        np.add.at(tab, rows, occ_tab)
    e = problem.edges
    pw = np.column_stack([e[:, 0], e[:, 1], tab])
    return BinaryEnergy(unary, pw)


def build_jump_energy(problem: EnergyProblem, x_c) -> BinaryEnergy:
    """Submodular upper bound of the jump-move energy around ``x_c``.

    y_p = 0 keeps x_p, y_p = 1 raises it by one.
    """
    x = _flat(problem, x_c)
    prm = problem.params
    sigma = problem.sigma
    unary = np.stack([unary_vec(sigma, x), unary_vec(sigma, x + 1)], axis=1)

    e = problem.edges
    xi, xj = x[e[:, 0]], x[e[:, 1]]
    smooth_tab = np.stack([xi != xj, xi != xj + 1, xi + 1 != xj, xi != xj], axis=1).astype(np.float64)
    smooth_tab[(xi + 1 == xj) | (xj + 1 == xi)] = 1.0
    smooth_tab *= prm.lam

    occ_tab = None
    if len(problem.pair_array):
        xp = x[problem.pair_array[:, 0]]
        xq = x[problem.pair_array[:, 1]]
        c = prm.c_inf
        occ_tab = prm.mu * np.stack(
            [occl_vec(c, xp, xq), occl_vec(c, xp, xq + 1), occl_vec(c, xp + 1, xq), occl_vec(c, xp + 1, xq + 1)],
            axis=1)
        # a violated pair one label apart is non-submodular in the same way; bound it by c_inf
        occ_tab[xp + 1 == xq] = prm.mu * c
    return _assemble(problem, unary, smooth_tab, occ_tab)


def build_expansion_energy(problem: EnergyProblem, x_c, alpha: int) -> BinaryEnergy:
    """Exact alpha-expansion energy: y_p = 1 switches p to ``alpha``.

    Raises SubmodularityError if any pairwise term is not submodular, which
    cannot happen within one increasing-order cycle started from all zeros.
    """
    x = _flat(problem, x_c)
    prm = problem.params
    sigma = problem.sigma
    a = np.full_like(x, alpha)
    unary = np.stack([unary_vec(sigma, x), unary_vec(sigma, a)], axis=1)

    e = problem.edges
    xi, xj = x[e[:, 0]], x[e[:, 1]]
    smooth_tab = prm.lam * np.stack(
        [xi != xj, xi != alpha, xj != alpha, np.zeros_like(xi, dtype=bool)], axis=1).astype(np.float64)

    occ_tab = None
    if len(problem.pair_array):
        xp = x[problem.pair_array[:, 0]]
        xq = x[problem.pair_array[:, 1]]
        c = prm.c_inf
        ap = np.full_like(xp, alpha)
        occ_tab = prm.mu * np.stack(
            [occl_vec(c, xp, xq), occl_vec(c, xp, ap), occl_vec(c, ap, xq), np.zeros(len(xp))], axis=1)
    try:
        return _assemble(problem, unary, smooth_tab, occ_tab)
    except NonSubmodularError as exc:
        raise SubmodularityError(f"expansion on label {alpha} is not submodular: {exc}") from exc


def _accept(problem, x_old, x_new, e_old):
    """Energy of the proposed labeling, or None when it must be rejected."""
    e_new = evaluate(problem, x_new)
    if e_new <= e_old:
        return e_new
    if e_new - e_old <= ROUNDOFF * max(1.0, abs(e_old)):
        return None
    raise AssertionError(f"move raised the energy from {e_old!r} to {e_new!r}")


def _jump(problem: EnergyProblem, x: np.ndarray, e_old: float):
    y, _ = minimize_binary(build_jump_energy(problem, x))
    if not y.any():
        return x, e_old, 0
    x_new = x + y.astype(np.int64)
    e_new = _accept(problem, x, x_new, e_old)
    if e_new is None:
        return x, e_old, 0
    return x_new, e_new, int(y.sum())


def jump_move(problem: EnergyProblem, x_c) -> tuple[OcclusionLabeling, bool]:
    x = _flat(problem, x_c)
    x_new, _, k = _jump(problem, x, evaluate(problem, x))
    return OcclusionLabeling(x_new.reshape(problem.grid.shape)), k > 0


def optimize_jump(problem: EnergyProblem, max_jumps: int | None = None) -> tuple[OcclusionLabeling, MoveTrace]:
    """Jump moves from the all-zero labeling until nothing changes.

    At most ``|O| + 2`` jumps are attempted unless ``max_jumps`` says
    otherwise; exceeding the cap raises IterationCapError carrying the trace.
    """
    cap = len(problem.pairs) + 2 if max_jumps is None else max_jumps
    x = np.zeros(problem.n_pixels, dtype=np.int64)
    energy = evaluate(problem, x)
    trace = MoveTrace()
    for k in range(cap):
        x_new, e_new, changed = _jump(problem, x, energy)
        trace.records.append(MoveRecord(
            index=k, kind="jump", label=None, energy_before=energy, energy_after=e_new,
            pixels_changed=changed, activated_pairs=activated_pairs(problem, x_new)))
        x, energy = x_new, e_new
        if not changed:
            return OcclusionLabeling(x.reshape(problem.grid.shape)), trace
    raise IterationCapError(f"labeling still changing after {cap} jumps", trace)


def expansion_cycle_increasing(problem: EnergyProblem, l_max: int) -> tuple[OcclusionLabeling, MoveTrace]:
    """One cycle of alpha-expansions on labels 1, 2, ..., l_max from all zeros."""
    if l_max < 1:
        raise ValueError("l_max must be at least 1")
    x = np.zeros(problem.n_pixels, dtype=np.int64)
    energy = evaluate(problem, x)
    trace = MoveTrace()
    for k, alpha in enumerate(range(1, l_max + 1)):
        y, _ = minimize_binary(build_expansion_energy(problem, x, alpha))
        switch = (y == 1) & (x != alpha)
        x_new, e_new, changed = x, energy, 0
        if switch.any():
            cand = np.where(switch, alpha, x)
            e_cand = _accept(problem, x, cand, energy)
            if e_cand is not None:
                x_new, e_new, changed = cand, e_cand, int(switch.sum())
        trace.records.append(MoveRecord(
            index=k, kind="expansion", label=alpha, energy_before=energy, energy_after=e_new,
            pixels_changed=changed, activated_pairs=activated_pairs(problem, x_new)))
        x, energy = x_new, e_new
    return OcclusionLabeling(x.reshape(problem.grid.shape)), trace
