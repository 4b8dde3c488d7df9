"""Mixed-integer QP over binary charge/discharge indicators.

Branch and bound with best-first node selection: each node tightens the
box of one binary variable and re-solves the continuous relaxation through
:func:`evadmm.qp.solve_qp`; relaxation objectives are valid lower bounds, so
a node is pruned once it cannot beat the incumbent by more than the gap
target. `enumerate_binaries` is the brute-force counterpart used to certify
the search on small instances.
"""

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .qp import QpProblem, QpStatus, solve_qp

__all__ = ["MiqpProblem", "MiqpSolution", "MiqpStatus", "solve_miqp", "enumerate_binaries"]

_INT_TOL = 1e-6
_DEFAULT_ENUM_CAP = 12


class MiqpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    GAP_LIMIT = "gap_limit"


@dataclass
class MiqpProblem:
    """A convex QP plus a set of variables restricted to {0, 1}.

    ``pairing`` lists (u_ch index, u_dis index, availability) triples whose
    mutual-exclusion rows are already present in the base constraints; the
    triples drive enumeration and branching order.
    """

    base: QpProblem
    binary_indices: tuple[int, ...] = ()
    pairing: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        self.binary_indices = tuple(int(i) for i in self.binary_indices)
        self.pairing = tuple((int(a), int(b), int(g)) for a, b, g in self.pairing)
        bset = set(self.binary_indices)
        for i in self.binary_indices:
            if not (self.base.lb[i] >= -1e-12 and self.base.ub[i] <= 1 + 1e-12):
                raise ValueError(f"binary variable {i} must have bounds within [0, 1]")
        for a, b, _ in self.pairing:
            if a not in bset or b not in bset:
                raise ValueError("pairing refers to non-binary indices")


@dataclass
class MiqpSolution:
    x: np.ndarray | None
    objective: float
    gap: float
    nodes_explored: int
    status: MiqpStatus


def _with_binary_bounds(base: QpProblem, fixes: dict[int, tuple[float, float]]) -> QpProblem:
    lb = base.lb.copy()
    ub = base.ub.copy()
    for i, (lo, hi) in fixes.items():
        lb[i], ub[i] = lo, hi
    return QpProblem(Q=base.Q, c=base.c, const0=base.const0,
                     A_eq=base.A_eq, b_eq=base.b_eq,
                     A_in=base.A_in, b_in=base.b_in, lb=lb, ub=ub)


def _integral(x, binaries, tol=_INT_TOL):
    vals = x[list(binaries)]
    return np.all(np.abs(vals - np.round(vals)) <= tol)


def _resolve_integral(p: MiqpProblem, x_relax, qp_tol):
    """Pin binaries at their rounded values and re-solve for an exact point."""
    fixes = {i: (round(float(x_relax[i])),) * 2 for i in p.binary_indices}
    sol = solve_qp(_with_binary_bounds(p.base, fixes), tol=qp_tol)
    return sol


def solve_miqp(p: MiqpProblem, miqp_gap: float = 1e-6, qp_tol: float = 1e-8,
               max_nodes: int = 200_000) -> MiqpSolution:
    """Best-first branch and bound.

    Branches on the most fractional binary (ties to the lowest index,
    zero branch explored first); returns an integral point whose objective
    is within ``miqp_gap`` (relative) of the global optimum on OPTIMAL.
    """
    if not p.binary_indices:
        sol = solve_qp(p.base, tol=qp_tol)
        if sol.status is QpStatus.INFEASIBLE:
            return MiqpSolution(None, np.inf, np.inf, 1, MiqpStatus.INFEASIBLE)
        ok = sol.status is QpStatus.OPTIMAL
        return MiqpSolution(sol.x, sol.objective, 0.0 if ok else np.inf, 1,
                            MiqpStatus.OPTIMAL if ok else MiqpStatus.GAP_LIMIT)

    counter = itertools.count()
    heap: list = []
    nodes = 0
    best_obj = np.inf
    best_x = None

    def push(fixes):
        nonlocal nodes, best_obj, best_x
        nodes += 1
        sol = solve_qp(_with_binary_bounds(p.base, fixes), tol=qp_tol)
        if sol.status is QpStatus.INFEASIBLE or sol.x is None:
            return
        if _integral(sol.x, p.binary_indices):
            exact = _resolve_integral(p, sol.x, qp_tol)
            nodes += 1
            if exact.x is not None and exact.objective < best_obj:
                best_obj, best_x = exact.objective, exact.x
            return
        heapq.heappush(heap, (sol.objective, next(counter), fixes, sol.x))

    push({})
    gap_for = lambda bound: max(0.0, (best_obj - bound) / max(1.0, abs(best_obj)))
    while heap:
        bound, _, fixes, x_relax = heapq.heappop(heap)
        if best_x is not None and gap_for(bound) <= miqp_gap:
            return MiqpSolution(best_x, best_obj, gap_for(bound), nodes, MiqpStatus.OPTIMAL)
        if nodes >= max_nodes:
            gap = gap_for(bound) if best_x is not None else np.inf
            return MiqpSolution(best_x, best_obj, gap, nodes, MiqpStatus.GAP_LIMIT)
        frac = {i: abs(x_relax[i] - round(x_relax[i])) for i in p.binary_indices
                if fixes.get(i, (0.0, 1.0))[0] != fixes.get(i, (0.0, 1.0))[1]}
        if not frac:
            continue
        branch_var = max(sorted(frac), key=lambda i: frac[i])
        for val in (0.0, 1.0):
            child = dict(fixes)
            child[branch_var] = (val, val)
            push(child)

    if best_x is None:
        return MiqpSolution(None, np.inf, np.inf, nodes, MiqpStatus.INFEASIBLE)
    return MiqpSolution(best_x, best_obj, 0.0, nodes, MiqpStatus.OPTIMAL)


def enumerate_binaries(p: MiqpProblem, cap: int = _DEFAULT_ENUM_CAP,
                       qp_tol: float = 1e-8) -> MiqpSolution:
    """Exact optimum by trying every admissible binary assignment.

    Each pairing contributes the three states idle / charge-only /
    discharge-only (availability permitting); binaries outside any pairing
    are enumerated over {0, 1}. Intended as a certification oracle for
    small instances, hence the hard cap on the pairing count.
    """
    paired = {i for a, b, _ in p.pairing for i in (a, b)}
    unpaired = [i for i in p.binary_indices if i not in paired]
    if len(p.pairing) > cap:
        raise ValueError(f"enumeration cap exceeded: {len(p.pairing)} pairs > {cap}")
    if 3 ** len(p.pairing) * 2 ** len(unpaired) > 3 ** cap:
        raise ValueError("enumeration cap exceeded")

    def pair_states(avail):
        if avail <= 0:
            return [(0.0, 0.0)]
        return [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]

    best_obj = np.inf
    best_x = None
    solved = 0
    state_sets = [pair_states(a) for _, _, a in p.pairing]
    free_sets = [[0.0, 1.0] for _ in unpaired]
    for combo in itertools.product(*state_sets, *free_sets):
        fixes = {}
        for (iu, idis, _), (vu, vdis) in zip(p.pairing, combo[:len(p.pairing)]):
            fixes[iu] = (vu, vu)
            fixes[idis] = (vdis, vdis)
        for i, v in zip(unpaired, combo[len(p.pairing):]):
            fixes[i] = (v, v)
        sol = solve_qp(_with_binary_bounds(p.base, fixes), tol=qp_tol)
        solved += 1
        if sol.status is QpStatus.INFEASIBLE or sol.x is None:
            continue
        if sol.objective < best_obj - 1e-12:
            best_obj, best_x = sol.objective, sol.x
    if best_x is None:
        return MiqpSolution(None, np.inf, np.inf, solved, MiqpStatus.INFEASIBLE)
    return MiqpSolution(best_x, best_obj, 0.0, solved, MiqpStatus.OPTIMAL)
