import heapq, itertools
import numpy as np
from evadmm.qp import QpStatus, solve_qp
from evadmm.miqp import MiqpStatus, _with_binary_bounds, _integral, _resolve_integral
from scratch_miqp_check import random_pair_miqp

rng = np.random.default_rng(11)
p = None
for trial in range(60):
    n_pairs = int(rng.integers(1, 5))
    q = random_pair_miqp(rng, n_pairs)
    if trial == 15:
        p = q
        break

counter = itertools.count()
heap = []
nodes = 0
best_obj = np.inf
best_x = None

def push(fixes):
    global nodes, best_obj, best_x
    nodes += 1
    sol = solve_qp(_with_binary_bounds(p.base, fixes), tol=1e-8)
    tag = {i: v[0] for i, v in fixes.items()}
    if sol.status is QpStatus.INFEASIBLE or sol.x is None:
        print(f"  node {tag}: INFEASIBLE")
        return
    integ = _integral(sol.x, p.binary_indices)
    print(f"  node {tag}: obj={sol.objective:.6f} status={sol.status.value} integral={integ} "
          f"bin={np.round(sol.x[list(p.binary_indices)], 4)}")
    if integ:
        exact = _resolve_integral(p, sol.x, 1e-8)
        print(f"    fathom: exact={exact.objective:.6f} {exact.status.value}")
        if exact.x is not None and exact.objective < best_obj:
            best_obj, best_x = exact.objective, exact.x
        return
    heapq.heappush(heap, (sol.objective, next(counter), fixes, sol.x))

push({})
gap_for = lambda bound: max(0.0, (best_obj - bound) / max(1.0, abs(best_obj)))
while heap:
    bound, _, fixes, x_relax = heapq.heappop(heap)
    print(f"pop bound={bound:.6f} fixes={{ {', '.join(f'{i}:{v[0]:g}' for i, v in fixes.items())} }} "
          f"best={best_obj:.6f} gap={gap_for(bound):.2e}")
    if best_x is not None and gap_for(bound) <= 1e-6:
        print("RETURN OPTIMAL", best_obj)
        break
    frac = {i: abs(x_relax[i] - round(x_relax[i])) for i in p.binary_indices
            if fixes.get(i, (0.0, 1.0))[0] != fixes.get(i, (0.0, 1.0))[1]}
    if not frac:
        print("  no frac -> continue (DROPPED SUBTREE?)", np.round(x_relax[list(p.binary_indices)], 5))
        continue
    branch_var = max(sorted(frac), key=lambda i: frac[i])
    print(f"  branch on {branch_var} (frac={frac[branch_var]:.4f})")
    for val in (0.0, 1.0):
        child = dict(fixes)
        child[branch_var] = (val, val)
        push(child)
