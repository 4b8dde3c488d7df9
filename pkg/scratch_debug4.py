import numpy as np
from evadmm.qp import QpStatus, solve_qp, _presolve, _stack_rows, _equality_rank_test
from evadmm.miqp import _with_binary_bounds
from scratch_miqp_check import random_pair_miqp
from scratch_qp_check import cvxpy_solve

rng = np.random.default_rng(11)
p = None
for trial in range(60):
    n_pairs = int(rng.integers(1, 5))
    q = random_pair_miqp(rng, n_pairs)
    if trial == 15:
        p = q
        break

node = _with_binary_bounds(p.base, {14: (1.0, 1.0), 11: (1.0, 1.0), 13: (0.0, 0.0)})
mine = solve_qp(node)
print("mine:", mine.status, mine.objective)
print("ref:", cvxpy_solve(node))

red = _presolve(node)
print("free vars:", red["idx_free"])
print("Q diag:", np.diag(red["Q"]))
print("lb:", red["lb"])
print("ub:", red["ub"])
print("A_in rows:")
G, h, is_eq, origin = _stack_rows(red)
for k in range(G.shape[0]):
    print(f"  {origin[k]}: {np.round(G[k], 4)} <= {h[k]:.4f} eq={is_eq[k]}")
