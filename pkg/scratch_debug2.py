import numpy as np
from evadmm.qp import QpStatus, solve_qp
from evadmm.miqp import MiqpStatus, solve_miqp, enumerate_binaries
from scratch_miqp_check import random_pair_miqp

rng = np.random.default_rng(11)
for trial in range(60):
    n_pairs = int(rng.integers(1, 5))
    p = random_pair_miqp(rng, n_pairs)
    if trial != 15:
        continue
    bb = solve_miqp(p)
    en = enumerate_binaries(p)
    print("bb", bb.status, bb.objective, "nodes", bb.nodes_explored)
    print("en", en.status, en.objective, "solved", en.nodes_explored)
    print("en binaries:", en.x[list(p.binary_indices)])
    print("bb binaries:", bb.x[list(p.binary_indices)])
    # check root relaxation
    root = solve_qp(p.base)
    print("root:", root.status, root.objective, "kkt", root.kkt_residual)
    print("root binaries:", np.round(root.x[list(p.binary_indices)], 6))
    # what does the en-optimal assignment give as a bound path?
    # fix binaries at en values, solve:
    lb = p.base.lb.copy(); ub = p.base.ub.copy()
    for i in p.binary_indices:
        lb[i] = ub[i] = round(float(en.x[i]))
    from evadmm.qp import QpProblem
    q2 = QpProblem(Q=p.base.Q, c=p.base.c, const0=p.base.const0, A_eq=p.base.A_eq,
                   b_eq=p.base.b_eq, A_in=p.base.A_in, b_in=p.base.b_in, lb=lb, ub=ub)
    s2 = solve_qp(q2)
    print("fixed-at-en:", s2.status, s2.objective, "kkt", s2.kkt_residual)
