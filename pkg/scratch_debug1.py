import numpy as np
from evadmm.qp import QpProblem, QpStatus, solve_qp
from scratch_qp_check import cvxpy_solve, random_qp

rng = np.random.default_rng(7)

for trial in range(200):
    n = int(rng.integers(2, 30))
    p = random_qp(rng, n, semidefinite=trial % 2 == 0)
    if p.A_in is not None and rng.random() < 0.5:
        p = QpProblem(Q=p.Q, c=p.c, A_eq=p.A_eq, b_eq=p.b_eq,
                      A_in=np.vstack([p.A_in, p.A_in[:1]]),
                      b_in=np.concatenate([p.b_in, p.b_in[:1]]),
                      lb=p.lb, ub=p.ub)
    if rng.random() < 0.5:
        j = int(rng.integers(0, n))
        lb, ub = p.lb.copy(), p.ub.copy()
        lb[j] = ub[j] = rng.uniform(-1, 1)
        p = QpProblem(Q=p.Q, c=p.c, A_eq=p.A_eq, b_eq=p.b_eq, A_in=p.A_in, b_in=p.b_in,
                      lb=lb, ub=ub)
    if trial != 112:
        continue
    np.save('/tmp/dbg_Q.npy', p.Q); np.save('/tmp/dbg_c.npy', p.c)
    print("n=", p.n, "rank Q=", np.linalg.matrix_rank(p.Q))
    print("eigs Q:", np.round(np.linalg.eigvalsh(p.Q), 8))
    print("A_eq:", None if p.A_eq is None else p.A_eq.shape,
          "A_in:", None if p.A_in is None else p.A_in.shape)
    mine = solve_qp(p)
    print("mine:", mine.status, mine.objective, "kkt", mine.kkt_residual, "iters", mine.iterations)
    print("ref:", cvxpy_solve(p))
    # semidefinite path diagnostics
    qscale = np.abs(p.Q).max()
    cscale = np.abs(p.c).max()
    print("qscale", qscale, "cscale", cscale)
