"""Dev harness round 2: degenerate rows, fixed vars, EV-shaped QPs, timing."""
import time
import numpy as np
import cvxpy as cp
from evadmm.qp import QpProblem, QpStatus, solve_qp
from scratch_qp_check import cvxpy_solve, random_qp

rng = np.random.default_rng(7)

bad = 0
for trial in range(200):
    n = int(rng.integers(2, 30))
    p = random_qp(rng, n, semidefinite=trial % 2 == 0)
    # inject degeneracy: duplicate inequality rows, fixed variables
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
    mine = solve_qp(p)
    ref_status, ref_obj = cvxpy_solve(p)
    if ref_status == "error":
        continue
    if ref_status == "infeasible":
        if mine.status is not QpStatus.INFEASIBLE:
            print(f"[{trial}] ref=infeasible mine={mine.status} kkt={mine.kkt_residual:.2e}")
            bad += 1
        continue
    if mine.status is QpStatus.INFEASIBLE or mine.x is None:
        print(f"[{trial}] ref=optimal({ref_obj}) mine={mine.status}")
        bad += 1
        continue
    err = abs(mine.objective - ref_obj) / max(1.0, abs(ref_obj))
    if err > 1e-6 or mine.kkt_residual > 1e-7:
        print(f"[{trial}] err={err:.2e} kkt={mine.kkt_residual:.2e} status={mine.status} n={n}")
        bad += 1
print("degenerate round, bad =", bad)

# EV-shaped: box + cumulative-sum corridor + terminal equality, strictly convex
def ev_shaped(rng, T, rho=1e-3):
    w = rng.normal(0, 5, size=T)
    Q = rho * np.eye(T)
    c = -rho * w
    eta, m = 0.9, 4
    A_eq = np.full((1, T), eta / m)
    b_eq = np.array([rng.uniform(0.3, 0.9) * 8 * eta / m * T])
    tri = np.tril(np.ones((T, T))) * eta / m
    A_in = np.vstack([tri, -tri])
    b_in = np.concatenate([np.full(T, 47.5), np.full(T, 0.0)])
    return QpProblem(Q=Q, c=c, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                     lb=np.zeros(T), ub=np.full(T, 8.0))

bad2 = 0
times = []
for trial in range(60):
    T = int(rng.integers(8, 97))
    p = ev_shaped(rng, T)
    t0 = time.perf_counter()
    mine = solve_qp(p)
    times.append(time.perf_counter() - t0)
    ref_status, ref_obj = cvxpy_solve(p)
    if ref_status != "optimal":
        continue
    err = abs(mine.objective - ref_obj) / max(1.0, abs(ref_obj))
    if err > 1e-6 or mine.kkt_residual > 1e-7:
        print(f"[ev {trial}] T={T} err={err:.2e} kkt={mine.kkt_residual:.2e} {mine.status}")
        bad2 += 1
print(f"ev-shaped bad={bad2}, time mean={np.mean(times)*1e3:.2f}ms max={np.max(times)*1e3:.2f}ms")
