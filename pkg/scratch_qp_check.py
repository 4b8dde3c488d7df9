"""Dev harness: randomized QP fuzz of solve_qp against cvxpy (CLARABEL)."""
import numpy as np
import cvxpy as cp
from evadmm.qp import QpProblem, QpStatus, solve_qp

rng = np.random.default_rng(0)


def random_qp(rng, n, semidefinite=False, with_eq=True, with_in=True, box=True):
    A = rng.normal(size=(n, n))
    Q = A.T @ A
    if semidefinite:
        k = rng.integers(0, n)  # rank deficiency
        B = rng.normal(size=(n, max(1, n - k)))
        Q = B @ B.T
        if rng.random() < 0.3:
            Q = np.zeros((n, n))  # LP case
    c = rng.normal(size=n)
    kw = {}
    if with_eq and rng.random() < 0.7:
        me = rng.integers(1, max(2, n // 2))
        kw["A_eq"] = rng.normal(size=(me, n))
        x0 = rng.normal(size=n)
        kw["b_eq"] = kw["A_eq"] @ x0
    if with_in and rng.random() < 0.8:
        mi = rng.integers(1, n + 2)
        kw["A_in"] = rng.normal(size=(mi, n))
        x0 = rng.normal(size=n)
        kw["b_in"] = kw["A_in"] @ x0 + rng.uniform(0, 1, size=mi)
    if box:
        kw["lb"] = -5 * np.ones(n)
        kw["ub"] = 5 * np.ones(n)
    return QpProblem(Q=Q, c=c, **kw)


def cvxpy_solve(p):
    x = cp.Variable(p.n)
    cons = []
    if p.A_eq is not None:
        cons.append(p.A_eq @ x == p.b_eq)
    if p.A_in is not None:
        cons.append(p.A_in @ x <= p.b_in)
    fin = np.isfinite(p.lb)
    if fin.any():
        cons.append(x[fin] >= p.lb[fin])
    fin = np.isfinite(p.ub)
    if fin.any():
        cons.append(x[fin] <= p.ub[fin])
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(p.Q)) + p.c @ x), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.SolverError:
        return "error", None
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        return "infeasible", None
    if prob.status in ("optimal", "optimal_inaccurate"):
        return "optimal", prob.value + p.const0
    return prob.status, None


bad = 0
for trial in range(300):
    n = int(rng.integers(1, 14))
    semidef = trial % 3 == 0
    p = random_qp(rng, n, semidefinite=semidef)
    mine = solve_qp(p)
    ref_status, ref_obj = cvxpy_solve(p)
    if ref_status == "error":
        continue
    if ref_status == "infeasible":
        if mine.status is not QpStatus.INFEASIBLE:
            # cvxpy may flag borderline cases; check if our point is actually feasible
            print(f"[{trial}] ref=infeasible mine={mine.status} kkt={mine.kkt_residual:.2e}")
            bad += 1
        continue
    if mine.status is QpStatus.INFEASIBLE:
        print(f"[{trial}] ref=optimal({ref_obj:.6f}) mine=INFEASIBLE n={n} semidef={semidef}")
        bad += 1
        continue
    err = abs(mine.objective - ref_obj) / max(1.0, abs(ref_obj))
    if err > 1e-6 or mine.kkt_residual > 1e-7:
        print(f"[{trial}] obj mine={mine.objective:.8f} ref={ref_obj:.8f} err={err:.2e} "
              f"kkt={mine.kkt_residual:.2e} status={mine.status} n={n} semidef={semidef}")
        bad += 1

print("done, bad =", bad)
