"""Dev harness: solve_miqp vs enumerate_binaries on random pair           instances."""
import time
import numpy as np
from evadmm.qp import QpProblem
from evadmm.miqp import MiqpProblem, MiqpStatus, solve_miqp, enumerate_binaries

rng = np.random.default_rng(11)


def random_pair_miqp(rng, n_pairs, strictly_convex=True):
    """EV-like structure: per pair (p_ch, p_dis, u_ch, u_dis)."""
    T = n_pairs
    n = 4 * T
    ip_ch = np.arange(T)
    ip_dis = T + np.arange(T)
    iu_ch = 2 * T + np.arange(T)
    iu_dis = 3 * T + np.arange(T)
    rho = 10 ** rng.uniform(-2, 0)
    w = rng.normal(0, 4, size=T)
    Q = np.zeros((n, n))
    c = np.zeros(n)
    for t in range(T):
        Q[ip_ch[t], ip_ch[t]] = rho
        Q[ip_dis[t], ip_dis[t]] = rho
        Q[ip_ch[t], ip_dis[t]] = -rho
        Q[ip_dis[t], ip_ch[t]] = -rho
        c[ip_ch[t]] = -rho * w[t] + rng.normal(0, 0.1)
        c[ip_dis[t]] = rho * w[t] + rng.normal(0, 0.1)
    cap = 8.0
    avail = (rng.random(T) < 0.85).astype(int)
    rows, rhs = [], []
    for t in range(T):
        r = np.zeros(n); r[ip_ch[t]] = 1; r[iu_ch[t]] = -cap
        rows.append(r); rhs.append(0.0)
        r = np.zeros(n); r[ip_dis[t]] = 1; r[iu_dis[t]] = -cap
        rows.append(r); rhs.append(0.0)
        r = np.zeros(n); r[iu_ch[t]] = 1; r[iu_dis[t]] = 1
        rows.append(r); rhs.append(float(avail[t]))
    # an energy-style coupling row to make pairs interact
    r = np.zeros(n); r[ip_ch] = 0.9; r[ip_dis] = -1 / 0.88
    rows.append(r); rhs.append(rng.uniform(2, 5))
    lb = np.zeros(n)
    ub = np.concatenate([np.full(T, cap), np.full(T, cap), np.ones(T), np.ones(T)])
    base = QpProblem(Q=Q, c=c, A_in=np.asarray(rows), b_in=np.asarray(rhs), lb=lb, ub=ub)
    pairing = tuple((int(iu_ch[t]), int(iu_dis[t]), int(avail[t])) for t in range(T))
    binaries = tuple(iu_ch) + tuple(iu_dis)
    return MiqpProblem(base=base, binary_indices=binaries, pairing=pairing)


bad = 0
t0 = time.perf_counter()
for trial in range(60):
    n_pairs = int(rng.integers(1, 5))
    p = random_pair_miqp(rng, n_pairs)
    bb = solve_miqp(p)
    en = enumerate_binaries(p)
    if bb.status != en.status:
        print(f"[{trial}] status bb={bb.status} en={en.status}")
        bad += 1
        continue
    if bb.status is MiqpStatus.OPTIMAL:
        if abs(bb.objective - en.objective) > 1e-6:
            print(f"[{trial}] obj bb={bb.objective:.9f} en={en.objective:.9f} pairs={n_pairs}")
            bad += 1
        ub = bb.x[list(p.binary_indices)]
        if np.max(np.abs(ub - np.round(ub))) > 0:
            print(f"[{trial}] binaries not exactly integral: {ub}")
            bad += 1
print(f"miqp fuzz bad={bad}  elapsed={time.perf_counter()-t0:.1f}s")
