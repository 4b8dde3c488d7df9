import numpy as np
import evadmm.qp as qp
from evadmm.miqp import _with_binary_bounds
from scratch_miqp_check import random_pair_miqp

rng = np.random.default_rng(11)
p = None
for trial in range(60):
    n_pairs = int(rng.integers(1, 5))
    q = random_pair_miqp(rng, n_pairs)
    if trial == 15:
        p = q
        break
node = _with_binary_bounds(p.base, {14: (1.0, 1.0), 11: (1.0, 1.0), 13: (0.0, 0.0)})

orig_add = qp._DualActiveSet._add_constraint

def traced_add(self, pidx, sgn):
    try:
        return orig_add(self, pidx, sgn)
    except qp._Infeasible:
        print("=== _Infeasible raised while adding row", pidx, "sign", sgn)
        print("row normal:", np.round(self.G[pidx], 4), "h:", self.h[pidx])
        print("x:", np.round(self.x, 6))
        print("violation:", float(self.G[pidx] @ self.x) - self.h[pidx])
        print("active W:", self.W)
        for j, w in enumerate(self.W):
            print(f"  W[{j}] row{w} sign={self.sign[j]} u={self.u[j]:.3e} "
                  f"normal={np.round(self.G[w] * self.sign[j], 3)} h={self.h[w] * self.sign[j]:.3f} eq={self.is_eq[w]}")
        n_p = sgn * self.G[pidx]
        from scipy.linalg import cho_solve
        qn = cho_solve(self.L, n_p)
        z, r = self._directions(qn, n_p)
        print("denom:", float(n_p @ z), "denom0:", float(n_p @ qn))
        print("r:", np.round(r, 6))
        raise

qp._DualActiveSet._add_constraint = traced_add
sol = qp.solve_qp(node)
print(sol.status)
