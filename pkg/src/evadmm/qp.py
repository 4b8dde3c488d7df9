"""Dense convex quadratic programming.

Solves  min 0.5 x'Qx + c'x + const0  subject to  A_eq x = b_eq,
A_in x <= b_in and lb <= x <= ub, for symmetric positive semidefinite Q.

The core is a dual active-set method (Goldfarb-Idnani scheme): starting from
the unconstrained minimizer, the most violated constraint is driven to
equality by a combined primal/dual step, dropping blocking constraints as
their multipliers hit zero. Strict convexity is required by the core, so
semidefinite objectives are handled by a short proximal-point loop around it
(each inner problem is regularized by sigma/2 ||x - x_ref||^2, and the
regularization vanishes at the fixed point). No feasible starting point is
needed, and infeasibility surfaces as an unbounded dual ray.

Solutions carry multipliers and a KKT residual so callers can check the
certificate instead of trusting the status flag.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

__all__ = ["QpProblem", "QpSolution", "QpStatus", "solve_qp"]

_DEFAULT_TOL = 1e-8


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"


@dataclass
class QpProblem:
    """Canonical dense convex QP data.

    Any of the constraint blocks may be ``None``. Bounds default to
    (-inf, +inf) per variable.
    """

    Q: np.ndarray
    c: np.ndarray
    const0: float = 0.0
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if self.Q.shape != (n, n):
            raise ValueError(f"Q shape {self.Q.shape} does not match c length {n}")
        qmax = max(1.0, np.abs(self.Q).max() if n else 1.0)
        if n and np.abs(self.Q - self.Q.T).max() > 1e-8 * qmax:
            raise ValueError("Q is not symmetric")
        for aname, bname in (("A_eq", "b_eq"), ("A_in", "b_in")):
            a, b = getattr(self, aname), getattr(self, bname)
            if (a is None) != (b is None):
                raise ValueError(f"{aname} and {bname} must be given together")
            if a is not None:
                a = np.atleast_2d(np.asarray(a, dtype=float))
                b = np.asarray(b, dtype=float).ravel()
                if a.shape != (b.size, n):
                    raise ValueError(f"{aname} shape {a.shape} inconsistent with n={n}")
                setattr(self, aname, a)
                setattr(self, bname, b)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound length mismatch")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self.Q @ x) + float(self.c @ x) + self.const0


@dataclass
class QpSolution:
    x: np.ndarray | None
    objective: float
    kkt_residual: float
    status: QpStatus
    eq_dual: np.ndarray | None = None
    ineq_dual: np.ndarray | None = None
    lb_dual: np.ndarray | None = None
    ub_dual: np.ndarray | None = None
    iterations: int = 0


class _Infeasible(Exception):
    pass


class _IterLimit(Exception):
    def __init__(self, x, iters):
        self.x = x
        self.iters = iters


def _psd_check(Q: np.ndarray):
    """Reject matrices that are not PSD within a small tolerance."""
    n = Q.shape[0]
    if n == 0:
        return
    shift = 1e-9 * max(1.0, np.abs(Q).max())
    try:
        np.linalg.cholesky(Q + shift * np.eye(n))
    except np.linalg.LinAlgError:
        raise ValueError("Q is not positive semidefinite") from None


class _DualActiveSet:
    """Goldfarb-Idnani iteration for a strictly convex QP.

    Constraints are rows ``n_j' x <= h_j`` (equalities handled as
    non-droppable rows whose violated side picks the sign).
    """

    def __init__(self, Q, c, G, h, is_eq, max_iter, tol):
        self.L = cho_factor(Q, lower=True)
        self.c = c
        self.G = G
        self.h = h
        self.is_eq = is_eq
        self.max_iter = max_iter
        self.n = c.size
        self.x = -cho_solve(self.L, c) if self.n else np.zeros(0)
        self.W: list[int] = []          # active rows
        self.sign: list[float] = []     # +1 for "<=" side, -1 for flipped equality
        self.u: list[float] = []        # multipliers on the signed rows
        self.cols: list[np.ndarray] = []  # cached Q^{-1} * signed normal
        self.iters = 0
        self.noise_skip: set[int] = set()
        hscale = max(1.0, np.abs(h).max(initial=0.0) if h.size else 1.0)
        self.feas_tol = max(1e-13, min(1e-9 * hscale, 0.5 * tol))
        # violations below this on linearly dependent rows are roundoff, not
        # a Farkas certificate; the final KKT residual reports them anyway
        self.infeas_tol = max(1e3 * self.feas_tol, 1e-7)

    def _directions(self, qn, n_p):
        """Primal step z and dual rate r for candidate normal n_p (qn = Q^{-1} n_p)."""
        q = len(self.W)
        if q == 0:
            return qn, np.zeros(0)
        N = (self.G[self.W] * np.asarray(self.sign)[:, None]).T
        B = np.column_stack(self.cols)
        M = N.T @ B
        M = 0.5 * (M + M.T)
        rhs = N.T @ qn
        try:
            r = cho_solve(cho_factor(M, lower=True), rhs)
        except (LinAlgError, np.linalg.LinAlgError):
            r = np.linalg.lstsq(M, rhs, rcond=None)[0]
        z = qn - B @ r
        return z, r

    def _drop(self, j):
        del self.W[j], self.sign[j], self.u[j], self.cols[j]

    def _add_constraint(self, p, sgn):
        """Drive signed row p to equality; raises on infeasibility/iteration cap."""
        n_p = sgn * self.G[p]
        h_p = sgn * self.h[p]
        u_acc = 0.0
        while True:
            self.iters += 1
            if self.iters > self.max_iter:
                raise _IterLimit(self.x, self.iters)
            s_p = float(n_p @ self.x) - h_p
            if s_p <= self.feas_tol:
                # became satisfied through drops; register only if exactly tight
                if u_acc > 0.0 and s_p >= -self.feas_tol:
                    self._register(p, sgn, u_acc)
                return
            qn = cho_solve(self.L, n_p)
            z, r = self._directions(qn, n_p)
            denom = float(n_p @ z)
            denom0 = max(float(n_p @ qn), 1e-300)
            dependent = denom <= 1e-10 * denom0
            # dual blocking step over droppable active rows
            t_dual, j_block = np.inf, -1
            for j in range(len(self.W)):
                if self.is_eq[self.W[j]]:
                    continue
                if r[j] > 1e-12:
                    t = self.u[j] / r[j]
                    if t < t_dual - 1e-15:
                        t_dual, j_block = t, j
            t_full = np.inf if dependent else s_p / denom
            if not np.isfinite(t_full) and not np.isfinite(t_dual):
                if s_p <= self.infeas_tol:
                    self.noise_skip.add(p)
                    return
                raise _Infeasible
            if t_full <= t_dual:
                t = t_full
                if not dependent:
                    self.x = self.x - t * z
                for j in range(len(self.W)):
                    self.u[j] -= t * r[j]
                self._register(p, sgn, u_acc + t)
                return
            t = t_dual
            if not dependent:
                self.x = self.x - t * z
            for j in range(len(self.W)):
                self.u[j] -= t * r[j]
            u_acc += t
            self._drop(j_block)

    def _register(self, p, sgn, u_val):
        self.W.append(p)
        self.sign.append(sgn)
        self.u.append(u_val)
        self.cols.append(cho_solve(self.L, sgn * self.G[p]))

    def solve(self):
        # equalities first; their violated side fixes the working sign
        for p in np.flatnonzero(self.is_eq):
            s = float(self.G[p] @ self.x) - self.h[p]
            if abs(s) <= self.feas_tol and self._in_span(p):
                continue
            self._add_constraint(int(p), 1.0 if s >= 0 else -1.0)
        while True:
            if self.G.shape[0] == 0:
                break
            s = self.G @ self.x - self.h
            s[self.is_eq] = np.abs(s[self.is_eq])
            for p in self.W:                 # active rows are tight by construction
                s[p] = 0.0
            for p in self.noise_skip:
                s[p] = 0.0
            p = int(np.argmax(s))
            if s[p] <= self.feas_tol:
                break
            sgn = 1.0
            if self.is_eq[p] and float(self.G[p] @ self.x) - self.h[p] < 0:
                sgn = -1.0
            self._add_constraint(p, sgn)
        self._polish()
        return self.x, self.W, self.sign, self.u, self.iters

    def _in_span(self, p):
        qn = cho_solve(self.L, self.G[p])
        z, _ = self._directions(qn, self.G[p])
        return float(self.G[p] @ z) <= 1e-10 * max(float(self.G[p] @ qn), 1e-300)

    def _polish(self):
        """Re-solve the KKT system on the final working set to squeeze out drift."""
        q = len(self.W)
        if q == 0:
            return
        N = (self.G[self.W] * np.asarray(self.sign)[:, None]).T
        d = np.asarray(self.sign) * self.h[self.W]
        K = np.zeros((self.n + q, self.n + q))
        K[:self.n, :self.n] = self._Q_dense()
        K[:self.n, self.n:] = N
        K[self.n:, :self.n] = N.T
        rhs = np.concatenate([-self.c, d])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return
        x_new, u_new = sol[:self.n], sol[self.n:]
        droppable = ~self.is_eq[self.W]
        if np.any(u_new[droppable] < -1e-9):
            return
        viol_new = self.G @ x_new - self.h
        viol_new[self.is_eq] = np.abs(viol_new[self.is_eq])
        if viol_new.max(initial=0.0) <= self.feas_tol:
            self.x = x_new
            self.u = [max(v, 0.0) if drop else v
                      for v, drop in zip(u_new.tolist(), droppable.tolist())]

    def _Q_dense(self):
        L = np.tril(self.L[0])
        return L @ L.T


def _presolve(p: QpProblem):
    """Split off variables fixed by equal bounds; drop empty constraint rows."""
    n = p.n
    lb, ub = p.lb, p.ub
    if np.any(lb > ub + 1e-12):
        raise _Infeasible
    fixed = (ub - lb) <= 1e-12
    free = ~fixed
    xfix = np.where(fixed, 0.5 * (lb + ub), 0.0)
    idx_free = np.flatnonzero(free)
    nf = idx_free.size
    Qff = p.Q[np.ix_(idx_free, idx_free)]
    c_r = p.c[idx_free] + p.Q[np.ix_(idx_free, np.flatnonzero(fixed))] @ xfix[fixed]
    feas_tol = 1e-9

    def reduce_rows(A, b, is_ineq):
        if A is None:
            return None, None, np.zeros(0, dtype=int)
        b_r = b - A[:, fixed] @ xfix[fixed]
        A_r = A[:, idx_free]
        support = np.abs(A_r).max(axis=1, initial=0.0) > 1e-14 if nf else np.zeros(len(b_r), dtype=bool)
        empty = ~support
        scale = 1.0 + np.abs(b).max(initial=0.0)
        if is_ineq:
            if np.any(b_r[empty] < -feas_tol * scale):
                raise _Infeasible
        else:
            if np.any(np.abs(b_r[empty]) > feas_tol * scale):
                raise _Infeasible
        keep = np.flatnonzero(support)
        return A_r[keep], b_r[keep], keep

    A_eq_r, b_eq_r, eq_keep = reduce_rows(p.A_eq, p.b_eq, is_ineq=False)
    A_in_r, b_in_r, in_keep = reduce_rows(p.A_in, p.b_in, is_ineq=True)
    return {
        "idx_free": idx_free, "xfix": xfix, "fixed": fixed,
        "Q": Qff, "c": c_r,
        "A_eq": A_eq_r, "b_eq": b_eq_r, "eq_keep": eq_keep,
        "A_in": A_in_r, "b_in": b_in_r, "in_keep": in_keep,
        "lb": lb[idx_free], "ub": ub[idx_free],
    }


def _stack_rows(red):
    """Assemble [A_in; ub; -lb; A_eq] into one <= system with an origin map."""
    nf = red["idx_free"].size
    rows, rhs, origin = [], [], []
    if red["A_in"] is not None:
        for k in range(red["A_in"].shape[0]):
            rows.append(red["A_in"][k])
            rhs.append(red["b_in"][k])
            origin.append(("in", int(red["in_keep"][k])))
    eye = np.eye(nf)
    for j in range(nf):
        if np.isfinite(red["ub"][j]):
            rows.append(eye[j])
            rhs.append(red["ub"][j])
            origin.append(("ub", j))
    for j in range(nf):
        if np.isfinite(red["lb"][j]):
            rows.append(-eye[j])
            rhs.append(-red["lb"][j])
            origin.append(("lb", j))
    n_ineq_rows = len(rows)
    if red["A_eq"] is not None:
        for k in range(red["A_eq"].shape[0]):
            rows.append(red["A_eq"][k])
            rhs.append(red["b_eq"][k])
            origin.append(("eq", int(red["eq_keep"][k])))
    G = np.asarray(rows) if rows else np.zeros((0, nf))
    h = np.asarray(rhs) if rhs else np.zeros(0)
    is_eq = np.zeros(len(rows), dtype=bool)
    is_eq[n_ineq_rows:] = True
    return G, h, is_eq, origin


def _equality_rank_test(p: QpProblem):
    """Exact inconsistency test for the equality block alone."""
    if p.A_eq is None or p.A_eq.shape[0] == 0:
        return
    a_rank = np.linalg.matrix_rank(p.A_eq)
    aug_rank = np.linalg.matrix_rank(np.column_stack([p.A_eq, p.b_eq]))
    if aug_rank > a_rank:
        raise _Infeasible


def _kkt_residual(p, x, nu, mu, zlb, zub):
    stat = p.Q @ x + p.c
    if p.A_eq is not None:
        stat = stat + p.A_eq.T @ nu
    if p.A_in is not None:
        stat = stat + p.A_in.T @ mu
    stat = stat - zlb + zub
    res = np.abs(stat).max(initial=0.0)
    if p.A_eq is not None:
        res = max(res, np.abs(p.A_eq @ x - p.b_eq).max(initial=0.0))
    if p.A_in is not None:
        slack = p.A_in @ x - p.b_in
        res = max(res, slack.max(initial=0.0))
        res = max(res, np.abs(mu * slack).max(initial=0.0))
    lo = np.where(np.isfinite(p.lb), p.lb - x, 0.0)
    hi = np.where(np.isfinite(p.ub), x - p.ub, 0.0)
    res = max(res, lo.max(initial=0.0), hi.max(initial=0.0))
    res = max(res, np.abs(zlb * lo).max(initial=0.0), np.abs(zub * hi).max(initial=0.0))
    return float(res)


def _solve_reduced(red, sigma, x_ref, max_iter, tol):
    nf = red["idx_free"].size
    Q = red["Q"] + sigma * np.eye(nf) if sigma > 0 else red["Q"]
    c = red["c"] - sigma * x_ref if sigma > 0 else red["c"]
    G, h, is_eq, origin = _stack_rows(red)
    solver = _DualActiveSet(Q, c, G, h, is_eq, max_iter, tol)
    x, W, sign, u, iters = solver.solve()
    return x, W, sign, u, origin, iters


def _collect_duals(p, red, W, sign, u, origin):
    n_eq = 0 if p.A_eq is None else p.b_eq.size
    n_in = 0 if p.A_in is None else p.b_in.size
    nu = np.zeros(n_eq)
    mu = np.zeros(n_in)
    zlb = np.zeros(p.n)
    zub = np.zeros(p.n)
    idx_free = red["idx_free"]
    for w, sgn, uval in zip(W, sign, u):
        kind, k = origin[w]
        if kind == "eq":
            nu[k] = sgn * uval
        elif kind == "in":
            mu[k] = max(uval, 0.0)
        elif kind == "ub":
            zub[idx_free[k]] = max(uval, 0.0)
        else:
            zlb[idx_free[k]] = max(uval, 0.0)
    return nu, mu, zlb, zub


def _absorb_fixed_duals(p, x, nu, mu, zlb, zub):
    """Assign bound multipliers on presolved-out variables from stationarity."""
    stat = p.Q @ x + p.c
    if p.A_eq is not None:
        stat = stat + p.A_eq.T @ nu
    if p.A_in is not None:
        stat = stat + p.A_in.T @ mu
    fixed = (p.ub - p.lb) <= 1e-12
    for j in np.flatnonzero(fixed):
        d = -stat[j]
        if d >= 0:
            zub[j] = d
            zlb[j] = 0.0
        else:
            zlb[j] = -d
            zub[j] = 0.0
    return zlb, zub


def solve_qp(problem: QpProblem, tol: float = _DEFAULT_TOL,
             max_iter: int | None = None) -> QpSolution:
    """Solve a dense convex QP to a KKT certificate.

    Returns OPTIMAL only when the assembled KKT residual (stationarity,
    feasibility, complementarity) is at most ``tol``. Deterministic for a
    fixed input.
    """
    p = problem
    _psd_check(p.Q)
    n = p.n
    if max_iter is None:
        m_rows = (0 if p.A_in is None else p.b_in.size) + (0 if p.A_eq is None else p.b_eq.size)
        max_iter = 200 + 25 * (n + m_rows + 2 * n)
    try:
        _equality_rank_test(p)
        red = _presolve(p)
    except _Infeasible:
        return QpSolution(None, np.inf, np.inf, QpStatus.INFEASIBLE)

    nf = red["idx_free"].size
    qscale = np.abs(red["Q"]).max(initial=0.0)
    cscale = np.abs(red["c"]).max(initial=0.0)
    finite = np.concatenate([
        red["lb"][np.isfinite(red["lb"])], red["ub"][np.isfinite(red["ub"])],
        red["b_in"] if red["b_in"] is not None else np.zeros(0),
        red["b_eq"] if red["b_eq"] is not None else np.zeros(0)])
    xscale = max(1.0, np.abs(finite).max(initial=0.0))

    strictly_convex = False
    if nf:
        try:
            L = np.linalg.cholesky(red["Q"])
            strictly_convex = np.min(np.diag(L)) ** 2 >= 1e-12 * max(qscale, 1e-30)
        except np.linalg.LinAlgError:
            strictly_convex = False

    total_iters = 0
    try:
        if nf == 0:
            x_r, W, sign, u, origin = np.zeros(0), [], [], [], []
        elif strictly_convex:
            x_r, W, sign, u, origin, it = _solve_reduced(red, 0.0, None, max_iter, tol)
            total_iters += it
        else:
            # regularization scaled so the unconstrained proximal anchor lands
            # within a few feasible-region diameters of the reference point;
            # shrinks while unconverged to accelerate flat directions
            sigma = max(1e-7 * qscale, 0.1 * cscale / xscale, 1e-12)
            sigma_min = sigma * 1e-5
            x_ref = np.zeros(nf)
            for _ in range(60):
                x_r, W, sign, u, origin, it = _solve_reduced(red, sigma, x_ref, max_iter, tol)
                total_iters += it
                step = np.abs(x_r - x_ref).max(initial=0.0)
                if sigma * step <= 1e-3 * tol:
                    break
                if not np.all(np.isfinite(x_r)) or step > 1e12 * xscale:
                    break
                x_ref = x_r
                sigma = max(sigma / 8.0, sigma_min)
    except _Infeasible:
        return QpSolution(None, np.inf, np.inf, QpStatus.INFEASIBLE)
    except _IterLimit as e:
        x_full = np.where(red["fixed"], red["xfix"], 0.0)
        x_full[red["idx_free"]] = e.x
        return QpSolution(x_full, p.objective(x_full), np.inf, QpStatus.ITER_LIMIT,
                          iterations=e.iters)

    x = np.where(red["fixed"], red["xfix"], 0.0)
    x[red["idx_free"]] = x_r
    nu, mu, zlb, zub = _collect_duals(p, red, W, sign, u, origin)
    zlb, zub = _absorb_fixed_duals(p, x, nu, mu, zlb, zub)
    res = _kkt_residual(p, x, nu, mu, zlb, zub)
    status = QpStatus.OPTIMAL if res <= tol else QpStatus.ITER_LIMIT
    return QpSolution(x, p.objective(x), res, status, eq_dual=nu, ineq_dual=mu,
                      lb_dual=zlb, ub_dual=zub, iterations=total_iters)
