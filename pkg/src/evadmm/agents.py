"""Per-iteration local problems for the vehicles and the aggregator.

Each EV minimizes a battery-wear quadratic plus the coordination proximal
term over its feasible charging set; the aggregator (agent 0, with profile
``x0 = -x_a``) minimizes either the load-variance objective (closed form)
or the tariff cost (an MIQP over its own charge/discharge split).

The EV decision vector is laid out as ``[p_ch; p_dis; u_ch; u_dis]``, four
blocks of length T; unavailable steps are pinned to zero through bounds.
"""

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .miqp import MiqpProblem, MiqpSolution, MiqpStatus, solve_miqp
from .qp import QpProblem, QpStatus, solve_qp
from .scenario import (AdmmConfig, AggregatorSpec, ConstraintModel, EvSpec,
                       Objective, Schedule, Tariff, TimeGrid, energy_trajectory)

__all__ = [
    "EvAgent", "EvaAgent", "AgentSolveError",
    "build_ev_subproblem", "build_ev_subproblem_relaxed", "ev_update",
    "eva_lvm_update_closed_form", "eva_lvm_update_qp", "eva_ccm_update",
    "eva_update",
]


class AgentSolveError(RuntimeError):
    """A local subproblem came back infeasible or without a usable point."""


@dataclass
class EvAgent:
    spec: EvSpec
    grid: TimeGrid
    last_profile: np.ndarray = None

    def __post_init__(self):
        if self.last_profile is None:
            self.last_profile = np.zeros(self.grid.T)


@dataclass
class EvaAgent:
    spec: AggregatorSpec
    demand: np.ndarray
    tariff: Tariff
    grid: TimeGrid
    last_profile: np.ndarray = None

    def __post_init__(self):
        if self.last_profile is None:
            self.last_profile = np.zeros(self.grid.T)


def _pair_quadratic(T, q_diag, w, rho):
    """Q and c blocks for sum_t (q_diag/2) (p_ch - p_dis - ...)^2 terms.

    Returns the 4T x 4T quadratic with q_diag on the (ch, dis) pair and the
    linear part -rho * w on the net power.
    """
    n = 4 * T
    Q = np.zeros((n, n))
    idx = np.arange(T)
    Q[idx, idx] = q_diag
    Q[T + idx, T + idx] = q_diag
    Q[idx, T + idx] = -q_diag
    Q[T + idx, idx] = -q_diag
    c = np.zeros(n)
    c[:T] = -rho * w
    c[T:2 * T] = rho * w
    return Q, c


def build_ev_subproblem(agent: EvAgent, xbar: np.ndarray, lam: np.ndarray,
                        rho: float, gamma: float, v2g: bool) -> MiqpProblem:
    """Assemble one EV's local problem for the current coordination state.

    Objective: gamma * alpha * ||x||^2 + (rho/2) * ||x - w||^2 with
    w = last_profile - xbar - lam/rho and x = p_ch - p_dis. Constraints:
    terminal energy equality, per-step energy corridor, power-gate linking,
    and charge/discharge exclusivity while connected. Without V2G the
    discharge side is pinned and no binaries remain.
    """
    ev, grid = agent.spec, agent.grid
    T = grid.T
    a = ev.availability.astype(float)
    w = agent.last_profile - xbar - lam / rho
    q = 2.0 * gamma * ev.alpha + rho
    Q, c = _pair_quadratic(T, q, w, rho)
    const0 = 0.5 * rho * float(w @ w)

    ich = np.arange(T)
    idis = T + np.arange(T)
    iuch = 2 * T + np.arange(T)
    iudis = 3 * T + np.arange(T)

    # terminal energy requirement (kWh): E0 + sum dE = R
    eq = np.zeros(4 * T)
    eq[ich] = ev.eta_ch / grid.m
    eq[idis] = -1.0 / (ev.eta_dis * grid.m)
    b_eq = np.array([ev.required_energy - ev.initial_energy])

    rows, rhs = [], []
    # running-energy corridor on E[1..T-1]; E[T] is the equality above
    cum = np.zeros(4 * T)
    for t in range(T - 1):
        cum = cum.copy()
        cum[ich[t]] = ev.eta_ch / grid.m
        cum[idis[t]] = -1.0 / (ev.eta_dis * grid.m)
        rows.append(cum)
        rhs.append(ev.energy_max[t] - ev.initial_energy)
        rows.append(-cum)
        rhs.append(ev.initial_energy - ev.energy_min[t])
    # gate linking p <= cap * u
    for t in range(T):
        r = np.zeros(4 * T)
        r[ich[t]] = 1.0
        r[iuch[t]] = -ev.p_ch_max[t]
        rows.append(r)
        rhs.append(0.0)
        r = np.zeros(4 * T)
        r[idis[t]] = 1.0
        r[iudis[t]] = -ev.p_dis_max[t]
        rows.append(r)
        rhs.append(0.0)
        r = np.zeros(4 * T)
        r[iuch[t]] = 1.0
        r[iudis[t]] = 1.0
        rows.append(r)
        rhs.append(a[t])

    lb = np.zeros(4 * T)
    ub = np.concatenate([ev.p_ch_max * a, ev.p_dis_max * a, a.copy(), a.copy()])
    if v2g:
        binaries = tuple(int(i) for i in np.concatenate([iuch, iudis]))
        pairing = tuple((int(iuch[t]), int(iudis[t]), int(a[t])) for t in range(T))
    else:
        # discharge pinned to zero; the charge gate is just an upper bound,
        # so u_ch can sit at the availability value without loss
        ub[idis] = 0.0
        ub[iudis] = 0.0
        lb[iuch] = a
        binaries = ()
        pairing = ()

    base = QpProblem(Q=Q, c=c, const0=const0, A_eq=eq[None, :], b_eq=b_eq,
                     A_in=np.asarray(rows), b_in=np.asarray(rhs), lb=lb, ub=ub)
    return MiqpProblem(base=base, binary_indices=binaries, pairing=pairing)


def build_ev_subproblem_relaxed(agent: EvAgent, xbar: np.ndarray, lam: np.ndarray,
                                rho: float, gamma: float, v2g: bool) -> QpProblem:
    """Benchmark model without efficiency or corridor physics.

    Net power is the only variable: a box gated by availability and a
    lossless total-energy requirement, kept as an inequality so the full
    model's feasible set stays contained in this one.
    """
    ev, grid = agent.spec, agent.grid
    T = grid.T
    a = ev.availability.astype(float)
    w = agent.last_profile - xbar - lam / rho
    q = 2.0 * gamma * ev.alpha + rho
    Q = np.diag(np.full(T, q))
    c = -rho * w
    const0 = 0.5 * rho * float(w @ w)
    A_in = -np.ones((1, T)) / grid.m
    b_in = np.array([-(ev.required_energy - ev.initial_energy)])
    lb = -(ev.p_dis_max * a) if v2g else np.zeros(T)
    ub = ev.p_ch_max * a
    return QpProblem(Q=Q, c=c, const0=const0, A_in=A_in, b_in=b_in, lb=lb, ub=ub)


def _schedule_from_vector(ev: EvSpec, grid: TimeGrid, x_full: np.ndarray) -> Schedule:
    T = grid.T
    p_ch = x_full[:T].copy()
    p_dis = x_full[T:2 * T].copy()
    u_ch = np.round(x_full[2 * T:3 * T]).astype(int)
    u_dis = np.round(x_full[3 * T:4 * T]).astype(int)
    p_ch[p_ch < 0] = 0.0
    p_dis[p_dis < 0] = 0.0
    return Schedule(x=p_ch - p_dis, p_ch=p_ch, p_dis=p_dis, u_ch=u_ch, u_dis=u_dis,
                    energy=energy_trajectory(ev, p_ch, p_dis, grid))


def _schedule_from_net(ev: EvSpec, grid: TimeGrid, x: np.ndarray) -> Schedule:
    p_ch = np.maximum(x, 0.0)
    p_dis = np.maximum(-x, 0.0)
    return Schedule(x=x.copy(), p_ch=p_ch, p_dis=p_dis,
                    u_ch=(p_ch > 1e-9).astype(int), u_dis=(p_dis > 1e-9).astype(int),
                    energy=energy_trajectory(ev, p_ch, p_dis, grid))


class _EvWindowProblem:
    """Reduced form of one EV's local problem over its connected steps.

    The gate binaries carry no cost, so a node relaxation is equivalent to a
    QP over (p_ch, p_dis) alone: a free step contributes the capacity diamond
    p_ch/cap_ch + p_dis/cap_dis <= 1, a pinned step drops one side. Branching
    enforces per-step charge/discharge exclusivity directly.
    """

    FREE, CH, DIS = 0, 1, 2

    def __init__(self, ev: EvSpec, grid: TimeGrid, w: np.ndarray,
                 rho: float, gamma: float):
        self.ev = ev
        self.grid = grid
        self.steps = np.flatnonzero(ev.availability)
        self.W = self.steps.size
        self.q = 2.0 * gamma * ev.alpha + rho
        self.rho = rho
        self.w = w
        self.const0 = 0.5 * rho * float(w @ w)
        self._check_plateaus()
        self._fixed_rows()

    def _check_plateaus(self):
        ev, T = self.ev, self.grid.T
        first = self.steps[0] if self.W else T
        if first > 0:
            lo = ev.energy_min[:first].max()
            hi = ev.energy_max[:first].min()
            if not (lo - 1e-9 <= ev.initial_energy <= hi + 1e-9):
                raise AgentSolveError(f"ev {ev.id}: initial energy outside corridor")
        last = self.steps[-1] if self.W else -1
        lo = ev.energy_min[last + 1:].max(initial=-np.inf)
        hi = ev.energy_max[last + 1:].min(initial=np.inf)
        lo = max(lo, ev.energy_min[last] if last >= 0 else -np.inf)
        hi = min(hi, ev.energy_max[last] if last >= 0 else np.inf)
        if not (lo - 1e-9 <= ev.required_energy <= hi + 1e-9):
            raise AgentSolveError(f"ev {ev.id}: required energy outside corridor")
        if self.W == 0 and abs(ev.required_energy - ev.initial_energy) > 1e-9:
            raise AgentSolveError(f"ev {ev.id}: unreachable requirement")

    def _fixed_rows(self):
        """Terminal equality and corridor rows shared by every node."""
        ev, grid, W = self.ev, self.grid, self.W
        n = 2 * W
        eq = np.zeros(n)
        eq[:W] = ev.eta_ch / grid.m
        eq[W:] = -1.0 / (ev.eta_dis * grid.m)
        self.A_eq = eq[None, :]
        self.b_eq = np.array([ev.required_energy - ev.initial_energy])
        rows, rhs = [], []
        cum = np.zeros(n)
        for j in range(W - 1):
            cum = cum.copy()
            cum[j] = ev.eta_ch / grid.m
            cum[W + j] = -1.0 / (ev.eta_dis * grid.m)
            t0, t1 = self.steps[j], self.steps[j + 1]
            hi = ev.energy_max[t0:t1].min()
            lo = ev.energy_min[t0:t1].max()
            rows.append(cum)
            rhs.append(hi - ev.initial_energy)
            rows.append(-cum)
            rhs.append(ev.initial_energy - lo)
        self.A_corr = np.asarray(rows) if rows else np.zeros((0, n))
        self.b_corr = np.asarray(rhs)

    def relax(self, states: tuple, qp_tol: float):
        ev, W = self.ev, self.W
        cap_ch = ev.p_ch_max[self.steps]
        cap_dis = ev.p_dis_max[self.steps]
        n = 2 * W
        idx = np.arange(W)
        Q = np.zeros((n, n))
        Q[idx, idx] = self.q
        Q[W + idx, W + idx] = self.q
        Q[idx, W + idx] = -self.q
        Q[W + idx, idx] = -self.q
        c = np.zeros(n)
        wv = self.w[self.steps]
        c[:W] = -self.rho * wv
        c[W:] = self.rho * wv
        lb = np.zeros(n)
        ub = np.concatenate([cap_ch, cap_dis])
        rows, rhs = [], []
        for j, st in enumerate(states):
            if st == self.CH:
                ub[W + j] = 0.0
            elif st == self.DIS:
                ub[j] = 0.0
            elif cap_ch[j] > 0 and cap_dis[j] > 0:
                r = np.zeros(n)
                r[j] = 1.0 / cap_ch[j]
                r[W + j] = 1.0 / cap_dis[j]
                rows.append(r)
                rhs.append(1.0)
        A_in = np.vstack([self.A_corr] + ([np.asarray(rows)] if rows else []))
        b_in = np.concatenate([self.b_corr, np.asarray(rhs) if rhs else np.zeros(0)])
        prob = QpProblem(Q=Q, c=c, const0=self.const0, A_eq=self.A_eq,
                         b_eq=self.b_eq, A_in=A_in, b_in=b_in, lb=lb, ub=ub)
        return solve_qp(prob, tol=qp_tol)

    def expand(self, xw: np.ndarray):
        T = self.grid.T
        p_ch = np.zeros(T)
        p_dis = np.zeros(T)
        p_ch[self.steps] = np.maximum(xw[:self.W], 0.0)
        p_dis[self.steps] = np.maximum(xw[self.W:], 0.0)
        return p_ch, p_dis


def _solve_ev_v2g(ev: EvSpec, grid: TimeGrid, w: np.ndarray, rho: float,
                  gamma: float, miqp_gap: float, qp_tol: float):
    """Exact branch and bound on the reduced form (best-first, deterministic)."""
    prob = _EvWindowProblem(ev, grid, w, rho, gamma)
    W = prob.W
    if W == 0:
        return np.zeros(grid.T), np.zeros(grid.T)
    eps_p = 1e-6 * max(1.0, float(ev.p_ch_max.max()), float(ev.p_dis_max.max()))
    counter = itertools.count()
    heap: list = []
    best = [np.inf, None]

    def pin_states(xw):
        return tuple(prob.CH if xw[j] >= xw[W + j] else prob.DIS for j in range(W))

    def push(states):
        sol = prob.relax(states, qp_tol)
        if sol.status is QpStatus.INFEASIBLE or sol.x is None:
            return
        frac = [j for j in range(W)
                if states[j] == prob.FREE and sol.x[j] > eps_p and sol.x[W + j] > eps_p]
        if not frac:
            exact = prob.relax(pin_states(sol.x), qp_tol)
            if exact.x is not None and exact.objective < best[0]:
                best[0], best[1] = exact.objective, exact.x
            return
        heapq.heappush(heap, (sol.objective, next(counter), states, frac, sol.x))

    push(tuple([prob.FREE] * W))
    while heap:
        bound, _, states, frac, xw = heapq.heappop(heap)
        if best[1] is not None and \
                best[0] - bound <= miqp_gap * max(1.0, abs(best[0])):
            break
        j = max(frac, key=lambda i: min(xw[i], xw[W + i]))
        for st in (prob.CH, prob.DIS):
            child = list(states)
            child[j] = st
            push(tuple(child))
    if best[1] is None:
        raise AgentSolveError(f"ev {ev.id}: subproblem infeasible")
    return prob.expand(best[1])


def ev_update(agent: EvAgent, xbar: np.ndarray, lam: np.ndarray,
              cfg: AdmmConfig) -> Schedule:
    """Solve the EV's local problem and roll its profile forward."""
    ev, grid = agent.spec, agent.grid
    if cfg.constraint_model is ConstraintModel.RELAXED:
        qp = build_ev_subproblem_relaxed(agent, xbar, lam, cfg.rho, cfg.gamma,
                                         cfg.v2g_enabled)
        sol = solve_qp(qp, tol=cfg.qp_tol)
        if sol.status is QpStatus.INFEASIBLE or sol.x is None:
            raise AgentSolveError(f"ev {ev.id}: relaxed subproblem infeasible")
        sched = _schedule_from_net(ev, grid, sol.x)
    elif cfg.v2g_enabled:
        w = agent.last_profile - xbar - lam / cfg.rho
        p_ch, p_dis = _solve_ev_v2g(ev, grid, w, cfg.rho, cfg.gamma,
                                    cfg.miqp_gap, cfg.qp_tol)
        p_ch = np.where(p_ch < 1e-11, 0.0, p_ch)
        p_dis = np.where(p_dis < 1e-11, 0.0, p_dis)
        sched = Schedule(x=p_ch - p_dis, p_ch=p_ch, p_dis=p_dis,
                         u_ch=(p_ch > 0).astype(int), u_dis=(p_dis > 0).astype(int),
                         energy=energy_trajectory(ev, p_ch, p_dis, grid))
    else:
        prob = build_ev_subproblem(agent, xbar, lam, cfg.rho, cfg.gamma, v2g=False)
        sol = solve_miqp(prob, miqp_gap=cfg.miqp_gap, qp_tol=cfg.qp_tol)
        if sol.status is MiqpStatus.INFEASIBLE or sol.x is None:
            raise AgentSolveError(f"ev {ev.id}: subproblem infeasible")
        sched = _schedule_from_vector(ev, grid, sol.x)
    agent.last_profile = sched.x.copy()
    return sched


def eva_lvm_update_closed_form(agent: EvaAgent, xbar: np.ndarray, lam: np.ndarray,
                               rho: float, delta: float) -> np.ndarray:
    """Unconstrained variance-smoothing update, exact per element:

    x0 <- rho/(rho + 2 delta) * (x0_prev - xbar - lam/rho)
          + 2 delta/(rho + 2 delta) * demand
    """
    v = agent.last_profile - xbar - lam / rho
    return (rho * v + 2.0 * delta * agent.demand) / (rho + 2.0 * delta)


def eva_lvm_update_qp(agent: EvaAgent, xbar: np.ndarray, lam: np.ndarray,
                      rho: float, delta: float, apply_caps: bool = False,
                      qp_tol: float = 1e-8) -> np.ndarray:
    """Same minimizer through the QP solver; optionally box-constrained by
    the aggregator power caps (x0 in [-cap_ch, cap_dis])."""
    T = agent.grid.T
    v = agent.last_profile - xbar - lam / rho
    Q = np.diag(np.full(T, rho + 2.0 * delta))
    c = -(rho * v + 2.0 * delta * agent.demand)
    lb = ub = None
    if apply_caps:
        lb = -agent.spec.p_ch_max_agg
        ub = agent.spec.p_dis_max_agg
    sol = solve_qp(QpProblem(Q=Q, c=c, lb=lb, ub=ub), tol=qp_tol)
    if sol.x is None:
        raise AgentSolveError("aggregator variance update failed")
    return sol.x


def _ccm_scalar(spec, tariff, m, v, rho):
    """Exact per-step minimizer of the cost update when selling never pays
    more than buying costs: a two-slope shrinkage of the proximal target
    clipped to the feeder caps (no simultaneous-flow incentive, so the
    binaries are implied by the sign)."""
    target = -v  # proximal pull on the aggregate profile x_a
    x_pos = target - tariff.price_ch / (m * rho)
    x_neg = target - tariff.price_dis / (m * rho)
    x_a = np.where(x_pos > 0, x_pos, np.where(x_neg < 0, x_neg, 0.0))
    x_a = np.clip(x_a, -spec.p_dis_max_agg, spec.p_ch_max_agg)
    return -x_a


def eva_ccm_update(agent: EvaAgent, xbar: np.ndarray, lam: np.ndarray,
                   rho: float, miqp_gap: float = 1e-6,
                   qp_tol: float = 1e-8) -> np.ndarray:
    """Tariff-cost update: MIQP over the aggregate charge/discharge split.

    Cost (pi_ch * p_ch_a - pi_dis * p_dis_a)/m is charged on the aggregate
    profile x_a = -x0 = p_ch_a - p_dis_a, with feeder caps gated by
    exclusive binaries, plus the proximal pull toward the exchange state.
    For the usual tariff shape (sell price below buy price) the optimum is
    a per-step shrinkage, solved in closed form.
    """
    spec, grid, tariff = agent.spec, agent.grid, agent.tariff
    T = grid.T
    v = agent.last_profile - xbar - lam / rho
    if np.all(tariff.price_dis <= tariff.price_ch + 1e-12) and \
            np.all(tariff.price_dis >= 0):
        return _ccm_scalar(spec, tariff, grid.m, v, rho)
    # x0 = p_dis_a - p_ch_a, so the proximal target for p_ch - p_dis is -v
    Q, c = _pair_quadratic(T, rho, -v, rho)
    c[:T] += tariff.price_ch / grid.m
    c[T:2 * T] -= tariff.price_dis / grid.m
    const0 = 0.5 * rho * float(v @ v)

    iuch = 2 * T + np.arange(T)
    iudis = 3 * T + np.arange(T)
    rows, rhs = [], []
    for t in range(T):
        r = np.zeros(4 * T)
        r[t] = 1.0
        r[iuch[t]] = -spec.p_ch_max_agg[t]
        rows.append(r)
        rhs.append(0.0)
        r = np.zeros(4 * T)
        r[T + t] = 1.0
        r[iudis[t]] = -spec.p_dis_max_agg[t]
        rows.append(r)
        rhs.append(0.0)
        r = np.zeros(4 * T)
        r[iuch[t]] = 1.0
        r[iudis[t]] = 1.0
        rows.append(r)
        rhs.append(1.0)
    lb = np.zeros(4 * T)
    ub = np.concatenate([spec.p_ch_max_agg, spec.p_dis_max_agg, np.ones(T), np.ones(T)])
    base = QpProblem(Q=Q, c=c, const0=const0, A_in=np.asarray(rows),
                     b_in=np.asarray(rhs), lb=lb, ub=ub)
    prob = MiqpProblem(
        base=base,
        binary_indices=tuple(int(i) for i in np.concatenate([iuch, iudis])),
        pairing=tuple((int(iuch[t]), int(iudis[t]), 1) for t in range(T)))
    sol = solve_miqp(prob, miqp_gap=miqp_gap, qp_tol=qp_tol)
    if sol.status is MiqpStatus.INFEASIBLE or sol.x is None:
        raise AgentSolveError("aggregator cost update failed")
    p_ch_a = sol.x[:T]
    p_dis_a = sol.x[T:2 * T]
    return p_dis_a - p_ch_a


def eva_update(agent: EvaAgent, xbar: np.ndarray, lam: np.ndarray,
               cfg: AdmmConfig) -> np.ndarray:
    """Dispatch on the aggregator objective; rolls the profile forward."""
    if agent.spec.objective is Objective.LVM:
        if cfg.lvm_enforce_caps:
            x0 = eva_lvm_update_qp(agent, xbar, lam, cfg.rho, agent.spec.delta,
                                   apply_caps=True, qp_tol=cfg.qp_tol)
        else:
            x0 = eva_lvm_update_closed_form(agent, xbar, lam, cfg.rho,
                                            agent.spec.delta)
    else:
        x0 = eva_ccm_update(agent, xbar, lam, cfg.rho, miqp_gap=cfg.miqp_gap,
                            qp_tol=cfg.qp_tol)
    agent.last_profile = x0.copy()
    return x0
