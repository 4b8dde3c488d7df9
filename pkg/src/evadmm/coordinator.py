"""Exchange coordination loop.

One iteration: every EV solves its local problem against the current
average mismatch and price, the aggregator responds to the refreshed
average, the price integrates the remaining mismatch, and the loop stops
once the primal residual (the average mismatch itself) and the dual
residual (a profile-change measure) are inside tolerance.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentSolveError, EvAgent, EvaAgent, ev_update, eva_update
from .scenario import (AdmmConfig, ConstraintModel, Objective, Scenario,
                       Schedule, UpdateMode, feasibility_check, validate)

__all__ = [
    "AdmmState", "ResidualRecord", "RunResult", "Metrics",
    "InfeasibleScenarioError", "compute_xbar", "update_dual", "residuals",
    "run", "metrics", "global_objective",
]


class InfeasibleScenarioError(ValueError):
    """Scenario failed validation or per-EV feasibility screening."""


@dataclass
class AdmmState:
    """Mutable per-iteration snapshot of all profiles and the price."""

    iteration: int
    x_evs: list[np.ndarray]
    x0: np.ndarray
    xbar: np.ndarray
    lam: np.ndarray
    prev_x_evs: list[np.ndarray] = field(default_factory=list)
    prev_xbar: np.ndarray | None = None


@dataclass(frozen=True)
class ResidualRecord:
    iteration: int
    primal_norm: float
    dual_norm: float
    per_agent_dual: tuple[float, ...]


@dataclass(frozen=True)
class Metrics:
    load_variance: float
    charging_cost: float
    degradation_cost: float
    peak_kw: float

    def as_dict(self) -> dict:
        return {
            "load_variance": self.load_variance,
            "charging_cost": self.charging_cost,
            "degradation_cost": self.degradation_cost,
            "peak_kw": self.peak_kw,
        }


@dataclass
class RunResult:
    schedules: dict[str, Schedule]
    x_a: np.ndarray
    x0: np.ndarray
    converged: bool
    iterations: int
    residuals: list[ResidualRecord]
    metrics: Metrics
    wall_time: float
    config: AdmmConfig


def compute_xbar(x0: np.ndarray, x_evs: list[np.ndarray]) -> np.ndarray:
    """Average power mismatch over the aggregator and all EV profiles."""
    return (x0 + np.sum(x_evs, axis=0)) / (len(x_evs) + 1)


def update_dual(lam: np.ndarray, rho: float, xbar_new: np.ndarray) -> np.ndarray:
    return lam + rho * xbar_new


def residuals(state: AdmmState, rho: float) -> ResidualRecord:
    """Primal residual ||xbar||, dual residual from per-EV profile changes:

    s_i = -rho (N+1) (x_i - x_i_prev + (xbar_prev - xbar))
    """
    n_plus_1 = len(state.x_evs) + 1
    primal = float(np.linalg.norm(state.xbar))
    shift = state.prev_xbar - state.xbar
    per_agent = []
    stacked_sq = 0.0
    for x_new, x_old in zip(state.x_evs, state.prev_x_evs):
        s_i = -rho * n_plus_1 * (x_new - x_old + shift)
        nrm = float(np.linalg.norm(s_i))
        per_agent.append(nrm)
        stacked_sq += nrm * nrm
    return ResidualRecord(iteration=state.iteration, primal_norm=primal,
                          dual_norm=float(np.sqrt(stacked_sq)),
                          per_agent_dual=tuple(per_agent))


def _aggregate_cost(tariff, m, x_a):
    """Tariff cost of the aggregate profile with the cheapest feasible split."""
    p_ch_a = np.maximum(x_a, 0.0)
    p_dis_a = np.maximum(-x_a, 0.0)
    return float(np.sum(tariff.price_ch * p_ch_a - tariff.price_dis * p_dis_a) / m)


def metrics(schedules: dict[str, Schedule], x_a: np.ndarray,
            scenario: Scenario) -> Metrics:
    total = scenario.demand + x_a
    deg = 0.0
    for ev in scenario.evs:
        x = schedules[ev.id].x
        deg += ev.alpha * float(x @ x)
    return Metrics(
        load_variance=float(np.var(total)),
        charging_cost=_aggregate_cost(scenario.tariff, scenario.grid.m, x_a),
        degradation_cost=deg,
        peak_kw=float(total.max()),
    )


def global_objective(scenario: Scenario, gamma: float,
                     x_evs: list[np.ndarray]) -> float:
    """Coupled objective F_a(x_a) + gamma * sum_i alpha_i ||x_i||^2 evaluated
    at x_a = sum of EV profiles (the balance constraint taken exactly)."""
    x_a = np.sum(x_evs, axis=0)
    agg = scenario.aggregator
    if agg.objective is Objective.LVM:
        resid = scenario.demand + x_a
        f_a = agg.delta * float(resid @ resid)
    else:
        f_a = _aggregate_cost(scenario.tariff, scenario.grid.m, x_a)
    f_evs = sum(ev.alpha * float(x @ x) for ev, x in zip(scenario.evs, x_evs))
    return f_a + gamma * f_evs


def run(scenario: Scenario, config: AdmmConfig) -> RunResult:
    """Drive the exchange loop to convergence or the iteration cap.

    Gauss-Seidel (default): EVs move against the previous average, the
    aggregator against the refreshed one, then the price updates from the
    final average. Jacobi: all agents move against the previous average.
    """
    problems = validate(scenario, config)
    if problems:
        raise InfeasibleScenarioError("; ".join(problems))
    if config.constraint_model is ConstraintModel.FULL:
        for ev in scenario.evs:
            check = feasibility_check(ev, scenario.grid, config.v2g_enabled)
            if not check:
                raise InfeasibleScenarioError(f"ev {ev.id}: {check.reason}")
    cfg = config.resolved(scenario)

    t_start = time.perf_counter()
    grid = scenario.grid
    T = grid.T
    ev_agents = [EvAgent(spec=ev, grid=grid) for ev in scenario.evs]
    eva_agent = EvaAgent(spec=scenario.aggregator, demand=scenario.demand,
                         tariff=scenario.tariff, grid=grid)
    lam = np.zeros(T)
    xbar = np.zeros(T)
    history: list[ResidualRecord] = []
    schedules: dict[str, Schedule] = {}
    converged = False
    k = 0

    for k in range(1, cfg.max_iter + 1):
        prev_x_evs = [a.last_profile.copy() for a in ev_agents]
        prev_x0 = eva_agent.last_profile.copy()
        prev_xbar = xbar.copy()

        # independent EV solves (parallelizable: agents share nothing)
        for agent in ev_agents:
            schedules[agent.spec.id] = ev_update(agent, prev_xbar, lam, cfg)
        x_evs = [a.last_profile for a in ev_agents]

        if cfg.update_mode is UpdateMode.GAUSS_SEIDEL:
            xbar_mid = compute_xbar(prev_x0, x_evs)
            eva_update(eva_agent, xbar_mid, lam, cfg)
        else:
            eva_agent.last_profile = prev_x0
            eva_update(eva_agent, prev_xbar, lam, cfg)

        xbar = compute_xbar(eva_agent.last_profile, x_evs)
        lam = update_dual(lam, cfg.rho, xbar)

        state = AdmmState(iteration=k, x_evs=x_evs, x0=eva_agent.last_profile,
                          xbar=xbar, lam=lam, prev_x_evs=prev_x_evs,
                          prev_xbar=prev_xbar)
        rec = residuals(state, cfg.rho)
        history.append(rec)
        if rec.primal_norm <= cfg.eps_p and rec.dual_norm <= cfg.eps_d:
            converged = True
            break

    x_a = np.sum([a.last_profile for a in ev_agents], axis=0)
    wall = time.perf_counter() - t_start
    return RunResult(
        schedules=schedules,
        x_a=x_a,
        x0=eva_agent.last_profile.copy(),
        converged=converged,
        iterations=k,
        residuals=history,
        metrics=metrics(schedules, x_a, scenario),
        wall_time=wall,
        config=cfg,
    )
