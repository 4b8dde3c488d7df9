"""Problem-instance model: time grid, fleet specs, tariffs, run configuration.

All power values are kW, energies kWh, prices $/kWh. Arrays are indexed by
0-based time step over a horizon of ``T`` steps with ``m`` steps per hour.
Value types are frozen after construction and safe to share across threads.
"""

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

__all__ = [
    "TimeGrid",
    "EvSpec",
    "Tariff",
    "Objective",
    "UpdateMode",
    "ConstraintModel",
    "AggregatorSpec",
    "Scenario",
    "AdmmConfig",
    "Schedule",
    "EvDefaults",
    "AggregatorDefaults",
    "FeasibilityResult",
    "default_scenario_params",
    "default_tariff",
    "validate",
    "feasibility_check",
    "energy_trajectory",
]

PEAK_PRICE = 0.38
OFFPEAK_PRICE = 0.14
DISCHARGE_PRICE_FRACTION = 0.40
DEFAULT_PEAK_START = 16
DEFAULT_PEAK_END = 21


class Objective(Enum):
    LVM = "lvm"  # load-variance minimization
    CCM = "ccm"  # charging-cost minimization


class UpdateMode(Enum):
    GAUSS_SEIDEL = "gauss_seidel"
    JACOBI = "jacobi"


class ConstraintModel(Enum):
    FULL = "full"        # efficiencies, energy corridor, charge/discharge split
    RELAXED = "relaxed"  # net-power box + total-energy requirement only


def _as_float_array(x, n, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name}: expected length {n}, got shape {arr.shape}")
    out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid: ``T`` steps, ``m`` steps per hour."""

    T: int
    m: int = 4

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("TimeGrid.T must be >= 1")
        if self.m < 1:
            raise ValueError("TimeGrid.m must be >= 1")

    @property
    def step_minutes(self) -> float:
        return 60.0 / self.m

    @property
    def hours(self) -> np.ndarray:
        """Hour-of-day at the start of each step."""
        return np.arange(self.T) / self.m


@dataclass(frozen=True)
class EvSpec:
    """One EV's availability, energy requirement, and battery parameters.

    ``availability`` defines the horizon length; scalar limits broadcast to
    per-step arrays. ``required_energy`` is the terminal battery content
    the vehicle must hold when it leaves.
    """

    id: str
    availability: np.ndarray
    required_energy: float
    initial_energy: float = 2.5
    energy_min: np.ndarray | float = 2.5
    energy_max: np.ndarray | float = 50.0
    p_ch_max: np.ndarray | float = 8.0
    p_dis_max: np.ndarray | float = 8.0
    eta_ch: float = 0.90
    eta_dis: float = 0.88
    alpha: float = 0.0125

    def __post_init__(self):
        avail = np.asarray(self.availability, dtype=int)
        if avail.ndim != 1 or avail.size < 1:
            raise ValueError("availability must be a 1-D array")
        T = avail.size
        avail = avail.copy()
        avail.flags.writeable = False
        object.__setattr__(self, "availability", avail)
        for name in ("energy_min", "energy_max", "p_ch_max", "p_dis_max"):
            object.__setattr__(self, name, _as_float_array(getattr(self, name), T, name))

    @property
    def T(self) -> int:
        return self.availability.size

    def violations(self) -> list[str]:
        out = []
        a = self.availability
        if not np.all((a == 0) | (a == 1)):
            out.append(f"ev {self.id}: availability not binary")
        if not (0.0 < self.eta_ch <= 1.0):
            out.append(f"ev {self.id}: eta_ch out of range")
        if not (0.0 < self.eta_dis <= 1.0):
            out.append(f"ev {self.id}: eta_dis out of range")
        if np.any(self.p_ch_max < 0) or np.any(self.p_dis_max < 0):
            out.append(f"ev {self.id}: negative power limit")
        if self.alpha < 0:
            out.append(f"ev {self.id}: negative alpha")
        if np.any(self.energy_min > self.energy_max):
            out.append(f"ev {self.id}: energy_min above energy_max")
        if not (self.energy_min.min() <= self.initial_energy <= self.energy_max.max()):
            out.append(f"ev {self.id}: initial energy outside [energy_min, energy_max]")
        if not (self.energy_min.min() <= self.required_energy <= self.energy_max.max()):
            out.append(f"ev {self.id}: required energy outside [energy_min, energy_max]")
        return out


@dataclass(frozen=True)
class Tariff:
    """Per-step charging price and (lower) sell-back price, $/kWh."""

    price_ch: np.ndarray
    price_dis: np.ndarray

    def __post_init__(self):
        ch = np.asarray(self.price_ch, dtype=float)
        dis = np.asarray(self.price_dis, dtype=float)
        if ch.shape != dis.shape or ch.ndim != 1:
            raise ValueError("tariff arrays must be 1-D and equally long")
        ch, dis = ch.copy(), dis.copy()
        ch.flags.writeable = False
        dis.flags.writeable = False
        object.__setattr__(self, "price_ch", ch)
        object.__setattr__(self, "price_dis", dis)

    def violations(self) -> list[str]:
        out = []
        if np.any(self.price_ch < 0) or np.any(self.price_dis < 0):
            out.append("tariff: negative price")
        return out


@dataclass(frozen=True)
class AggregatorSpec:
    """Aggregator-side power caps, objective choice, and variance scaling."""

    p_ch_max_agg: np.ndarray | float
    p_dis_max_agg: np.ndarray | float
    objective: Objective = Objective.LVM
    delta: float = 5e-4

    def __post_init__(self):
        # broadcast happens against the scenario grid in Scenario.__post_init__
        pass

    def with_arrays(self, T: int) -> "AggregatorSpec":
        return replace(
            self,
            p_ch_max_agg=_as_float_array(self.p_ch_max_agg, T, "p_ch_max_agg"),
            p_dis_max_agg=_as_float_array(self.p_dis_max_agg, T, "p_dis_max_agg"),
        )

    def violations(self) -> list[str]:
        out = []
        if np.any(np.asarray(self.p_ch_max_agg) < 0) or np.any(np.asarray(self.p_dis_max_agg) < 0):
            out.append("aggregator: negative power cap")
        if self.objective is Objective.LVM and not self.delta > 0:
            out.append("aggregator: delta must be > 0 for LVM")
        return out


@dataclass(frozen=True)
class Scenario:
    """A complete problem instance: grid, base demand, fleet, tariff, caps."""

    grid: TimeGrid
    demand: np.ndarray
    evs: tuple[EvSpec, ...]
    tariff: Tariff
    aggregator: AggregatorSpec

    def __post_init__(self):
        d = np.asarray(self.demand, dtype=float).copy()
        d.flags.writeable = False
        object.__setattr__(self, "demand", d)
        object.__setattr__(self, "evs", tuple(self.evs))
        object.__setattr__(self, "aggregator", self.aggregator.with_arrays(self.grid.T))

    @property
    def n_evs(self) -> int:
        return len(self.evs)


@dataclass(frozen=True)
class AdmmConfig:
    """Coordination-loop parameters.

    ``rho``, ``eps_p`` and ``eps_d`` default to ``None`` and are resolved
    per run: rho to 1e-3 (LVM) or 1.0 (CCM), tolerances to 1e-3 * sqrt(T).
    """

    rho: float | None = None
    gamma: float = 1.0
    eps_p: float | None = None
    eps_d: float | None = None
    max_iter: int = 2000
    update_mode: UpdateMode = UpdateMode.GAUSS_SEIDEL
    v2g_enabled: bool = True
    constraint_model: ConstraintModel = ConstraintModel.FULL
    lvm_enforce_caps: bool = False
    qp_tol: float = 1e-8
    miqp_gap: float = 1e-6

    def resolved(self, scenario: Scenario) -> "AdmmConfig":
        """Fill in scale-aware defaults for a concrete scenario."""
        rho = self.rho
        if rho is None:
            rho = 1e-3 if scenario.aggregator.objective is Objective.LVM else 1.0
        eps = 1e-3 * np.sqrt(scenario.grid.T)
        return replace(
            self,
            rho=rho,
            eps_p=self.eps_p if self.eps_p is not None else eps,
            eps_d=self.eps_d if self.eps_d is not None else eps,
        )

    def violations(self) -> list[str]:
        out = []
        if self.rho is not None and not self.rho > 0:
            out.append("config: rho must be > 0")
        if self.gamma < 0:
            out.append("config: gamma must be >= 0")
        for name in ("eps_p", "eps_d"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                out.append(f"config: {name} must be > 0")
        if self.max_iter < 1:
            out.append("config: max_iter must be >= 1")
        if not self.qp_tol > 0 or not self.miqp_gap > 0:
            out.append("config: solver tolerances must be > 0")
        return out


@dataclass(frozen=True)
class Schedule:
    """One agent's converged per-step power split and energy trajectory.

    ``x = p_ch - p_dis`` (kW, grid convention: charging positive),
    ``energy`` has length T+1 with ``energy[0]`` the initial content.
    """

    x: np.ndarray
    p_ch: np.ndarray
    p_dis: np.ndarray
    u_ch: np.ndarray
    u_dis: np.ndarray
    energy: np.ndarray

    def violations(self, ev: EvSpec, tol: float = 1e-6) -> list[str]:
        """Check the battery-physics invariants against ``ev``."""
        out = []
        a = ev.availability.astype(float)
        if np.max(np.abs(self.x - (self.p_ch - self.p_dis))) > tol:
            out.append("x != p_ch - p_dis")
        if np.any(self.p_ch < -tol) or np.any(self.p_dis < -tol):
            out.append("negative power")
        if np.any(self.p_ch - ev.p_ch_max * self.u_ch > tol):
            out.append("charging above cap or gate")
        if np.any(self.p_dis - ev.p_dis_max * self.u_dis > tol):
            out.append("discharging above cap or gate")
        if np.any(self.u_ch + self.u_dis > a + tol):
            out.append("u_ch + u_dis exceeds availability")
        if np.max(np.abs(self.p_ch * self.p_dis)) > tol:
            out.append("simultaneous charge and discharge")
        if np.any(self.energy[1:] < ev.energy_min - tol) or np.any(self.energy[1:] > ev.energy_max + tol):
            out.append("energy outside corridor")
        if abs(self.energy[-1] - ev.required_energy) > tol * max(1.0, ev.required_energy):
            out.append("terminal energy misses requirement")
        return out


@dataclass(frozen=True)
class EvDefaults:
    """Per-EV simulation defaults (scalar limits, broadcast when used)."""

    p_ch_max: float = 8.0
    p_dis_max: float = 8.0
    energy_min: float = 2.5
    energy_max: float = 50.0
    initial_energy: float = 2.5
    eta_ch: float = 0.90
    eta_dis: float = 0.88
    alpha: float = 0.0125


@dataclass(frozen=True)
class AggregatorDefaults:
    p_ch_max_agg: float = 136.0
    p_dis_max_agg: float = 136.0


def default_scenario_params() -> tuple[EvDefaults, AggregatorDefaults]:
    """Default per-EV and aggregator parameters (8 kW chargers, 136 kW feeder)."""
    return EvDefaults(), AggregatorDefaults()


def default_tariff(grid: TimeGrid, peak_start: float = DEFAULT_PEAK_START,
                   peak_end: float = DEFAULT_PEAK_END) -> Tariff:
    """Two-rate time-of-use tariff: 0.38 $/kWh in the peak window, 0.14 off-peak.

    The sell-back price is 40% of the charging price at every step. An empty
    window (``peak_start == peak_end``) yields the flat off-peak rate.
    """
    if not (0 <= peak_start <= peak_end <= 24):
        raise ValueError(f"invalid peak window [{peak_start}, {peak_end})")
    hours = grid.hours
    peak = (hours >= peak_start) & (hours < peak_end)
    price_ch = np.where(peak, PEAK_PRICE, OFFPEAK_PRICE)
    return Tariff(price_ch=price_ch, price_dis=DISCHARGE_PRICE_FRACTION * price_ch)


def validate(scenario: Scenario, config: AdmmConfig | None = None) -> list[str]:
    """Collect invariant violations; an empty list means the instance is well formed."""
    out = []
    T = scenario.grid.T
    if scenario.demand.shape != (T,):
        out.append("length mismatch: demand vs grid")
    if not np.all(np.isfinite(scenario.demand)):
        out.append("demand not finite")
    if scenario.tariff.price_ch.shape != (T,):
        out.append("length mismatch: tariff vs grid")
    out.extend(scenario.tariff.violations())
    out.extend(scenario.aggregator.violations())
    seen = set()
    for ev in scenario.evs:
        if ev.T != T:
            out.append(f"length mismatch: ev {ev.id} vs grid")
            continue
        if ev.id in seen:
            out.append(f"duplicate ev id {ev.id}")
        seen.add(ev.id)
        out.extend(ev.violations())
    if config is not None:
        out.extend(config.violations())
    return out


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.feasible


def feasibility_check(ev: EvSpec, grid: TimeGrid, v2g: bool = True) -> FeasibilityResult:
    """Decide whether any schedule can carry ``ev`` from its initial energy to
    its requirement inside the energy corridor.

    Greedy reachability: the corridor-capped maximal-charge trajectory gives
    the highest attainable terminal energy, the capped maximal-discharge
    trajectory (zero without V2G) the lowest; the requirement must fall
    between them. Intermediate targets are reachable by charging less.
    """
    if ev.T != grid.T:
        return FeasibilityResult(False, "availability length does not match grid")
    a = ev.availability.astype(float)
    e_hi = ev.initial_energy
    for t in range(grid.T):
        e_hi = min(e_hi + a[t] * ev.p_ch_max[t] * ev.eta_ch / grid.m, ev.energy_max[t])
    e_lo = ev.initial_energy
    if v2g:
        for t in range(grid.T):
            e_lo = max(e_lo - a[t] * ev.p_dis_max[t] / (ev.eta_dis * grid.m), ev.energy_min[t])
    if ev.required_energy > e_hi + 1e-9:
        return FeasibilityResult(False, "unreachable requirement")
    if ev.required_energy < e_lo - 1e-9:
        return FeasibilityResult(False, "requirement below dischargeable floor")
    return FeasibilityResult(True)


def energy_trajectory(ev: EvSpec, p_ch: np.ndarray, p_dis: np.ndarray,
                      grid: TimeGrid) -> np.ndarray:
    """Battery content over time: E[t+1] = E[t] + (eta_ch*p_ch[t] - p_dis[t]/eta_dis)/m."""
    p_ch = np.asarray(p_ch, dtype=float)
    p_dis = np.asarray(p_dis, dtype=float)
    if p_ch.shape != (grid.T,) or p_dis.shape != (grid.T,):
        raise ValueError("power arrays must have length T")
    delta = (ev.eta_ch * p_ch - p_dis / ev.eta_dis) / grid.m
    e = np.empty(grid.T + 1)
    e[0] = ev.initial_energy
    np.cumsum(delta, out=e[1:])
    e[1:] += ev.initial_energy
    return e
