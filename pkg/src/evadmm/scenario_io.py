"""Scenario files: CSV ingestion, serialization, synthetic generation.

Formats (headers required, '#' starts a comment line, steps are 0-based):
  demand.csv  step,kw
  events.csv  ev_id,arrival_step,departure_step,required_kwh[,overrides...]
  tariff.csv  step,price_ch,price_dis
  config.txt  key=value lines (rho, gamma, eps_p, eps_d, max_iter, mode,
              v2g, objective, delta, m, ...)
"""

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .scenario import (AdmmConfig, AggregatorSpec, ConstraintModel, EvSpec,
                       Objective, Scenario, Tariff, TimeGrid, UpdateMode,
                       default_scenario_params, default_tariff,
                       feasibility_check, validate)

__all__ = [
    "EventRecord", "ParseError", "load_scenario", "save_scenario",
    "synth_scenario", "parse_config", "config_to_text",
]

_EVENT_OVERRIDES = ("initial_energy", "energy_min", "energy_max", "p_ch_max",
                    "p_dis_max", "eta_ch", "eta_dis", "alpha")


class ParseError(ValueError):
    """Malformed input file; message carries the file and line number."""


@dataclass(frozen=True)
class EventRecord:
    """One charging event: a contiguous connection window and an energy need."""

    ev_id: str
    arrival_step: int
    departure_step: int
    required_kwh: float
    overrides: dict = None

    def to_spec(self, T: int, defaults) -> EvSpec:
        if not (0 <= self.arrival_step < self.departure_step <= T):
            raise ParseError(f"event {self.ev_id}: window [{self.arrival_step}, "
                             f"{self.departure_step}) outside horizon of {T} steps")
        if self.required_kwh < 0:
            raise ParseError(f"event {self.ev_id}: negative energy requirement")
        avail = np.zeros(T, dtype=int)
        avail[self.arrival_step:self.departure_step] = 1
        kw = {
            "initial_energy": defaults.initial_energy,
            "energy_min": defaults.energy_min,
            "energy_max": defaults.energy_max,
            "p_ch_max": defaults.p_ch_max,
            "p_dis_max": defaults.p_dis_max,
            "eta_ch": defaults.eta_ch,
            "eta_dis": defaults.eta_dis,
            "alpha": defaults.alpha,
        }
        kw.update(self.overrides or {})
        e0 = kw.pop("initial_energy")
        return EvSpec(id=self.ev_id, availability=avail,
                      required_energy=e0 + self.required_kwh,
                      initial_energy=e0, **kw)


def _read_rows(path):
    with open(path, newline="") as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                header = cells
                continue
            yield lineno, dict(zip(header, cells))


def _num(row, key, path, lineno, kind=float):
    try:
        return kind(row[key])
    except (KeyError, ValueError):
        raise ParseError(f"{path}:{lineno}: bad or missing '{key}'") from None


def load_demand(path) -> np.ndarray:
    values = {}
    for lineno, row in _read_rows(path):
        step = _num(row, "step", path, lineno, int)
        values[step] = _num(row, "kw", path, lineno)
    if not values:
        raise ParseError(f"{path}: no demand rows")
    T = max(values) + 1
    if sorted(values) != list(range(T)):
        raise ParseError(f"{path}: steps must cover 0..{T - 1} without gaps")
    return np.array([values[t] for t in range(T)])


def load_events(path) -> list[EventRecord]:
    events = []
    for lineno, row in _read_rows(path):
        overrides = {}
        for key in _EVENT_OVERRIDES:
            if key in row and row[key] != "":
                overrides[key] = float(row[key])
        events.append(EventRecord(
            ev_id=str(row.get("ev_id", "")) or _missing(path, lineno, "ev_id"),
            arrival_step=_num(row, "arrival_step", path, lineno, int),
            departure_step=_num(row, "departure_step", path, lineno, int),
            required_kwh=_num(row, "required_kwh", path, lineno),
            overrides=overrides))
    return events


def _missing(path, lineno, key):
    raise ParseError(f"{path}:{lineno}: bad or missing '{key}'")


def load_tariff(path, T) -> Tariff:
    ch = np.full(T, np.nan)
    dis = np.full(T, np.nan)
    for lineno, row in _read_rows(path):
        step = _num(row, "step", path, lineno, int)
        if not (0 <= step < T):
            raise ParseError(f"{path}:{lineno}: step {step} outside 0..{T - 1}")
        ch[step] = _num(row, "price_ch", path, lineno)
        dis[step] = _num(row, "price_dis", path, lineno)
    if np.isnan(ch).any() or np.isnan(dis).any():
        raise ParseError(f"{path}: tariff must cover every step")
    return Tariff(price_ch=ch, price_dis=dis)


_CONFIG_KEYS = {
    "rho": float, "gamma": float, "eps_p": float, "eps_d": float,
    "max_iter": int, "qp_tol": float, "miqp_gap": float, "delta": float,
    "m": int, "agg_p_ch_max": float, "agg_p_dis_max": float,
    "peak_start": float, "peak_end": float,
}


def parse_config(path) -> dict:
    """Flat key=value text; returns a dict of parsed settings."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key in _CONFIG_KEYS:
                try:
                    out[key] = _CONFIG_KEYS[key](val)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad value for {key}") from None
            elif key == "mode":
                try:
                    out[key] = UpdateMode(val.lower())
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: mode must be "
                                     "gauss_seidel or jacobi") from None
            elif key == "objective":
                try:
                    out[key] = Objective(val.lower())
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: objective must be lvm or ccm") from None
            elif key in ("v2g", "lvm_enforce_caps"):
                if val.lower() not in ("true", "false", "0", "1", "on", "off"):
                    raise ParseError(f"{path}:{lineno}: {key} must be boolean")
                out[key] = val.lower() in ("true", "1", "on")
            elif key == "constraint_model":
                try:
                    out[key] = ConstraintModel(val.lower())
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: constraint_model must be "
                                     "full or relaxed") from None
            else:
                raise ParseError(f"{path}:{lineno}: unknown key '{key}'")
    return out


def _config_from_settings(settings: dict) -> AdmmConfig:
    fields = ("rho", "gamma", "eps_p", "eps_d", "max_iter", "qp_tol", "miqp_gap")
    kw = {k: settings[k] for k in fields if k in settings}
    if "mode" in settings:
        kw["update_mode"] = settings["mode"]
    if "v2g" in settings:
        kw["v2g_enabled"] = settings["v2g"]
    if "lvm_enforce_caps" in settings:
        kw["lvm_enforce_caps"] = settings["lvm_enforce_caps"]
    if "constraint_model" in settings:
        kw["constraint_model"] = settings["constraint_model"]
    return AdmmConfig(**kw)


def load_scenario(demand_path, events_path, tariff_path=None, config_path=None):
    """Assemble a validated scenario (plus run config) from CSV inputs.

    The tariff falls back to the default two-rate shape when no file is
    given; EV fields not present as event overrides take the standard
    defaults. Raises ParseError / InfeasibleScenario-style ValueError on
    malformed or inconsistent inputs.
    """
    settings = parse_config(config_path) if config_path else {}
    demand = load_demand(demand_path)
    T = demand.size
    m = settings.get("m", 4)
    grid = TimeGrid(T=T, m=m)
    ev_defaults, agg_defaults = default_scenario_params()
    evs = tuple(ev.to_spec(T, ev_defaults) for ev in load_events(events_path))
    if tariff_path:
        tariff = load_tariff(tariff_path, T)
    else:
        tariff = default_tariff(grid, settings.get("peak_start", 16),
                                settings.get("peak_end", 21))
    aggregator = AggregatorSpec(
        p_ch_max_agg=settings.get("agg_p_ch_max", agg_defaults.p_ch_max_agg),
        p_dis_max_agg=settings.get("agg_p_dis_max", agg_defaults.p_dis_max_agg),
        objective=settings.get("objective", Objective.LVM),
        delta=settings.get("delta", AggregatorSpec.delta),
    )
    scenario = Scenario(grid=grid, demand=demand, evs=evs, tariff=tariff,
                        aggregator=aggregator)
    problems = validate(scenario)
    if problems:
        raise ParseError("scenario validation failed: " + "; ".join(problems))
    return scenario, _config_from_settings(settings)


def config_to_text(scenario: Scenario, config: AdmmConfig) -> str:
    lines = [f"m={scenario.grid.m}",
             f"objective={scenario.aggregator.objective.value}",
             f"delta={scenario.aggregator.delta!r}",
             f"gamma={config.gamma!r}",
             f"max_iter={config.max_iter}",
             f"mode={config.update_mode.value}",
             f"v2g={'true' if config.v2g_enabled else 'false'}",
             f"constraint_model={config.constraint_model.value}",
             f"qp_tol={config.qp_tol!r}",
             f"miqp_gap={config.miqp_gap!r}"]
    if config.rho is not None:
        lines.append(f"rho={config.rho!r}")
    if config.eps_p is not None:
        lines.append(f"eps_p={config.eps_p!r}")
    if config.eps_d is not None:
        lines.append(f"eps_d={config.eps_d!r}")
    agg = scenario.aggregator
    lines.append(f"agg_p_ch_max={float(agg.p_ch_max_agg[0])!r}")
    lines.append(f"agg_p_dis_max={float(agg.p_dis_max_agg[0])!r}")
    return "\n".join(lines) + "\n"


def save_scenario(scenario: Scenario, out_dir, config: AdmmConfig | None = None):
    """Write demand/events/tariff CSVs (and config) for a scenario; returns paths.

    Only representable instances round-trip exactly: contiguous availability
    windows and per-EV constant limits, which covers everything this package
    generates.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "demand": os.path.join(out_dir, "demand.csv"),
        "events": os.path.join(out_dir, "events.csv"),
        "tariff": os.path.join(out_dir, "tariff.csv"),
        "config": os.path.join(out_dir, "config.txt"),
    }
    with open(paths["demand"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "kw"])
        for t, kw in enumerate(scenario.demand):
            w.writerow([t, repr(float(kw))])
    with open(paths["events"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ev_id", "arrival_step", "departure_step", "required_kwh",
                    *_EVENT_OVERRIDES])
        for ev in scenario.evs:
            window = np.flatnonzero(ev.availability)
            arrival = int(window[0]) if window.size else 0
            departure = int(window[-1]) + 1 if window.size else 0
            w.writerow([ev.id, arrival, departure,
                        repr(float(ev.required_energy - ev.initial_energy)),
                        repr(float(ev.initial_energy)),
                        repr(float(ev.energy_min[0])), repr(float(ev.energy_max[0])),
                        repr(float(ev.p_ch_max[0])), repr(float(ev.p_dis_max[0])),
                        repr(float(ev.eta_ch)), repr(float(ev.eta_dis)),
                        repr(float(ev.alpha))])
    with open(paths["tariff"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "price_ch", "price_dis"])
        for t in range(scenario.grid.T):
            w.writerow([t, repr(float(scenario.tariff.price_ch[t])),
                        repr(float(scenario.tariff.price_dis[t]))])
    with open(paths["config"], "w") as fh:
        fh.write(config_to_text(scenario, config or AdmmConfig()))
    return paths


def synth_scenario(n_evs: int, T: int = 96, m: int = 4, seed: int = 0,
                   objective: Objective = Objective.LVM,
                   delta: float | None = None) -> Scenario:
    """Deterministic synthetic instance: a double-peaked base demand and a
    fleet of EVs with contiguous connection windows (at least 8 steps) whose
    requirements are drawn inside their reachable energy range."""
    if n_evs < 1:
        raise ValueError("need at least one EV")
    rng = np.random.default_rng(seed)
    grid = TimeGrid(T=T, m=m)
    hours = grid.hours
    horizon_h = T / m
    demand = (40.0
              + 18.0 * np.exp(-0.5 * ((hours - 0.33 * horizon_h) / (0.07 * horizon_h + 0.25)) ** 2)
              + 26.0 * np.exp(-0.5 * ((hours - 0.78 * horizon_h) / (0.09 * horizon_h + 0.25)) ** 2)
              + rng.normal(0.0, 0.8, T))
    demand = np.round(np.maximum(demand, 5.0), 3)

    defaults, agg_defaults = default_scenario_params()
    evs = []
    min_window = min(8, T)
    for i in range(n_evs):
        length = int(rng.integers(min_window, min(2 * min_window + 8, T) + 1))
        arrival = int(rng.integers(0, T - length + 1))
        avail = np.zeros(T, dtype=int)
        avail[arrival:arrival + length] = 1
        reachable = length * defaults.p_ch_max * defaults.eta_ch / m
        headroom = min(reachable, defaults.energy_max - defaults.initial_energy)
        need = float(rng.uniform(0.25, 0.8) * headroom)
        ev = EvSpec(id=f"ev{i:02d}", availability=avail,
                    required_energy=defaults.initial_energy + round(need, 3),
                    initial_energy=defaults.initial_energy)
        assert feasibility_check(ev, grid, v2g=False)
        evs.append(ev)

    kwargs = {} if delta is None else {"delta": delta}
    return Scenario(
        grid=grid, demand=demand, evs=tuple(evs), tariff=default_tariff(grid),
        aggregator=AggregatorSpec(p_ch_max_agg=agg_defaults.p_ch_max_agg,
                                  p_dis_max_agg=agg_defaults.p_dis_max_agg,
                                  objective=objective, **kwargs))
