"""Closed-loop scenarios: configuration, multi-rate simulation, metrics and tuning.

A scenario couples the nonlinear plant (integrated at ``dt``) with one
controller invoked at its own period, and logs the columns of ``COLUMNS``
every ``log_interval`` seconds.
"""
import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .controllers import (
    FeedforwardMap, Measurement, MpcConfig, MpcController, PidConfig, PidController,
)
from .equilibrium import Ambient, solve_steady_state, thermal_neutral_current
from .errors import AelthermError, ConfigError, InfeasibleCoolingError, NumericalError
from .lpv import build_table
from .plant import (
    PlantInputs, PlantSimulator, electrolysis_efficiency, heat_flows, valve_flow,
)
from .presets import PRESETS, preset

log = logging.getLogger(__name__)

COLUMNS = (
    "time_s", "load_frac", "current_a", "t_stack_c", "t_sep_c", "t_c_c", "y_cmd", "v_c_m3h",
    "q_ele_w", "q_dis_stack_w", "q_dis_sep_w", "u_cell_v", "efficiency_hhv",
)
CONTROLLERS = ("pid", "pid-i", "mpc")
SETTLE_BAND = 0.5  # K
RISE_THRESHOLD = 0.005  # opening above the initial command that counts as a rise

# Config keys for parameter overrides carry their unit; values map onto
# SystemParameters fields.
PARAMETER_KEYS = {
    "n_cell": "n_cell",
    "a_cell_m2": "a_cell",
    "phi_stack_m": "phi_stack",
    "a_stack_m2": "a_stack",
    "eps_stack": "eps_stack",
    "r_sep_k_per_w": "r_sep",
    "c_stack_j_per_k": "c_stack",
    "c_sep_j_per_k": "c_sep",
    "c_coil_j_per_k": "c_coil",
    "tau1_s": "tau1",
    "tau2_s": "tau2",
    "k_valve_m3h": "k_valve",
    "v_leak_m3h": "v_leak",
    "v_lye_m3h": "v_lye",
    "rho_lye_kg_per_m3": "rho_lye",
    "cp_lye_j_per_kg_k": "cp_lye",
    "rho_w_kg_per_m3": "rho_w",
    "cp_w_j_per_kg_k": "cp_w",
    "ka_w_per_k": "ka",
    "eta_i": "eta_i",
    "r1": "r1",
    "r2": "r2",
    "s_coef_v": "s_coef",
    "t1": "t1",
    "t2": "t2",
    "t3": "t3",
    "i_min_a": "i_min",
    "i_max_a": "i_max",
    "u_th_v": "u_th",
    "u_rev_v": "u_rev",
    "u_rev_slope_v_per_k": "u_rev_slope",
    "valve_dead_zone": "valve_dead_zone",
}
PID_KEYS = {"k_p": "k_p", "k_i_per_s": "k_i", "k_d_s": "k_d", "tau_s_s": "tau_s",
            "t_f_s": "t_f", "measurement": "measurement"}
FEEDFORWARD_KEYS = {"i_1_a": "i_1", "i_2_a": "i_2", "y_1": "y_1", "y_2": "y_2",
                    "clamp_below": "clamp_below"}
MPC_KEYS = {"n_p": "n_p", "q": "q", "r": "r", "tau_s_s": "tau_s", "n_s": "n_s"}
# Default PID gains per preset. The lab uses the tabulated set. On the large
# plant the same numbers drive a limit cycle at 40 % load, where the coil is
# flow-limited and one unit of valve command moves about 3 MW; the set is
# scaled by 0.0025, half the factor at which that loop loses stability.
PID_GAINS = {
    "lab-5nm3": {},
    "mw-500nm3": {"k_p": 0.05, "k_i": 2.75e-5, "k_d": 15.0},
}
TOP_KEYS = {"preset", "parameters", "controller", "t_set_c", "t_amb_c", "t_c_in_c",
            "duration_s", "dt_s", "log_interval_s", "load_profile", "pid", "feedforward",
            "mpc", "cold_start", "output"}


@dataclass(frozen=True)
class MpcSettings:
    n_p: int = 30
    q: float = 1.0
    r: float = 300.0
    tau_s: float = 120.0
    n_s: int = 10


@dataclass(frozen=True)
class ScenarioConfig:
    params: object
    ambient: Ambient
    # (time_s, load fraction of i_max), times non-decreasing, first at 0
    schedule: tuple
    controller: str = "pid"
    t_set: float = 70.0
    duration: float = 6 * 3600.0
    dt: float = 1.0
    log_interval: float = 10.0
    pid: PidConfig = field(default_factory=PidConfig)
    # None derives the map from steady states at i_max and the neutral point
    feedforward: FeedforwardMap = None
    mpc: MpcSettings = field(default_factory=MpcSettings)
    cold_start: bool = False
    output: str = None
    preset: str = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if not self.duration > 0:
            raise ConfigError(f"duration_s must be positive, got {self.duration!r}")
        if not self.dt > 0:
            raise ConfigError(f"dt_s must be positive, got {self.dt!r}")
        if not self.log_interval > 0:
            raise ConfigError(f"log_interval_s must be positive, got {self.log_interval!r}")
        if not self.schedule:
            raise ConfigError("load_profile must have at least one entry")
        times = [t for t, _ in self.schedule]
        if times[0] != 0:
            raise ConfigError("load_profile must start at time_s 0")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError("load_profile times must be non-decreasing")
        for _, frac in self.schedule:
            if not 0.0 <= frac <= 1.0:
                raise ConfigError(f"load fraction {frac!r} outside [0, 1]")
        for name, period in (("log_interval_s", self.log_interval),
                             ("controller period", self.controller_period)):
            if not _is_multiple(period, self.dt):
                raise ConfigError(f"{name} {period!r} must be a multiple of dt_s {self.dt!r}")

    @property
    def controller_period(self):
        return self.mpc.tau_s if self.controller == "mpc" else self.pid.tau_s

    def with_(self, **changes):
        return dataclasses.replace(self, **changes)

    def load_at(self, t):
        frac = self.schedule[0][1]
        for t_i, f_i in self.schedule:
            if t_i <= t:
                frac = f_i
            else:
                break
        return frac

    def current_at(self, t):
        return self.load_at(t) * self.params.i_max


def _is_multiple(value, base):
    ratio = value / base
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


# ---------------------------------------------------------------- config file

def _map_keys(section, mapping, where):
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(section) - set(mapping)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return {mapping[k]: v for k, v in section.items()}


def _parse_schedule(entries, i_max):
    if not isinstance(entries, list) or not entries:
        raise ConfigError("load_profile must be a non-empty list")
    out = []
    for e in entries:
        if not isinstance(e, dict) or "time_s" not in e:
            raise ConfigError(f"load_profile entry {e!r} needs time_s")
        extra = set(e) - {"time_s", "load_frac", "current_a"}
        if extra:
            raise ConfigError(f"unknown keys in load_profile entry: {sorted(extra)}")
        if ("load_frac" in e) == ("current_a" in e):
            raise ConfigError(f"load_profile entry {e!r} needs exactly one of load_frac, current_a")
        frac = float(e["load_frac"]) if "load_frac" in e else float(e["current_a"]) / i_max
        out.append((float(e["time_s"]), frac))
    return tuple(out)


def config_from_dict(data, preset_name=None):
    """Validated ScenarioConfig from a parsed mapping."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    name = preset_name or data.get("preset", "lab-5nm3")
    overrides = _map_keys(data.get("parameters"), PARAMETER_KEYS, "parameters")
    try:
        params, ambient = preset(name, **overrides)
    except AelthermError as exc:
        raise ConfigError(str(exc)) from exc
    except TypeError as exc:
        raise ConfigError(f"bad parameter override: {exc}") from exc
    ambient = Ambient(float(data.get("t_amb_c", ambient.t_amb)),
                      float(data.get("t_c_in_c", ambient.t_c_in)))
    default_t_set = 70.0 if name == "lab-5nm3" else 90.0
    t_set = float(data.get("t_set_c", default_t_set))
    pid_kw = _map_keys(data.get("pid"), PID_KEYS, "pid")
    if "measurement" in pid_kw:
        try:
            pid_kw["measurement"] = Measurement(pid_kw["measurement"])
        except ValueError:
            raise ConfigError(f"measurement must be one of "
                              f"{[m.value for m in Measurement]}") from None
    ff_kw = _map_keys(data.get("feedforward"), FEEDFORWARD_KEYS, "feedforward")
    mpc_kw = _map_keys(data.get("mpc"), MPC_KEYS, "mpc")
    try:
        pid = PidConfig(t_set=t_set, **{**PID_GAINS.get(name, {}), **pid_kw})
        ff = FeedforwardMap(**ff_kw) if ff_kw else None
        mpc = MpcSettings(**mpc_kw)
        schedule = _parse_schedule(data.get("load_profile", [{"time_s": 0, "load_frac": 1.0}]),
                                   params.i_max)
        return ScenarioConfig(
            params=params, ambient=ambient, schedule=schedule,
            controller=data.get("controller", "pid"), t_set=t_set,
            duration=float(data.get("duration_s", 6 * 3600.0)),
            dt=float(data.get("dt_s", 1.0)),
            log_interval=float(data.get("log_interval_s", 10.0)),
            pid=pid, feedforward=ff, mpc=mpc,
            cold_start=bool(data.get("cold_start", False)),
            output=data.get("output"), preset=name,
        )
    except ConfigError:
        raise
    except (AelthermError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, preset_name=None):
    """Read a YAML scenario file."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} does not parse: {exc}") from exc
    return config_from_dict(data or {}, preset_name)


def lab_step_config(controller="pid", **changes):
    """Lab rig, 68 % -> 100 % load step after one hour, six hours total."""
    params, ambient = PRESETS["lab-5nm3"][0](), PRESETS["lab-5nm3"][1]
    cfg = ScenarioConfig(params=params, ambient=ambient,
                         schedule=((0.0, 0.68), (3600.0, 1.0)), controller=controller,
                         t_set=70.0, preset="lab-5nm3")
    return cfg.with_(**changes) if changes else cfg


def mw_step_config(controller="pid", t_set=90.0, **changes):
    """Large plant, 40 % for three hours, then 100 % for six."""
    params, ambient = PRESETS["mw-500nm3"][0](), PRESETS["mw-500nm3"][1]
    cfg = ScenarioConfig(params=params, ambient=ambient,
                         schedule=((0.0, 0.4), (3 * 3600.0, 1.0)),
                         controller=controller, t_set=t_set, duration=9 * 3600.0,
                         pid=PidConfig(t_set=t_set, **PID_GAINS["mw-500nm3"]),
                         preset="mw-500nm3")
    return cfg.with_(**changes) if changes else cfg


STEP_SCENARIOS = {"lab-5nm3": lab_step_config, "mw-500nm3": mw_step_config}


def default_config(preset_name="lab-5nm3", controller="pid"):
    """The preset's load-step scenario."""
    try:
        return STEP_SCENARIOS[preset_name](controller)
    except KeyError:
        raise ConfigError(f"unknown preset {preset_name!r}; known: {sorted(STEP_SCENARIOS)}") from None


# ---------------------------------------------------------------- controllers

def derived_feedforward(cfg):
    """Map through the steady openings at i_max and at the neutral current."""
    p, amb = cfg.params, cfg.ambient
    try:
        y_1 = solve_steady_state(p.i_max, cfg.t_set, amb, p).u
    except InfeasibleCoolingError:
        y_1 = 1.0
    i_2 = thermal_neutral_current(cfg.t_set, amb, p).current
    return FeedforwardMap(i_1=p.i_max, i_2=i_2, y_1=y_1, y_2=0.0)


def make_controller(cfg):
    if cfg.controller == "mpc":
        table = build_table(cfg.params, cfg.t_set, cfg.mpc.n_s, cfg.mpc.tau_s, cfg.ambient)
        return MpcController(MpcConfig(table, n_p=cfg.mpc.n_p, q=cfg.mpc.q, r=cfg.mpc.r,
                                       t_set=cfg.t_set))
    pid = dataclasses.replace(cfg.pid, t_set=cfg.t_set)
    if cfg.controller == "pid-i":
        fmap = cfg.feedforward
        if fmap is None:
            fmap = (FeedforwardMap() if cfg.preset == "lab-5nm3" else derived_feedforward(cfg))
        return PidController(pid, fmap)
    return PidController(pid)


# ---------------------------------------------------------------- simulation

@dataclass
class ScenarioResult:
    rows: np.ndarray
    metrics: dict
    config: ScenarioConfig = None
    # T_stack after every plant step, for metrics at full resolution
    dense_t_stack: np.ndarray = None

    @property
    def columns(self):
        return COLUMNS

    def column(self, name):
        return self.rows[:, COLUMNS.index(name)]

    def write_csv(self, target):
        """Write the rows to a path or an open text stream."""
        if hasattr(target, "write"):
            self._write_rows(target)
            return
        with open(target, "w", newline="") as fh:
            self._write_rows(fh)

    def _write_rows(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows:
            w.writerow([repr(float(v)) for v in row])


def _initial_state(cfg):
    i0 = cfg.current_at(0.0)
    if cfg.cold_start:
        t0 = cfg.ambient.t_amb
        from .plant import PlantState

        return PlantState(t0, t0, max(t0, cfg.ambient.t_c_in)), 0.0
    ss = solve_steady_state(i0, cfg.t_set, cfg.ambient, cfg.params)
    return ss.x, ss.u


def _log_row(t, cfg, state, y, current):
    v_c = valve_flow(y, cfg.params)
    inputs = PlantInputs(current, y, cfg.ambient.t_c_in, cfg.ambient.t_amb)
    hf = heat_flows(state, inputs, cfg.params, v_c=v_c)
    eta = (electrolysis_efficiency(hf["u_cell"], cfg.params.u_th)
           if current > 0 and hf["u_cell"] >= cfg.params.u_th else math.nan)
    return (t, current / cfg.params.i_max, current, state.t_stack, state.t_sep, state.t_c, y,
            v_c, hf["q_ele"], hf["q_dis_stack"], hf["q_dis_sep"], hf["u_cell"], eta)


def run_scenario(cfg):
    """Simulate ``cfg`` and return the logged rows with metrics."""
    state, u0 = _initial_state(cfg)
    p = cfg.params
    sim = PlantSimulator(p, state, valve_flow(u0, p), dt=cfg.dt)
    ctrl = make_controller(cfg)
    ctrl.reset(state, u0)
    if isinstance(ctrl, PidController) and not cfg.cold_start:
        _warm_pid(ctrl, state, cfg, u0)

    n_steps = int(round(cfg.duration / cfg.dt))
    ctrl_every = int(round(cfg.controller_period / cfg.dt))
    log_every = int(round(cfg.log_interval / cfg.dt))
    change_steps = {int(round(t / cfg.dt)) for t, _ in cfg.schedule}
    events = sorted(set(range(0, n_steps, ctrl_every)) | set(range(0, n_steps, log_every))
                    | {s for s in change_steps if s < n_steps} | {n_steps})

    rows = []
    dense = np.empty(n_steps + 1)
    dense[0] = state.t_stack
    y = u0
    n_p = cfg.mpc.n_p
    for a, b in zip(events, events[1:]):
        t = a * cfg.dt
        current = cfg.current_at(t)
        if a % ctrl_every == 0:
            future = None
            if cfg.controller == "mpc":
                future = [cfg.current_at(t + j * cfg.mpc.tau_s) for j in range(n_p)]
            y = float(ctrl(t, sim.state, current, future))
        if a % log_every == 0:
            rows.append(_log_row(t, cfg, sim.state, y, current))
        try:
            out = sim.advance(b - a, current, y, cfg.ambient.t_c_in, cfg.ambient.t_amb)
        except NumericalError as exc:
            raise NumericalError(f"scenario aborted at t={t:.0f} s: {exc}") from exc
        dense[a + 1:b + 1] = out[:, 0]
    if n_steps % log_every == 0:
        t_end = n_steps * cfg.dt
        rows.append(_log_row(t_end, cfg, sim.state, y, cfg.current_at(t_end)))
    rows = np.array(rows)
    result = ScenarioResult(rows, {}, cfg, dense)
    result.metrics = compute_metrics(result)
    result.metrics["gated_stages"] = sim.gated_count
    if cfg.controller == "mpc":
        result.metrics["qp_failures"] = ctrl.failures
    if cfg.output:
        result.write_csv(cfg.output)
    return result


def _warm_pid(ctrl, state, cfg, u0):
    """Start the PID at rest: filter on the measurement, integral holding ``u0``."""
    from .controllers import feedforward, select_measurement

    st = ctrl.state
    st.filtered = select_measurement(state, ctrl.config.measurement)
    st.prev_err = st.filtered - ctrl.config.t_set
    ff = feedforward(cfg.current_at(0.0), ctrl.fmap) if ctrl.fmap is not None else 0.0
    if ctrl.config.k_i > 0:
        st.integral = (u0 - ff - ctrl.config.k_p * st.prev_err) / ctrl.config.k_i
        # a saturated start (plant below set point with the valve closed) keeps no integral
        if u0 <= 0.0:
            st.integral = min(st.integral, 0.0)


# ---------------------------------------------------------------- metrics

def _step_time(schedule):
    """Time of the largest load increase, or None."""
    best, t_best = 0.0, None
    for (_, f0), (t1, f1) in zip(schedule, schedule[1:]):
        if f1 - f0 > best:
            best, t_best = f1 - f0, t1
    return t_best


def compute_metrics(result):
    cfg = result.config
    t = result.column("time_s")
    t_stack = result.column("t_stack_c")
    y = result.column("y_cmd")
    dense = result.dense_t_stack
    peak = float(np.max(dense)) if dense is not None else float(np.max(t_stack))
    peak_logged = float(np.max(t_stack))
    t_step = _step_time(cfg.schedule)
    lead = None
    settle = None
    if t_step is not None:
        rise = np.nonzero(y > y[0] + RISE_THRESHOLD)[0]
        if rise.size:
            lead = float(t_step - t[rise[0]])
        after = t >= t_step
        outside = after & (np.abs(t_stack - cfg.t_set) > SETTLE_BAND)
        if np.any(after):
            idx = np.nonzero(outside)[0]
            settle = float(t[idx[-1]] - t_step) if idx.size else 0.0
            if idx.size and idx[-1] == len(t) - 1:
                settle = None
    eff = {}
    bounds = [s[0] for s in cfg.schedule] + [cfg.duration]
    for (t0, frac), t1 in zip(cfg.schedule, bounds[1:]):
        mask = (t >= t0) & (t < t1)
        if np.any(mask):
            eff.setdefault(round(frac, 6), []).append(float(np.nanmean(
                result.column("efficiency_hhv")[mask])))
    return {
        "t_set": cfg.t_set,
        "peak_t_stack": peak,
        "peak_t_stack_logged": peak_logged,
        "overshoot": max(0.0, peak - cfg.t_set),
        "step_time": t_step,
        "lead_time": lead,
        "settling_time": settle,
        "mean_efficiency": {k: float(np.mean(v)) for k, v in eff.items()},
    }


def compare_controllers(cfg, controllers=CONTROLLERS):
    """Run ``cfg`` once per controller; returns {name: metrics} plus overshoot deltas."""
    report = {}
    for name in controllers:
        report[name] = run_scenario(cfg.with_(controller=name, output=None)).metrics
    if "pid" in report:
        for name in controllers:
            if name != "pid":
                report[name]["overshoot_reduction"] = (report["pid"]["overshoot"]
                                                       - report[name]["overshoot"])
    return report


# ---------------------------------------------------------------- set-point tuning

@dataclass(frozen=True)
class TuneResult:
    t_set: float
    peak: float
    evaluations: int
    result: ScenarioResult = field(repr=False, default=None)


def tune_set_point(cfg, controller=None, t_limit=95.0, bracket=(None, None), tol=0.05,
                   max_iter=40):
    """Highest set point whose peak T_stack stays at or below ``t_limit``.

    Bisection on T_set between ``bracket`` (defaults: the configured set
    point and ``t_limit``) until the peak lies within ``tol`` below the limit.
    """
    controller = controller or cfg.controller
    lo = cfg.t_set if bracket[0] is None else bracket[0]
    hi = t_limit if bracket[1] is None else bracket[1]

    def run(t_set):
        c = cfg.with_(controller=controller, t_set=t_set, output=None,
                      pid=dataclasses.replace(cfg.pid, t_set=t_set))
        return run_scenario(c)

    n = 1
    top = run(hi)
    if top.metrics["peak_t_stack"] <= t_limit:
        return TuneResult(hi, top.metrics["peak_t_stack"], n, top)
    n += 1
    try:
        best = run(lo)
    except AelthermError as exc:
        raise ConfigError(f"lower bracket T_set={lo} is not usable: {exc}") from exc
    if best.metrics["peak_t_stack"] > t_limit:
        raise ConfigError(f"peak {best.metrics['peak_t_stack']:.2f} degC exceeds {t_limit} "
                          f"degC even at T_set={lo}")
    best_t = lo
    for _ in range(max_iter):
        if t_limit - best.metrics["peak_t_stack"] <= tol:
            break
        mid = 0.5 * (lo + hi)
        res = run(mid)
        n += 1
        if res.metrics["peak_t_stack"] <= t_limit:
            lo, best, best_t = mid, res, mid
        else:
            hi = mid
        if hi - lo < 1e-4:
            break
    return TuneResult(best_t, best.metrics["peak_t_stack"], n, best)


def efficiency_report(run_a, run_b):
    """Percentage-point efficiency gain of ``run_a`` over ``run_b`` per load level."""
    ea = run_a.metrics["mean_efficiency"]
    eb = run_b.metrics["mean_efficiency"]
    return {load: 100.0 * (ea[load] - eb[load]) for load in ea if load in eb}
