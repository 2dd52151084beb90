"""Nonlinear thermal model of stack, separator and cooling coil.

Temperatures are in degC throughout; the radiation term converts to kelvin
internally. Flow rates are in m^3/h at the interface and converted to m^3/s
inside the balances.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import (
    DomainError, HeatExchangeDomainError, InitializationError, InputError,
    NumericalError, ParameterError,
)
from .params import SystemParameters

T_GUARD = (-20.0, 150.0)


@dataclass(frozen=True)
class PlantState:
    t_stack: float
    t_sep: float
    t_c: float

    def as_array(self):
        return np.array([self.t_stack, self.t_sep, self.t_c], dtype=float)

    @classmethod
    def from_array(cls, x):
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class PlantInputs:
    current: float
    y_valve: float
    t_c_in: float
    t_amb: float

    def __post_init__(self):
        if not 0.0 <= self.y_valve <= 1.0:
            raise InputError(f"valve opening must lie in [0, 1], got {self.y_valve!r}")
        if self.current < 0:
            raise InputError(f"current must be non-negative, got {self.current!r}")


def average_temperature(t_stack, t_sep):
    return 0.5 * (t_stack + t_sep)


def cell_voltage(i, tbar, params):
    """Empirical U-I curve; ``i`` in A/m^2, ``tbar`` in degC."""
    u = K.cell_voltage_k(float(i), float(tbar), params.to_array())
    if math.isnan(u):
        raise DomainError(f"U-I curve undefined at i={i!r} A/m^2, T={tbar!r} degC")
    return u


def heat_production(current, u_cell, params):
    """Electrolysis heat, W."""
    return K.heat_production_k(float(current), float(u_cell), params.to_array())


def electric_power(current, u_cell, params):
    return u_cell * current * params.n_cell


def hydrogen_power(current, params):
    """Chemical power in the hydrogen stream (HHV basis), W."""
    return params.u_th * current * params.n_cell


def stack_dissipation(t_stack, t_amb, params):
    """Natural convection plus radiation from the stack surface, W."""
    return K.stack_dissipation_k(float(t_stack), float(t_amb), params.to_array())


def separator_dissipation(tbar, t_amb, params):
    if params.r_sep <= 0:
        raise ParameterError(f"r_sep must be positive, got {params.r_sep!r}")
    return (tbar - t_amb) / params.r_sep


def lmtd(t_stack, t_sep, t_c, t_c_in):
    d1 = t_stack - t_c
    d2 = t_sep - t_c_in
    if d1 <= 0 or d2 <= 0:
        raise HeatExchangeDomainError(
            f"coil end differences must be positive: d1={d1!r} K, d2={d2!r} K"
        )
    return K.lmtd_k(d1, d2)


def valve_flow(y_valve, params):
    """Cooling water flow through the coil, m^3/h."""
    if not 0.0 <= y_valve <= 1.0:
        raise InputError(f"valve opening must lie in [0, 1], got {y_valve!r}")
    return K.valve_flow_k(float(y_valve), params.to_array())


def electrolysis_efficiency(u_cell, u_th=1.48):
    """HHV efficiency U_th / U_cell."""
    if u_cell < u_th:
        raise DomainError(f"cell voltage {u_cell!r} V is below the thermoneutral {u_th} V")
    return u_th / u_cell


def derivatives(state, t_sep_delayed, v_c_delayed, inputs, params, *, return_gated=False):
    """Time derivatives of (T_stack, T_sep, T_c) in K/s.

    ``v_c_delayed`` is the coil flow (m^3/h) seen ``tau2`` ago. When the coil
    log-mean difference leaves its domain the coil term is gated to zero.
    """
    p = params.to_array()
    out = np.empty(3)
    gated = K.rhs_k(state.t_stack, state.t_sep, state.t_c, float(t_sep_delayed),
                    float(v_c_delayed), inputs.current, inputs.t_c_in, inputs.t_amb, p, out)
    if not np.all(np.isfinite(out)):
        tbar = average_temperature(state.t_stack, state.t_sep)
        raise DomainError(
            f"U-I curve undefined at i={inputs.current / params.a_cell!r} A/m^2, T={tbar!r} degC"
        )
    if return_gated:
        return out, bool(gated)
    return out


def lumped_derivative(tbar, inputs, params, v_c=None, t_c_out=None):
    """First-order single-capacity baseline, K/s.

    Cooling demand is ``v_c * rho_w * cp_w * (t_c_out - t_c_in)``; both
    default to no cooling.
    """
    i = inputs.current / params.a_cell
    u_cell = cell_voltage(i, tbar, params)
    q_ele = heat_production(inputs.current, u_cell, params)
    q_dis = stack_dissipation(tbar, inputs.t_amb, params) + separator_dissipation(
        tbar, inputs.t_amb, params
    )
    q_cool = 0.0
    if v_c is not None and t_c_out is not None:
        q_cool = v_c / 3600.0 * params.rho_w * params.cp_w * (t_c_out - inputs.t_c_in)
    capacity = params.c_stack + params.c_sep + params.c_coil
    return (q_ele - q_dis - q_cool) / capacity


def heat_flows(state, inputs, params, v_c=None):
    """Instantaneous heat terms (W) and cell voltage at ``state``."""
    tbar = average_temperature(state.t_stack, state.t_sep)
    u_cell = cell_voltage(inputs.current / params.a_cell, tbar, params)
    if v_c is None:
        v_c = valve_flow(inputs.y_valve, params)
    d1 = state.t_stack - state.t_c
    d2 = state.t_sep - inputs.t_c_in
    q_coil = params.ka * K.lmtd_k(d1, d2) if d1 > 0 and d2 > 0 else 0.0
    return {
        "u_cell": u_cell,
        "q_ele": heat_production(inputs.current, u_cell, params),
        "q_dis_stack": stack_dissipation(state.t_stack, inputs.t_amb, params),
        "q_dis_sep": separator_dissipation(tbar, inputs.t_amb, params),
        "q_coil": q_coil,
        "q_water": v_c / 3600.0 * params.rho_w * params.cp_w * (state.t_c - inputs.t_c_in),
    }


class DelayLine:
    """Time-stamped ring buffer with interpolated lookup.

    ``mode='linear'`` interpolates between samples; ``mode='hold'`` returns
    the newest sample at or before the query time, which suits signals that
    are piecewise constant between samples (valve flow).
    """

    def __init__(self, capacity, mode="linear"):
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        if mode not in ("linear", "hold"):
            raise ValueError(f"unknown mode {mode!r}")
        self.times = np.full(capacity, np.nan)
        self.values = np.full(capacity, np.nan)
        self.head = -1 % capacity
        self.count = 0
        self.mode = mode

    @property
    def capacity(self):
        return self.times.shape[0]

    @property
    def _mode_flag(self):
        return K.LINEAR if self.mode == "linear" else K.HOLD

    @property
    def oldest_time(self):
        if self.count == 0:
            return math.nan
        return float(self.times[(self.head - self.count + 1) % self.capacity])

    @property
    def newest_time(self):
        return float(self.times[self.head]) if self.count else math.nan

    @property
    def span(self):
        return self.newest_time - self.oldest_time if self.count else 0.0

    def append(self, t, value):
        if self.count and t < self.newest_time - 1e-9:
            raise ValueError(f"sample time {t!r} precedes newest sample {self.newest_time!r}")
        self.head, self.count = K.ring_append(self.times, self.values, self.head, self.count,
                                              float(t), float(value))

    def prefill(self, t_end, value, span, dt):
        """Constant history on [t_end - span, t_end] at spacing ``dt``."""
        n = int(math.ceil(span / dt - 1e-9)) + 1
        for k in range(n, -1, -1):
            self.append(t_end - k * dt, value)

    def value_at(self, t):
        v = K.ring_lookup(self.times, self.values, self.head, self.count, float(t), self._mode_flag)
        if math.isnan(v):
            raise InitializationError(
                f"history underrun: t={t!r} precedes oldest sample {self.oldest_time!r}"
            )
        return v

    def covers(self, t_from):
        return self.count > 0 and self.oldest_time <= t_from + 1e-9

    def copy(self):
        other = DelayLine(self.capacity, self.mode)
        other.times[:] = self.times
        other.values[:] = self.values
        other.head = self.head
        other.count = self.count
        return other


def history_capacity(params, dt):
    return int(math.ceil(params.max_delay / dt)) + 8


def make_histories(state, v_c, params, dt, t0=0.0):
    """Histories pre-filled with a constant state and flow over the max delay."""
    cap = history_capacity(params, dt)
    sep = DelayLine(cap, "linear")
    flow = DelayLine(cap, "hold")
    span = params.max_delay
    sep.prefill(t0, state.t_sep, span, dt)
    flow.prefill(t0, v_c, span, dt)
    return sep, flow


def _check_state(x, t):
    lo, hi = T_GUARD
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite plant state at t={t:.1f} s")
    if np.any(x < lo) or np.any(x > hi):
        raise NumericalError(f"plant state {x.tolist()} left guard band {T_GUARD} at t={t:.1f} s")


def integrate_step(state, t, sep_history, flow_history, inputs, params, dt):
    """One RK4 step from ``t`` to ``t + dt``; appends to both histories."""
    if dt <= 0:
        raise InputError("dt must be positive")
    if params.tau1 > 0 and not sep_history.covers(t - params.tau1):
        raise InitializationError(f"T_sep history does not reach back to t={t - params.tau1!r}")
    if params.tau2 > 0 and not flow_history.covers(t - params.tau2):
        raise InitializationError(f"flow history does not reach back to t={t - params.tau2!r}")
    p = params.to_array()
    x = state.as_array()
    dense = np.empty((1, 3))
    heads = np.array([sep_history.head, sep_history.count,
                      flow_history.head, flow_history.count, 0], dtype=np.int64)
    v_c = valve_flow(inputs.y_valve, params)
    done = K.advance_k(x, float(t), float(dt), 1, inputs.current, v_c, inputs.t_c_in,
                       inputs.t_amb, p, sep_history.times, sep_history.values,
                       flow_history.times, flow_history.values, heads, dense)
    sep_history.head, sep_history.count = int(heads[0]), int(heads[1])
    flow_history.head, flow_history.count = int(heads[2]), int(heads[3])
    if done != 1:
        raise NumericalError(f"integration failed at t={t!r} s (domain error or history underrun)")
    return PlantState.from_array(dense[0])


class PlantSimulator:
    """Owns a plant state, its clock and both delay histories."""

    def __init__(self, params, state, v_c0, dt=1.0, t0=0.0):
        if dt <= 0:
            raise InputError("dt must be positive")
        self.params = params
        self.dt = float(dt)
        self.t0 = float(t0)
        self.t = float(t0)
        self.x = state.as_array()
        self._p = params.to_array()
        self.sep_history, self.flow_history = make_histories(state, v_c0, params, dt, t0)
        self._heads = np.zeros(5, dtype=np.int64)
        self.gated_count = 0
        self.steps = 0

    @property
    def state(self):
        return PlantState.from_array(self.x)

    def advance(self, n_steps, current, y_valve, t_c_in, t_amb):
        """Advance ``n_steps`` steps with inputs held; returns dense states (n_steps x 3)."""
        v_c = valve_flow(y_valve, self.params)
        return self.advance_flow(n_steps, current, v_c, t_c_in, t_amb)

    def advance_flow(self, n_steps, current, v_c, t_c_in, t_amb):
        dense = np.empty((n_steps, 3))
        h = self._heads
        h[0], h[1] = self.sep_history.head, self.sep_history.count
        h[2], h[3] = self.flow_history.head, self.flow_history.count
        h[4] = 0
        done = K.advance_k(self.x, self.t, self.dt, n_steps, float(current), float(v_c),
                           float(t_c_in), float(t_amb), self._p,
                           self.sep_history.times, self.sep_history.values,
                           self.flow_history.times, self.flow_history.values, h, dense)
        self.sep_history.head, self.sep_history.count = int(h[0]), int(h[1])
        self.flow_history.head, self.flow_history.count = int(h[2]), int(h[3])
        self.gated_count += int(h[4])
        self.steps += done
        self.t = self.t0 + self.steps * self.dt
        if done != n_steps:
            raise NumericalError(
                f"plant integration failed at t={self.t:.1f} s: domain error in the "
                f"constitutive relations or history underrun"
            )
        _check_state(self.x, self.t)
        return dense
