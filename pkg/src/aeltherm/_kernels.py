"""Scalar kernels for the delayed thermal model.

Everything here takes the packed parameter vector from
``SystemParameters.to_array`` and plain floats/arrays so it compiles under
numba in nopython mode. Domain violations surface as NaN; the Python layer
in ``plant`` turns them into exceptions.
"""
import math

import numpy as np

from ._jit import optional_njit
from .params import (
    P_A_CELL, P_A_STACK, P_C_COIL, P_C_SEP, P_C_STACK, P_CP_LYE, P_CP_W,
    P_DEAD_ZONE, P_EPS_STACK, P_ETA_I, P_K_VALVE, P_KA, P_N_CELL, P_PHI_STACK,
    P_R1, P_R2, P_R_SEP, P_RHO_LYE, P_RHO_W, P_S, P_SIGMA, P_T1, P_T2, P_T3,
    P_TAU1, P_TAU2, P_U_REV, P_U_REV_SLOPE, P_U_TH, P_V_LEAK, P_V_LYE,
)

KELVIN = 273.15
HOLD = 0
LINEAR = 1


@optional_njit
def cell_voltage_k(i, tbar, p):
    a = p[P_T1] + p[P_T2] / tbar + p[P_T3] / (tbar * tbar)
    arg = a * i + 1.0
    if arg <= 0.0 or tbar <= 0.0:
        return np.nan
    u_rev = p[P_U_REV] + p[P_U_REV_SLOPE] * (tbar - 25.0)
    return u_rev + (p[P_R1] + p[P_R2] * tbar) * i + p[P_S] * math.log10(arg)


@optional_njit
def heat_production_k(current, u_cell, p):
    eta = p[P_ETA_I]
    n = p[P_N_CELL]
    return (u_cell - p[P_U_TH]) * eta * current * n + (1.0 - eta) * current * u_cell * n


@optional_njit
def stack_dissipation_k(t_stack, t_amb, p):
    diff = t_stack - t_amb
    if diff == 0.0:
        return 0.0
    mag = abs(diff)
    h = 2.51 * 0.52 * (mag / p[P_PHI_STACK]) ** 0.25
    conv = math.copysign(h * p[P_A_STACK] * mag, diff)
    tk = t_stack + KELVIN
    ta = t_amb + KELVIN
    rad = p[P_SIGMA] * p[P_A_STACK] * p[P_EPS_STACK] * (tk ** 4 - ta ** 4)
    return conv + rad


@optional_njit
def lmtd_k(d1, d2):
    """Log-mean difference; NaN when either end difference is not positive."""
    if d1 <= 0.0 or d2 <= 0.0:
        return np.nan
    diff = d1 - d2
    if abs(diff) < 1e-9:
        return d1
    return diff / math.log1p(diff / d2)


@optional_njit
def valve_flow_k(y, p):
    if y < p[P_DEAD_ZONE]:
        return p[P_V_LEAK]
    return p[P_K_VALVE] * y + p[P_V_LEAK]


@optional_njit
def rhs_k(t_stack, t_sep, t_c, t_sep_delayed, v_c_delayed, current, t_c_in, t_amb, p, out):
    """Right-hand side of the three energy balances in K/s.

    Writes into ``out`` and returns 1 when the coil term was gated off
    because the log-mean difference left its domain, else 0.
    """
    tbar = 0.5 * (t_stack + t_sep)
    u_cell = cell_voltage_k(current / p[P_A_CELL], tbar, p)
    q_ele = heat_production_k(current, u_cell, p)
    q_dis_stack = stack_dissipation_k(t_stack, t_amb, p)
    q_dis_sep = (tbar - t_amb) / p[P_R_SEP]
    lye_rate = p[P_V_LYE] / 3600.0 * p[P_RHO_LYE] * p[P_CP_LYE]
    gated = 0
    dt_lm = lmtd_k(t_stack - t_c, t_sep - t_c_in)
    if dt_lm != dt_lm:
        dt_lm = 0.0
        gated = 1
    q_coil = p[P_KA] * dt_lm
    water_rate = v_c_delayed / 3600.0 * p[P_RHO_W] * p[P_CP_W]
    out[0] = (q_ele - q_dis_stack - lye_rate * (t_stack - t_sep_delayed)) / p[P_C_STACK]
    out[1] = (0.5 * lye_rate * (t_stack - t_sep) - q_coil - q_dis_sep) / p[P_C_SEP]
    out[2] = (water_rate * (t_c_in - t_c) + q_coil) / p[P_C_COIL]
    return gated


# ---------------------------------------------------------------- ring buffer

@optional_njit
def ring_lookup(times, values, head, count, tq, mode):
    """Value of a time-stamped ring buffer at ``tq``.

    ``head`` is the physical slot of the newest sample. LINEAR interpolates
    between neighbours, HOLD returns the newest sample at or before ``tq``.
    Returns NaN when ``tq`` precedes the oldest sample.
    """
    cap = times.shape[0]
    oldest = (head - count + 1) % cap
    if count == 0 or tq < times[oldest] - 1e-9:
        return np.nan
    if tq >= times[head]:
        return values[head]
    lo = 0
    hi = count - 1
    # invariant: logical lo <= tq < logical hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if times[(oldest + mid) % cap] <= tq:
            lo = mid
        else:
            hi = mid
    j0 = (oldest + lo) % cap
    if mode == HOLD:
        return values[j0]
    j1 = (oldest + hi) % cap
    t0 = times[j0]
    t1 = times[j1]
    w = (tq - t0) / (t1 - t0)
    if w < 0.0:
        w = 0.0
    return values[j0] + w * (values[j1] - values[j0])


@optional_njit
def ring_append(times, values, head, count, t, v):
    """Append a sample; returns the new (head, count). Equal times overwrite."""
    cap = times.shape[0]
    if count > 0 and abs(times[head] - t) < 1e-9:
        values[head] = v
        return head, count
    head = (head + 1) % cap
    times[head] = t
    values[head] = v
    if count < cap:
        count += 1
    return head, count


# ---------------------------------------------------------------- integrator

@optional_njit
def _delayed(times, values, head, count, t, lag, tq_stage, mode, live):
    if lag <= 0.0:
        return live
    tq = tq_stage - lag
    if tq > t:
        tq = t
    return ring_lookup(times, values, head, count, tq, mode)


@optional_njit
def rk4_step_k(x, t, dt, current, v_c_now, t_c_in, t_amb, p,
               sep_t, sep_v, sep_head, sep_count,
               flow_t, flow_v, flow_head, flow_count, x_out):
    """One classical RK4 step of the delayed model.

    The delayed separator temperature is looked up per stage at
    ``t + c*dt - tau1`` (clamped to ``t``); the delayed flow is read once at
    the step midpoint. With a zero delay the live value is used. Returns the
    number of stages in which the coil term was gated.
    """
    tau1 = p[P_TAU1]
    tau2 = p[P_TAU2]
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    xs = np.empty(3)
    gated = 0

    # the delayed flow is piecewise constant; the value in force at the step
    # midpoint serves all stages, so grid-aligned valve moves start on a step
    d_flow = _delayed(flow_t, flow_v, flow_head, flow_count, t, tau2, t + 0.5 * dt, HOLD,
                      v_c_now)
    d_sep = _delayed(sep_t, sep_v, sep_head, sep_count, t, tau1, t, LINEAR, x[1])
    gated += rhs_k(x[0], x[1], x[2], d_sep, d_flow, current, t_c_in, t_amb, p, k1)

    for j in range(3):
        xs[j] = x[j] + 0.5 * dt * k1[j]
    tm = t + 0.5 * dt
    d_sep = _delayed(sep_t, sep_v, sep_head, sep_count, t, tau1, tm, LINEAR, xs[1])
    gated += rhs_k(xs[0], xs[1], xs[2], d_sep, d_flow, current, t_c_in, t_amb, p, k2)

    for j in range(3):
        xs[j] = x[j] + 0.5 * dt * k2[j]
    d_sep = _delayed(sep_t, sep_v, sep_head, sep_count, t, tau1, tm, LINEAR, xs[1])
    gated += rhs_k(xs[0], xs[1], xs[2], d_sep, d_flow, current, t_c_in, t_amb, p, k3)

    for j in range(3):
        xs[j] = x[j] + dt * k3[j]
    te = t + dt
    d_sep = _delayed(sep_t, sep_v, sep_head, sep_count, t, tau1, te, LINEAR, xs[1])
    gated += rhs_k(xs[0], xs[1], xs[2], d_sep, d_flow, current, t_c_in, t_amb, p, k4)

    for j in range(3):
        x_out[j] = x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return gated


@optional_njit
def advance_k(x, t, dt, n_steps, current, v_c, t_c_in, t_amb, p,
              sep_t, sep_v, flow_t, flow_v, heads, dense_out):
    """Advance ``n_steps`` steps at constant inputs, updating histories in place.

    ``heads`` holds [sep_head, sep_count, flow_head, flow_count, gated].
    ``dense_out`` (n_steps x 3) receives the state after every step.
    Returns the number of completed steps; fewer than ``n_steps`` means a
    non-finite state or a history underrun stopped the loop.
    """
    x_new = np.empty(3)
    sep_head = heads[0]
    sep_count = heads[1]
    flow_head = heads[2]
    flow_count = heads[3]
    t0 = t
    done = 0
    for k in range(n_steps):
        t = t0 + k * dt
        flow_head, flow_count = ring_append(flow_t, flow_v, flow_head, flow_count, t, v_c)
        g = rk4_step_k(x, t, dt, current, v_c, t_c_in, t_amb, p,
                       sep_t, sep_v, sep_head, sep_count,
                       flow_t, flow_v, flow_head, flow_count, x_new)
        if not (np.isfinite(x_new[0]) and np.isfinite(x_new[1]) and np.isfinite(x_new[2])):
            break
        heads[4] += g
        t = t0 + (k + 1) * dt
        for j in range(3):
            x[j] = x_new[j]
            dense_out[k, j] = x_new[j]
        sep_head, sep_count = ring_append(sep_t, sep_v, sep_head, sep_count, t, x[1])
        done += 1
    heads[0] = sep_head
    heads[1] = sep_count
    heads[2] = flow_head
    heads[3] = flow_count
    return done
