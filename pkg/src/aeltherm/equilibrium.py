"""Steady states, thermal-neutral point and operating regions.

At equilibrium every delayed signal equals its current value, so the delay
terms drop out of the balances exactly.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels as K
from .errors import ConvergenceError, DomainError, InfeasibleCoolingError, InputError
from .plant import PlantState, average_temperature, cell_voltage, electrolysis_efficiency

RESIDUAL_TOL = 1e-9  # K/s
MAX_NEWTON = 60
MAX_HALVINGS = 8


@dataclass(frozen=True)
class Ambient:
    t_amb: float = 10.0
    t_c_in: float = 10.0


@dataclass(frozen=True)
class SteadyState:
    x: PlantState
    u: float
    current: float
    t_amb: float
    t_c_in: float
    saturated_low: bool = False
    residual: float = 0.0

    def as_vector(self):
        return np.array([self.x.t_stack, self.x.t_sep, self.x.t_c, self.u, self.current])


class Region(Enum):
    LOW_LOAD = "LowLoad"
    THERMAL_NEUTRAL = "ThermalNeutral"
    HIGH_LOAD = "HighLoad"


def _flow_linear(u, p):
    # the solver works on the linear valve law so u may leave [0, 1] mid-iteration
    return p.k_valve * u + p.v_leak


def steady_rhs(x, u, current, ambient, params, strict=False):
    """Delay-collapsed right-hand side h(x, u, I) in K/s.

    With ``strict`` a gated coil term (end differences not positive) yields
    NaN so that Newton line searches reject the trial point.
    """
    out = np.empty(3)
    gated = K.rhs_k(x[0], x[1], x[2], x[1], _flow_linear(u, params), current,
                    ambient.t_c_in, ambient.t_amb, params.to_array(), out)
    if strict and gated:
        out[:] = np.nan
    return out


def _fd_jacobian(fun, z, rel=1e-6):
    f0 = fun(z)
    jac = np.empty((f0.size, z.size))
    for j in range(z.size):
        h = rel * max(1.0, abs(z[j]))
        zp = z.copy()
        zm = z.copy()
        zp[j] += h
        zm[j] -= h
        jac[:, j] = (fun(zp) - fun(zm)) / (2.0 * h)
    return f0, jac


def _refine(fun, z, f, norm, extra=3):
    """A few undamped Newton steps past the tolerance, kept only while they help.

    Slow plants integrate the leftover residual for hours, so a solution just
    under the tolerance still drifts visibly.
    """
    for _ in range(extra):
        _, jac = _fd_jacobian(fun, z)
        try:
            z_try = z + np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        f_try = fun(z_try)
        if not np.all(np.isfinite(f_try)):
            break
        n_try = np.max(np.abs(f_try))
        if n_try >= norm:
            break
        z, f, norm = z_try, f_try, n_try
    return z, norm


def _damped_newton(fun, z0, what):
    z = np.array(z0, dtype=float)
    f = fun(z)
    if not np.all(np.isfinite(f)):
        raise ConvergenceError(f"{what}: residual undefined at initial guess", residual=np.inf)
    norm = np.max(np.abs(f))
    for _ in range(MAX_NEWTON):
        if norm < RESIDUAL_TOL:
            return _refine(fun, z, f, norm)
        _, jac = _fd_jacobian(fun, z)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            z_try = z + lam * step
            f_try = fun(z_try)
            n_try = np.max(np.abs(f_try)) if np.all(np.isfinite(f_try)) else np.inf
            if n_try < norm:
                break
            lam *= 0.5
        else:
            # no decrease within the halving budget; accept the smallest step if finite
            if not np.isfinite(n_try):
                break
        z, f, norm = z_try, f_try, n_try
    if norm < RESIDUAL_TOL:
        return _refine(fun, z, f, norm)
    raise ConvergenceError(f"{what}: Newton did not converge, max residual {norm:.3e} K/s",
                           residual=norm)


def _polish(fun, z0, what):
    """Newton from an accurate bracketed estimate, falling back to the estimate itself.

    Near the edge of the log-mean domain (coil outlet almost at lye
    temperature) Newton steps can leave the domain, while the nested
    bisections already meet the residual tolerance.
    """
    try:
        return _damped_newton(fun, z0, what)
    except ConvergenceError as exc:
        z = np.asarray(z0, dtype=float)
        norm = float(np.max(np.abs(fun(z))))
        if norm < RESIDUAL_TOL:
            return z, norm
        raise ConvergenceError(f"{what}: bracketed estimate leaves residual {norm:.3e} K/s",
                               residual=norm) from exc


def _coil_outlet(t_stack, t_sep, v_c, ambient, params):
    """Coil outlet temperature balancing water enthalpy rise and coil duty."""
    water_rate = v_c / 3600.0 * params.rho_w * params.cp_w
    d2 = t_sep - ambient.t_c_in
    if water_rate <= 0 or params.ka <= 0 or d2 <= 0:
        return t_stack if water_rate <= 0 else ambient.t_c_in
    lo, hi = ambient.t_c_in, t_stack
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = water_rate * (mid - ambient.t_c_in) - params.ka * K.lmtd_k(t_stack - mid, d2)
        if g > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def _physical_guess(t_stack, u, ambient, params):
    """Initial (T_sep, T_c) from a nested 1-D solve of the separator balance."""
    v_c = max(_flow_linear(u, params), 0.0)
    lye = params.lye_capacity_rate
    lo, hi = ambient.t_c_in + 1e-6, t_stack
    for _ in range(200):
        t_sep = 0.5 * (lo + hi)
        t_c = _coil_outlet(t_stack, t_sep, v_c, ambient, params)
        # the water-side balance stays well conditioned when the outlet
        # approaches the lye temperature, unlike kA*LMTD
        q_coil = v_c / 3600.0 * params.rho_w * params.cp_w * (t_c - ambient.t_c_in)
        g = 0.5 * lye * (t_stack - t_sep) - q_coil - (0.5 * (t_stack + t_sep) - ambient.t_amb) / params.r_sep
        if g > 0:
            lo = t_sep
        else:
            hi = t_sep
        if hi - lo < 1e-12:
            break
    t_sep = 0.5 * (lo + hi)
    return t_sep, _coil_outlet(t_stack, t_sep, v_c, ambient, params)


def _stack_surplus(u, current, t_set, ambient, params):
    """Stack heat left over with the separator/coil balance solved exactly at opening ``u``.

    Decreasing in ``u``: more water flow lowers T_sep and lets the lye carry
    more heat out of the stack.
    """
    p = params.to_array()
    t_sep, t_c = _physical_guess(t_set, u, ambient, params)
    tbar = 0.5 * (t_set + t_sep)
    q_ele = K.heat_production_k(current, K.cell_voltage_k(current / params.a_cell, tbar, p), p)
    surplus = (q_ele - K.stack_dissipation_k(t_set, ambient.t_amb, p)
               - params.lye_capacity_rate * (t_set - t_sep))
    return surplus, t_sep, t_c


def _bracketed_guess(current, t_set, ambient, params, u_hi=1.0):
    """(T_sep, T_c, u) by bisection on u in [0, u_hi]; None if no sign change."""
    lo, hi = 0.0, u_hi
    if _stack_surplus(lo, current, t_set, ambient, params)[0] < 0:
        return None
    if _stack_surplus(hi, current, t_set, ambient, params)[0] > 0:
        return None
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _stack_surplus(mid, current, t_set, ambient, params)[0] > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    u = 0.5 * (lo + hi)
    _, t_sep, t_c = _stack_surplus(u, current, t_set, ambient, params)
    return [t_sep, t_c, u]


def _solve_closed(current, t_guess, ambient, params):
    """Steady state with the valve closed and T_stack free."""
    no_flow = params.v_leak <= 0 or params.ka <= 0
    if no_flow:
        # no water flow: the coil settles at T_stack and carries no heat
        def fun(z):
            return steady_rhs(np.array([z[0], z[1], z[0]]), 0.0, current, ambient, params)[:2]

        z0 = [t_guess, t_guess - 2.0]
    else:
        def fun(z):
            return steady_rhs(z, 0.0, current, ambient, params, strict=True)

        z0 = [t_guess, t_guess - 2.0, ambient.t_c_in + 10.0]
    try:
        z, norm = _damped_newton(fun, z0, "closed-valve steady state")
    except ConvergenceError:
        t_stack = _closed_stack_temperature(current, ambient, params)
        t_sep, t_c = _physical_guess(t_stack, 0.0, ambient, params)
        z0 = [t_stack, t_sep] if no_flow else [t_stack, t_sep, t_c]
        z, norm = _polish(fun, z0, "closed-valve steady state")
    if no_flow:
        z = np.array([z[0], z[1], z[0]])
    return z, norm


def _closed_stack_temperature(current, ambient, params):
    """Closed-valve T_stack by bisection on the stack surplus."""
    lo = max(ambient.t_amb, ambient.t_c_in) + 1e-3
    hi = 150.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _stack_surplus(0.0, current, mid, ambient, params)[0] > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    return 0.5 * (lo + hi)


def solve_steady_state(current, t_set, ambient, params):
    """Equilibrium holding T_stack at ``t_set``, or the closed-valve one.

    Unknowns are (T_sep, T_c, u*). When the plant cannot reach ``t_set`` even
    with the valve closed, T_stack is released instead
    (``saturated_low=True``).
    """
    if not params.i_min - 1e-9 <= current <= params.i_max + 1e-9:
        raise InputError(f"current {current!r} A outside [{params.i_min}, {params.i_max}]")
    if _stack_surplus(0.0, current, t_set, ambient, params)[0] < 0:
        x, norm = _solve_closed(current, t_set, ambient, params)
        return SteadyState(PlantState.from_array(x), 0.0, float(current), ambient.t_amb,
                           ambient.t_c_in, saturated_low=True, residual=norm)
    if _stack_surplus(1.0, current, t_set, ambient, params)[0] > 0:
        raise InfeasibleCoolingError(
            f"holding {t_set} degC at I={current} A needs a valve opening above 1"
        )

    def fun(z):
        return steady_rhs(np.array([t_set, z[0], z[1]]), z[2], current, ambient, params,
                          strict=True)

    what = f"steady state at I={current} A"
    try:
        z, norm = _damped_newton(fun, [t_set - 5.0, ambient.t_c_in + 10.0, 0.1], what)
        if not -1e-9 <= z[2] <= 1.0 + 1e-9:
            raise ConvergenceError(f"{what}: Newton left the valve range", residual=norm)
    except ConvergenceError:
        z, norm = _polish(fun, _bracketed_guess(current, t_set, ambient, params), what)
    u = float(min(max(z[2], 0.0), 1.0))
    return SteadyState(PlantState(float(t_set), float(z[0]), float(z[1])), u,
                       float(current), ambient.t_amb, ambient.t_c_in, residual=norm)


def closed_valve_balance(t_set, ambient, params, with_leakage=True):
    """Separator/coil equilibrium with T_stack = ``t_set`` and the valve closed.

    With the valve closed the separator and coil balances do not involve the
    current, so (T_sep, T_c) and the total heat the plant sheds at the set
    point are fixed by ``t_set`` and the ambient alone. By default the
    leakage flow of a closed valve still passes the coil; with
    ``with_leakage=False`` there is no water flow at all.
    Returns (t_sep, t_c, q_removed) with q_removed in W.
    """
    if not with_leakage or params.v_leak <= 0 or params.ka <= 0:
        def fun1(z):
            return steady_rhs(np.array([t_set, z[0], t_set]), 0.0, 0.0, ambient, params)[1:2]

        z, _ = _damped_newton(fun1, [t_set - 2.0], "closed-valve separator balance")
        t_sep, t_c = z[0], t_set
    else:
        def fun2(z):
            return steady_rhs(np.array([t_set, z[0], z[1]]), 0.0, 0.0, ambient, params,
                              strict=True)[1:]

        try:
            z, _ = _damped_newton(fun2, [t_set - 2.0, ambient.t_c_in + 10.0],
                                  "closed-valve separator balance")
        except ConvergenceError:
            z, _ = _polish(fun2, list(_physical_guess(t_set, 0.0, ambient, params)),
                                  "closed-valve separator balance")
        t_sep, t_c = z
    p = params.to_array()
    q_removed = (K.stack_dissipation_k(t_set, ambient.t_amb, p)
                 + params.lye_capacity_rate * (t_set - t_sep))
    return float(t_sep), float(t_c), float(q_removed)


def _heat_at(current, t_set, t_sep, params):
    tbar = average_temperature(t_set, t_sep)
    u = cell_voltage(current / params.a_cell, tbar, params)
    return K.heat_production_k(current, u, params.to_array())


@dataclass(frozen=True)
class NeutralPoint:
    current: float
    load_fraction: float
    # 'inside', 'below' (self-heating even at I=0) or 'above' (never self-heating)
    boundary: str = "inside"


def thermal_neutral_current(t_set, ambient, params, tol=1e-6, with_leakage=True):
    """Current at which the plant with the valve closed settles exactly at ``t_set``."""
    t_sep, _, q_removed = closed_valve_balance(t_set, ambient, params, with_leakage)

    def surplus(i):
        return _heat_at(i, t_set, t_sep, params) - q_removed

    lo, hi = 0.0, params.i_max
    f_lo, f_hi = surplus(lo), surplus(hi)
    if f_lo >= 0:
        return NeutralPoint(0.0, 0.0, "below")
    if f_hi <= 0:
        return NeutralPoint(params.i_max, 1.0, "above")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if surplus(mid) > 0:
            hi = mid
        else:
            lo = mid
    i_th = 0.5 * (lo + hi)
    return NeutralPoint(i_th, i_th / params.i_max)


def heat_balance_at_set_point(current, t_set, ambient, params):
    """(Q_ele, Q_dis) at the set point with the valve closed, in W."""
    t_sep, _, q_removed = closed_valve_balance(t_set, ambient, params)
    return _heat_at(current, t_set, t_sep, params), q_removed


def classify_region(current, t_set, ambient, params, deadband=0.005):
    q_ele, q_dis = heat_balance_at_set_point(current, t_set, ambient, params)
    if abs(q_ele - q_dis) <= deadband * abs(q_ele):
        return Region.THERMAL_NEUTRAL
    return Region.LOW_LOAD if q_ele < q_dis else Region.HIGH_LOAD


@dataclass(frozen=True)
class SweepRow:
    load: float
    current: float
    q_ele: float
    q_dis: float
    u: float
    u_cell: float
    efficiency: float
    t_stack: float
    saturated_low: bool
    error: str = ""


def steady_state_sweep(loads, t_set, ambient, params):
    """Steady operating table over load fractions of ``i_max``."""
    _, _, q_dis = closed_valve_balance(t_set, ambient, params)
    rows = []
    for load in loads:
        current = float(load) * params.i_max
        try:
            ss = solve_steady_state(current, t_set, ambient, params)
        except (ConvergenceError, InfeasibleCoolingError, InputError, DomainError) as exc:
            rows.append(SweepRow(float(load), current, np.nan, q_dis, np.nan, np.nan, np.nan,
                                 np.nan, False, error=str(exc)))
            continue
        tbar = average_temperature(ss.x.t_stack, ss.x.t_sep)
        u_cell = cell_voltage(current / params.a_cell, tbar, params)
        q_ele = K.heat_production_k(current, u_cell, params.to_array())
        eta = electrolysis_efficiency(u_cell, params.u_th) if u_cell >= params.u_th else np.nan
        rows.append(SweepRow(float(load), current, q_ele, q_dis, ss.u, u_cell, eta,
                             ss.x.t_stack, ss.saturated_low))
    return rows
