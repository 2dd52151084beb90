"""Gain-scheduled linear discrete-time model built around steady states.

Each grid point holds the ZOH-discretized Jacobians of the plant at the
equilibrium for that current and the offset term that turns the deviation
model into an affine one:

    x[k+1] = A_d1 x[k] + A_d2 x[k-m1] + B_d u[k-m2] + E_d I[k] + e

The stack balance sees the separator temperature through the lye loop
delay. That delayed sample is held over a sampling period like an input, so
A_d1 is the exponential of the undelayed part of the Jacobian and A_d2 (only
its separator column is nonzero) is the held-input response to it. With
equal current and delayed states, A_d = A_d1 + A_d2 reproduces the
equilibrium exactly.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import _kernels as K
from .equilibrium import Ambient, SteadyState, solve_steady_state, steady_rhs
from .errors import AelthermError, InputError, NumericalError
from .plant import PlantState

FD_REL_STEP = 1e-6


def current_grid(i_min, i_max, n_s):
    """``n_s`` equally spaced currents; index 0 is ``i_min``, index n_s-1 is ``i_max``."""
    if n_s < 2:
        raise InputError(f"need at least two grid points, got {n_s}")
    grid = i_min + (i_max - i_min) * np.arange(n_s) / (n_s - 1)
    grid[0], grid[-1] = i_min, i_max
    return grid


def jacobian_fd(fun, x, u, current, rel=FD_REL_STEP):
    """Central-difference Jacobians of ``fun(x, u, I)`` w.r.t. x, u and I.

    The step for each variable is ``rel * max(|value|, 1)``.
    """
    x = np.asarray(x, dtype=float)
    z = np.concatenate([x, [u, current]])
    n = x.size
    cols = []
    for j in range(z.size):
        h = rel * max(abs(z[j]), 1.0)
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        fp = np.asarray(fun(zp[:n], zp[n], zp[n + 1]), dtype=float)
        fm = np.asarray(fun(zm[:n], zm[n], zm[n + 1]), dtype=float)
        cols.append((fp - fm) / (2.0 * h))
    jac = np.column_stack(cols)
    return jac[:, :n], jac[:, n:n + 1], jac[:, n + 1:n + 2]


def jacobians(steady, params):
    """(A, B, E) of the delay-collapsed plant at ``steady``."""
    ambient = Ambient(steady.t_amb, steady.t_c_in)

    def h(x, u, current):
        return steady_rhs(x, u, current, ambient, params)

    a, b, e = jacobian_fd(h, steady.x.as_array(), steady.u, steady.current)
    if not np.all(np.isfinite(a)) or not (np.all(np.isfinite(b)) and np.all(np.isfinite(e))):
        raise NumericalError(f"non-finite Jacobian at I={steady.current} A")
    if np.max(np.linalg.eigvals(a).real) >= 0:
        warnings.warn(f"linearization at I={steady.current} A is not Hurwitz", RuntimeWarning)
    return a, b, e


def delayed_jacobian(steady, params):
    """Part of A carried by the delayed separator temperature (3x3, column 1 only)."""
    ambient = Ambient(steady.t_amb, steady.t_c_in)
    p = params.to_array()
    x = steady.x.as_array()
    v_c = params.k_valve * steady.u + params.v_leak
    h = FD_REL_STEP * max(abs(x[1]), 1.0)
    fp = np.empty(3)
    fm = np.empty(3)
    K.rhs_k(x[0], x[1], x[2], x[1] + h, v_c, steady.current, ambient.t_c_in, ambient.t_amb,
            p, fp)
    K.rhs_k(x[0], x[1], x[2], x[1] - h, v_c, steady.current, ambient.t_c_in, ambient.t_amb,
            p, fm)
    a_del = np.zeros((3, 3))
    a_del[:, 1] = (fp - fm) / (2.0 * h)
    return a_del


def discretize(a, b, e, tau_s):
    """Zero-order-hold discretization through one augmented matrix exponential."""
    if tau_s <= 0:
        raise InputError("sampling period must be positive")
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    e = np.asarray(e, dtype=float).reshape(a.shape[0], -1)
    n, nb, ne = a.shape[0], b.shape[1], e.shape[1]
    m = np.zeros((n + nb + ne, n + nb + ne))
    m[:n, :n] = a
    m[:n, n:n + nb] = b
    m[:n, n + nb:] = e
    phi = expm(m * tau_s)
    if not np.all(np.isfinite(phi)):
        raise NumericalError("matrix exponential produced non-finite entries")
    return phi[:n, :n], phi[:n, n:n + nb], phi[:n, n + nb:]


def split_delay(a, a_del, b, e, tau_s):
    """(A_d1, A_d2, B_d, E_d) with the delayed separator sample held over the period.

    ``a`` is the delay-collapsed Jacobian and ``a_del`` its delayed part.
    """
    a = np.asarray(a, dtype=float)
    a_del = np.asarray(a_del, dtype=float)
    held = np.column_stack([a_del[:, 1], np.asarray(b, dtype=float).reshape(3),
                            np.asarray(e, dtype=float).reshape(3)])
    a_d1, gam, _ = discretize(a - a_del, held, np.zeros((3, 0)), tau_s)
    a_d2 = np.zeros((3, 3))
    a_d2[:, 1] = gam[:, 0]
    return a_d1, a_d2, gam[:, 1:2], gam[:, 2:3]


def offset_term(a_d, b_d, e_d, x_star, u_star, i_star):
    x_star = np.asarray(x_star, dtype=float)
    return x_star - (a_d @ x_star + b_d.ravel() * u_star + e_d.ravel() * i_star)


@dataclass(frozen=True)
class LpvEntry:
    s: int
    current: float
    steady: SteadyState
    a: np.ndarray
    b: np.ndarray
    e_mat: np.ndarray
    a_d: np.ndarray
    a_d1: np.ndarray
    a_d2: np.ndarray
    b_d: np.ndarray
    e_d: np.ndarray
    e: np.ndarray

    @property
    def x_star(self):
        return self.steady.x.as_array()

    @property
    def u_star(self):
        return self.steady.u

    def step(self, x_k, x_delayed, u_delayed, current):
        """One step of the affine delayed model."""
        return (self.a_d1 @ x_k + self.a_d2 @ x_delayed + self.b_d.ravel() * u_delayed
                + self.e_d.ravel() * current + self.e)


@dataclass(frozen=True)
class LpvTable:
    entries: tuple
    tau_s: float
    m1: int
    m2: int
    t_set: float
    ambient: Ambient

    @property
    def i_min(self):
        return self.entries[0].current

    @property
    def i_max(self):
        return self.entries[-1].current

    @property
    def n_s(self):
        return len(self.entries)

    def index_of(self, i_ref):
        return index_of(i_ref, self)

    def lookup(self, i_ref):
        return self.entries[index_of(i_ref, self)]


def delay_steps(tau, tau_s):
    ratio = tau / tau_s
    m = int(round(ratio))
    if abs(ratio - m) > 0.25:
        warnings.warn(f"delay {tau} s is not close to a multiple of {tau_s} s", RuntimeWarning)
    return m


class LpvBuildError(AelthermError, RuntimeError):
    """A grid point has no steady state."""


def build_entry(s, current, t_set, ambient, params, tau_s):
    steady = solve_steady_state(current, t_set, ambient, params)
    a, b, e_mat = jacobians(steady, params)
    a_d1, a_d2, b_d, e_d = split_delay(a, delayed_jacobian(steady, params), b, e_mat, tau_s)
    a_d = a_d1 + a_d2
    e = offset_term(a_d, b_d, e_d, steady.x.as_array(), steady.u, current)
    return LpvEntry(s, float(current), steady, a, b, e_mat, a_d, a_d1, a_d2, b_d, e_d, e)


def build_table(params, t_set, n_s, tau_s, ambient):
    entries = []
    for s, current in enumerate(current_grid(params.i_min, params.i_max, n_s)):
        try:
            entries.append(build_entry(s, current, t_set, ambient, params, tau_s))
        except AelthermError as exc:
            raise LpvBuildError(f"no usable steady state at I={current:.6g} A: {exc}") from exc
    return LpvTable(tuple(entries), float(tau_s), delay_steps(params.tau1, tau_s),
                    delay_steps(params.tau2, tau_s), float(t_set), ambient)


def index_of(i_ref, table):
    """Nearest grid index for ``i_ref`` (clamped to the table range)."""
    lo, hi = table.i_min, table.i_max
    i = min(max(float(i_ref), lo), hi)
    return int(np.floor((i - lo) / (hi - lo) * (table.n_s - 1) + 0.5))


# ---------------------------------------------------------------- text export
#
# One header line ``# lpv tau_s m1 m2 t_set t_amb t_c_in`` followed by one row
# per entry with 36 numbers:
#   s, I, T_stack*, T_sep*, T_c*, u*, A_d1 (9, row-major), separator column
#   of A_d2 (3), B_d (3), E_d (3), e (3), A (9, row-major).
# The continuous B and E columns are not stored; the controller only needs
# the discrete matrices.

def export_table(table, path):
    rows = []
    for en in table.entries:
        rows.append(np.concatenate([
            [en.s, en.current], en.x_star, [en.u_star], en.a_d1.ravel(), en.a_d2[:, 1],
            en.b_d.ravel(),
            en.e_d.ravel(), en.e, en.a.ravel(),
        ]))
    header = (f"lpv {table.tau_s!r} {table.m1} {table.m2} {table.t_set!r} "
              f"{table.ambient.t_amb!r} {table.ambient.t_c_in!r}")
    np.savetxt(path, np.array(rows), header=header, fmt="%.17g")


def import_table(path):
    with open(path) as fh:
        head = fh.readline().lstrip("# ").split()
    if not head or head[0] != "lpv":
        raise InputError(f"{path}: not an LPV table file")
    tau_s, m1, m2, t_set, t_amb, t_c_in = (float(head[1]), int(head[2]), int(head[3]),
                                           float(head[4]), float(head[5]), float(head[6]))
    data = np.atleast_2d(np.loadtxt(path))
    ambient = Ambient(t_amb, t_c_in)
    entries = []
    for row in data:
        x_star = row[2:5]
        a_d1 = row[6:15].reshape(3, 3)
        a_d2 = np.zeros((3, 3))
        a_d2[:, 1] = row[15:18]
        b_d = row[18:21].reshape(3, 1)
        e_d = row[21:24].reshape(3, 1)
        e = row[24:27]
        a = row[27:36].reshape(3, 3)
        steady = SteadyState(PlantState.from_array(x_star), float(row[5]), float(row[1]),
                             t_amb, t_c_in)
        entries.append(LpvEntry(int(row[0]), float(row[1]), steady, a, np.full((3, 1), np.nan),
                                np.full((3, 1), np.nan), a_d1 + a_d2, a_d1, a_d2, b_d, e_d, e))
    return LpvTable(tuple(entries), tau_s, m1, m2, t_set, ambient)
