"""Valve controllers: filtered PID, PID with current feed-forward, and LPV-MPC.

All controllers return an opening command in [0, 1]. The error convention
is ``err = T_meas - T_set`` so that a hot stack opens the valve with
positive gains.
"""
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InputError, ParameterError
from .lpv import index_of
from .qp import BoxQp, QpStatus, dump_problem, solve_box_qp

log = logging.getLogger(__name__)


class Measurement(Enum):
    AFTER_STACK = "after-stack"
    BEFORE_STACK = "before-stack"


def select_measurement(state, measurement):
    """T_stack for after-stack feedback, T_sep for before-stack feedback."""
    if measurement is Measurement.AFTER_STACK:
        return state.t_stack
    if measurement is Measurement.BEFORE_STACK:
        return state.t_sep
    raise InputError(f"unknown measurement point {measurement!r}")


def low_pass(raw, y, t_f, tau_s):
    """One update of the first-order filter; ``t_f = 0`` passes ``raw`` through."""
    if tau_s <= 0:
        raise InputError("sampling period must be positive")
    return y + (raw - y) * tau_s / (t_f + tau_s)


# ---------------------------------------------------------------- PID family

@dataclass(frozen=True)
class PidConfig:
    k_p: float = 20.0
    k_i: float = 0.011
    k_d: float = 6000.0
    tau_s: float = 1.0
    t_f: float = 60.0
    t_set: float = 70.0
    measurement: Measurement = Measurement.AFTER_STACK
    out_min: float = 0.0
    out_max: float = 1.0

    def __post_init__(self):
        for name in ("k_p", "k_i", "k_d", "t_f", "t_set"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.tau_s <= 0 or self.t_f < 0:
            raise ParameterError("need tau_s > 0 and t_f >= 0")
        if not self.out_min < self.out_max:
            raise ParameterError("need out_min < out_max")


@dataclass
class PidState:
    filtered: float = None
    integral: float = 0.0
    prev_err: float = None
    output: float = 0.0


def pid_step(t_meas, config, state, feedforward=0.0):
    """Advance the PID by one period and return the clamped command.

    The derivative acts on the filtered error. The integral only
    accumulates while the unclamped candidate (feed-forward included) stays
    inside the output limits.
    """
    if state.filtered is None:
        state.filtered = float(t_meas)
    else:
        state.filtered = low_pass(t_meas, state.filtered, config.t_f, config.tau_s)
    err = state.filtered - config.t_set
    prev = err if state.prev_err is None else state.prev_err
    candidate = (config.k_p * err + config.k_i * state.integral
                 + config.k_d * (err - prev) / config.tau_s + feedforward)
    if config.out_min < candidate < config.out_max:
        state.integral += err * config.tau_s
    state.prev_err = err
    state.output = float(min(max(candidate, config.out_min), config.out_max))
    return state.output


@dataclass(frozen=True)
class FeedforwardMap:
    """Straight line through (I_2, y*(I_2)) and (I_1, y*(I_1))."""

    i_1: float = 720.0
    i_2: float = 520.0
    y_1: float = 0.11
    y_2: float = 0.0
    clamp_below: bool = True

    def __post_init__(self):
        if self.i_1 == self.i_2:
            raise ParameterError("feed-forward currents must differ")
        if not (0 <= self.y_1 <= 1 and 0 <= self.y_2 <= 1):
            raise ParameterError("feed-forward openings must lie in [0, 1]")


def feedforward(current, fmap):
    lo_i, lo_y = (fmap.i_2, fmap.y_2) if fmap.i_2 < fmap.i_1 else (fmap.i_1, fmap.y_1)
    if fmap.clamp_below and current <= lo_i:
        return float(lo_y)
    slope = (fmap.y_1 - fmap.y_2) / (fmap.i_1 - fmap.i_2)
    return float(min(max(fmap.y_2 + slope * (current - fmap.i_2), 0.0), 1.0))


def pid_i_step(t_meas, current, config, fmap, state):
    return pid_step(t_meas, config, state, feedforward=feedforward(current, fmap))


class PidController:
    """PID or PID-I wrapped for the scenario loop."""

    def __init__(self, config, fmap=None):
        self.config = config
        self.fmap = fmap
        self.state = PidState()

    @property
    def tau_s(self):
        return self.config.tau_s

    def reset(self, plant_state, command=0.0):
        self.state = PidState(output=command)

    def __call__(self, t, plant_state, current, future_currents=None):
        t_meas = select_measurement(plant_state, self.config.measurement)
        if self.fmap is None:
            return pid_step(t_meas, self.config, self.state)
        return pid_i_step(t_meas, current, self.config, self.fmap, self.state)


# ---------------------------------------------------------------- MPC

@dataclass(frozen=True)
class MpcConfig:
    table: object
    n_p: int = 30
    q: float = 1.0
    r: float = 300.0
    t_set: float = 70.0
    # optional directory for plain-text dumps of failed QPs
    dump_dir: str = None

    def __post_init__(self):
        if self.n_p < 1:
            raise ParameterError("prediction horizon must be at least one step")
        if self.q < 0 or self.r < 0:
            raise ParameterError("weights must be non-negative")

    @property
    def tau_s(self):
        return self.table.tau_s


@dataclass(frozen=True)
class Prediction:
    phi: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray
    e_stack: np.ndarray

    def predict(self, x_window, u_window, u_seq, currents):
        return (self.phi @ x_window + self.theta1 @ u_window + self.theta2 @ u_seq
                + self.omega @ currents + self.gamma @ self.e_stack)


def build_prediction_matrices(entries, m1, m2, n_p):
    """Condensed prediction X = Phi x' + Theta1 u' + Theta2 U + Omega I + Gamma e.

    ``entries`` holds the scheduled model for each of the ``n_p`` steps.
    x' = [x_{k-m1}, ..., x_k] stacked (3(m1+1)), u' = [u_{k-m2}, ..., u_{k-1}],
    X = [x_{k+1}, ..., x_{k+n_p}] stacked (3 n_p).
    """
    if len(entries) != n_p:
        raise InputError(f"need {n_p} scheduled entries, got {len(entries)}")
    nz = 3 * (m1 + 1)
    # coefficients of the augmented window z_i on each input block
    cz = np.eye(nz)
    c1 = np.zeros((nz, m2))
    c2 = np.zeros((nz, n_p))
    cw = np.zeros((nz, n_p))
    cg = np.zeros((nz, 3 * n_p))
    phi = np.zeros((3 * n_p, nz))
    theta1 = np.zeros((3 * n_p, m2))
    theta2 = np.zeros((3 * n_p, n_p))
    omega = np.zeros((3 * n_p, n_p))
    gamma = np.zeros((3 * n_p, 3 * n_p))
    e_stack = np.zeros(3 * n_p)
    for i, en in enumerate(entries):
        # newest block of z is x_{k+i}, oldest is x_{k+i-m1}
        a_new = np.zeros((3, nz))
        if m1 == 0:
            a_new[:, :3] = en.a_d1 + en.a_d2
        else:
            a_new[:, -3:] = en.a_d1
            a_new[:, :3] = en.a_d2
        x_z, x_1, x_2 = a_new @ cz, a_new @ c1, a_new @ c2
        x_w, x_g = a_new @ cw, a_new @ cg
        b = en.b_d.ravel()
        j = i - m2
        if j < 0:
            x_1[:, m2 + j] += b
        else:
            x_2[:, j] += b
        x_w[:, i] += en.e_d.ravel()
        x_g[:, 3 * i:3 * i + 3] += np.eye(3)
        e_stack[3 * i:3 * i + 3] = en.e
        rows = slice(3 * i, 3 * i + 3)
        phi[rows], theta1[rows], theta2[rows] = x_z, x_1, x_2
        omega[rows], gamma[rows] = x_w, x_g
        # shift the window
        cz = np.vstack([cz[3:], x_z])
        c1 = np.vstack([c1[3:], x_1])
        c2 = np.vstack([c2[3:], x_2])
        cw = np.vstack([cw[3:], x_w])
        cg = np.vstack([cg[3:], x_g])
    return Prediction(phi, theta1, theta2, omega, gamma, e_stack)


def difference_matrices(n_p, u_prev):
    m = np.eye(n_p) - np.eye(n_p, k=-1)
    n_k = np.zeros(n_p)
    n_k[0] = u_prev
    return m, n_k


@dataclass
class MpcResult:
    command: float
    u_seq: np.ndarray
    status: QpStatus
    kkt_residual: float


def mpc_qp(x_window, u_window, future_currents, config, u_prev):
    """Assemble the box QP for one control period."""
    table = config.table
    n_p = config.n_p
    currents = np.asarray(future_currents, dtype=float)[:n_p]
    if currents.size < n_p:
        raise InputError(f"need {n_p} future currents, got {currents.size}")
    entries = [table.entries[index_of(c, table)] for c in currents]
    pred = build_prediction_matrices(entries, table.m1, table.m2, n_p)
    free = pred.predict(np.ravel(x_window), np.ravel(u_window), np.zeros(n_p), currents)
    x_set = np.zeros(3 * n_p)
    x_set[0::3] = config.t_set
    qd = np.zeros(3 * n_p)
    qd[0::3] = config.q
    m, n_k = difference_matrices(n_p, u_prev)
    qt2 = qd[:, None] * pred.theta2
    h = 2.0 * (pred.theta2.T @ qt2 + config.r * m.T @ m)
    f = 2.0 * ((free - x_set) @ qt2 - config.r * n_k @ m)
    h = 0.5 * (h + h.T)
    lam_min = np.linalg.eigvalsh(h)[0]
    assert lam_min >= -1e-9 * max(1.0, np.max(np.abs(h))), "MPC Hessian is not PSD"
    return BoxQp(h, f, 0.0, 1.0)


def mpc_step(x_window, u_window, future_currents, config, u_prev):
    """Solve the MPC problem once; the first element of the optimal sequence is applied.

    On solver failure the previous command is held and a warning is logged.
    """
    problem = mpc_qp(x_window, u_window, future_currents, config, u_prev)
    sol = solve_box_qp(problem)
    if sol.status is not QpStatus.OPTIMAL:
        log.warning("MPC QP failed (%s, kkt %.2e); holding %.4f",
                    sol.status.value, sol.kkt_residual, u_prev)
        if config.dump_dir:
            import os

            os.makedirs(config.dump_dir, exist_ok=True)
            dump_problem(os.path.join(config.dump_dir, f"qp_fail_{id(sol)}.txt"), problem, sol)
        return MpcResult(float(u_prev), sol.x, sol.status, sol.kkt_residual)
    return MpcResult(float(min(max(sol.x[0], 0.0), 1.0)), sol.x, sol.status, sol.kkt_residual)


class MpcController:
    """MPC with its own state/input windows, for the scenario loop.

    Windows are pre-filled with the initial state and command, so the
    first solve sees a plant that has been at rest.
    """

    def __init__(self, config):
        self.config = config
        self.x_hist = deque(maxlen=config.table.m1 + 1)
        self.u_hist = deque(maxlen=max(config.table.m2, 1))
        self.u_prev = 0.0
        self.failures = 0
        self.last = None

    @property
    def tau_s(self):
        return self.config.tau_s

    def reset(self, plant_state, command=0.0):
        x = plant_state.as_array()
        self.x_hist.clear()
        self.u_hist.clear()
        for _ in range(self.x_hist.maxlen):
            self.x_hist.append(x.copy())
        for _ in range(self.u_hist.maxlen):
            self.u_hist.append(float(command))
        self.u_prev = float(command)
        self.failures = 0

    def __call__(self, t, plant_state, current, future_currents):
        self.x_hist.append(plant_state.as_array())
        m2 = self.config.table.m2
        u_window = list(self.u_hist)[-m2:] if m2 > 0 else []
        res = mpc_step(np.concatenate(list(self.x_hist)), np.array(u_window),
                       future_currents, self.config, self.u_prev)
        if res.status is not QpStatus.OPTIMAL:
            self.failures += 1
        self.last = res
        self.u_prev = res.command
        self.u_hist.append(res.command)
        return res.command
