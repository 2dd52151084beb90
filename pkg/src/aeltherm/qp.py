"""Dense convex QP with box constraints, solved by a primal-dual interior point method.

    minimize    0.5 x'Hx + f'x
    subject to  lower <= x <= upper

The bound constraints have a diagonal Jacobian, so every Newton system is
H + diag(d) with a positive diagonal d and is factored by Cholesky.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import InputError

SYMMETRY_TOL = 1e-12
RIDGE = 1e-10
STEP_TO_BOUNDARY = 0.995


class QpStatus(Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class BoxQp:
    h: np.ndarray
    f: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        n = h.shape[0]
        f = np.asarray(self.f, dtype=float).reshape(n)
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if h.shape != (n, n) or n < 1:
            raise InputError(f"H must be square and non-empty, got shape {h.shape}")
        scale = max(1.0, np.max(np.abs(h)))
        if np.max(np.abs(h - h.T)) > SYMMETRY_TOL * scale:
            raise InputError("H is not symmetric")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(f))):
            raise InputError("H and f must be finite")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InputError("bounds must be finite")
        if np.any(lower > upper):
            raise InputError("lower bound exceeds upper bound")
        object.__setattr__(self, "h", 0.5 * (h + h.T))
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self):
        return self.f.size

    def objective(self, x):
        return 0.5 * x @ self.h @ x + self.f @ x


@dataclass
class QpSolution:
    x: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    kkt_residual: float
    iterations: int
    status: QpStatus
    # merit value after every iteration
    history: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status is QpStatus.OPTIMAL


def kkt_residual(problem, x, z_lower=None, z_upper=None):
    """Max of stationarity, bound violation and complementarity (infinity norms)."""
    x = np.asarray(x, dtype=float)
    n = problem.n
    zl = np.zeros(n) if z_lower is None else np.asarray(z_lower, dtype=float)
    zu = np.zeros(n) if z_upper is None else np.asarray(z_upper, dtype=float)
    stat = problem.h @ x + problem.f - zl + zu
    sl = x - problem.lower
    su = problem.upper - x
    primal = max(0.0, -np.min(sl), -np.min(su))
    dual = max(0.0, -np.min(zl), -np.min(zu))
    comp = np.max(np.abs(np.concatenate([sl * zl, su * zu])))
    return float(max(np.max(np.abs(stat)), primal, dual, comp))


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _factor(m):
    try:
        return cho_factor(m)
    except LinAlgError:
        # PSD Hessians can lose definiteness to rounding; a tiny ridge restores it
        return cho_factor(m + RIDGE * max(1.0, np.max(np.abs(np.diag(m)))) * np.eye(m.shape[0]))


def solve_box_qp(problem, tol=1e-9, max_iter=100):
    """Primal-dual interior point with Mehrotra predictor-corrector steps.

    Starts at the box midpoint with unit multipliers. Converges when the
    scaled stationarity residual and the complementarity gap fall below
    ``tol``. Variables with equal bounds are fixed and eliminated.
    """
    n = problem.n
    fixed = problem.lower == problem.upper
    free = ~fixed
    x = 0.5 * (problem.lower + problem.upper)
    zl_full = np.zeros(n)
    zu_full = np.zeros(n)
    if not np.any(free):
        g = problem.h @ x + problem.f
        zl_full, zu_full = np.maximum(g, 0.0), np.maximum(-g, 0.0)
        return QpSolution(x, zl_full, zu_full, kkt_residual(problem, x, zl_full, zu_full), 0,
                          QpStatus.OPTIMAL)

    h = problem.h[np.ix_(free, free)]
    f = problem.f[free] + problem.h[np.ix_(free, fixed)] @ x[fixed]
    lo, hi = problem.lower[free], problem.upper[free]
    scale = 1.0 + max(np.max(np.abs(h)), np.max(np.abs(f)))
    xf = x[free].copy()
    zl = np.ones(xf.size)
    zu = np.ones(xf.size)
    m = 2 * xf.size
    status = QpStatus.MAX_ITER
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        sl = xf - lo
        su = hi - xf
        rd = h @ xf + f - zl + zu
        mu = (sl @ zl + su @ zu) / m
        merit = max(np.max(np.abs(rd)) / scale, mu)
        history.append(float(merit))
        if np.max(np.abs(rd)) <= tol * scale and max(np.max(sl * zl), np.max(su * zu)) <= tol:
            status = QpStatus.OPTIMAL
            it -= 1
            break
        dl = zl / sl
        du = zu / su
        try:
            fac = _factor(h + np.diag(dl + du))
        except LinAlgError:
            status = QpStatus.DEGENERATE
            break

        def direction(rcl, rcu):
            dx = cho_solve(fac, -rd + rcl / sl - rcu / su)
            dzl = (rcl - zl * dx) / sl
            dzu = (rcu + zu * dx) / su
            return dx, dzl, dzu

        # predictor
        dx_a, dzl_a, dzu_a = direction(-sl * zl, -su * zu)
        a_p = min(_max_step(sl, dx_a), _max_step(su, -dx_a))
        a_d = min(_max_step(zl, dzl_a), _max_step(zu, dzu_a))
        mu_aff = ((sl + a_p * dx_a) @ (zl + a_d * dzl_a)
                  + (su - a_p * dx_a) @ (zu + a_d * dzu_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector with centering
        rcl = sigma * mu - sl * zl - dx_a * dzl_a
        rcu = sigma * mu - su * zu + dx_a * dzu_a
        dx, dzl, dzu = direction(rcl, rcu)
        a_p = STEP_TO_BOUNDARY * min(_max_step(sl, dx), _max_step(su, -dx))
        a_d = STEP_TO_BOUNDARY * min(_max_step(zl, dzl), _max_step(zu, dzu))
        a_p = min(a_p, 1.0)
        a_d = min(a_d, 1.0)
        xf = xf + a_p * dx
        zl = zl + a_d * dzl
        zu = zu + a_d * dzu
        if not (np.all(np.isfinite(xf)) and np.all(np.isfinite(zl)) and np.all(np.isfinite(zu))):
            status = QpStatus.DEGENERATE
            break

    x[free] = np.clip(xf, lo, hi)
    zl_full[free] = zl
    zu_full[free] = zu
    g = problem.h @ x + problem.f
    zl_full[fixed] = np.maximum(g[fixed], 0.0)
    zu_full[fixed] = np.maximum(-g[fixed], 0.0)
    res = kkt_residual(problem, x, zl_full, zu_full)
    if status is QpStatus.OPTIMAL:
        polished = _polish(problem, x, zl_full, zu_full)
        if polished is not None and polished[3] <= res:
            x, zl_full, zu_full, res = polished
    return QpSolution(x, zl_full, zu_full, res, it, status, history)


def _polish(problem, x, zl, zu):
    """Solve the equality QP on the active set guessed from the interior point.

    Bounds that are active with zero multiplier are only approached like
    sqrt(mu) by the interior iterates; the reduced solve puts them exactly on
    the bound. Returns None when the guess is inconsistent.
    """
    at_lo = (x - problem.lower) < zl
    at_hi = ~at_lo & ((problem.upper - x) < zu)
    free = ~(at_lo | at_hi)
    xp = np.where(at_lo, problem.lower, np.where(at_hi, problem.upper, x))
    if np.any(free):
        act = ~free
        rhs = -(problem.f[free] + problem.h[np.ix_(free, act)] @ xp[act])
        try:
            xp[free] = cho_solve(_factor(problem.h[np.ix_(free, free)]), rhs)
        except LinAlgError:
            return None
        if np.any(xp[free] < problem.lower[free]) or np.any(xp[free] > problem.upper[free]):
            return None
    g = problem.h @ xp + problem.f
    zlp = np.where(at_lo, g, 0.0)
    zup = np.where(at_hi, -g, 0.0)
    return xp, zlp, zup, kkt_residual(problem, xp, zlp, zup)


def dump_problem(path, problem, solution=None):
    """Write H, f, bounds and (optionally) the solution as plain text."""
    with open(path, "w") as fh:
        fh.write(f"# box qp n={problem.n}\n# H\n")
        np.savetxt(fh, problem.h, fmt="%.17g")
        for name, vec in (("f", problem.f), ("lower", problem.lower), ("upper", problem.upper)):
            fh.write(f"# {name}\n")
            np.savetxt(fh, vec[None, :], fmt="%.17g")
        if solution is not None:
            fh.write(f"# x status={solution.status.value} iterations={solution.iterations} "
                     f"kkt={solution.kkt_residual:.3e}\n")
            np.savetxt(fh, solution.x[None, :], fmt="%.17g")
