"""Physical parameters of one alkaline electrolysis system."""
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ParameterError

U_TH = 1.48  # V, thermoneutral cell voltage
SIGMA_SB = 5.670e-8  # W/(m^2 K^4)

# Slot layout of the packed float64 vector handed to the compiled kernels.
(
    P_N_CELL,
    P_A_CELL,
    P_PHI_STACK,
    P_A_STACK,
    P_EPS_STACK,
    P_R_SEP,
    P_C_STACK,
    P_C_SEP,
    P_C_COIL,
    P_TAU1,
    P_TAU2,
    P_K_VALVE,
    P_V_LEAK,
    P_V_LYE,
    P_RHO_LYE,
    P_CP_LYE,
    P_RHO_W,
    P_CP_W,
    P_KA,
    P_ETA_I,
    P_R1,
    P_R2,
    P_S,
    P_T1,
    P_T2,
    P_T3,
    P_U_TH,
    P_SIGMA,
    P_U_REV,
    P_U_REV_SLOPE,
    P_DEAD_ZONE,
    N_PARAMS,
) = range(32)


@dataclass(frozen=True)
class SystemParameters:
    """Constants of one electrolysis system.

    Units: areas m^2, lengths m, capacities J/K, delays s, flows m^3/h,
    densities kg/m^3, specific heats J/(kg K), ``ka`` W/K, currents A.
    The U-I coefficients follow the empirical curve with current density in
    A/m^2 and average temperature in degC.
    """

    n_cell: int
    a_cell: float
    phi_stack: float
    a_stack: float
    eps_stack: float
    r_sep: float
    c_stack: float
    c_sep: float
    c_coil: float
    tau1: float
    tau2: float
    k_valve: float
    v_leak: float
    v_lye: float
    rho_lye: float
    cp_lye: float
    rho_w: float
    cp_w: float
    ka: float
    eta_i: float
    r1: float
    r2: float
    s_coef: float
    t1: float
    t2: float
    t3: float
    i_min: float
    i_max: float
    u_th: float = U_TH
    sigma: float = SIGMA_SB
    u_rev: float = 1.229
    # dU_rev/dT in V/K around 25 degC; 0 keeps U_rev constant
    u_rev_slope: float = 0.0
    # valve commands below this threshold pass leakage flow only
    valve_dead_zone: float = 0.0

    def __post_init__(self):
        positive = (
            "n_cell", "a_cell", "phi_stack", "a_stack", "c_stack", "c_sep", "c_coil",
            "rho_lye", "cp_lye", "rho_w", "cp_w", "r_sep",
        )
        for name in positive:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} must be strictly positive, got {value!r}")
        for name in ("k_valve", "v_leak", "v_lye", "ka", "tau1", "tau2", "valve_dead_zone"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ParameterError(f"{name} must be non-negative, got {value!r}")
        if not 0 < self.eta_i <= 1:
            raise ParameterError(f"eta_i must lie in (0, 1], got {self.eta_i!r}")
        if not 0 <= self.eps_stack <= 1:
            raise ParameterError(f"eps_stack must lie in [0, 1], got {self.eps_stack!r}")
        if not 0 <= self.i_min < self.i_max:
            raise ParameterError(f"need 0 <= i_min < i_max, got {self.i_min!r}, {self.i_max!r}")

    @property
    def lye_capacity_rate(self):
        """Heat capacity rate of the circulating lye, W/K."""
        return self.v_lye / 3600.0 * self.rho_lye * self.cp_lye

    @property
    def max_delay(self):
        return max(self.tau1, self.tau2)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_array(self):
        p = np.empty(N_PARAMS)
        p[P_N_CELL] = self.n_cell
        p[P_A_CELL] = self.a_cell
        p[P_PHI_STACK] = self.phi_stack
        p[P_A_STACK] = self.a_stack
        p[P_EPS_STACK] = self.eps_stack
        p[P_R_SEP] = self.r_sep
        p[P_C_STACK] = self.c_stack
        p[P_C_SEP] = self.c_sep
        p[P_C_COIL] = self.c_coil
        p[P_TAU1] = self.tau1
        p[P_TAU2] = self.tau2
        p[P_K_VALVE] = self.k_valve
        p[P_V_LEAK] = self.v_leak
        p[P_V_LYE] = self.v_lye
        p[P_RHO_LYE] = self.rho_lye
        p[P_CP_LYE] = self.cp_lye
        p[P_RHO_W] = self.rho_w
        p[P_CP_W] = self.cp_w
        p[P_KA] = self.ka
        p[P_ETA_I] = self.eta_i
        p[P_R1] = self.r1
        p[P_R2] = self.r2
        p[P_S] = self.s_coef
        p[P_T1] = self.t1
        p[P_T2] = self.t2
        p[P_T3] = self.t3
        p[P_U_TH] = self.u_th
        p[P_SIGMA] = self.sigma
        p[P_U_REV] = self.u_rev
        p[P_U_REV_SLOPE] = self.u_rev_slope
        p[P_DEAD_ZONE] = self.valve_dead_zone
        return p

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}
