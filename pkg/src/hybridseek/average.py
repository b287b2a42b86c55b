"""Average systems and Lyapunov evaluators, used as test oracles.

Dropping the O(a) remainder of the probe expansion turns each dithered
system into an ordinary hybrid system over (y1, y2, y3) driven by the true
gradient: the momentum cases average to a restarted Nesterov-type flow, the
constrained cases to primal-dual gradient flows.  These systems, and the
Lyapunov functions that certify them, never run inside the algorithms; they
exist to check trajectories and decrease properties in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algorithms import CASES, HaesConfig
from .costs import ConstraintData, CostProblem
from .errors import ConfigError, InvalidInputError
from .hybrid import HybridArc, HybridSystem


@dataclass
class AverageState:
    """State of an average system: primal y1, momentum/dual y2, timer y3."""

    y1: np.ndarray
    y2: np.ndarray
    y3: float

    @staticmethod
    def from_vector(v: np.ndarray, n: int, m: int) -> "AverageState":
        return AverageState(y1=np.asarray(v[:n], dtype=float),
                            y2=np.asarray(v[n : n + m], dtype=float),
                            y3=float(v[n + m]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.y1), np.atleast_1d(self.y2), [self.y3]])


def build_average(
    case: str,
    cfg: HaesConfig,
    cost: CostProblem,
    con: Optional[ConstraintData] = None,
) -> HybridSystem:
    """Average hybrid system of the given case, sharing the timer structure.

    The half-power of the probe average is already absorbed: the momentum
    drift is -2*k2*y3*grad(phi) (cases 1-2, with k2 := k in case 2) and the
    primal drift of the constrained cases is -grad(phi) - <constraint terms>.
    grad_es averages to plain gradient descent -k*grad(phi).
    """
    if case not in CASES:
        raise ConfigError(f"case in {CASES}")
    grad = cost.require_grad()
    n = cost.n
    if case in ("case1", "case2"):
        cfg.validate(cost)
        m = n
    elif case == "grad_es":
        m = 0
    else:
        if con is None:
            raise ConfigError("constraint data required for cases 3 and 4")
        cfg.validate(cost, con)
        m = con.m
    i_tau = n + m
    dim = n + m + 1
    lo, hi = cfg.t_min, cfg.t_max
    jumping = case in ("case1", "case2")

    if case == "case1":
        k1, k2 = cfg.k1, cfg.k2

        def flow_map(v):
            out = np.zeros(dim)
            g = grad(v[0:n])
            out[0:n] = (2.0 / v[i_tau]) * (v[n : n + m] - v[0:n])
            if k1 != 0.0:
                out[0:n] -= k1 * g
            out[n : n + m] = -2.0 * k2 * v[i_tau] * g
            out[i_tau] = cfg.f_tau
            return out

        def jump_map(v):
            out = v.copy()
            out[i_tau] = cfg.t_min
            return out

    elif case == "case2":
        k = cfg.k

        def flow_map(v):
            out = np.zeros(dim)
            out[0:n] = (2.0 / v[i_tau]) * (v[n : n + m] - v[0:n])
            out[n : n + m] = -2.0 * k * v[i_tau] * grad(v[0:n])
            out[i_tau] = cfg.f_tau
            return out

        def jump_map(v):
            out = v.copy()
            out[n : n + m] = v[0:n]
            out[i_tau] = cfg.t_min
            return out

    elif case == "case3":
        A, b = con.A, con.b
        k = cfg.k

        def flow_map(v):
            out = np.zeros(dim)
            out[0:n] = -grad(v[0:n]) - k * (A.T @ v[n : n + m])
            out[n : n + m] = A @ v[0:n] - b
            return out

        jump_map = None

    elif case == "case4":
        A, b = con.A, con.b
        k = cfg.k

        def flow_map(v):
            out = np.zeros(dim)
            x2 = v[n : n + m]
            hvec = np.maximum(A @ v[0:n] - b + x2, 0.0)
            out[0:n] = -grad(v[0:n]) - k * (A.T @ hvec)
            out[n : n + m] = hvec - x2
            return out

        jump_map = None

    else:  # grad_es
        k = cfg.k

        def flow_map(v):
            out = np.zeros(dim)
            out[0:n] = -k * grad(v[0:n])
            return out

        jump_map = None

    if jumping:
        t_med = cfg.t_med

        def in_jump_set(v):
            return v[i_tau] >= t_med - 1e-12

        def in_flow_set(v):
            return lo - 1e-12 <= v[i_tau] <= hi

        window = (cfg.t_med, cfg.t_max)
    else:

        def in_jump_set(v):
            return False

        def in_flow_set(v):
            return True

        def jump_map(v):  # noqa: F811 - unreachable, jump set is empty
            return v.copy()

        window = None

    return HybridSystem(
        dim=dim,
        flow_map=flow_map,
        jump_map=jump_map,
        in_flow_set=in_flow_set,
        in_jump_set=in_jump_set,
        timer_index=i_tau,
        jump_window=window,
        extras={"kind": "average", "case": case, "cfg": cfg, "cost": cost, "con": con,
                "n": n, "m": m, "i_tau": i_tau},
    )


def nesterov_rhs(
    s: np.ndarray,
    sdot: np.ndarray,
    tau: float,
    taudot: float,
    k1: float,
    k2: float,
    cost: CostProblem,
) -> np.ndarray:
    """Acceleration of the equivalent second-order ODE of the case-1 average.

    Solves for sddot in
      sddot + (2 + taudot) sdot / tau + 4 k2 grad(s)
            + k1 (hess(s)^T sdot + (taudot / tau) grad(s)) = 0.
    """
    if not tau > 0:
        raise InvalidInputError("tau > 0")
    s = np.asarray(s, dtype=float)
    sdot = np.asarray(sdot, dtype=float)
    g = cost.require_grad()(s)
    out = -(2.0 + taudot) * sdot / tau - 4.0 * k2 * g
    if k1 != 0.0:
        H = cost.require_hess()(s)
        out = out - k1 * (H.T @ sdot + (taudot / tau) * g)
    return out


def momentum_from_velocity(s: np.ndarray, sdot: np.ndarray, tau: float,
                           k1: float, cost: CostProblem) -> np.ndarray:
    """Inverse of the order-reduction map: y2 = s + tau (sdot + k1 grad(s)) / 2."""
    g = cost.require_grad()(np.asarray(s, dtype=float)) if k1 != 0.0 else 0.0
    return np.asarray(s, dtype=float) + 0.5 * tau * (np.asarray(sdot, dtype=float) + k1 * g)


def velocity_from_momentum(y: AverageState, k1: float, cost: CostProblem) -> np.ndarray:
    """Velocity of the equivalent second-order form at an average state."""
    sdot = (2.0 / y.y3) * (y.y2 - y.y1)
    if k1 != 0.0:
        sdot = sdot - k1 * cost.require_grad()(y.y1)
    return sdot


def lyapunov_case1(y: AverageState, cfg: HaesConfig, cost: CostProblem) -> float:
    """Decrease certificate for the case-1 average system.

    Timer rate 1/2 uses
      V = |y2 - y1|^2 / 4 + |y2 - z*|^2 / 4 + k2 y3^2 (phi(y1) - phi*),
    timer rate 1 uses
      V = |y2 - z*|^2 / 2 + k2 y3^2 (phi(y1) - phi*).
    Only singleton-minimizer costs are supported.
    """
    phi_star, z_star = cost.require_target()
    gap = float(cost.phi(y.y1)) - phi_star
    if cfg.f_tau == 1.0:
        return 0.5 * float(np.sum((y.y2 - z_star) ** 2)) + cfg.k2 * y.y3**2 * gap
    return (
        0.25 * float(np.sum((y.y2 - y.y1) ** 2))
        + 0.25 * float(np.sum((y.y2 - z_star) ** 2))
        + cfg.k2 * y.y3**2 * gap
    )


def lyapunov_case1_jump_delta(y: AverageState, cfg: HaesConfig, cost: CostProblem) -> float:
    """Closed-form change of the case-1 V across a jump (always <= 0).

    The jump keeps (y1, y2) and resets the timer, so only the timer-weighted
    sub-optimality term changes: delta = -k2 (phi(y1) - phi*) (y3^2 - T_min^2).
    """
    phi_star, _ = cost.require_target()
    gap = float(cost.phi(y.y1)) - phi_star
    return -cfg.k2 * gap * (y.y3**2 - cfg.t_min**2)


def lyapunov_case2(
    y: AverageState, cfg: HaesConfig, cost: CostProblem
) -> tuple[float, float, float]:
    """Case-2 V plus its quadratic sandwich bounds (V, lower, upper).

    Uses the timer-rate-1/2 form with gain k; the bounds are
    c_lo d^2 <= V <= c_hi d^2 for d^2 = |y1 - z*|^2 + |y2 - z*|^2 with
    c_lo = 0.25 min(1, 2 k T_min^2 theta) and c_hi = max(3, 6 k T_max^2 L).
    """
    if cost.theta is None or cost.lips is None:
        raise InvalidInputError("case-2 bounds need theta and lips")
    phi_star, z_star = cost.require_target()
    gap = float(cost.phi(y.y1)) - phi_star
    v = (
        0.25 * float(np.sum((y.y2 - y.y1) ** 2))
        + 0.25 * float(np.sum((y.y2 - z_star) ** 2))
        + cfg.k * y.y3**2 * gap
    )
    d2 = float(np.sum((y.y1 - z_star) ** 2) + np.sum((y.y2 - z_star) ** 2))
    c_lo = 0.25 * min(1.0, 2.0 * cfg.k * cfg.t_min**2 * cost.theta)
    c_hi = max(3.0, 6.0 * cfg.k * cfg.t_max**2 * cost.lips)
    return v, c_lo * d2, c_hi * d2


def lyapunov_along_arc(
    arc: HybridArc, system: HybridSystem, kind: str = "case1"
) -> list[np.ndarray]:
    """V evaluated at every stored sample, one array per segment."""
    cfg: HaesConfig = system.extras["cfg"]
    cost: CostProblem = system.extras["cost"]
    n, m = system.extras["n"], system.extras["m"]
    out = []
    for seg in arc.segments:
        vals = np.empty(len(seg.t))
        for i, row in enumerate(seg.states):
            y = AverageState.from_vector(row, n, m)
            if kind == "case1":
                vals[i] = lyapunov_case1(y, cfg, cost)
            elif kind == "case2":
                vals[i] = lyapunov_case2(y, cfg, cost)[0]
            else:
                raise InvalidInputError(f"unknown Lyapunov kind {kind!r}")
        out.append(vals)
    return out
