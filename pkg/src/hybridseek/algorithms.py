"""Builders for the accelerated extremum-seeking hybrid systems.

Five dynamics share one state layout (x1, x2, tau, mu):

- case1: momentum flow with timer restarts on a window [T_med, T_max]
  (convex costs; sub-optimality falls like 1/t^2 between restarts).
- case2: momentum flow with periodic momentum-and-timer restarts at T_max
  (strongly convex costs; geometric contraction per restart).
- case3: primal-dual flow for linear equality constraints; no jumps.
- case4: augmented primal-dual flow for inequality constraints; no jumps.
- grad_es: classic gradient-descent extremum seeking, the comparison
  baseline; no momentum, no jumps.

Every flow map touches the cost only through the zero-order probe at
z = x1 + a * mu_probe.  The oscillator part of the state advances by exact
rotation through the system's shift hook (a numeric mode integrating the
oscillator with the generic stepper exists for discretization studies).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .costs import ConstraintData, CostProblem, probe
from .dither import DitherParams, DitherState, parse_kappas
from .errors import ConfigError, InvalidInputError
from .hybrid import HybridSystem

CASES = ("case1", "case2", "case3", "case4", "grad_es")


@dataclass(frozen=True)
class StateLayout:
    """Index map for the flat state vector (x1, x2, tau, mu[, clock])."""

    n: int
    m: int
    has_clock: bool = False

    @property
    def i_tau(self) -> int:
        return self.n + self.m

    @property
    def i_mu(self) -> int:
        return self.n + self.m + 1

    @property
    def i_mu_end(self) -> int:
        return self.i_mu + 2 * self.n

    @property
    def i_clock(self) -> int:
        return self.i_mu_end

    @property
    def dim(self) -> int:
        return self.i_mu_end + (1 if self.has_clock else 0)

    def x1(self, v: np.ndarray) -> np.ndarray:
        return v[..., 0 : self.n]

    def x2(self, v: np.ndarray) -> np.ndarray:
        return v[..., self.n : self.n + self.m]

    def tau(self, v: np.ndarray):
        return v[..., self.i_tau]

    def mu(self, v: np.ndarray) -> np.ndarray:
        return v[..., self.i_mu : self.i_mu_end]

    def mu_probe(self, v: np.ndarray) -> np.ndarray:
        return v[..., self.i_mu : self.i_mu_end : 2]


@dataclass
class EsState:
    """Structured view of one extremum-seeking state."""

    x1: np.ndarray
    x2: np.ndarray
    tau: float
    mu: DitherState

    def probe_point(self, a: float) -> np.ndarray:
        return self.x1 + a * self.mu.mu[0::2]


def unpack_state(layout: StateLayout, v: np.ndarray) -> EsState:
    return EsState(
        x1=layout.x1(v).copy(),
        x2=layout.x2(v).copy(),
        tau=float(layout.tau(v)),
        mu=DitherState(layout.mu(v).copy()),
    )


@dataclass(frozen=True)
class HaesConfig:
    """Tunable parameters shared by all cases.

    a: probe amplitude; epsilon: oscillator time scale; k1/k2: damping and
    momentum gains for case1; k: gain for cases 2-4 and grad_es; the timer
    runs in [t_min, t_max] at rate f_tau with restarts allowed on
    [t_med, t_max].  mu_exact selects exact-rotation propagation of the
    oscillator (the default) versus numeric integration with renormalization
    at jumps.
    """

    case: str
    a: float
    epsilon: float
    kappas: tuple
    k1: float = 0.0
    k2: float = 1.0
    k: float = 1.0
    t_min: float = 0.01
    t_med: float = 1.0
    t_max: float = 1.0
    f_tau: float = 0.5
    jump_policy: str = "earliest"
    m: Optional[int] = None
    mu_exact: bool = True
    mu_tol: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "kappas", parse_kappas(self.kappas))

    def dither(self) -> DitherParams:
        return DitherParams(kappas=self.kappas, epsilon=self.epsilon)

    def validate(self, cost: CostProblem, con: Optional[ConstraintData] = None):
        if self.case not in CASES:
            raise ConfigError(f"case in {CASES}")
        if not self.a > 0:
            raise ConfigError("a > 0")
        if not self.epsilon > 0:
            raise ConfigError("epsilon > 0")
        if len(self.kappas) != cost.n:
            raise ConfigError("one dither frequency per primal dimension")
        if self.case in ("case1", "case2"):
            if not (0 < self.t_min < self.t_med <= self.t_max):
                raise ConfigError("0 < T_min < T_med <= T_max")
            if not self.t_med - self.t_min > 0:
                raise ConfigError("T_med - T_min > 0")
        if self.case == "case1":
            if not self.k2 > 0:
                raise ConfigError("k2 > 0")
            if self.k1 < 0:
                raise ConfigError("k1 >= 0")
            if self.f_tau not in (0.5, 1.0):
                raise ConfigError("case1 requires F_tau in {1/2, 1}")
            if self.f_tau == 0.5 and self.k1 != 0.0:
                raise ConfigError("k1 = 0 required when F_tau = 1/2")
            if self.f_tau == 1.0:
                warnings.warn(
                    "F_tau = 1 is only covered for costs with a unique minimizer; "
                    "the builder cannot verify uniqueness",
                    stacklevel=2,
                )
        if self.case == "case2":
            if not self.k > 0:
                raise ConfigError("k > 0")
            if self.f_tau != 0.5:
                raise ConfigError("case2 requires F_tau = 1/2")
            if self.k1 != 0.0:
                raise ConfigError("case2 requires k1 = 0")
            if self.t_med != self.t_max:
                raise ConfigError("case2 requires T_med = T_max")
            if cost.theta is not None and not dwell_ok(self.k, cost.theta, self.t_min, self.t_max):
                warnings.warn(
                    "restart window violates the dwell inequality "
                    "T_max^2 - T_min^2 >= 1/(2*theta*k); no contraction guarantee",
                    stacklevel=2,
                )
        if self.case in ("case3", "case4"):
            if not self.k > 0:
                raise ConfigError("k > 0")
            if con is None:
                raise ConfigError("constraint data required for cases 3 and 4")
        if self.case == "grad_es" and not self.k > 0:
            raise ConfigError("k > 0")


def dwell_ok(k: float, theta: float, t_min: float, t_max: float) -> bool:
    """Dwell inequality granting per-restart contraction for case2."""
    return t_max**2 - t_min**2 >= 1.0 / (2.0 * theta * k)


def quasi_optimal_tmax(k: float, theta: float, t_min: float = 0.0) -> float:
    """Restart threshold minimizing the per-time contraction factor."""
    if not (k > 0 and theta > 0):
        raise InvalidInputError("k > 0 and theta > 0 required")
    if t_min < 0:
        raise InvalidInputError("T_min >= 0")
    return math.e * math.sqrt(1.0 / (2.0 * k * theta) + t_min**2)


class ContractionFactors(NamedTuple):
    gamma_tilde: float
    alpha0: float
    gamma: float
    contractive: bool


def contraction_factors(cfg: HaesConfig, theta: float) -> ContractionFactors:
    """Per-restart contraction data for a case2 configuration.

    gamma_tilde bounds the sub-optimality ratio across one restart cycle,
    alpha0 the within-cycle overshoot, and gamma the Lyapunov contraction at
    jumps; gamma_tilde = 1 - gamma, and gamma_tilde in (0, 1) exactly when
    the dwell inequality holds.
    """
    if not theta > 0:
        raise InvalidInputError("theta > 0")
    if cfg.t_min == 0:
        raise InvalidInputError("alpha0 undefined for T_min = 0")
    gamma_tilde = (1.0 / (cfg.k * cfg.t_max**2)) * (1.0 / (2.0 * theta) + cfg.k * cfg.t_min**2)
    alpha0 = cfg.t_max**2 / cfg.t_min**2
    gamma = 1.0 - cfg.t_min**2 / cfg.t_max**2 - 1.0 / (2.0 * cfg.k * theta * cfg.t_max**2)
    return ContractionFactors(gamma_tilde, alpha0, gamma, 0.0 < gamma_tilde < 1.0)


def _make_shift(params: DitherParams, i_mu: int, i_mu_end: int):
    """Exact-rotation stage hook; mutates and returns its (temporary) input."""
    omegas = params.omegas()
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def shift(v: np.ndarray, dt: float) -> np.ndarray:
        cs = cache.get(dt)
        if cs is None:
            ang = omegas * dt
            cs = (np.cos(ang), np.sin(ang))
            cache[dt] = cs
        c, s = cs
        m1 = v[i_mu:i_mu_end:2].copy()
        m2 = v[i_mu + 1 : i_mu_end : 2]
        v[i_mu:i_mu_end:2] = c * m1 + s * m2
        v[i_mu + 1 : i_mu_end : 2] = -s * m1 + c * m2
        return v

    return shift


def _torus_ok(mu: np.ndarray, tol: float) -> bool:
    return bool(np.abs(np.hypot(mu[0::2], mu[1::2]) - 1.0).max() <= tol)


def _renormalize(mu: np.ndarray) -> np.ndarray:
    norms = np.hypot(mu[0::2], mu[1::2])
    out = mu.copy()
    out[0::2] /= norms
    out[1::2] /= norms
    return out


def _assemble(
    cfg: HaesConfig,
    cost: CostProblem,
    con: Optional[ConstraintData],
    disturbance: Optional[Callable[[float], float]],
) -> HybridSystem:
    """Common assembly: layout, flow/jump maps, sets, hooks."""
    n = cost.n
    if cfg.case in ("case1", "case2"):
        m = n
    elif cfg.case == "grad_es":
        m = 0
    else:
        m = con.m
    layout = StateLayout(n=n, m=m, has_clock=disturbance is not None)
    lo, hi = cfg.t_min, cfg.t_max
    i_tau = layout.i_tau
    i_mu, i_mu_end = layout.i_mu, layout.i_mu_end
    i_clock = layout.i_clock if layout.has_clock else None
    dim = layout.dim
    a = cfg.a
    e_fn = disturbance

    def probe_value(v: np.ndarray) -> float:
        p = probe(cost, v[0:n], v[i_mu:i_mu_end:2], a)
        if e_fn is not None:
            p += e_fn(v[i_clock])
        return p

    jumping = cfg.case in ("case1", "case2")
    timer_rate = cfg.f_tau if jumping else 0.0

    if cfg.case == "case1":
        c_x1 = 2.0 * cfg.k1 / a
        c_x2 = 4.0 * cfg.k2 / a

        def flow_core(v, out):
            mp = v[i_mu:i_mu_end:2]
            pm = probe_value(v) * mp
            np.subtract(v[n : n + m], v[0:n], out=out[0:n])
            out[0:n] *= 2.0 / v[i_tau]
            if c_x1 != 0.0:
                out[0:n] -= c_x1 * pm
            np.multiply(pm, -c_x2 * v[i_tau], out=out[n : n + m])

        def jump_x(v, out):
            out[0 : n + m] = v[0 : n + m]

    elif cfg.case == "case2":
        c_x2 = 4.0 * cfg.k / a

        def flow_core(v, out):
            mp = v[i_mu:i_mu_end:2]
            np.subtract(v[n : n + m], v[0:n], out=out[0:n])
            out[0:n] *= 2.0 / v[i_tau]
            np.multiply(mp, -c_x2 * v[i_tau] * probe_value(v), out=out[n : n + m])

        def jump_x(v, out):
            out[0:n] = v[0:n]
            out[n : n + m] = v[0:n]

    elif cfg.case == "case3":
        A, b = con.A, con.b
        c_pr = 2.0 / a

        def flow_core(v, out):
            mp = v[i_mu:i_mu_end:2]
            out[0:n] = -c_pr * probe_value(v) * mp - cfg.k * (A.T @ v[n : n + m])
            out[n : n + m] = A @ v[0:n] - b

        jump_x = None

    elif cfg.case == "case4":
        A, b = con.A, con.b
        c_pr = 2.0 / a

        def flow_core(v, out):
            mp = v[i_mu:i_mu_end:2]
            x2 = v[n : n + m]
            hvec = np.maximum(A @ v[0:n] - b + x2, 0.0)
            out[0:n] = -c_pr * probe_value(v) * mp - cfg.k * (A.T @ hvec)
            out[n : n + m] = hvec - x2
        jump_x = None

    else:  # grad_es
        c_pr = 2.0 * cfg.k / a

        def flow_core(v, out):
            mp = v[i_mu:i_mu_end:2]
            np.multiply(mp, -c_pr * probe_value(v), out=out[0:n])

        jump_x = None

    mu_exact = cfg.mu_exact
    if mu_exact:
        shift = _make_shift(cfg.dither(), i_mu, i_mu_end)
        omegas = None
    else:
        shift = None
        omegas = cfg.dither().omegas()

    def flow_map(v: np.ndarray) -> np.ndarray:
        out = np.zeros(dim)
        flow_core(v, out)
        out[i_tau] = timer_rate
        if not mu_exact:
            out[i_mu:i_mu_end:2] = omegas * v[i_mu + 1 : i_mu_end : 2]
            out[i_mu + 1 : i_mu_end : 2] = -omegas * v[i_mu:i_mu_end:2]
        if i_clock is not None:
            out[i_clock] = 1.0
        return out

    if jumping:

        def jump_map(v: np.ndarray) -> np.ndarray:
            out = v.copy()
            jump_x(v, out)
            out[i_tau] = cfg.t_min
            if not mu_exact:
                out[i_mu:i_mu_end] = _renormalize(v[i_mu:i_mu_end])
            return out

        t_med = cfg.t_med
        jump_eps = 1e-12

        def in_jump_set(v: np.ndarray) -> bool:
            return v[i_tau] >= t_med - jump_eps

        if mu_exact:

            def in_flow_set(v: np.ndarray) -> bool:
                return lo - 1e-12 <= v[i_tau] <= hi
        else:
            tol = cfg.mu_tol

            def in_flow_set(v: np.ndarray) -> bool:
                return lo - 1e-12 <= v[i_tau] <= hi and _torus_ok(v[i_mu:i_mu_end], tol)

    else:

        def jump_map(v: np.ndarray) -> np.ndarray:
            return v.copy()

        def in_jump_set(v: np.ndarray) -> bool:
            return False

        if mu_exact:

            def in_flow_set(v: np.ndarray) -> bool:
                return True
        else:
            tol = cfg.mu_tol

            def in_flow_set(v: np.ndarray) -> bool:
                return _torus_ok(v[i_mu:i_mu_end], tol)

    def rebuild(dist: Optional[Callable[[float], float]]) -> HybridSystem:
        return _assemble(cfg, cost, con, dist)

    return HybridSystem(
        dim=dim,
        flow_map=flow_map,
        jump_map=jump_map,
        in_flow_set=in_flow_set,
        in_jump_set=in_jump_set,
        shift=shift,
        timer_index=i_tau,
        jump_window=(cfg.t_med, cfg.t_max) if jumping else None,
        extras={
            "layout": layout,
            "cfg": cfg,
            "cost": cost,
            "con": con,
            "rebuild": rebuild,
            "disturbed": disturbance is not None,
        },
    )


def _force(cfg: HaesConfig, case: str, **overrides) -> HaesConfig:
    if cfg.case != case:
        raise ConfigError(f"config case must be {case!r}")
    return replace(cfg, **overrides) if overrides else cfg


def build_case1(cfg: HaesConfig, cost: CostProblem) -> HybridSystem:
    """Momentum dynamics with identity restarts on the window [T_med, T_max]."""
    cfg = _force(cfg, "case1")
    cfg.validate(cost)
    return _assemble(cfg, cost, None, None)


def build_case2(cfg: HaesConfig, cost: CostProblem) -> HybridSystem:
    """Momentum dynamics with periodic momentum restarts x2 <- x1 at T_max."""
    cfg = _force(cfg, "case2")
    cfg.validate(cost)
    return _assemble(cfg, cost, None, None)


def build_case3(cfg: HaesConfig, cost: CostProblem, con: ConstraintData) -> HybridSystem:
    """Primal-dual flow for equality constraints; empty jump set."""
    cfg = _force(cfg, "case3", f_tau=0.0, m=con.m)
    cfg.validate(cost, con)
    return _assemble(cfg, cost, con, None)


def build_case4(cfg: HaesConfig, cost: CostProblem, con: ConstraintData) -> HybridSystem:
    """Augmented primal-dual flow for inequality constraints; empty jump set."""
    cfg = _force(cfg, "case4", f_tau=0.0, m=con.m)
    cfg.validate(cost, con)
    return _assemble(cfg, cost, con, None)


def build_grad_es(cfg: HaesConfig, cost: CostProblem) -> HybridSystem:
    """Gradient-descent extremum seeking baseline; jump-free, frozen timer."""
    cfg = _force(cfg, "grad_es", f_tau=0.0)
    cfg.validate(cost)
    return _assemble(cfg, cost, None, None)


def build(cfg: HaesConfig, cost: CostProblem, con: Optional[ConstraintData] = None) -> HybridSystem:
    """Dispatch to the per-case builder matching cfg.case."""
    if cfg.case == "case1":
        return build_case1(cfg, cost)
    if cfg.case == "case2":
        return build_case2(cfg, cost)
    if cfg.case == "case3":
        if con is None:
            raise ConfigError("constraint data required for cases 3 and 4")
        return build_case3(cfg, cost, con)
    if cfg.case == "case4":
        if con is None:
            raise ConfigError("constraint data required for cases 3 and 4")
        return build_case4(cfg, cost, con)
    if cfg.case == "grad_es":
        return build_grad_es(cfg, cost)
    raise ConfigError(f"case in {CASES}")


def initial_state(
    system: HybridSystem,
    x1,
    x2=None,
    tau: Optional[float] = None,
    mu: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Flat initial vector for a built system.

    Defaults: x2 mirrors x1 for the momentum cases and is zero for the dual
    cases; tau starts at T_min; mu starts at the (1, 0) point of every
    circle.  A clock slot, when present, starts at zero.
    """
    layout: StateLayout = system.extras["layout"]
    cfg: HaesConfig = system.extras["cfg"]
    v = np.zeros(layout.dim)
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    if x1.shape != (layout.n,):
        raise ConfigError(f"x1 must have length {layout.n}")
    v[0 : layout.n] = x1
    if layout.m:
        if x2 is None:
            x2v = x1.copy() if cfg.case in ("case1", "case2") else np.zeros(layout.m)
        else:
            x2v = np.asarray(x2, dtype=float).reshape(-1)
        if x2v.shape != (layout.m,):
            raise ConfigError(f"x2 must have length {layout.m}")
        v[layout.n : layout.n + layout.m] = x2v
    v[layout.i_tau] = cfg.t_min if tau is None else float(tau)
    if mu is None:
        mu_vec = DitherState.default(layout.n).mu
    else:
        mu_vec = np.asarray(mu, dtype=float).reshape(-1)
        DitherState(mu_vec).check_on_torus(tol=1e-9)
    v[layout.i_mu : layout.i_mu_end] = mu_vec
    return v
