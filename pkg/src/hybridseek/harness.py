"""Experiment orchestration: disturbances, metrics, named studies, sweeps.

A RunSetup bundles everything one simulation needs (algorithm config, cost,
initial point, solver spec, optional disturbance); run_setup executes it and
extracts RunMetrics from the arc.  The named experiments freeze the
configurations used by the verification suite; sweep() re-runs a base setup
across values of one tuning parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import algorithms, costs
from .algorithms import HaesConfig, StateLayout, initial_state
from .costs import ConstraintData, CostProblem, kkt_point
from .errors import InvalidInputError
from .hybrid import HybridArc, HybridSystem, SolveSpec, solve

WAVEFORMS = ("square", "sine", "constant", "none")


@dataclass(frozen=True)
class DisturbanceSpec:
    """Additive signal e(t) injected on the probe term (phi(z) + e) * mu."""

    waveform: str = "none"
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0
    target: str = "probe-term"

    def validate(self):
        if self.waveform not in WAVEFORMS:
            raise InvalidInputError(f"waveform in {WAVEFORMS}")
        if self.amplitude < 0:
            raise InvalidInputError("amplitude >= 0")
        if self.waveform in ("square", "sine") and not self.period > 0:
            raise InvalidInputError("period > 0 for periodic waveforms")
        if self.target != "probe-term":
            raise InvalidInputError("only the probe-term disturbance target is supported")

    def as_function(self) -> Optional[Callable[[float], float]]:
        """Scalar signal e(t); None when the disturbance is trivially zero."""
        self.validate()
        if self.waveform == "none":
            return None
        amp, period, phase = self.amplitude, self.period, self.phase
        if self.waveform == "constant":
            return lambda t: amp
        if self.waveform == "square":
            half = 0.5 * period
            return lambda t: amp if (t + phase) % period < half else -amp
        two_pi = 2.0 * math.pi
        return lambda t: amp * math.sin(two_pi * (t + phase) / period)


def perturb(system: HybridSystem, spec: DisturbanceSpec) -> HybridSystem:
    """System with (phi(z) + e(t)) mu in place of phi(z) mu in the flow map.

    The time dependence is realized by a clock state appended to the layout.
    Requires a system built by one of the algorithm builders (they expose the
    rebuild hook).
    """
    spec.validate()
    rebuild = system.extras.get("rebuild")
    if rebuild is None:
        raise InvalidInputError("system does not expose the probe-term hook")
    return rebuild(spec.as_function())


@dataclass
class RunMetrics:
    """Sub-optimality and error series extracted from one arc.

    subopt is phi(z) - phi_star along the stored samples (phi_star exact
    when the cost knows it, otherwise the best value seen in-run, flagged
    "empirical").  x1_err is |x1 - target| when a target point is known;
    pair_err additionally includes the x2 block (used against KKT oracle
    points).
    """

    t: np.ndarray
    j: np.ndarray
    subopt: np.ndarray
    phi_star_mode: str
    x1_err: Optional[np.ndarray] = None
    pair_err: Optional[np.ndarray] = None
    jump_times: np.ndarray = field(default_factory=lambda: np.array([]))
    jump_count: int = 0
    final_error: float = math.nan
    restart_t: np.ndarray = field(default_factory=lambda: np.array([]))
    restart_subopt_x1: np.ndarray = field(default_factory=lambda: np.array([]))

    def series(self, name: str) -> np.ndarray:
        out = {"subopt": self.subopt, "x1_err": self.x1_err, "pair_err": self.pair_err}[name]
        if out is None:
            raise InvalidInputError(f"metrics have no {name!r} series")
        return out

    def time_to(self, nu: float, series: str = "subopt") -> float:
        """First time after which the series stays <= nu; inf if never."""
        vals = self.series(series)
        above = np.nonzero(vals > nu)[0]
        if len(above) == 0:
            return float(self.t[0])
        last = above[-1]
        if last == len(vals) - 1:
            return math.inf
        return float(self.t[last + 1])

    def first_crossing(self, nu: float, series: str = "subopt") -> float:
        vals = self.series(series)
        below = np.nonzero(vals <= nu)[0]
        return float(self.t[below[0]]) if len(below) else math.inf

    def rate_fit(self, t0: float, t1: float, series: str = "subopt",
                 floor: float = 1e-300) -> float:
        """Least-squares slope of log(series) over the window [t0, t1]."""
        vals = self.series(series)
        mask = (self.t >= t0) & (self.t <= t1) & (vals > floor)
        if mask.sum() < 2:
            raise InvalidInputError("rate window contains fewer than 2 samples")
        return float(np.polyfit(self.t[mask], np.log(vals[mask]), 1)[0])

    def default_rate_window(self, nu: float, series: str = "subopt") -> tuple[float, float]:
        """Fit window per the reporting convention: after the first jump and
        before the series first reaches nu."""
        t0 = float(self.jump_times[0]) if len(self.jump_times) else float(self.t[0])
        t1 = self.first_crossing(nu, series)
        if not math.isfinite(t1):
            t1 = float(self.t[-1])
        return t0, t1


def eval_phi_rows(cost: CostProblem, Z: np.ndarray) -> np.ndarray:
    out = np.empty(len(Z))
    phi = cost.phi
    for i, row in enumerate(Z):
        out[i] = phi(row)
    return out


def compute_metrics(
    arc: HybridArc,
    system: HybridSystem,
    target: Optional[np.ndarray] = None,
) -> RunMetrics:
    """Metrics over every stored sample of an arc produced from a built system.

    target, when given, is the reference (x1*, x2*) concatenation for
    pair_err; x1_err falls back to the cost's known minimizer.
    """
    layout: StateLayout = system.extras["layout"]
    cfg: HaesConfig = system.extras["cfg"]
    cost: CostProblem = system.extras["cost"]

    ts, js, rows = [], [], []
    starts_t, starts_x1 = [], []
    for seg in arc.segments:
        ts.append(seg.t)
        js.append(np.full(len(seg.t), seg.j))
        rows.append(seg.states)
        starts_t.append(seg.t[0])
        starts_x1.append(seg.states[0, 0 : layout.n])
    t = np.concatenate(ts)
    j = np.concatenate(js)
    states = np.vstack(rows)

    x1 = states[:, 0 : layout.n]
    mu_probe = states[:, layout.i_mu : layout.i_mu_end : 2]
    z = x1 + cfg.a * mu_probe
    phi_z = eval_phi_rows(cost, z)
    if cost.phi_star is not None:
        phi_star = cost.phi_star
        mode = "exact"
    else:
        phi_star = float(phi_z.min())
        mode = "empirical"
    subopt = phi_z - phi_star

    x1_err = None
    pair_err = None
    if target is not None:
        target = np.asarray(target, dtype=float)
        width = layout.n + layout.m
        pair = states[:, 0:width]
        pair_err = np.linalg.norm(pair - target[None, :width], axis=1)
        x1_err = np.linalg.norm(x1 - target[None, 0 : layout.n], axis=1)
    elif cost.minimizer is not None:
        x1_err = np.linalg.norm(x1 - cost.minimizer[None, :], axis=1)

    restart_phi = eval_phi_rows(cost, np.vstack(starts_x1)) - phi_star

    return RunMetrics(
        t=t,
        j=j,
        subopt=subopt,
        phi_star_mode=mode,
        x1_err=x1_err,
        pair_err=pair_err,
        jump_times=arc.jump_times(),
        jump_count=arc.jump_count,
        final_error=float(x1_err[-1]) if x1_err is not None else float(subopt[-1]),
        restart_t=np.array(starts_t),
        restart_subopt_x1=restart_phi,
    )


@dataclass
class RunSetup:
    """Everything one simulation needs; the unit the harness and CLI execute."""

    cfg: HaesConfig
    cost: CostProblem
    con: Optional[ConstraintData]
    solve_spec: SolveSpec
    x1_0: np.ndarray
    x2_0: Optional[np.ndarray] = None
    tau_0: Optional[float] = None
    mu_0: Optional[np.ndarray] = None
    disturbance: Optional[DisturbanceSpec] = None
    target: Optional[np.ndarray] = None
    label: str = "run"

    def build(self) -> HybridSystem:
        system = algorithms.build(self.cfg, self.cost, self.con)
        if self.disturbance is not None and self.disturbance.waveform != "none":
            system = perturb(system, self.disturbance)
        return system


@dataclass
class RunResult:
    label: str
    arc: HybridArc
    metrics: RunMetrics
    system: HybridSystem
    spec: SolveSpec


def run_setup(setup: RunSetup) -> RunResult:
    system = setup.build()
    x0 = initial_state(system, setup.x1_0, setup.x2_0, setup.tau_0, setup.mu_0)
    arc = solve(system, x0, setup.solve_spec)
    metrics = compute_metrics(arc, system, target=setup.target)
    return RunResult(label=setup.label, arc=arc, metrics=metrics, system=system,
                     spec=setup.solve_spec)


@dataclass
class ExperimentResult:
    name: str
    runs: dict[str, RunResult]
    manifest: dict


def _manifest(name: str, setups: Sequence[RunSetup]) -> dict:
    out = {"experiment": name, "runs": {}}
    for s in setups:
        out["runs"][s.label] = {
            "case": s.cfg.case,
            "cost": s.cost.name,
            "a": s.cfg.a,
            "epsilon": s.cfg.epsilon,
            "kappas": [str(k) for k in s.cfg.kappas],
            "gains": {"k1": s.cfg.k1, "k2": s.cfg.k2, "k": s.cfg.k},
            "timer": {"t_min": s.cfg.t_min, "t_med": s.cfg.t_med, "t_max": s.cfg.t_max,
                      "f_tau": s.cfg.f_tau},
            "jump_policy": s.cfg.jump_policy,
            "solve": {"h": s.solve_spec.h, "t_max": s.solve_spec.t_max,
                      "j_max": s.solve_spec.j_max, "method": s.solve_spec.method,
                      "seed": s.solve_spec.seed,
                      "record_stride": s.solve_spec.record_stride},
            "x1_0": np.asarray(s.x1_0, dtype=float).tolist(),
            "disturbance": None if s.disturbance is None else {
                "waveform": s.disturbance.waveform,
                "amplitude": s.disturbance.amplitude,
                "period": s.disturbance.period,
                "phase": s.disturbance.phase,
            },
        }
    return out


# ---------------------------------------------------------------------------
# Named experiments.  Frozen configurations; overrides patch named fields.
# ---------------------------------------------------------------------------

_QUARTIC_KAPPA = ("2.54",)


def _setup_quartic_case1(t_med: float, t_max: float, horizon: float, h: float = 1e-3,
                         stride: int = 1, disturbance: Optional[DisturbanceSpec] = None,
                         stop: Optional[Callable] = None, label: str = "haes") -> RunSetup:
    cost, _ = costs.builtin("quartic")
    cfg = HaesConfig(case="case1", a=0.01, epsilon=0.02, kappas=_QUARTIC_KAPPA,
                     k1=0.0, k2=1.0, t_min=0.01, t_med=t_med, t_max=t_max, f_tau=0.5)
    spec = SolveSpec(h=h, t_max=horizon, record_stride=stride,
                     stop_predicate=stop, stop_check_every=50)
    return RunSetup(cfg=cfg, cost=cost, con=None, solve_spec=spec,
                    x1_0=np.array([2.0]), x2_0=np.array([2.0]), tau_0=0.01,
                    disturbance=disturbance, label=label)


def _exp_quartic_comparison(ov: dict) -> list[RunSetup]:
    haes = _setup_quartic_case1(t_med=ov.get("t_med", 25.0), t_max=ov.get("t_max", 25.0),
                                horizon=ov.get("haes_horizon", 60.0))
    cost, _ = costs.builtin("quartic")
    grad_cfg = HaesConfig(case="grad_es", a=0.01, epsilon=0.02, kappas=_QUARTIC_KAPPA,
                          k=ov.get("grad_k", 1.0))
    grad = RunSetup(cfg=grad_cfg, cost=cost, con=None,
                    solve_spec=SolveSpec(h=1e-3, t_max=ov.get("grad_horizon", 500.0),
                                         record_stride=5),
                    x1_0=np.array([2.0]), label="grad_es")
    return [haes, grad]


def _exp_illcond2_comparison(ov: dict) -> list[RunSetup]:
    cost, _ = costs.builtin("illcond2")
    kappas = ("1/4", "1/5")
    # Record strides must not divide the dither periods (10 and 12.5 steps):
    # a commensurate stride samples the probe ripple at fixed phases and can
    # hide its true envelope.
    h = 4e-4
    haes_cfg = HaesConfig(case="case2", a=0.01, epsilon=1e-3, kappas=kappas,
                          k=ov.get("k", 0.25), t_min=0.1,
                          t_med=ov.get("t_max", 27.0), t_max=ov.get("t_max", 27.0))
    haes = RunSetup(cfg=haes_cfg, cost=cost, con=None,
                    solve_spec=SolveSpec(h=h, t_max=ov.get("haes_horizon", 300.0),
                                         record_stride=3),
                    x1_0=np.array([2.0, 2.0]), label="haes")
    grad_cfg = HaesConfig(case="grad_es", a=0.01, epsilon=1e-3, kappas=kappas,
                          k=ov.get("grad_k", 1.0))
    grad = RunSetup(cfg=grad_cfg, cost=cost, con=None,
                    solve_spec=SolveSpec(h=h, t_max=ov.get("grad_horizon", 400.0),
                                         record_stride=3),
                    x1_0=np.array([2.0, 2.0]), label="grad_es")
    return [haes, grad]


def _exp_sphere2_restart(ov: dict) -> list[RunSetup]:
    cost, _ = costs.builtin("sphere2")
    k = ov.get("k", 0.25)
    t_min = ov.get("t_min", 0.1)
    t_max = ov.get("t_max", algorithms.quasi_optimal_tmax(k, cost.theta, t_min))
    cfg = HaesConfig(case="case2", a=1e-2, epsilon=1e-3, kappas=("1/4", "1/5"),
                     k=k, t_min=t_min, t_med=t_max, t_max=t_max)
    spec = SolveSpec(h=4e-4, t_max=ov.get("horizon", 70.0), record_stride=2)
    return [RunSetup(cfg=cfg, cost=cost, con=None, solve_spec=spec,
                     x1_0=np.array([2.0, 2.0]), label="haes")]


def _exp_randquad10_rates(ov: dict) -> list[RunSetup]:
    seed = ov.get("seed", 0)
    cost, _ = costs.builtin("randquad10", seed=seed)
    kappas = tuple(f"{10 + i}/40" for i in range(1, 11))
    k = ov.get("k", 1.0 / (2.0 * cost.lips))
    t_min = 0.01
    t_max = ov.get("t_max", algorithms.quasi_optimal_tmax(k, cost.theta, t_min))
    x1_0 = cost.minimizer + 3.0
    haes_cfg = HaesConfig(case="case2", a=0.01, epsilon=1e-3, kappas=kappas,
                          k=k, t_min=t_min, t_med=t_max, t_max=t_max)
    # stride 7 stays incommensurate with every dither period (10 .. 18 steps)
    haes = RunSetup(cfg=haes_cfg, cost=cost, con=None,
                    solve_spec=SolveSpec(h=2e-4, t_max=ov.get("haes_horizon", 150.0),
                                         record_stride=7),
                    x1_0=x1_0, label="haes")
    grad_cfg = HaesConfig(case="grad_es", a=0.01, epsilon=1e-3, kappas=kappas, k=k)
    grad = RunSetup(cfg=grad_cfg, cost=cost, con=None,
                    solve_spec=SolveSpec(h=2e-4, t_max=ov.get("grad_horizon", 300.0),
                                         record_stride=7),
                    x1_0=x1_0, label="grad_es")
    return [haes, grad]


_ROBUST_DISTURBANCE = DisturbanceSpec(waveform="square", amplitude=1e-2, period=1e4)


def _exp_robustness(ov: dict) -> list[RunSetup]:
    t_med = ov.get("t_med", 25.0)
    t_max = max(t_med, ov.get("t_max", t_med))
    horizon = ov.get("horizon", 2000.0 if t_med <= 1e3 else 5e4)
    escape = ov.get("escape", 0.5)
    burn_in = ov.get("burn_in", 100.0)  # x1(0) starts 1.0 away from the target

    def stop(t, v):
        return t > burn_in and abs(v[0] - 1.0) >= escape

    return [_setup_quartic_case1(
        t_med=t_med, t_max=t_max, horizon=horizon, stride=ov.get("stride", 20),
        disturbance=_ROBUST_DISTURBANCE,
        stop=stop if ov.get("stop_on_escape", t_med > 1e3) else None,
        label="haes")]


def _exp_constrained(name: str, ov: dict) -> list[RunSetup]:
    cost, con = costs.builtin(name)
    k = ov.get("k", 1.0)
    cfg = HaesConfig(case="case3" if name == "eqcon" else "case4",
                     a=5e-3, epsilon=1e-3, kappas=("1/4", "1/5"), k=k,
                     t_min=0.01, t_med=1.0, t_max=1.0, f_tau=0.0)
    x_star, lam = kkt_point(cost, con, k=k, inequality=name == "ineqcon")
    target = np.concatenate([x_star, lam])
    spec = SolveSpec(h=4e-4, t_max=ov.get("horizon", 200.0), record_stride=4)
    x2_0 = np.zeros(con.m) if name == "eqcon" else np.full(con.m, 3.0)
    return [RunSetup(cfg=cfg, cost=cost, con=con, solve_spec=spec,
                     x1_0=np.array([2.0, 2.0]), x2_0=x2_0, target=target, label=name)]


_EXPERIMENTS: dict[str, Callable[[dict], list[RunSetup]]] = {
    "quartic-comparison": _exp_quartic_comparison,
    "illcond2-comparison": _exp_illcond2_comparison,
    "sphere2-restart": _exp_sphere2_restart,
    "randquad10-rates": _exp_randquad10_rates,
    "robustness": _exp_robustness,
    "eqcon": lambda ov: _exp_constrained("eqcon", ov),
    "ineqcon": lambda ov: _exp_constrained("ineqcon", ov),
}


def experiment_names() -> tuple[str, ...]:
    return tuple(sorted(_EXPERIMENTS))


def run_experiment(name: str, overrides: Optional[dict] = None,
                   seed: Optional[int] = None) -> ExperimentResult:
    """Run one named study; deterministic for fixed overrides and seeds.

    seed, when given, rebases the solver seed of run i to seed + i.
    """
    try:
        factory = _EXPERIMENTS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown experiment {name!r}; choose from {experiment_names()}"
        ) from None
    setups = factory(dict(overrides or {}))
    if seed is not None:
        setups = [replace(s, solve_spec=replace(s.solve_spec, seed=seed + i))
                  for i, s in enumerate(setups)]
    runs = {s.label: run_setup(s) for s in setups}
    manifest = _manifest(name, setups)
    return ExperimentResult(name=name, runs=runs, manifest=manifest)


_SWEEPABLE = {"T_max": "t_max", "T_med": "t_med", "k": "k", "a": "a", "epsilon": "epsilon"}


def sweep(param: str, values: Sequence[float], base: RunSetup) -> list[tuple[float, RunMetrics]]:
    """Re-run a base setup for each value of one tuning parameter.

    T_max sweeps move T_med along when the base has T_med = T_max (periodic
    restarts); rows are keyed by the swept value.  Each row derives its solve
    seed from (base seed, row index) so rows stay independently reproducible.
    """
    try:
        fieldname = _SWEEPABLE[param]
    except KeyError:
        raise InvalidInputError(f"sweepable parameters: {sorted(_SWEEPABLE)}") from None
    if len(values) == 0:
        raise InvalidInputError("values must be nonempty")
    rows = []
    for idx, val in enumerate(values):
        patch = {fieldname: float(val)}
        if fieldname == "t_max" and base.cfg.t_med == base.cfg.t_max:
            patch["t_med"] = float(val)
        cfg = replace(base.cfg, **patch)
        spec = replace(base.solve_spec, seed=base.solve_spec.seed + idx)
        setup = replace(base, cfg=cfg, solve_spec=spec, label=f"{param}={val:g}")
        rows.append((float(val), run_setup(setup).metrics))
    return rows
