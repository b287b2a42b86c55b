"""Generic hybrid dynamical systems: flows, jumps, solutions, arc utilities.

A hybrid system evolves by a flow map on a flow set and by a jump map on a
jump set.  Solutions live on hybrid time domains indexed by (t, j): t is
continuous time, j counts jumps.  The solver here is fixed-step (forward
Euler or classical RK4) with the jump set inflated by flow-step overshoot,
so a step that exits the flow set jumps from the overshoot point instead of
stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    IntegrationDivergedError,
    InvalidInputError,
    InvalidStartError,
)

Vector = np.ndarray
FlowMap = Callable[[Vector], Vector]

METHODS = ("euler", "rk4")
JUMP_POLICIES = ("earliest", "latest", "uniform-random")


@dataclass(frozen=True)
class HybridTime:
    """A point (t, j) of a hybrid time domain."""

    t: float
    j: int

    def __post_init__(self):
        if self.t < 0 or self.j < 0:
            raise InvalidInputError("hybrid time requires t >= 0 and j >= 0")


@dataclass(frozen=True)
class SolveSpec:
    """Numerical parameters for one solve call.

    record_stride keeps every stride-th flow sample (segment endpoints are
    always kept); stop_predicate, checked every stop_check_every steps, ends
    the run early with termination "escape".  Both default to plain dense
    recording with no early stop.
    """

    h: float
    t_max: float
    j_max: int = 10_000
    method: str = "rk4"
    jump_policy: str = "earliest"
    seed: int = 0
    record_stride: int = 1
    stop_predicate: Optional[Callable[[float, Vector], bool]] = None
    stop_check_every: int = 100

    def validate(self):
        if not self.h > 0:
            raise ConfigError("h > 0")
        if not self.t_max > 0:
            raise ConfigError("t_max > 0")
        if self.j_max < 0:
            raise ConfigError("j_max >= 0")
        if self.method not in METHODS:
            raise ConfigError(f"method in {METHODS}")
        if self.jump_policy not in JUMP_POLICIES:
            raise ConfigError(f"jump_policy in {JUMP_POLICIES}")
        if self.record_stride < 1:
            raise ConfigError("record_stride >= 1")


@dataclass
class HybridSystem:
    """Data of a hybrid system over a flat state vector.

    flow_map/jump_map take and return length-dim vectors; in_flow_set and
    in_jump_set are membership predicates.  Optional extras:

    - shift(x, dt): closed-form advance of any exactly-integrable part of the
      state (oscillator phases, clocks).  The integrator applies it at stage
      times, so flow_map should return zero derivative for that part.
    - timer_index / jump_window: location of the restart timer and the
      (T_med, T_max) window, needed by the uniform-random jump policy.
    - extras: free-form metadata for builders (state layout, rebuild hooks).
    """

    dim: int
    flow_map: FlowMap
    jump_map: FlowMap
    in_flow_set: Callable[[Vector], bool]
    in_jump_set: Callable[[Vector], bool]
    shift: Optional[Callable[[Vector, float], Vector]] = None
    timer_index: Optional[int] = None
    jump_window: Optional[tuple[float, float]] = None
    extras: dict = field(default_factory=dict)


@dataclass
class Segment:
    """Samples of one flow interval at constant jump count j."""

    j: int
    t: np.ndarray
    states: np.ndarray


@dataclass
class JumpRecord:
    t: float
    j: int
    before: np.ndarray
    after: np.ndarray


@dataclass
class HybridArc:
    """A computed hybrid solution: flow segments plus jump records."""

    segments: list[Segment]
    jumps: list[JumpRecord]
    termination: str  # "t_max" | "j_max" | "stopped" | "escape"

    @property
    def jump_count(self) -> int:
        return len(self.jumps)

    def jump_times(self) -> np.ndarray:
        return np.array([rec.t for rec in self.jumps])

    def final_time(self) -> float:
        return float(self.segments[-1].t[-1])

    def final_state(self) -> np.ndarray:
        return self.segments[-1].states[-1]

    def sample_count(self) -> int:
        return sum(len(seg.t) for seg in self.segments)


def integrate_flow_step(
    flow_map: FlowMap,
    x: Vector,
    h: float,
    method: str = "rk4",
    shift: Optional[Callable[[Vector, float], Vector]] = None,
) -> Vector:
    """One fixed flow step of size h with forward Euler or classical RK4.

    When a shift hook is given, stage values are advanced by the hook at the
    stage offsets (h/2 and h), which integrates the closed-form part of the
    state exactly while the rest follows the tableau.
    """
    if not h > 0:
        raise InvalidInputError("h > 0 required")
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}")
    x = np.asarray(x)
    if shift is None:
        shift = _identity_shift
    try:
        if method == "euler":
            out = shift(x + h * flow_map(x), h)
        else:
            h2 = 0.5 * h
            k1 = flow_map(x)
            k2 = flow_map(shift(x + h2 * k1, h2))
            k3 = flow_map(shift(x + h2 * k2, h2))
            k4 = flow_map(shift(x + h * k3, h))
            out = shift(x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4), h)
    except (OverflowError, FloatingPointError):
        raise IntegrationDivergedError() from None
    if not np.isfinite(out).all():
        raise IntegrationDivergedError()
    return out


def _identity_shift(x: Vector, dt: float) -> Vector:
    return x


class _JumpDecider:
    """Per-solve jump policy: decides whether to jump from a jump-set point.

    earliest: jump as soon as the state is in the jump set.
    latest: jump only once flowing is impossible (outside the flow set).
    uniform-random: draw a timer threshold in [T_med, T_max] each cycle.
    """

    def __init__(self, system: HybridSystem, spec: SolveSpec):
        self.policy = spec.jump_policy
        if self.policy == "uniform-random":
            if system.timer_index is None or system.jump_window is None:
                raise ConfigError(
                    "uniform-random jump policy requires timer_index and jump_window"
                )
            self.rng = np.random.default_rng(spec.seed)
            self.ti = system.timer_index
            self.lo, self.hi = system.jump_window
            self.threshold = self._draw()

    def _draw(self) -> float:
        return float(self.rng.uniform(self.lo, self.hi))

    def should_jump(self, x: Vector, in_flow: bool) -> bool:
        if self.policy == "earliest":
            return True
        if self.policy == "latest":
            return not in_flow
        return (not in_flow) or x[self.ti] >= self.threshold

    def after_jump(self):
        if self.policy == "uniform-random":
            self.threshold = self._draw()


def solve(system: HybridSystem, x0: Sequence[float], spec: SolveSpec) -> HybridArc:
    """Integrate a hybrid system from x0 until t_max, the jump budget, or a stop.

    Flow steps alternate with jumps: a state in the jump set jumps when the
    policy says so; a flow step that exits the flow set is treated as landing
    in the step-inflated jump set and the system jumps from the overshoot
    point (recorded as the last sample of its segment).  If neither flowing
    nor jumping applies the arc ends with termination "stopped".  The result
    is deterministic for fixed inputs and seed.
    """
    spec.validate()
    x = np.array(x0, dtype=float)
    if x.shape != (system.dim,):
        raise ConfigError(f"x0 must have shape ({system.dim},)")

    in_flow = system.in_flow_set
    in_jump = system.in_jump_set
    flow = system.flow_map
    jump = system.jump_map
    shift = system.shift
    h = spec.h
    n_steps = int(round(spec.t_max / h))
    if n_steps < 1:
        raise ConfigError("t_max must cover at least one step")

    if not (in_flow(x) or in_jump(x)):
        raise InvalidStartError("initial point is in neither the flow nor the jump set")

    decider = _JumpDecider(system, spec)
    stride = spec.record_stride
    stop_pred = spec.stop_predicate
    stop_every = max(1, spec.stop_check_every)

    # Preallocated sample buffer: flow samples plus room for jump endpoints.
    cap = n_steps // stride + 2 * (spec.j_max + 2) + 4
    buf_t = np.empty(cap)
    buf_x = np.empty((cap, system.dim))
    n_rec = 0

    def record(t: float, state: Vector):
        nonlocal n_rec, buf_t, buf_x
        if n_rec == len(buf_t):
            buf_t = np.concatenate([buf_t, np.empty(len(buf_t))])
            buf_x = np.concatenate([buf_x, np.empty_like(buf_x)])
        buf_t[n_rec] = t
        buf_x[n_rec] = state
        n_rec += 1

    segments: list[Segment] = []
    jumps: list[JumpRecord] = []
    seg_start = 0
    seg_j = 0

    def close_segment():
        segments.append(
            Segment(j=seg_j, t=buf_t[seg_start:n_rec].copy(), states=buf_x[seg_start:n_rec].copy())
        )

    h2 = 0.5 * h
    h6 = h / 6.0
    euler = spec.method == "euler"
    t = 0.0
    step_i = 0
    since_rec = 0
    termination = "t_max"
    record(0.0, x)

    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            flowable = in_flow(x)
            if in_jump(x) and decider.should_jump(x, flowable):
                if len(jumps) >= spec.j_max:
                    termination = "j_max"
                    break
                if since_rec != 0:  # ensure the pre-jump state is stored
                    record(t, x)
                x_next = np.asarray(jump(x), dtype=float)
                jumps.append(JumpRecord(t=t, j=seg_j, before=x.copy(), after=x_next.copy()))
                close_segment()
                seg_j += 1
                seg_start = n_rec
                x = x_next
                record(t, x)
                since_rec = 0
                decider.after_jump()
                continue
            if not flowable:
                if since_rec != 0:
                    record(t, x)
                termination = "stopped"
                break
            if step_i >= n_steps:
                if since_rec != 0:
                    record(t, x)
                termination = "t_max"
                break

            try:
                if euler:
                    xc = x + h * flow(x)
                    if shift is not None:
                        xc = shift(xc, h)
                else:
                    k1 = flow(x)
                    if shift is None:
                        k2 = flow(x + h2 * k1)
                        k3 = flow(x + h2 * k2)
                        k4 = flow(x + h * k3)
                        xc = x + h6 * (k1 + 2.0 * (k2 + k3) + k4)
                    else:
                        k2 = flow(shift(x + h2 * k1, h2))
                        k3 = flow(shift(x + h2 * k2, h2))
                        k4 = flow(shift(x + h * k3, h))
                        xc = shift(x + h6 * (k1 + 2.0 * (k2 + k3) + k4), h)
            except (OverflowError, FloatingPointError):
                raise IntegrationDivergedError(time=(step_i + 1) * h) from None

            step_i += 1
            t = step_i * h
            if not math.isfinite(float(xc.sum())):
                raise IntegrationDivergedError(time=t)
            x = xc
            since_rec += 1
            if since_rec >= stride:
                record(t, x)
                since_rec = 0
            if stop_pred is not None and step_i % stop_every == 0 and stop_pred(t, x):
                if since_rec != 0:
                    record(t, x)
                termination = "escape"
                break

    close_segment()
    return HybridArc(segments=segments, jumps=jumps, termination=termination)


def validate_arc(arc: HybridArc, atol: float = 1e-12) -> None:
    """Check the hybrid-arc invariants; raises InvalidInputError on violation.

    Within a segment t must strictly increase; consecutive segments must be
    glued by an instantaneous jump (same t, j incremented by one, post-jump
    state equal to the next segment's first sample).
    """
    if not arc.segments:
        raise InvalidInputError("arc has no segments")
    if len(arc.jumps) != len(arc.segments) - 1:
        raise InvalidInputError("jump count does not match segment count")
    for k, seg in enumerate(arc.segments):
        if len(seg.t) == 0:
            raise InvalidInputError(f"segment {k} is empty")
        if np.any(np.diff(seg.t) <= 0):
            raise InvalidInputError(f"segment {k} has non-increasing times")
        if seg.j != k:
            raise InvalidInputError(f"segment {k} carries jump index {seg.j}")
    for k, rec in enumerate(arc.jumps):
        end_t = arc.segments[k].t[-1]
        start_t = arc.segments[k + 1].t[0]
        if abs(rec.t - end_t) > atol or abs(rec.t - start_t) > atol:
            raise InvalidInputError(f"jump {k} is not instantaneous")
        if not np.allclose(rec.before, arc.segments[k].states[-1], atol=atol):
            raise InvalidInputError(f"jump {k} pre-state mismatch")
        if not np.allclose(rec.after, arc.segments[k + 1].states[0], atol=atol):
            raise InvalidInputError(f"jump {k} post-state mismatch")


def inter_jump_times(arc: HybridArc) -> np.ndarray:
    """Differences of consecutive jump times; empty for fewer than 2 jumps."""
    ts = arc.jump_times()
    if len(ts) < 2:
        return np.array([])
    return np.diff(ts)


def closeness(arc_a: HybridArc, arc_b: HybridArc, T: float, J: int) -> float:
    """Smallest rho for which the two arcs are (T, J, rho)-close on their grids.

    Every stored sample (t, j) of one arc with t + j <= T + J must have a
    sample (s, j) of the other with |t - s| <= rho and Euclidean state
    distance <= rho, and symmetrically.  Returns inf when a required jump
    index is missing from the other arc.
    """
    return max(_directed_closeness(arc_a, arc_b, T, J), _directed_closeness(arc_b, arc_a, T, J))


def _directed_closeness(src: HybridArc, ref: HybridArc, T: float, J: int) -> float:
    ref_by_j = {seg.j: seg for seg in ref.segments}
    worst = 0.0
    for seg in src.segments:
        mask = seg.t + seg.j <= T + J
        if not mask.any():
            continue
        other = ref_by_j.get(seg.j)
        if other is None:
            return float("inf")
        worst = max(worst, _match_cost(seg.t[mask], seg.states[mask], other.t, other.states))
    return worst


def _match_cost(ts: np.ndarray, xs: np.ndarray, tr: np.ndarray, xr: np.ndarray) -> float:
    """max over source samples of min over reference samples of
    max(|t - s|, |x - y|)."""
    idx = np.searchsorted(tr, ts)
    idx = np.clip(idx, 0, len(tr) - 1)
    left = np.clip(idx - 1, 0, len(tr) - 1)
    pick = np.where(np.abs(tr[idx] - ts) <= np.abs(tr[left] - ts), idx, left)

    def cost_at(k):
        d_state = np.linalg.norm(xs - xr[k], axis=1)
        return np.maximum(np.abs(tr[k] - ts), d_state)

    best = cost_at(pick)
    # A farther-in-time reference sample can only improve a source sample's
    # cost while |dt| stays below its current best; expand a window that wide.
    dt_ref = np.min(np.diff(tr)) if len(tr) > 1 else np.inf
    if math.isfinite(dt_ref) and dt_ref > 0:
        max_w = int(min(np.ceil(best.max() / dt_ref) + 1, 20_000))
    else:
        max_w = 0
    for off in range(1, max_w + 1):
        improvable = False
        for k_off in (pick - off, pick + off):
            k = np.clip(k_off, 0, len(tr) - 1)
            dt = np.abs(tr[k] - ts)
            active = dt < best
            if active.any():
                improvable = True
                cand = np.maximum(dt, np.linalg.norm(xs - xr[k], axis=1))
                np.minimum(best, np.where(active, cand, np.inf), out=best)
        if not improvable:
            break
    return float(best.max())
