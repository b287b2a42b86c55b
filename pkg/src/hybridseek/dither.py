"""Torus oscillator state driving the probe signal.

The excitation is a stack of n planar rotations with rational frequencies
kappa_l, advanced in closed form (never by the generic integrator, so the
state stays on the torus to machine precision).  The module also computes
the common period of the stack and verifies the averaging identities the
algorithms rely on: the probe components integrate to zero over the common
period and their outer product averages to I/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

Rational = Fraction


def as_rational(value) -> Fraction:
    """Exact conversion to a reduced rational.

    Decimal strings and floats go through their shortest decimal
    representation, so 2.54 becomes 127/50 rather than the binary float.
    """
    if isinstance(value, Fraction):
        out = value
    elif isinstance(value, int):
        out = Fraction(value)
    elif isinstance(value, float):
        out = Fraction(repr(value))
    elif isinstance(value, str):
        out = Fraction(value)
    else:
        raise InvalidInputError(f"cannot interpret {value!r} as a rational")
    if out <= 0:
        raise InvalidInputError("frequencies must be positive rationals")
    return out


def parse_kappas(values: Iterable) -> tuple[Fraction, ...]:
    kappas = tuple(as_rational(v) for v in values)
    if not kappas:
        raise InvalidInputError("at least one frequency is required")
    if len(set(kappas)) != len(kappas):
        raise InvalidInputError("frequencies must be pairwise distinct")
    return kappas


@dataclass(frozen=True)
class DitherParams:
    """Oscillator frequencies (reduced rationals) and the time scale epsilon."""

    kappas: tuple[Fraction, ...]
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kappas", parse_kappas(self.kappas))
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon > 0")

    @property
    def n(self) -> int:
        return len(self.kappas)

    def omegas(self) -> np.ndarray:
        """Angular rates 2*pi*kappa/epsilon in real time."""
        return np.array([2.0 * math.pi * float(k) / self.epsilon for k in self.kappas])


@dataclass
class DitherState:
    """State on the n-torus stored as consecutive (cos, sin)-like pairs."""

    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.mu.ndim != 1 or len(self.mu) % 2 != 0:
            raise InvalidInputError("mu must be a flat vector of pairs")

    @property
    def n(self) -> int:
        return len(self.mu) // 2

    def pair_norms(self) -> np.ndarray:
        return np.hypot(self.mu[0::2], self.mu[1::2])

    def check_on_torus(self, tol: float = 1e-9):
        err = np.abs(self.pair_norms() - 1.0).max()
        if err > tol:
            raise InvalidInputError(f"state off the torus by {err:.3e}")

    @staticmethod
    def default(n: int) -> "DitherState":
        mu = np.zeros(2 * n)
        mu[0::2] = 1.0
        return DitherState(mu)


def dither_advance(state: DitherState, dt: float, params: DitherParams) -> DitherState:
    """Advance each oscillator pair by its exact rotation over dt seconds."""
    if dt < 0:
        raise InvalidInputError("dt >= 0")
    ang = params.omegas() * dt
    c, s = np.cos(ang), np.sin(ang)
    mu = state.mu
    out = np.empty_like(mu)
    out[0::2] = c * mu[0::2] + s * mu[1::2]
    out[1::2] = -s * mu[0::2] + c * mu[1::2]
    return DitherState(out)


def extract_probe(state: DitherState) -> np.ndarray:
    """Probe vector: the odd-position entries (mu_1, mu_3, ...)."""
    return state.mu[0::2].copy()


def rotation_tables(params: DitherParams, dts: Sequence[float]) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """Precomputed (cos, sin) arrays per step size, for tight solve loops."""
    ws = params.omegas()
    return {dt: (np.cos(ws * dt), np.sin(ws * dt)) for dt in dts}


def common_period(kappas: Sequence) -> int:
    """Common period of the oscillator stack in the fast time scale.

    With kappa_l = p_l / q_l reduced, each oscillator has period 1/kappa_l;
    scaling by the product P of all numerators makes every period the
    integer q_l * (P / p_l), and the least common multiple of those integers
    is the common period.  Multiply by epsilon for the real-time period.
    """
    ks = parse_kappas(kappas)
    prod_num = math.prod(k.numerator for k in ks)
    scaled = [k.denominator * (prod_num // k.numerator) for k in ks]
    return math.lcm(*scaled)


def _simpson_weights(n_points: int, h: float) -> np.ndarray:
    """Composite Simpson weights for a uniform grid with an even panel count."""
    if n_points < 3 or n_points % 2 == 0:
        raise InvalidInputError("Simpson needs an odd number of grid points")
    w = np.ones(n_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def verify_average(
    params: DitherParams,
    N: int = 1,
    grid_points: int = 10_000,
    phases: Sequence[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature check of the averaging identities over N common periods.

    Returns the residual matrix (1/(N*T)) * int mu_probe mu_probe^T - I/2 and
    the residual vector int mu_probe, both computed with composite Simpson at
    grid_points points per unit of the fast time over [0, N*T].  Both vanish
    up to quadrature error for admissible frequency sets, for any initial
    phases on the torus.
    """
    if N < 1:
        raise InvalidInputError("N >= 1")
    if grid_points < 16:
        raise InvalidInputError("grid too coarse for Simpson quadrature")
    if grid_points % 2 == 1:
        grid_points += 1
    T = common_period(params.kappas)
    n = params.n
    w = 2.0 * math.pi * np.array([float(k) for k in params.kappas])
    theta = np.zeros(n) if phases is None else np.asarray(phases, dtype=float)

    total = N * T
    mat = np.zeros((n, n))
    vec = np.zeros(n)
    wts = _simpson_weights(grid_points + 1, 1.0 / grid_points)
    # Integrate unit-length chunks to bound memory; composite Simpson is
    # additive over subintervals that share endpoints.
    for chunk in range(total):
        tau = np.linspace(chunk, chunk + 1.0, grid_points + 1)
        probes = np.cos(np.outer(w, tau) - theta[:, None])
        weighted = probes * wts
        vec += weighted.sum(axis=1)
        mat += weighted @ probes.T
    mat_residual = mat / total - 0.5 * np.eye(n)
    return mat_residual, vec
