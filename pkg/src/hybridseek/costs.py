"""Cost problems: zero-order oracle, optional derivative oracles, benchmarks.

The running algorithms only ever evaluate the cost through probe(); gradient
and Hessian oracles exist solely for the average-system and Lyapunov test
oracles.  Constrained benchmarks carry their affine constraint data and a
KKT solver usable as an independent reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import chain, combinations
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, InvalidInputError, OracleUnavailableError

Array = np.ndarray


@dataclass
class CostProblem:
    """A scalar cost with optional analytic extras.

    phi is the zero-order oracle (the only thing the algorithms may call);
    theta/lips are the strong-convexity modulus and gradient Lipschitz
    constant when known; phi_star/minimizer describe the optimum of the
    problem as posed (feasible optimum for constrained benchmarks).
    """

    name: str
    n: int
    phi: Callable[[Array], float]
    grad: Optional[Callable[[Array], Array]] = None
    hess: Optional[Callable[[Array], Array]] = None
    phi_star: Optional[float] = None
    minimizer: Optional[Array] = None
    theta: Optional[float] = None
    lips: Optional[float] = None

    def __post_init__(self):
        if self.theta is not None and self.lips is not None:
            if not (0 < self.theta <= self.lips):
                raise ConfigError("0 < theta <= lips")
        if self.minimizer is not None:
            self.minimizer = np.asarray(self.minimizer, dtype=float)

    def require_grad(self) -> Callable[[Array], Array]:
        if self.grad is None:
            raise OracleUnavailableError(f"cost {self.name!r} has no gradient oracle")
        return self.grad

    def require_hess(self) -> Callable[[Array], Array]:
        if self.hess is None:
            raise OracleUnavailableError(f"cost {self.name!r} has no Hessian oracle")
        return self.hess

    def require_target(self) -> tuple[float, Array]:
        if self.phi_star is None or self.minimizer is None:
            raise OracleUnavailableError(f"cost {self.name!r} has no known optimum")
        return self.phi_star, self.minimizer


@dataclass
class ConstraintData:
    """Affine constraint data A x = b (equalities) or A x <= b (inequalities)."""

    A: Array
    b: Array
    rank_tol: float = 1e-10
    eig_bounds: Optional[tuple[float, float]] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.A.shape[0] != self.b.shape[0]:
            raise ConfigError("A and b row counts must match")
        if np.linalg.matrix_rank(self.A, tol=self.rank_tol) < self.A.shape[0]:
            raise ConfigError("A full row rank")
        if self.eig_bounds is not None:
            lo, hi = self.eig_bounds
            eig = np.linalg.eigvalsh(self.A @ self.A.T)
            if eig.min() < lo or eig.max() > hi:
                raise ConfigError("eigenvalues of A A^T within the configured bounds")

    @property
    def m(self) -> int:
        return self.A.shape[0]


def probe(cost: CostProblem, x1: Array, mu_probe: Array, a: float) -> float:
    """Evaluate the cost at the dithered probe point x1 + a * mu_probe.

    This is the only cost access the running flow maps use.
    """
    if not a > 0:
        raise InvalidInputError("probe amplitude a > 0")
    return float(cost.phi(x1 + a * mu_probe))


def central_difference(phi: Callable[[Array], float], z: Array, step: float = 1e-5) -> Array:
    """Central finite-difference gradient, the reference for grad oracles."""
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    for i in range(len(z)):
        zp = z.copy()
        zm = z.copy()
        zp[i] += step
        zm[i] -= step
        g[i] = (phi(zp) - phi(zm)) / (2.0 * step)
    return g


def kkt_point(
    cost: CostProblem, con: ConstraintData, k: float = 1.0, inequality: bool = False
) -> tuple[Array, Array]:
    """Stationary pair (x1*, x2*) of the primal-dual dynamics.

    For equalities this solves the linear KKT system with the dual scaled by
    the gain k (the dynamics pair grad phi with k * A^T x2).  For
    inequalities it enumerates active sets of the quadratic program and
    keeps the unique combination that is primal feasible with nonnegative
    scaled duals.
    """
    if not k > 0:
        raise InvalidInputError("gain k > 0")
    H, c = _quadratic_data(cost)
    A, b = con.A, con.b
    m, n = A.shape
    if not inequality:
        kkt = np.block([[H, k * A.T], [A, np.zeros((m, m))]])
        rhs = np.concatenate([-c, b])
        sol = np.linalg.solve(kkt, rhs)
        return sol[:n], sol[n:]

    best = None
    for active in chain.from_iterable(combinations(range(m), r) for r in range(m + 1)):
        act = list(active)
        Aa = A[act]
        if act:
            kkt = np.block([[H, k * Aa.T], [Aa, np.zeros((len(act), len(act)))]])
            rhs = np.concatenate([-c, b[act]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            lam_act = sol[n:]
        else:
            x = np.linalg.solve(H, -c)
            lam_act = np.array([])
        lam = np.zeros(m)
        lam[act] = lam_act
        slack = A @ x - b
        if np.any(lam < -1e-12) or np.any(slack > 1e-10):
            continue
        if best is not None and not np.allclose(best[0], x, atol=1e-9):
            raise InvalidInputError("inequality KKT point is not unique")
        best = (x, lam)
    if best is None:
        raise InvalidInputError("no feasible KKT point found")
    return best


def _quadratic_data(cost: CostProblem) -> tuple[Array, Array]:
    """Recover (H, c) with grad phi(z) = H z + c from the oracles."""
    hess = cost.require_hess()
    grad = cost.require_grad()
    z0 = np.zeros(cost.n)
    H = np.asarray(hess(z0), dtype=float)
    c = np.asarray(grad(z0), dtype=float)
    return H, c


def _quadratic_cost(name: str, H: Array, c: Array, d: float) -> CostProblem:
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = len(c)
    eig = np.linalg.eigvalsh(H)

    def phi(z, H=H, c=c, d=d):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (H @ z) + c @ z + d)

    minimizer = np.linalg.solve(H, -c)
    return CostProblem(
        name=name,
        n=n,
        phi=phi,
        grad=lambda z: H @ np.asarray(z, dtype=float) + c,
        hess=lambda z: H,
        phi_star=phi(minimizer),
        minimizer=minimizer,
        theta=float(eig.min()),
        lips=float(eig.max()),
    )


def _builtin_quartic() -> tuple[CostProblem, None]:
    def phi(z):
        # repeated products overflow to inf instead of raising, which lets the
        # solver report divergence with the offending time
        u = float(np.asarray(z).reshape(-1)[0]) - 1.0
        u2 = u * u
        return 0.25 * u2 * u2

    def grad(z):
        u = float(np.asarray(z).reshape(-1)[0]) - 1.0
        return np.array([u * u * u])

    def hess(z):
        u = float(np.asarray(z).reshape(-1)[0]) - 1.0
        return np.array([[3.0 * u**2]])

    cost = CostProblem(
        name="quartic",
        n=1,
        phi=phi,
        grad=grad,
        hess=hess,
        phi_star=0.0,
        minimizer=np.array([1.0]),
    )
    return cost, None


def _builtin_illcond2() -> tuple[CostProblem, None]:
    def phi(z):
        z = np.asarray(z, dtype=float)
        return float(z[0] * z[0] / 100.0 + 0.5 * z[1] * z[1] + 10.0)

    H = np.diag([0.02, 1.0])
    cost = CostProblem(
        name="illcond2",
        n=2,
        phi=phi,
        grad=lambda z: H @ np.asarray(z, dtype=float),
        hess=lambda z: H,
        phi_star=10.0,
        minimizer=np.zeros(2),
        theta=0.02,
        lips=1.0,
    )
    return cost, None


def _builtin_sphere2() -> tuple[CostProblem, None]:
    def phi(z):
        z = np.asarray(z, dtype=float)
        return float(0.25 * (z @ z))

    cost = CostProblem(
        name="sphere2",
        n=2,
        phi=phi,
        grad=lambda z: 0.5 * np.asarray(z, dtype=float),
        hess=lambda z: 0.5 * np.eye(2),
        phi_star=0.0,
        minimizer=np.zeros(2),
        theta=0.5,
        lips=0.5,
    )
    return cost, None


def _builtin_randquad10(seed: int) -> tuple[CostProblem, None]:
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((10, 10))
    Q = M.T @ M + 0.5 * np.eye(10)
    b = np.arange(1.0, 11.0)
    return _quadratic_cost("randquad10", Q, b, 10.0), None


# Shared quadratic for the constrained benchmarks: isotropic bowl of
# curvature 0.2 centered so the equality constraint is active with a
# nonzero multiplier while exactly one inequality constraint binds.  The
# offset zeroes the cost at the equality-constrained optimum: near the
# target the probe term is then O(a * |grad|), not O(phi), which keeps the
# dither-injected ripple far below the convergence tolerances.
_CON_CENTER = np.array([0.6, 0.45])
_CON_CURV = 0.2
_CON_OFFSET = -1.25e-4


def _constrained_cost(name: str, con: ConstraintData, inequality: bool) -> tuple[CostProblem, ConstraintData]:
    H = _CON_CURV * np.eye(2)
    c = -H @ _CON_CENTER
    d = float(0.5 * _CON_CENTER @ (H @ _CON_CENTER)) + _CON_OFFSET
    cost = _quadratic_cost(name, H, c, d)
    x_star, lam = kkt_point(cost, con, k=1.0, inequality=inequality)
    cost.minimizer = x_star
    cost.phi_star = cost.phi(x_star)
    return cost, con


def _builtin_eqcon() -> tuple[CostProblem, ConstraintData]:
    con = ConstraintData(A=np.array([[1.0, 1.0]]), b=np.array([1.0]))
    return _constrained_cost("eqcon", con, inequality=False)


def _builtin_ineqcon() -> tuple[CostProblem, ConstraintData]:
    con = ConstraintData(A=np.eye(2), b=np.array([0.5, 0.5]))
    return _constrained_cost("ineqcon", con, inequality=True)


_BUILTINS = {
    "quartic": lambda seed: _builtin_quartic(),
    "illcond2": lambda seed: _builtin_illcond2(),
    "sphere2": lambda seed: _builtin_sphere2(),
    "randquad10": _builtin_randquad10,
    "eqcon": lambda seed: _builtin_eqcon(),
    "ineqcon": lambda seed: _builtin_ineqcon(),
}


def builtin(name: str, seed: int | None = None) -> tuple[CostProblem, Optional[ConstraintData]]:
    """Construct a named benchmark problem (seed only matters for randquad10)."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown cost {name!r}; choose from {sorted(_BUILTINS)}"
        ) from None
    return factory(0 if seed is None else seed)
