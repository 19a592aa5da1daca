"""Lagrangian of the polytope-approximated problem, its regularized form and gradients.

With planes ``l`` (slack ``s_l``) and consensus multipliers ``theta_i``::

    L_p  = sum_i G_i(x_i, y_i) + sum_l lam_l s_l + sum_i theta_i.(x_i - v)
    L~_p = L_p - c1(t)/2 sum_l lam_l^2 - c2(t)/2 sum_i ||theta_i||^2

with ``c1(t) = 1 / (eta_lambda (t+1)^(1/4))`` and likewise ``c2`` for theta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .exceptions import ConfigError
from .problems import upper_sum

__all__ = [
    "PrimalDualState",
    "StepSizes",
    "STEP_SIZE_TABLE",
    "RegSchedule",
    "reg_c1",
    "reg_c2",
    "lagrangian_value",
    "reg_lagrangian_value",
    "grad_block",
    "project_duals",
    "stationarity_gap_sq",
    "approximate_problem_value",
]

BLOCKS = ("x", "y", "v", "z", "lambda", "theta")


@dataclass
class PrimalDualState:
    """All iterates. ``x``/``theta`` are ``N x n``, ``y`` is ``N x m``."""

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    theta: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dims):
        return cls(
            x=np.zeros((dims.N, dims.n)),
            y=np.zeros((dims.N, dims.m)),
            v=np.zeros(dims.n),
            z=np.zeros(dims.m),
            lam=np.zeros(0),
            theta=np.zeros((dims.N, dims.n)),
        )

    def copy(self):
        return PrimalDualState(
            self.x.copy(), self.y.copy(), self.v.copy(), self.z.copy(),
            self.lam.copy(), self.theta.copy(), self.t,
        )

    def is_finite(self):
        return all(
            np.all(np.isfinite(a)) for a in (self.x, self.y, self.v, self.z, self.lam, self.theta)
        )


@dataclass(frozen=True)
class StepSizes:
    eta_x: float = 0.01
    eta_y: float = 0.02
    eta_v: float = 0.01
    eta_z: float = 0.02
    eta_lambda: float = 0.1
    eta_theta: float = 0.01

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if not val > 0:
                raise ConfigError(f"step size {name} must be > 0, got {val}")


# Step sizes used for the published experiments, keyed by dataset.
STEP_SIZE_TABLE = {
    "mnist": StepSizes(0.001, 0.02, 0.001, 0.02, 0.1, 0.001),
    "fashion_mnist": StepSizes(0.001, 0.02, 0.001, 0.02, 0.1, 0.001),
    "cifar10": StepSizes(0.001, 0.02, 0.001, 0.02, 0.1, 0.001),
    "covertype": StepSizes(0.01, 0.02, 0.01, 0.02, 0.1, 0.01),
    "ijcnn1": StepSizes(0.01, 0.005, 0.01, 0.005, 0.1, 0.01),
    "australian": StepSizes(0.001, 0.02, 0.001, 0.02, 5.0, 0.001),
}


@dataclass(frozen=True)
class RegSchedule:
    eta_lambda: float = 0.1
    eta_theta: float = 0.01
    c1_floor: float = 1e-6
    c2_floor: float = 1e-6

    def __post_init__(self):
        if not (self.eta_lambda > 0 and self.eta_theta > 0):
            raise ConfigError("schedule step sizes must be > 0")
        if self.c1_floor < 0 or self.c2_floor < 0:
            raise ConfigError("schedule floors must be >= 0")

    @classmethod
    def from_steps(cls, steps, c1_floor=1e-6, c2_floor=1e-6):
        return cls(steps.eta_lambda, steps.eta_theta, c1_floor, c2_floor)


def reg_c1(schedule, t):
    return max(1.0 / (schedule.eta_lambda * (t + 1) ** 0.25), schedule.c1_floor)


def reg_c2(schedule, t):
    return max(1.0 / (schedule.eta_theta * (t + 1) ** 0.25), schedule.c2_floor)


def _slacks(state, polytope):
    if len(state.lam) != len(polytope):
        raise ValueError(f"{len(state.lam)} duals for {len(polytope)} planes")
    return polytope.slacks(state.v, state.y, state.z)


def lagrangian_value(state, polytope, problem):
    s = _slacks(state, polytope)
    consensus = np.sum(state.theta * (state.x - state.v))
    return upper_sum(problem, state.x, state.y) + float(state.lam @ s) + float(consensus)


def reg_lagrangian_value(state, polytope, problem, schedule):
    c1, c2 = reg_c1(schedule, state.t), reg_c2(schedule, state.t)
    return (
        lagrangian_value(state, polytope, problem)
        - 0.5 * c1 * float(state.lam @ state.lam)
        - 0.5 * c2 * float(np.sum(state.theta**2))
    )


def grad_block(block, state, polytope, problem, schedule=None, index=None):
    """Closed-form gradient of ``L~_p`` (or ``L_p`` when ``schedule`` is None) for one block.

    ``index`` selects the worker for ``x``/``y``/``theta`` and the plane for
    ``lambda``; ``lambda`` without an index returns the whole dual vector's
    gradient.
    """
    c1 = reg_c1(schedule, state.t) if schedule is not None else 0.0
    c2 = reg_c2(schedule, state.t) if schedule is not None else 0.0
    N = problem.dims.N
    if block in ("x", "y", "theta"):
        if index is None or not 0 <= index < N:
            raise IndexError(f"block {block!r} needs a worker index in [0, {N})")
        i = index
        if block == "x":
            return problem.upper_grad_x(i, state.x[i], state.y[i]) + state.theta[i]
        if block == "y":
            g = problem.upper_grad_y(i, state.x[i], state.y[i])
            if len(polytope):
                g = g + state.lam @ polytope.B[:, i, :]
            return g
        return (state.x[i] - state.v) - c2 * state.theta[i]
    if block == "v":
        g = -np.sum(state.theta, axis=0)
        if len(polytope):
            g = g + state.lam @ polytope.A
        return g
    if block == "z":
        if len(polytope):
            return state.lam @ polytope.C
        return np.zeros(problem.dims.m)
    if block == "lambda":
        g = _slacks(state, polytope) - c1 * state.lam
        if index is None:
            return g
        if not 0 <= index < len(g):
            raise IndexError(f"plane index {index} out of range")
        return g[index]
    raise ValueError(f"unknown block {block!r}; expected one of {BLOCKS}")


def project_duals(state, lam_max=1e3, theta_max=1e3):
    """Clamp ``lam`` to ``[0, lam_max]`` and shrink each ``theta_i`` into a ball."""
    lam = np.clip(state.lam, 0.0, lam_max)
    theta = state.theta.copy()
    norms = np.linalg.norm(theta, axis=1)
    over = norms > theta_max
    theta[over] *= (theta_max / norms[over])[:, None]
    return replace(state, lam=lam, theta=theta)


def stationarity_gap_sq(state, polytope, problem):
    """Squared norm of the stacked gradient of the unregularized ``L_p``.

    Overflow yields ``inf`` silently; callers treat that as divergence.
    """
    N = problem.dims.N
    total = 0.0
    with np.errstate(over="ignore"):
        for i in range(N):
            for blk in ("x", "y", "theta"):
                g = grad_block(blk, state, polytope, problem, None, i)
                total += float(g @ g)
        for blk in ("v", "z", "lambda"):
            g = grad_block(blk, state, polytope, problem)
            total += float(g @ g)
    return total


def approximate_problem_value(problem, polytope, x0=None, tol=1e-12):
    """Optimal value of ``min sum_i G_i(v, y_i)`` subject to the plane constraints.

    The consensus constraints ``x_i = v`` are eliminated by substitution.
    Solved with SLSQP; intended for small problems such as convergence
    checks on toy instances.  Returns ``(value, (v, ys, z))``.
    """
    d = problem.dims
    nv, ny = d.n, d.N * d.m

    def unpack(w):
        return w[:nv], w[nv:nv + ny].reshape(d.N, d.m), w[nv + ny:]

    def fun(w):
        v, ys, _ = unpack(w)
        return sum(problem.upper_value(i, v, ys[i]) for i in range(d.N))

    def jac(w):
        v, ys, _ = unpack(w)
        gv = sum(problem.upper_grad_x(i, v, ys[i]) for i in range(d.N))
        gy = np.concatenate([problem.upper_grad_y(i, v, ys[i]) for i in range(d.N)])
        return np.concatenate([gv, gy, np.zeros(d.m)])

    cons = []
    if len(polytope):
        G = np.hstack([polytope.A, polytope.B.reshape(len(polytope), -1), polytope.C])
        cons.append({
            "type": "ineq",
            "fun": lambda w: -(G @ w + polytope.kappa),
            "jac": lambda w: -G,
        })
    w0 = np.zeros(nv + ny + d.m) if x0 is None else np.asarray(x0, dtype=float)
    res = minimize(fun, w0, jac=jac, constraints=cons, method="SLSQP",
                   options={"ftol": tol, "maxiter": 1000})
    if not res.success:
        raise RuntimeError(f"approximate problem solve failed: {res.message}")
    return float(res.fun), unpack(res.x)
