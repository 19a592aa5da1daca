"""Centralized cutting-plane bilevel solver.

Phase 1 alternates primal descent and dual ascent on the Lagrangian of
the polytope-approximated problem while maintaining the planes.  Phase 2
freezes the polytope and its duals and runs plain gradient descent on
the squared-hinge penalty::

    L^ = F(x, y) + sum_l lam_l * max(0, a_l.x + b_l.y + kappa_l)^2

Problems are :class:`~adbo.problems.BilevelProblem` instances with a
single worker; ``x`` plays the role of ``v`` and planes carry ``c = 0``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cutplane import Polytope, add_if_violated, drop_inactive
from .exceptions import ConfigError, DivergenceError
from .engine import TraceRow

__all__ = [
    "CpboSteps",
    "CpboConfig",
    "CpboState",
    "phi_estimate_centralized",
    "cpbo_h_eval",
    "cpbo_phase1_step",
    "cpbo_penalty_value",
    "cpbo_penalty_grad",
    "cpbo_phase2_step",
    "run_cpbo",
    "simulate_cpbo",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CpboSteps:
    eta_x: float = 0.05
    eta_y: float = 0.05
    eta_lambda: float = 0.1

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if not val > 0:
                raise ConfigError(f"step size {name} must be > 0, got {val}")


@dataclass(frozen=True)
class CpboConfig:
    problem: object
    steps: CpboSteps = field(default_factory=CpboSteps)
    K: int = 1
    eta_lower: float = 0.25
    T1: int = 500
    k_pre: int = 10
    M: int = 20
    eps: float = 0.01
    max_iter: int = 2000
    gap_tol: float = 0.0
    x0: tuple | None = None
    y0: tuple | None = None

    def __post_init__(self):
        d = self.problem.dims
        for name, size in (("x0", d.n), ("y0", d.m)):
            val = getattr(self, name)
            if val is not None and np.shape(val) != (size,):
                raise ConfigError(f"{name} must have length {size}")
        if d.N != 1:
            raise ConfigError("the centralized solver needs a single-worker problem")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if not self.eta_lower > 0:
            raise ConfigError("eta_lower must be > 0")
        if self.T1 < 0 or self.k_pre < 1 or self.M < 1 or self.max_iter < 1:
            raise ConfigError("need T1 >= 0, k_pre >= 1, M >= 1 and max_iter >= 1")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")


@dataclass
class CpboState:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    polytope: Polytope
    t: int = 0

    @classmethod
    def zeros(cls, dims, M=20):
        return cls(np.zeros(dims.n), np.zeros(dims.m), np.zeros(0), Polytope.empty(dims, M))

    def slacks(self, x=None, y=None):
        x = self.x if x is None else x
        y = self.y if y is None else y
        return self.polytope.slacks(x, y[None, :], np.zeros(self.polytope.m))


def _descend(problem, x, y, K, eta, anchor):
    for k in range(K):
        g = problem.lower_grad_y(0, anchor, y)
        dx = x - anchor
        if np.any(dx):
            g = g + problem.mixed_jvp(0, anchor, y, dx)
        y = y - eta * g
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"lower-level descent diverged at step k={k}")
    return y


def phi_estimate_centralized(problem, x, K=1, eta=0.25, y0=None, anchor=None):
    """``K`` gradient steps on the lower objective linearized in ``x`` around ``anchor``.

    ``anchor`` defaults to ``x``; ``y0`` defaults to zeros.
    """
    x = np.asarray(x, dtype=float)
    y = np.zeros(problem.dims.m) if y0 is None else np.asarray(y0, dtype=float)
    xbar = x if anchor is None else np.asarray(anchor, dtype=float)
    return _descend(problem, x, y, K, eta, xbar)


def _phi_jacobian_t(problem, x, K, eta, u):
    """``(d phi / dx).T @ u``; closed form for one step, central differences otherwise."""
    y0 = np.zeros(problem.dims.m)
    if K == 1:
        return -eta * problem.mixed_vjp(0, x, y0, u)
    warnings.warn("K > 1: Jacobian of the lower-level estimate uses finite differences",
                  RuntimeWarning, stacklevel=3)
    h = 1e-6 * (1.0 + np.linalg.norm(x))
    out = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        plus = phi_estimate_centralized(problem, x + e, K, eta)
        minus = phi_estimate_centralized(problem, x - e, K, eta)
        out[j] = u @ (plus - minus) / (2.0 * h)
    return out


def cpbo_h_eval(problem, x, y, K=1, eta=0.25):
    """``h = ||y - phi(x)||^2`` with its gradients ``(dh/dx, dh/dy)``."""
    res = np.asarray(y, dtype=float) - phi_estimate_centralized(problem, x, K, eta)
    gx = -2.0 * _phi_jacobian_t(problem, np.asarray(x, dtype=float), K, eta, res)
    return float(res @ res), (gx, 2.0 * res)


def cpbo_phase1_step(state, problem, steps):
    """Gauss-Seidel primal descent and clamped dual ascent on the plain Lagrangian."""
    P = state.polytope
    B = P.B[:, 0, :]
    x = state.x - steps.eta_x * (problem.upper_grad_x(0, state.x, state.y) + state.lam @ P.A)
    y = state.y - steps.eta_y * (problem.upper_grad_y(0, x, state.y) + state.lam @ B)
    lam = state.lam
    if len(P):
        lam = np.maximum(0.0, lam + steps.eta_lambda * state.slacks(x, y))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(lam))):
        raise DivergenceError(f"phase-1 update became non-finite at t={state.t + 1}")
    return CpboState(x, y, lam, P, state.t + 1)


def cpbo_penalty_value(state, problem):
    hinge = np.maximum(0.0, state.slacks())
    return problem.upper_value(0, state.x, state.y) + float(state.lam @ hinge**2)


def cpbo_penalty_grad(state, problem):
    """Gradient ``(d/dx, d/dy)`` of the squared-hinge penalty; continuous at zero slack."""
    P = state.polytope
    w = 2.0 * state.lam * np.maximum(0.0, state.slacks())
    gx = problem.upper_grad_x(0, state.x, state.y) + w @ P.A
    gy = problem.upper_grad_y(0, state.x, state.y) + w @ P.B[:, 0, :]
    return gx, gy


def cpbo_phase2_step(state, problem, steps):
    """Gauss-Seidel descent on the penalty with the polytope and duals held fixed."""
    gx, _ = cpbo_penalty_grad(state, problem)
    mid = CpboState(state.x - steps.eta_x * gx, state.y, state.lam, state.polytope, state.t)
    _, gy = cpbo_penalty_grad(mid, problem)
    y = state.y - steps.eta_y * gy
    if not (np.all(np.isfinite(mid.x)) and np.all(np.isfinite(y))):
        raise DivergenceError(f"phase-2 update became non-finite at t={state.t + 1}")
    return CpboState(mid.x, y, state.lam, state.polytope, state.t + 1)


def _maintain(state, lam_prev, problem, cfg):
    poly, lam = drop_inactive(state.polytope, lam_prev, state.lam)
    h, (gx, gy) = cpbo_h_eval(problem, state.x, state.y, cfg.K, cfg.eta_lower)
    zeros = np.zeros(problem.dims.m)
    point = (state.x, state.y[None, :], zeros)
    poly, lam, _ = add_if_violated(poly, lam, point, h, (gx, gy[None, :], zeros), cfg.eps)
    return CpboState(state.x, state.y, lam, poly, state.t), h


def _phase1_gap_sq(state, problem):
    P = state.polytope
    gx = problem.upper_grad_x(0, state.x, state.y) + state.lam @ P.A
    gy = problem.upper_grad_y(0, state.x, state.y) + state.lam @ P.B[:, 0, :]
    s = state.slacks()
    return float(gx @ gx + gy @ gy + s @ s)


@dataclass
class CpboResult:
    trace: list
    state: CpboState


def simulate_cpbo(cfg):
    problem = cfg.problem
    state = CpboState.zeros(problem.dims, cfg.M)
    if cfg.x0 is not None:
        state.x = np.array(cfg.x0, dtype=float)
    if cfg.y0 is not None:
        state.y = np.array(cfg.y0, dtype=float)
    trace = []
    try:
        while state.t < cfg.max_iter:
            t = state.t
            if t < cfg.T1:
                lam_prev = state.lam
                state = cpbo_phase1_step(state, problem, cfg.steps)
                h = None
                if (t + 1) % cfg.k_pre == 0:
                    state, h = _maintain(state, lam_prev, problem, cfg)
                gap = _phase1_gap_sq(state, problem)
                F = problem.upper_value(0, state.x, state.y)
            else:
                state = cpbo_phase2_step(state, problem, cfg.steps)
                h = None
                gx, gy = cpbo_penalty_grad(state, problem)
                gap = float(gx @ gx + gy @ gy)
                F = problem.upper_value(0, state.x, state.y)
            if h is None:
                h, _ = cpbo_h_eval(problem, state.x, state.y, cfg.K, cfg.eta_lower)
            row = TraceRow(state.t, float(state.t), float(F), float(h), gap,
                           len(state.polytope), 0.0, (0,))
            if not np.isfinite([row.F, row.h, row.gap_sq]).all():
                raise DivergenceError(f"non-finite trace values at t={state.t}")
            trace.append(row)
            if gap <= cfg.gap_tol:
                break
    except DivergenceError as exc:
        raise DivergenceError(str(exc), last_row=trace[-1] if trace else None, trace=trace) from exc
    return CpboResult(trace, state)


def run_cpbo(cfg):
    """Two-phase run; returns the list of :class:`~adbo.engine.TraceRow`.

    Virtual time counts iterations.  ``c1`` is reported as zero because
    the centralized method has no dual regularization.
    """
    return simulate_cpbo(cfg).trace
