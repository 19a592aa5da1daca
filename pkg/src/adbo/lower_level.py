"""Estimate of the lower-level solution map and the constraint function ``h``.

``phi_estimate`` runs ``K`` rounds of the augmented-Lagrangian
primal-dual scheme on the lower-level consensus problem, with each
``g_i`` replaced by its first-order Taylor expansion in ``v`` around an
anchor ``vbar``::

    y_i <- y_i - eta_y * (grad_y g~_i(v, y_i) + d_i + mu (y_i - z))
    z   <- z   - eta_z * sum_i (-d_i - mu (y_i - z))        # round-k y_i
    d_i <- d_i + eta_phi * (y_i_new - z_new)

``h(v, {y_i}, z) = ||[{y_i}; z] - phi(v)||^2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DivergenceError

__all__ = [
    "LowerConfig",
    "PhiInit",
    "PhiResult",
    "taylor_lower_grad_y",
    "phi_estimate",
    "h_value",
    "h_gradient",
    "h_eval",
]


@dataclass(frozen=True)
class LowerConfig:
    K: int = 1
    mu: float = 1.0
    eta_y: float = 0.1
    eta_z: float = 0.1
    eta_phi: float = 0.1
    warm_start: bool = False

    def __post_init__(self):
        if int(self.K) < 1:
            raise ConfigError("K must be >= 1")
        for name in ("mu", "eta_y", "eta_z", "eta_phi"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")


@dataclass
class PhiInit:
    """Starting point of the K-round estimator (zeros when omitted)."""

    y: np.ndarray
    z: np.ndarray
    duals: np.ndarray

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros((dims.N, dims.m)), np.zeros(dims.m), np.zeros((dims.N, dims.m)))


class JacobianOp:
    """``d phi / d v`` as a linear map from ``n`` to ``N*m + m``."""

    def __init__(self, n, rows, jvp=None, vjp=None, matrix=None):
        self.shape = (rows, n)
        self._jvp, self._vjp, self._matrix = jvp, vjp, matrix

    def jvp(self, dv):
        if self._matrix is not None:
            return self._matrix @ dv
        return self._jvp(np.asarray(dv, dtype=float))

    def vjp(self, u):
        if self._matrix is not None:
            return self._matrix.T @ u
        return self._vjp(np.asarray(u, dtype=float))

    def matrix(self):
        if self._matrix is None:
            eye = np.eye(self.shape[1])
            self._matrix = np.column_stack([self._jvp(e) for e in eye])
        return self._matrix


@dataclass
class PhiResult:
    y_stack: np.ndarray
    z_out: np.ndarray
    duals: np.ndarray
    jac_v: JacobianOp

    def stacked(self):
        return np.concatenate([self.y_stack.ravel(), self.z_out])

    def as_init(self):
        return PhiInit(self.y_stack.copy(), self.z_out.copy(), self.duals.copy())


def taylor_lower_grad_y(problem, i, vbar, v, y):
    """Gradient in ``y'`` of the Taylor-linearized ``g_i`` around ``vbar``."""
    vbar = np.asarray(vbar, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != vbar.shape or v.shape != (problem.dims.n,):
        raise ValueError(f"v and vbar must have shape ({problem.dims.n},)")
    g = problem.lower_grad_y(i, vbar, y)
    dv = v - vbar
    if np.any(dv):
        g = g + problem.mixed_jvp(i, vbar, y, dv)
    return g


def _rounds(problem, v, vbar, cfg, init):
    N = problem.dims.N
    y = np.array(init.y, dtype=float, copy=True)
    z = np.array(init.z, dtype=float, copy=True)
    d = np.array(init.duals, dtype=float, copy=True)
    for k in range(cfg.K):
        gy = np.stack([taylor_lower_grad_y(problem, i, vbar, v, y[i]) for i in range(N)])
        y_new = y - cfg.eta_y * (gy + d + cfg.mu * (y - z))
        z_new = z - cfg.eta_z * np.sum(-d - cfg.mu * (y - z), axis=0)
        d = d + cfg.eta_phi * (y_new - z_new)
        y, z = y_new, z_new
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z)) and np.all(np.isfinite(d))):
            raise DivergenceError(f"lower-level estimate diverged in round k={k}")
    return y, z, d


def phi_estimate(problem, v, cfg=None, init=None, anchor=None):
    """Run the K-round estimator at ``v``.

    ``anchor`` is the Taylor expansion point; it defaults to ``v`` itself.
    For ``K == 1`` the Jacobian in ``v`` is exact.  For ``K > 1`` it is
    assembled column by column from central differences.
    """
    cfg = cfg or LowerConfig()
    dims = problem.dims
    v = np.asarray(v, dtype=float)
    if v.shape != (dims.n,):
        raise ValueError(f"v has shape {v.shape}, expected ({dims.n},)")
    init = init or PhiInit.zeros(dims)
    vbar = v if anchor is None else np.asarray(anchor, dtype=float)
    y, z, d = _rounds(problem, v, vbar, cfg, init)

    rows = dims.N * dims.m + dims.m
    if cfg.K == 1:
        y0 = np.asarray(init.y, dtype=float)

        def jvp(dv):
            out = np.zeros(rows)
            for i in range(dims.N):
                out[i * dims.m:(i + 1) * dims.m] = -cfg.eta_y * problem.mixed_jvp(i, vbar, y0[i], dv)
            return out

        def vjp(u):
            out = np.zeros(dims.n)
            for i in range(dims.N):
                out -= cfg.eta_y * problem.mixed_vjp(i, vbar, y0[i], u[i * dims.m:(i + 1) * dims.m])
            return out

        jac = JacobianOp(dims.n, rows, jvp=jvp, vjp=vjp)
    else:
        warnings.warn(
            "K > 1: Jacobian of the lower-level estimate uses finite differences",
            RuntimeWarning,
            stacklevel=2,
        )
        jac = JacobianOp(dims.n, rows, matrix=_fd_jacobian(problem, v, anchor, cfg, init))
    return PhiResult(y, z, d, jac)


def _fd_jacobian(problem, v, anchor, cfg, init):
    h = 1e-6 * (1.0 + np.linalg.norm(v))
    cols = []
    for j in range(len(v)):
        e = np.zeros_like(v)
        e[j] = h
        plus = _rounds(problem, v + e, v + e if anchor is None else anchor, cfg, init)
        minus = _rounds(problem, v - e, v - e if anchor is None else anchor, cfg, init)
        cols.append(
            (np.concatenate([plus[0].ravel(), plus[1]]) - np.concatenate([minus[0].ravel(), minus[1]]))
            / (2.0 * h)
        )
    return np.column_stack(cols)


def _residual(problem, v, ys, z, cfg, init, anchor):
    dims = problem.dims
    ys = np.asarray(ys, dtype=float).reshape(dims.N, dims.m)
    z = np.asarray(z, dtype=float)
    if z.shape != (dims.m,):
        raise ValueError(f"z has shape {z.shape}, expected ({dims.m},)")
    phi = phi_estimate(problem, v, cfg, init, anchor)
    res = np.concatenate([ys.ravel(), z]) - phi.stacked()
    return res, phi


def h_value(problem, v, ys, z, cfg=None, init=None, anchor=None):
    res, _ = _residual(problem, v, ys, z, cfg, init, anchor)
    return float(res @ res)


def h_eval(problem, v, ys, z, cfg=None, init=None, anchor=None):
    """Return ``(h, (dh/dv, dh/dy, dh/dz), phi)`` from a single estimator pass."""
    dims = problem.dims
    res, phi = _residual(problem, v, ys, z, cfg, init, anchor)
    gv = -2.0 * phi.jac_v.vjp(res)
    gy = 2.0 * res[: dims.N * dims.m].reshape(dims.N, dims.m)
    gz = 2.0 * res[dims.N * dims.m:]
    return float(res @ res), (gv, gy, gz), phi


def h_gradient(problem, v, ys, z, cfg=None, init=None, anchor=None):
    _, grads, _ = h_eval(problem, v, ys, z, cfg, init, anchor)
    return grads
