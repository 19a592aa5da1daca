"""Cutting planes approximating the relaxed lower-level constraint ``h <= eps``.

A plane is the half-space ``a.v + sum_i b_i.y_i + c.z + kappa <= 0``.
Planes are generated from the linearization of the convex ``h`` at a
violated point, so every point with ``h <= eps`` stays feasible while the
violated point is cut off.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CuttingPlane",
    "Polytope",
    "ZERO_DUAL_TOL",
    "plane_slack",
    "generate_plane",
    "drop_inactive",
    "add_if_violated",
    "polytope_to_json",
    "polytope_from_json",
]

logger = logging.getLogger(__name__)

ZERO_DUAL_TOL = 1e-12


@dataclass(frozen=True)
class CuttingPlane:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).ravel())
        object.__setattr__(self, "b", np.atleast_2d(np.asarray(self.b, dtype=float)))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).ravel())
        object.__setattr__(self, "kappa", float(self.kappa))
        parts = (self.a, self.b.ravel(), self.c, np.array([self.kappa]))
        if not all(np.all(np.isfinite(p)) for p in parts):
            raise ValueError("cutting plane coefficients must be finite")
        if not any(np.any(p != 0) for p in parts):
            raise ValueError("cutting plane has all-zero coefficients")

    def slack(self, v, ys, z):
        ys = np.asarray(ys, dtype=float)
        if ys.size != self.b.size or np.shape(v) != self.a.shape or np.shape(z) != self.c.shape:
            raise ValueError("point dimensions do not match the plane")
        ys = ys.reshape(self.b.shape)
        return float(self.a @ v + np.sum(self.b * ys) + self.c @ z + self.kappa)


def plane_slack(plane, v, ys, z):
    """``a.v + sum_i b_i.y_i + c.z + kappa``; feasible iff ``<= 0``."""
    return plane.slack(np.asarray(v, dtype=float), ys, np.asarray(z, dtype=float))


class Polytope:
    """Ordered, capped collection of cutting planes.

    Instances are treated as immutable; the update helpers return new
    polytopes.  Stacked coefficient arrays are built once per instance.
    """

    def __init__(self, N, n, m, planes=(), M=20):
        if M < 1:
            raise ValueError("M must be >= 1")
        self.N, self.n, self.m, self.M = int(N), int(n), int(m), int(M)
        self.planes = tuple(planes)
        if len(self.planes) > self.M:
            raise ValueError(f"{len(self.planes)} planes exceed the cap M={self.M}")
        L = len(self.planes)
        self.A = np.array([p.a for p in self.planes]).reshape(L, self.n)
        self.B = np.array([p.b for p in self.planes]).reshape(L, self.N, self.m)
        self.C = np.array([p.c for p in self.planes]).reshape(L, self.m)
        self.kappa = np.array([p.kappa for p in self.planes], dtype=float)

    @classmethod
    def empty(cls, dims, M=20):
        return cls(dims.N, dims.n, dims.m, (), M)

    def __len__(self):
        return len(self.planes)

    def __iter__(self):
        return iter(self.planes)

    def __getitem__(self, k):
        return self.planes[k]

    def replace(self, planes):
        return Polytope(self.N, self.n, self.m, planes, self.M)

    def slacks(self, v, ys, z):
        if not self.planes:
            return np.zeros(0)
        return self.A @ v + np.einsum("lim,im->l", self.B, ys) + self.C @ z + self.kappa


def generate_plane(point, h_val, h_grads, eps):
    """Linearize ``h`` at the violated ``point = (v, ys, z)``.

    The result is ``h(p) + grad h(p).(w - p) <= eps`` written as a plane;
    its slack at ``p`` equals ``h_val - eps``.
    """
    if not h_val > eps:
        raise ValueError(f"generate_plane called on a feasible point (h={h_val} <= eps={eps})")
    v, ys, z = (np.asarray(t, dtype=float) for t in point)
    gv, gy, gz = (np.asarray(t, dtype=float) for t in h_grads)
    kappa = h_val - eps - (gv @ v + np.sum(gy * ys) + gz @ z)
    return CuttingPlane(gv.copy(), gy.copy(), gz.copy(), kappa)


def drop_inactive(polytope, lam_prev, lam_curr, tol=ZERO_DUAL_TOL):
    """Remove planes whose dual is zero at both checkpoints.

    Returns the reduced polytope and the surviving entries of ``lam_curr``.
    """
    lam_prev = np.asarray(lam_prev, dtype=float)
    lam_curr = np.asarray(lam_curr, dtype=float)
    if not (len(lam_prev) == len(lam_curr) == len(polytope)):
        raise ValueError("dual vectors must have one entry per plane")
    keep = (np.abs(lam_prev) > tol) | (np.abs(lam_curr) > tol)
    planes = [p for p, k in zip(polytope.planes, keep) if k]
    return polytope.replace(planes), lam_curr[keep].copy()


def add_if_violated(polytope, duals, point, h_val, h_grads, eps, tol=ZERO_DUAL_TOL):
    """Append the plane separating ``point`` when ``h_val > eps``; its dual starts at 0.

    At the cap the oldest plane with a zero dual is evicted first; if every
    plane is active the addition is skipped.
    """
    duals = np.asarray(duals, dtype=float)
    if len(duals) != len(polytope):
        raise ValueError("dual vector must have one entry per plane")
    if not h_val > eps:
        return polytope, duals.copy(), False
    planes = list(polytope.planes)
    if len(planes) >= polytope.M:
        idle = np.flatnonzero(np.abs(duals) <= tol)
        if len(idle) == 0:
            logger.warning("polytope at cap M=%d with all duals active; plane not added", polytope.M)
            return polytope, duals.copy(), False
        k = int(idle[0])
        del planes[k]
        duals = np.delete(duals, k)
    planes.append(generate_plane(point, h_val, h_grads, eps))
    return polytope.replace(planes), np.append(duals, 0.0), True


def polytope_to_json(polytope):
    """Serialize planes as ``[{a, b, c, kappa}, ...]``.

    Floats are written with Python's shortest round-trip repr, so reading
    them back is exact.
    """
    rows = [
        {"a": p.a.tolist(), "b": p.b.tolist(), "c": p.c.tolist(), "kappa": p.kappa}
        for p in polytope
    ]
    return json.dumps(rows)


def polytope_from_json(text, N, n, m, M=20):
    rows = json.loads(text)
    planes = [CuttingPlane(r["a"], r["b"], r["c"], r["kappa"]) for r in rows]
    return Polytope(N, n, m, planes, M)
