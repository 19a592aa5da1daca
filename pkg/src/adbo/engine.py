"""Deterministic parameter-server simulation of asynchronous and synchronous runs.

Time is virtual.  Every worker is always busy computing its next update
against the last snapshot the master sent it; the update finishes
``sample_delay`` time units after dispatch.  The master waits for the
``S`` earliest finishers (plus anyone about to exceed the staleness
bound), applies their updates, takes one Gauss-Seidel step on the
consensus variables and duals, then re-dispatches exactly the workers it
heard from.

Worker updates are evaluated lazily when the master consumes them.  This
is numerically identical to evaluating them at dispatch time because a
worker's local iterate and snapshot only change when it is consumed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cutplane import Polytope, add_if_violated, drop_inactive
from .exceptions import ConfigError, DivergenceError
from .lower_level import LowerConfig, h_eval, h_value
from .problems import upper_sum
from .saddle import (
    PrimalDualState,
    RegSchedule,
    StepSizes,
    grad_block,
    project_duals,
    reg_c1,
    reg_c2,
    stationarity_gap_sq,
)

__all__ = [
    "DelayModel",
    "WorkerSnapshot",
    "RunConfig",
    "TraceRow",
    "sample_delay",
    "select_active",
    "worker_step",
    "master_step",
    "maintenance_due",
    "plane_maintenance",
    "RunResult",
    "simulate_adbo",
    "simulate_sdbo",
    "run_adbo",
    "run_sdbo",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DelayModel:
    """Log-normal per-update delay, scaled per worker.

    ``multipliers`` is either ``None`` (all ones) or one positive factor
    per worker; stragglers have factors above one.
    """

    mu_log: float = 3.5
    sigma_log: float = 1.0
    multipliers: tuple | None = None

    def __post_init__(self):
        if not self.sigma_log >= 0:
            raise ConfigError("sigma_log must be >= 0")
        if self.multipliers is not None:
            mult = tuple(float(m) for m in self.multipliers)
            if not all(m > 0 for m in mult):
                raise ConfigError("delay multipliers must be > 0")
            object.__setattr__(self, "multipliers", mult)

    @classmethod
    def with_stragglers(cls, N, stragglers=(), factor=4.0, mu_log=3.5, sigma_log=1.0):
        mult = [1.0] * N
        for i in stragglers:
            if not 0 <= i < N:
                raise ConfigError(f"straggler index {i} out of range for N={N}")
            mult[i] = float(factor)
        return cls(mu_log, sigma_log, tuple(mult))

    @classmethod
    def constant(cls, value=1.0):
        if not value > 0:
            raise ConfigError("constant delay must be > 0")
        return cls(float(np.log(value)), 0.0, None)

    def multiplier(self, worker):
        return 1.0 if self.multipliers is None else self.multipliers[worker]

    def streams(self, N, seed):
        """One independent generator per worker, spawned from ``seed``."""
        return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(N)]


def sample_delay(model, worker, rng):
    return model.multiplier(worker) * float(np.exp(rng.normal(model.mu_log, model.sigma_log)))


@dataclass
class WorkerSnapshot:
    """What worker ``i`` last received from the master."""

    t_hat: int
    v: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    theta: np.ndarray
    polytope: Polytope
    completion: float = 0.0
    in_flight: bool = True


@dataclass(frozen=True)
class RunConfig:
    problem: object
    S: int = 1
    tau: int = 15
    lower: LowerConfig = field(default_factory=LowerConfig)
    k_pre: int = 10
    T1: int = 100_000
    M: int = 20
    eps: float = 0.01
    steps: StepSizes = field(default_factory=StepSizes)
    c1_floor: float = 1e-6
    c2_floor: float = 1e-6
    delay: DelayModel = field(default_factory=DelayModel)
    max_iter: int = 100_000
    gap_tol: float = 1e-3
    seed: int = 0
    local_steps: int = 1
    lam_max: float = 1e3
    theta_max: float = 1e3

    def __post_init__(self):
        N = self.problem.dims.N
        if not 1 <= self.S <= N:
            raise ConfigError(f"S must satisfy 1 <= S <= N={N}, got {self.S}")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.k_pre < 1:
            raise ConfigError("k_pre must be >= 1")
        if self.T1 < 0:
            raise ConfigError("T1 must be >= 0")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1")
        if not (self.lam_max > 0 and self.theta_max > 0):
            raise ConfigError("dual bounds must be > 0")
        mult = self.delay.multipliers
        if mult is not None and len(mult) != N:
            raise ConfigError(f"delay model has {len(mult)} multipliers for N={N} workers")

    @property
    def schedule(self):
        return RegSchedule.from_steps(self.steps, self.c1_floor, self.c2_floor)


@dataclass(frozen=True)
class TraceRow:
    t: int
    vtime: float
    F: float
    h: float
    gap_sq: float
    planes: int
    c1: float
    active: tuple


def select_active(completion, S, tau, t_hat, t):
    """Workers the master consumes at iteration ``t + 1``.

    Returns ``(active_ids, decision_time)``.  The ``S`` earliest
    completions are taken (ties broken by worker index).  A worker whose
    staleness would reach ``tau`` is added regardless of its completion
    time; if that makes the master wait longer, every worker finished by
    then is consumed too.
    """
    completion = np.asarray(completion, dtype=float)
    N = len(completion)
    order = sorted(range(N), key=lambda i: (completion[i], i))
    chosen = set(order[:S])
    base_time = max(completion[i] for i in chosen)
    forced = {i for i in range(N) if (t + 1) - t_hat[i] >= tau}
    chosen |= forced
    decision = max(completion[i] for i in chosen)
    if decision > base_time:
        chosen |= {i for i in range(N) if completion[i] <= decision}
    return sorted(chosen), float(decision)


def worker_step(problem, snapshot, i, x_i, y_i, steps, local_steps=1):
    """Gradient step on the local blocks against the worker's stale snapshot.

    The regularizers of the Lagrangian do not involve ``x_i`` or ``y_i``,
    so the schedule index carried by the snapshot has no effect here.
    """
    poly = snapshot.polytope
    for _ in range(local_steps):
        gx = problem.upper_grad_x(i, x_i, y_i) + snapshot.theta
        gy = problem.upper_grad_y(i, x_i, y_i)
        if len(poly):
            gy = gy + snapshot.lam @ poly.B[:, i, :]
        x_i, y_i = x_i - steps.eta_x * gx, y_i - steps.eta_y * gy
    if not (np.all(np.isfinite(x_i)) and np.all(np.isfinite(y_i))):
        raise DivergenceError(f"worker {i} produced a non-finite update after t_hat={snapshot.t_hat}")
    return x_i, y_i


def master_step(state, active, polytope, problem, steps, schedule, lam_max=1e3, theta_max=1e3):
    """One Gauss-Seidel pass over ``v``, ``z``, the plane duals and active ``theta_i``.

    ``state`` must already hold the fresh ``x_i``/``y_i`` of the active
    workers.  Returns a new state with ``t`` advanced by one.
    """
    if len(active) == 0:
        raise ValueError("master_step needs at least one active worker")
    s = state.copy()
    s.v = s.v - steps.eta_v * grad_block("v", s, polytope, problem)
    s.z = s.z - steps.eta_z * grad_block("z", s, polytope, problem)
    if len(polytope):
        s.lam = s.lam + steps.eta_lambda * grad_block("lambda", s, polytope, problem, schedule)
    c2 = reg_c2(schedule, s.t)
    for i in active:
        s.theta[i] = s.theta[i] + steps.eta_theta * ((s.x[i] - s.v) - c2 * s.theta[i])
    s = project_duals(s, lam_max, theta_max)
    s.t = state.t + 1
    if not s.is_finite():
        raise DivergenceError(f"master update became non-finite at t={s.t}")
    return s


def maintenance_due(t, cfg):
    """Whether planes are maintained right after master iteration ``t`` -> ``t + 1``."""
    return (t + 1) % cfg.k_pre == 0 and t < cfg.T1


def plane_maintenance(state, lam_prev, polytope, problem, cfg, phi_init=None):
    """Drop idle planes, then cut off the current point if it violates ``h <= eps``.

    ``state`` is the freshly updated iterate (``state.t`` already advanced)
    and ``lam_prev`` the duals one master iteration earlier.  Returns
    ``(polytope, lam, h, phi)`` with ``h`` and ``phi`` evaluated at the
    current point, or the inputs unchanged and ``h = phi = None`` when
    maintenance is not due.
    """
    if not maintenance_due(state.t - 1, cfg):
        return polytope, state.lam, None, None
    poly, lam = drop_inactive(polytope, lam_prev, state.lam)
    h, grads, phi = h_eval(problem, state.v, state.y, state.z, cfg.lower, phi_init)
    point = (state.v, state.y, state.z)
    poly, lam, added = add_if_violated(poly, lam, point, h, grads, cfg.eps)
    if added:
        logger.debug("t=%d: plane added (h=%.6g), %d planes", state.t, h, len(poly))
    return poly, lam, h, phi


class _Run:
    """Shared state of one simulated run."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.problem = cfg.problem
        self.schedule = cfg.schedule
        self.state = PrimalDualState.zeros(self.problem.dims)
        self.polytope = Polytope.empty(self.problem.dims, cfg.M)
        self.phi_init = None
        self.trace = []

    def snapshot_of(self, i, t_hat):
        s = self.state
        return WorkerSnapshot(t_hat, s.v.copy(), s.z.copy(), s.lam.copy(), s.theta[i].copy(), self.polytope)

    def iterate(self, active, snaps, vtime):
        cfg, problem = self.cfg, self.problem
        t = self.state.t
        lam_prev = self.state.lam
        for i in active:
            self.state.x[i], self.state.y[i] = worker_step(
                problem, snaps[i], i, self.state.x[i], self.state.y[i], cfg.steps, cfg.local_steps
            )
        self.state = master_step(
            self.state, active, self.polytope, problem, cfg.steps, self.schedule,
            cfg.lam_max, cfg.theta_max,
        )
        self.polytope, lam, h, phi = plane_maintenance(
            self.state, lam_prev, self.polytope, problem, cfg, self.phi_init
        )
        if phi is not None:
            self.state.lam = lam
            if cfg.lower.warm_start:
                self.phi_init = phi.as_init()
            for sn in snaps:
                sn.polytope, sn.lam = self.polytope, lam.copy()
        if h is None:
            h = h_value(problem, self.state.v, self.state.y, self.state.z, cfg.lower, self.phi_init)
        row = TraceRow(
            t=t + 1,
            vtime=float(vtime),
            F=upper_sum(problem, self.state.x, self.state.y),
            h=float(h),
            gap_sq=stationarity_gap_sq(self.state, self.polytope, problem),
            planes=len(self.polytope),
            c1=reg_c1(self.schedule, t),
            active=tuple(int(i) for i in active),
        )
        if not all(np.isfinite([row.F, row.h, row.gap_sq])):
            raise DivergenceError(f"non-finite trace values at t={t + 1}")
        self.trace.append(row)
        return row

    def done(self, row):
        return row.gap_sq <= self.cfg.gap_tol or row.t >= self.cfg.max_iter

    def guarded(self, body):
        try:
            body()
        except DivergenceError as exc:
            last = self.trace[-1] if self.trace else None
            raise DivergenceError(str(exc), last_row=last, trace=list(self.trace)) from exc
        return RunResult(self.trace, self.state, self.polytope)


@dataclass
class RunResult:
    """Trace plus the final iterates and polytope of a run."""

    trace: list
    state: PrimalDualState
    polytope: Polytope


def _check_staleness(t_hat, t, tau):
    worst = max(t - th for th in t_hat)
    if worst > tau:
        raise AssertionError(f"staleness bound violated at t={t}: {worst} > tau={tau}")


def run_adbo(cfg):
    """Asynchronous run; returns the list of :class:`TraceRow`."""
    return simulate_adbo(cfg).trace


def run_sdbo(cfg):
    """Synchronous baseline; returns the list of :class:`TraceRow`."""
    return simulate_sdbo(cfg).trace


def simulate_adbo(cfg):
    run = _Run(cfg)
    N = cfg.problem.dims.N
    rngs = cfg.delay.streams(N, cfg.seed)
    snaps = [run.snapshot_of(i, 0) for i in range(N)]
    for i in range(N):
        snaps[i].completion = sample_delay(cfg.delay, i, rngs[i])

    def body():
        while True:
            t = run.state.t
            t_hat = [sn.t_hat for sn in snaps]
            active, decision = select_active([sn.completion for sn in snaps], cfg.S, cfg.tau, t_hat, t)
            row = run.iterate(active, snaps, decision)
            for i in active:
                snaps[i] = run.snapshot_of(i, t + 1)
                snaps[i].completion = decision + sample_delay(cfg.delay, i, rngs[i])
            _check_staleness([sn.t_hat for sn in snaps], t + 1, cfg.tau)
            if run.done(row):
                return

    return run.guarded(body)


def simulate_sdbo(cfg):
    """Synchronous baseline: every worker is consumed each iteration after a barrier."""
    run = _Run(cfg)
    N = cfg.problem.dims.N
    rngs = cfg.delay.streams(N, cfg.seed)
    everyone = list(range(N))

    def body():
        vtime = 0.0
        while True:
            snaps = [run.snapshot_of(i, run.state.t) for i in everyone]
            delays = [sample_delay(cfg.delay, i, rngs[i]) for i in everyone]
            vtime = vtime + max(delays)
            row = run.iterate(everyone, snaps, vtime)
            if run.done(row):
                return

    return run.guarded(body)
