import numpy as np
import pytest

from adbo.cpbo import (
    CpboConfig,
    CpboState,
    CpboSteps,
    cpbo_h_eval,
    cpbo_penalty_grad,
    cpbo_penalty_value,
    cpbo_phase1_step,
    phi_estimate_centralized,
    run_cpbo,
    simulate_cpbo,
)
from adbo.cutplane import CuttingPlane, Polytope
from adbo.exceptions import ConfigError
from adbo.problems import make_quadratic_toy
from conftest import central_diff, rel_err


@pytest.fixture
def square():
    """F = x^2 + y^2 with lower objective (y - x)^2."""
    return make_quadratic_toy(1, 1, 1, [0.0], [0.0], [1.0])


def _state(x, y, planes=(), lam=()):
    return CpboState(np.array([x]), np.array([y]), np.array(lam, dtype=float), Polytope(1, 1, 1, list(planes)))


def _plane(a, b, kappa):
    return CuttingPlane([a], [[b]], [0.0], kappa)


def test_phi_one_step(square):
    assert phi_estimate_centralized(square, [2.0], K=1, eta=0.25)[0] == pytest.approx(1.0)
    assert phi_estimate_centralized(square, [0.0], K=1, eta=0.25)[0] == 0.0


def test_phi_many_small_steps_reach_argmin(square):
    assert phi_estimate_centralized(square, [2.0], K=2000, eta=0.01)[0] == pytest.approx(2.0, abs=1e-6)


def test_phi_is_affine_for_one_step(square):
    f = [phi_estimate_centralized(square, [x])[0] for x in (-1.0, 0.5, 2.0)]
    assert (f[1] - f[0]) / 1.5 == pytest.approx((f[2] - f[1]) / 1.5)


def test_h_gradient_matches_fd(square):
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, y = rng.normal(size=1), rng.normal(size=1)
        _, (gx, gy) = cpbo_h_eval(square, x, y)
        assert rel_err(gx, central_diff(lambda a: cpbo_h_eval(square, a, y)[0], x)) < 1e-6
        assert rel_err(gy, central_diff(lambda a: cpbo_h_eval(square, x, a)[0], y)) < 1e-6


def test_penalty_examples(square):
    # slack 2 at the origin, lambda 0.5 -> 0.5 * 4
    s = _state(0.0, 0.0, [_plane(0.0, 0.0, 2.0)], [0.5])
    assert cpbo_penalty_value(s, square) == pytest.approx(2.0)
    kink = _state(1.0, 0.0, [_plane(1.0, 3.0, -1.0)], [0.7])
    gx, gy = cpbo_penalty_grad(kink, square)
    assert gx == pytest.approx([2.0]) and gy == pytest.approx([0.0])


def test_inactive_hinge_is_plain_objective(square):
    s = _state(0.3, -0.4, [_plane(1.0, 1.0, -5.0)], [2.0])
    assert cpbo_penalty_value(s, square) == square.upper_value(0, s.x, s.y)
    gx, gy = cpbo_penalty_grad(s, square)
    assert gx == pytest.approx(square.upper_grad_x(0, s.x, s.y))
    assert gy == pytest.approx(square.upper_grad_y(0, s.x, s.y))


def test_phase1_empty_polytope_is_gradient_descent(square):
    s = _state(1.0, 2.0)
    out = cpbo_phase1_step(s, square, CpboSteps(0.1, 0.1, 0.1))
    assert out.x == pytest.approx([0.8]) and out.y == pytest.approx([1.6]) and out.t == 1


def test_phase1_clamps_dual(square):
    s = _state(0.0, 0.0, [_plane(0.0, 0.0, -1.0)], [0.0])
    out = cpbo_phase1_step(s, square, CpboSteps())
    assert out.lam.tolist() == [0.0]


def test_config_validation(square):
    two = make_quadratic_toy(2, 1, 1, [0.0, 0.0], [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ConfigError):
        CpboConfig(two)
    with pytest.raises(ConfigError):
        CpboConfig(square, x0=(1.0, 2.0))
    with pytest.raises(ConfigError):
        CpboSteps(eta_x=0.0)


def test_run_converges_to_origin(square):
    res = simulate_cpbo(CpboConfig(square, x0=(2.0,), y0=(-1.0,), eps=1e-3))
    assert np.hypot(res.state.x[0], res.state.y[0]) <= 1e-2
    assert max(r.planes for r in res.trace) >= 1


def test_zero_warmup_is_pure_descent(square):
    trace = run_cpbo(CpboConfig(square, T1=0, x0=(1.0,), y0=(1.0,), max_iter=5))
    assert all(r.planes == 0 for r in trace)
    assert trace[0].F == pytest.approx(2 * 0.9**2)


def test_run_is_deterministic(square):
    cfg = CpboConfig(square, x0=(2.0,), y0=(-1.0,), max_iter=300, T1=100)
    assert run_cpbo(cfg) == run_cpbo(cfg)
