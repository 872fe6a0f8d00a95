import numpy as np
import pytest
from hypothesis import given, strategies as st

from resilimb.errors import EmptyParameterVector, NonFiniteObjective
from resilimb.optimizer import LbfgsConfig, Termination, _two_loop, finite_difference_gradient, minimize


def quadratic(A, c):
    def f(x):
        r = x - c
        return 0.5 * r @ A @ r, A @ r
    return f


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def spd(rng, d, cond=100.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q @ np.diag(np.geomspace(1, cond, d)) @ q.T


def assert_strong_wolfe(trace, cfg):
    for st_ in trace.steps:
        assert st_.value_after <= st_.value_before + cfg.wolfe_c1 * st_.step * st_.slope_before
        assert abs(st_.slope_after) <= cfg.wolfe_c2 * abs(st_.slope_before)


def test_bowl():
    x, tr = minimize(lambda x: (x @ x, 2 * x), [3.0, -4.0])
    assert tr.converged and np.abs(x).max() < 1e-6


def test_rosenbrock():
    cfg = LbfgsConfig(max_iterations=200)
    x, tr = minimize(rosenbrock, [-1.2, 1.0], cfg)
    assert np.linalg.norm(x - 1) < 1e-5
    assert_strong_wolfe(tr, cfg)


def test_nan_objective_raises():
    with pytest.raises(NonFiniteObjective):
        minimize(lambda x: (np.nan, x), [1.0])
    with pytest.raises(NonFiniteObjective):
        minimize(lambda x: (float(x @ x) if x[0] > 0.5 else np.nan, 2 * x), [1.0])


def test_empty_vector():
    with pytest.raises(EmptyParameterVector):
        minimize(lambda x: (0.0, x), [])


def test_infinite_value_is_backtracked():
    # barrier at x >= 2: the first trial step overshoots into the infeasible zone
    def f(x):
        if x[0] >= 2:
            return np.inf, np.array([np.nan])
        return -np.log(2 - x[0]) + x[0] ** 2, np.array([1 / (2 - x[0]) + 2 * x[0]])

    x, tr = minimize(f, [-5.0])
    assert tr.converged and x[0] < 2
    # f'(x) = 0  <=>  2x^2 - 4x - 1 = 0 with x < 2
    assert abs(x[0] - (1 - np.sqrt(1.5))) < 1e-7


def test_config_validation():
    with pytest.raises(ValueError):
        LbfgsConfig(wolfe_c1=0.9, wolfe_c2=0.1)
    with pytest.raises(ValueError):
        LbfgsConfig(memory=0)


def test_trace_converged_iff_gradient_tolerance():
    _, tr = minimize(rosenbrock, [-1.2, 1.0], LbfgsConfig(max_iterations=3))
    assert tr.termination_reason is Termination.MaxIterations and not tr.converged


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_quadratic_finite_termination(d, seed):
    rng = np.random.default_rng(seed)
    A, c = spd(rng, d), rng.normal(size=d)
    cfg = LbfgsConfig(gradient_tolerance=1e-10)
    x, tr = minimize(quadratic(A, c), rng.normal(size=d) * 3, cfg)
    assert tr.converged and tr.iterations <= d + 2
    np.testing.assert_allclose(x, c, atol=1e-8)
    assert_strong_wolfe(tr, cfg)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_values_monotone(d, seed):
    rng = np.random.default_rng(seed)
    A, c = spd(rng, d, 1e3), rng.normal(size=d)
    f = quadratic(A, c)

    def bumpy(x):
        v, g = f(x)
        return v + np.sum(np.cos(x)) * 0.1, g - 0.1 * np.sin(x)

    x0 = rng.normal(size=d)
    x, tr = minimize(bumpy, x0)
    assert all(b <= a for a, b in zip(tr.values, tr.values[1:]))
    assert bumpy(x)[0] <= bumpy(x0)[0]


def _dense_lbfgs_direction(g, pairs):
    s, y = pairs[-1]
    H = (s @ y) / (y @ y) * np.eye(len(g))
    for s, y in pairs:
        rho = 1.0 / (y @ s)
        V = np.eye(len(g)) - rho * np.outer(y, s)
        H = V.T @ H @ V + rho * np.outer(s, s)
    return H @ g


@given(st.integers(2, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_two_loop_matches_dense_update(d, m, seed):
    rng = np.random.default_rng(seed)
    A = spd(rng, d, 10)
    pairs = []
    for _ in range(m):
        s = rng.normal(size=d)
        pairs.append((s, A @ s))
    g = rng.normal(size=d)
    got = _two_loop(g, [p[0] for p in pairs], [p[1] for p in pairs])
    want = _dense_lbfgs_direction(g, pairs)
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12 * np.abs(want).max())


def test_two_loop_recovers_newton_direction_with_conjugate_pairs():
    rng = np.random.default_rng(4)
    A = spd(rng, 2, 5)
    s1 = rng.normal(size=2)
    s2 = np.array([-(A @ s1)[1], (A @ s1)[0]])  # A-conjugate to s1
    pairs = [(s1, A @ s1), (s2, A @ s2)]
    g = rng.normal(size=2)
    d = _two_loop(g, [p[0] for p in pairs], [p[1] for p in pairs])
    # conjugate secant pairs pin down the inverse Hessian of a 2D quadratic
    np.testing.assert_allclose(d, np.linalg.solve(A, g), rtol=1e-12)


@given(st.integers(2, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_two_loop_satisfies_latest_secant(d, m, seed):
    rng = np.random.default_rng(seed)
    A = spd(rng, d, 10)
    ss = list(rng.normal(size=(m, d)))
    ys = [A @ s for s in ss]
    np.testing.assert_allclose(_two_loop(ys[-1], ss, ys), ss[-1], rtol=1e-9, atol=1e-12)


def test_fd_gradient_examples():
    assert abs(finite_difference_gradient(lambda x: x[0] ** 2, [3.0])[0] - 6) < 1e-6
    assert np.array_equal(finite_difference_gradient(lambda x: 4.0, [1.0, 2.0]), [0, 0])
    np.testing.assert_allclose(finite_difference_gradient(lambda x: x[0] * x[1], [2.0, 5.0]), [5, 2], atol=1e-6)
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, [1.0], step=0)
    with pytest.raises(NonFiniteObjective):
        finite_difference_gradient(lambda x: np.nan, [1.0])
