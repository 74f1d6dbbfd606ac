import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmkalman.objective import (
    MapObjective,
    build_surrogate,
    build_surrogate_log,
    build_surrogate_smooth,
    eval_F,
    grad_F,
    grad_F_ncvx,
    lipschitz_L,
    mm_weights,
    regularized_inverse,
)
from mmkalman.qcqp import solve_unconstrained

from conftest import random_objective
from oracles import F_loop, central_diff


def scalar_obj(nu=1.0, sigma=1.0, y=0.0):
    return MapObjective(np.zeros(1), np.eye(1), np.eye(1), np.array([y]), np.array([sigma]), np.array([nu]))


def ball(rng, center, radius, n):
    d = rng.standard_normal((n, len(center)))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return center + d * radius * rng.random((n, 1)) ** (1 / len(center))


def test_F_zero_at_joint_minimiser():
    C = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    m = np.array([0.3, -0.7])
    obj = MapObjective(m, np.diag([2.0, 0.5]), C, C @ m, np.ones(3), np.full(3, 3.0))
    assert eval_F(obj, m) == 0.0


def test_F_scalar_value():
    assert eval_F(scalar_obj(), np.array([1.0])) == pytest.approx(1 + 2 * math.log(2), abs=1e-14)


def test_F_matches_loop_oracle(rng):
    for _ in range(20):
        obj = random_objective(rng, n_x=2)
        x = rng.normal(0, 3, 2)
        ref = F_loop(obj.prior_mean, obj.prior_precision, obj.C, obj.y, obj.sigma, obj.nu, x)
        assert eval_F(obj, x) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_F_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        eval_F(scalar_obj(), np.zeros(2))
    with pytest.raises(ValueError):
        grad_F(scalar_obj(), np.zeros(3))


def test_grad_zero_at_joint_minimiser():
    C = np.array([[1.0, 0.0], [1.0, 1.0]])
    m = np.array([1.0, 2.0])
    obj = MapObjective(m, np.eye(2), C, C @ m, np.ones(2), np.full(2, 4.0))
    assert np.all(grad_F(obj, m) == 0.0)


def test_grad_scalar_value():
    assert grad_F(scalar_obj(), np.array([1.0]))[0] == pytest.approx(4.0, abs=1e-14)


def test_grad_matches_finite_differences(rng):
    for _ in range(100):
        obj = random_objective(rng)
        x = rng.normal(0, 2, obj.n_x)
        fd = central_diff(lambda z: eval_F(obj, z), x, h=1e-5)
        assert np.max(np.abs(grad_F(obj, x) - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_weights_at_zero_residual():
    obj = MapObjective(np.zeros(2), np.eye(2), np.eye(2), np.zeros(2), np.ones(2), np.ones(2))
    assert np.all(mm_weights(obj, np.zeros(2)) == 2.0)


def test_lipschitz_scalar():
    assert lipschitz_L(scalar_obj()) == 4.0


def test_lipschitz_quadratic_in_C(rng):
    obj = random_objective(rng)
    scaled = MapObjective(obj.prior_mean, obj.prior_precision, 2 * obj.C, obj.y, obj.sigma, obj.nu)
    assert lipschitz_L(scaled) == pytest.approx(4 * lipschitz_L(obj), rel=1e-14)


def test_lipschitz_independent_of_y_and_mean(rng):
    obj = random_objective(rng)
    other = MapObjective(obj.prior_mean + 5, obj.prior_precision, obj.C, obj.y - 3, obj.sigma, obj.nu)
    assert lipschitz_L(other) == lipschitz_L(obj)


def test_lipschitz_bounds_sampled_ratios(rng):
    obj = random_objective(rng, n_x=3, n_y=3)
    L = lipschitz_L(obj)
    z1 = rng.normal(0, 3, (10_000, 3))
    z2 = z1 + rng.normal(0, 0.5, (10_000, 3))
    worst = max(
        np.linalg.norm(grad_F_ncvx(obj, a) - grad_F_ncvx(obj, b)) / np.linalg.norm(a - b) for a, b in zip(z1, z2)
    )
    assert worst <= L


@pytest.mark.parametrize("kind", ["log", "smooth"])
def test_surrogate_tangent_at_anchor(rng, kind):
    for _ in range(50):
        obj = random_objective(rng)
        a = rng.normal(0, 3, obj.n_x)
        s = build_surrogate(obj, a, kind)
        F = eval_F(obj, a)
        assert s.value(a) == pytest.approx(F, rel=1e-10, abs=1e-10)
        g = grad_F(obj, a)
        assert np.allclose(s.gradient(a), g, rtol=1e-8, atol=1e-8)


@pytest.mark.parametrize("kind", ["log", "smooth"])
def test_surrogate_majorizes_in_ball(rng, kind):
    obj = random_objective(rng, n_x=3, n_y=4)
    a = rng.normal(0, 2, 3)
    s = build_surrogate(obj, a, kind)
    for x in ball(rng, a, 10.0, 10_000):
        assert s.value(x) - eval_F(obj, x) >= -1e-9


@given(st.integers(0, 2**32 - 1))
def test_surrogates_majorize_random_instances(seed):
    rng = np.random.default_rng(seed)
    obj = random_objective(rng)
    a = rng.normal(0, 3, obj.n_x)
    for x in ball(rng, a, 20.0, 50):
        F = eval_F(obj, x)
        assert build_surrogate_log(obj, a).value(x) - F >= -1e-9 * max(1.0, abs(F))
        assert build_surrogate_smooth(obj, a).value(x) - F >= -1e-9 * max(1.0, abs(F))


def test_smooth_is_looser_far_from_anchor(rng):
    # exploratory: the global curvature bound usually sits above the reweighted bound
    hits = total = 0
    for _ in range(100):
        obj = random_objective(rng)
        a = rng.normal(0, 2, obj.n_x)
        lo, sm = build_surrogate_log(obj, a), build_surrogate_smooth(obj, a)
        for x in ball(rng, a, 10.0, 100):
            if np.linalg.norm(x - a) < 5.0:
                continue
            total += 1
            hits += sm.value(x) >= lo.value(x)
    assert hits / total >= 0.9


@pytest.mark.parametrize("kind", ["log", "smooth"])
def test_surrogate_strongly_convex(rng, kind):
    for _ in range(30):
        obj = random_objective(rng)
        s = build_surrogate(obj, rng.normal(size=obj.n_x), kind)
        assert np.allclose(s.H, s.H.T)
        floor = np.linalg.eigvalsh(2 * obj.prior_precision).min()
        assert np.linalg.eigvalsh(s.H).min() >= floor * (1 - 1e-12) > 0


def test_log_surrogate_closed_form(rng):
    obj = random_objective(rng, n_x=2, n_y=3)
    a = rng.normal(size=2)
    s = build_surrogate_log(obj, a)
    r_a = obj.C @ a - obj.y
    m = (1 + obj.nu) / (obj.nu * obj.sigma**2 + r_a**2)
    x = rng.normal(size=2)
    d = x - obj.prior_mean
    r = obj.C @ x - obj.y
    # value minus its anchor value is the reweighted least-squares difference
    expected = d @ obj.prior_precision @ d + np.sum(m * r**2)
    da = a - obj.prior_mean
    expected_a = da @ obj.prior_precision @ da + np.sum(m * r_a**2)
    assert s.value(x) - s.value(a) == pytest.approx(expected - expected_a, rel=1e-10, abs=1e-10)


def test_smooth_surrogate_explicit_L():
    obj = scalar_obj()
    s = build_surrogate_smooth(obj, np.array([0.5]), L=10.0)
    assert s.H[0, 0] == pytest.approx(2.0 + 10.0)


def test_unknown_surrogate_kind():
    with pytest.raises(ValueError):
        build_surrogate(scalar_obj(), np.zeros(1), "cubic")


@pytest.mark.parametrize("kind", ["log", "smooth"])
def test_mm_iterations_descend(rng, kind):
    for _ in range(40):
        obj = random_objective(rng)
        x = rng.normal(0, 5, obj.n_x)
        F = eval_F(obj, x)
        for _ in range(100):
            x = solve_unconstrained(build_surrogate(obj, x, kind))
            Fn = eval_F(obj, x)
            assert Fn <= F + 1e-12
            F = Fn


def test_regularized_inverse_ridges_singular_prior():
    P = np.diag([1.0, 0.0])
    W = regularized_inverse(P)
    assert np.all(np.isfinite(W))
    assert np.allclose(W, W.T)
    assert np.linalg.eigvalsh(W).min() > 0


def test_regularized_inverse_exact_when_well_conditioned(rng):
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(regularized_inverse(P), np.linalg.inv(P), rtol=1e-14, atol=1e-14)
