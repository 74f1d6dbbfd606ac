import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from mmkalman.model import (
    MeasurementNoiseSpec,
    StateSpaceModel,
    sample_measurement_noise,
    simulate,
    student_t_logpdf,
)

from conftest import rotation_model


def test_cauchy_at_mode():
    assert student_t_logpdf(0.0, 1.0, 1.0) == pytest.approx(math.log(1 / math.pi), abs=1e-14)
    assert student_t_logpdf(0.0, 1.0, 1.0) == pytest.approx(-1.14473, abs=1e-5)


def test_cauchy_scale():
    assert student_t_logpdf(0.0, 2.0, 1.0) == pytest.approx(math.log(1 / (2 * math.pi)), abs=1e-14)


def test_spot_value_matches_density_formula():
    v, s, nu = 1.7, 0.8, 3.0
    direct = (
        math.gamma((nu + 1) / 2)
        / (math.sqrt(math.pi * nu) * math.gamma(nu / 2) * s)
        * (1 + v * v / (nu * s * s)) ** (-(nu + 1) / 2)
    )
    assert student_t_logpdf(v, s, nu) == pytest.approx(math.log(direct), rel=1e-13)


@pytest.mark.parametrize("sigma,nu", [(0.8, 3.0), (1.0, 1.0), (2.5, 0.7), (0.3, 30.0)])
def test_density_has_unit_mass(sigma, nu):
    # wide finite window as specified; heavy tails leave a known remainder for small nu
    f = lambda v: math.exp(student_t_logpdf(v, sigma, nu))
    mass = sum(quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-13)[0] for a, b in _pieces(200 * sigma))
    if nu >= 3:
        assert mass == pytest.approx(1.0, abs=1e-6)
    full = sum(quad(f, a, b, limit=200, epsabs=1e-13)[0] for a, b in ((-np.inf, 0), (0, np.inf)))
    assert full == pytest.approx(1.0, abs=1e-6)


def _pieces(w):
    edges = np.concatenate([-np.geomspace(w, 1e-3, 12), [0.0], np.geomspace(1e-3, w, 12)])
    return list(zip(edges[:-1], edges[1:]))


def test_logpdf_vectorised_and_finite():
    v = np.array([-1e300, -5.0, 0.0, 5.0, 1e300])
    out = student_t_logpdf(v, 1.0, 3.0)
    assert out.shape == v.shape
    assert np.all(np.isfinite(out))
    assert out[2] == out.max()


@pytest.mark.parametrize("sigma,nu", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
def test_logpdf_rejects_bad_parameters(sigma, nu):
    with pytest.raises(ValueError):
        student_t_logpdf(0.0, sigma, nu)


@given(st.floats(-50, 50), st.floats(0.05, 20), st.floats(0.05, 100))
def test_logpdf_symmetric_and_peaked(v, sigma, nu):
    a = student_t_logpdf(v, sigma, nu)
    assert a == pytest.approx(student_t_logpdf(-v, sigma, nu), abs=1e-12)
    assert a <= student_t_logpdf(0.0, sigma, nu) + 1e-12


def test_noiseless_fixed_point():
    c = np.array([1.5, -2.0, 0.25])
    C = np.array([[1.0, 2.0, 0.0], [0.0, -1.0, 3.0]])
    model = StateSpaceModel(np.eye(3), C, np.zeros((3, 3)), [1.0, 1.0], [3.0, 3.0], c, np.zeros((3, 3)))
    noise = MeasurementNoiseSpec.contaminated(0.3, 0.0, 0.0)
    tr = simulate(model, noise, 25, seed=4)
    assert np.all(tr.states == c)
    assert np.allclose(tr.measurements, C @ c, atol=0, rtol=0)


def test_experiment1_shapes():
    model = rotation_model()
    tr = simulate(model, MeasurementNoiseSpec.contaminated(0.1, 0.1, 10.0), 1000, seed=0)
    assert tr.states.shape == (1000, 2) and tr.measurements.shape == (1000, 2)
    assert tr.T == 1000


def test_outlier_fraction():
    rng = np.random.default_rng(7)
    v, mask = sample_measurement_noise(MeasurementNoiseSpec.contaminated(0.1, 0.1, 10.0), rng, 100_000, 1)
    frac = mask.mean()
    assert abs(frac - 0.1) <= 0.01
    # the branch indicator really selects the variance
    assert np.var(v[mask]) == pytest.approx(10.0, rel=0.05)
    assert np.var(v[~mask]) == pytest.approx(0.1, rel=0.05)


def test_outliers_independent_per_channel():
    rng = np.random.default_rng(8)
    _, mask = sample_measurement_noise(MeasurementNoiseSpec.contaminated(0.5, 1.0, 4.0), rng, 20_000, 2)
    both = np.mean(mask[:, 0] & mask[:, 1])
    assert both == pytest.approx(0.25, abs=0.015)


def test_simulate_is_bit_reproducible():
    model = rotation_model()
    noise = MeasurementNoiseSpec.contaminated(0.1, 0.1, 10.0)
    a = simulate(model, noise, 300, seed=42)
    b = simulate(model, noise, 300, seed=42)
    c = simulate(model, noise, 300, seed=43)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.measurements, b.measurements)
    assert not np.array_equal(a.measurements, c.measurements)


def test_process_noise_covariance():
    rng = np.random.default_rng(3)
    B = rng.normal(size=(3, 3))
    Q = B @ B.T + 0.1 * np.eye(3)
    A = 0.5 * np.linalg.qr(rng.normal(size=(3, 3)))[0]
    model = StateSpaceModel(A, np.eye(3), Q, np.ones(3), np.full(3, 5.0), np.zeros(3), np.eye(3))
    tr = simulate(model, MeasurementNoiseSpec.student_t(1.0, 5.0), 100_001, seed=11)
    w = tr.states[1:] - tr.states[:-1] @ A.T
    S = np.cov(w.T)
    assert np.linalg.norm(S - Q) / np.linalg.norm(Q) < 0.05


def test_student_t_variance():
    rng = np.random.default_rng(5)
    sigma, nu = 0.7, 5.0
    v, mask = sample_measurement_noise(MeasurementNoiseSpec.student_t(sigma, nu), rng, 1_000_000, 1)
    assert not mask.any()
    assert np.var(v) == pytest.approx(nu * sigma**2 / (nu - 2), rel=0.05)


def test_noise_variance_helper():
    assert MeasurementNoiseSpec.contaminated(0.1, 0.1, 10.0).variance(2) == pytest.approx([1.09, 1.09])
    assert MeasurementNoiseSpec.student_t(1.0, 3.0).variance(1) == pytest.approx([3.0])
    assert np.isinf(MeasurementNoiseSpec.student_t(1.0, 2.0).variance(1)[0])


def test_trajectory_csv(tmp_path):
    tr = simulate(rotation_model(), MeasurementNoiseSpec.student_t(1.0, 3.0), 5, seed=1)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "x_1", "x_2", "y_1", "y_2"]
    assert len(rows) == 6
    assert float(rows[3][2]) == tr.states[2, 1]
    assert float(rows[5][4]) == tr.measurements[4, 1]


@pytest.mark.parametrize(
    "kw",
    [
        {"Q": -np.eye(2)},
        {"Q": np.array([[1.0, 0.5], [0.0, 1.0]])},
        {"P0": np.diag([1.0, -1.0])},
        {"sigma": [1.0, 0.0]},
        {"nu": [-1.0, 3.0]},
        {"C": np.eye(3)},
        {"x0_mean": np.zeros(3)},
    ],
)
def test_model_validation(kw):
    base = dict(A=np.eye(2), C=np.eye(2), Q=np.eye(2), sigma=[1.0, 1.0], nu=[3.0, 3.0], x0_mean=np.zeros(2), P0=np.eye(2))
    base.update(kw)
    with pytest.raises(ValueError):
        StateSpaceModel(**base)


def test_scalar_noise_parameters_broadcast():
    m = StateSpaceModel(np.eye(2), np.eye(2), np.eye(2), 0.5, 3.0, np.zeros(2), np.eye(2))
    assert m.sigma.shape == (2,) and m.nu.shape == (2,)
    assert m.n_x == 2 and m.n_y == 2


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        MeasurementNoiseSpec.contaminated(1.5, 0.1, 10.0)
    with pytest.raises(ValueError):
        MeasurementNoiseSpec.contaminated(0.1, -0.1, 10.0)
    with pytest.raises(ValueError):
        MeasurementNoiseSpec.student_t(0.0, 3.0)
    with pytest.raises(ValueError):
        MeasurementNoiseSpec("gaussian")


def test_serialisation_round_trip():
    m = rotation_model()
    m2 = StateSpaceModel.from_dict(m.to_dict())
    for name in ("A", "C", "Q", "sigma", "nu", "x0_mean", "P0"):
        assert np.array_equal(getattr(m, name), getattr(m2, name))
    for noise in (MeasurementNoiseSpec.contaminated(0.1, 0.1, 10.0), MeasurementNoiseSpec.student_t([1.0, 2.0], 3.0)):
        n2 = MeasurementNoiseSpec.from_dict(noise.to_dict())
        assert n2.to_dict() == noise.to_dict()
