import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmkalman.model import StateSpaceModel
from mmkalman.objective import MapObjective

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_spd(rng, n, lo=0.2, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(rng.uniform(lo, hi, n)) @ Q.T


def random_objective(rng, n_x=None, n_y=None, nu_range=(0.5, 10.0)) -> MapObjective:
    n_x = n_x or int(rng.integers(1, 5))
    n_y = n_y or int(rng.integers(1, 5))
    return MapObjective(
        prior_mean=rng.normal(0, 2, n_x),
        prior_precision=random_spd(rng, n_x),
        C=rng.normal(0, 1, (n_y, n_x)),
        y=rng.normal(0, 3, n_y),
        sigma=rng.uniform(0.3, 2.0, n_y),
        nu=rng.uniform(*nu_range, n_y),
    )


def rotation_model(sigma=None, nu=3.0, q=0.1) -> StateSpaceModel:
    th = 0.2 * np.pi
    A = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
    if sigma is None:
        sigma = np.sqrt(1.09 * (nu - 2) / nu) if nu > 2 else 1.0
    return StateSpaceModel(A, np.eye(2), q * np.eye(2), np.full(2, sigma), np.full(2, nu), np.zeros(2), np.eye(2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
