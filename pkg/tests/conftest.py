import numpy as np
import pytest

from accbo.problems import (
    ExpUpperToy,
    GeneralQuadratic,
    IsotropicQuadratic,
    make_fixture_ridge,
)


@pytest.fixture
def iso_simple():
    """g = 0.5*||y - x||^2, f = 0.5*||x||^2 + 0.5*||y||^2 (mu = 1, A = I)."""
    return IsotropicQuadratic(1.0, np.eye(2), np.zeros(2), np.zeros(2), np.zeros(2))


@pytest.fixture
def iso_1d():
    return IsotropicQuadratic(1.0, np.eye(1), np.zeros(1), np.zeros(1), np.zeros(1))


@pytest.fixture
def general_quad():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    C = np.array([[1.0, 0.0, -0.5], [0.0, 0.5, 1.0]])
    return GeneralQuadratic(H, C, b=[0.1, -0.2], c=[0.0, 0.0, 0.0], d=[0.5, 0.5])


@pytest.fixture
def ridge_toy():
    return make_fixture_ridge()


@pytest.fixture
def exp_toy():
    A = 0.5 * np.eye(2)
    return ExpUpperToy(u=[0.3, -0.2], A=A, b=[0.1, 0.0], mu=1.0, l_f0=2.0)


def analytic_instances(noise=False):
    """All four kinds with exact second derivatives, optionally with noise."""
    kw = dict(sigma_f1=0.1, sigma_g1=0.2, sigma_g2=0.1) if noise else {}
    iso = IsotropicQuadratic(
        1.0, np.array([[0.5, 0.2], [-0.1, 0.8]]), [0.1, -0.3], [1.0, 0.0],
        [0.0, 0.5], **kw,
    )
    gen = GeneralQuadratic(
        np.array([[2.0, 0.5], [0.5, 1.0]]),
        np.array([[1.0, 0.0], [0.3, 0.5]]),
        b=[0.1, -0.2], c=[0.2, -0.1], d=[0.5, 0.5], **kw,
    )
    ridge = make_fixture_ridge(**kw)
    exp = ExpUpperToy(u=[0.3, -0.2], A=0.5 * np.eye(2), b=[0.1, 0.0], mu=1.0,
                      l_f0=2.0, **kw)
    return [iso, gen, ridge, exp]
