"""Shared fixtures: canonical linear-Gaussian datasets and their exact MLE."""

import pytest

from iterfilt import RngStream, TimeGrid, make_lgss, reference_optimize, simulate


def simulate_lgss(built, n_obs, seed):
    grid = TimeGrid.uniform(n_obs)
    _, series = simulate(built.model, built.theta_start, grid, RngStream(seed).child("dataset"))
    return series


@pytest.fixture(scope="session")
def lgss_aq():
    """a=0.8, q=1, r=1 with (a, log q) free; the workhorse test model."""
    return make_lgss({"a": 0.8, "q": 1.0, "r": 1.0}, free=("a", "q"))


@pytest.fixture(scope="session")
def lgss_a():
    """Same model with only a free (one-dimensional parameter)."""
    return make_lgss({"a": 0.8, "q": 1.0, "r": 1.0}, free=("a",))


@pytest.fixture(scope="session")
def data25(lgss_aq):
    return simulate_lgss(lgss_aq, 25, seed=101)


@pytest.fixture(scope="session")
def data50(lgss_aq):
    return simulate_lgss(lgss_aq, 50, seed=202)


@pytest.fixture(scope="session")
def data100(lgss_aq):
    return simulate_lgss(lgss_aq, 100, seed=303)


@pytest.fixture(scope="session")
def mle100(lgss_aq, data100):
    """Exact MLE of (a, log q) on the N=100 dataset, by coordinate search."""
    exact = lgss_aq.exact
    result = reference_optimize(
        lambda theta: exact.loglik(theta, data100),
        lgss_aq.theta_start,
        initial_step=0.2,
    )
    assert result.converged
    return result


@pytest.fixture(scope="session")
def mle25(lgss_aq, data25):
    exact = lgss_aq.exact
    result = reference_optimize(
        lambda theta: exact.loglik(theta, data25),
        lgss_aq.theta_start,
        initial_step=0.2,
    )
    assert result.converged
    return result
