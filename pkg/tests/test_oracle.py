import numpy as np
import pytest
from scipy import stats

from iterfilt import (
    LgssSpec,
    ObservationSeries,
    ParamBinding,
    ParamTransform,
    TimeGrid,
    bind_params,
    kalman_filter,
    kalman_loglik,
    kalman_score,
    reference_optimize,
)


def dense_joint_loglik(spec, data):
    """Brute-force log-density of y_{1:N} as one big Gaussian.

    Builds the joint covariance from the state recursion directly;
    independent of the Kalman recursion it checks.
    """
    n = data.n_obs
    d_x = spec.dim_state
    d_y = spec.dim_obs
    means = [spec.m0]
    covs = np.empty((n + 1, n + 1, d_x, d_x))
    covs[0, 0] = spec.P0
    for i in range(1, n + 1):
        means.append(spec.A @ means[i - 1])
        covs[i, i] = spec.A @ covs[i - 1, i - 1] @ spec.A.T + spec.Q
        for j in range(i):
            covs[i, j] = spec.A @ covs[i - 1, j]
            covs[j, i] = covs[i, j].T
    mean_y = np.concatenate([spec.H @ means[i] for i in range(1, n + 1)])
    gamma = np.zeros((n * d_y, n * d_y))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            block = spec.H @ covs[i, j] @ spec.H.T
            if i == j:
                block = block + spec.R
            gamma[(i - 1) * d_y : i * d_y, (j - 1) * d_y : j * d_y] = block
    return stats.multivariate_normal.logpdf(data.values.ravel(), mean=mean_y, cov=gamma)


def series_of(values, d_y=1):
    values = np.asarray(values, dtype=float).reshape(-1, d_y)
    return ObservationSeries(grid=TimeGrid.uniform(values.shape[0]), values=values)


class TestKalman:
    def test_single_static_observation(self):
        spec = LgssSpec(A=[[1.0]], Q=[[0.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
        data = series_of([0.0])
        # y_1 ~ N(0, P0 + R) = N(0, 2)
        assert kalman_loglik(spec, data) == pytest.approx(-0.5 * np.log(4 * np.pi), rel=1e-12)

    def test_empty_product_of_update_factors(self):
        # every observation missing: no likelihood factors, loglik zero
        spec = LgssSpec(A=[[0.9]], Q=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
        data = ObservationSeries(
            grid=TimeGrid.uniform(3),
            values=np.zeros((3, 1)),
            missing=np.array([True, True, True]),
        )
        assert kalman_loglik(spec, data) == 0.0

    def test_matches_dense_joint_density_1d(self):
        spec = LgssSpec(A=[[0.8]], Q=[[1.0]], H=[[1.0]], R=[[0.5]], m0=[0.3], P0=[[2.0]])
        gen = np.random.default_rng(40)
        data = series_of(gen.normal(size=5))
        assert kalman_loglik(spec, data) == pytest.approx(
            dense_joint_loglik(spec, data), abs=1e-10
        )

    def test_matches_dense_joint_density_2d(self):
        spec = LgssSpec(
            A=[[0.7, 0.2], [0.0, 0.5]],
            Q=[[1.0, 0.3], [0.3, 0.8]],
            H=[[1.0, 0.0]],
            R=[[0.4]],
            m0=[0.0, 1.0],
            P0=[[1.0, 0.0], [0.0, 1.0]],
        )
        gen = np.random.default_rng(41)
        data = series_of(gen.normal(size=5))
        assert kalman_loglik(spec, data) == pytest.approx(
            dense_joint_loglik(spec, data), abs=1e-10
        )

    def test_filter_covariances_psd(self):
        spec = LgssSpec(
            A=[[0.9, 0.1], [0.0, 0.8]],
            Q=np.eye(2),
            H=[[1.0, 0.0], [0.0, 1.0]],
            R=np.eye(2) * 0.5,
            m0=[0.0, 0.0],
            P0=np.eye(2),
        )
        gen = np.random.default_rng(42)
        data = series_of(gen.normal(size=(8, 2)).ravel(), d_y=2)
        res = kalman_filter(spec, data)
        for cov in list(res.pred_covs) + list(res.filt_covs):
            assert np.linalg.eigvalsh(cov).min() >= -1e-12

    def test_dimension_mismatch(self):
        spec = LgssSpec(A=[[1.0]], Q=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
        with pytest.raises(ValueError):
            kalman_filter(spec, series_of(np.zeros(4), d_y=2))


class TestBindings:
    def test_bind_sets_entries(self):
        spec = LgssSpec(A=[[0.5]], Q=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
        bound = bind_params(
            spec,
            [ParamBinding("a", "A", 0, 0), ParamBinding("q", "Q", 0, 0)],
            np.array([0.9, 2.0]),
        )
        assert bound.A[0, 0] == 0.9
        assert bound.Q[0, 0] == 2.0
        assert spec.A[0, 0] == 0.5  # original untouched

    def test_bind_mirrors_symmetric_offdiagonal(self):
        spec = LgssSpec(
            A=np.eye(2) * 0.5, Q=np.eye(2), H=np.eye(2), R=np.eye(2), m0=[0.0, 0.0], P0=np.eye(2)
        )
        bound = bind_params(spec, [ParamBinding("q01", "Q", 0, 1)], np.array([0.2]))
        assert bound.Q[0, 1] == 0.2
        assert bound.Q[1, 0] == 0.2


class TestKalmanScore:
    @pytest.fixture()
    def fixture(self):
        spec = LgssSpec(A=[[0.8]], Q=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
        bindings = [ParamBinding("a", "A", 0, 0), ParamBinding("q", "Q", 0, 0)]
        transform = ParamTransform(names=("a", "q"), kinds=("identity", "log"))
        gen = np.random.default_rng(43)
        data = series_of(gen.normal(size=30) * 1.5)
        return spec, bindings, transform, data

    def test_step_halving_consistency(self, fixture):
        spec, bindings, transform, data = fixture
        score, rel = kalman_score(spec, data, bindings, transform, return_diagnostics=True)
        assert np.all(rel <= 1e-6)
        assert score.shape == (2,)

    def test_vanishes_at_optimum(self, fixture):
        spec, bindings, transform, data = fixture

        def objective(theta):
            return kalman_loglik(bind_params(spec, bindings, transform.to_natural(theta)), data)

        start = transform.to_unconstrained(np.array([0.8, 1.0]))
        opt = reference_optimize(objective, start, initial_step=0.2)
        assert opt.converged
        at_opt = bind_params(spec, bindings, transform.to_natural(opt.theta))
        score = kalman_score(at_opt, data, bindings, transform)
        assert np.all(np.abs(score) <= 1e-4)

    def test_sign_flip_symmetry(self):
        # loglik(m0, y) = loglik(-m0, -y), so the m0-score is odd under
        # jointly flipping the data and the binding value
        base = LgssSpec(A=[[0.8]], Q=[[1.0]], H=[[1.0]], R=[[1.0]], m0=[0.0], P0=[[1.0]])
        bindings = [ParamBinding("m0", "m0", 0)]
        gen = np.random.default_rng(44)
        y = gen.normal(size=10)
        spec_pos = bind_params(base, bindings, np.array([0.4]))
        spec_neg = bind_params(base, bindings, np.array([-0.4]))
        s_pos = kalman_score(spec_pos, series_of(y), bindings)
        s_neg = kalman_score(spec_neg, series_of(-y), bindings)
        assert s_pos[0] == pytest.approx(-s_neg[0], rel=1e-8)


class TestReferenceOptimize:
    def test_quadratic(self):
        res = reference_optimize(lambda t: -((t[0] - 1.0) ** 2), np.array([-2.0]))
        assert res.converged
        assert abs(res.theta[0] - 1.0) <= 1e-6

    def test_first_order_condition_on_kalman_surface(self, lgss_aq, data50):
        exact = lgss_aq.exact
        res = reference_optimize(
            lambda th: exact.loglik(th, data50), lgss_aq.theta_start, initial_step=0.2
        )
        assert res.converged
        score = exact.score(res.theta, data50)
        assert np.all(np.abs(score) <= 1e-3)

    def test_bounds_respected(self):
        res = reference_optimize(
            lambda t: -((t[0] - 2.0) ** 2),
            np.array([0.0]),
            bounds=[(-1.0, 1.0)],
        )
        assert -1.0 <= res.theta[0] <= 1.0
        assert res.theta[0] == pytest.approx(1.0, abs=1e-9)

    def test_evaluation_cap_warns_and_returns_best(self):
        with pytest.warns(UserWarning, match="cap"):
            res = reference_optimize(
                lambda t: -((t[0] - 1.0) ** 2),
                np.array([100.0]),
                initial_step=1e-6,
                max_evaluations=50,
            )
        assert not res.converged
        assert res.value >= -((100.0 - 1.0) ** 2)
