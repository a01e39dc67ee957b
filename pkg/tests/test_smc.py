import numpy as np
import pytest

from iterfilt import (
    FilterDegeneracyError,
    KernelSpec,
    ModelSpec,
    ObservationSeries,
    ParamTransform,
    ParticleEnsemble,
    PerturbationScales,
    RngStream,
    TimeGrid,
    effective_sample_size,
    extend_model,
    particle_filter,
)
from iterfilt._kernels import sorted_sum


def toy_model(density_fn, transition=None):
    return ModelSpec(
        dim_state=1,
        dim_obs=1,
        dim_params=1,
        init_sampler=lambda theta, gen: gen.standard_normal((theta.shape[0], 1)),
        transition_sampler=transition
        or (lambda x, theta, t0, t1, gen: x + gen.standard_normal(x.shape)),
        measurement_density=density_fn,
        transform=ParamTransform.identity(("c",)),
        obs_sampler=lambda x, theta, t, gen: x,
    )


def series_of(values):
    values = np.asarray(values, dtype=float)
    return ObservationSeries(grid=TimeGrid.uniform(len(values)), values=values)


class TestParticleEnsemble:
    def test_stage_validation(self):
        with pytest.raises(ValueError):
            ParticleEnsemble(states=np.zeros((3, 1)), log_weights=np.zeros(3), stage="other")

    def test_filtering_stage_needs_equal_weights(self):
        with pytest.raises(ValueError):
            ParticleEnsemble(
                states=np.zeros((2, 1)), log_weights=np.array([0.0, -1.0]), stage="filtering"
            )

    def test_nan_weights_rejected(self):
        with pytest.raises(ValueError):
            ParticleEnsemble(
                states=np.zeros((2, 1)), log_weights=np.array([0.0, np.nan]), stage="prediction"
            )


class TestLoglik:
    def test_constant_density_gives_n_log_c(self):
        c = 0.37
        model = toy_model(lambda y, x, theta, t: np.full(x.shape[0], c))
        data = series_of(np.zeros(7))
        res = particle_filter(
            model, data, theta=np.zeros(1), n_particles=50, rng=RngStream(0)
        )
        assert res.loglik == pytest.approx(7 * np.log(c), rel=1e-12)
        assert np.all(res.ess == 50)

    def test_single_particle_follows_one_path(self):
        # deterministic dynamics pin the path, so the likelihood is closed form
        r = 0.8
        model = ModelSpec(
            dim_state=1,
            dim_obs=1,
            dim_params=1,
            init_sampler=lambda theta, gen: np.full((theta.shape[0], 1), 3.0),
            transition_sampler=lambda x, theta, t0, t1, gen: x,
            measurement_density=lambda y, x, theta, t: np.exp(
                -0.5 * (y[0] - x[:, 0]) ** 2 / r
            )
            / np.sqrt(2 * np.pi * r),
            transform=ParamTransform.identity(("c",)),
        )
        y = np.array([2.5, 3.5, 3.0])
        res = particle_filter(
            model, series_of(y), theta=np.zeros(1), n_particles=1, rng=RngStream(1)
        )
        expected = np.sum(-0.5 * (y - 3.0) ** 2 / r - 0.5 * np.log(2 * np.pi * r))
        assert res.loglik == pytest.approx(expected, rel=1e-12)

    def test_close_to_kalman_at_large_j(self, lgss_aq, data50):
        res = particle_filter(
            lgss_aq.model,
            data50,
            theta=lgss_aq.theta_start,
            n_particles=5000,
            rng=RngStream(2),
        )
        exact = lgss_aq.exact.loglik(lgss_aq.theta_start, data50)
        assert abs(res.loglik - exact) <= 1.0

    def test_likelihood_ratio_unbiased(self, lgss_aq, data25):
        # mean of exp(estimate - exact) near one across independent runs
        exact = lgss_aq.exact.loglik(lgss_aq.theta_start, data25)
        root = RngStream(3)
        ratios = np.array(
            [
                np.exp(
                    particle_filter(
                        lgss_aq.model,
                        data25,
                        theta=lgss_aq.theta_start,
                        n_particles=400,
                        resampler="multinomial",
                        rng=root.child("rep", r),
                    ).loglik
                    - exact
                )
                for r in range(200)
            ]
        )
        se = ratios.std(ddof=1) / np.sqrt(len(ratios))
        assert abs(ratios.mean() - 1.0) <= 3 * se


class TestMoments:
    def test_prediction_variances_psd(self, lgss_aq, data25):
        ext = extend_model(
            lgss_aq.model,
            KernelSpec.identity(2),
            PerturbationScales(sigma=0.02, tau=0.2),
            lgss_aq.theta_start,
        )
        res = particle_filter(ext, data25, n_particles=300, rng=RngStream(4))
        for v in res.prediction_variances:
            evals = np.linalg.eigvalsh(v)
            assert evals.min() >= -1e-10 * np.trace(v)
            assert np.array_equal(v, v.T)

    def test_filter_means_start_at_center(self, lgss_aq, data25):
        ext = extend_model(
            lgss_aq.model,
            KernelSpec.identity(2),
            PerturbationScales(sigma=0.02, tau=0.2),
            lgss_aq.theta_start,
        )
        res = particle_filter(ext, data25, n_particles=300, rng=RngStream(5))
        assert np.array_equal(res.filter_means[0], lgss_aq.theta_start)
        assert res.filter_means.shape == (26, 2)
        assert res.prediction_variances.shape == (25, 2, 2)

    def test_plain_model_has_no_param_moments(self, lgss_aq, data25):
        res = particle_filter(
            lgss_aq.model, data25, theta=lgss_aq.theta_start, n_particles=50, rng=RngStream(6)
        )
        assert res.filter_means is None
        assert res.prediction_variances is None
        assert res.state_filter_means.shape == (26, 1)


class TestInvariances:
    def test_weight_sum_exactly_permutation_invariant(self):
        gen = np.random.default_rng(30)
        logw = gen.normal(size=1000) * 5
        shifted = np.exp(logw - logw.max())
        for _ in range(10):
            perm = gen.permutation(1000)
            assert sorted_sum(shifted) == sorted_sum(shifted[perm])
            assert effective_sample_size(logw) == effective_sample_size(logw[perm])

    def test_rerun_bitwise_identical(self, lgss_aq, data25):
        kwargs = dict(theta=lgss_aq.theta_start, n_particles=200, rng=RngStream(7))
        a = particle_filter(lgss_aq.model, data25, **kwargs)
        b = particle_filter(lgss_aq.model, data25, **kwargs)
        assert a.loglik == b.loglik
        assert np.array_equal(a.cond_loglik, b.cond_loglik)
        assert np.array_equal(a.ess, b.ess)
        assert np.array_equal(a.state_filter_means, b.state_filter_means)

    def test_resampler_choice_changes_draws_not_contract(self, lgss_aq, data25):
        a = particle_filter(
            lgss_aq.model, data25, theta=lgss_aq.theta_start, n_particles=500,
            resampler="systematic", rng=RngStream(8),
        )
        b = particle_filter(
            lgss_aq.model, data25, theta=lgss_aq.theta_start, n_particles=500,
            resampler="multinomial", rng=RngStream(8),
        )
        exact = lgss_aq.exact.loglik(lgss_aq.theta_start, data25)
        assert abs(a.loglik - exact) < 3.0
        assert abs(b.loglik - exact) < 3.0


class TestMissingData:
    def test_missing_step_contributes_factor_one(self, lgss_aq):
        grid = TimeGrid.uniform(5)
        values = np.array([[0.3], [0.1], [0.0], [-0.2], [0.5]])
        missing = np.array([False, False, True, False, False])
        data = ObservationSeries(grid=grid, values=values, missing=missing)
        res = particle_filter(
            lgss_aq.model, data, theta=lgss_aq.theta_start, n_particles=200, rng=RngStream(9)
        )
        assert res.cond_loglik[2] == 0.0
        assert res.ess[2] == 200
        assert res.loglik == pytest.approx(np.sum(res.cond_loglik))

    def test_kalman_agrees_on_missing_handling(self, lgss_aq):
        grid = TimeGrid.uniform(6)
        gen = np.random.default_rng(31)
        values = gen.normal(size=(6, 1))
        missing = np.array([False, True, False, False, True, False])
        data = ObservationSeries(grid=grid, values=values, missing=missing)
        dense = ObservationSeries(
            grid=grid, values=values, missing=None
        )
        ll_missing = lgss_aq.exact.loglik(lgss_aq.theta_start, data)
        ll_dense = lgss_aq.exact.loglik(lgss_aq.theta_start, dense)
        assert ll_missing > ll_dense  # fewer factors, each below one density peak
        res = particle_filter(
            lgss_aq.model, data, theta=lgss_aq.theta_start, n_particles=4000, rng=RngStream(10)
        )
        assert abs(res.loglik - ll_missing) < 1.0


class TestErrors:
    def test_all_zero_weights_report_step(self):
        model = toy_model(lambda y, x, theta, t: np.zeros(x.shape[0]))
        with pytest.raises(FilterDegeneracyError) as info:
            particle_filter(
                model, series_of(np.zeros(3)), theta=np.zeros(1), n_particles=10,
                rng=RngStream(11),
            )
        assert info.value.step == 1
        assert info.value.max_log_weight == -np.inf

    def test_nan_weights_report_step(self):
        model = toy_model(lambda y, x, theta, t: np.full(x.shape[0], np.nan))
        with pytest.raises(FilterDegeneracyError) as info:
            particle_filter(
                model, series_of(np.zeros(3)), theta=np.zeros(1), n_particles=10,
                rng=RngStream(12),
            )
        assert info.value.step == 1

    def test_theta_required_for_plain_model(self, lgss_aq, data25):
        with pytest.raises(ValueError):
            particle_filter(lgss_aq.model, data25, n_particles=10, rng=RngStream(13))

    def test_theta_forbidden_for_extended(self, lgss_aq, data25):
        ext = extend_model(
            lgss_aq.model,
            KernelSpec.identity(2),
            PerturbationScales(sigma=0.0, tau=0.1),
            lgss_aq.theta_start,
        )
        with pytest.raises(ValueError):
            particle_filter(
                ext, data25, theta=lgss_aq.theta_start, n_particles=10, rng=RngStream(14)
            )

    def test_extended_needs_two_particles(self, lgss_aq, data25):
        ext = extend_model(
            lgss_aq.model,
            KernelSpec.identity(2),
            PerturbationScales(sigma=0.0, tau=0.1),
            lgss_aq.theta_start,
        )
        with pytest.raises(ValueError):
            particle_filter(ext, data25, n_particles=1, rng=RngStream(15))
