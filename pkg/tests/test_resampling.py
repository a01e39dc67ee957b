import math

import numpy as np
import pytest
from scipy import stats

from iterfilt import (
    FilterDegeneracyError,
    RngStream,
    multinomial_resample,
    systematic_resample,
)
from iterfilt.smc import resolve_resampler


class FixedUniform:
    """Generator stub returning preset uniforms, for enumerating u."""

    def __init__(self, value):
        self.value = value

    def random(self, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)


def exact_multinomial_pmf(counts, n, probs):
    """Multinomial point mass by direct factorial enumeration."""
    coef = math.factorial(n)
    for c in counts:
        coef //= math.factorial(c)
    return coef * float(np.prod(np.asarray(probs, dtype=float) ** np.asarray(counts)))


class TestMultinomial:
    def test_equal_weights_uniform_chi_square(self):
        gen = RngStream(0).child("resample").generator()
        weights = np.ones(4)
        counts = np.zeros(4)
        for _ in range(100_000):
            idx = multinomial_resample(weights, gen)
            counts += np.bincount(idx, minlength=4)
        total = counts.sum()
        expected = total / 4
        chi2_stat = np.sum((counts - expected) ** 2 / expected)
        assert chi2_stat < stats.chi2.ppf(1 - 0.001, df=3)

    def test_point_mass(self):
        gen = RngStream(1).generator()
        idx = multinomial_resample(np.array([1.0, 0.0, 0.0]), gen)
        assert np.all(idx == 0)

    def test_exact_pmf_chi_square(self):
        # ancestor count vectors follow the exact multinomial law
        probs = np.array([0.5, 0.3, 0.2])
        gen = RngStream(2).generator()
        replicates = 100_000
        observed = {}
        for _ in range(replicates):
            idx = multinomial_resample(probs, gen)
            key = tuple(np.bincount(idx, minlength=3))
            observed[key] = observed.get(key, 0) + 1
        cells = [
            (n1, n2, 3 - n1 - n2)
            for n1 in range(4)
            for n2 in range(4 - n1)
        ]
        chi2_stat = 0.0
        for cell in cells:
            expected = replicates * exact_multinomial_pmf(cell, 3, probs)
            chi2_stat += (observed.get(cell, 0) - expected) ** 2 / expected
        assert chi2_stat < stats.chi2.ppf(1 - 0.001, df=len(cells) - 1)

    def test_draw_count_honors_size(self):
        gen = RngStream(3).generator()
        idx = multinomial_resample(np.array([0.5, 0.5]), gen, size=64)
        assert idx.shape == (64,)
        assert set(np.unique(idx)) <= {0, 1}


class TestSystematic:
    def test_equal_weights_identity(self):
        gen = RngStream(4).generator()
        for j in (1, 2, 7, 64):
            idx = systematic_resample(np.ones(j), gen)
            assert np.array_equal(idx, np.arange(j))

    def test_half_half_with_four_draws(self):
        for u in np.linspace(0.0, 0.999, 57):
            idx = systematic_resample(np.array([0.5, 0.5]), FixedUniform(u), size=4)
            assert np.array_equal(np.bincount(idx, minlength=2), [2, 2])

    def test_integral_expectations_are_deterministic(self):
        # normalized weights 0.7/0.2/0.1 written with an exactly
        # representable total, so J * normalized weight is integral and
        # the counts are the same for every u
        weights = np.array([7.0, 2.0, 1.0])
        for u in np.linspace(0.0, 0.999, 101):
            idx = systematic_resample(weights, FixedUniform(u), size=10)
            assert np.array_equal(np.bincount(idx, minlength=3), [7, 2, 1])

    def test_count_bounds_random_weights(self):
        # each index is copied floor(J*w) or ceil(J*w) times
        gen = np.random.default_rng(20)
        draw_gen = RngStream(5).generator()
        for _ in range(1000):
            j = int(gen.integers(2, 50))
            w = gen.random(j) + 1e-12
            idx = systematic_resample(w, draw_gen)
            counts = np.bincount(idx, minlength=j)
            scaled = j * w / w.sum()
            assert np.all(counts >= np.floor(scaled) - 1e-9)
            assert np.all(counts <= np.ceil(scaled) + 1e-9)


class TestSharedContracts:
    @pytest.mark.parametrize("resample", [multinomial_resample, systematic_resample])
    def test_total_count_preserved(self, resample):
        gen = RngStream(6).generator()
        for j in (1, 3, 17, 200):
            w = RngStream(7).child(j).generator().random(j) + 1e-9
            idx = resample(w, gen)
            assert idx.shape == (j,)
            assert np.all((0 <= idx) & (idx < j))

    @pytest.mark.parametrize("resample", [multinomial_resample, systematic_resample])
    def test_all_zero_weights_fail(self, resample):
        with pytest.raises(FilterDegeneracyError):
            resample(np.zeros(5), RngStream(8).generator())

    @pytest.mark.parametrize("resample", [multinomial_resample, systematic_resample])
    def test_invalid_weights_rejected(self, resample):
        gen = RngStream(9).generator()
        with pytest.raises(ValueError):
            resample(np.array([0.5, -0.1]), gen)
        with pytest.raises(ValueError):
            resample(np.array([0.5, np.nan]), gen)

    def test_resolve_resampler(self):
        fn, name = resolve_resampler("multinomial")
        assert fn is multinomial_resample and name == "multinomial"
        fn, name = resolve_resampler(systematic_resample)
        assert fn is systematic_resample
        with pytest.raises(ValueError):
            resolve_resampler("stratified")
