import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vcsmc.errors import DegenerateSupportError, DomainError
from vcsmc.metrics import kde_logpdf, kl_mixture_vs_particles, rmse
from vcsmc.stats import Gaussian1D, GaussianMixture1D, make_rng

STD = Gaussian1D(0.0, 1.0).as_mixture()


class TestKl:
    def test_self_consistent(self):
        x = make_rng(0).standard_normal(10_000)
        est = kl_mixture_vs_particles(STD, x, np.ones_like(x), rng=1)
        assert est.value < 0.05
        assert est.value >= -3 * est.stderr

    def test_shifted_particles(self):
        # Weighted grid particles whose KDE is close to N(5, s^2 + h^2) with s^2 + h^2 near 1,
        # so KL(N(0,1) || KDE) is close to the Gaussian value 12.5.  Plain draws from N(5, 1)
        # would leave the left tail of the KDE empty and inflate the estimate.
        x = np.arange(-5.0, 15.005, 0.01)
        w = np.exp(-0.5 * ((x - 5.0) / 0.95) ** 2)
        est = kl_mixture_vs_particles(STD, x, w, rng=3)
        s2 = 0.95**2 + est.bandwidth**2
        closed = 0.5 * (math.log(s2) + (1 + 25) / s2 - 1)
        assert est.value == pytest.approx(12.5, abs=1.0)
        assert est.value == pytest.approx(closed, abs=4 * est.stderr + 0.05)

    def test_decreases_with_particles(self):
        m = GaussianMixture1D([0.3, 0.7], [-2.0, 1.0], [0.5, 0.8])
        vals = []
        for n in (100, 1000, 10_000):
            x = m.sample(make_rng(n), n)
            vals.append(kl_mixture_vs_particles(m, x, np.ones(n), rng=4).value)
        assert vals[0] > vals[1] > vals[2]

    def test_weights_matter(self):
        x = np.concatenate([make_rng(5).normal(0, 1, 2000), make_rng(6).normal(8, 1, 2000)])
        w = np.r_[np.ones(2000), np.full(2000, 1e-9)]
        good = kl_mixture_vs_particles(STD, x, w, rng=7).value
        flat = kl_mixture_vs_particles(STD, x, np.ones(4000), rng=7).value
        assert good < flat

    @pytest.mark.parametrize("values", [[], [1.0], [2.0, 2.0, 2.0]])
    def test_degenerate_support(self, values):
        with pytest.raises(DegenerateSupportError):
            kl_mixture_vs_particles(STD, values, np.ones(len(values)))

    def test_bad_weights(self):
        with pytest.raises(DomainError):
            kde_logpdf(0.0, [0.0, 1.0], [1.0])
        with pytest.raises(DomainError):
            kde_logpdf(0.0, [0.0, 1.0], [-1.0, 2.0])

    def test_kde_matches_direct_sum(self):
        rng = make_rng(8)
        v, w = rng.normal(size=30), rng.random(30)
        x = np.linspace(-3, 3, 7)
        logp, h = kde_logpdf(x, v, w)
        wn = w / w.sum()
        direct = np.array([np.sum(wn * np.exp(-0.5 * ((xi - v) / h) ** 2)) / (h * math.sqrt(2 * math.pi)) for xi in x])
        np.testing.assert_allclose(np.exp(logp), direct, rtol=1e-10)

    @given(st.integers(0, 2**32 - 1))
    def test_estimate_not_meaningfully_negative(self, seed):
        rng = make_rng(seed)
        x = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), 200)
        est = kl_mixture_vs_particles(STD, x, rng.random(200) + 0.1, n_samples=2000, rng=rng)
        assert est.value >= -3 * est.stderr


class TestRmse:
    def test_zero_on_match(self):
        a = make_rng(0).random((10, 3))
        r = rmse(a, a)
        assert r.pooled == 0.0
        np.testing.assert_array_equal(r.per_variable, 0.0)

    def test_constant_offset(self):
        r = rmse(np.full((4, 2), 3.0), np.zeros((4, 2)))
        assert r.pooled == 3.0
        np.testing.assert_array_equal(r.per_variable, [3.0, 3.0])

    def test_two_pass_oracle(self):
        rng = make_rng(1)
        a, b = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        total = 0.0
        for i in range(50):
            for j in range(3):
                total += (a[i, j] - b[i, j]) ** 2
        assert rmse(a, b).pooled == pytest.approx(math.sqrt(total / 150), abs=1e-12)
        col = [math.sqrt(sum((a[i, j] - b[i, j]) ** 2 for i in range(50)) / 50) for j in range(3)]
        np.testing.assert_allclose(rmse(a, b).per_variable, col, atol=1e-12)

    @given(st.floats(-1e3, 1e3))
    def test_translation_invariant(self, c):
        rng = make_rng(2)
        a, b = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
        assert rmse(a + c, b + c).pooled == pytest.approx(rmse(a, b).pooled, abs=1e-9)

    def test_errors(self):
        with pytest.raises(DomainError):
            rmse(np.zeros(3), np.zeros(4))
        with pytest.raises(DomainError):
            rmse(np.zeros(0), np.zeros(0))
