import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st

from nfad.ndmath import (RngState, chi2_tail_quantile, finite_diff_jacobian, sample_std_normal,
                         std_normal_logpdf)


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def two_sided_normal_quantile(p):
    """Bisection on the normal CDF: z with P(|Z| >= z) = p."""
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 2.0 * (1.0 - normal_cdf(mid)) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestLogpdf:
    def test_mode_1d(self):
        assert std_normal_logpdf([0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
        assert std_normal_logpdf([0.0]) == pytest.approx(-0.918938533, abs=1e-9)

    def test_mode_2d(self):
        assert std_normal_logpdf([0.0, 0.0]) == pytest.approx(-1.837877066, abs=1e-9)

    def test_offset_2d_against_quadrature(self):
        # the 1-D factor exp(-x^2/2)/sqrt(2 pi) must integrate to 1 for the closed form to hold
        x = np.linspace(-10, 10, 20001)
        mass = trapezoid(np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi), x)
        assert mass == pytest.approx(1.0, abs=1e-9)
        assert std_normal_logpdf([1.0, 0.0]) == pytest.approx(-math.log(2 * math.pi) - 0.5, abs=1e-14)

    def test_integrates_to_one(self):
        x = np.arange(-10.0, 10.0 + 5e-4, 1e-3)
        dens = np.exp(std_normal_logpdf(x[:, None]))
        assert abs(trapezoid(dens, x) - 1.0) < 1e-6

    def test_rows(self):
        z = np.array([[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(std_normal_logpdf(z), [-math.log(2 * math.pi), -math.log(2 * math.pi) - 0.5])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            std_normal_logpdf([np.nan, 0.0])
        with pytest.raises(ValueError):
            std_normal_logpdf([np.inf])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=6))
    def test_factorizes_over_dimensions(self, z):
        total = std_normal_logpdf(z)
        parts = sum(std_normal_logpdf([v]) for v in z)
        assert total == pytest.approx(parts, rel=1e-12, abs=1e-12)


class TestSampling:
    def test_mean_and_variance(self):
        n = 10**5
        x = sample_std_normal(n, 1, RngState(123))[:, 0]
        assert abs(x.mean()) < 4 / math.sqrt(n)
        assert abs(x.var() - 1.0) < 0.02

    def test_same_seed_identical(self):
        a = sample_std_normal(50, 3, RngState(7))
        b = sample_std_normal(50, 3, RngState(7))
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        assert not np.array_equal(sample_std_normal(5, 2, RngState(1)), sample_std_normal(5, 2, RngState(2)))

    def test_pinned_stream(self):
        # frozen from this implementation; guards the platform-independent bit stream
        u = RngState(0).uniform(3)
        assert u.tolist() == pytest.approx([0.014067035665647709, 0.2577672456246177, 0.47156538101528966],
                                           rel=0, abs=0)

    def test_spawn_streams_independent(self):
        base = RngState(5)
        a, b = base.spawn(1), base.spawn(2)
        assert not np.array_equal(a.uniform(4), b.uniform(4))
        assert np.array_equal(RngState(5).spawn(1).uniform(4), RngState(5).spawn(1).uniform(4))

    def test_odd_count_box_muller(self):
        x = RngState(3).normal(7)
        y = RngState(3).normal(8)
        assert np.array_equal(x, y[:7])

    def test_bad_args(self):
        with pytest.raises(ValueError):
            sample_std_normal(0, 2, RngState(0))
        with pytest.raises(ValueError):
            RngState(-1)

    def test_permutation_is_bijection(self):
        p = RngState(9).permutation(100)
        assert sorted(p.tolist()) == list(range(100))


class TestChi2Quantile:
    def test_whole_space(self):
        for d in (1, 2, 5, 40):
            assert chi2_tail_quantile(1.0, d) == 0.0

    def test_two_dims_closed_form(self):
        assert chi2_tail_quantile(0.05, 2) == pytest.approx(-2 * math.log(0.05), abs=1e-9)
        assert chi2_tail_quantile(0.05, 2) == pytest.approx(5.99146, abs=1e-5)

    def test_one_dim_against_normal_quantile(self):
        z = two_sided_normal_quantile(0.05)
        assert z == pytest.approx(1.959964, abs=1e-6)
        assert chi2_tail_quantile(0.05, 1) == pytest.approx(z * z, abs=1e-8)
        assert chi2_tail_quantile(0.05, 1) == pytest.approx(3.84146, abs=1e-5)

    @pytest.mark.parametrize("p", [0.0, -0.1, 1.5, float("nan")])
    def test_invalid(self, p):
        with pytest.raises(ValueError):
            chi2_tail_quantile(p, 2)

    @pytest.mark.parametrize("d", [1, 2, 8, 32])
    def test_monotone(self, d):
        ps = np.linspace(0.001, 0.999, 50)
        q = np.array([chi2_tail_quantile(p, d) for p in ps])
        assert np.all(np.diff(q) < 0)

    def test_vectorized_matches_scalar(self):
        ps = np.array([0.3, 0.01, 1e-6])
        np.testing.assert_allclose(chi2_tail_quantile(ps, 4), [chi2_tail_quantile(p, 4) for p in ps], atol=1e-10)

    @pytest.mark.parametrize("d", [1, 2, 8])
    @pytest.mark.parametrize("p", [0.5, 0.1, 0.01])
    def test_empirical_tail_mass(self, p, d):
        n = 10**6
        z = RngState(1000 + d).normal((n, d))
        frac = np.mean(np.sum(z * z, axis=1) >= chi2_tail_quantile(p, d))
        assert abs(frac - p) < 4 * math.sqrt(p * (1 - p) / n)


class TestFiniteDiffJacobian:
    def test_identity(self):
        np.testing.assert_allclose(finite_diff_jacobian(lambda z: z, [0.3, -1.2, 2.0]), np.eye(3), atol=1e-10)

    def test_linear(self):
        A = np.array([[2.0, -1.0], [0.5, 3.0]])
        J = finite_diff_jacobian(lambda z: A @ z, [0.7, -0.2], h=1e-5)
        np.testing.assert_allclose(J, A, atol=1e-8)

    def test_square_first(self):
        J = finite_diff_jacobian(lambda z: np.array([z[0] ** 2, z[1]]), [1.0, 1.0])
        np.testing.assert_allclose(J, np.diag([2.0, 1.0]), atol=1e-8)

    def test_non_finite_output(self):
        with pytest.raises(ValueError):
            finite_diff_jacobian(lambda z: np.where(z > 0, z, np.nan), [0.0, 1.0])

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_jacobian(lambda z: z, [1.0], h=0.0)

    @settings(max_examples=25)
    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=2))
    def test_sine_map(self, z):
        f = lambda v: np.array([np.sin(v[0]) * v[1], v[0] + v[1] ** 3])
        x, y = z
        exact = np.array([[np.cos(x) * y, np.sin(x)], [1.0, 3 * y * y]])
        np.testing.assert_allclose(finite_diff_jacobian(f, z), exact, atol=1e-8)
