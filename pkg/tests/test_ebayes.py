import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from nextframe.ebayes import (
    ContextMixtureFamily,
    GaussianMixture1D,
    bimodal,
    blind_denoise_map,
    default_sigma_grid,
    injected_noise_std,
    mmse_denoise,
    noisy_logpdf,
    noisy_score,
    sample_1d,
)


def random_mixture(rng, k=None, allow_points=True):
    k = k or int(rng.integers(1, 5))
    w = rng.dirichlet(np.ones(k))
    w[-1] = 1.0 - w[:-1].sum()
    stds = rng.uniform(0.0, 1.5, k)
    if allow_points:
        stds[rng.random(k) < 0.3] = 0.0
    return GaussianMixture1D(tuple(w), tuple(rng.uniform(-3, 3, k)), tuple(stds))


@st.composite
def mixtures(draw):
    k = draw(st.integers(1, 4))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    w = np.array(raw) / np.sum(raw)
    w[-1] = 1.0 - w[:-1].sum()
    means = draw(st.lists(st.floats(-3, 3), min_size=k, max_size=k))
    stds = draw(st.lists(st.sampled_from([0.0]) | st.floats(0.01, 2.0), min_size=k, max_size=k))
    return GaussianMixture1D(tuple(w), tuple(means), tuple(stds))


class TestMixtureType:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GaussianMixture1D((0.5, 0.4), (0, 1), (1, 1))

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError):
            GaussianMixture1D((1.0,), (0.0,), (-1.0,))

    def test_context_family(self):
        fam = ContextMixtureFamily({"left": bimodal(), "right": GaussianMixture1D((1.0,), (0.3,), (0.1,))})
        assert fam["left"].means == (-0.5, 0.5)
        with pytest.raises(ValueError):
            ContextMixtureFamily({})


class TestNoisyLogpdf:
    def test_standard_normal(self):
        gm = GaussianMixture1D((1.0,), (0.0,), (1.0,))
        assert noisy_logpdf(gm, 0.0, 0.0) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
        ys = np.linspace(-4, 4, 9)
        np.testing.assert_allclose(noisy_logpdf(gm, ys, 0.0), stats.norm.logpdf(ys), rtol=1e-13)

    def test_point_masses_match_kernel_smoothing(self):
        # direct sum of the two Gaussian bumps that the point masses smear into
        ref = np.log(0.5 * stats.norm.pdf(0.0, -0.5, 1.0) + 0.5 * stats.norm.pdf(0.0, 0.5, 1.0))
        assert noisy_logpdf(bimodal(), 0.0, 1.0) == pytest.approx(ref, abs=1e-10)

    def test_continuous_component_matches_quadrature(self):
        gm = GaussianMixture1D((0.3, 0.7), (-1.0, 0.8), (0.4, 0.9))
        sigma, y = 0.6, 0.25

        def integrand(x):
            prior = 0.3 * stats.norm.pdf(x, -1.0, 0.4) + 0.7 * stats.norm.pdf(x, 0.8, 0.9)
            return prior * stats.norm.pdf(y, x, sigma)

        val, _ = integrate.quad(integrand, -12, 12, epsabs=1e-14, epsrel=1e-12)
        assert np.exp(noisy_logpdf(gm, y, sigma)) == pytest.approx(val, rel=1e-10)

    def test_integrates_to_one(self, rng):
        for _ in range(5):
            gm = random_mixture(rng)
            ys = np.linspace(-15, 15, 60001)
            total = np.trapezoid(np.exp(noisy_logpdf(gm, ys, 0.3)), ys)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_point_mass_without_noise_is_error(self):
        with pytest.raises(ValueError, match="undefined"):
            noisy_logpdf(bimodal(), 0.1, 0.0)


class TestScore:
    def test_symmetric_zero(self):
        assert noisy_score(bimodal(), 0.0, 0.4) == 0.0

    def test_gaussian_closed_form(self):
        gm = GaussianMixture1D((1.0,), (1.3,), (0.7,))
        ys = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(noisy_score(gm, ys, 0.5), (1.3 - ys) / (0.49 + 0.25), rtol=1e-14)

    def test_matches_finite_difference(self, rng):
        h = 1e-5
        for _ in range(50):
            gm = random_mixture(rng)
            sigma = rng.uniform(0.2, 2.0)
            y = rng.uniform(-3, 3)
            fd = (noisy_logpdf(gm, y + h, sigma) - noisy_logpdf(gm, y - h, sigma)) / (2 * h)
            an = noisy_score(gm, y, sigma)
            assert an == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestMMSE:
    def test_bimodal_tanh(self):
        ys = np.linspace(-2, 2, 41)
        for sigma in (0.1, 0.5, 1.0):
            np.testing.assert_allclose(mmse_denoise(bimodal(), ys, sigma),
                                       0.5 * np.tanh(ys / (2 * sigma ** 2)), rtol=1e-12, atol=1e-15)
        assert mmse_denoise(bimodal(), 0.0, 0.3) == 0.0

    def test_zero_noise_is_identity(self):
        assert mmse_denoise(bimodal(), 0.37, 0.0) == 0.37

    @settings(max_examples=200, deadline=None)
    @given(gm=mixtures(), y=st.floats(-5, 5), sigma=st.floats(0.05, 3.0))
    def test_tweedie_identity(self, gm, y, sigma):
        lhs = mmse_denoise(gm, y, sigma)
        rhs = y + sigma ** 2 * noisy_score(gm, y, sigma)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)

    def test_monte_carlo_posterior_mean(self):
        rng = np.random.default_rng(5)
        gm = GaussianMixture1D((0.25, 0.5, 0.25), (-1.0, 0.2, 1.5), (0.0, 0.5, 0.3))
        y, sigma = 0.6, 0.7
        x = gm.sample(rng, 1_000_000)
        logw = -0.5 * ((y - x) / sigma) ** 2
        w = np.exp(logw - logw.max())
        w /= w.sum()
        mc = np.sum(w * x)
        # delta-method standard error of the self-normalised estimator
        se = np.sqrt(np.sum(w ** 2 * (x - mc) ** 2))
        assert abs(mmse_denoise(gm, y, sigma) - mc) < 3 * se

    @settings(max_examples=100, deadline=None)
    @given(mu=st.floats(-2, 2), s=st.floats(0.0, 2.0), y=st.floats(-5, 5), sigma=st.floats(0.05, 2.0))
    def test_unimodal_shrinks(self, mu, s, y, sigma):
        gm = GaussianMixture1D((1.0,), (mu,), (s,))
        assert abs(mmse_denoise(gm, y, sigma) - mu) <= abs(y - mu) + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(a=st.floats(0.1, 2.0), s=st.floats(0.0, 1.0), y=st.floats(-4, 4), sigma=st.floats(0.05, 2.0))
    def test_symmetric_mixture_is_odd(self, a, s, y, sigma):
        gm = GaussianMixture1D((0.5, 0.5), (-a, a), (s, s))
        assert mmse_denoise(gm, -y, sigma) == pytest.approx(-mmse_denoise(gm, y, sigma), abs=1e-12)


class TestBlindDenoiser:
    def test_at_point_mass(self):
        grid = default_sigma_grid()
        xhat, sig = blind_denoise_map(bimodal(), 0.5, grid)
        # p(y|sigma)/sigma ~ 1/sigma^2 at a mass, so the smallest grid value wins
        logpost = [noisy_logpdf(bimodal(), 0.5, s) - np.log(s) for s in grid]
        assert sig == grid[int(np.argmax(logpost))] == grid[0]
        assert xhat == pytest.approx(0.5, abs=1e-12)

    def test_symmetric_point(self):
        xhat, _ = blind_denoise_map(bimodal(), 0.0)
        assert xhat == 0.0

    def test_residual_points_to_left_mass(self):
        xhat, sig = blind_denoise_map(bimodal(), -2.0)
        assert xhat - (-2.0) > 0
        assert -0.5 <= xhat < 0

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            blind_denoise_map(bimodal(), 0.1, [])


class TestSample1D:
    def test_deterministic_converges_to_left_mass(self):
        tr = sample_1d(bimodal(), -2.0, alpha=0.5, beta=1.0, sigma0=1e-4, max_iters=200)
        assert tr.converged.all()
        assert tr.final[0] == pytest.approx(-0.5, abs=1e-3)

    def test_origin_is_fixed_without_noise(self):
        tr = sample_1d(bimodal(), 0.0, alpha=0.5, beta=1.0, sigma0=1e-4, max_iters=50)
        assert np.all(tr.values == 0.0)

    def test_gamma_vanishes_for_beta_one(self):
        assert np.all(injected_noise_std(np.linspace(0.01, 1, 20), 1.0, 0.7) == 0.0)

    def test_non_convergence_is_flagged(self):
        tr = sample_1d(bimodal(), -2.0, alpha=0.5, beta=1.0, sigma0=1e-12, max_iters=3)
        assert not tr.converged[0]
        assert tr.iterations[0] == 3

    def test_symmetric_mode_frequency(self):
        rng = np.random.default_rng(11)
        y0 = rng.standard_normal(2000)
        tr = sample_1d(bimodal(), y0, alpha=0.5, beta=0.5, sigma0=0.01, rng=rng, max_iters=200)
        assert tr.converged.all()
        frac = np.mean(tr.final > 0)
        assert 0.44 <= frac <= 0.56
