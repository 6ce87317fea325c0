import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from colored_ppo import noise
from colored_ppo.noise import (ColoredNoiseBank, InsufficientDataError, InvalidColorError,
                               InvalidLengthError, NoiseColor, PsdEstimate, WhiteNoiseSource)

BETAS = [0.0, 0.5, 1.0, 2.0]


def ks_crit(n, m, alpha=0.01):
    # asymptotic two-sample KS critical value
    c = np.sqrt(-0.5 * np.log(alpha / 2))
    return c * np.sqrt((n + m) / (n * m))


def dense_inverse(coeffs, n):
    """Explicit inverse real DFT built from the full Hermitian spectrum."""
    full = np.zeros(n, dtype=complex)
    full[: len(coeffs)] = coeffs
    for k in range(1, (n + 1) // 2):
        full[n - k] = np.conj(coeffs[k])
    t = np.arange(n)
    basis = np.exp(2j * np.pi * np.outer(t, np.arange(n)) / n)
    return (basis @ full).real / n


class TestNoiseColor:
    def test_valid(self):
        assert float(NoiseColor(1.5)) == 1.5

    @pytest.mark.parametrize("beta", [-0.1, -1.0, np.nan, np.inf])
    def test_invalid(self, beta):
        with pytest.raises(InvalidColorError):
            NoiseColor(beta)


class TestGenerate:
    def test_length_and_finite(self):
        x = noise.generate_colored_noise(777, 1.3, np.random.default_rng(0))
        assert x.shape == (777,)
        assert np.all(np.isfinite(x))

    def test_batch_shape(self):
        x = noise.generate_colored_noise(64, 1.0, np.random.default_rng(0), size=(3, 5))
        assert x.shape == (3, 5, 64)

    def test_errors(self):
        rng = np.random.default_rng(0)
        with pytest.raises(InvalidLengthError):
            noise.generate_colored_noise(1, 0.0, rng)
        with pytest.raises(InvalidColorError):
            noise.generate_colored_noise(10, -1.0, rng)

    def test_deterministic(self):
        a = noise.generate_colored_noise(300, 0.7, np.random.default_rng(42), size=4)
        b = noise.generate_colored_noise(300, 0.7, np.random.default_rng(42), size=4)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("n", [8, 9, 16, 31])
    @pytest.mark.parametrize("beta", [0.0, 1.0, 2.0])
    def test_matches_dense_inverse_dft(self, n, beta):
        # Redo the frequency-domain construction by hand with the same draws.
        rng = np.random.default_rng(5)
        f = np.arange(n // 2 + 1) / n
        f[0] = 1.0 / n
        s = f ** (-beta / 2)
        re = rng.normal(scale=s)
        im = rng.normal(scale=s)
        im[0] = 0.0
        re[0] *= np.sqrt(2)
        if n % 2 == 0:
            im[-1] = 0.0
            re[-1] *= np.sqrt(2)
        raw = dense_inverse(re + 1j * im, n)
        # exact per-sample variance of raw: each bin's contribution over n^2
        var = (2 * s[0] ** 2 + 4 * np.sum(s[1:(n + 1) // 2] ** 2)
               + (2 * s[-1] ** 2 if n % 2 == 0 else 0.0)) / n**2
        expected = raw / np.sqrt(var)
        got = noise.generate_colored_noise(n, beta, np.random.default_rng(5))
        assert np.allclose(got, expected, atol=1e-10)

    @pytest.mark.parametrize("n", [16, 17])
    def test_exact_unit_variance_per_time(self, n):
        # Monte Carlo on small n: every time index has unit variance.
        x = noise.generate_colored_noise(n, 1.5, np.random.default_rng(1), size=200_000)
        assert np.allclose(x.var(axis=0), 1.0, atol=0.02)

    def test_white_matches_iid_gaussian(self):
        x = noise.generate_colored_noise(1000, 0.0, np.random.default_rng(3), size=100).ravel()
        y = np.random.default_rng(4).standard_normal(x.size)
        res = stats.ks_2samp(x, y)
        assert res.statistic < ks_crit(x.size, y.size)

    @pytest.mark.parametrize("beta", BETAS)
    def test_marginal_gaussian(self, beta):
        x = noise.generate_colored_noise(256, beta, np.random.default_rng(7), size=10_000)
        pooled = x[:, 100]
        assert abs(stats.skew(pooled)) < 0.1
        assert abs(stats.kurtosis(pooled)) < 0.2
        assert 0.95 <= pooled.var() <= 1.05

    def test_lag_correlation_increasing(self):
        rng = np.random.default_rng(11)
        rho = [noise.lag_correlation(noise.generate_colored_noise(1000, b, rng, size=200))
               for b in (0.0, 0.5, 1.0)]
        assert abs(rho[0]) < 0.02
        assert rho[0] < rho[1] < rho[2]

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(2, 300), beta=st.floats(0, 3), seed=st.integers(0, 2**32 - 1))
    def test_property_real_finite(self, n, beta, seed):
        x = noise.generate_colored_noise(n, beta, np.random.default_rng(seed))
        assert x.shape == (n,)
        assert x.dtype == np.float64
        assert np.all(np.isfinite(x))


class TestBank:
    def test_wraps_and_regenerates(self):
        bank = ColoredNoiseBank(1, 1, beta=1.0, seed=0, chunk_length=3)
        first = bank.samples[0, 0].copy()
        got = [bank.next_noise(0, 0) for _ in range(3)]
        assert np.array_equal(got, first)
        fourth = bank.next_noise(0, 0)
        assert bank.cursors[0, 0] == 1
        assert fourth == bank.samples[0, 0, 0]
        assert not np.array_equal(bank.samples[0, 0], first)

    def test_regeneration_matches_stream_rng(self):
        # Each stream is its own spawned generator: fresh chunks follow it.
        ss = np.random.SeedSequence(9)
        child = ss.spawn(2)[1]
        rng = np.random.default_rng(child)
        c1 = noise.generate_colored_noise(5, 0.5, rng)
        c2 = noise.generate_colored_noise(5, 0.5, rng)
        bank = ColoredNoiseBank(2, 1, beta=0.5, seed=np.random.SeedSequence(9), chunk_length=5)
        vals = [bank.next_noise(1, 0) for _ in range(10)]
        assert np.allclose(vals, np.concatenate([c1, c2]))

    def test_cursor_bounds(self):
        bank = ColoredNoiseBank(2, 2, beta=0.0, seed=1, chunk_length=4)
        for _ in range(13):
            bank.draw()
            assert np.all((bank.cursors >= 0) & (bank.cursors <= bank.chunk_length))

    def test_draw_equals_next_noise(self):
        a = ColoredNoiseBank(3, 2, beta=1.0, seed=5, chunk_length=7)
        b = ColoredNoiseBank(3, 2, beta=1.0, seed=5, chunk_length=7)
        for _ in range(20):
            d = a.draw()
            e = np.array([[b.next_noise(i, j) for j in range(2)] for i in range(3)])
            assert np.array_equal(d, e)

    def test_index_error(self):
        bank = ColoredNoiseBank(2, 1, beta=0.0, seed=0)
        with pytest.raises(IndexError):
            bank.next_noise(2, 0)
        with pytest.raises(IndexError):
            bank.next_noise(0, -1)

    def test_streams_independent(self):
        bank = ColoredNoiseBank(2, 1, beta=0.0, seed=123)
        x = np.array([bank.draw()[:, 0] for _ in range(10_000)])
        assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 0.03

    def test_white_bank_matches_iid(self):
        bank = ColoredNoiseBank(10, 1, beta=0.0, seed=2)
        x = np.concatenate([bank.draw().ravel() for _ in range(10_000)])
        y = WhiteNoiseSource(10, 1, seed=3)
        yv = np.concatenate([y.draw().ravel() for _ in range(10_000)])
        assert stats.ks_2samp(x, yv).statistic < ks_crit(x.size, yv.size)

    def test_reset_streams(self):
        bank = ColoredNoiseBank(2, 1, beta=1.0, seed=0, chunk_length=10)
        bank.draw()
        bank.draw()
        bank.reset_streams(0)
        assert bank.cursors[0, 0] == 0 and bank.cursors[1, 0] == 2

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            ColoredNoiseBank(0, 1, beta=0.0)
        with pytest.raises(InvalidColorError):
            ColoredNoiseBank(1, 1, beta=-2.0)


class TestPsd:
    def test_zero_sequences(self):
        est = noise.estimate_psd(np.zeros((4, 64)))
        assert np.all(est.power == 0)

    def test_sinusoid_concentrates(self):
        n, k = 128, 10
        t = np.arange(n)
        x = np.tile(np.sin(2 * np.pi * k * t / n), (3, 1))
        est = noise.estimate_psd(x)
        assert np.argmax(est.power) == k - 1
        assert est.frequencies[k - 1] == pytest.approx(k / n)
        assert est.power[k - 1] / est.power.sum() > 0.999

    def test_frequency_invariants(self):
        est = noise.estimate_psd(np.random.default_rng(0).normal(size=(5, 101)))
        assert np.all(np.diff(est.frequencies) > 0)
        assert est.frequencies[0] > 0 and est.frequencies[-1] <= 0.5
        assert np.all(est.power >= 0)
        assert est.n_sequences_averaged == 5

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            noise.estimate_psd([[1.0, 2.0, 3.0], [1.0, 2.0]])
        with pytest.raises(ValueError):
            noise.estimate_psd(np.zeros((1, 10)))

    def test_exact_power_law_slope(self):
        f = np.arange(1, 257) / 512
        est = PsdEstimate(f, f ** -1.0, 1)
        assert noise.fit_psd_slope(est) == pytest.approx(-1.0, abs=1e-12)

    def test_insufficient_bins(self):
        f = np.arange(1, 257) / 512
        est = PsdEstimate(f, np.ones_like(f), 1)
        with pytest.raises(InsufficientDataError):
            noise.fit_psd_slope(est, f_min=0.1, f_max=0.11)
        with pytest.raises(ValueError):
            noise.fit_psd_slope(est, f_min=0.3, f_max=0.2)

    @pytest.mark.parametrize("beta,lo,hi", [(0.0, -0.15, 0.15), (0.5, -0.65, -0.35),
                                            (1.0, -1.15, -0.85), (2.0, -2.2, -1.8)])
    def test_slope_bands(self, beta, lo, hi):
        x = noise.generate_colored_noise(512, beta, np.random.default_rng(int(beta * 10)), size=4096)
        slope = noise.fit_psd_slope(noise.estimate_psd(x))
        assert lo <= slope <= hi


class TestBias:
    def test_white_bias_clt(self):
        st_ = noise.bias_statistics(0.0, 1000, 4000, np.random.default_rng(0))
        assert st_.std_of_bias == pytest.approx(1 / np.sqrt(1000), rel=0.1)
        assert st_.std_of_bias == pytest.approx(np.std(st_.biases, ddof=1))
        assert abs(st_.biases.mean()) < 3 * st_.std_of_bias / np.sqrt(4000)

    def test_needs_100_sequences(self):
        with pytest.raises(ValueError):
            noise.bias_statistics(0.0, 100, 99, np.random.default_rng(0))

    def test_pooling_halves_std(self):
        rng = np.random.default_rng(1)
        one = noise.bias_statistics(1.0, 500, 3000, rng).std_of_bias
        four = noise.bias_statistics(1.0, 500, 3000, rng, n_pooled=4).std_of_bias
        assert four / one == pytest.approx(0.5, rel=0.1)


class TestWalk:
    def test_zero(self):
        assert np.all(noise.integrate_random_walk(np.zeros(5), np.zeros(5)) == 0)

    def test_cumsum(self):
        xy = noise.integrate_random_walk([1, 1, 1], [0, 0, 0])
        assert xy.tolist() == [[1, 0], [2, 0], [3, 0]]

    def test_mismatch(self):
        with pytest.raises(ValueError):
            noise.integrate_random_walk(np.zeros(3), np.zeros(4))

    def test_displacement_grows_with_beta(self):
        rng = np.random.default_rng(2)
        d = []
        for b in (0.0, 1.0, 2.0):
            e = noise.generate_colored_noise(1000, b, rng, size=(1000, 2))
            d.append(np.hypot(e[:, 0].sum(-1), e[:, 1].sum(-1)).mean())
        assert d[0] < d[1] < d[2]
