"""Colored (1/f^beta) noise: generation, streaming and diagnostics.

Noise is synthesized in the frequency domain: random Fourier components
with amplitudes scaled by ``f ** (-beta / 2)`` are inverse transformed
into a real sequence with unit marginal variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseColor",
    "PsdEstimate",
    "BiasStats",
    "ColoredNoiseBank",
    "WhiteNoiseSource",
    "generate_colored_noise",
    "estimate_psd",
    "fit_psd_slope",
    "bias_statistics",
    "lag_correlation",
    "integrate_random_walk",
]

DEFAULT_CHUNK_LENGTH = 1000


class InvalidLengthError(ValueError):
    pass


class InvalidColorError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseColor:
    """Spectral exponent of the noise: 0 white, 1 pink, 2 red."""

    beta: float

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise InvalidColorError(f"noise color beta must be >= 0, got {self.beta}")

    def __float__(self):
        return float(self.beta)


def _as_beta(beta) -> float:
    if isinstance(beta, NoiseColor):
        return beta.beta
    return NoiseColor(float(beta)).beta


def _spectral_scales(n: int, beta: float) -> tuple[np.ndarray, float]:
    """Per-component amplitude scales and the output normalization constant.

    The DC bin reuses the lowest nonzero frequency's scale. The returned
    ``sigma`` is the exact standard deviation of each output sample before
    normalization, DC and Nyquist contributions included.
    """
    f = np.fft.rfftfreq(n)
    f[0] = 1.0 / n
    s = f ** (-beta / 2.0)
    # DC (and Nyquist for even n) are real with variance 2 s^2; the
    # remaining complex bins contribute twice through conjugate symmetry.
    contrib = 4.0 * s**2
    contrib[0] = 2.0 * s[0] ** 2
    if n % 2 == 0:
        contrib[-1] = 2.0 * s[-1] ** 2
    sigma = np.sqrt(contrib.sum()) / n
    return s, sigma


def generate_colored_noise(n: int, beta, rng: np.random.Generator, size=None) -> np.ndarray:
    """Generate colored noise with power spectral density proportional to 1/f^beta.

    Parameters
    ----------
    n : int
        Sequence length, at least 2.
    beta : float or NoiseColor
        Spectral exponent, ``beta >= 0``.
    rng : numpy.random.Generator
        Source of randomness.
    size : int or tuple of int, optional
        Leading batch shape. ``None`` returns a single 1-D sequence, otherwise
        an array of shape ``(*size, n)`` of independent sequences.

    Returns
    -------
    numpy.ndarray
        Real samples with zero mean and unit marginal variance.
    """
    n = int(n)
    if n < 2:
        raise InvalidLengthError(f"noise sequence length must be >= 2, got {n}")
    beta = _as_beta(beta)
    batch = () if size is None else tuple(np.atleast_1d(size).astype(int))
    s, sigma = _spectral_scales(n, beta)
    shape = batch + (s.size,)

    real = rng.normal(scale=s, size=shape)
    imag = rng.normal(scale=s, size=shape)
    imag[..., 0] = 0.0
    real[..., 0] *= np.sqrt(2.0)
    if n % 2 == 0:
        imag[..., -1] = 0.0
        real[..., -1] *= np.sqrt(2.0)
    return np.fft.irfft(real + 1j * imag, n=n, axis=-1) / sigma


class ColoredNoiseBank:
    """Independent colored-noise streams, one per (environment, action dimension).

    Each stream holds a pre-generated sequence of ``chunk_length`` samples and
    a cursor. Samples are consumed in order; an exhausted stream draws a fresh
    sequence from its own generator, never reusing old samples.
    """

    def __init__(self, n_envs: int, action_dim: int, beta, seed=None,
                 chunk_length: int = DEFAULT_CHUNK_LENGTH):
        if n_envs < 1 or action_dim < 1:
            raise ValueError("n_envs and action_dim must be positive")
        if chunk_length < 2:
            raise InvalidLengthError(f"chunk_length must be >= 2, got {chunk_length}")
        self.beta = _as_beta(beta)
        self.n_envs = int(n_envs)
        self.action_dim = int(action_dim)
        self.chunk_length = int(chunk_length)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        children = ss.spawn(self.n_envs * self.action_dim)
        self._rngs = [np.random.default_rng(c) for c in children]
        self.samples = np.empty((self.n_envs, self.action_dim, self.chunk_length))
        self.cursors = np.zeros((self.n_envs, self.action_dim), dtype=np.int64)
        for i in range(self.n_envs):
            for j in range(self.action_dim):
                self._regenerate(i, j)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_envs, self.action_dim

    def _regenerate(self, i: int, j: int) -> None:
        rng = self._rngs[i * self.action_dim + j]
        self.samples[i, j] = generate_colored_noise(self.chunk_length, self.beta, rng)
        self.cursors[i, j] = 0

    def next_noise(self, env_index: int, dim_index: int) -> float:
        if not (0 <= env_index < self.n_envs and 0 <= dim_index < self.action_dim):
            raise IndexError(f"stream ({env_index}, {dim_index}) out of range for bank {self.shape}")
        if self.cursors[env_index, dim_index] >= self.chunk_length:
            self._regenerate(env_index, dim_index)
        value = self.samples[env_index, dim_index, self.cursors[env_index, dim_index]]
        self.cursors[env_index, dim_index] += 1
        return float(value)

    def draw(self) -> np.ndarray:
        """Consume one sample from every stream; returns shape ``(n_envs, action_dim)``."""
        for i, j in zip(*np.nonzero(self.cursors >= self.chunk_length)):
            self._regenerate(i, j)
        idx = self.cursors[..., None]
        out = np.take_along_axis(self.samples, idx, axis=-1)[..., 0]
        self.cursors += 1
        return out

    def reset_streams(self, env_index: int) -> None:
        """Discard the remaining samples of one environment's streams."""
        for j in range(self.action_dim):
            self._regenerate(env_index, j)


class WhiteNoiseSource:
    """Direct i.i.d. standard-normal sampler with the bank's ``draw`` interface."""

    beta = 0.0

    def __init__(self, n_envs: int, action_dim: int, seed=None):
        self.n_envs = int(n_envs)
        self.action_dim = int(action_dim)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._rng = np.random.default_rng(ss)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_envs, self.action_dim

    def draw(self) -> np.ndarray:
        return self._rng.standard_normal(self.shape)

    def reset_streams(self, env_index: int) -> None:
        pass


@dataclass
class PsdEstimate:
    frequencies: np.ndarray
    power: np.ndarray
    n_sequences_averaged: int


def estimate_psd(sequences) -> PsdEstimate:
    """Average periodogram ``|FFT|^2 / n`` over sequences, DC bin excluded.

    No window and no detrending are applied.
    """
    try:
        x = np.asarray(sequences, dtype=float)
    except ValueError as exc:
        raise ValueError("all sequences must have the same length") from exc
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D array of sequences, got shape {x.shape}")
    m, n = x.shape
    if m < 2 or n < 2:
        raise ValueError("need at least 2 sequences of length >= 2")
    spec = np.fft.rfft(x, axis=-1)[:, 1:]
    power = np.mean(np.abs(spec) ** 2, axis=0) / n
    freqs = np.arange(1, spec.shape[1] + 1) / n
    return PsdEstimate(freqs, power, m)


def fit_psd_slope(psd: PsdEstimate, f_min: float | None = None, f_max: float = 0.25) -> float:
    """Least-squares slope of log10(power) against log10(frequency) within a band."""
    if f_min is None:
        f_min = 4.0 * psd.frequencies[0]
    if not f_min < f_max:
        raise ValueError(f"f_min ({f_min}) must be below f_max ({f_max})")
    band = (psd.frequencies >= f_min) & (psd.frequencies <= f_max)
    if band.sum() < 8:
        raise InsufficientDataError(f"only {band.sum()} frequency bins in [{f_min}, {f_max}], need 8")
    lx = np.log10(psd.frequencies[band])
    ly = np.log10(psd.power[band])
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


@dataclass
class BiasStats:
    beta: float
    biases: np.ndarray = field(repr=False)
    std_of_bias: float
    n_pooled: int = 1

    @property
    def standard_error(self) -> float:
        """Approximate Monte Carlo standard error of ``std_of_bias``."""
        return self.std_of_bias / np.sqrt(2.0 * (len(self.biases) - 1))


def bias_statistics(beta, sequence_length: int, n_sequences: int, rng: np.random.Generator,
                    n_pooled: int = 1, batch: int = 2000) -> BiasStats:
    """Spread of per-sequence means ("biases") of colored noise.

    With ``n_pooled > 1`` each bias is the mean over that many independent
    sequences, mimicking data pooled from parallel environments.
    """
    beta = _as_beta(beta)
    if n_sequences < 100:
        raise ValueError(f"n_sequences must be >= 100, got {n_sequences}")
    if n_pooled < 1:
        raise ValueError("n_pooled must be >= 1")
    total = n_sequences * n_pooled
    means = []
    for start in range(0, total, batch):
        k = min(batch, total - start)
        means.append(generate_colored_noise(sequence_length, beta, rng, size=k).mean(axis=-1))
    biases = np.concatenate(means).reshape(n_sequences, n_pooled).mean(axis=1)
    return BiasStats(beta, biases, float(np.std(biases, ddof=1)), n_pooled)


def lag_correlation(sequences, lag: int = 1) -> float:
    """Pearson correlation between samples ``lag`` steps apart, pooled over sequences."""
    x = np.atleast_2d(np.asarray(sequences, dtype=float))
    a = x[:, :-lag].ravel()
    b = x[:, lag:].ravel()
    return float(np.corrcoef(a, b)[0, 1])


def integrate_random_walk(noise_x, noise_y) -> np.ndarray:
    """Cumulative 2-D positions driven by two noise sequences, shape ``(T, 2)``."""
    x = np.asarray(noise_x, dtype=float)
    y = np.asarray(noise_y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"noise sequences must be 1-D with equal length, got {x.shape} and {y.shape}")
    return np.column_stack([np.cumsum(x), np.cumsum(y)])
