"""Sequential Rice-factor estimation and LoS gating.

A bootstrap particle filter tracks the Rice factor K of a link from batches of
per-subcarrier amplitude samples. The LoS decision compares the posterior mass
on {K >= threshold} against the complement (Rayleigh-like), reported as a
log-odds ratio. All randomness flows through a caller-supplied generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import i0e

N_PARTICLES = 500
LOG10_K_MIN = -2.0   # -20 dB
LOG10_K_MAX = 2.5    # +25 dB
RANDOM_WALK_STD = 0.08  # in log10(K) per step
DEFAULT_THRESHOLD_DB = 3.0


class EmptyFilterError(RuntimeError):
    """LoS decision requested before any amplitude batch was processed."""


def rician_logpdf(x, nu, sigma):
    """Log density of the Rician amplitude distribution; broadcasts.

    Uses the exponentially scaled Bessel term for numerical stability.
    """
    x = np.asarray(x, dtype=float)
    z = x * nu / sigma**2
    return (np.log(x / sigma**2) - (x - nu) ** 2 / (2.0 * sigma**2)
            + np.log(i0e(z)))


@dataclass
class RiceFilterState:
    k_linear: np.ndarray   # (n_particles,)
    log_weights: np.ndarray
    steps: int = 0
    flagged: int = 0  # skipped batches (all-zero amplitudes)
    snr_db: float = -np.inf  # smoothed batch power over noise power

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    @property
    def effective_sample_size(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w**2))

    def k_estimate_db(self) -> float:
        return float(10.0 * np.log10(np.sum(self.weights * self.k_linear)))


@dataclass
class LosDecision:
    is_los: bool
    log_likelihood_ratio: float
    k_estimate_db: float


def init_rice_filter(rng: np.random.Generator, n_particles: int = N_PARTICLES) -> RiceFilterState:
    log10_k = rng.uniform(LOG10_K_MIN, LOG10_K_MAX, n_particles)
    return RiceFilterState(k_linear=10.0**log10_k,
                           log_weights=np.zeros(n_particles))


def rice_pf_step(state: RiceFilterState, amplitudes, noise_power: float,
                 rng: np.random.Generator) -> RiceFilterState:
    """Propagate, weight by the Rician amplitude likelihood, resample at ESS < N/2."""
    amplitudes = np.asarray(amplitudes, dtype=float).ravel()
    if amplitudes.size < 8:
        raise ValueError("need at least 8 amplitude samples per step")
    if not np.any(amplitudes > 0):
        state.flagged += 1
        return state

    n = state.k_linear.size
    log10_k = np.log10(state.k_linear) + RANDOM_WALK_STD * rng.standard_normal(n)
    # a small injection of fresh prior particles keeps the filter responsive
    # to LoS/NLoS transitions instead of collapsing onto a stale mode
    fresh = rng.uniform(size=n) < 0.05
    log10_k[fresh] = rng.uniform(LOG10_K_MIN, LOG10_K_MAX, int(fresh.sum()))
    log10_k = np.clip(log10_k, LOG10_K_MIN, LOG10_K_MAX)
    k = 10.0**log10_k

    p_total = np.mean(amplitudes**2)
    p_signal = max(p_total - noise_power, 1e-3 * p_total)
    nu = np.sqrt(p_signal * k / (k + 1.0))
    sigma = np.sqrt((p_signal / (k + 1.0) + noise_power) / 2.0)
    loglik = rician_logpdf(amplitudes[None, :], nu[:, None], sigma[:, None]).sum(axis=1)

    batch_snr = 10.0 * np.log10(max(p_total / noise_power - 1.0, 1e-9)) if noise_power > 0 else 60.0
    snr_db = batch_snr if state.steps == 0 else 0.7 * state.snr_db + 0.3 * batch_snr

    log_w = state.log_weights + loglik
    log_w -= log_w.max()
    state = RiceFilterState(k_linear=k, log_weights=log_w,
                            steps=state.steps + 1, flagged=state.flagged,
                            snr_db=snr_db)
    if state.effective_sample_size < n / 2:
        w = state.weights
        idx = _systematic_resample(w, rng)
        state = RiceFilterState(k_linear=k[idx], log_weights=np.zeros(n),
                                steps=state.steps, flagged=state.flagged,
                                snr_db=snr_db)
    return state


def _systematic_resample(weights, rng):
    n = len(weights)
    u = (rng.uniform() + np.arange(n)) / n
    return np.minimum(np.searchsorted(np.cumsum(weights), u), n - 1)


def los_test(state: RiceFilterState, threshold_db: float = DEFAULT_THRESHOLD_DB,
             min_snr_db: float = 3.0) -> LosDecision:
    """Posterior log-odds of {K >= threshold} versus the Rayleigh-like complement.

    Links whose smoothed batch power sits at the noise floor are never declared
    LoS: with nothing detectable the posterior would just echo the prior.
    """
    if state.steps < 1:
        raise EmptyFilterError("no amplitude batch processed yet")
    k_thr = 10.0 ** (threshold_db / 10.0)
    w = state.weights
    p_los = float(np.sum(w[state.k_linear >= k_thr]))
    eps = 1.0 / (10.0 * state.k_linear.size)
    llr = float(np.log(p_los + eps) - np.log(1.0 - p_los + eps))
    detectable = state.snr_db >= min_snr_db
    return LosDecision(is_los=bool(llr > 0.0 and detectable),
                       log_likelihood_ratio=llr if detectable else min(llr, 0.0),
                       k_estimate_db=state.k_estimate_db())


def moment_k_estimate(amplitudes) -> float:
    """Closed-form moment-based Rice-factor estimate (test oracle).

    Uses the second and fourth amplitude moments: nu^4 = 2 m2^2 - m4.
    Returns K in linear scale, clipped at 0 for Rayleigh-like data.
    """
    a = np.asarray(amplitudes, dtype=float).ravel()
    m2 = np.mean(a**2)
    m4 = np.mean(a**4)
    nu4 = max(2.0 * m2**2 - m4, 0.0)
    nu2 = np.sqrt(nu4)
    two_sigma2 = max(m2 - nu2, 1e-12 * m2)
    return float(nu2 / two_sigma2)
