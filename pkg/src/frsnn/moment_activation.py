"""Firing statistics of leaky integrate-and-fire neurons under noisy drive.

Maps the first two moments of the synaptic current (mean mu_bar in mV/ms,
standard deviation sigma_bar in mV/sqrt(ms), correlations rho_bar) to the
moments of the emitted spike trains (rate in spikes/ms, count-variability
std, correlations), using the diffusion approximation of the first-passage
problem.  With bounds

    ub = (V_th L - mu_bar) / (sigma_bar sqrt(L))
    lb = (V_res L - mu_bar) / (sigma_bar sqrt(L))

the mean inter-spike interval is ``T_ref + (2/L) (G(ub) - G(lb))`` and its
variance ``(8/L^2) (Q(ub) - Q(lb))`` (see :mod:`frsnn.special`).  The rate
is the reciprocal mean ISI and the count-variance rate follows from renewal
theory as ``rate^3 * Var(ISI)``.  Pairwise correlations transfer through
the linear-response susceptibility ``chi = (sigma_bar / sigma_hat) *
d(rate)/d(mu_bar)``, so ``rho_hat_ij = chi_i chi_j rho_bar_ij``.

Everything here is validated against :func:`mc_oracle`, a direct
Euler-Maruyama simulation of the underlying neuron; the simulation, not
the closed forms, is ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from . import special
from .errors import InputError, ShapeError

SIGMA_FLOOR = 1e-10   # below this the input is treated as noiseless
UB_SILENT = 12.0      # above this upper bound the variance integrals are moot


@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire constants and the simulation step."""

    leak: float = 0.05          # 1/ms
    v_threshold: float = 20.0   # mV
    v_reset: float = 0.0        # mV
    t_refractory: float = 5.0   # ms
    dt: float = 1.0             # ms

    def __post_init__(self):
        if not (self.leak > 0):
            raise InputError("leak must be positive")
        if not (self.v_threshold > self.v_reset):
            raise InputError("v_threshold must exceed v_reset")
        if self.t_refractory < 0:
            raise InputError("t_refractory must be nonnegative")
        if not (self.dt > 0):
            raise InputError("dt must be positive")


@dataclass
class CurrentMoments:
    """Synaptic-current statistics: mean (mV/ms), std (mV/sqrt(ms)), correlation."""

    mean: np.ndarray
    std: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        self.corr = np.asarray(self.corr, dtype=np.float64)
        n = self.mean.shape[0]
        if self.std.shape != (n,) or self.corr.shape != (n, n):
            raise ShapeError("CurrentMoments fields must be (n,), (n,), (n, n)")
        if np.any(self.std < 0):
            raise InputError("current std must be nonnegative")

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), np.eye(n))


@dataclass
class SpikeMoments:
    """Spike-train statistics: rate (spikes/ms), std (spikes/sqrt(ms)), correlation."""

    rate: np.ndarray
    std: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        self.rate = np.atleast_1d(np.asarray(self.rate, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        self.corr = np.asarray(self.corr, dtype=np.float64)
        n = self.rate.shape[0]
        if self.std.shape != (n,) or self.corr.shape != (n, n):
            raise ShapeError("SpikeMoments fields must be (n,), (n,), (n, n)")

    def covariance(self):
        return self.corr * np.outer(self.std, self.std)


class FiringGrads(NamedTuple):
    """Partial derivatives of (rate, std, chi) w.r.t. (mu_bar, sigma_bar)."""

    rate_mu: np.ndarray
    rate_sigma: np.ndarray
    std_mu: np.ndarray
    std_sigma: np.ndarray
    chi_mu: np.ndarray
    chi_sigma: np.ndarray


def _deterministic_stats(mu, p, with_grad):
    """Noiseless limit: zero below rheobase, closed-form period above."""
    rate = np.zeros_like(mu)
    rate_mu = np.zeros_like(mu)
    supra = mu > p.v_threshold * p.leak
    if np.any(supra):
        a = mu[supra] - p.v_reset * p.leak
        b = mu[supra] - p.v_threshold * p.leak
        isi = p.t_refractory + np.log(a / b) / p.leak
        rate[supra] = 1.0 / isi
        if with_grad:
            d_isi = (1.0 / a - 1.0 / b) / p.leak
            rate_mu[supra] = -d_isi / isi ** 2
    return rate, rate_mu


def firing_stats(mu, sigma, p: LifParams, with_grad=False, covariance=True):
    """Vectorized (rate, std, chi) and optionally their analytic gradients.

    mu and sigma may be any matching shape; outputs share it.  With
    covariance=False the count-variability/correlation machinery is skipped
    (std and chi come back as zeros, as do their gradients); the mean-only
    training mode uses this to avoid the variance integrals entirely.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ShapeError("mu and sigma must have identical shapes")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise InputError("non-finite current moments")
    if np.any(sigma < 0):
        raise InputError("sigma must be nonnegative")

    shape = mu.shape
    mu = mu.ravel()
    sigma = sigma.ravel()
    deg = sigma <= SIGMA_FLOOR

    L = p.leak
    sqL = np.sqrt(L)
    sig = np.where(deg, 1.0, sigma)
    ub = (p.v_threshold * L - mu) / (sig * sqL)
    lb = (p.v_reset * L - mu) / (sig * sqL)
    silent = ub > UB_SILENT

    with np.errstate(over="ignore", invalid="ignore"):
        G_ub = special.fpt_G(ub)
        G_lb = special.fpt_G(lb)
        t_fp = (2.0 / L) * (G_ub - G_lb)
        isi = p.t_refractory + t_fp
        rate = np.where(np.isfinite(isi), 1.0 / isi, 0.0)

        if covariance:
            ub_v = np.minimum(ub, UB_SILENT)  # variance kit never consulted beyond
            var_isi = (8.0 / L ** 2) * (special.fpt_Q(ub_v) - special.fpt_Q(lb))
            var_isi = np.maximum(var_isi, 0.0)
            var_rate = rate ** 3 * var_isi
            std = np.sqrt(np.maximum(var_rate, 0.0))
            std[silent] = 0.0
        else:
            var_isi = np.zeros_like(rate)
            std = np.zeros_like(rate)

        g_ub = special.fpt_g(ub)
        g_lb = special.fpt_g(lb)
        a_mu = -(2.0 / (L * sqL * sig)) * (g_ub - g_lb)
        k1 = -(rate ** 2) * a_mu
        k1 = np.where(np.isfinite(k1), k1, 0.0)
        if covariance:
            chi = np.where(std > 0.0, sig * k1 / np.where(std > 0.0, std, 1.0), 0.0)
        else:
            chi = np.zeros_like(rate)

    rate_det, rate_mu_det = _deterministic_stats(mu, p, with_grad)
    rate = np.where(deg, rate_det, rate)
    std = np.where(deg, 0.0, std)
    chi = np.where(deg, 0.0, chi)

    if not with_grad:
        return rate.reshape(shape), std.reshape(shape), chi.reshape(shape)

    with np.errstate(over="ignore", invalid="ignore"):
        a_sig = -(2.0 / (L * sig)) * (ub * g_ub - lb * g_lb)
        k2 = -(rate ** 2) * a_sig
        k2 = np.where(np.isfinite(k2), k2, 0.0)

        if covariance:
            P_ub = special.fpt_P(np.minimum(ub, UB_SILENT))
            P_lb = special.fpt_P(lb)
            v_mu = -(8.0 / (L ** 2 * sig * sqL)) * (P_ub - P_lb)
            v_sig = -(8.0 / (L ** 2 * sig)) * (ub * P_ub - lb * P_lb)

            std_safe = np.where(std > 0.0, std, 1.0)
            std_mu = (3.0 * rate ** 2 * var_isi * k1 + rate ** 3 * v_mu) / (2.0 * std_safe)
            std_sig = (3.0 * rate ** 2 * var_isi * k2 + rate ** 3 * v_sig) / (2.0 * std_safe)

            gp_ub = special.fpt_g_prime(ub)
            gp_lb = special.fpt_g_prime(lb)
            da_mu_dmu = (2.0 / (L ** 2 * sig ** 2)) * (gp_ub - gp_lb)
            da_mu_dsig = (2.0 / (L * sqL * sig ** 2)) * ((g_ub - g_lb)
                                                         + (ub * gp_ub - lb * gp_lb))
            dk1_dmu = -2.0 * rate * k1 * a_mu - rate ** 2 * da_mu_dmu
            dk1_dsig = -2.0 * rate * k2 * a_mu - rate ** 2 * da_mu_dsig

            chi_mu = sig * (dk1_dmu * std_safe - k1 * std_mu) / std_safe ** 2
            chi_sig = (k1 * std_safe + sig * dk1_dsig * std_safe
                       - sig * k1 * std_sig) / std_safe ** 2

            dead = deg | silent | (std <= 0.0)
            for arr in (std_mu, std_sig, chi_mu, chi_sig):
                arr[dead] = 0.0
                np.nan_to_num(arr, copy=False)
        else:
            std_mu = np.zeros_like(rate)
            std_sig = np.zeros_like(rate)
            chi_mu = np.zeros_like(rate)
            chi_sig = np.zeros_like(rate)
    k1 = np.where(deg, rate_mu_det, k1)
    k2 = np.where(deg, 0.0, k2)
    np.nan_to_num(k1, copy=False)
    np.nan_to_num(k2, copy=False)

    grads = FiringGrads(*(a.reshape(shape) for a in
                          (k1, k2, std_mu, std_sig, chi_mu, chi_sig)))
    return rate.reshape(shape), std.reshape(shape), chi.reshape(shape), grads


def current_moments(weights, inp: SpikeMoments, external: CurrentMoments) -> CurrentMoments:
    """Propagate spike statistics through synaptic weights (mV per spike)."""
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != inp.rate.shape[0]:
        raise ShapeError(f"weight matrix {W.shape} does not accept input of "
                         f"dimension {inp.rate.shape[0]}")
    if external.mean.shape[0] != W.shape[0]:
        raise ShapeError("external moments must match the weight row count")

    mean = W @ inp.rate + external.mean
    cov = W @ inp.covariance() @ W.T + external.corr * np.outer(external.std, external.std)
    cov = 0.5 * (cov + cov.T)
    std = np.sqrt(np.maximum(np.diag(cov), 0.0))
    denom = np.outer(std, std)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0.0, cov / np.where(denom > 0.0, denom, 1.0), 0.0)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return CurrentMoments(mean, std, corr)


def activate(current: CurrentMoments, p: LifParams) -> SpikeMoments:
    """Moment activation: current moments in, spike moments out."""
    rate, std, chi = firing_stats(current.mean, current.std, p)
    corr = np.outer(chi, chi) * current.corr
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return SpikeMoments(rate, std, corr)


def activate_grad(current: CurrentMoments, p: LifParams) -> FiringGrads:
    """Analytic partials of (rate, std, chi) w.r.t. (mean, std) per neuron."""
    _, _, _, grads = firing_stats(current.mean, current.std, p, with_grad=True)
    return grads


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------

@njit(cache=True)
def _lif_window_counts(mu, sigma, rho, leak, v_th, v_res, tref_steps, dt,
                       n_windows, window_steps, seed):
    np.random.seed(seed)
    n = mu.size
    v = np.full(n, v_res)
    refr = np.zeros(n, dtype=np.int64)
    counts = np.zeros((n, n_windows), dtype=np.int64)
    sq = np.sqrt(dt)
    a = np.sqrt(rho) if rho > 0.0 else 0.0
    b = np.sqrt(1.0 - rho) if rho > 0.0 else 1.0
    for w in range(n_windows):
        for _ in range(window_steps):
            z_common = np.random.standard_normal() if rho > 0.0 else 0.0
            for i in range(n):
                if refr[i] > 0:
                    refr[i] -= 1
                    continue
                z = b * np.random.standard_normal() + a * z_common
                v[i] += dt * (-leak * v[i] + mu[i]) + sigma[i] * sq * z
                if v[i] >= v_th:
                    counts[i, w] += 1
                    v[i] = v_res
                    refr[i] = tref_steps
    return counts


def mc_oracle(mu, sigma, rho_pair, p: LifParams, duration, seed,
              window=1000.0) -> SpikeMoments:
    """Empirical spike moments from direct LIF simulation.

    Simulates one neuron per entry of ``mu``/``sigma`` under discretized
    Gaussian white-noise current (mean mu*dt, std sigma*sqrt(dt) per step,
    pairwise correlated by ``rho_pair`` through a shared noise component).
    Spike counts are collected over ``window``-ms windows after a burn-in
    window, yielding the count mean/variance rates and, for several
    neurons, the count correlation matrix.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if mu.shape != sigma.shape:
        raise ShapeError("mu and sigma must match")
    if duration < 1e4:
        raise InputError("duration below 1e4 ms gives unstable estimates")
    if not (0.0 <= rho_pair <= 1.0):
        raise InputError("rho_pair must lie in [0, 1]")

    window_steps = int(round(window / p.dt))
    n_windows = int(duration // window)
    tref_steps = int(round(p.t_refractory / p.dt))
    counts = _lif_window_counts(mu, sigma, float(rho_pair), p.leak,
                                p.v_threshold, p.v_reset, tref_steps, p.dt,
                                n_windows + 1, window_steps, seed)
    counts = counts[:, 1:].astype(np.float64)   # drop burn-in window

    rate = counts.mean(axis=1) / window
    var_rate = counts.var(axis=1, ddof=1) / window
    std = np.sqrt(var_rate)
    n = mu.size
    corr = np.eye(n)
    if n > 1:
        c = np.corrcoef(counts)
        corr = np.where(np.isfinite(c), c, 0.0)
        np.fill_diagonal(corr, 1.0)
    return SpikeMoments(rate, std, corr)
