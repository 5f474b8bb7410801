"""Decision-theoretic scalar functions on readout moments.

The readout of the network is treated as Gaussian: over a window dt the
accumulated evidence for classes i, j differs by a Gaussian variable with
mean ``(mu_i - mu_j) dt`` and variance ``(sigma_i^2 + sigma_j^2 -
2 sigma_i sigma_j rho_ij) dt``.  The probability that the better class
stays ahead ("fidelity"),

    P = 1/2 erfc( -(mu_i - mu_j) sqrt(dt) / sqrt(2 D) ),
    D = sigma_i^2 + sigma_j^2 - 2 sigma_i sigma_j rho_ij,

drives both the training objective (a signed binary-entropy penalty on the
pairwise fidelities) and the minimal readout time needed to reach a target
confidence.  erfc/erfcinv come from the in-repo implementations so results
are reproducible bit-for-bit across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, InputError, ShapeError
from .special import erfc, erfcinv

_D_TINY = 1e-300


@dataclass(frozen=True)
class LossConfig:
    """Weights and constants of the composite training loss."""

    w_top: float = 0.8          # weight of the (top1, top2) fidelity pair
    w_rest: float = 0.2 / 9.0   # weight of every remaining pair
    dt: float = 1.0             # readout window entering the fidelity (ms)
    clamp: float = 1e-7         # probability clamp before logarithms

    def __post_init__(self):
        if self.w_top < 0 or self.w_rest < 0:
            raise InputError("pair weights must be nonnegative")
        if not (self.dt > 0):
            raise InputError("dt must be positive")
        if not (0.0 < self.clamp < 0.5):
            raise InputError("clamp must lie in (0, 0.5)")

    def pair_weights(self, n_classes):
        w = np.full(n_classes - 1, self.w_rest)
        w[0] = self.w_top
        return w


@dataclass(frozen=True)
class FidelityInputs:
    mu_i: float
    mu_j: float
    sigma_i: float
    sigma_j: float
    rho_ij: float
    dt: float = 1.0

    def __post_init__(self):
        if self.sigma_i < 0 or self.sigma_j < 0:
            raise InputError("standard deviations must be nonnegative")
        if abs(self.rho_ij) > 1.0:
            raise InputError("correlation must lie in [-1, 1]")
        if not (self.dt > 0):
            raise InputError("dt must be positive")


class GaussianEntropy(NamedTuple):
    nats: float
    floored: bool   # eigenvalues were floored because det <= 0


def softmax(mu):
    """Stable softmax along the last axis; entries positive, sum 1."""
    mu = np.asarray(mu, dtype=np.float64)
    if not np.all(np.isfinite(mu)):
        raise InputError("softmax requires finite entries")
    z = mu - mu.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def fidelity(f: FidelityInputs) -> float:
    """P(d_i - d_j > 0) for the Gaussian evidence model."""
    d = f.sigma_i ** 2 + f.sigma_j ** 2 - 2.0 * f.sigma_i * f.sigma_j * f.rho_ij
    gap = f.mu_i - f.mu_j
    if d <= 0.0:
        return 0.5 if gap == 0.0 else (1.0 if gap > 0.0 else 0.0)
    z = gap * math.sqrt(f.dt) / math.sqrt(2.0 * d)
    return 0.5 * float(erfc(-z))


def gaussian_entropy(cov) -> GaussianEntropy:
    """Differential entropy 0.5 ln((2 pi e)^n det(cov)) in nats."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ShapeError("covariance must be square")
    n = cov.shape[0]
    eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    floored = bool(np.any(eig <= 0.0))
    eig = np.maximum(eig, 1e-12)
    nats = 0.5 * (n * math.log(2.0 * math.pi * math.e) + float(np.sum(np.log(eig))))
    return GaussianEntropy(nats, floored)


def cross_entropy_mean(mu, label) -> float:
    """-mu[label] + log sum exp(mu); zero only for an infinitely confident hit."""
    mu = np.asarray(mu, dtype=np.float64)
    if not (0 <= label < mu.shape[-1]):
        raise InputError(f"label {label} out of range for {mu.shape[-1]} classes")
    m = float(mu.max())
    lse = m + math.log(float(np.sum(np.exp(mu - m))))
    return lse - float(mu[label])


def _pairwise_terms(mu, cov, labels, cfg: LossConfig):
    """Batched loss pieces and analytic gradients.

    mu: (B, K); cov: (B, K, K) or None (mean-only); labels: (B,).
    Returns (loss_per_sample, ce_per_sample, fid_per_sample, g_mu, g_cov).
    """
    B, K = mu.shape
    if K < 2:
        raise ContractError("fidelity-entropy loss needs at least two classes")

    sm = softmax(mu)
    onehot = np.zeros_like(mu)
    onehot[np.arange(B), labels] = 1.0
    z = mu - mu.max(axis=1, keepdims=True)
    ce = np.log(np.exp(z).sum(axis=1)) + mu.max(axis=1) - mu[np.arange(B), labels]
    g_mu = sm - onehot

    if cov is None:
        return ce, ce, np.zeros(B), g_mu, None

    order = np.argsort(-mu, axis=1, kind="stable")
    top = order[:, 0]
    f_sign = np.where(top == labels, 1.0, -1.0)
    w = cfg.pair_weights(K)
    rows = np.arange(B)

    g_cov = np.zeros_like(cov)
    fid_term = np.zeros(B)
    sqdt = math.sqrt(cfg.dt)
    for m in range(1, K):
        k = order[:, m]
        gap = mu[rows, top] - mu[rows, k]
        d = (cov[rows, top, top] + cov[rows, k, k]
             - cov[rows, top, k] - cov[rows, k, top])
        ok = d > 0.0
        d_safe = np.where(ok, d, 1.0)
        zz = np.where(ok, gap * sqdt / np.sqrt(2.0 * d_safe),
                      np.where(gap > 0, np.inf, np.where(gap < 0, -np.inf, 0.0)))
        with np.errstate(over="ignore"):
            p = 0.5 * erfc(np.where(np.isfinite(zz), -zz, -np.sign(zz) * 30.0))
        pc = np.clip(p, cfg.clamp, 1.0 - cfg.clamp)
        h = -(pc * np.log(pc) + (1.0 - pc) * np.log1p(-pc))
        fid_term += f_sign * w[m - 1] * h

        inside = ok & (p > cfg.clamp) & (p < 1.0 - cfg.clamp)
        dh_dp = np.log1p(-pc) - np.log(pc)            # = ln((1-P)/P)
        dp_dz = np.exp(-np.where(np.isfinite(zz), zz, 0.0) ** 2) / math.sqrt(math.pi)
        gz = np.where(inside, f_sign * w[m - 1] * dh_dp * dp_dz, 0.0)

        dz_dgap = sqdt / np.sqrt(2.0 * d_safe)
        dz_dd = np.where(inside, -zz / (2.0 * d_safe), 0.0)
        g_gap = gz * dz_dgap
        g_d = gz * dz_dd

        np.add.at(g_mu, (rows, top), g_gap)
        np.add.at(g_mu, (rows, k), -g_gap)
        np.add.at(g_cov, (rows, top, top), g_d)
        np.add.at(g_cov, (rows, k, k), g_d)
        np.add.at(g_cov, (rows, top, k), -g_d)
        np.add.at(g_cov, (rows, k, top), -g_d)

    return ce + fid_term, ce, fid_term, g_mu, g_cov


def fidelity_entropy_loss(readout, label, cfg: LossConfig = LossConfig()):
    """Composite loss for one readout MomentPair.

    Returns (loss, grad_mean, grad_cov).  The fidelity-entropy part sorts
    classes by mean (descending, ties to the lowest index), weights the
    (top1, top2) pair by w_top and the rest by w_rest, and is signed by
    prediction correctness: entropy is penalized when the prediction is
    right and rewarded when it is wrong.
    """
    mu = np.asarray(readout.mean, dtype=np.float64)[None, :]
    cov = np.asarray(readout.cov, dtype=np.float64)[None, :, :]
    loss, _, _, g_mu, g_cov = _pairwise_terms(mu, cov, np.array([label]), cfg)
    return float(loss[0]), g_mu[0], g_cov[0]


def batch_loss(mu, cov, labels, cfg: LossConfig, mean_only=False):
    """Mean loss over a batch plus gradients; cov may be None in mean-only mode.

    Returns (loss, ce_part, fid_part, g_mu, g_cov) with gradients already
    scaled by 1/B for the mean reduction.
    """
    mu = np.asarray(mu, dtype=np.float64)
    labels = np.asarray(labels)
    c = None if mean_only else np.asarray(cov, dtype=np.float64)
    loss, ce, fid, g_mu, g_cov = _pairwise_terms(mu, c, labels, cfg)
    B = mu.shape[0]
    if g_cov is not None:
        g_cov = g_cov / B
    return (float(loss.mean()), float(ce.mean()), float(fid.mean()),
            g_mu / B, g_cov)


def minimal_readout_time(mu_i, mu_j, sigma_i, sigma_j, rho_ij, theta) -> float:
    """Smallest readout window whose fidelity reaches theta.

    Inverts the fidelity formula in dt.  theta <= 0.5 needs no time at all;
    mu_i <= mu_j can never reach theta > 0.5, so the answer is infinite.
    """
    if not (0.0 < theta < 1.0):
        raise InputError("theta must lie in (0, 1)")
    if theta <= 0.5:
        return 0.0
    gap = mu_i - mu_j
    if gap <= 0.0:
        return math.inf
    d = sigma_i ** 2 + sigma_j ** 2 - 2.0 * sigma_i * sigma_j * rho_ij
    if d <= 0.0:
        return 0.0
    x = float(erfcinv(2.0 - 2.0 * theta))
    return x * x * 2.0 * d / (gap * gap)
