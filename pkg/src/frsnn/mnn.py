"""Feedforward moment network: propagate means and covariances to a readout.

Layers alternate a linear synaptic stage (weights in mV per spike plus a
learnable external-current mean) with the moment activation of
:mod:`frsnn.moment_activation`, ending in a linear readout
``mean = W mu + beta``, ``cov = W Sigma W^T``.

Two numerically identical implementations exist:

* a dense path that materializes every layer covariance -- general, used
  by the public single-sample API and for deep stacks;
* a fast path for the single-hidden-layer / diagonal-input-covariance
  case (the image-classification setup), which never materializes the
  hidden covariance: with ``s = chi sigma_hat / sigma_bar`` and
  ``q = sigma_hat^2 - s^2 sigma_bar^2`` the readout covariance is
  ``M diag(v) M^T + W_r diag(q) W_r^T`` where ``M = W_r diag(s) W_1``.

Both carry a hand-derived backward pass that chains the analytic
activation gradients; agreement with central finite differences is the
module's central test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, ShapeError
from .moment_activation import (CurrentMoments, FiringGrads, LifParams,
                                SpikeMoments, firing_stats)


@dataclass
class MomentPair:
    """A mean vector with its covariance matrix (one sample)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.asarray(self.cov, dtype=np.float64)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ShapeError(f"cov shape {self.cov.shape} does not match mean ({n},)")
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-9 * max(1.0, np.abs(self.cov).max())):
            raise ShapeError("cov must be symmetric")

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass
class NetworkParams:
    """Hidden-layer weights/external means plus the linear readout."""

    hidden_weights: list            # [(n_k, n_{k-1}) float64]
    hidden_ext_means: list          # [(n_k,) float64]
    readout_weight: np.ndarray      # (n_out, n_K)
    readout_bias: np.ndarray        # (n_out,)
    lif: LifParams = field(default_factory=LifParams)

    def __post_init__(self):
        self.hidden_weights = [np.asarray(w, dtype=np.float64) for w in self.hidden_weights]
        self.hidden_ext_means = [np.asarray(e, dtype=np.float64) for e in self.hidden_ext_means]
        self.readout_weight = np.asarray(self.readout_weight, dtype=np.float64)
        self.readout_bias = np.asarray(self.readout_bias, dtype=np.float64)
        if len(self.hidden_weights) != len(self.hidden_ext_means):
            raise ShapeError("one external-current mean vector per hidden layer")
        prev = None
        for w, e in zip(self.hidden_weights, self.hidden_ext_means):
            if w.ndim != 2 or e.shape != (w.shape[0],):
                raise ShapeError("hidden layer shapes inconsistent")
            if prev is not None and w.shape[1] != prev:
                raise ShapeError("hidden layer dimensions are not contiguous")
            prev = w.shape[0]
        if self.readout_weight.shape[1] != prev:
            raise ShapeError("readout does not match the last hidden layer")
        if self.readout_bias.shape != (self.readout_weight.shape[0],):
            raise ShapeError("readout bias shape mismatch")
        for arr in self.iter_arrays():
            if not np.all(np.isfinite(arr)):
                raise ShapeError("network parameters must be finite")

    @property
    def sizes(self):
        dims = [self.hidden_weights[0].shape[1]]
        dims += [w.shape[0] for w in self.hidden_weights]
        dims.append(self.readout_weight.shape[0])
        return tuple(dims)

    @property
    def n_hidden_layers(self):
        return len(self.hidden_weights)

    def iter_arrays(self):
        for w, e in zip(self.hidden_weights, self.hidden_ext_means):
            yield w
            yield e
        yield self.readout_weight
        yield self.readout_bias

    def param_dict(self):
        out = {}
        for k, (w, e) in enumerate(zip(self.hidden_weights, self.hidden_ext_means), 1):
            out[f"w{k}"] = w
            out[f"ext{k}"] = e
        out["readout_w"] = self.readout_weight
        out["readout_b"] = self.readout_bias
        return out

    @classmethod
    def init(cls, sizes, rng, lif=None, ext_mean_init=None):
        """Uniform weights with std 1/sqrt(fan_in); external means at rheobase."""
        lif = lif or LifParams()
        if ext_mean_init is None:
            ext_mean_init = lif.v_threshold * lif.leak
        hw, he = [], []
        for n_in, n_out in zip(sizes[:-2], sizes[1:-1]):
            a = np.sqrt(3.0 / n_in)
            hw.append(rng.uniform(-a, a, size=(n_out, n_in)))
            he.append(np.full(n_out, float(ext_mean_init)))
        a = np.sqrt(3.0 / sizes[-2])
        w_r = rng.uniform(-a, a, size=(sizes[-1], sizes[-2]))
        return cls(hw, he, w_r, np.zeros(sizes[-1]), lif)


@dataclass
class ParamGrads:
    hidden_weights: list
    hidden_ext_means: list
    readout_weight: np.ndarray
    readout_bias: np.ndarray

    def as_dict(self):
        out = {}
        for k, (w, e) in enumerate(zip(self.hidden_weights, self.hidden_ext_means), 1):
            out[f"w{k}"] = w
            out[f"ext{k}"] = e
        out["readout_w"] = self.readout_weight
        out["readout_b"] = self.readout_bias
        return out


@dataclass
class ForwardCache:
    """Per-layer snapshots from forward, consumed by backward."""

    params: NetworkParams
    mode: str                    # "dense" | "fast"
    layers: list                 # per-layer dict of cached arrays
    inputs: tuple                # what forward consumed


def _activation_block(mu_bar, sigma_bar, lif, covariance=True):
    """Shared activation bookkeeping: stats, grads, covariance gain s, residual q."""
    rate, std, chi, grads = firing_stats(mu_bar, sigma_bar, lif,
                                         with_grad=True, covariance=covariance)
    safe = np.where(sigma_bar > 0.0, sigma_bar, 1.0)
    s = np.where(sigma_bar > 0.0, chi * std / safe, 0.0)
    q_raw = std ** 2 - s ** 2 * sigma_bar ** 2
    q = np.maximum(q_raw, 0.0)
    return dict(mu_bar=mu_bar, sigma_bar=sigma_bar, rate=rate, std=std,
                chi=chi, grads=grads, s=s, q=q, q_clamped=q_raw < 0.0)


def _activation_block_backward(blk, g_rate, g_s, g_q, g_sigma2_direct):
    """Map gradients w.r.t. (rate, s, q) back to (mu_bar, sigma_bar^2).

    g_sigma2_direct collects contributions that address sigma_bar^2 without
    passing through the activation (the row-variance bookkeeping).
    Returns (g_mu_bar, g_sigma2).
    """
    sigma_bar = blk["sigma_bar"]
    std, chi, s, q_cl = blk["std"], blk["chi"], blk["s"], blk["q_clamped"]
    grads: FiringGrads = blk["grads"]

    g_q = np.where(q_cl, 0.0, g_q)
    g_std = 2.0 * std * g_q
    g_chi = np.zeros_like(g_std)
    g_sigma2 = np.broadcast_to(g_sigma2_direct, g_std.shape).astype(np.float64).copy()
    g_sigma2 += -(s ** 2) * g_q

    live = sigma_bar > 0.0
    safe = np.where(live, sigma_bar, 1.0)
    g_s_tot = g_s - 2.0 * s * sigma_bar ** 2 * g_q
    g_chi += np.where(live, g_s_tot * std / safe, 0.0)
    g_std += np.where(live, g_s_tot * chi / safe, 0.0)
    g_sigma_lin = np.where(live, -g_s_tot * chi * std / safe ** 2, 0.0)

    g_mu_bar = (g_rate * grads.rate_mu + g_std * grads.std_mu
                + g_chi * grads.chi_mu)
    g_sigma_lin += (g_rate * grads.rate_sigma + g_std * grads.std_sigma
                    + g_chi * grads.chi_sigma)
    g_sigma2 += np.where(live, g_sigma_lin / (2.0 * safe), 0.0)
    return g_mu_bar, g_sigma2


# ---------------------------------------------------------------------------
# Dense path (general depth; batched over leading axis)
# ---------------------------------------------------------------------------

def forward_dense(params: NetworkParams, mu0, cov0, need_cov=True):
    """General forward with materialized covariances.

    mu0: (B, n0); cov0: (B, n0, n0).  Returns (mu_out, cov_out, cache).
    """
    mu = np.asarray(mu0, dtype=np.float64)
    cov = np.asarray(cov0, dtype=np.float64)
    layers = []
    for k, (W, e) in enumerate(zip(params.hidden_weights, params.hidden_ext_means)):
        mu_bar = mu @ W.T + e
        cov_bar = np.einsum("hi,bij,gj->bhg", W, cov, W, optimize=True)
        cov_bar = 0.5 * (cov_bar + np.swapaxes(cov_bar, 1, 2))
        sigma2 = np.maximum(np.diagonal(cov_bar, axis1=1, axis2=2), 0.0)
        sigma_bar = np.sqrt(sigma2)
        if not np.all(np.isfinite(mu_bar)) or not np.all(np.isfinite(sigma_bar)):
            raise NumericError(f"non-finite moments entering hidden layer {k + 1}")
        blk = _activation_block(mu_bar, sigma_bar, params.lif)
        s = blk["s"]
        cov_hat = cov_bar * s[:, :, None] * s[:, None, :]
        idx = np.arange(cov_hat.shape[1])
        cov_hat[:, idx, idx] = blk["std"] ** 2
        blk["mu_prev"] = mu
        blk["cov_prev"] = cov
        blk["cov_bar"] = cov_bar
        layers.append(blk)
        mu, cov = blk["rate"], cov_hat

    W_r, beta = params.readout_weight, params.readout_bias
    mu_out = mu @ W_r.T + beta
    cov_out = None
    if need_cov:
        cov_out = np.einsum("oi,bij,pj->bop", W_r, cov, W_r, optimize=True)
        cov_out = 0.5 * (cov_out + np.swapaxes(cov_out, 1, 2))
    cache = ForwardCache(params, "dense", layers, (mu0, cov0))
    cache.final_rate = mu
    cache.final_cov = cov
    return mu_out, cov_out, cache


def backward_dense(params: NetworkParams, cache: ForwardCache, g_mu_out, g_cov_out):
    W_r = params.readout_weight
    layers = cache.layers
    rate_K = cache.final_rate
    B = rate_K.shape[0]

    g_beta = g_mu_out.sum(axis=0)
    g_Wr = np.einsum("bo,bh->oh", g_mu_out, rate_K)
    g_rate = g_mu_out @ W_r
    if g_cov_out is None:
        n_last = cache.final_cov.shape[1]
        g_cov = np.zeros((B, n_last, n_last))
    else:
        gsym = g_cov_out + np.swapaxes(g_cov_out, 1, 2)
        g_Wr += np.einsum("bop,pj,bij->oi", gsym, W_r, cache.final_cov, optimize=True)
        g_cov = np.einsum("oi,bop,pj->bij", W_r, g_cov_out, W_r, optimize=True)

    for k in range(len(layers) - 1, -1, -1):
        blk = layers[k]
        W = params.hidden_weights[k]
        s, cov_bar = blk["s"], blk["cov_bar"]

        # cov_hat = s s^T o cov_bar with diagonal replaced by std^2
        gsym_hat = g_cov + np.swapaxes(g_cov, 1, 2)
        idx = np.arange(g_cov.shape[1])
        g_diag = g_cov[:, idx, idx]
        off = g_cov * s[:, None, :] * s[:, :, None]
        off[:, idx, idx] = 0.0
        g_cov_bar = off
        g_s = np.einsum("bij,bij,bj->bi", gsym_hat, cov_bar, s, optimize=True)
        g_s -= 2.0 * g_diag * s * np.diagonal(cov_bar, axis1=1, axis2=2)
        g_q_like_std2 = g_diag                      # dL/d(std^2) from the diagonal
        g_std_from_cov = 2.0 * blk["std"] * g_q_like_std2

        # sigma_bar^2 = diag(cov_bar): route that part of cov_bar's gradient
        g_mu_bar, g_sigma2 = _activation_block_backward(
            blk,
            g_rate,
            g_s,
            np.zeros_like(g_s),
            np.zeros_like(g_s),
        )
        # fold the direct std^2 gradient from the covariance diagonal
        grads: FiringGrads = blk["grads"]
        g_mu_bar += g_std_from_cov * grads.std_mu
        g_sigma_lin = g_std_from_cov * grads.std_sigma
        live = blk["sigma_bar"] > 0.0
        safe = np.where(live, blk["sigma_bar"], 1.0)
        g_sigma2 += np.where(live, g_sigma_lin / (2.0 * safe), 0.0)

        g_cov_bar[:, idx, idx] += g_sigma2

        g_W = np.einsum("bhg,gj,bij->hi",
                        g_cov_bar + np.swapaxes(g_cov_bar, 1, 2), W,
                        blk["cov_prev"], optimize=True)
        g_cov = np.einsum("hi,bhg,gj->bij", W, g_cov_bar, W, optimize=True)

        g_W += np.einsum("bh,bi->hi", g_mu_bar, blk["mu_prev"])
        g_e = g_mu_bar.sum(axis=0)
        g_rate = g_mu_bar @ W

        blk["_gW"] = g_W
        blk["_ge"] = g_e

    return ParamGrads([blk["_gW"] for blk in layers],
                      [blk["_ge"] for blk in layers], g_Wr, g_beta)


# ---------------------------------------------------------------------------
# Fast path (single hidden layer, diagonal input covariance)
# ---------------------------------------------------------------------------

def forward_fast(params: NetworkParams, mu0, var0, need_cov=True):
    """Single-hidden-layer forward; never materializes the hidden covariance.

    mu0, var0: (B, n0) input rate means and Poisson variances.
    """
    if params.n_hidden_layers != 1:
        raise ShapeError("fast path requires exactly one hidden layer")
    x = np.asarray(mu0, dtype=np.float64)
    v = np.asarray(var0, dtype=np.float64)
    W1, e1 = params.hidden_weights[0], params.hidden_ext_means[0]
    W_r, beta = params.readout_weight, params.readout_bias

    W1sq = W1 ** 2
    mu_bar = x @ W1.T + e1
    sigma2 = v @ W1sq.T
    sigma_bar = np.sqrt(np.maximum(sigma2, 0.0))
    if not np.all(np.isfinite(mu_bar)):
        raise NumericError("non-finite moments entering hidden layer 1")
    blk = _activation_block(mu_bar, sigma_bar, params.lif, covariance=need_cov)

    mu_out = blk["rate"] @ W_r.T + beta
    cov_out = None
    T = M = None
    if need_cov:
        T = W_r[None, :, :] * blk["s"][:, None, :]        # (B, C, h)
        M = T @ W1                                        # (B, C, n0)
        Mv = M * v[:, None, :]
        cov_out = (Mv @ np.swapaxes(M, 1, 2)
                   + (W_r[None, :, :] * blk["q"][:, None, :]) @ W_r.T)
        cov_out = 0.5 * (cov_out + np.swapaxes(cov_out, 1, 2))
    blk["x"], blk["v"], blk["T"], blk["M"] = x, v, T, M
    blk["W1sq"] = W1sq
    cache = ForwardCache(params, "fast", [blk], (mu0, var0))
    cache.final_rate = blk["rate"]
    return mu_out, cov_out, cache


def backward_fast(params: NetworkParams, cache: ForwardCache, g_mu_out, g_cov_out):
    blk = cache.layers[0]
    W1 = params.hidden_weights[0]
    W_r = params.readout_weight
    x, v, s, q = blk["x"], blk["v"], blk["s"], blk["q"]
    rate = blk["rate"]

    g_beta = g_mu_out.sum(axis=0)
    g_Wr = g_mu_out.T @ rate
    g_rate = g_mu_out @ W_r

    g_s = np.zeros_like(s)
    g_q = np.zeros_like(q)
    g_W1 = np.zeros_like(W1)
    if g_cov_out is not None:
        T, M = blk["T"], blk["M"]
        if T is None:
            raise ContractError("covariance gradient supplied but forward ran "
                                "with need_cov=False")
        B, C, h = T.shape
        n0 = M.shape[2]
        gsym = g_cov_out + np.swapaxes(g_cov_out, 1, 2)
        # residual-variance term  W_r diag(q) W_r^T
        tmp = np.matmul(gsym, W_r[None, :, :])            # (B, C, h)
        g_Wr += (tmp * q[:, None, :]).sum(axis=0)
        gw = np.matmul(g_cov_out, W_r[None, :, :])        # (B, C, h)
        g_q = (W_r[None, :, :] * gw).sum(axis=1)
        # factored term  M diag(v) M^T
        g_M = np.matmul(gsym, M * v[:, None, :])          # (B, C, n0)
        g_T = (g_M.reshape(B * C, n0) @ W1.T).reshape(B, C, h)
        g_W1 += T.reshape(B * C, h).T @ g_M.reshape(B * C, n0)
        g_Wr += (g_T * s[:, None, :]).sum(axis=0)
        g_s = (g_T * W_r[None, :, :]).sum(axis=1)

    g_mu_bar, g_sigma2 = _activation_block_backward(blk, g_rate, g_s, g_q,
                                                    np.zeros_like(g_s))
    g_W1 += 2.0 * W1 * (g_sigma2.T @ v)
    g_W1 += g_mu_bar.T @ x
    g_e1 = g_mu_bar.sum(axis=0)
    return ParamGrads([g_W1], [g_e1], g_Wr, g_beta)


# ---------------------------------------------------------------------------
# Public single-sample API
# ---------------------------------------------------------------------------

def forward(params: NetworkParams, inp: MomentPair):
    """Propagate one MomentPair to the readout; returns (MomentPair, cache)."""
    if inp.dim != params.sizes[0]:
        raise ShapeError(f"input dimension {inp.dim} does not match network "
                         f"input {params.sizes[0]}")
    mu_out, cov_out, cache = forward_dense(params, inp.mean[None, :],
                                           inp.cov[None, :, :])
    return MomentPair(mu_out[0], cov_out[0]), cache


def backward(params: NetworkParams, cache: ForwardCache, grad_readout):
    """Parameter gradients for a scalar loss with readout-space gradients.

    grad_readout is (d/d mean, d/d cov): arrays shaped like the readout
    MomentPair (single sample) or like the batched outputs (batch mode).
    """
    if cache.params is not params:
        raise ContractError("cache does not belong to these parameters")
    g_mu, g_cov = grad_readout
    g_mu = np.asarray(g_mu, dtype=np.float64)
    if g_mu.ndim == 1:
        g_mu = g_mu[None, :]
        g_cov = None if g_cov is None else np.asarray(g_cov, dtype=np.float64)[None]
    elif g_cov is not None:
        g_cov = np.asarray(g_cov, dtype=np.float64)
    expected_b = cache.final_rate.shape[0]
    if g_mu.shape[0] != expected_b:
        raise ContractError("gradient batch size does not match the cached forward")
    if cache.mode == "dense":
        return backward_dense(params, cache, g_mu, g_cov)
    return backward_fast(params, cache, g_mu, g_cov)


def readout(W, beta, hidden: MomentPair) -> MomentPair:
    """Linear readout: mean = W mu + beta, cov = W Sigma W^T."""
    W = np.asarray(W, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != hidden.dim or beta.shape != (W.shape[0],):
        raise ShapeError("readout shapes do not agree with the hidden moments")
    mean = W @ hidden.mean + beta
    cov = W @ hidden.cov @ W.T
    return MomentPair(mean, 0.5 * (cov + cov.T))


def compose_with_activation_ops(params: NetworkParams, inp: MomentPair) -> MomentPair:
    """Step-by-step recomputation using the moment_activation ops directly.

    Serves as the compositional oracle for forward(); intentionally naive.
    """
    from .moment_activation import activate, current_moments

    sm = SpikeMoments(inp.mean, np.sqrt(np.maximum(np.diag(inp.cov), 0.0)),
                      _corr_from_cov(inp.cov))
    for W, e in zip(params.hidden_weights, params.hidden_ext_means):
        ext = CurrentMoments(e, np.zeros(W.shape[0]), np.eye(W.shape[0]))
        cur = current_moments(W, sm, ext)
        sm = activate(cur, params.lif)
    hidden = MomentPair(sm.rate, sm.covariance())
    return readout(params.readout_weight, params.readout_bias, hidden)


def _corr_from_cov(cov):
    std = np.sqrt(np.maximum(np.diag(cov), 0.0))
    denom = np.outer(std, std)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0.0, cov / np.where(denom > 0.0, denom, 1.0), 0.0)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr
