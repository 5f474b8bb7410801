"""Moment activation: contracts, analytic limits, gradients, and the MC oracle.

The full 5x5-grid oracle equivalence at 1e5 ms per point lives in the
acceptance suite; here the same machinery runs on a reduced grid.
"""

import numpy as np
import pytest

from frsnn.errors import InputError, ShapeError
from frsnn.moment_activation import (CurrentMoments, LifParams, SpikeMoments,
                                     activate, activate_grad, current_moments,
                                     firing_stats, mc_oracle)

P = LifParams()


class TestLifParams:
    def test_defaults(self):
        assert (P.leak, P.v_threshold, P.v_reset, P.t_refractory, P.dt) == \
            (0.05, 20.0, 0.0, 5.0, 1.0)

    def test_invariants(self):
        with pytest.raises(InputError):
            LifParams(leak=0.0)
        with pytest.raises(InputError):
            LifParams(v_threshold=0.0, v_reset=0.0)
        with pytest.raises(InputError):
            LifParams(t_refractory=-1.0)


class TestCurrentMoments:
    def test_zero_weights_pass_external_through(self):
        inp = SpikeMoments(np.array([0.3, 0.7]), np.array([0.5, 0.2]), np.eye(2))
        ext = CurrentMoments(np.array([1.0, -2.0, 0.5]),
                             np.array([0.4, 0.0, 1.1]), np.eye(3))
        out = current_moments(np.zeros((3, 2)), inp, ext)
        np.testing.assert_allclose(out.mean, ext.mean)
        np.testing.assert_allclose(out.std, ext.std)
        np.testing.assert_allclose(out.corr, ext.corr)

    def test_identity_single_neuron(self):
        inp = SpikeMoments(np.array([0.4]), np.array([0.3]), np.eye(1))
        out = current_moments(np.eye(1), inp, CurrentMoments.zeros(1))
        assert out.mean[0] == pytest.approx(0.4)
        assert out.std[0] == pytest.approx(0.3)

    def test_hand_matrix_multiply(self):
        # W = [[1,1],[1,-1]], input cov = I, external zero:
        # W I W^T = [[2,0],[0,2]]
        inp = SpikeMoments(np.zeros(2), np.ones(2), np.eye(2))
        out = current_moments(np.array([[1.0, 1.0], [1.0, -1.0]]), inp,
                              CurrentMoments.zeros(2))
        np.testing.assert_allclose(out.std, np.sqrt([2.0, 2.0]))
        np.testing.assert_allclose(out.corr, np.eye(2), atol=1e-15)

    def test_dimension_mismatch(self):
        inp = SpikeMoments(np.zeros(2), np.ones(2), np.eye(2))
        with pytest.raises(ShapeError):
            current_moments(np.zeros((3, 4)), inp, CurrentMoments.zeros(3))
        with pytest.raises(ShapeError):
            current_moments(np.zeros((3, 2)), inp, CurrentMoments.zeros(2))

    def test_output_covariance_symmetric(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 4))
        corr_in = np.corrcoef(rng.standard_normal((4, 30)))
        inp = SpikeMoments(rng.uniform(0, 1, 4), rng.uniform(0, 1, 4), corr_in)
        out = current_moments(a, inp, CurrentMoments.zeros(4))
        np.testing.assert_allclose(out.corr, out.corr.T, atol=1e-14)
        assert np.all(np.abs(out.corr) <= 1.0 + 1e-12)


class TestActivate:
    def test_subthreshold_deterministic_limit(self):
        # asymptotic potential mu/L = 10 mV < V_th: silent as noise vanishes
        for sig in [1e-3, 1e-6, 0.0]:
            cur = CurrentMoments(np.array([0.5]), np.array([sig]), np.eye(1))
            out = activate(cur, P)
            assert out.rate[0] < 1e-6
            assert out.std[0] < 1e-3

    def test_refractory_bound(self):
        rng = np.random.default_rng(2)
        mu = np.concatenate([rng.uniform(-2, 50, 300), [1e4, 1e8]])
        sigma = np.concatenate([rng.uniform(0, 5, 300), [1.0, 0.0]])
        rate, _, _ = firing_stats(mu, sigma, P)
        assert np.all(rate < 1.0 / P.t_refractory)
        assert np.all(np.isfinite(rate))

    def test_rate_monotone_in_mean_drive(self):
        mus = np.linspace(0.0, 3.0, 31)
        for sig in np.linspace(0.1, 3.0, 8):
            rate, _, _ = firing_stats(mus, np.full_like(mus, sig), P)
            assert np.all(np.diff(rate) >= -1e-12), sig
            _, _, _, grads = firing_stats(mus, np.full_like(mus, sig), P,
                                          with_grad=True)
            assert np.all(grads.rate_mu >= 0.0), sig

    def test_non_finite_input_rejected(self):
        with pytest.raises(InputError):
            firing_stats(np.array([np.nan]), np.array([1.0]), P)
        with pytest.raises(InputError):
            firing_stats(np.array([1.0]), np.array([-0.1]), P)

    def test_correlation_map(self):
        rng = np.random.default_rng(3)
        corr_in = np.corrcoef(rng.standard_normal((3, 40)))
        cur = CurrentMoments(np.array([1.2, 1.5, 0.9]),
                             np.array([1.0, 0.7, 1.3]), corr_in)
        out = activate(cur, P)
        _, _, chi = firing_stats(cur.mean, cur.std, P)
        for i in range(3):
            for j in range(3):
                if i != j:
                    assert out.corr[i, j] == pytest.approx(
                        chi[i] * chi[j] * corr_in[i, j])
        assert np.all(np.abs(out.corr) <= 1.0)
        np.testing.assert_allclose(np.diag(out.corr), 1.0)


class TestActivateGrad:
    def test_matches_finite_differences(self):
        mus, sigs = np.meshgrid(np.linspace(0.5, 2.5, 5), np.linspace(0.5, 2.5, 5))
        mus, sigs = mus.ravel(), sigs.ravel()
        g = activate_grad(CurrentMoments(mus, sigs, np.eye(25)), P)
        h = 1e-4
        pieces = {}
        for wrt, (dm, ds) in {"mu": (h, 0.0), "sigma": (0.0, h)}.items():
            hi = firing_stats(mus + dm, sigs + ds, P)
            lo = firing_stats(mus - dm, sigs - ds, P)
            for name, idx in [("rate", 0), ("std", 1), ("chi", 2)]:
                pieces[f"{name}_{wrt}"] = (hi[idx] - lo[idx]) / (2 * h)
        for name in ["rate_mu", "rate_sigma", "std_mu", "std_sigma",
                     "chi_mu", "chi_sigma"]:
            ana = getattr(g, name)
            fd = pieces[name]
            rel = np.abs(ana - fd) / np.maximum(np.maximum(np.abs(ana), np.abs(fd)), 1e-10)
            assert rel.max() < 1e-4, name

    def test_flat_in_deep_subthreshold(self):
        g = activate_grad(CurrentMoments(np.array([0.1]), np.array([1e-12]),
                                         np.eye(1)), P)
        for name in g._fields:
            assert abs(getattr(g, name)[0]) < 1e-12, name


class TestMcOracle:
    def test_no_drive_no_spikes(self):
        out = mc_oracle([0.0], [0.0], 0.0, LifParams(dt=0.1), 2e4, seed=0)
        assert out.rate[0] == 0.0

    def test_noiseless_closed_form_period(self):
        # V(t) = (mu/L)(1 - e^{-Lt}); ISI = T_ref - ln(1 - V_th L / mu)/L
        expected = 1.0 / (5.0 + 20.0 * np.log(2.0))
        out = mc_oracle([2.0], [0.0], 0.0, LifParams(dt=0.01), 3e4, seed=1)
        assert out.rate[0] == pytest.approx(expected, rel=2e-3)

    def test_independent_pair_stays_uncorrelated(self):
        out = mc_oracle([1.5, 1.5], [1.0, 1.0], 0.0, LifParams(dt=0.1),
                        2e5, seed=2)
        assert abs(out.corr[0, 1]) < 0.1

    def test_duration_validation(self):
        with pytest.raises(InputError):
            mc_oracle([1.0], [1.0], 0.0, P, 100.0, seed=0)

    @pytest.mark.slow
    def test_rate_and_variance_match_formulas_spot(self):
        pfine = LifParams(dt=0.02)
        for mu, sig, seed in [(1.5, 1.0, 11), (2.0, 2.0, 12)]:
            rate, std, _ = firing_stats(np.array([mu]), np.array([sig]), P)
            mc = mc_oracle([mu], [sig], 0.0, pfine, 1e5, seed=seed)
            assert abs(rate[0] - mc.rate[0]) / max(mc.rate[0], 0.01) < 0.03
            assert (abs(std[0] ** 2 - mc.std[0] ** 2)
                    / max(mc.std[0] ** 2, 0.01) < 0.10)
