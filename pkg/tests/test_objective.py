"""Decision-theoretic formulas: values, limits, gradients, round trips."""

import math

import numpy as np
import pytest

from frsnn import objective as obj
from frsnn.errors import ContractError, InputError
from frsnn.mnn import MomentPair


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(obj.softmax(np.zeros(10)), 0.1)
        assert abs(obj.softmax(np.zeros(10)).sum() - 1.0) < 1e-12

    def test_shift_invariance_and_ratio(self):
        for c in [-100.0, 0.0, 37.5]:
            p = obj.softmax(np.array([c, c + math.log(3.0)]))
            np.testing.assert_allclose(p, [0.25, 0.75], atol=1e-12)

    def test_log_likelihood_ratio_identity(self):
        rng = np.random.default_rng(0)
        mu = rng.standard_normal(10) * 3
        p = obj.softmax(mu)
        for i in range(10):
            for j in range(10):
                assert math.log(p[i] / p[j]) == pytest.approx(mu[i] - mu[j], abs=1e-9)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            mu = rng.standard_normal(7)
            assert np.argmax(obj.softmax(mu)) == np.argmax(mu)


class TestFidelity:
    def test_equal_means_is_half(self):
        for si, sj, r in [(1.0, 1.0, 0.0), (0.5, 2.0, -0.7), (3.0, 0.1, 0.9)]:
            f = obj.FidelityInputs(1.0, 1.0, si, sj, r, 2.0)
            assert obj.fidelity(f) == 0.5

    def test_monte_carlo_value(self):
        # gap 1, unit stds, rho 0, dt 2: d_i - d_j ~ N(gap*dt, D*dt) = N(2, 4),
        # so P = Phi(1) = 1/2 erfc(-1/sqrt(2)).  (10^6-draw MC agrees to 3
        # decimals; frozen here.)
        f = obj.FidelityInputs(2.0, 1.0, 1.0, 1.0, 0.0, 2.0)
        expected = 0.5 * math.erfc(-1.0 / math.sqrt(2.0))
        assert obj.fidelity(f) == pytest.approx(expected, abs=1e-12)
        rng = np.random.default_rng(7)
        draws = rng.normal(2.0, 2.0, size=10 ** 6)
        assert obj.fidelity(f) == pytest.approx((draws > 0).mean(), abs=1e-3)

    def test_positive_correlation_speeds_confidence(self):
        vals = [obj.fidelity(obj.FidelityInputs(2.0, 1.0, 1.0, 1.0, r, 1.0))
                for r in np.linspace(0.0, 0.9, 10)]
        assert np.all(np.diff(vals) > 0)

    def test_degenerate_denominator(self):
        assert obj.fidelity(obj.FidelityInputs(2.0, 1.0, 1.0, 1.0, 1.0)) == 1.0
        assert obj.fidelity(obj.FidelityInputs(1.0, 2.0, 1.0, 1.0, 1.0)) == 0.0
        assert obj.fidelity(obj.FidelityInputs(1.0, 1.0, 1.0, 1.0, 1.0)) == 0.5

    def test_monotone_in_dt(self):
        up = [obj.fidelity(obj.FidelityInputs(2.0, 1.0, 1.5, 1.0, 0.2, dt))
              for dt in [0.5, 1, 2, 4, 8]]
        assert np.all(np.diff(up) > 0)
        down = [obj.fidelity(obj.FidelityInputs(1.0, 2.0, 1.5, 1.0, 0.2, dt))
                for dt in [0.5, 1, 2, 4, 8]]
        assert np.all(np.diff(down) < 0)

    def test_scale_invariance(self):
        base = obj.fidelity(obj.FidelityInputs(2.0, 1.0, 1.5, 0.5, 0.3, 1.7))
        scaled = obj.fidelity(obj.FidelityInputs(6.0, 3.0, 4.5, 1.5, 0.3, 1.7))
        assert scaled == pytest.approx(base, abs=1e-12)


class TestGaussianEntropy:
    def test_unit_gaussian(self):
        h = obj.gaussian_entropy(np.eye(1))
        assert h.nats == pytest.approx(0.5 * math.log(2 * math.pi * math.e))
        assert not h.floored

    def test_determinant_scaling(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 4))
        cov = a @ a.T + np.eye(4)
        for c in [0.1, 2.0, 25.0]:
            left = obj.gaussian_entropy(c * cov).nats
            right = obj.gaussian_entropy(cov).nats + 2.0 * math.log(c)
            assert left == pytest.approx(right, rel=1e-12)

    def test_hand_determinant(self):
        h = obj.gaussian_entropy(np.diag([1.0, 4.0]))
        assert h.nats == pytest.approx(math.log(2 * math.pi * math.e) + math.log(2.0))

    def test_floor_flag(self):
        h = obj.gaussian_entropy(np.diag([1.0, 0.0]))
        assert h.floored
        assert np.isfinite(h.nats)


class TestCrossEntropy:
    def test_uniform(self):
        assert obj.cross_entropy_mean(np.zeros(10), 3) == pytest.approx(math.log(10))

    def test_confident_limit(self):
        mu = np.zeros(5)
        mu[2] = 200.0
        assert obj.cross_entropy_mean(mu, 2) < 1e-12

    def test_direct_value(self):
        got = obj.cross_entropy_mean(np.array([2.0, 0.0, 0.0]), 0)
        assert got == pytest.approx(math.log(1 + 2 * math.exp(-2)))
        assert got == pytest.approx(-math.log(obj.softmax(np.array([2.0, 0.0, 0.0]))[0]))

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            obj.cross_entropy_mean(np.zeros(3), 3)


class TestFidelityEntropyLoss:
    def _flat_pair(self, p_value, k=10):
        # construct a readout whose every (top, other) fidelity equals p_value
        mu = np.zeros(k)
        mu[0] = 1.0
        z = -float(obj.erfcinv(2 * p_value))
        d = 2.0 / (2 * z * z) if z != 0 else None
        cov = np.eye(k)
        if d is not None:
            # gap=1, dt=1: z = 1/sqrt(2D) -> D = 1/(2 z^2); D = 2 - 2 c
            c = 1.0 - d / 2.0
            cov = np.full((k, k), 0.0)
            np.fill_diagonal(cov, 1.0)
            cov[0, 1:] = cov[1:, 0] = c
        return MomentPair(mu, cov)

    def test_half_probability_penalty(self):
        cfg = obj.LossConfig()
        k = 10
        mu = np.ones(k)
        mu[0] = 1.0 + 1e-9          # top index 0, gaps ~ 0 -> P ~ 0.5
        mp = MomentPair(mu, np.eye(k))
        loss, _, _ = obj.fidelity_entropy_loss(mp, 0, cfg)
        expected_fid = math.log(2) * (cfg.w_top + 8 * cfg.w_rest)
        ce = obj.cross_entropy_mean(mu, 0)
        assert loss == pytest.approx(ce + expected_fid, rel=1e-6)

    def test_confident_correct_costs_nothing(self):
        k = 10
        mu = np.zeros(k)
        mu[0] = 60.0                # every pairwise fidelity saturates at 1
        mp = MomentPair(mu, np.eye(k) * 1e-4)
        loss, _, _ = obj.fidelity_entropy_loss(mp, 0, obj.LossConfig())
        assert loss == pytest.approx(obj.cross_entropy_mean(mu, 0), abs=1e-5)

    def test_sign_flips_for_wrong_prediction(self):
        k = 4
        mu = np.array([2.0, 1.0, 0.0, -1.0])
        cov = np.eye(k)
        mp = MomentPair(mu, cov)
        right, _, _ = obj.fidelity_entropy_loss(mp, 0, obj.LossConfig())
        wrong, _, _ = obj.fidelity_entropy_loss(mp, 1, obj.LossConfig())
        ce_r = obj.cross_entropy_mean(mu, 0)
        ce_w = obj.cross_entropy_mean(mu, 1)
        assert right - ce_r == pytest.approx(-(wrong - ce_w), rel=1e-9)
        assert right - ce_r > 0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        cfg = obj.LossConfig()
        for _ in range(5):
            k = 10
            mu = rng.standard_normal(k)
            a = rng.standard_normal((k, k))
            cov = a @ a.T + 0.5 * np.eye(k)
            label = int(rng.integers(k))
            loss, gmu, gcov = obj.fidelity_entropy_loss(MomentPair(mu, cov),
                                                        label, cfg)
            h = 1e-5
            for i in range(k):
                old = mu[i]
                mu[i] = old + h
                lp, _, _ = obj.fidelity_entropy_loss(MomentPair(mu, cov), label, cfg)
                mu[i] = old - h
                lm, _, _ = obj.fidelity_entropy_loss(MomentPair(mu, cov), label, cfg)
                mu[i] = old
                fd = (lp - lm) / (2 * h)
                assert abs(fd - gmu[i]) / max(abs(fd), abs(gmu[i]), 1e-6) < 1e-4
            for i in range(k):
                for j in range(i, k):
                    old = cov[i, j]
                    cov[i, j] = cov[j, i] = old + h
                    lp, _, _ = obj.fidelity_entropy_loss(MomentPair(mu, cov), label, cfg)
                    cov[i, j] = cov[j, i] = old - h
                    lm, _, _ = obj.fidelity_entropy_loss(MomentPair(mu, cov), label, cfg)
                    cov[i, j] = cov[j, i] = old
                    fd = (lp - lm) / (2 * h)
                    g = gcov[i, j] + gcov[j, i] if i != j else gcov[i, j]
                    assert abs(fd - g) / max(abs(fd), abs(g), 1e-6) < 1e-4

    def test_needs_two_classes(self):
        with pytest.raises(ContractError):
            obj.fidelity_entropy_loss(MomentPair(np.array([1.0]), np.eye(1)), 0)


class TestMinimalReadoutTime:
    def test_theta_limits(self):
        assert obj.minimal_readout_time(2.0, 1.0, 1.0, 1.0, 0.0, 0.5) == 0.0
        small = obj.minimal_readout_time(2.0, 1.0, 1.0, 1.0, 0.0, 0.5 + 1e-9)
        assert small < 1e-14

    def test_quadratic_gap_dependence(self):
        t1 = obj.minimal_readout_time(2.0, 1.0, 1.3, 0.9, 0.1, 0.9)
        t2 = obj.minimal_readout_time(3.0, 1.0, 1.3, 0.9, 0.1, 0.9)
        assert t2 == pytest.approx(t1 / 4.0, rel=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            mu_i = rng.uniform(0.5, 3.0)
            mu_j = mu_i - rng.uniform(0.1, 2.0)
            si, sj = rng.uniform(0.2, 2.0, 2)
            r = rng.uniform(-0.9, 0.9)
            theta = rng.uniform(0.55, 0.999)
            dt = obj.minimal_readout_time(mu_i, mu_j, si, sj, r, theta)
            p = obj.fidelity(obj.FidelityInputs(mu_i, mu_j, si, sj, r, dt))
            assert abs(p - theta) < 1e-9

    def test_no_finite_time_when_behind(self):
        assert obj.minimal_readout_time(1.0, 2.0, 1.0, 1.0, 0.0, 0.9) == math.inf
