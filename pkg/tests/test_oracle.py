import logging
import math

import numpy as np
import pytest

from ssmbayes.lgssm import LgssmParams, augment_ar1, batch_filter, log_likelihood, simulate, steady_state
from ssmbayes.numerics import make_rng
from ssmbayes.oracle import (
    ForwardMessage,
    OracleConfig,
    OracleError,
    bayes_oracle_corr,
    bayes_oracle_corr_marginal,
    bayes_oracle_lgssm,
    corr_filter,
    ess,
    hmm_filter_batch,
    hmm_forward_step,
    hmm_predict_next,
    kalman_oracle,
)
from ssmbayes.tasks import CorrNoiseConfig, HmmParams, LgssmPriorConfig, sample_lgssm_task, simulate_corr_noise

from oracles import enumerate_paths, random_hmm

ATOMS = [
    LgssmParams(np.array([[0.9]]), np.array([[1.0]]), np.array([[0.5]]), np.array([[0.2]])),
    LgssmParams(np.array([[-0.5]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[0.3]])),
]


def atom_prior(probs):
    def draw(rng, n):
        pick = rng.choice(len(ATOMS), size=n, p=probs)
        return tuple(np.stack([getattr(ATOMS[i], f) for i in pick]) for f in ("A", "C", "Q", "R"))

    return draw


class TestImportanceSampling:
    def test_point_mass_prior_is_kalman(self):
        x = make_rng(0).standard_normal((12, 1))
        pred, e = bayes_oracle_lgssm(x, atom_prior([1.0, 0.0]), OracleConfig(n_samples=50), return_ess=True)
        np.testing.assert_allclose(pred, kalman_oracle(ATOMS[0], x), atol=1e-12)
        assert e == pytest.approx(50)

    def test_two_atom_posterior(self):
        x = np.array([[0.4], [0.7], [0.5], [0.9], [0.6]])
        ll = np.array([log_likelihood(p, x) for p in ATOMS])
        post = np.exp(ll - ll.max()) * 0.5
        post /= post.sum()
        fc = np.array([kalman_oracle(p, x)[0] for p in ATOMS])
        exact = post @ fc
        pred = bayes_oracle_lgssm(x, atom_prior([0.5, 0.5]), OracleConfig(n_samples=20000, seed=3))
        # the only randomness is the atom frequency, binomial with sd ~ 0.0035
        assert abs(pred[0] - exact) < 0.02 * abs(fc[0] - fc[1])

    def test_batching_does_not_change_answers(self):
        prior = LgssmPriorConfig(d=2, m=1)
        x = make_rng(1).standard_normal((3, 8, 1))
        cfg = OracleConfig(n_samples=200, seed=7, retries=0)
        joint = bayes_oracle_lgssm(x, prior, cfg)
        # context i always uses substream i, so any prefix batch reproduces the same rows
        np.testing.assert_allclose(bayes_oracle_lgssm(x[0], prior, cfg), joint[0], atol=1e-12)
        np.testing.assert_allclose(bayes_oracle_lgssm(x[:2], prior, cfg), joint[:2], atol=1e-12)

    def test_retries_with_four_times_the_samples(self, caplog):
        prior = LgssmPriorConfig(d=2, m=1)
        x = 3 * make_rng(2).standard_normal((40, 1))
        with caplog.at_level(logging.WARNING, logger="ssmbayes.oracle"):
            bayes_oracle_lgssm(x, prior, OracleConfig(n_samples=100, resample_threshold=0.9))
        assert any("retrying with 400 samples" in r.getMessage() for r in caplog.records)

    def test_converges_to_known_parameters(self):
        # with a long context the posterior concentrates and the oracle approaches the true filter
        prior = LgssmPriorConfig(d=1, m=1)
        task = sample_lgssm_task(prior, make_rng(4))
        x = simulate(task, 400, make_rng(5)).x_seq
        pred = bayes_oracle_lgssm(x, prior, OracleConfig(n_samples=4000, seed=1))
        S = float(steady_state(task)[2][0, 0])
        assert abs(pred[0] - kalman_oracle(task, x)[0]) < 0.2 * math.sqrt(S)

    def test_ess_formula(self):
        assert ess(np.zeros(10)) == pytest.approx(10)
        assert ess(np.array([0.0, -np.inf, -np.inf])) == pytest.approx(1)
        w = np.array([1.0, 2.0, 3.0])
        assert ess(np.log(w)) == pytest.approx(36 / 14)

    def test_empty_context(self):
        with pytest.raises(ValueError):
            bayes_oracle_lgssm(np.zeros((0, 1)), LgssmPriorConfig(d=1, m=1))


class TestCorrelatedNoise:
    def test_known_rho_is_augmented_filter(self):
        x = make_rng(0).standard_normal(30)
        p = augment_ar1(0.9, 1.0, 0.95)
        ref = batch_filter(p.A, p.C, p.Q, p.R, x[None, :, None])["next"][0, 0]
        assert bayes_oracle_corr(x, 0.95) == pytest.approx(ref, abs=1e-12)

    def test_corr_filter_likelihood(self):
        x = make_rng(1).standard_normal((2, 10))
        nxt, ll = corr_filter(x, 0.9)
        for i in range(2):
            assert ll[i] == pytest.approx(log_likelihood(augment_ar1(0.9, 1.0, 0.9), x[i, :, None]), abs=1e-8)
        np.testing.assert_allclose(nxt, bayes_oracle_corr(x, 0.9))

    def test_narrow_marginal_equals_known_rho(self):
        x, _, _ = simulate_corr_noise(0.9, 1.0, 0.95, 50, make_rng(2))
        cfg = CorrNoiseConfig(rho_lo=0.95 - 1e-9, rho_hi=0.95 + 1e-9)
        assert bayes_oracle_corr_marginal(x[0], cfg) == pytest.approx(bayes_oracle_corr(x[0], 0.95), abs=1e-6)

    def test_marginal_lies_between_extremes(self):
        x, _, _ = simulate_corr_noise(0.9, 1.0, 0.95, 40, make_rng(3))
        lo, hi = bayes_oracle_corr(x[0], 0.9), bayes_oracle_corr(x[0], 0.99)
        mid = bayes_oracle_corr_marginal(x[0], CorrNoiseConfig())
        grid = [bayes_oracle_corr(x[0], r) for r in np.linspace(0.9, 0.99, 50)]
        assert min(grid) - 1e-9 <= mid <= max(grid) + 1e-9
        assert np.isfinite(lo) and np.isfinite(hi)


class TestForwardAlgorithm:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_enumeration(self, seed):
        rng = make_rng(seed, 40)
        S, V, T = 2 + seed % 2, 3, 1 + seed
        hp = random_hmm(rng, S, V)
        chars = rng.integers(0, V, size=T)
        msg = ForwardMessage.initial(hp)
        for c in chars:
            msg = hmm_forward_step(hp, msg, int(c))
        post, ll = enumerate_paths(hp, chars)
        assert np.max(np.abs(msg.probs - post)) < 1e-10
        assert abs(msg.log_norm - ll) < 1e-10

    def test_predictive_matches_enumeration(self):
        rng = make_rng(9)
        hp = random_hmm(rng, 3, 4)
        chars = [1, 0, 3]
        msg = ForwardMessage.initial(hp)
        for c in chars:
            msg = hmm_forward_step(hp, msg, c)
        dist, _ = hmm_predict_next(hp, msg)
        _, ll = enumerate_paths(hp, chars)
        for v in range(4):
            _, ll_v = enumerate_paths(hp, chars + [v])
            assert dist[v] == pytest.approx(math.exp(ll_v - ll), abs=1e-12)

    def test_tie_breaks_to_lowest_index(self):
        hp = HmmParams(np.eye(2), np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]]), np.array([0.5, 0.5]))
        _, arg = hmm_predict_next(hp, ForwardMessage.initial(hp))
        assert arg == 0

    def test_impossible_character(self):
        hp = HmmParams(np.eye(2), np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([0.5, 0.5]))
        with pytest.raises(OracleError):
            hmm_forward_step(hp, ForwardMessage.initial(hp), 1)
        with pytest.raises(IndexError):
            hmm_forward_step(hp, ForwardMessage.initial(hp), 5)

    def test_batch_agrees_with_stepwise(self):
        rng = make_rng(11)
        hps = [random_hmm(rng, 3, 5) for _ in range(4)]
        chars = rng.integers(0, 5, size=(4, 7))
        dists, ll = hmm_filter_batch(np.stack([h.trans for h in hps]), np.stack([h.emit for h in hps]),
                                     np.stack([h.init for h in hps]), chars)
        for i, hp in enumerate(hps):
            msg = ForwardMessage.initial(hp)
            for t in range(7):
                msg = hmm_forward_step(hp, msg, int(chars[i, t]))
                np.testing.assert_allclose(dists[i, t], hmm_predict_next(hp, msg)[0], atol=1e-12)
            assert ll[i] == pytest.approx(msg.log_norm, abs=1e-10)
