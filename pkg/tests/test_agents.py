import math
from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone

from conftest import chain_spec
from dp_lsvi import agents as ag
from dp_lsvi import dp_mechanisms as dpm
from dp_lsvi.linear_mdp import LinearMdpSpec, SpecValidationError, make_tabular_instance


def test_weights_hand_example():
    w = ag.compute_weights(np.array([[3.0]]), [1.0], [2.0], [3.0])
    assert w.w_hat[0] == pytest.approx(1 / 3, abs=1e-15)
    assert w.w_check[0] == pytest.approx(2 / 3, abs=1e-15)
    assert w.w_bar[0] == pytest.approx(1.0, abs=1e-15)


def test_weights_match_dense_solve():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6))
    Lambda = A @ A.T + 0.5 * np.eye(6)
    b = rng.normal(size=(3, 6))
    noise = tuple(rng.normal(size=(3, 6)))
    w = ag.compute_weights(Lambda, *b, noise=noise)
    inv = np.linalg.inv(Lambda)
    for got, rhs in zip((w.w_hat, w.w_check, w.w_bar), b + np.array(noise)):
        np.testing.assert_allclose(got, inv @ rhs, rtol=1e-10, atol=1e-12)


def test_weights_reject_non_pd():
    with pytest.raises(ag.StateCorruptionError, match="smallest eigenvalue"):
        ag.compute_weights(np.diag([1.0, -1.0]), [0, 0], [0, 0], [0, 0])


def test_inverse_norm_matches_dense_inverse():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 5))
    Lambda = A @ A.T + np.eye(5)
    phi = rng.normal(size=5)
    want = math.sqrt(phi @ np.linalg.inv(Lambda) @ phi)
    assert ag.inverse_norm(phi, Lambda) == pytest.approx(want, rel=1e-12)


def test_variance_estimate_clips():
    assert ag.estimate_variance(np.array([1.0]), np.array([3.0]), np.array([1.0]), 2) == 2.0
    # second moment clipped to H^2 = 4, mean clipped to H = 2
    assert ag.estimate_variance(np.array([5.0]), np.array([9.0]), np.array([1.0]), 2) == 0.0
    assert ag.estimate_variance(np.array([-1.0]), np.array([-1.0]), np.array([1.0]), 2) == 0.0


def test_E_hand_example():
    one = np.array([1.0])
    assert ag.compute_E(1.0, 0.5, one, np.array([[1.0]]), 2) == pytest.approx(3.0)
    # both pieces saturate at H^2
    assert ag.compute_E(100.0, 100.0, one, np.array([[1.0]]), 2) == 8.0
    assert ag.compute_E(1.0, 1.0, np.zeros(1), np.array([[1.0]]), 2) == 0.0


def test_D_hand_examples():
    one, I = np.array([1.0]), np.array([[1.0]])
    assert ag.compute_D(one, np.zeros(1), 0.0 + 1e-300, one, I, 1, 1) == 1.0
    # w_check above w_hat makes the inner term negative; it is clamped at 0
    assert ag.compute_D(np.zeros(1), 5 * one, 0.0, one, I, 1, 1) == 0.0
    small = ag.compute_D(0.01 * one, np.zeros(1), 0.0, one, I, 1, 1)
    assert small == pytest.approx(0.04)
    assert ag.compute_D(0.01 * one, np.zeros(1), 0.0, one, I, 1, 1, scale=0.5) == pytest.approx(0.02)


def test_sigma_floor_and_radicand_clamp():
    one, I = np.array([1.0]), np.array([[1.0]])
    sigma, bar = ag.sigma_and_bar(-100.0, 0.0, 0.0, 2, 1, one, I, scale=1e-3)
    assert sigma == 0.0 and bar == 2.0
    sigma, bar = ag.sigma_and_bar(12.0, 1.0, 1.0, 2, 1, one, I, scale=1e-3)
    assert sigma == 4.0 and bar == 4.0
    _, bar = ag.sigma_and_bar(0.0, 0.0, 0.0, 1, 2, one, I, scale=1.0)
    assert bar == 16.0  # 2 d^3 H^2 sqrt(n) with n = 1


def test_switch_condition_examples():
    I1 = np.array([[[1.0]]])
    assert ag.switch_condition(2 * I1, I1)
    assert not ag.switch_condition(1.9 * I1, I1)
    two_stage_now = np.stack([np.eye(2), np.diag([2.0, 1.0])])
    assert ag.switch_condition(two_stage_now, np.stack([np.eye(2)] * 2))
    assert not ag.switch_condition(np.stack([np.eye(2)] * 2), np.stack([np.eye(2)] * 2))


def test_gram_update():
    L = np.eye(2)
    np.testing.assert_array_equal(ag.gram_update(L, 3.0, np.zeros(2)), L)
    np.testing.assert_allclose(ag.gram_update(L, 2.0, np.array([2.0, 0.0])), np.diag([2.0, 1.0]))
    K1 = np.array([[0.1, 0.2], [0.2, -0.1]])
    np.testing.assert_allclose(ag.gram_update(L, 1.0, np.array([1.0, 1.0]), K1),
                               L + np.ones((2, 2)) + K1)
    with pytest.raises(ag.UtilityEventFailure):
        ag.gram_update(L, 1.0, np.zeros(2), -2 * np.eye(2))


def _radii(b):
    return ag.Radii(b, b, b, b)


def test_update_q_tables_hand_example():
    feats = np.eye(2).reshape(1, 2, 2)
    Lambda = np.eye(2)
    w = ag.WeightTriple(np.array([0.5, 1.0]), np.array([0.5, 1.0]), np.zeros(2))
    q_hat = np.full((1, 2), 3.0)
    q_check = np.zeros((1, 2))
    rewards = np.array([[0.2, 0.3]])
    new_hat, new_check = ag.update_q_tables(q_hat, q_check, w, _radii(0.1), rewards, feats, Lambda, 3)
    np.testing.assert_allclose(new_hat, [[0.8, 1.4]])
    np.testing.assert_allclose(new_check, [[0.6, 1.2]])
    # a later, larger estimate cannot raise q_hat or lower q_check
    w2 = ag.WeightTriple(np.array([2.0, 2.0]), np.array([-5.0, -5.0]), np.zeros(2))
    again_hat, again_check = ag.update_q_tables(new_hat, new_check, w2, _radii(0.1), rewards, feats,
                                                Lambda, 3)
    np.testing.assert_array_equal(again_hat, new_hat)
    np.testing.assert_array_equal(again_check, new_check)


def test_update_q_tables_clips_to_cap():
    feats = np.eye(2).reshape(1, 2, 2)
    w = ag.WeightTriple(np.array([10.0, -10.0]), np.array([10.0, -10.0]), np.zeros(2))
    hat, check = ag.update_q_tables(np.full((1, 2), 5.0), np.zeros((1, 2)), w, _radii(0.0 + 1e-9),
                                    np.zeros((1, 2)), feats, np.eye(2), 5, cap=2.0)
    np.testing.assert_allclose(hat, [[2.0, 0.0]])
    np.testing.assert_allclose(check, [[2.0, 0.0]])


def test_radii_formula_direct():
    d, H, K, L, lam, delta = 4, 3, 10, 2.0, 0.5, 0.1
    r = ag.compute_confidence_radii(d, H, K, L, lam, delta, multiplier=2.0)
    log_term = abs(math.log(H * K ** 4 * L ** 2 * d / (delta * lam)))
    assert r.beta_hat == pytest.approx(2 * (H * L * math.sqrt(d * lam) + d ** 1.5 * H * log_term))
    assert r.beta_check == r.beta_hat
    assert r.beta_bar == pytest.approx(2 * (H ** 2 * L ** 2 * math.sqrt(d * lam)
                                            + d ** 1.5 * H ** 2 * log_term))
    assert ag.hoeffding_radius(4, 3, 10, 0.1) == pytest.approx(12 * math.sqrt(math.log(240 / 0.1)))


def test_make_config_dp_uses_noise_constants():
    spec = make_tabular_instance(2, 2, 3, 0)
    cfg = ag.make_config("dp", spec, 50, epsilon=1.0, delta_prime=1e-3)
    rho = dpm.dp_to_zcdp(1.0, 1e-3)
    assert cfg.noise.rho == rho
    assert cfg.lambda_tilde == dpm.utility_lambda_tilde(rho, 3, 50, 4, 0.05)
    with pytest.raises(ValueError):
        ag.make_config("dp", spec, 50, epsilon=None)
    with pytest.raises(ValueError):
        ag.make_config("nope", spec, 50)


def test_config_validation():
    with pytest.raises(ValueError):
        ag.AgentConfig("lsvi_ucb_pp", _radii(1.0), 1.0, value_clip="x")
    with pytest.raises(ValueError):
        ag.AgentConfig("dp_lsvi_ucb_pp", _radii(1.0), 1.0)
    cfg = ag.AgentConfig("lsvi_ucb_pp", _radii(1.0), 1.0)
    assert cfg.cap(2, 5) == 3.0 and replace(cfg, value_clip="H").cap(2, 5) == 5.0


@pytest.fixture(scope="module")
def small():
    return make_tabular_instance(2, 2, 3, 4)


def _pp(spec, K):
    return ag.make_config("pp", spec, K, radius_multiplier=1e-3, variance_scale=1e-3, lambda_tilde=0.1)


def test_zero_episodes(small):
    res = ag.run_training(small, _pp(small, 1), 0, 3)
    assert len(res.instant_regret) == 0 and res.switch_count == 0 and not res.aborted


def test_run_is_deterministic(small):
    a = ag.run_training(small, _pp(small, 60), 60, 11)
    b = ag.run_training(small, _pp(small, 60), 60, 11)
    np.testing.assert_array_equal(a.instant_regret, b.instant_regret)
    np.testing.assert_array_equal(a.policies, b.policies)
    c = ag.run_training(small, _pp(small, 60), 60, 12)
    assert a.instant_regret.shape == c.instant_regret.shape


def test_first_switch_happens_and_tables_are_monotone(small):
    res = ag.run_training(small, _pp(small, 200), 200, 0)
    assert res.switch_count >= 1
    assert res.total_violations == 0
    for (_, h1, c1), (_, h2, c2) in zip(res.q_snapshots, res.q_snapshots[1:]):
        assert (h2 <= h1).all() and (c2 >= c1).all()
    assert np.nanmin(res.variance["sigma_bar"]) >= small.H


def test_regret_is_exact_and_nonnegative(small):
    res = ag.run_training(small, _pp(small, 50), 50, 1)
    assert (res.instant_regret >= -1e-12).all()
    np.testing.assert_array_equal(np.diff(res.switch_count_so_far) >= 0, True)


def test_single_action_chain_has_zero_regret():
    spec = chain_spec(3, 4)
    res = ag.run_training(spec, _pp(spec, 20), 20, 0)
    assert (res.instant_regret == 0).all()
    base = ag.run_lsvi_ucb_baseline(spec, 20, 1.0, 0.1, 0)
    assert (base.instant_regret == 0).all()


def test_zero_noise_dp_equals_nonprivate_bitwise(small):
    K = 80
    pp = _pp(small, K)
    dp = ag.make_config("dp", small, K, epsilon=1.0, noise_scale=0.0, lambda_tilde=pp.lambda_tilde,
                        radii=pp.radii, variance_scale=pp.variance_scale)
    for seed in range(2):
        a = ag.run_training(small, pp, K, seed)
        b = ag.run_training(small, dp, K, seed)
        np.testing.assert_array_equal(a.instant_regret, b.instant_regret)
        np.testing.assert_array_equal(a.switch_count_so_far, b.switch_count_so_far)
        for key in a.variance:
            np.testing.assert_array_equal(a.variance[key], b.variance[key])


def test_private_run_differs_and_is_reproducible(small):
    cfg = ag.make_config("dp", small, 30, epsilon=1e3, radius_multiplier=1e-3, variance_scale=1e-3)
    a = ag.run_training(small, cfg, 30, 5)
    b = ag.run_training(small, cfg, 30, 5)
    np.testing.assert_array_equal(a.instant_regret, b.instant_regret)
    assert a.epsilon == pytest.approx(1e3, rel=1e-12)


def test_accumulated_gram_noise_aborts_cleanly(small):
    cfg = ag.make_config("dp", small, 400, epsilon=0.05, gram_noise="accumulate")
    res = ag.run_training(small, cfg, 400, 0)
    assert res.aborted and "utility event failure" in res.abort_reason
    assert len(res.instant_regret) == res.K < 400
    assert res.policies.shape[0] == res.K


def test_baseline_replans_every_episode(small):
    res = ag.run_lsvi_ucb_baseline(small, 25, 1.0, 0.05, 2)
    assert res.switch_count == 25
    np.testing.assert_array_equal(res.switch_count_so_far, np.arange(1, 26))


def test_baseline_via_config_matches_direct_call(small):
    cfg = ag.make_config("ucb", small, 40, radius_multiplier=0.01)
    a = ag.run_training(small, cfg, 40, 3)
    b = ag.run_lsvi_ucb_baseline(small, 40, 1.0, cfg.radii.beta_hat, 3)
    np.testing.assert_array_equal(a.instant_regret, b.instant_regret)


def test_invalid_spec_rejected():
    spec = make_tabular_instance(2, 2, 2, 0)
    bad = LinearMdpSpec(spec.features, spec.mu * 2, spec.theta, 0)
    with pytest.raises(SpecValidationError):
        ag.run_training(bad, _pp(spec, 5), 5, 0)


def test_estimator_api(small):
    est = ag.LSVIUCBPlusPlus(n_episodes=40, lambda_tilde=0.1, radius_multiplier=1e-3,
                             variance_scale=1e-3, random_state=2)
    assert est.get_params()["n_episodes"] == 40
    assert clone(est).get_params() == est.get_params()
    est.fit(small)
    X = np.array([[0, 0], [2, 1]])
    acts = est.predict(X)
    assert acts.shape == (2,)
    np.testing.assert_array_equal(acts, est.result_.policies[-1][X[:, 0], X[:, 1]])
    assert est.score(small) == pytest.approx(-est.result_.instant_regret.mean())
    with pytest.raises(ValueError):
        est.predict(np.zeros(3))


def test_unfitted_estimator_raises():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        ag.LSVIUCB().predict([[0, 0]])


def test_dp_estimator_reports_epsilon(small):
    est = ag.DPLSVIUCBPlusPlus(n_episodes=10, epsilon=2.0, random_state=0).fit(small)
    assert est.result_.epsilon == pytest.approx(2.0, rel=1e-12)
    assert est.config_.private
