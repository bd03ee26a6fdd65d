import dataclasses
import math

import numpy as np
import pytest

from helpers import DELTA, monte_carlo_metrics
from sourcedr.data import TabularFunction
from sourcedr.dgp import (DiscreteDGP, ProximalConfig, discrete_ground_truth, proximal_model,
                          spectral_discrete_dgp)
from sourcedr.estimator import EstimatorConfig, NonConvergenceError
from sourcedr.inference import (InferenceConfig, InferenceError, cross_fit_infer, dr_scores, fold_indices,
                                nuisance_error_report, theta_plugin)
from sourcedr.rkhs import MomentFunctional

M = MomentFunctional("outcome_product")
PLAIN = EstimatorConfig(schedule="auto", beta_assumed=1.0)


def random_dgp(seed, k=3):
    rng = np.random.default_rng(seed)
    s = np.linspace(0, 1, k)
    cond = rng.uniform(0.1, 1.0, (k, k))
    cond /= cond.sum(axis=0)
    omega = TabularFunction(s, rng.uniform(-1, 1, k))
    return DiscreteDGP(s, s, rng.dirichlet(np.ones(k) * 2), cond, rng.uniform(-0.4, 0.4, k),
                       MomentFunctional("weighted_average", {"weights": omega}), 0.2,
                       rng.uniform(-0.1, 0.1, (k, k)))


def well_posed():
    return spectral_discrete_dgp([1, .9, .8, .7, .6, .5], 1.0, [0, .15, .15, .15, .15, .15], 1.0,
                                 [.5, .5, .4, .3, .3, .3], noise=0.2, confounding=0.3)


def test_plugin_at_truth_is_theta0():
    dgp = random_dgp(1)
    gt = discrete_ground_truth(dgp)
    pop = dgp.population()
    assert abs(theta_plugin(gt.h0_eval, gt.q0_eval, pop, M, dgp.functional) - gt.theta0) <= 1e-12


def test_double_robustness_with_exact_q0():
    dgp = random_dgp(2)
    gt = discrete_ground_truth(dgp)
    pop = dgp.population()
    rng = np.random.default_rng(0)
    for _ in range(10):
        h = TabularFunction(dgp.x_support, rng.standard_normal(3))
        q = TabularFunction(dgp.z_support, rng.standard_normal(3))
        assert abs(theta_plugin(h, gt.q0_eval, pop, M, dgp.functional) - gt.theta0) <= 1e-12
        assert abs(theta_plugin(gt.h0_eval, q, pop, M, dgp.functional) - gt.theta0) <= 1e-12


@pytest.mark.parametrize("seed", [7, 8, 9, 10, 11])
def test_mixed_bias_identity_brute_force(seed):
    dgp = random_dgp(seed)
    gt = discrete_ground_truth(dgp)
    pop = dgp.population()
    p = dgp.p_xz
    h0, q0 = gt.h0_eval(dgp.x_support), gt.q0_eval(dgp.z_support)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        hv, qv = rng.standard_normal(3), rng.standard_normal(3)
        h, q = TabularFunction(dgp.x_support, hv), TabularFunction(dgp.z_support, qv)
        brute = sum(p[i, j] * (q0[j] - qv[j]) * (hv[i] - h0[i]) for i in range(3) for j in range(3))
        assert abs(theta_plugin(h, q, pop, M, dgp.functional) - gt.theta0 - brute) <= 1e-12


def test_theta_invariant_across_primal_solutions():
    dgp = spectral_discrete_dgp([1, .8, .6, .4, .2, 0.0], 1.0, [0, .15, .15, .15, .15, 0], 1.0,
                                [.5, .6, .5, .4, .3, 0], noise=0.1, confounding=0.3)
    gt = discrete_ground_truth(dgp)
    pop = dgp.population()
    h0 = gt.h0_eval(dgp.x_support)
    null = gt.right_basis[:, -1]
    h2 = TabularFunction(dgp.x_support, h0 + 0.4 * null)
    assert np.allclose(gt.metric_eval.apply_T(h2), gt.metric_eval.apply_T(h0), atol=1e-12)
    a = theta_plugin(gt.h0_eval, gt.q0_eval, pop, M, dgp.functional)
    b = theta_plugin(h2, gt.q0_eval, pop, M, dgp.functional)
    assert abs(a - b) <= 1e-12 and abs(a - gt.theta0) <= 1e-12


def test_fold_indices_partition():
    parts = fold_indices(103, 5, 0)
    allidx = np.sort(np.concatenate(parts))
    assert np.array_equal(allidx, np.arange(103))
    sizes = [p.size for p in parts]
    assert max(sizes) - min(sizes) <= 1
    assert all(np.array_equal(a, b) for a, b in zip(parts, fold_indices(103, 5, 0)))


def test_cross_fit_preconditions():
    dgp = well_posed()
    data = dgp.sample(100, 0)
    with pytest.raises(ValueError, match="separate sample"):
        cross_fit_infer(data, M, dgp.functional, InferenceConfig(PLAIN), folds=1)
    with pytest.raises(ValueError, match="10 samples"):
        cross_fit_infer(dgp.sample(15, 0), M, dgp.functional, InferenceConfig(PLAIN))


def test_cross_fit_single_seed_sanity_and_ci_shape():
    dgp = well_posed()
    gt = discrete_ground_truth(dgp)
    data = dgp.sample(2000, 11)
    rep = cross_fit_infer(data, M, dgp.functional, InferenceConfig(PLAIN, seed=11), truth=gt)
    assert abs(rep.theta_hat - gt.theta0) <= 4 * rep.sigma_hat / math.sqrt(rep.n)
    assert rep.ci_low <= rep.theta_hat <= rep.ci_high
    assert rep.ci_high - rep.ci_low == pytest.approx(2 * 1.96 * rep.sigma_hat / math.sqrt(rep.n), rel=1e-12)
    assert len(rep.per_fold) == 2 and rep.folds == 2
    pooled = sum(f["n_test"] * f["theta"] for f in rep.per_fold) / rep.n
    assert pooled == pytest.approx(rep.theta_hat, abs=1e-12)
    assert set(rep.nuisance_errors) == {"h_strong", "h_weak", "q_strong", "q_weak"}
    assert rep.nuisance_errors["h_weak"] <= rep.nuisance_errors["h_strong"]
    assert rep.covered in (True, False)
    doc = rep.to_dict()
    assert doc["schema_version"] == "1"
    halved = cross_fit_infer(data, M, dgp.functional, InferenceConfig(PLAIN, seed=11, ci_scale=0.5))
    assert halved.theta_hat == rep.theta_hat
    assert halved.ci_high - halved.ci_low == pytest.approx((rep.ci_high - rep.ci_low) / 2, rel=1e-12)


def test_degenerate_functional():
    dgp = dataclasses.replace(well_posed(), functional=MomentFunctional("weighted_average", {"weights": 0.0}))
    gt = discrete_ground_truth(dgp)
    assert gt.theta0 == 0.0
    assert np.allclose(gt.q0_eval(dgp.z_support), 0.0)
    covered = 0
    for seed in range(100):
        data = dgp.sample(300, seed)
        rep = cross_fit_infer(data, M, dgp.functional, InferenceConfig(PLAIN, seed=seed))
        scores_zero = rep.theta_hat == 0.0
        covered += rep.ci_low <= 0.0 <= rep.ci_high
        assert scores_zero
    assert covered >= 90


def test_fold_failure_is_fatal():
    dgp = well_posed()
    data = dgp.sample(200, 0)
    cfg = InferenceConfig(EstimatorConfig(lam=0.1, max_alternations=1))
    with pytest.raises(InferenceError, match="fold 0") as info:
        cross_fit_infer(data, M, dgp.functional, cfg)
    assert isinstance(info.value.__cause__, NonConvergenceError)


def test_dr_scores_match_definition():
    dgp = random_dgp(3)
    data = dgp.sample(50, 1)
    rng = np.random.default_rng(1)
    h = TabularFunction(dgp.x_support, rng.standard_normal(3))
    q = TabularFunction(dgp.z_support, rng.standard_normal(3))
    omega = dgp.functional.params["weights"]
    expected = omega(data.x) * h(data.x) + data.extra["y"] * q(data.z) - q(data.z) * h(data.x)
    assert np.allclose(dr_scores(h, q, data, M, dgp.functional), expected, rtol=0, atol=1e-15)


# --- nuisance errors ------------------------------------------------------------

def test_nuisance_errors_at_truth_are_zero():
    gt = discrete_ground_truth(well_posed())
    assert nuisance_error_report(gt.h0_eval, gt, "primal") == (0.0, 0.0)
    assert nuisance_error_report(gt.q0_eval, gt, "dual") == (0.0, 0.0)
    with pytest.raises(ValueError):
        nuisance_error_report(gt.h0_eval, gt, "both")


def test_nuisance_errors_monte_carlo_and_contraction():
    from sourcedr.estimator import fit, primal_problem
    dgp = well_posed()
    gt = discrete_ground_truth(dgp)
    res = fit(primal_problem(dgp.sample(1000, 4), hyp_kernel=DELTA, adv_kernel=DELTA), EstimatorConfig(lam=0.05))
    strong, weak = nuisance_error_report(res, gt, "primal")
    assert weak <= strong
    g = res.h_hat(dgp.x_support) - gt.h0_eval(dgp.x_support)
    (s_mc, s_se), (w_mc, w_se) = monte_carlo_metrics(dgp, g, 10 ** 6, np.random.default_rng(5))
    assert abs(strong - s_mc) <= 3 * s_se
    assert abs(weak - w_mc) <= 3 * w_se


# --- proximal pipeline ----------------------------------------------------------

def test_proximal_cross_fit_runs():
    dgp = proximal_model(ProximalConfig())
    gt = discrete_ground_truth(dgp)
    data = dgp.sample(3000, 1)
    rep = cross_fit_infer(data, M, dgp.functional, InferenceConfig(PLAIN, seed=1), truth=gt)
    assert math.isfinite(rep.theta_hat) and rep.sigma_hat > 0
    assert abs(rep.theta_hat - gt.theta0) <= 5 * rep.sigma_hat / math.sqrt(rep.n)
