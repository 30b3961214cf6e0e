import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from heckmi.draw import (
    DrawnClusterParams,
    binary_probability,
    continuous_mean,
    draw_cluster,
    draw_marginal,
    impute_binary,
    impute_continuous,
    shrink_block,
)
from heckmi.heckman import ClusterFit, HeckmanParams, ParamLayout
from heckmi.meta import MarginalModel, MetaFit
from heckmi.numerics import RngStream, bvn_cdf, std_normal_cdf, vech

DATA = Path(__file__).parent / "data"
ORACLES = json.loads((DATA / "rejection_oracles.json").read_text())


def _meta(theta, psi, s_theta, s_psi=None):
    theta = np.atleast_1d(np.asarray(theta, float))
    d = theta.size
    psi = np.atleast_2d(psi)
    s_psi = np.zeros((d * (d + 1) // 2,) * 2) if s_psi is None else np.atleast_2d(s_psi)
    return MetaFit(theta, psi, np.atleast_2d(s_theta), s_psi)


def _model(s_scale=0.0):
    blocks = {
        "beta_o": _meta([0.3, 1.0, 1.0], np.diag([0.4, 0.4, 0.4]), s_scale * np.eye(3), s_scale * np.eye(6)),
        "beta_s": _meta([-0.8, 1.3, -0.7, 1.2], np.diag([0.4, 0.4, 0.4, 0.2]), s_scale * np.eye(4),
                        s_scale * np.eye(10)),
        "log_sigma": _meta([0.1], [[0.05]], [[s_scale]], [[s_scale]]),
        "atanh_rho": _meta([0.5], [[0.1]], [[s_scale]], [[s_scale]]),
    }
    return MarginalModel(blocks, [1, 2], "continuous", ParamLayout(3, 4, "continuous"))


def test_degenerate_marginal_draw_is_exact():
    model = _model(0.0)
    d = draw_marginal(model, RngStream(1))
    for name, fit in model.blocks.items():
        np.testing.assert_array_equal(d.theta[name], fit.theta_hat)
        np.testing.assert_allclose(d.psi[name], fit.psi_hat, atol=1e-15)
    assert d.theta_star.shape == (3 + 4 + 1 + 1,)


def test_marginal_mean_draws():
    model = _model(0.01)
    n = 20_000
    draws = np.array([draw_marginal(model, RngStream(2).child(i)).theta_star for i in range(n)])
    target = np.concatenate([model.blocks[b].theta_hat for b in ("beta_o", "beta_s", "log_sigma", "atanh_rho")])
    se = math.sqrt(0.01 / n)
    assert np.all(np.abs(draws.mean(axis=0) - target) <= 3.5 * se)


def test_indefinite_psi_draw_is_projected():
    fit = _meta([0.0, 0.0], np.diag([0.01, 0.01]), np.zeros((2, 2)), np.eye(3))
    model = MarginalModel({"beta_o": fit}, [1, 2], "continuous")
    projected = 0
    for i in range(200):
        d = draw_marginal(model, RngStream(3).child(i))
        assert np.linalg.eigvalsh(d.psi["beta_o"]).min() >= 0
        projected += d.projection["beta_o"] > 0
    assert projected > 50


def test_scalar_psi_truncated_at_zero():
    fit = _meta([0.0], [[0.01]], [[0.0]], [[1.0]])
    model = MarginalModel({"beta_o": fit}, [1, 2], "continuous")
    vals = [draw_marginal(model, RngStream(4).child(i)).psi["beta_o"][0, 0] for i in range(200)]
    assert min(vals) == 0.0 and max(vals) > 0


def test_shrinkage_limits():
    theta_hat = np.array([1.0, -2.0, 0.5])
    theta_star = np.array([0.0, 0.0, 0.0])
    psi = np.diag([0.4, 0.3, 0.2])
    mean, cov = shrink_block(theta_hat, 1e-12 * np.eye(3), theta_star, psi)
    np.testing.assert_allclose(mean, theta_hat, atol=1e-6)
    mean, cov = shrink_block(theta_hat, 0.1 * np.eye(3), theta_star, np.zeros((3, 3)))
    np.testing.assert_allclose(mean, theta_star, atol=1e-12)
    np.testing.assert_allclose(cov, 0.0, atol=1e-12)


def test_shrinkage_matches_precision_formula():
    g = np.random.default_rng(5)
    A, B = g.normal(size=(3, 3)), g.normal(size=(3, 3))
    psi, S = A @ A.T + 0.1 * np.eye(3), B @ B.T + 0.1 * np.eye(3)
    th, ts = g.normal(size=3), g.normal(size=3)
    mean, cov = shrink_block(th, S, ts, psi, ridge=0.0)
    P = np.linalg.inv(psi) + np.linalg.inv(S)
    ref_cov = np.linalg.inv(P)
    ref_mean = ref_cov @ (np.linalg.solve(psi, ts) + np.linalg.solve(S, th))
    np.testing.assert_allclose(mean, ref_mean, atol=1e-10)
    np.testing.assert_allclose(cov, ref_cov, atol=1e-10)


def test_fallback_cluster_draws_have_marginal_moments():
    model = MarginalModel({"beta_o": _model(0.0).blocks["beta_o"]}, [1, 2], "continuous")
    marginal = draw_marginal(model, RngStream(6))
    n = 10**5
    root = RngStream(7)
    draws = np.array([draw_cluster(None, marginal, root.child(i)).beta_o for i in range(n)])
    theta = marginal.theta["beta_o"]
    psi = marginal.psi["beta_o"]
    assert np.all(np.abs(draws.mean(axis=0) - theta) <= 0.02 * np.sqrt(np.diag(psi)) * 3)
    emp = np.cov(draws, rowvar=False)
    assert np.all(np.abs(np.diag(emp) / np.diag(psi) - 1) <= 0.02)
    assert np.max(np.abs(emp - psi)) <= 0.02 * np.max(np.diag(psi))


def test_cluster_with_fit_uses_posterior():
    layout = ParamLayout(3, 4, "continuous")
    theta = np.concatenate([[2.0, 2.0, 2.0], [0.0, 1.0, -1.0, 1.0], [0.3], [0.2]])
    fit = ClusterFit(HeckmanParams.from_vector(theta, layout), 1e-12 * np.eye(9), True, 1000,
                     "continuous", layout, cluster_id=9)
    marginal = draw_marginal(_model(0.0), RngStream(8))
    p = draw_cluster(fit, marginal, RngStream(9))
    # the 1e-8 ridge leaves a posterior SD near 1e-4
    np.testing.assert_allclose(p.beta_o, [2.0, 2.0, 2.0], atol=1e-3)
    assert p.cluster_id == 9
    assert p.sigma == pytest.approx(math.exp(0.3), abs=1e-3)
    assert p.rho == pytest.approx(math.tanh(0.2), abs=1e-3)


def _params(eta_o, eta_s, rho, sigma=1.0):
    return DrawnClusterParams(0, np.array([eta_o]), np.array([eta_s]), sigma, rho)


ONE = np.ones((1, 1))


def test_continuous_mean_closed_forms():
    assert continuous_mean(ONE, ONE, _params(0.7, 0.3, 0.0))[0] == 0.7
    mu = continuous_mean(ONE, ONE, _params(1.0, 0.0, 0.6, 1.0))[0]
    assert abs(mu - (1.0 - 0.6 * 2 * stats.norm.pdf(0))) < 1e-12
    assert abs((1.0 - mu) - 0.4787) < 1e-4


def test_continuous_draws_match_formula():
    p = _params(0.4, -0.5, 0.7, 1.3)
    x = np.ones((10**6, 1))
    vals = impute_continuous(x, x, p, RngStream(10))
    mu = continuous_mean(ONE, ONE, p)[0]
    assert abs(vals.mean() - mu) <= 3 * 1.3 / 1000
    assert abs(vals.std() - 1.3) < 0.01


@pytest.mark.parametrize("case", range(len(ORACLES)))
def test_continuous_mean_matches_rejection_oracle(case):
    o = ORACLES[case]
    mu = continuous_mean(ONE, ONE, _params(o["eta_o"], o["eta_s"], o["rho"], o["sigma"]))[0]
    assert abs(mu - o["mean"]) <= 3 * o["mean_se"]


@pytest.mark.parametrize("case", range(len(ORACLES)))
def test_binary_probability_matches_rejection_oracle(case):
    o = ORACLES[case]
    p = binary_probability(ONE, ONE, _params(o["eta_o"], o["eta_s"], o["rho"]))[0]
    assert abs(p - o["prob"]) <= 3 * o["prob_se"]


def test_binary_closed_forms():
    assert binary_probability(ONE, ONE, _params(0.4, 1.0, 0.0))[0] == pytest.approx(std_normal_cdf(0.4), abs=1e-15)
    p = binary_probability(ONE, ONE, _params(0.0, 0.0, 0.6))[0]
    assert abs(p - (0.25 - math.asin(0.6) / (2 * math.pi)) / 0.5) < 1e-12
    assert abs(p - 0.29517) < 1e-5


def test_binary_outputs_and_partition():
    g = np.random.default_rng(11)
    for _ in range(200):
        a, b = g.uniform(-4, 4, 2)
        rho = g.uniform(-0.99, 0.99)
        p = binary_probability(ONE, ONE, _params(a, b, rho))[0]
        assert 0 <= p <= 1
        assert bvn_cdf(a, -b, -rho) <= std_normal_cdf(-b) + 1e-9
    x = np.ones((500, 1))
    vals = impute_binary(x, x, _params(0.2, 0.1, -0.4), RngStream(12))
    assert set(np.unique(vals)) <= {0, 1}


def test_binary_selection_certain_falls_back(caplog):
    p = binary_probability(ONE, ONE, _params(0.3, 40.0, 0.5))[0]
    assert p == pytest.approx(std_normal_cdf(0.3))
    assert "selection probability" in caplog.text


def test_draws_reproducible():
    x = np.ones((50, 1))
    a = impute_continuous(x, x, _params(0.1, 0.2, 0.3, 1.1), RngStream(13, (4, 5)))
    b = impute_continuous(x, x, _params(0.1, 0.2, 0.3, 1.1), RngStream(13, (4, 5)))
    np.testing.assert_array_equal(a, b)
