from dataclasses import replace

import numpy as np
import pytest

from ogsslb.model import SoulConfig, ValidationError
from ogsslb.outcome import sample_indicators
from ogsslb.soul import NonFiniteState, ProjectionSaturated, pga_step, soul, soul_estimate_lambda, ula_step

from conftest import random_outcomes

N_TOY = 200


@pytest.fixture(scope="module")
def toy():
    """Conjugate toy: y_i ~ N(w, 1), w ~ N(0, 1/lambda), one scalar parameter."""
    y = np.random.default_rng(0).normal(0.5, 1.0, N_TOY)
    ybar = y.mean()
    # marginal ybar ~ N(0, 1/lambda + 1/N) gives the maximiser in closed form
    lam_star = 1.0 / (ybar**2 - 1.0 / N_TOY)
    return ybar, lam_star


def _toy_estimates(ybar, cfg, n_seeds=20):
    return np.array(
        [
            soul(lambda w: N_TOY * (w - ybar), np.zeros(1), 1, float(N_TOY), cfg, np.random.default_rng([s, 1])).final_estimate
            for s in range(n_seeds)
        ]
    )


def test_toy_closed_form_positive(toy):
    assert toy[1] > 0


def test_soul_recovers_conjugate_maximiser(toy):
    ybar, lam_star = toy
    est = _toy_estimates(ybar, SoulConfig())
    assert abs(est.mean() / lam_star - 1) < 0.10


def test_soul_relative_sd_across_seeds(toy):
    est = _toy_estimates(toy[0], SoulConfig())
    assert est.std(ddof=1) / est.mean() < 0.10


def test_log_and_linear_scale_agree(toy):
    # the automatic step constant shrinks with lambda on the linear scale, so fix it
    ybar, _ = toy
    log = _toy_estimates(ybar, SoulConfig(c0=8.0, log_scale=True), 10).mean()
    lin = _toy_estimates(ybar, SoulConfig(c0=8.0, log_scale=False), 10).mean()
    assert abs(log / lin - 1) < 0.15


def test_soul_trace_shapes_and_bounds(toy):
    cfg = SoulConfig(n_iters=40, burn_in=10)
    tr = soul(lambda w: N_TOY * (w - toy[0]), np.zeros(1), 1, float(N_TOY), cfg, np.random.default_rng(0))
    assert tr.lambda_path.shape == tr.kappa_path.shape == tr.sq_norm_path.shape == (40,)
    assert np.allclose(np.exp(tr.kappa_path), tr.lambda_path)
    assert np.all((tr.lambda_path >= 1e-4) & (tr.lambda_path <= 1e4))
    assert tr.final_estimate == pytest.approx(np.exp(tr.kappa_path[10:].mean()))
    assert 0 < tr.delta_ula <= 2.0 / (N_TOY + tr.lambda_path.max())


def test_soul_deterministic_given_seed(toy):
    run = lambda: soul(lambda w: N_TOY * (w - toy[0]), np.zeros(1), 1, float(N_TOY), SoulConfig(), np.random.default_rng(5))  # noqa: E731
    assert np.array_equal(run().lambda_path, run().lambda_path)


def test_saturated_projection_warns():
    # data far from zero with a tiny normaliser drives lambda to the lower bound
    cfg = SoulConfig(n_iters=60, burn_in=20, theta_bounds=(0.5, 10.0), lambda_init=1.0, c0=5.0)
    with pytest.warns(ProjectionSaturated):
        tr = soul(lambda w: 50.0 * (w - 30.0), np.zeros(1), 1, 50.0, cfg, np.random.default_rng(0))
    assert tr.lambda_path[-1] == pytest.approx(0.5)


def test_invalid_config_rejected():
    with pytest.raises(ValidationError):
        SoulConfig(burn_in=200).check()
    with pytest.raises(ValidationError):
        SoulConfig(p_exponent=0.95).check()
    with pytest.raises(ValidationError):
        SoulConfig(lambda_init=1e6).check()


# --- building blocks ---------------------------------------------------------------


def test_pga_step_schedule():
    cfg = SoulConfig(p_exponent=0.8)
    assert pga_step(1, cfg, 2.0) == 2.0
    assert pga_step(32, cfg, 1.0) == pytest.approx(32 ** -0.8)
    with pytest.raises(ValueError):
        pga_step(0, cfg, 1.0)


def test_ula_step_explicit_noise():
    w = np.array([1.0, -2.0])
    out = ula_step(w, lambda v: 3 * v, 0.1, None, noise=np.array([0.5, 1.0]))
    assert np.allclose(out, w - 0.3 * w + np.sqrt(0.2) * np.array([0.5, 1.0]))


def test_ula_step_pinned_entries_stay_zero(rng):
    w = rng.normal(size=(3, 4))
    pin = np.zeros((3, 4), dtype=bool)
    pin[:, 2] = True
    out = ula_step(w, lambda v: v, 0.2, rng, pin=pin)
    assert np.all(out[:, 2] == 0.0) and np.all(out[:, [0, 1, 3]] != 0.0)


def test_ula_step_rejects_bad_inputs(rng):
    with pytest.raises(ValueError):
        ula_step(np.zeros(2), lambda v: v, 0.0, rng)
    with pytest.raises(NonFiniteState):
        ula_step(np.ones(2), lambda v: np.full(2, np.inf), 0.1, rng)


@pytest.mark.parametrize("delta_a", [0.1, 0.5, 1.0])
def test_ula_stationary_variance(delta_a):
    # Gaussian target with precision a: the discretised chain is AR(1)
    a = 4.0
    delta = delta_a / a
    rng = np.random.default_rng(17)
    w = np.zeros(40000)
    for _ in range(400):
        w = ula_step(w, lambda v: a * v, delta, rng)
    expected = (1.0 / a) / (1.0 - delta * a / 2.0)
    assert abs(w.var() / expected - 1) < 0.05


def test_soul_estimate_lambda_pins_reference_column(rng):
    N, K, C = 30, 3, 3
    y = random_outcomes(rng, N, C, reference_class=1)
    gt = rng.uniform(size=(N, K))
    samples = sample_indicators(gt, 5, rng)
    cfg = replace(SoulConfig(), n_iters=30, burn_in=10)
    tr = soul_estimate_lambda(y, gt, rng.normal(size=(K + 1, C)), cfg, rng, samples=samples)
    assert np.all(tr.w_final[:, 1] == 0.0)
    assert np.isfinite(tr.final_estimate) and tr.final_estimate > 0
