"""Empirical-Bayes estimation of the ridge strength with SOUL: projected
stochastic gradient ascent on the marginal likelihood, driven by an
unadjusted Langevin chain on the weights."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import SoulConfig
from .outcome import gram_max_eigenvalue, mlr_data_gradient, sample_indicators


class NonFiniteState(FloatingPointError):
    pass


class ProjectionSaturated(RuntimeWarning):
    pass


@dataclass
class SoulTrace:
    lambda_path: np.ndarray
    kappa_path: np.ndarray
    final_estimate: float
    w_final: np.ndarray
    sq_norm_path: np.ndarray
    delta_ula: float


def ula_step(w, grad_potential, delta, rng, pin=None, noise=None):
    """One Euler-Maruyama step of overdamped Langevin dynamics.

    ``grad_potential`` is the gradient of the negative log posterior, so the
    drift is ``-delta * grad``. ``pin`` is a boolean mask of entries held at
    zero (the reference-class column).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if noise is None:
        noise = rng.standard_normal(np.shape(w))
    w_new = w - delta * grad_potential(w) + np.sqrt(2.0 * delta) * noise
    if pin is not None:
        w_new = np.where(pin, 0.0, w_new)
    if not np.all(np.isfinite(w_new)):
        raise NonFiniteState("Langevin chain produced a non-finite state")
    return w_new


def pga_step(i, cfg: SoulConfig, c0):
    """Step size C0 * i^-p of the projected gradient ascent."""
    if i < 1:
        raise ValueError("iteration index starts at 1")
    return c0 * float(i) ** (-cfg.p_exponent)


def soul(grad_data, w0, n_params, lipschitz_data, cfg: SoulConfig, rng, pin=None):
    """Run SOUL for a Gaussian ridge prior N(0, I / lambda) on ``w``.

    Parameters
    ----------
    grad_data : callable
        Gradient of the negative log likelihood in ``w``.
    n_params : int
        Dimension entering the prior normaliser.
    lipschitz_data : float
        Lipschitz constant of ``grad_data``; the Langevin step is
        0.95 / (lipschitz_data + lambda).
    """
    cfg.check()
    low, high = cfg.theta_bounds
    lam = float(cfg.lambda_init)
    c0 = 1.0 / (lam * n_params) if cfg.c0 == "auto" else float(cfg.c0)
    m = cfg.inner_samples

    def step_for(lam_):
        if cfg.delta_ula == "auto":
            return 0.95 / (lipschitz_data + lam_)
        return float(cfg.delta_ula)

    delta = step_for(lam)
    assert 0 < delta <= 2.0 / (lipschitz_data + lam)

    w = np.array(w0, dtype=float)
    if pin is not None:
        w = np.where(pin, 0.0, w)
    lambdas = np.empty(cfg.n_iters)
    kappas = np.empty(cfg.n_iters)
    sq_norms = np.empty(cfg.n_iters)
    kappa = np.log(lam)
    for i in range(1, cfg.n_iters + 1):
        if delta * (lipschitz_data + lam) > 2.0:
            delta = step_for(lam)

        def grad_potential(v, lam_=lam):
            return grad_data(v) + lam_ * v

        norms = np.empty(m)
        for j in range(m):
            w = ula_step(w, grad_potential, delta, rng, pin)
            norms[j] = np.sum(w * w)
        step = pga_step(i, cfg, c0)
        if cfg.log_scale:
            kappa = kappa + np.exp(kappa) * step / (2 * m) * np.sum(n_params * np.exp(-kappa) - norms)
            kappa = float(np.clip(kappa, np.log(low), np.log(high)))
            lam = float(np.exp(kappa))
            lam = min(max(lam, low), high)
        else:
            lam = lam + step / (2 * m) * np.sum(n_params / lam - norms)
            lam = float(np.clip(lam, low, high))
            kappa = np.log(lam)
        if not np.isfinite(lam):
            raise NonFiniteState("ridge iterate became non-finite")
        lambdas[i - 1] = lam
        kappas[i - 1] = kappa
        sq_norms[i - 1] = norms.mean()

    kept = slice(cfg.burn_in, cfg.n_iters)
    if cfg.log_scale:
        estimate = float(np.exp(kappas[kept].mean()))
    else:
        estimate = float(lambdas[kept].mean())
    on_bound = np.isclose(lambdas[kept], low, rtol=1e-12) | np.isclose(lambdas[kept], high, rtol=1e-12)
    if on_bound.mean() > 0.5:
        warnings.warn("more than half of the kept SOUL iterates sit on a bound", ProjectionSaturated, stacklevel=2)
    return SoulTrace(lambdas, kappas, estimate, w, sq_norms, delta)


def soul_estimate_lambda(y, gamma_tilde, w0, cfg: SoulConfig, rng, J=30, samples=None):
    """SOUL estimate of the MLR ridge strength with one frozen set of indicator draws.

    Only the free entries of W count towards the ridge normaliser; the
    reference column is pinned at zero and carries no prior mass.
    """
    if samples is None:
        samples = sample_indicators(gamma_tilde, J, rng)
    C = y.n_classes
    D = samples.shape[2]
    pin = np.zeros((D, C), dtype=bool)
    pin[:, y.reference_class] = True
    lipschitz_data = 0.5 * gram_max_eigenvalue(samples)
    return soul(
        lambda v: mlr_data_gradient(v, y, samples),
        w0,
        D * (C - 1),
        lipschitz_data,
        cfg,
        rng,
        pin=pin,
    )
