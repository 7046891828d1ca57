"""Outcome side of the guided model: multinomial logistic regression on the
bias-augmented sample indicators, the outcome-guided membership E-step, and
the ridge-MLR fit of the weight matrix."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.special import logsumexp, softmax

from .priors import tau_log_odds


class DegenerateConditioning(RuntimeWarning):
    """No Monte Carlo draw matched the conditioning value."""


def augment(indicators):
    """Prepend the bias column of ones along the last axis."""
    indicators = np.asarray(indicators, dtype=float)
    ones = np.ones(indicators.shape[:-1] + (1,))
    return np.concatenate([ones, indicators], axis=-1)


def mlr_probabilities(w, gamma_aug):
    """Softmax class probabilities; rows (last axis) sum to one."""
    return softmax(np.asarray(gamma_aug) @ w, axis=-1)


def sample_indicators(probs, n_draws, rng):
    """``n_draws`` bias-augmented binary indicator matrices, shape (J, N, K+1)."""
    probs = np.asarray(probs, dtype=float)
    u = rng.random((n_draws,) + probs.shape)
    return augment((u < probs).astype(float))


def estimate_class_likelihood(i, k, value, y, w, probs, M, rng):
    """Monte Carlo estimate of p(y_ic, gamma_ik = value) for the observed class c.

    ``M`` indicator rows are drawn from the unsupervised membership
    probabilities of sample ``i``; the class probabilities of the rows whose
    k-th entry equals ``value`` are summed and divided by ``M``.
    """
    c = int(np.argmax(y.values[i]))
    V = (rng.random((M, probs.shape[1])) < probs[i]).astype(float)
    keep = V[:, k] == value
    if not np.any(keep):
        warnings.warn(
            f"no draw with indicator {k} == {value} for sample {i}", DegenerateConditioning, stacklevel=2
        )
        p_value = probs[i, k] if value == 1 else 1.0 - probs[i, k]
        return p_value / y.n_classes
    q = mlr_probabilities(w, augment(V[keep]))[:, c]
    return q.sum() / M


def class_likelihoods(y, w, probs, M, rng):
    """Conditional class likelihoods p(y_ic | gamma_ik = v) for every (i, k).

    One block of ``M`` draws per sample is shared across all k. The joint
    estimate (sum over matching rows divided by ``M``) is turned into the
    conditional by dividing out the empirical frequency M'/M; cells with
    M' = 0 fall back to the uninformative value 1/C.

    Returns ``(p1, p0)``, each N x K.
    """
    N, K = probs.shape
    C = y.n_classes
    V = (rng.random((N, M, K)) < probs[:, None, :]).astype(float)
    p = mlr_probabilities(w, augment(V))
    q = np.take_along_axis(p, y.labels[:, None, None], axis=2)[..., 0]  # (N, M)
    n1 = V.sum(axis=1)
    n0 = M - n1
    s1 = np.einsum("nm,nmk->nk", q, V)
    s0 = q.sum(axis=1)[:, None] - s1
    with np.errstate(invalid="ignore", divide="ignore"):
        p1 = np.where(n1 > 0, s1 / n1, 1.0 / C)
        p0 = np.where(n0 > 0, s0 / n0, 1.0 / C)
    return p1, p0


def e_step_gamma_tilde_guided(
    y, w, T, theta_tilde, omega0_tilde, omega1_tilde, M, rng, likelihood=None
):
    """Membership expectations combining the outcome odds with the tau prior odds.

    ``likelihood`` replaces the Monte Carlo class likelihoods; it is called
    as ``likelihood(probs)`` and must return ``(p1, p0)``.
    """
    prior_lo = tau_log_odds(T, theta_tilde[None, :], omega0_tilde, omega1_tilde)
    probs = 1.0 / (1.0 + np.exp(-prior_lo))
    if likelihood is None:
        p1, p0 = class_likelihoods(y, w, probs, M, rng)
    else:
        p1, p0 = likelihood(probs)
    tiny = np.finfo(float).tiny
    log_odds = prior_lo + np.log(np.maximum(p1, tiny)) - np.log(np.maximum(p0, tiny))
    return 1.0 / (1.0 + np.exp(-log_odds))


def mc_log_sum_exp(w, gamma_tilde, m, rng):
    """Monte Carlo estimate of E[log sum_l exp(w_l . gamma'_i)] for every sample."""
    samples = sample_indicators(gamma_tilde, m, rng)
    return logsumexp(samples @ w, axis=-1).mean(axis=0)


def _mlr_value_and_probs(w, flat_t, y_t, J):
    """Negative log likelihood (averaged over draws) and class probabilities.

    Works on transposed stacks, ``flat_t`` of shape (K+1, J*N) and ``y_t``
    of shape (C, J*N), so reductions over classes run across contiguous rows.
    """
    logits = w.T @ flat_t
    top = np.maximum.reduce(logits, axis=0)
    e = np.exp(logits - top)
    tot = np.add.reduce(e, axis=0)
    value = (top.sum() + np.log(tot).sum() - np.einsum("cr,cr->", logits, y_t)) / J
    return value, e / tot


class FrozenMLR:
    """Ridge-MLR objective and gradient over one frozen stack of indicator draws."""

    def __init__(self, y, samples, lambda_w):
        J, N, D = samples.shape
        self.J = J
        self.flat_t = np.ascontiguousarray(samples.reshape(J * N, D).T)
        self.y_t = np.ascontiguousarray(np.tile(y.values, (J, 1)).T)
        self.ref = y.reference_class
        self.lambda_w = lambda_w

    def data_value(self, w):
        return _mlr_value_and_probs(w, self.flat_t, self.y_t, self.J)[0]

    def data_grad(self, w):
        _, p = _mlr_value_and_probs(w, self.flat_t, self.y_t, self.J)
        g = self.flat_t @ (p - self.y_t).T / self.J
        g[:, self.ref] = 0.0
        return g

    def value(self, w):
        return self.data_value(w) + 0.5 * self.lambda_w * np.sum(w * w)

    def value_and_grad(self, w):
        v, p = _mlr_value_and_probs(w, self.flat_t, self.y_t, self.J)
        g = self.flat_t @ (p - self.y_t).T / self.J + self.lambda_w * w
        g[:, self.ref] = 0.0
        return v + 0.5 * self.lambda_w * np.sum(w * w), g


def ridge_mlr_objective(w, y, samples, lambda_w):
    """Negative ridge-MLR log posterior averaged over frozen indicator draws."""
    logits = samples @ w
    data = (logsumexp(logits, axis=-1) - np.einsum("jnc,nc->jn", logits, y.values)).sum(axis=1)
    return data.mean() + 0.5 * lambda_w * np.sum(w * w)


def mlr_data_gradient(w, y, samples):
    J, N, D = samples.shape
    resid = mlr_probabilities(w, samples) - y.values[None]
    grad = samples.reshape(J * N, D).T @ resid.reshape(J * N, -1) / J
    grad[:, y.reference_class] = 0.0
    return grad


def grad_ridge_mlr(y, gamma_tilde, w, lambda_w, J, rng, samples=None):
    """Gradient of :func:`ridge_mlr_objective` in ``w``.

    This is the descent direction of the negative log posterior; the
    reference-class column is zero so any step keeps that column pinned.
    """
    if samples is None:
        samples = sample_indicators(gamma_tilde, J, rng)
    grad = mlr_data_gradient(w, y, samples) + lambda_w * w
    grad[:, y.reference_class] = 0.0
    return grad


def gram_max_eigenvalue(gamma_aug):
    gamma_aug = np.asarray(gamma_aug, dtype=float)
    if gamma_aug.ndim == 2:
        gamma_aug = gamma_aug[None]
    J = gamma_aug.shape[0]
    gram = np.einsum("jnk,jnl->kl", gamma_aug, gamma_aug) / J
    return float(np.linalg.eigvalsh(gram)[-1])


def lipschitz_constant(gamma_aug, lambda_w, C):
    """Boehning bound on the gradient Lipschitz constant of the ridge-MLR objective.

    The centering matrix I - 11'/C has top eigenvalue 1 for C >= 2, so the
    Kronecker factor reduces to half the top eigenvalue of the indicator
    Gram matrix. A stack of J indicator matrices uses their mean Gram.
    """
    centering = 1.0 if C >= 2 else 0.0
    return 0.5 * centering * gram_max_eigenvalue(gamma_aug) + lambda_w


def agd_maximize_w(y, gamma_tilde, lambda_w, steps, J, rng, samples=None, return_path=False):
    """Accelerated gradient fit of the MLR weights starting from W = 0.

    One set of ``J`` indicator draws is frozen for the whole call. The
    momentum sequence restarts whenever a step would raise the objective,
    so accepted iterates are monotone.
    """
    if lambda_w <= 0:
        raise ValueError("lambda_w must be positive")
    if samples is None:
        samples = sample_indicators(gamma_tilde, J, rng)
    C = y.n_classes
    step = 0.95 / lipschitz_constant(samples, lambda_w, C)
    obj = FrozenMLR(y, samples, lambda_w)

    w = np.zeros((samples.shape[2], C))
    w_prev = w.copy()
    f = obj.value(w)
    path = [f]
    t = 0.0
    for _ in range(steps):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        v = w + ((t - 1.0) / t_next) * (w - w_prev) if t > 0 else w
        _, g = obj.value_and_grad(v)
        cand = v - step * g
        f_cand = obj.value(cand)
        if f_cand > f:
            # restart: drop momentum and take a plain gradient step
            t_next = 0.0
            _, g = obj.value_and_grad(w)
            cand = w - step * g
            f_cand = obj.value(cand)
        w_prev, w, f, t = w, cand, f_cand, t_next
        path.append(f)
    if return_path:
        return w, np.array(path)
    return w
