"""EM fit of the spike-and-slab lasso biclustering model, with optional
outcome guidance, run along an increasing ladder of spike penalties."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp

from . import outcome
from .model import BiclusterSet, EmState, FitConfig, calibrate_xi, validate_inputs
from .priors import bernoulli_loglik, log_exp_density, log_ssl_penalty, slab_probability, tau_log_odds
from .soul import soul_estimate_lambda

log = logging.getLogger(__name__)

TAU_MIN = 1e-12
SIGMA2_MIN = 1e-12
PROB_EPS = 1e-10
NU_EPS = 1e-6
Z_ZERO_TOL = 1e-10
MEMBERSHIP_TOL = 0.025


class SingularPrecision(np.linalg.LinAlgError):
    pass


@dataclass
class RungResult:
    state: EmState
    q_value: float
    iterations_used: int
    converged: bool
    omega0: float = 0.0
    omega0_tilde: float = 0.0


@dataclass
class FitResult:
    biclusters: BiclusterSet
    state: EmState
    trace: list = field(default_factory=list)
    rungs: list = field(default_factory=list)
    xi: float = 0.0
    budget_exhausted: bool = False


def resolve_xi(x, cfg: FitConfig):
    if cfg.xi == "auto":
        return calibrate_xi(x, cfg.eta)
    return float(cfg.xi)


def init_state(x, cfg: FitConfig, rng_seed, n_classes=None) -> EmState:
    rng = np.random.default_rng(rng_seed)
    X = x.values
    N, G = X.shape
    K = cfg.K_init
    Z = rng.standard_normal((G, K))
    if cfg.prior_variant == "BB":
        stick = np.full(K, 0.5)
    else:
        stick = np.sort(rng.beta(1.0, 1.0, size=K))[::-1].copy()
        stick = np.clip(stick, NU_EPS, 1.0 - NU_EPS)
    T = np.full((N, K), 100.0)
    second = np.zeros((N, K, K))
    second[:, np.arange(K), np.arange(K)] = T
    W = None if n_classes is None else np.zeros((K + 1, n_classes))
    return EmState(
        Z=Z,
        lambda_mean=np.zeros((N, K)),
        lambda_second_moment=second,
        T=T,
        sigma2=np.var(X, axis=0, ddof=1),
        gamma_tilde=np.full((N, K), 0.5),
        gamma=np.full((G, K), 0.5),
        theta=np.full(K, 0.5),
        stick=stick,
        variant=cfg.prior_variant,
        W=W,
        lambda_w=float(cfg.soul.lambda_init),
    )


# --- E-step -------------------------------------------------------------------


def _batched_inverse(mat):
    K = mat.shape[-1]
    eye = np.eye(K)
    for jitter in (0.0, 1e-10, 1e-6):
        try:
            L = np.linalg.cholesky(mat + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        Linv = np.linalg.solve(L, np.broadcast_to(eye, mat.shape))
        return np.swapaxes(Linv, -1, -2) @ Linv
    raise SingularPrecision("posterior precision of the sample factors is not positive definite")


def e_step_lambda(x, state: EmState):
    """Gaussian posterior moments of every sample's factor vector.

    The covariance (Z' S^-1 Z + diag(1/tau_i))^-1 is formed as
    R (I + R Z' S^-1 Z R)^-1 R with R = diag(sqrt(tau_i)), which stays well
    conditioned when some tau are tiny. Returns the N x K means and the
    N x K x K second moments.
    """
    X = x.values if hasattr(x, "values") else np.asarray(x)
    Zs = state.Z / state.sigma2[:, None]
    P = state.Z.T @ Zs
    N, K = state.T.shape
    r = np.sqrt(state.T)
    inner = r[:, :, None] * P[None] * r[:, None, :]
    inner[:, np.arange(K), np.arange(K)] += 1.0
    V = r[:, :, None] * _batched_inverse(inner) * r[:, None, :]
    mean = np.einsum("nij,nj->ni", V, X @ Zs)
    second = V + mean[:, :, None] * mean[:, None, :]
    return mean, second


def e_step_gamma_tilde_unsupervised(state: EmState, omega0_tilde, omega1_tilde):
    return expit(tau_log_odds(state.T, state.theta_tilde[None, :], omega0_tilde, omega1_tilde))


def e_step_gamma(state: EmState, omega0, omega1):
    return slab_probability(state.Z, state.theta[None, :], omega0, omega1)


# --- M-step -------------------------------------------------------------------


def ssl_objective(z, u, a, s2, theta, omega0, omega1):
    """Per-coordinate part of Q for a gene loading (additive constants dropped)."""
    return -(a * z * z - 2.0 * u * z) / (2.0 * s2) + log_ssl_penalty(z, theta, omega0, omega1)


def ssl_coordinate(u, a, s2, theta, omega0, omega1, max_iter=2000):
    """Exact maximiser of :func:`ssl_objective`, vectorised over genes.

    On the side of sign(u) the stationarity condition is the fixed point
    z = (|u| - s2 * pen'(z))_+ / a, where the adaptive penalty pen'(z)
    interpolates between omega0 and omega1 through the slab probability.
    For omega0 > omega1 that map is increasing, so iterating from above and
    from zero reaches the outermost fixed points; the global maximum is
    among those two and z = 0.
    """
    u = np.asarray(u, dtype=float)
    s2 = np.broadcast_to(np.asarray(s2, dtype=float), u.shape)
    U = np.abs(u)
    sign = np.sign(u)
    if a <= 0:
        return np.zeros_like(u)
    if omega0 == omega1:
        return sign * np.maximum(U - s2 * omega1, 0.0) / a

    dw = omega0 - omega1
    logc = np.log1p(-theta) + np.log(omega0) - np.log(theta) - np.log(omega1)

    def h(z, U_, s2_):
        pen = omega0 - dw * expit(dw * z - logc)
        return np.maximum(U_ - s2_ * pen, 0.0) / a

    z_top = np.maximum(U - s2 * min(omega0, omega1), 0.0) / a
    candidates = [np.zeros_like(U)]
    if dw > 0:
        for start in (z_top, np.zeros_like(U)):
            z = start.copy()
            active = np.ones(U.shape, dtype=bool)
            for _ in range(max_iter):
                idx = np.flatnonzero(active)
                if idx.size == 0:
                    break
                z_new = h(z[idx], U[idx], s2[idx])
                done = np.abs(z_new - z[idx]) <= 1e-14 * np.maximum(1.0, z_new)
                z[idx] = z_new
                active[idx[done]] = False
            candidates.append(z)
    else:
        # map is decreasing: the fixed point is unique, bracket it in [0, z_top]
        lo = np.zeros_like(U)
        hi = np.maximum(z_top, h(np.zeros_like(U), U, s2))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            up = h(mid, U, s2) > mid
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        candidates.append(0.5 * (lo + hi))

    cand = np.stack(candidates)
    vals = ssl_objective(cand, U[None], a, s2[None], theta, omega0, omega1)
    best = np.argmax(vals, axis=0)
    return sign * np.take_along_axis(cand, best[None], axis=0)[0]


def _sufficient_stats(x, state):
    X = x.values if hasattr(x, "values") else np.asarray(x)
    A = state.lambda_second_moment.sum(axis=0)
    B = X.T @ state.lambda_mean
    return X, A, B


def m_step_Z(x, state: EmState, omega0, omega1):
    """One coordinate sweep of exact spike-and-slab lasso updates over the K columns."""
    _, A, B = _sufficient_stats(x, state)
    Z = state.Z.copy()
    ZA = Z @ A
    for k in range(Z.shape[1]):
        a = A[k, k]
        u = B[:, k] - ZA[:, k] + a * Z[:, k]
        z_new = ssl_coordinate(u, a, state.sigma2, state.theta[k], omega0, omega1)
        delta = z_new - Z[:, k]
        if np.any(delta):
            ZA += np.outer(delta, A[k])
            Z[:, k] = z_new
    return Z


def expected_residual_ss(x, state: EmState, Z=None):
    """Per-gene sum over samples of E[(x_ij - z_j . lambda_i)^2]."""
    X, A, B = _sufficient_stats(x, state)
    Z = state.Z if Z is None else Z
    return (X * X).sum(axis=0) - 2.0 * (Z * B).sum(axis=1) + ((Z @ A) * Z).sum(axis=1)


def m_step_sigma(x, state: EmState, eta, xi):
    N = state.lambda_mean.shape[0]
    rss = expected_residual_ss(x, state)
    return np.maximum((eta * xi + rss) / (N + eta + 2.0), SIGMA2_MIN)


def m_step_tau(state: EmState, omega0_tilde, omega1_tilde):
    lam2 = np.einsum("nkk->nk", state.lambda_second_moment)
    gt = state.gamma_tilde
    wbar2 = (1.0 - gt) * omega0_tilde**2 + gt * omega1_tilde**2
    # (-1 + sqrt(1 + 4 w e)) / (2 w), rationalised for small arguments
    tau = 2.0 * lam2 / (1.0 + np.sqrt(1.0 + 4.0 * wbar2 * lam2))
    return np.maximum(tau, TAU_MIN)


def _stick_terms(k, nu, counts, N, alpha_tilde, d):
    prefix = np.prod(nu[:k])
    c = prefix * np.concatenate([[1.0], np.cumprod(nu[k + 1:])])  # theta_tilde_{k'} / nu_k, k' >= k
    S = counts[k:]
    coef = S.sum() + alpha_tilde + (k + 1) * d - 1.0
    return coef, c, N - S


def stick_objective_coordinate(v, k, nu, counts, N, alpha_tilde, d):
    """Terms of Q that depend on the k-th stick fraction (0-based k)."""
    coef, c, w = _stick_terms(k, nu, counts, N, alpha_tilde, d)
    v = np.asarray(v, dtype=float)
    tail = (w * np.log1p(-np.multiply.outer(v, c))).sum(axis=-1)
    return coef * np.log(v) - d * np.log1p(-v) + tail


_STICK_GRID = expit(np.linspace(-np.log(1.0 / NU_EPS - 1.0), np.log(1.0 / NU_EPS - 1.0), 97))


def stick_coordinate_argmax(k, nu, counts, N, alpha_tilde, d):
    """Global maximiser of :func:`stick_objective_coordinate` on [NU_EPS, 1 - NU_EPS].

    The derivative is scanned on a logit-spaced grid; every sign change from
    positive to negative is refined by Brent root finding and the resulting
    local maxima are compared with both endpoints.
    """
    coef, c, w = _stick_terms(k, nu, counts, N, alpha_tilde, d)

    def deriv(v):
        v = np.asarray(v, dtype=float)
        return coef / v + d / (1.0 - v) - (w * c / (1.0 - np.multiply.outer(v, c))).sum(axis=-1)

    grid = _STICK_GRID
    g = deriv(grid)
    cands = [grid[0], grid[-1]]
    for i in np.flatnonzero((g[:-1] > 0) & (g[1:] <= 0)):
        if g[i + 1] == 0:
            cands.append(grid[i + 1])
        else:
            cands.append(brentq(deriv, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    cands = np.array(cands)
    vals = stick_objective_coordinate(cands, k, nu, counts, N, alpha_tilde, d)
    return float(cands[int(np.argmax(vals))])


def update_stick(nu, counts, N, alpha_tilde, d, sweeps=2):
    """Coordinate-wise maximisation of the stick-breaking terms of Q."""
    nu = np.array(nu, dtype=float)
    for _ in range(sweeps):
        for k in range(nu.size):
            nu[k] = stick_coordinate_argmax(k, nu, counts, N, alpha_tilde, d)
    return nu


def m_step_sparsity(state: EmState, cfg: FitConfig):
    G = state.gamma.shape[0]
    N = state.gamma_tilde.shape[0]
    alpha = cfg.alpha_value
    S = state.gamma.sum(axis=0)
    theta = np.clip((S + alpha - 1.0) / (G + alpha - 1.0), PROB_EPS, 1.0 - PROB_EPS)
    S_tilde = state.gamma_tilde.sum(axis=0)
    if state.variant == "BB":
        a, b = cfg.a_tilde_value, cfg.b_tilde
        stick = np.clip((S_tilde + a - 1.0) / (N + a + b - 2.0), PROB_EPS, 1.0 - PROB_EPS)
    else:
        stick = update_stick(state.stick, S_tilde, N, cfg.alpha_tilde, cfg.d)
    return theta, stick


def rebalance_scale(state: EmState):
    """Parameter-expanded reduction of the (Z, Lambda) pair.

    The likelihood depends on Z lambda_i only. The sample factors get an
    expanded prior covariance A, estimated as the mean posterior second
    moment of lambda; with A = L L' the reduction is Z <- Z L and
    lambda <- L^-1 lambda. Without this step the iterates drift along
    directions the likelihood cannot see: |z| -> inf with tau -> 0, and
    pairs of columns that cancel each other. Modifies ``state`` in place.
    """
    K = state.K_current
    if K == 0:
        return state
    A = state.lambda_second_moment.mean(axis=0)
    live = np.any(state.Z != 0, axis=0) & (np.diag(A) > 0)
    A = np.where(np.outer(live, live), A, np.eye(K))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        L = np.diag(np.sqrt(np.diag(A)))
    Linv = np.linalg.solve(L, np.eye(K))
    state.Z = state.Z @ L
    state.lambda_mean = state.lambda_mean @ Linv.T
    state.lambda_second_moment = Linv[None] @ state.lambda_second_moment @ Linv.T[None]
    return state


# --- objective ----------------------------------------------------------------


def log_posterior_terms(x, y, state: EmState, cfg: FitConfig, omega0, omega0_tilde, xi,
                        expected=False, rng=None):
    """Split the (expected) complete-data log posterior into shared and per-column parts.

    With ``expected=False`` the latent blocks are plugged in at their
    current expectations; with ``expected=True`` second moments enter and the
    outcome log-sum-exp is averaged over Monte Carlo draws from ``rng``.
    Returns ``(shared, per_column)``.
    """
    X = x.values
    N, G = X.shape
    K = state.K_current
    eta = cfg.eta
    s2 = state.sigma2
    if expected:
        rss = expected_residual_ss(x, state)
    else:
        rss = ((X - state.lambda_mean @ state.Z.T) ** 2).sum(axis=0)
    shared = -0.5 * np.sum(rss / s2) - 0.5 * (N + eta + 2.0) * np.sum(np.log(s2)) - np.sum(eta * xi / (2.0 * s2))

    per_col = np.zeros(K)
    per_col += log_ssl_penalty(state.Z, state.theta[None, :], omega0, cfg.omega1).sum(axis=0)
    per_col += (cfg.alpha_value - 1.0) * np.log(state.theta)
    if expected:
        lam2 = np.einsum("nkk->nk", state.lambda_second_moment)
    else:
        lam2 = state.lambda_mean**2
    per_col += (-0.5 * lam2 / state.T - 0.5 * np.log(state.T)).sum(axis=0)
    gt = state.gamma_tilde
    lp0 = log_exp_density(state.T, omega0_tilde)
    lp1 = log_exp_density(state.T, cfg.omega1_tilde)
    if expected:
        per_col += ((1.0 - gt) * lp0 + gt * lp1).sum(axis=0)
    else:
        with np.errstate(divide="ignore"):
            per_col += np.logaddexp(np.log1p(-gt) + lp0, np.log(gt) + lp1).sum(axis=0)
    tt = np.clip(state.theta_tilde, PROB_EPS, 1.0 - PROB_EPS)
    per_col += bernoulli_loglik(gt.sum(axis=0), N, tt)
    if state.variant == "BB":
        per_col += (cfg.a_tilde_value - 1.0) * np.log(tt) + (cfg.b_tilde - 1.0) * np.log1p(-tt)
    else:
        l = np.arange(1, K + 1)
        shared += np.sum((cfg.alpha_tilde + l * cfg.d - 1.0) * np.log(state.stick) - cfg.d * np.log1p(-state.stick))

    if y is not None and state.W is not None:
        W = state.W
        gt_aug = outcome.augment(gt)
        shared += np.sum(y.values * (gt_aug @ W))
        if expected:
            if rng is None:
                rng = np.random.default_rng(0)
            shared -= np.sum(outcome.mc_log_sum_exp(W, gt, cfg.mc_logsumexp_samples, rng))
        else:
            shared -= np.sum(logsumexp(gt_aug @ W, axis=1))
        shared -= 0.5 * state.lambda_w * np.sum(W[0] ** 2)
        per_col -= 0.5 * state.lambda_w * np.sum(W[1:] ** 2, axis=1)
    return float(shared), per_col


def eval_log_posterior(x, y, state: EmState, cfg: FitConfig, omega0=None, omega0_tilde=None, xi=None):
    """Complete log posterior (up to constants) at the current point estimates."""
    omega0 = cfg.omega0_ladder[-1] if omega0 is None else omega0
    omega0_tilde = cfg.omega0_tilde_ladder[-1] if omega0_tilde is None else omega0_tilde
    xi = resolve_xi(x, cfg) if xi is None else xi
    shared, per_col = log_posterior_terms(x, y, state, cfg, omega0, omega0_tilde, xi)
    return shared + float(per_col.sum())


def q_value(x, y, state, cfg, omega0, omega0_tilde, xi, rng=None):
    shared, per_col = log_posterior_terms(x, y, state, cfg, omega0, omega0_tilde, xi, expected=True, rng=rng)
    return shared + float(per_col.sum())


# --- driver -------------------------------------------------------------------


def _soul_due(it, refresh):
    if refresh <= 0:
        return it == 1
    return (it - 1) % refresh == 0


def run_rung(x, y, state: EmState, omega0, omega0_tilde, cfg: FitConfig, rng, xi,
             rung=0, trace=None, deadline=None, soul_calls=None) -> RungResult:
    """Alternate E- and M-steps at one (omega0, omega0_tilde) setting until Z settles."""
    state = state.copy()
    guided = cfg.outcome_guided and y is not None and state.W is not None
    converged = False
    iters = 0
    omega1, omega1_t = cfg.omega1, cfg.omega1_tilde
    for it in range(1, cfg.em_max_iters_per_rung + 1):
        if state.K_current == 0:
            converged = True
            break
        iters = it
        Z_old = state.Z
        state.lambda_mean, state.lambda_second_moment = e_step_lambda(x, state)
        if cfg.rebalance:
            rebalance_scale(state)
        if guided:
            state.gamma_tilde = outcome.e_step_gamma_tilde_guided(
                y, state.W, state.T, state.theta_tilde, omega0_tilde, omega1_t, cfg.mc_gamma_samples, rng
            )
        else:
            state.gamma_tilde = e_step_gamma_tilde_unsupervised(state, omega0_tilde, omega1_t)
        state.gamma = e_step_gamma(state, omega0, omega1)
        state.Z = m_step_Z(x, state, omega0, omega1)
        state.sigma2 = m_step_sigma(x, state, cfg.eta, xi)
        state.T = m_step_tau(state, omega0_tilde, omega1_t)
        state.theta, state.stick = m_step_sparsity(state, cfg)
        if guided:
            if _soul_due(it, cfg.soul_refresh):
                # each call restarts from the configured lambda_init; the automatic
                # step constant is tied to it, so warm starts would stall the ascent
                tr = soul_estimate_lambda(y, state.gamma_tilde, state.W, cfg.soul, rng, J=cfg.mc_grad_samples)
                state.lambda_w = tr.final_estimate
                if soul_calls is not None:
                    soul_calls.append(tr.final_estimate)
            state.W = outcome.agd_maximize_w(
                y, state.gamma_tilde, state.lambda_w, cfg.agd_steps, cfg.mc_grad_samples, rng
            )
        dZ = state.Z - Z_old
        denom = max(np.linalg.norm(Z_old), 1e-12)
        change = np.linalg.norm(dZ) / denom
        if trace is not None:
            q = q_value(x, y, state, cfg, omega0, omega0_tilde, xi, rng=np.random.default_rng([cfg.seed, 7, rung, it]))
            trace.append(
                {
                    "iteration": it,
                    "rung": rung,
                    "q_value": q,
                    "K_current": state.K_current,
                    "max_abs_dZ": float(np.max(np.abs(dZ))) if dZ.size else 0.0,
                    "lambda_w": float(state.lambda_w) if guided else float("nan"),
                }
            )
        if change < cfg.em_tolerance:
            converged = True
            break
        if deadline is not None and time.monotonic() > deadline:
            break
    q = q_value(x, y, state, cfg, omega0, omega0_tilde, xi, rng=np.random.default_rng([cfg.seed, 7, rung, 0]))
    return RungResult(state, q, iters, converged, omega0, omega0_tilde)


def prune_biclusters(state: EmState, z_zero_tol=Z_ZERO_TOL, membership_tol=MEMBERSHIP_TOL) -> EmState:
    """Drop columns whose gene loadings are all zero or whose sample memberships all vanish."""
    K = state.K_current
    if K == 0:
        return state.copy()
    dead = (np.max(np.abs(state.Z), axis=0) < z_zero_tol) | (np.max(state.gamma_tilde, axis=0) < membership_tol)
    if not np.any(dead):
        return state.copy()
    keep = np.flatnonzero(~dead)
    new = state.copy()
    new.Z = state.Z[:, keep]
    new.lambda_mean = state.lambda_mean[:, keep]
    new.lambda_second_moment = state.lambda_second_moment[:, keep][:, :, keep]
    new.T = state.T[:, keep]
    new.gamma_tilde = state.gamma_tilde[:, keep]
    new.gamma = state.gamma[:, keep]
    new.theta = state.theta[keep]
    if state.variant == "BB":
        new.stick = state.stick[keep]
    else:
        # keep the surviving inclusion probabilities; fold removed fractions into the next survivor
        tt = state.theta_tilde[keep]
        prev = np.concatenate([[1.0], tt[:-1]])
        new.stick = np.clip(tt / prev, NU_EPS, 1.0 - NU_EPS) if keep.size else tt
    if state.W is not None:
        new.W = state.W[np.concatenate([[0], keep + 1])]
    return new


def binarize(state: EmState) -> BiclusterSet:
    out = []
    for k in range(state.K_current):
        samples = np.flatnonzero(state.gamma_tilde[:, k] > 0.5)
        genes = np.flatnonzero(state.Z[:, k] != 0)
        if samples.size and genes.size:
            out.append((samples, genes))
    return BiclusterSet(tuple(out))


def run_sslb(x, y, cfg: FitConfig, trace=False) -> FitResult:
    """Fit along the full spike ladder, warm-starting each rung and pruning between rungs."""
    validate_inputs(x, y)
    cfg.check()
    guided = cfg.outcome_guided and y is not None
    xi = resolve_xi(x, cfg)
    state = init_state(x, cfg, cfg.seed, n_classes=y.n_classes if guided else None)
    rng = np.random.default_rng([cfg.seed, 1])
    rows = [] if trace else None
    deadline = None if cfg.time_budget_secs is None else time.monotonic() + cfg.time_budget_secs
    rungs = []
    soul_calls = []
    exhausted = False
    for r, (w0, w0t) in enumerate(zip(cfg.omega0_ladder, cfg.omega0_tilde_ladder)):
        res = run_rung(x, y if guided else None, state, float(w0), float(w0t), cfg, rng, xi,
                       rung=r, trace=rows, deadline=deadline, soul_calls=soul_calls)
        state = prune_biclusters(res.state)
        rungs.append(res)
        log.debug("rung %d omega0=%g iters=%d K=%d q=%.4f", r, w0, res.iterations_used, state.K_current, res.q_value)
        if deadline is not None and time.monotonic() > deadline:
            exhausted = True
            break
    return FitResult(binarize(state), state, rows or [], rungs, xi, exhausted)
