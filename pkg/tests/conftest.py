import numpy as np
import pytest

from ogsslb.model import EmState, ExpressionMatrix, FitConfig, OutcomeMatrix


def random_state(rng, N=5, G=4, K=2, variant="BB", C=None):
    """Small valid EM state with positive-definite second moments."""
    mean = rng.normal(size=(N, K))
    B = rng.normal(size=(N, K, K)) * 0.3
    cov = B @ np.swapaxes(B, 1, 2) + 0.1 * np.eye(K)
    second = cov + mean[:, :, None] * mean[:, None, :]
    if variant == "BB":
        stick = rng.uniform(0.1, 0.9, size=K)
    else:
        stick = np.sort(rng.uniform(0.3, 0.95, size=K))[::-1]
    return EmState(
        Z=rng.normal(size=(G, K)),
        lambda_mean=mean,
        lambda_second_moment=second,
        T=rng.uniform(0.2, 3.0, size=(N, K)),
        sigma2=rng.uniform(0.5, 2.0, size=G),
        gamma_tilde=rng.uniform(0.05, 0.95, size=(N, K)),
        gamma=rng.uniform(0.05, 0.95, size=(G, K)),
        theta=rng.uniform(0.1, 0.9, size=K),
        stick=stick,
        variant=variant,
        W=None if C is None else rng.normal(size=(K + 1, C)) * np.r_[0, np.ones(C - 1)],
    )


def random_outcomes(rng, N, C, reference_class=0):
    return OutcomeMatrix.from_labels(rng.integers(0, C, size=N), C, reference_class=reference_class)


def small_fit_config(**kw):
    """Short ladder and loose tolerance so fits finish in about a second."""
    base = dict(
        K_init=4,
        omega0_ladder=(1.0, 10.0, 100.0, 1e4),
        omega0_tilde_ladder=(5.0,) * 4,
        em_max_iters_per_rung=60,
        mc_gamma_samples=20,
        mc_logsumexp_samples=10,
        mc_grad_samples=5,
        agd_steps=20,
    )
    base.update(kw)
    return FitConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def planted_small():
    """Two well separated rank-one blocks in a 40 x 60 matrix."""
    r = np.random.default_rng(7)
    N, G = 40, 60
    lam = np.zeros((N, 2))
    z = np.zeros((G, 2))
    lam[:10, 0] = r.normal(3.0, 0.3, 10)
    lam[20:32, 1] = r.normal(-3.0, 0.3, 12)
    z[:15, 0] = r.normal(2.0, 0.3, 15)
    z[30:42, 1] = r.normal(2.0, 0.3, 12)
    x = lam @ z.T + r.normal(size=(N, G))
    truth = [(range(0, 10), range(0, 15)), (range(20, 32), range(30, 42))]
    return ExpressionMatrix(x), truth
