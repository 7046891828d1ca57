"""Log densities of the spike-and-slab components, computed in log space."""
import numpy as np
from scipy.special import expit, log1p


def log_laplace(z, omega):
    return np.log(omega / 2.0) - omega * np.abs(z)


def log_ssl_penalty(z, theta, omega0, omega1):
    """log[theta * Laplace(z; omega1) + (1 - theta) * Laplace(z; omega0)]."""
    return np.logaddexp(
        np.log(theta) + log_laplace(z, omega1),
        np.log1p(-theta) + log_laplace(z, omega0),
    )


def slab_log_odds(z, theta, omega0, omega1):
    return (np.log(theta) + log_laplace(z, omega1)) - (np.log1p(-theta) + log_laplace(z, omega0))


def slab_probability(z, theta, omega0, omega1):
    """Posterior probability that z was drawn from the slab."""
    return expit(slab_log_odds(z, theta, omega0, omega1))


def log_exp_density(tau, omega):
    """Exponential density with rate omega^2 / 2, the Laplace mixing law."""
    rate = 0.5 * omega * omega
    return np.log(rate) - rate * tau


def tau_log_odds(tau, theta_tilde, omega0_tilde, omega1_tilde):
    """Prior log-odds of slab membership given the auxiliary variance tau."""
    return (
        np.log(theta_tilde)
        + log_exp_density(tau, omega1_tilde)
        - np.log1p(-theta_tilde)
        - log_exp_density(tau, omega0_tilde)
    )


def bernoulli_loglik(count, total, p):
    return count * np.log(p) + (total - count) * log1p(-p)
