"""Synthetic benchmark: planted biclusters, Gaussian noise and MLR outcomes."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import BiclusterSet, ExpressionMatrix, OutcomeMatrix, ValidationError
from .outcome import augment, mlr_probabilities

NON_MEMBER_SD = 0.2
MEMBER_MEAN = 2.0


@dataclass(frozen=True)
class SimulationConfig:
    N: int = 300
    G: int = 1000
    K: int = 15
    C: int = 3
    epsilon: float = 0.25
    informative: bool = True
    seed: int = 0

    def check(self):
        if self.N < 20 or self.G < 50:
            raise ValidationError("simulation needs N >= 20 and G >= 50")
        if self.K < 1 or self.C < 2:
            raise ValidationError("simulation needs K >= 1 and C >= 2")
        if not 0 < self.epsilon < 1:
            raise ValidationError("epsilon must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class SimulatedDataset:
    x: ExpressionMatrix
    y: OutcomeMatrix
    truth: BiclusterSet
    true_lambda: np.ndarray
    true_z: np.ndarray
    true_w: np.ndarray
    seed: int


def _planted(n, k, size_low, size_high, rng):
    values = rng.normal(0.0, NON_MEMBER_SD, size=(n, k))
    members = []
    for col in range(k):
        size = int(rng.integers(size_low, size_high + 1))
        idx = np.sort(rng.choice(n, size=size, replace=False))
        mean = MEMBER_MEAN if rng.random() < 0.5 else -MEMBER_MEAN
        values[idx, col] = rng.normal(mean, 1.0, size=size)
        members.append(idx)
    return values, members


def simulate_loadings(n, k, rng):
    """Sample-side matrix with 5 to 20 members per column."""
    return _planted(n, k, 5, 20, rng)


def simulate_factors(g, k, rng):
    """Gene-side matrix with 10 to 50 members per column."""
    return _planted(g, k, 10, 50, rng)


def build_weight_matrix(k, c, epsilon, informative, rng, reference_class=0):
    """(K+1) x C outcome weights; row 0 is the intercept."""
    if c < 2:
        raise ValidationError("need at least two classes")
    if informative:
        w = np.zeros((k + 1, c))
        w[0] = np.log(epsilon)
        others = [j for j in range(c) if j != reference_class]
        for row in range(1, k + 1):
            w[row, others[int(rng.integers(len(others)))]] = np.log(1.0 / epsilon)
    else:
        w = rng.normal(0.0, 0.01, size=(k + 1, c))
    w[:, reference_class] = 0.0
    return w


def simulate_outcomes(w, memberships, rng, class_labels=None, reference_class=0):
    """Draw one class per sample from the MLR on the binary membership rows."""
    probs = mlr_probabilities(w, augment(memberships))
    u = rng.random(probs.shape[0])
    labels = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    labels = np.minimum(labels, w.shape[1] - 1)
    return OutcomeMatrix.from_labels(labels, w.shape[1], class_labels, reference_class)


def default_class_labels(c):
    return ["HC"] + [f"D{j}" for j in range(1, c)]


def simulate_dataset(cfg: SimulationConfig = SimulationConfig()) -> SimulatedDataset:
    cfg.check()
    rng = np.random.default_rng(cfg.seed)
    lam, sample_sets = simulate_loadings(cfg.N, cfg.K, rng)
    z, gene_sets = simulate_factors(cfg.G, cfg.K, rng)
    w = build_weight_matrix(cfg.K, cfg.C, cfg.epsilon, cfg.informative, rng)
    noise = rng.standard_normal((cfg.N, cfg.G))
    x = lam @ z.T + noise
    memb = np.zeros((cfg.N, cfg.K))
    for col, idx in enumerate(sample_sets):
        memb[idx, col] = 1.0
    y = simulate_outcomes(w, memb, rng, default_class_labels(cfg.C))
    truth = BiclusterSet(tuple(zip(sample_sets, gene_sets)))
    return SimulatedDataset(ExpressionMatrix(x), y, truth, lam, z, w, cfg.seed)
