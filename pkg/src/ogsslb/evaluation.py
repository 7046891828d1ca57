"""Bicluster recovery scores and the replicate study."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .em import run_sslb
from .model import BiclusterSet, FitConfig, ValidationError
from .simulation import SimulationConfig, simulate_dataset

log = logging.getLogger(__name__)

METHODS = ("SSLB", "OG-SSLB")

# prior presets used in the study: Beta-Bernoulli, IBP, Pitman-Yor
VARIANT_PRESETS = {
    "BB": {"prior_variant": "BB", "a_tilde": None, "b_tilde": 1.0},
    "IBP": {"prior_variant": "IBP", "alpha_tilde": 1.0, "d": 0.0},
    "PY": {"prior_variant": "PY", "alpha_tilde": 1.0, "d": 0.5},
}


def jaccard(a, b):
    """Jaccard index of the cell sets (samples x genes) of two biclusters."""
    inter = len(a.samples & b.samples) * len(a.genes & b.genes)
    union = a.size + b.size - inter
    if union == 0:
        return 1.0
    return inter / union


def similarity_matrix(found, truth):
    return np.array([[jaccard(f, t) for t in truth] for f in found], dtype=float).reshape(len(found), len(truth))


def consensus_score(found, truth):
    """Optimal one-to-one matching of Jaccard indices divided by the larger set size.

    Two empty sets score 1; one empty set against a nonempty one scores 0.
    """
    n_found, n_truth = len(found), len(truth)
    if n_found == 0 and n_truth == 0:
        return 1.0
    if n_found == 0 or n_truth == 0:
        return 0.0
    S = similarity_matrix(found, truth)
    rows, cols = linear_sum_assignment(S, maximize=True)
    return float(S[rows, cols].sum() / max(n_found, n_truth))


@dataclass
class ReplicateSummary:
    method_label: str
    prior_variant: str
    consensus_scores: list = field(default_factory=list)
    k_hats: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def check(self):
        if not len(self.consensus_scores) == len(self.k_hats) == len(self.seeds):
            raise ValidationError("replicate lists differ in length")
        if any(not 0.0 <= s <= 1.0 for s in self.consensus_scores):
            raise ValidationError("consensus score outside [0, 1]")

    @property
    def mean_k_hat(self):
        return float(np.mean(self.k_hats)) if self.k_hats else float("nan")

    @property
    def median_score(self):
        return float(np.median(self.consensus_scores)) if self.consensus_scores else float("nan")

    def to_dict(self):
        return {
            "method": self.method_label,
            "variant": self.prior_variant,
            "seeds": list(self.seeds),
            "consensus_scores": list(self.consensus_scores),
            "k_hats": list(self.k_hats),
            "mean_k_hat": self.mean_k_hat,
            "median_consensus": self.median_score,
        }


@dataclass(frozen=True)
class StudyConfig:
    n_replicates: int = 10
    methods: tuple = METHODS
    variants: tuple = ("BB", "IBP", "PY")
    dataset: SimulationConfig = SimulationConfig()
    base: FitConfig = FitConfig()
    first_seed: int = 1

    def check(self):
        if self.n_replicates < 1:
            raise ValidationError("n_replicates must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown method {m!r}")
        for v in self.variants:
            if v not in VARIANT_PRESETS:
                raise ValidationError(f"unknown prior variant {v!r}")
        self.dataset.check()
        self.base.check()

    def seeds(self):
        return list(range(self.first_seed, self.first_seed + self.n_replicates))


def fit_config_for(base: FitConfig, method, variant, seed):
    kw = dict(VARIANT_PRESETS[variant])
    kw["outcome_guided"] = method == "OG-SSLB"
    kw["seed"] = seed
    return base.with_updates(**kw)


def _run_one(args):
    method, variant, seed, base, dataset_cfg = args
    ds = simulate_dataset(dataset_cfg)
    cfg = fit_config_for(base, method, variant, seed)
    t0 = time.perf_counter()
    fit = run_sslb(ds.x, ds.y if method == "OG-SSLB" else None, cfg)
    elapsed = time.perf_counter() - t0
    return {
        "method": method,
        "variant": variant,
        "seed": seed,
        "score": consensus_score(fit.biclusters, ds.truth),
        "k_hat": fit.biclusters.K_hat,
        "runtime_seconds": elapsed,
        "lambda_w": fit.state.lambda_w if method == "OG-SSLB" else None,
        "budget_exhausted": fit.budget_exhausted,
    }


def study_tasks(cfg: StudyConfig):
    return [(m, v, s, cfg.base, cfg.dataset) for m in cfg.methods for v in cfg.variants for s in cfg.seeds()]


def run_study_rows(cfg: StudyConfig, workers=1):
    """Every (method, variant, seed) fit on one shared dataset, sorted by that key."""
    cfg.check()
    tasks = study_tasks(cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, tasks))
    else:
        rows = [_run_one(t) for t in tasks]
    for r in rows:
        log.info("%s %s seed=%d score=%.3f K=%d (%.1fs)", r["method"], r["variant"], r["seed"], r["score"], r["k_hat"], r["runtime_seconds"])
    return sorted(rows, key=lambda r: (r["method"], r["variant"], r["seed"]))


def summarize(rows):
    groups = {}
    for r in rows:
        key = (r["method"], r["variant"])
        s = groups.setdefault(key, ReplicateSummary(r["method"], r["variant"]))
        s.consensus_scores.append(float(r["score"]))
        s.k_hats.append(int(r["k_hat"]))
        s.seeds.append(int(r["seed"]))
    out = [groups[k] for k in sorted(groups)]
    for s in out:
        s.check()
    return out


def run_replicate_study(cfg: StudyConfig, workers=1):
    """Fit each method and prior variant ``n_replicates`` times on one dataset."""
    return summarize(run_study_rows(cfg, workers))


def k_hat_table(summaries):
    """Mean estimated number of biclusters: rows are variants, columns methods."""
    table = {}
    for s in summaries:
        table.setdefault(s.prior_variant, {})[s.method_label] = s.mean_k_hat
    return table
