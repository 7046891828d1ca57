"""Domain types, input validation and noise-prior calibration."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

PRIOR_VARIANTS = ("BB", "IBP", "PY")


class ValidationError(ValueError):
    """Base class for rejected inputs."""


class DimensionMismatch(ValidationError):
    pass


class NonFiniteEntry(ValidationError):
    pass


class NotOneHot(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class ZeroVarianceColumn(ValidationError):
    pass


def _default_ids(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


@dataclass(frozen=True)
class ExpressionMatrix:
    """Observed N x G expression matrix with sample and gene identifiers."""

    values: np.ndarray
    sample_ids: list = field(default_factory=list)
    gene_ids: list = field(default_factory=list)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim == 2:
            if not self.sample_ids:
                object.__setattr__(self, "sample_ids", _default_ids("s", values.shape[0]))
            if not self.gene_ids:
                object.__setattr__(self, "gene_ids", _default_ids("g", values.shape[1]))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class OutcomeMatrix:
    """One-hot N x C class indicator matrix."""

    values: np.ndarray
    class_labels: list = field(default_factory=list)
    reference_class: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim == 2 and not self.class_labels:
            object.__setattr__(self, "class_labels", _default_ids("c", values.shape[1]))

    @property
    def n_classes(self):
        return self.values.shape[1]

    @property
    def labels(self):
        """Integer class index of every sample."""
        return np.argmax(self.values, axis=1)

    @classmethod
    def from_labels(cls, labels, n_classes, class_labels=None, reference_class=0):
        labels = np.asarray(labels, dtype=int)
        values = np.zeros((labels.size, n_classes))
        values[np.arange(labels.size), labels] = 1.0
        return cls(values, list(class_labels or []), reference_class)


@dataclass(frozen=True)
class Bicluster:
    samples: frozenset
    genes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "samples", frozenset(int(i) for i in self.samples))
        object.__setattr__(self, "genes", frozenset(int(j) for j in self.genes))

    @property
    def size(self):
        return len(self.samples) * len(self.genes)

    def to_dict(self):
        return {"sample_indices": sorted(self.samples), "gene_indices": sorted(self.genes)}


@dataclass(frozen=True)
class BiclusterSet:
    biclusters: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "biclusters",
            tuple(b if isinstance(b, Bicluster) else Bicluster(*b) for b in self.biclusters),
        )

    @property
    def K_hat(self):
        return len(self.biclusters)

    def __len__(self):
        return len(self.biclusters)

    def __iter__(self):
        return iter(self.biclusters)

    def check(self, n_samples=None, n_genes=None):
        for b in self.biclusters:
            if not b.samples or not b.genes:
                raise ValidationError("bicluster with an empty sample or gene set")
            if n_samples is not None and max(b.samples) >= n_samples:
                raise ValidationError("sample index out of range")
            if n_genes is not None and max(b.genes) >= n_genes:
                raise ValidationError("gene index out of range")
            if min(b.samples) < 0 or min(b.genes) < 0:
                raise ValidationError("negative index")

    def to_json_obj(self):
        return [b.to_dict() for b in self.biclusters]

    @classmethod
    def from_json_obj(cls, obj):
        if isinstance(obj, dict):
            obj = obj.get("biclusters", [])
        return cls(tuple(Bicluster(d["sample_indices"], d["gene_indices"]) for d in obj))


@dataclass(frozen=True)
class SoulConfig:
    n_iters: int = 150
    burn_in: int = 75
    inner_samples: int = 1
    delta_ula: object = "auto"
    c0: object = "auto"
    p_exponent: float = 0.8
    theta_bounds: tuple = (1e-4, 1e4)
    log_scale: bool = True
    lambda_init: float = 1.0

    def check(self):
        if not 0 <= self.burn_in < self.n_iters:
            raise ValidationError("SOUL burn_in must be in [0, n_iters)")
        low, high = self.theta_bounds
        if not 0 < low < high:
            raise ValidationError("SOUL theta_bounds must satisfy 0 < low < high")
        if not 0.6 <= self.p_exponent <= 0.9:
            raise ValidationError("SOUL p_exponent must lie in [0.6, 0.9]")
        if self.inner_samples < 1:
            raise ValidationError("SOUL inner_samples must be >= 1")
        if not low <= self.lambda_init <= high:
            raise ValidationError("SOUL lambda_init outside theta_bounds")


PAPER_OMEGA0_LADDER = (1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1e3, 1e4, 1e5, 1e6, 1e7)


@dataclass(frozen=True)
class FitConfig:
    K_init: int = 30
    prior_variant: str = "IBP"
    omega0_ladder: tuple = PAPER_OMEGA0_LADDER
    omega1: float = 1.0
    omega0_tilde_ladder: tuple = (5.0,) * len(PAPER_OMEGA0_LADDER)
    omega1_tilde: float = 1.0
    alpha: Optional[float] = None  # None -> 1 / K_init
    alpha_tilde: float = 1.0
    d: float = 0.0
    a_tilde: Optional[float] = None  # None -> 1 / K_init
    b_tilde: float = 1.0
    eta: float = 3.0
    xi: object = "auto"
    outcome_guided: bool = False
    mc_gamma_samples: int = 50
    mc_logsumexp_samples: int = 30
    mc_grad_samples: int = 30
    agd_steps: int = 100
    soul: SoulConfig = SoulConfig()
    soul_refresh: int = 0  # 0 -> once per rung
    em_max_iters_per_rung: int = 500
    em_tolerance: float = 1e-3
    seed: int = 0
    time_budget_secs: Optional[float] = None
    rebalance: bool = True

    @property
    def alpha_value(self):
        return 1.0 / self.K_init if self.alpha is None else float(self.alpha)

    @property
    def a_tilde_value(self):
        return 1.0 / self.K_init if self.a_tilde is None else float(self.a_tilde)

    def check(self):
        if self.K_init < 1:
            raise ValidationError("K_init must be positive")
        if self.prior_variant not in PRIOR_VARIANTS:
            raise ValidationError(f"prior_variant must be one of {PRIOR_VARIANTS}")
        ladder = np.asarray(self.omega0_ladder, dtype=float)
        if ladder.size == 0 or np.any(ladder <= 0) or np.any(np.diff(ladder) <= 0):
            raise ValidationError("omega0_ladder must be positive and strictly increasing")
        if len(self.omega0_tilde_ladder) != ladder.size:
            raise ValidationError("omega0_ladder and omega0_tilde_ladder differ in length")
        if min(self.omega0_tilde_ladder) <= 0 or self.omega1 <= 0 or self.omega1_tilde <= 0:
            raise ValidationError("spike and slab rates must be positive")
        if not 0 <= self.d < 1:
            raise ValidationError("d must lie in [0, 1)")
        if self.alpha_tilde <= -self.d:
            raise ValidationError("alpha_tilde must exceed -d")
        if self.alpha_value <= 0 or self.a_tilde_value <= 0 or self.b_tilde <= 0:
            raise ValidationError("Beta prior parameters must be positive")
        if self.eta <= 0:
            raise ValidationError("eta must be positive")
        if self.xi != "auto" and float(self.xi) <= 0:
            raise ValidationError("xi must be positive or 'auto'")
        if self.em_tolerance <= 0 or self.em_max_iters_per_rung < 0:
            raise ValidationError("invalid EM stopping rule")
        for name in ("mc_gamma_samples", "mc_logsumexp_samples", "mc_grad_samples", "agd_steps"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        self.soul.check()

    def with_updates(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, SoulConfig):
                v = {g.name: getattr(v, g.name) for g in fields(v)}
                v["theta_bounds"] = list(v["theta_bounds"])
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def validate_inputs(x: ExpressionMatrix, y: Optional[OutcomeMatrix] = None) -> None:
    """Raise a ValidationError subclass unless every input invariant holds."""
    values = x.values
    if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
        raise DimensionMismatch(f"expression matrix must be at least 2x2, got {values.shape}")
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteEntry(f"non-finite entry at row {bad[0]}, column {bad[1]}")
    n, g = values.shape
    if len(x.sample_ids) != n or len(x.gene_ids) != g:
        raise DimensionMismatch("identifier lists do not match matrix dimensions")
    if len(set(x.sample_ids)) != n:
        raise DuplicateId("duplicate sample ids")
    if len(set(x.gene_ids)) != g:
        raise DuplicateId("duplicate gene ids")
    if y is None:
        return
    yv = y.values
    if yv.ndim != 2 or yv.shape[1] < 2:
        raise DimensionMismatch("outcome matrix needs at least two classes")
    if yv.shape[0] != n:
        raise DimensionMismatch(f"outcome has {yv.shape[0]} rows, expression has {n}")
    if not np.all(np.isfinite(yv)):
        raise NonFiniteEntry("non-finite outcome entry")
    if not np.all((yv == 0) | (yv == 1)) or not np.all(yv.sum(axis=1) == 1):
        row = int(np.argmax((yv.sum(axis=1) != 1) | np.any((yv != 0) & (yv != 1), axis=1)))
        raise NotOneHot(f"outcome row {row} is not one-hot: {yv[row].tolist()}")
    if len(y.class_labels) != yv.shape[1]:
        raise DimensionMismatch("class_labels length differs from outcome columns")
    if not 0 <= y.reference_class < yv.shape[1]:
        raise DimensionMismatch("reference_class out of range")


def invgamma_quantile_scale(shape: float, prob: float = 0.95) -> float:
    """Return t with P(sigma2 <= 1) = prob when sigma2 ~ InvGamma(shape, t).

    The inverse-gamma CDF at v is Q(shape, scale / v), so the scale whose
    ``prob`` quantile equals v is ``t * v``.
    """
    def f(t):
        return special.gammaincc(shape, t) - prob

    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    while f(lo) < 0:
        lo /= 2.0
    return optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


def calibrate_xi(x: ExpressionMatrix, eta: float = 3.0) -> float:
    """Noise-prior scale matching the 95% prior quantile of sigma^2 to the data.

    The InvGamma(eta/2, eta*xi/2) prior on every sigma_j^2 is shifted so its
    0.95 quantile equals the median per-gene sample variance.
    """
    if eta <= 0:
        raise ValidationError("eta must be positive")
    s2 = np.var(np.asarray(x.values, dtype=float), axis=0, ddof=1)
    if np.any(s2 <= 0):
        j = int(np.argmax(s2 <= 0))
        raise ZeroVarianceColumn(f"column {j} ({x.gene_ids[j]}) has zero variance")
    target = float(np.median(s2))
    t = invgamma_quantile_scale(eta / 2.0, 0.95)
    return 2.0 * t * target / eta


def as_expression(values, sample_ids: Sequence[str] = (), gene_ids: Sequence[str] = ()):
    if isinstance(values, ExpressionMatrix):
        return values
    return ExpressionMatrix(np.asarray(values, dtype=float), list(sample_ids), list(gene_ids))


@dataclass
class EmState:
    """All latent expectations and parameter blocks of one EM run.

    ``stick`` holds the stick-breaking fractions nu for IBP/PY and the
    per-column inclusion probabilities for BB. ``W`` is ``None`` for
    unguided fits.
    """

    Z: np.ndarray
    lambda_mean: np.ndarray
    lambda_second_moment: np.ndarray
    T: np.ndarray
    sigma2: np.ndarray
    gamma_tilde: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    stick: np.ndarray
    variant: str = "IBP"
    W: Optional[np.ndarray] = None
    lambda_w: float = 1.0

    @property
    def K_current(self):
        return self.Z.shape[1]

    @property
    def theta_tilde(self):
        if self.variant == "BB":
            return self.stick
        return np.cumprod(self.stick)

    def copy(self):
        return replace(
            self,
            **{
                f.name: getattr(self, f.name).copy()
                for f in fields(self)
                if isinstance(getattr(self, f.name), np.ndarray)
            },
        )

    def check(self):
        K = self.K_current
        G = self.Z.shape[0]
        N = self.T.shape[0]
        shapes = {
            "lambda_mean": (N, K),
            "lambda_second_moment": (N, K, K),
            "T": (N, K),
            "sigma2": (G,),
            "gamma_tilde": (N, K),
            "gamma": (G, K),
            "theta": (K,),
            "stick": (K,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.W is not None and self.W.shape[0] != K + 1:
            raise ValidationError("W must have K + 1 rows")
        if np.any(self.T <= 0) or np.any(self.sigma2 <= 0):
            raise ValidationError("variances must be strictly positive")
        for name in ("gamma_tilde", "gamma", "theta", "stick"):
            v = getattr(self, name)
            if np.any(v < 0) or np.any(v > 1):
                raise ValidationError(f"{name} outside [0, 1]")
        if self.variant != "BB" and np.any(np.diff(self.theta_tilde) > 0):
            raise ValidationError("stick-breaking weights must be non-increasing")
