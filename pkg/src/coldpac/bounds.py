"""PAC-Bayes bound evaluators for tempered isotropic Gaussian posteriors.

Three bounds share one decomposition, total = empirical risk + KL + moment:

* ``original``: both the Gibbs empirical risk and the moment term by Monte Carlo;
* ``mixed``: closed-form (second-order) empirical risk, Monte Carlo moment;
* ``approximate``: everything in closed form under the linearized-network model,
  valid only for λ < 1/c with c = 2 n σ²_x σ²_π.

The KL term always carries the 1/(λn) factor and the ln(1/δ) confidence cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyDataError, MomentDomainError, ShapeError
from .laplace import IsotropicGaussian, curvature
from .nnet import (
    HALF_LOG_2PI,
    Dataset,
    Sample,
    as_dataset,
    forward_raw,
    losses_from_raw,
    losses_many,
)

TrueRiskFn = Callable[[np.ndarray], np.ndarray]
DataSampler = Callable[[np.random.Generator, int], Dataset]

MOMENT_FORMS = ("appendix", "main_text", "tight")


@dataclass(frozen=True)
class BoundBreakdown:
    empirical_risk: float
    kl_term: float
    moment_term: float
    total: float
    lam: float
    prior_var: float
    delta: float
    kind: str
    estimator_meta: dict = field(default_factory=dict)

    @classmethod
    def assemble(cls, empirical_risk: float, kl_term: float, moment_term: float, *, lam: float,
                 prior_var: float, delta: float, kind: str, **meta) -> "BoundBreakdown":
        er, kl, mo = float(empirical_risk), float(kl_term), float(moment_term)
        return cls(er, kl, mo, er + kl + mo, float(lam), float(prior_var), float(delta), kind, meta)


@dataclass(frozen=True)
class MomentConfig:
    """Inputs of the closed-form moment bound.

    ``w_star_norm2`` is ||w_* - w_π||² (or ||w_*||² for the main-text form).
    """

    n: int
    m_prior: int = 10
    m_data: int = 10
    sigma_x2: float = 0.0
    sigma_eps2: float = 1.0
    w_star_norm2: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.m_prior < 1 or self.m_data < 1:
            raise ValueError("n, m_prior and m_data must be positive")
        if self.sigma_x2 < 0 or self.sigma_eps2 < 0 or self.w_star_norm2 < 0:
            raise ValueError("variances and norms must be non-negative")

    @property
    def m(self) -> int:
        return self.m_prior * self.m_data


def _check_lambda_delta(lam: float, delta: float):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")


# ---------------------------------------------------------------------------
# KL


def kl_iso(d: int, post_var: float, prior_var: float, mean_gap2: float = 0.0) -> float:
    """KL(N(a, s I) || N(b, t I)) with ``mean_gap2 = ||a - b||²``."""
    r = post_var / prior_var
    # r - 1 - ln r loses precision near r = 1
    core = (r - 1.0) - math.log(r) if abs(r - 1.0) > 1e-4 else _r_minus_one_minus_log(r)
    return 0.5 * (d * core + mean_gap2 / prior_var)


def _r_minus_one_minus_log(r: float) -> float:
    u = r - 1.0
    return u * u / 2 - u ** 3 / 3 + u ** 4 / 4 - u ** 5 / 5


def kl_gaussian_iso(post: IsotropicGaussian, prior: IsotropicGaussian) -> float:
    if post.d != prior.d:
        raise ShapeError(f"dimension mismatch: {post.d} vs {prior.d}")
    gap = post.mean.values - prior.mean.values
    return max(kl_iso(post.d, post.variance, prior.variance, float(gap @ gap)), 0.0)


def kl_term(kl: float, lam: float, n: int, delta: float) -> float:
    """(1/λn) [KL + ln(1/δ)]."""
    return (kl + math.log(1.0 / delta)) / (lam * n)


# ---------------------------------------------------------------------------
# empirical risk


def empirical_risk_closed(map_mse_sum: float, n: int, post_var: float, h: float) -> float:
    """E_ρ̂ L̂ for the linearized Gaussian-likelihood model.

    ||y - f(X; w_ρ̂)||² / 2n + σ²_ρ̂ h / 2n + ½ ln 2π.  Exact for linear models.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return map_mse_sum / (2 * n) + post_var * h / (2 * n) + HALF_LOG_2PI


def empirical_risk_taylor(map_loss_mean: float, n: int, post_var: float, h: float) -> float:
    """Second-order expansion of E_ρ̂ L̂ around the mean for any loss: L̂(w_ρ̂) + σ²_ρ̂ h / 2n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return map_loss_mean + post_var * h / (2 * n)


def empirical_risk_draws(post: IsotropicGaussian, data: Dataset, m: int, rng_seed) -> np.ndarray:
    """Mean empirical NLL of each of ``m`` posterior draws, shape (m,)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if len(data) == 0:
        raise EmptyDataError("empirical risk over empty data")
    rng = np.random.default_rng(rng_seed)
    W = post.sample(rng, m)
    return losses_many(post.arch, W, data).mean(axis=1)


def empirical_risk_mc(post: IsotropicGaussian, data: Dataset | Sequence[Sample], m: int, rng_seed,
                      return_se: bool = False):
    """(1/m) Σ_i L̂(w_i), w_i ~ ρ̂.  With ``return_se`` also the MC standard error."""
    per_draw = empirical_risk_draws(post, as_dataset(data), m, rng_seed)
    mean = float(per_draw.mean())
    if not return_se:
        return mean
    se = float(per_draw.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
    return mean, se


# ---------------------------------------------------------------------------
# moment


def moment_constraint(n: int, sigma_x2: float, prior_var: float) -> float:
    """c = 2 n σ²_x σ²_π."""
    return 2.0 * n * sigma_x2 * prior_var


def moment_lambda_max(c: float, form: str = "appendix") -> float:
    if c <= 0:
        return math.inf
    return 2.0 / c if form == "tight" else 1.0 / c


def moment_closed(lam: float, cfg: MomentConfig, prior_var: float, d: int, form: str = "appendix") -> float:
    """Closed-form upper bound on (1/λn) Ψ under the linear-Gaussian model.

    form="appendix": σ²_x(σ²_π d + ||w*-w_π||²) / (2 - 4λnσ²_xσ²_π) + σ²_ε/2
    form="main_text": σ²_x(σ²_π d + ||w*||²) / (1 - 2λnσ²_xσ²_π) + σ²_ε
    form="tight": σ²_x(σ²_π d + ||w*-w_π||²) / (2 - 2λnσ²_xσ²_π) + σ²_ε/2

    Raises :class:`MomentDomainError` when the denominator is not positive.
    """
    if form not in MOMENT_FORMS:
        raise ValueError(f"unknown moment form {form!r}")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    c = moment_constraint(cfg.n, cfg.sigma_x2, prior_var)
    lam_max = moment_lambda_max(c, form)
    if lam >= lam_max:
        raise MomentDomainError(lam, c, lam_max)
    num = cfg.sigma_x2 * (prior_var * d + cfg.w_star_norm2)
    if form == "appendix":
        return num / (2.0 - 2.0 * lam * c) + cfg.sigma_eps2 / 2
    if form == "main_text":
        return num / (1.0 - lam * c) + cfg.sigma_eps2
    return num / (2.0 - lam * c) + cfg.sigma_eps2 / 2


def excess_risk_draws(n: int, prior: IsotropicGaussian, true_risk_fn: TrueRiskFn, data_sampler: DataSampler,
                      m_prior: int, m_data: int, rng_seed) -> np.ndarray:
    """L_D(f_i) - L̂_{X'_j}(f_i) for f_i ~ π and fresh size-n datasets; shape (m_prior, m_data).

    These draws do not depend on λ, so one matrix serves a whole λ grid.
    """
    if m_prior < 1 or m_data < 1:
        raise ValueError("m_prior and m_data must be positive")
    rng = np.random.default_rng(rng_seed)
    W = prior.sample(rng, m_prior)
    true_risk = np.asarray(true_risk_fn(W), dtype=np.float64).reshape(m_prior)
    excess = np.empty((m_prior, m_data))
    for i in range(m_prior):
        for j in range(m_data):
            ds = data_sampler(rng, n)
            raw = forward_raw(prior.arch, W[i], ds.x)
            excess[i, j] = true_risk[i] - losses_from_raw(prior.arch, raw, ds.y).mean()
    return excess


def moment_from_excess(lam: float, n: int, excess: np.ndarray, return_se: bool = False):
    """(1/λn) ln mean exp(λn Δ), evaluated with max-subtraction.

    The standard error is a delta-method approximation treating the draws as
    independent.
    """
    t = lam * n
    x = np.asarray(excess, dtype=np.float64).reshape(-1)
    a = t * x
    m = a.shape[0]
    b = a - a.mean()
    if b.max() < 1.0:
        # small spread: center on the mean so tiny λn does not cancel catastrophically
        value = float(x.mean() + math.log1p(float(np.mean(np.expm1(b)))) / t)
    else:
        value = float((logsumexp(a) - math.log(m)) / t)
    if not return_se:
        return value
    if m < 2:
        return value, float("nan")
    e = np.exp(a - a.max())
    se = float(e.std(ddof=1) / math.sqrt(m) / e.mean() / t)
    return value, se


def moment_mc(lam: float, n: int, prior: IsotropicGaussian, true_risk_fn: TrueRiskFn, data_sampler: DataSampler,
              m_prior: int = 10, m_data: int = 10, rng_seed=0, return_se: bool = False):
    """Monte Carlo estimate of the moment term (1/λn) Ψ."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    excess = excess_risk_draws(n, prior, true_risk_fn, data_sampler, m_prior, m_data, rng_seed)
    return moment_from_excess(lam, n, excess, return_se)


def dataset_risk_fn(arch, data: Dataset, chunk: int = 16) -> TrueRiskFn:
    """L_D approximated by the mean loss on a large held-out set (Z_true)."""
    def risk(W: np.ndarray) -> np.ndarray:
        return losses_many(arch, W, data, chunk=chunk).mean(axis=1)
    return risk


def subsample_sampler(data: Dataset) -> DataSampler:
    """Fresh size-n datasets drawn without replacement from ``data``."""
    def sample(rng: np.random.Generator, n: int) -> Dataset:
        if n > len(data):
            raise ValueError(f"cannot draw {n} samples from a set of {len(data)}")
        return data.take(rng.choice(len(data), size=n, replace=False))
    return sample


# ---------------------------------------------------------------------------
# assembled bounds


def bound_original(post: IsotropicGaussian, prior: IsotropicGaussian, lam: float, data: Dataset | Sequence[Sample],
                   delta: float, true_risk_fn: TrueRiskFn, data_sampler: DataSampler, *, m_post: int = 100,
                   m_prior: int = 10, m_data: int = 10, rng_seed=0, excess: np.ndarray | None = None,
                   true_set_size: int | None = None) -> BoundBreakdown:
    """PAC-Bayes bound with Monte Carlo empirical risk and moment.

    ``rng_seed`` may be an int or a pair ``(posterior_seed, moment_seed)``.
    ``excess`` short-circuits the moment draws (see :func:`excess_risk_draws`).
    """
    _check_lambda_delta(lam, delta)
    data = as_dataset(data)
    n = len(data)
    post_seed, moment_seed = _split_seed(rng_seed)
    er, er_se = empirical_risk_mc(post, data, m_post, post_seed, return_se=True)
    if excess is None:
        excess = excess_risk_draws(n, prior, true_risk_fn, data_sampler, m_prior, m_data, moment_seed)
    mo, mo_se = moment_from_excess(lam, n, excess, return_se=True)
    kl = kl_term(kl_gaussian_iso(post, prior), lam, n, delta)
    return BoundBreakdown.assemble(er, kl, mo, lam=lam, prior_var=prior.variance, delta=delta, kind="original",
                                   m_post=m_post, m_moment=int(np.size(excess)), empirical_risk_se=er_se,
                                   moment_se=mo_se, true_set_size=true_set_size)


def bound_mixed(post: IsotropicGaussian, prior: IsotropicGaussian, lam: float, data: Dataset | Sequence[Sample],
                delta: float, true_risk_fn: TrueRiskFn, data_sampler: DataSampler, *, m_prior: int = 10,
                m_data: int = 10, rng_seed=0, excess: np.ndarray | None = None, h: float | None = None,
                true_set_size: int | None = None) -> BoundBreakdown:
    """Closed-form empirical risk (curvature expansion at the posterior mean) + MC moment."""
    _check_lambda_delta(lam, delta)
    data = as_dataset(data)
    n = len(data)
    if h is None:
        h = curvature(post.mean, data).h
    raw = forward_raw(post.arch, post.mean.values, data.x)
    if post.arch.output_head == "identity":
        mse_sum = float(np.sum((data.y - raw[:, 0]) ** 2))
        er = empirical_risk_closed(mse_sum, n, post.variance, h)
    else:
        er = empirical_risk_taylor(float(losses_from_raw(post.arch, raw, data.y).mean()), n, post.variance, h)
    _, moment_seed = _split_seed(rng_seed)
    if excess is None:
        excess = excess_risk_draws(n, prior, true_risk_fn, data_sampler, m_prior, m_data, moment_seed)
    mo, mo_se = moment_from_excess(lam, n, excess, return_se=True)
    kl = kl_term(kl_gaussian_iso(post, prior), lam, n, delta)
    return BoundBreakdown.assemble(er, kl, mo, lam=lam, prior_var=prior.variance, delta=delta, kind="mixed",
                                   m_post=0, m_moment=int(np.size(excess)), moment_se=mo_se,
                                   true_set_size=true_set_size)


def bound_approximate(lam: float, n: int, d: int, h: float, prior_var: float, map_mse_sum: float,
                      sigma_x2: float, sigma_eps2: float, w_star_norm2: float, w_gap_norm2: float = 0.0,
                      delta: float = 0.05, moment_form: str = "appendix") -> BoundBreakdown:
    """Fully closed-form bound with σ²_ρ̂(λ) = 1/(λh/d + 1/σ²_π) substituted."""
    _check_lambda_delta(lam, delta)
    cfg = MomentConfig(n=n, sigma_x2=sigma_x2, sigma_eps2=sigma_eps2, w_star_norm2=w_star_norm2)
    mo = moment_closed(lam, cfg, prior_var, d, form=moment_form)
    post_var = 1.0 / (lam * h / d + 1.0 / prior_var)
    er = empirical_risk_closed(map_mse_sum, n, post_var, h)
    kl = kl_term(kl_iso(d, post_var, prior_var, w_gap_norm2), lam, n, delta)
    return BoundBreakdown.assemble(er, kl, mo, lam=lam, prior_var=prior_var, delta=delta, kind="approximate",
                                   m_post=0, m_moment=0, moment_form=moment_form,
                                   c=moment_constraint(n, sigma_x2, prior_var))


def laplace_objective(post_var: float, lam: float, n: int, d: int, h: float, prior_var: float,
                      map_mse_sum: float = 0.0, w_gap_norm2: float = 0.0, delta: float = 1.0) -> float:
    """E_ρ̂ L̂ + (1/λn)[KL + ln 1/δ] as a function of the posterior variance."""
    return (empirical_risk_closed(map_mse_sum, n, post_var, h)
            + kl_term(kl_iso(d, post_var, prior_var, w_gap_norm2), lam, n, delta))


def elbo(post: IsotropicGaussian, prior: IsotropicGaussian, data: Dataset | Sequence[Sample], lam: float,
         m: int, rng_seed) -> float:
    """Generalized ELBO -E_ρ̂ L̂ - KL/(λn); λ = 1 is the usual ELBO (per sample)."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    data = as_dataset(data)
    er = empirical_risk_mc(post, data, m, rng_seed)
    return -er - kl_gaussian_iso(post, prior) / (lam * len(data))


# ---------------------------------------------------------------------------
# one-dimensional toy curve with all constants set to 1


class CorollaryPoint(NamedTuple):
    lam: float
    empirical_risk: float
    moment: float
    kl: float
    total: float


def corollary1_point(lam: float, delta: float) -> CorollaryPoint:
    """Simplified bound with n=d=h=σ²_π=σ²_x=||w_*||²=σ²_ε=1 and zero MAP residual."""
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if not 0 < lam < 0.5:
        raise MomentDomainError(lam, 2.0, 0.5)
    r = 1.0 / (lam + 1.0)
    er = 0.5 * r
    mo = 2.0 / (1.0 - 2.0 * lam)
    kl = (0.5 * (r - math.log(r)) + math.log(1.0 / delta)) / lam
    return CorollaryPoint(lam, er, mo, kl, er + mo + kl)


def corollary1_curve(lambda_grid: Sequence[float], delta: float) -> list[CorollaryPoint]:
    return [corollary1_point(float(lam), delta) for lam in lambda_grid]


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integer keys."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _split_seed(rng_seed):
    if isinstance(rng_seed, (tuple, list)) and len(rng_seed) == 2:
        return rng_seed[0], rng_seed[1]
    return derive_seed(rng_seed, 0), derive_seed(rng_seed, 1)
