"""MAP training by plain SGD and posterior-predictive test metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import EmptyDataError, TaskMismatchError, TrainingDivergedError
from .laplace import IsotropicGaussian
from .nnet import (
    ArchSpec,
    Dataset,
    FlatParams,
    Sample,
    as_dataset,
    forward_raw_many,
    init_params,
    log_likelihoods_from_raw,
    loss_gradients,
    losses_from_raw,
    forward_raw,
)


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    init_scheme: str = "uniform-fan-in"
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.step_size < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("step_size and epochs must be >= 0, batch_size >= 1")


@dataclass(frozen=True)
class MetricReport:
    nll: float
    gibbs_nll: float
    ece: float | None
    zero_one: float | None
    n_eval: int
    mc_samples: int


def train_map(arch: ArchSpec, train_data: Dataset | Sequence[Sample], cfg: TrainConfig,
              init: FlatParams | None = None, history: list | None = None) -> FlatParams:
    """Minimize the mean NLL with mini-batch SGD (no momentum, no weight decay).

    Mini-batches come from a fresh seed-driven permutation each epoch.  If
    ``history`` is given, the mean training loss over each epoch's batches is
    appended to it.
    """
    data = as_dataset(train_data)
    if len(data) == 0:
        raise EmptyDataError("cannot train on an empty set")
    rng = np.random.default_rng(cfg.seed)
    params = init if init is not None else init_params(arch, rng, cfg.init_scheme, cfg.init_scale)
    w = params.values.copy()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(data))
        batch_losses = []
        # overflow is caught below as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(0, len(data), cfg.batch_size):
                batch = data.take(perm[s:s + cfg.batch_size])
                raw = forward_raw(arch, w, batch.x)
                batch_losses.append(float(losses_from_raw(arch, raw, batch.y).mean()))
                w -= cfg.step_size * loss_gradients(arch, w, batch).mean(axis=0)
        if not (np.all(np.isfinite(w)) and np.isfinite(batch_losses).all()):
            raise TrainingDivergedError(epoch)
        if history is not None:
            history.append(float(np.mean(batch_losses)))
    return FlatParams(arch, w)


def _raw_draws(post: IsotropicGaussian, data: Dataset, m: int, rng_seed) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be >= 1")
    if len(data) == 0:
        raise EmptyDataError("metrics over empty data")
    W = post.sample(np.random.default_rng(rng_seed), m)
    return forward_raw_many(post.arch, W, data.x)


def _predictive_nll_from_raw(arch: ArchSpec, raw: np.ndarray, y: np.ndarray) -> float:
    ll = log_likelihoods_from_raw(arch, raw, y)  # (m, n)
    return float(-(logsumexp(ll, axis=0) - math.log(ll.shape[0])).mean())


def predictive_nll(post: IsotropicGaussian, data: Dataset | Sequence[Sample], m: int, rng_seed) -> float:
    """Mean over samples of -ln (1/m) Σ_i p(y | x, w_i), w_i ~ ρ̂."""
    data = as_dataset(data)
    return _predictive_nll_from_raw(post.arch, _raw_draws(post, data, m, rng_seed), data.y)


def gibbs_nll(post: IsotropicGaussian, data: Dataset | Sequence[Sample], m: int, rng_seed,
              return_se: bool = False):
    """Mean over draws and samples of -ln p(y | x, w_i); same draws as :func:`predictive_nll`."""
    data = as_dataset(data)
    per_draw = losses_from_raw(post.arch, _raw_draws(post, data, m, rng_seed), data.y).mean(axis=1)
    if not return_se:
        return float(per_draw.mean())
    se = float(per_draw.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
    return float(per_draw.mean()), se


def predictive_probs(post: IsotropicGaussian, data: Dataset, m: int, rng_seed) -> np.ndarray:
    """Posterior-predictive mean class probabilities, (n, K)."""
    if post.arch.output_head != "softmax":
        raise TaskMismatchError("predictive probabilities need a classification model")
    return softmax(_raw_draws(post, data, m, rng_seed), axis=-1).mean(axis=0)


def ece_from_probs(probs: np.ndarray, labels: np.ndarray, bins: int = 15) -> float:
    """Binned expected calibration error with equal-width confidence bins on [0, 1].

    Bin b covers (b/B, (b+1)/B]; a confidence of exactly 0 falls in the first bin.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    idx = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    n = conf.shape[0]
    total = 0.0
    for b in range(bins):
        mask = idx == b
        cnt = int(mask.sum())
        if cnt:
            total += cnt / n * abs(correct[mask].mean() - conf[mask].mean())
    return float(min(max(total, 0.0), 1.0))


def zero_one_from_probs(probs: np.ndarray, labels: np.ndarray) -> float:
    """Misclassification rate of the argmax; ties go to the lowest class index."""
    return float(np.mean(np.argmax(probs, axis=1) != np.asarray(labels)))


def ece(post: IsotropicGaussian, data: Dataset | Sequence[Sample], m: int, bins: int = 15, rng_seed=0) -> float:
    data = as_dataset(data)
    return ece_from_probs(predictive_probs(post, data, m, rng_seed), data.y, bins)


def zero_one(post: IsotropicGaussian, data: Dataset | Sequence[Sample], m: int, rng_seed=0) -> float:
    data = as_dataset(data)
    return zero_one_from_probs(predictive_probs(post, data, m, rng_seed), data.y)


def evaluate(post: IsotropicGaussian, data: Dataset, m: int = 100, rng_seed=0, bins: int = 15) -> MetricReport:
    """All test metrics from one shared set of posterior draws."""
    raw = _raw_draws(post, data, m, rng_seed)
    nll = _predictive_nll_from_raw(post.arch, raw, data.y)
    gibbs = float(losses_from_raw(post.arch, raw, data.y).mean())
    e = z = None
    if post.arch.output_head == "softmax":
        probs = softmax(raw, axis=-1).mean(axis=0)
        e = ece_from_probs(probs, data.y, bins)
        z = zero_one_from_probs(probs, data.y)
    return MetricReport(nll, gibbs, e, z, len(data), m)
