"""Isotropic Laplace posterior: Gauss-Newton curvature trace, tempered variance, σ²_x."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import softmax

from .errors import EmptyDataError, ShapeError, TaskMismatchError
from .nnet import (
    Dataset,
    FlatParams,
    Sample,
    _CHUNK,
    as_dataset,
    forward_raw,
    output_jacobian,
    squared_jacobian_norms,
)


@dataclass(frozen=True)
class CurvatureSummary:
    """Trace of the Gauss-Newton matrix summed over a sample set (no 1/n scaling)."""

    h: float
    n_samples: int
    d: int
    task: str

    def __post_init__(self):
        if not (self.h >= 0.0 and math.isfinite(self.h)):
            raise ValueError(f"curvature must be finite and >= 0, got {self.h}")

    def __add__(self, other: "CurvatureSummary") -> "CurvatureSummary":
        if (self.d, self.task) != (other.d, other.task):
            raise ValueError("cannot add curvature of different models")
        return CurvatureSummary(self.h + other.h, self.n_samples + other.n_samples, self.d, self.task)


@dataclass(frozen=True)
class IsotropicGaussian:
    """N(mean, variance · I) over the flat parameter vector."""

    mean: FlatParams
    variance: float

    def __post_init__(self):
        v = float(self.variance)
        if not (v > 0.0 and math.isfinite(v)):
            raise ValueError(f"variance must be positive and finite, got {self.variance}")
        object.__setattr__(self, "variance", v)

    @property
    def d(self) -> int:
        return self.mean.d

    @property
    def arch(self):
        return self.mean.arch

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """m parameter vectors, shape (m, d)."""
        eps = rng.standard_normal((m, self.d))
        return self.mean.values + math.sqrt(self.variance) * eps


def _nonempty(data: Dataset | Sequence[Sample]) -> Dataset:
    if not isinstance(data, Dataset) and len(data) == 0:
        raise EmptyDataError("curvature of an empty sample set is undefined")
    data = as_dataset(data)
    if len(data) == 0:
        raise EmptyDataError("curvature of an empty sample set is undefined")
    return data


def curvature_regression(params: FlatParams, data: Dataset | Sequence[Sample]) -> CurvatureSummary:
    """h = Σ_i ||∇_w f(x_i; w)||² for a scalar-output regression network."""
    if params.arch.output_head != "identity" or params.arch.output_dim != 1:
        raise TaskMismatchError("curvature_regression needs a scalar identity-head network")
    data = _nonempty(data)
    sq = squared_jacobian_norms(params.arch, params.values, data.x)[:, 0]
    return CurvatureSummary(float(np.sum(sq)), len(data), params.d, "regression")


def softmax_ggn_weights(params: FlatParams, X: np.ndarray) -> np.ndarray:
    """g(i, k) = p_ik (1 - p_ik), the diagonal of diag(p) - ppᵀ."""
    p = softmax(forward_raw(params.arch, params.values, X), axis=-1)
    return p * (1.0 - p)


def curvature_classification(params: FlatParams, data: Dataset | Sequence[Sample]) -> CurvatureSummary:
    """h = Σ_i Σ_k g(i,k) ||∇_w f_k(x_i; w)||² with f_k the logits.

    Uses only the diagonal of the softmax Hessian.  When every parameter feeds
    a single logit (linear-logit models) this equals the exact GGN trace.
    """
    if params.arch.output_head != "softmax":
        raise TaskMismatchError("curvature_classification needs a softmax-head network")
    data = _nonempty(data)
    g = softmax_ggn_weights(params, data.x)
    sq = squared_jacobian_norms(params.arch, params.values, data.x)
    return CurvatureSummary(float(np.sum(g * sq)), len(data), params.d, "classification")


def exact_ggn_trace(params: FlatParams, data: Dataset) -> float:
    """tr Σ_i J_iᵀ (diag(p_i) - p_i p_iᵀ) J_i using the full softmax Hessian."""
    total = 0.0
    for s in range(0, len(data), _CHUNK):
        X = data.x[s:s + _CHUNK]
        J = output_jacobian(params.arch, params.values, X)
        p = softmax(forward_raw(params.arch, params.values, X), axis=-1)
        H = np.einsum("nk,kl->nkl", p, np.eye(p.shape[1])) - p[:, :, None] * p[:, None, :]
        total += float(np.einsum("nkd,nkl,nld->", J, H, J))
    return total


def curvature(params: FlatParams, data: Dataset | Sequence[Sample]) -> CurvatureSummary:
    if params.arch.output_head == "softmax":
        return curvature_classification(params, data)
    return curvature_regression(params, data)


def posterior_variance(lam: float, curv: CurvatureSummary, prior_var: float) -> float:
    """Tempered isotropic Laplace variance 1 / (λ h / d + 1 / σ²_π)."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not prior_var > 0:
        raise ValueError(f"prior variance must be positive, got {prior_var}")
    return 1.0 / (lam * curv.h / curv.d + 1.0 / prior_var)


def gradient_variance(params: FlatParams, z_true: Dataset | Sequence[Sample]) -> float:
    """Per-weight second moment of raw-output gradients over ``z_true``.

    σ²_x = Σ_i Σ_j (∂f(x_i)/∂w_j)² / (|Z_true| d).  For multi-output networks the
    squared gradients of all K outputs are summed before normalising.
    """
    if not isinstance(z_true, Dataset) and len(z_true) == 0:
        raise EmptyDataError("gradient variance needs a non-empty Z_true")
    z_true = as_dataset(z_true)
    if len(z_true) == 0:
        raise EmptyDataError("gradient variance needs a non-empty Z_true")
    if z_true.n_features != params.arch.input_dim:
        raise ShapeError("Z_true feature dimension does not match the network")
    sq = squared_jacobian_norms(params.arch, params.values, z_true.x)
    return float(np.sum(sq) / (len(z_true) * params.d))
