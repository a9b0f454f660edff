"""Dense ReLU networks over a flat parameter vector, with hand-written backprop.

Parameter layout is layer-major; within a layer the weight matrix (shape
``(out, in)``, row-major) comes before the bias vector.  Every curvature and
gradient routine in the package indexes this layout.

Most routines come in two flavours: a public one taking :class:`FlatParams`
and :class:`Sample`/:class:`Dataset` objects, and an array-level one
(``*_raw`` / ``*_many``) used by the Monte Carlo code, which needs to push
hundreds of parameter draws through the network at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .errors import EmptyDataError, ShapeError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

_CHUNK = 256


@dataclass(frozen=True)
class ArchSpec:
    """Architecture of a fully connected ReLU network.

    ``layer_widths`` lists input dim, hidden widths and output dim.  The
    output head is ``"identity"`` (regression, scalar Gaussian likelihood with
    unit noise) or ``"softmax"`` (classification).  ``use_bias=False`` gives the
    pure linear map ``f = w·x`` used by the synthetic oracle.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    output_head: str = "identity"
    use_bias: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("layer_widths needs at least input and output dims")
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.output_head not in ("identity", "softmax"):
            raise ValueError(f"unsupported output head {self.output_head!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def task(self) -> str:
        return "classification" if self.output_head == "softmax" else "regression"

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum(w[l] * w[l + 1] + (w[l + 1] if self.use_bias else 0) for l in range(self.n_layers))

    def layer_slices(self) -> list[tuple[slice, slice | None, tuple[int, int]]]:
        """(weight slice, bias slice or None, weight shape) for each layer."""
        out = []
        offset = 0
        for l in range(self.n_layers):
            n_in, n_out = self.layer_widths[l], self.layer_widths[l + 1]
            w_sl = slice(offset, offset + n_out * n_in)
            offset += n_out * n_in
            b_sl = None
            if self.use_bias:
                b_sl = slice(offset, offset + n_out)
                offset += n_out
            out.append((w_sl, b_sl, (n_out, n_in)))
        return out


@dataclass(frozen=True)
class FlatParams:
    """A parameter vector together with the architecture it belongs to."""

    arch: ArchSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.arch.n_params:
            raise ShapeError(f"expected {self.arch.n_params} parameters, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter vector contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.arch.n_params

    def with_values(self, values: np.ndarray) -> "FlatParams":
        return FlatParams(self.arch, values)

    @classmethod
    def zeros(cls, arch: ArchSpec) -> "FlatParams":
        return cls(arch, np.zeros(arch.n_params))


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float | int


@dataclass(frozen=True)
class Dataset:
    """Samples stored column-wise: features ``x`` of shape (n, D) and targets ``y``.

    Regression targets are floats, classification targets integer class indices.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(0, 0)
        y = np.asarray(self.y).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"{x.shape[0]} feature rows but {y.shape[0]} targets")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.x[i], self.y[i].item())

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def take(self, idx: np.ndarray | Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.x[idx], self.y[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.x, other.x]), np.concatenate([self.y, other.y]))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise EmptyDataError("no samples")
        return cls(np.stack([np.asarray(s.x, dtype=np.float64) for s in samples]),
                   np.array([s.y for s in samples]))


def as_dataset(data: Dataset | Sequence[Sample]) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset.from_samples(data)


# ---------------------------------------------------------------------------
# array-level machinery


def unpack(arch: ArchSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Views of (W, b) per layer. ``w`` may carry leading batch axes."""
    lead = w.shape[:-1]
    layers = []
    for w_sl, b_sl, shape in arch.layer_slices():
        W = w[..., w_sl].reshape(lead + shape)
        b = w[..., b_sl] if b_sl is not None else None
        layers.append((W, b))
    return layers


def _check_features(arch: ArchSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-1] != arch.input_dim:
        raise ShapeError(f"feature length {X.shape[-1]} != input dim {arch.input_dim}")
    return X


def _forward_cache(arch: ArchSpec, w: np.ndarray, X: np.ndarray):
    """Raw outputs plus the per-layer inputs and pre-activations needed for backprop."""
    inputs, pre = [], []
    a = X
    layers = unpack(arch, w)
    for l, (W, b) in enumerate(layers):
        inputs.append(a)
        z = a @ W.T
        if b is not None:
            z = z + b
        pre.append(z)
        a = np.maximum(z, 0.0) if l < len(layers) - 1 else z
    return a, inputs, pre


def forward_raw(arch: ArchSpec, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Pre-head outputs (regression output or logits), shape (n, K)."""
    X = _check_features(arch, X)
    return _forward_cache(arch, np.asarray(w, dtype=np.float64), X)[0]


def forward_raw_many(arch: ArchSpec, W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Pre-head outputs for a stack of parameter vectors: (m, d) -> (m, n, K)."""
    X = _check_features(arch, X)
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    layers = unpack(arch, W)
    a = np.broadcast_to(X, (W.shape[0],) + X.shape)
    for l, (Wl, bl) in enumerate(layers):
        z = np.matmul(a, np.swapaxes(Wl, -1, -2))
        if bl is not None:
            z = z + bl[:, None, :]
        a = np.maximum(z, 0.0) if l < len(layers) - 1 else z
    return a


def losses_from_raw(arch: ArchSpec, raw: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample NLL given raw outputs of shape (..., n, K)."""
    if arch.output_head == "identity":
        r = y - raw[..., 0]
        return HALF_LOG_2PI + 0.5 * r * r
    logp = log_softmax(raw, axis=-1)
    yi = np.asarray(y, dtype=np.intp)
    return -np.take_along_axis(logp, np.broadcast_to(yi[:, None], logp.shape[:-1] + (1,)), axis=-1)[..., 0]


def log_likelihoods_from_raw(arch: ArchSpec, raw: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -losses_from_raw(arch, raw, y)


def losses_many(arch: ArchSpec, W: np.ndarray, data: Dataset, chunk: int = 64) -> np.ndarray:
    """Per-sample NLL for each of m parameter vectors: returns (m, n)."""
    W = np.atleast_2d(W)
    out = np.empty((W.shape[0], len(data)))
    for s in range(0, W.shape[0], chunk):
        raw = forward_raw_many(arch, W[s:s + chunk], data.x)
        out[s:s + chunk] = losses_from_raw(arch, raw, data.y)
    return out


def output_jacobian(arch: ArchSpec, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Gradient of every raw output w.r.t. every parameter: (n, K, d)."""
    X = _check_features(arch, X)
    w = np.asarray(w, dtype=np.float64)
    _, inputs, pre = _forward_cache(arch, w, X)
    layers = unpack(arch, w)
    n, K = X.shape[0], arch.output_dim
    J = np.zeros((n, K, arch.n_params))
    delta = np.broadcast_to(np.eye(K), (n, K, K)).copy()  # d raw_k / d z_last
    for l in range(arch.n_layers - 1, -1, -1):
        w_sl, b_sl, shape = arch.layer_slices()[l]
        a = inputs[l]
        J[:, :, w_sl] = (delta[:, :, :, None] * a[:, None, None, :]).reshape(n, K, -1)
        if b_sl is not None:
            J[:, :, b_sl] = delta
        if l > 0:
            delta = (delta @ layers[l][0]) * (pre[l - 1] > 0)[:, None, :]
    return J


def loss_gradients(arch: ArchSpec, w: np.ndarray, data: Dataset) -> np.ndarray:
    """Per-sample gradients of the NLL: (n, d)."""
    X = _check_features(arch, data.x)
    w = np.asarray(w, dtype=np.float64)
    raw, inputs, pre = _forward_cache(arch, w, X)
    if arch.output_head == "identity":
        delta = raw - data.y.astype(np.float64)[:, None]
    else:
        delta = softmax(raw, axis=-1)
        delta[np.arange(len(data)), data.y.astype(np.intp)] -= 1.0
    layers = unpack(arch, w)
    n = X.shape[0]
    G = np.zeros((n, arch.n_params))
    for l in range(arch.n_layers - 1, -1, -1):
        w_sl, b_sl, _ = arch.layer_slices()[l]
        G[:, w_sl] = (delta[:, :, None] * inputs[l][:, None, :]).reshape(n, -1)
        if b_sl is not None:
            G[:, b_sl] = delta
        if l > 0:
            delta = (delta @ layers[l][0]) * (pre[l - 1] > 0)
    return G


def mean_loss_gradient(arch: ArchSpec, w: np.ndarray, data: Dataset) -> np.ndarray:
    return loss_gradients(arch, w, data).mean(axis=0)


def squared_jacobian_norms(arch: ArchSpec, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Σ_j (∂f_k(x_i)/∂w_j)² for each sample and output: (n, K).

    Evaluated in fixed-size chunks so memory stays bounded on large sets.
    """
    X = _check_features(arch, X)
    out = np.empty((X.shape[0], arch.output_dim))
    for s in range(0, X.shape[0], _CHUNK):
        J = output_jacobian(arch, w, X[s:s + _CHUNK])
        out[s:s + _CHUNK] = np.einsum("nkd,nkd->nk", J, J)
    return out


# ---------------------------------------------------------------------------
# public single-sample API


def forward(params: FlatParams, x: np.ndarray) -> np.ndarray:
    """Network output for one feature vector (probabilities for the softmax head)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.arch.input_dim:
        raise ShapeError(f"expected feature vector of length {params.arch.input_dim}, got shape {x.shape}")
    raw = forward_raw(params.arch, params.values, x)[0]
    if params.arch.output_head == "softmax":
        return softmax(raw)
    return raw


def predict(params: FlatParams, X: np.ndarray) -> np.ndarray:
    """Batched :func:`forward`: (n, D) -> (n, K)."""
    raw = forward_raw(params.arch, params.values, X)
    return softmax(raw, axis=-1) if params.arch.output_head == "softmax" else raw


def nll_loss(params: FlatParams, sample: Sample) -> float:
    """Negative log-likelihood of one sample (unit-noise Gaussian or categorical)."""
    x = _check_features(params.arch, sample.x)
    raw = forward_raw(params.arch, params.values, x)
    return float(losses_from_raw(params.arch, raw, np.array([sample.y]))[0])


def mean_nll(params: FlatParams, data: Dataset) -> float:
    if len(data) == 0:
        raise EmptyDataError("mean loss over empty data")
    raw = forward_raw(params.arch, params.values, data.x)
    return float(losses_from_raw(params.arch, raw, data.y).mean())


def per_sample_gradient(params: FlatParams, sample: Sample, loss: str = "nll", k: int = 0) -> np.ndarray:
    """Exact gradient w.r.t. all ``d`` parameters.

    ``loss="nll"`` differentiates the per-sample NLL; ``loss="output"`` the raw
    output ``k`` (the logit for softmax heads).
    """
    x = _check_features(params.arch, sample.x)
    if loss == "nll":
        return loss_gradients(params.arch, params.values, Dataset(x, np.array([sample.y])))[0]
    if loss == "output":
        if not 0 <= k < params.arch.output_dim:
            raise ShapeError(f"output index {k} out of range")
        return output_jacobian(params.arch, params.values, x)[0, k]
    raise ValueError(f"unknown loss kind {loss!r}")


def linearized_forward(params_anchor: FlatParams, params_query: FlatParams, x: np.ndarray) -> np.ndarray:
    """First-order expansion of the raw outputs around ``params_anchor``.

    Returns ``f(x; a) + J(x; a)(q - a)``.  For softmax heads this linearizes the
    logits, not the probabilities.
    """
    if params_anchor.arch != params_query.arch:
        raise ShapeError("anchor and query parameters have different architectures")
    arch = params_anchor.arch
    x = _check_features(arch, x)
    if x.shape[0] != 1:
        raise ShapeError("linearized_forward takes a single feature vector")
    a = params_anchor.values
    raw = forward_raw(arch, a, x)[0]
    J = output_jacobian(arch, a, x)[0]
    return raw + J @ (params_query.values - a)


def init_params(arch: ArchSpec, rng: np.random.Generator, scheme: str = "uniform-fan-in",
                scale: float = 1.0) -> FlatParams:
    """Random initialization.

    ``uniform-fan-in`` draws every weight and bias from U(-1/√fan_in, 1/√fan_in);
    ``gaussian`` draws N(0, scale²).
    """
    w = np.empty(arch.n_params)
    for w_sl, b_sl, (n_out, n_in) in arch.layer_slices():
        if scheme == "uniform-fan-in":
            bound = 1.0 / math.sqrt(n_in)
            w[w_sl] = rng.uniform(-bound, bound, size=n_out * n_in)
            if b_sl is not None:
                w[b_sl] = rng.uniform(-bound, bound, size=n_out)
        elif scheme == "gaussian":
            w[w_sl] = scale * rng.standard_normal(n_out * n_in)
            if b_sl is not None:
                w[b_sl] = scale * rng.standard_normal(n_out)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
    return FlatParams(arch, w)


def log_mean_exp(a: np.ndarray, axis: int = 0) -> np.ndarray:
    return logsumexp(a, axis=axis) - math.log(a.shape[axis])
