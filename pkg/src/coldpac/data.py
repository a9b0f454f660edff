"""Dataset ingestion, the five-way split, standardization and synthetic generators."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, EmptyDataError, InsufficientDataError
from .laplace import IsotropicGaussian
from .nnet import HALF_LOG_2PI, ArchSpec, Dataset, FlatParams

SPLIT_NAMES = ("train", "test", "validation", "trainsuffix", "z_true")


@dataclass(frozen=True)
class DatasetSplits:
    train: Dataset
    test: Dataset
    validation: Dataset
    trainsuffix: Dataset
    z_true: Dataset
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in SPLIT_NAMES:
            if len(getattr(self, name)) == 0:
                raise EmptyDataError(f"split {name!r} is empty")

    def items(self):
        return [(name, getattr(self, name)) for name in SPLIT_NAMES]

    def map(self, fn) -> "DatasetSplits":
        return DatasetSplits(*(fn(getattr(self, name)) for name in SPLIT_NAMES), provenance=self.provenance)


@dataclass(frozen=True)
class SyntheticOracleSpec:
    """Linear-Gaussian oracle: x ~ N(0, σ²_x I_d), y = x·w_* + ε, ε ~ N(0, σ²_ε)."""

    d: int
    sigma_x2: float
    sigma_eps2: float
    w_star: FlatParams
    n_per_draw: int
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.n_per_draw < 1:
            raise ValueError("d and n_per_draw must be positive")
        if self.sigma_x2 <= 0 or self.sigma_eps2 < 0:
            raise ValueError("sigma_x2 must be > 0 and sigma_eps2 >= 0")
        if self.w_star.d != self.d:
            raise ValueError(f"w_star has {self.w_star.d} entries, expected {self.d}")

    @property
    def arch(self) -> ArchSpec:
        return self.w_star.arch

    @classmethod
    def create(cls, d: int, sigma_x2: float, sigma_eps2: float, n_per_draw: int, seed: int = 0,
               w_star: np.ndarray | None = None, w_star_norm: float = 1.0) -> "SyntheticOracleSpec":
        """Build a spec; w_* defaults to a seed-derived random direction of norm ``w_star_norm``."""
        arch = linear_arch(d)
        if w_star is None:
            v = np.random.default_rng([seed, 0x5EED]).standard_normal(d)
            w_star = w_star_norm * v / np.linalg.norm(v)
        return cls(d, sigma_x2, sigma_eps2, FlatParams(arch, w_star), n_per_draw, seed)


def linear_arch(d: int) -> ArchSpec:
    """f(x; w) = w·x, no bias."""
    return ArchSpec((d, 1), output_head="identity", use_bias=False)


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class LoadedTable:
    data: Dataset
    feature_columns: tuple[str, ...]
    target_column: str
    class_labels: tuple[str, ...] | None = None


def load_csv(path: str | Path, target_column: str, feature_columns: Sequence[str] | None = None,
             task: str = "regression") -> LoadedTable:
    """Read a headered, comma-separated numeric table.

    Classification targets are mapped to contiguous indices in order of sorted
    label; the mapping is kept in ``class_labels``.
    """
    path = Path(path)
    if task not in ("regression", "classification"):
        raise DataError(f"unknown task {task!r}")
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header")
        if feature_columns is None:
            feature_columns = [h for h in header if h != target_column]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise DataError(f"{path}: feature columns not found: {missing}")
        f_idx = [header.index(c) for c in feature_columns]
        t_idx = header.index(target_column)
        rows, targets = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in f_idx])
            except ValueError:
                bad = next(header[i] for i in f_idx if not _is_float(row[i]))
                raise DataError(f"{path}:{lineno}: non-numeric value in column {bad!r}") from None
            targets.append(row[t_idx].strip())
    if not rows:
        raise EmptyDataError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(f_idx))
    labels = None
    if task == "classification":
        try:
            keys = sorted(set(targets), key=float)
        except ValueError:
            keys = sorted(set(targets))
        lookup = {k: i for i, k in enumerate(keys)}
        y = np.array([lookup[t] for t in targets], dtype=np.int64)
        labels = tuple(keys)
    else:
        try:
            y = np.array([float(t) for t in targets])
        except ValueError:
            bad = next(i for i, t in enumerate(targets) if not _is_float(t))
            raise DataError(f"{path}:{bad + 2}: non-numeric target") from None
    return LoadedTable(Dataset(X, y), tuple(feature_columns), target_column, labels)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv(path: str | Path, data: Dataset, feature_columns: Sequence[str] | None = None,
              target_column: str = "y") -> None:
    """Write a dataset with ``repr`` floats so that reloading is exact."""
    if feature_columns is None:
        feature_columns = [f"x{i}" for i in range(data.n_features)]
    integer_targets = np.issubdtype(data.y.dtype, np.integer)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(feature_columns) + [target_column])
        for xi, yi in zip(data.x, data.y):
            w.writerow([repr(float(v)) for v in xi] + [str(int(yi)) if integer_targets else repr(float(yi))])


# ---------------------------------------------------------------------------
# splitting


def split(data: Dataset, counts: Sequence[int], seed: int) -> DatasetSplits:
    """Shuffle with ``seed`` then assign contiguous blocks (train, test, validation, trainsuffix, z_true)."""
    counts = [int(c) for c in counts]
    if len(counts) != 5 or any(c < 0 for c in counts):
        raise DataError("counts must be five non-negative integers")
    if sum(counts) > len(data):
        raise InsufficientDataError(sum(counts), len(data))
    perm = np.random.default_rng(seed).permutation(len(data))
    return _assign(data, counts, perm, seed)


def _assign(data: Dataset, counts: Sequence[int], perm: np.ndarray, seed) -> DatasetSplits:
    parts, start = [], 0
    for c in counts:
        parts.append(data.take(perm[start:start + c]))
        start += c
    prov = {"seed": seed, "counts": list(counts), "permutation": [int(i) for i in perm]}
    return DatasetSplits(*parts, provenance=prov)


def write_split_manifest(splits: DatasetSplits, path: str | Path, source: str | None = None) -> None:
    manifest = dict(splits.provenance)
    manifest["names"] = list(SPLIT_NAMES)
    if source is not None:
        manifest["source"] = source
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def apply_split_manifest(data: Dataset, path: str | Path) -> DatasetSplits:
    m = json.loads(Path(path).read_text())
    perm = np.asarray(m["permutation"], dtype=np.intp)
    if perm.shape[0] != len(data):
        raise DataError(f"manifest permutation covers {perm.shape[0]} rows, dataset has {len(data)}")
    return _assign(data, m["counts"], perm, m["seed"])


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class Normalizer:
    """Affine feature (and optionally target) standardization fitted on one set.

    NLL values computed on standardized targets differ from raw-unit NLL by
    the additive constant ``ln(y_scale)`` per sample.
    """

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0

    def __call__(self, data: Dataset) -> Dataset:
        x = (data.x - self.x_mean) / self.x_scale
        if np.issubdtype(data.y.dtype, np.integer):
            return Dataset(x, data.y)
        return Dataset(x, (data.y - self.y_mean) / self.y_scale)

    @property
    def nll_offset(self) -> float:
        """Add to a standardized-unit NLL to get the raw-unit NLL."""
        return math.log(self.y_scale)


def normalize(fit_on: Dataset, standardize_targets: bool = True) -> Normalizer:
    """Fit per-feature mean/std on ``fit_on``; zero-variance features pass through unchanged."""
    if len(fit_on) == 0:
        raise EmptyDataError("cannot fit a normalizer on empty data")
    mean = fit_on.x.mean(axis=0)
    std = fit_on.x.std(axis=0)
    const = ~(std > 0)
    mean = np.where(const, 0.0, mean)
    std = np.where(const, 1.0, std)
    y_mean, y_scale = 0.0, 1.0
    if standardize_targets and not np.issubdtype(fit_on.y.dtype, np.integer):
        y_mean = float(fit_on.y.mean())
        s = float(fit_on.y.std())
        y_scale = s if s > 0 else 1.0
    return Normalizer(mean, std, y_mean, y_scale)


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_draw(spec: SyntheticOracleSpec, draw_index: int, n: int | None = None) -> Dataset:
    """``n_per_draw`` fresh samples from the oracle, seeded by (spec.seed, draw_index)."""
    n = spec.n_per_draw if n is None else n
    rng = np.random.default_rng([spec.seed, draw_index])
    X = math.sqrt(spec.sigma_x2) * rng.standard_normal((n, spec.d))
    y = X @ spec.w_star.values + math.sqrt(spec.sigma_eps2) * rng.standard_normal(n)
    return Dataset(X, y)


def oracle_sampler(spec: SyntheticOracleSpec):
    """A data sampler drawing fresh oracle datasets from a caller-supplied generator."""
    sd = math.sqrt(spec.sigma_x2)
    se = math.sqrt(spec.sigma_eps2)

    def sample(rng: np.random.Generator, n: int) -> Dataset:
        X = sd * rng.standard_normal((n, spec.d))
        return Dataset(X, X @ spec.w_star.values + se * rng.standard_normal(n))
    return sample


def oracle_risk(spec: SyntheticOracleSpec, W: np.ndarray) -> np.ndarray:
    """Exact L_D(w) = ½ln2π + ½(σ²_x ||w_* - w||² + σ²_ε) for each row of W."""
    diff = np.atleast_2d(W) - spec.w_star.values
    return HALF_LOG_2PI + 0.5 * (spec.sigma_x2 * np.sum(diff * diff, axis=1) + spec.sigma_eps2)


def synthetic_true_risk(spec: SyntheticOracleSpec, post: IsotropicGaussian) -> float:
    """Exact Gibbs risk E_{w~ρ̂} L_D(w) under the oracle."""
    if post.d != spec.d:
        raise ValueError("posterior dimension does not match the oracle")
    gap = spec.w_star.values - post.mean.values
    return HALF_LOG_2PI + 0.5 * (spec.sigma_x2 * (float(gap @ gap) + spec.d * post.variance) + spec.sigma_eps2)


def make_regression(n: int, seed: int, n_features: int = 5, noise: float = 1.0) -> Dataset:
    """Friedman-style nonlinear regression task with uniform inputs.

    y = 10 sin(π x0 x1) + 20 (x2 - ½)² + 10 x3 + 5 x4 + noise; extra features are
    irrelevant.
    """
    if n_features < 5:
        raise ValueError("need at least 5 features")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, n_features))
    y = (10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2
         + 10 * X[:, 3] + 5 * X[:, 4] + noise * rng.standard_normal(n))
    return Dataset(X, y)


def make_classification(n: int, seed: int, n_features: int = 4, n_classes: int = 3,
                        separation: float = 2.0) -> Dataset:
    """Isotropic Gaussian blobs, one per class, with random centres."""
    rng = np.random.default_rng(seed)
    centres = separation * rng.standard_normal((n_classes, n_features))
    y = rng.integers(0, n_classes, size=n)
    X = centres[y] + rng.standard_normal((n, n_features))
    return Dataset(X, y.astype(np.int64))
