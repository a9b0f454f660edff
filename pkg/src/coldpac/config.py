"""INI-style run configuration for the ``sweep``, ``validity`` and ``synth-gen`` commands."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .evaluation import TrainConfig

BOUND_KINDS = ("original", "mixed", "approximate")


def parse_grid(spec: str) -> tuple[float, ...]:
    """``logspace:a:b:n`` (exponents), ``linspace:a:b:n``, or a comma-separated list."""
    spec = spec.strip()
    try:
        if spec.startswith(("logspace:", "linspace:")):
            kind, a, b, n = spec.split(":")
            fn = np.logspace if kind == "logspace" else np.linspace
            values = fn(float(a), float(b), int(n))
        else:
            values = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid spec {spec!r}: {exc}") from None
    values = tuple(float(v) for v in values)
    if not values:
        raise ConfigError(f"grid {spec!r} is empty")
    if any(v <= 0 for v in values):
        raise ConfigError(f"grid {spec!r} must be positive")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"grid {spec!r} must be strictly increasing")
    return values


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


@dataclass(frozen=True)
class SweepConfig:
    # data
    source: str = "synthetic-regression"
    csv_path: str | None = None
    target_column: str = "y"
    feature_columns: tuple[str, ...] | None = None
    task: str = "regression"
    synth_n: int = 4000
    synth_seed: int = 0
    synth_noise: float = 1.0
    synth_features: int = 5
    synth_classes: int = 3
    standardize: bool = True
    # split
    split_counts: tuple[int, ...] = (400, 400, 200, 80, 2000)
    split_seed: int = 0
    # model / training
    hidden: tuple[int, ...] = (6, 6)
    train: TrainConfig = field(default_factory=TrainConfig)
    # sweep
    lambda_grid: tuple[float, ...] = parse_grid("logspace:-2:5:15")
    prior_var_grid: tuple[float, ...] = parse_grid("logspace:-5:-1:20")
    delta: float = 0.05
    m_post: int = 100
    m_prior: int = 10
    m_data: int = 10
    m_test: int = 100
    n_seeds: int = 10
    base_seed: int = 0
    bounds: tuple[str, ...] = BOUND_KINDS
    moment_form: str = "appendix"
    sigma_eps2: float = 1.0
    w_star_norm2: str = "map"
    ece_bins: int = 15
    workers: int = 1
    output_dir: str = "out"

    def __post_init__(self):
        if self.source not in ("csv", "synthetic-regression", "synthetic-classification"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("csv source needs data.path")
        if len(self.split_counts) != 5:
            raise ConfigError("split.counts needs five integers")
        unknown = set(self.bounds) - set(BOUND_KINDS)
        if unknown or not self.bounds:
            raise ConfigError(f"unknown bound kinds {sorted(unknown)}")
        if not 0 < self.delta <= 1:
            raise ConfigError("delta must lie in (0, 1]")
        if min(self.m_post, self.m_prior, self.m_data, self.m_test, self.n_seeds, self.workers) < 1:
            raise ConfigError("sample counts, n_seeds and workers must be >= 1")
        if self.w_star_norm2 != "map":
            try:
                float(self.w_star_norm2)
            except ValueError:
                raise ConfigError("w_star_norm2 must be 'map' or a number") from None

    @property
    def effective_task(self) -> str:
        if self.source == "synthetic-classification":
            return "classification"
        if self.source == "synthetic-regression":
            return "regression"
        return self.task

    def resolved_lines(self) -> list[str]:
        """Every resolved setting as ``key = value``, in declaration order."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "train":
                for g in fields(v):
                    lines.append(f"train.{g.name} = {getattr(v, g.name)!r}")
            else:
                lines.append(f"{f.name} = {v!r}")
        return lines


def _parser(path: str | Path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return cp


def load_sweep_config(path: str | Path) -> SweepConfig:
    cp = _parser(path)
    kw: dict = {}
    tk: dict = {}
    try:
        if cp.has_section("data"):
            s = cp["data"]
            kw["source"] = s.get("source", SweepConfig.source)
            if "path" in s:
                p = Path(s["path"])
                kw["csv_path"] = str(p if p.is_absolute() else Path(path).parent / p)
            kw["target_column"] = s.get("target", "y")
            if "features" in s:
                kw["feature_columns"] = tuple(c.strip() for c in s["features"].split(",") if c.strip())
            kw["task"] = s.get("task", "regression")
            kw["synth_n"] = s.getint("n", SweepConfig.synth_n)
            kw["synth_seed"] = s.getint("seed", 0)
            kw["synth_noise"] = s.getfloat("noise", 1.0)
            kw["synth_features"] = s.getint("n_features", SweepConfig.synth_features)
            kw["synth_classes"] = s.getint("n_classes", SweepConfig.synth_classes)
            kw["standardize"] = s.getboolean("standardize", True)
        if cp.has_section("split"):
            s = cp["split"]
            if "counts" in s:
                kw["split_counts"] = _ints(s["counts"])
            kw["split_seed"] = s.getint("seed", 0)
        if cp.has_section("model"):
            s = cp["model"]
            if "hidden" in s:
                kw["hidden"] = _ints(s["hidden"])
            tk["init_scheme"] = s.get("init", "uniform-fan-in")
            tk["init_scale"] = s.getfloat("init_scale", 1.0)
        if cp.has_section("train"):
            s = cp["train"]
            tk["step_size"] = s.getfloat("step_size", 1e-3)
            tk["epochs"] = s.getint("epochs", 10)
            tk["batch_size"] = s.getint("batch_size", 32)
            tk["seed"] = s.getint("seed", 0)
        kw["train"] = TrainConfig(**tk)
        if cp.has_section("sweep"):
            s = cp["sweep"]
            if "lambdas" in s:
                kw["lambda_grid"] = parse_grid(s["lambdas"])
            if "prior_vars" in s:
                kw["prior_var_grid"] = parse_grid(s["prior_vars"])
            elif s.get("prior_var_spacing", "log") == "linear":
                kw["prior_var_grid"] = parse_grid("linspace:0.00001:0.1:20")
            for name in ("delta", "sigma_eps2"):
                if name in s:
                    kw[name] = s.getfloat(name)
            for name in ("m_post", "m_prior", "m_data", "m_test", "n_seeds", "base_seed", "ece_bins", "workers"):
                if name in s:
                    kw[name] = s.getint(name)
            if "bounds" in s:
                kw["bounds"] = tuple(b.strip() for b in s["bounds"].split(",") if b.strip())
            if "moment_form" in s:
                kw["moment_form"] = s["moment_form"]
            if "w_star_norm2" in s:
                kw["w_star_norm2"] = s["w_star_norm2"]
        if cp.has_section("output"):
            kw["output_dir"] = cp["output"].get("dir", "out")
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return SweepConfig(**kw)


@dataclass(frozen=True)
class ValidityConfig:
    d: int = 20
    n: int = 50
    sigma_x2: float = 1.0
    sigma_eps2: float = 0.25
    w_star_norm: float = 1.0
    oracle_seed: int = 0
    lam: float = 1.0
    prior_var: float = 0.1
    delta: float = 0.05
    trials: int = 200
    m_post: int = 100
    m_prior: int = 10
    m_data: int = 10
    z_true_size: int = 2000
    posterior: str = "laplace"
    risk: str = "ztrue"
    output_dir: str = "out"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.posterior not in ("laplace", "oracle"):
            raise ConfigError("posterior must be 'laplace' or 'oracle'")
        if self.risk not in ("ztrue", "exact"):
            raise ConfigError("risk must be 'ztrue' or 'exact'")


def load_validity_config(path: str | Path) -> ValidityConfig:
    cp = _parser(path)
    kw: dict = {}
    try:
        if cp.has_section("oracle"):
            s = cp["oracle"]
            for name, get in (("d", s.getint), ("n", s.getint), ("sigma_x2", s.getfloat),
                              ("sigma_eps2", s.getfloat), ("w_star_norm", s.getfloat)):
                if name in s:
                    kw[name] = get(name)
            if "seed" in s:
                kw["oracle_seed"] = s.getint("seed")
        if cp.has_section("validity"):
            s = cp["validity"]
            if "lambda" in s:
                kw["lam"] = s.getfloat("lambda")
            for name in ("prior_var", "delta"):
                if name in s:
                    kw[name] = s.getfloat(name)
            for name in ("trials", "m_post", "m_prior", "m_data", "z_true_size"):
                if name in s:
                    kw[name] = s.getint(name)
            for name in ("posterior", "risk"):
                if name in s:
                    kw[name] = s[name]
        if cp.has_section("output"):
            kw["output_dir"] = cp["output"].get("dir", "out")
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return ValidityConfig(**kw)


@dataclass(frozen=True)
class SynthGenConfig:
    kind: str = "regression"
    n: int = 4000
    seed: int = 0
    noise: float = 1.0
    n_features: int = 5
    n_classes: int = 3
    d: int = 20
    sigma_x2: float = 1.0
    sigma_eps2: float = 0.25
    w_star_norm: float = 1.0
    path: str = "synthetic.csv"

    def __post_init__(self):
        if self.kind not in ("regression", "classification", "oracle"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")


def load_synthgen_config(path: str | Path) -> SynthGenConfig:
    cp = _parser(path)
    kw: dict = {}
    try:
        if cp.has_section("synthetic"):
            s = cp["synthetic"]
            if "kind" in s:
                kw["kind"] = s["kind"]
            for name in ("n", "seed", "n_features", "n_classes", "d"):
                if name in s:
                    kw[name] = s.getint(name)
            for name in ("noise", "sigma_x2", "sigma_eps2", "w_star_norm"):
                if name in s:
                    kw[name] = s.getfloat(name)
        if cp.has_section("output"):
            p = Path(cp["output"].get("path", "synthetic.csv"))
            kw["path"] = str(p if p.is_absolute() else Path(path).parent / p)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return SynthGenConfig(**kw)
