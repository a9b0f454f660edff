"""End-to-end protocol: train the prior mean, build tempered Laplace posteriors,
sweep λ × σ²_π, evaluate bounds and test metrics, write reports.

All randomness is derived from the configuration through :func:`derive_seed`,
so every report is a pure function of its config.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .bounds import (
    bound_approximate,
    bound_mixed,
    bound_original,
    corollary1_point,
    dataset_risk_fn,
    derive_seed,
    excess_risk_draws,
    moment_constraint,
    moment_lambda_max,
    subsample_sampler,
)
from .config import SweepConfig, ValidityConfig
from .data import (
    SyntheticOracleSpec,
    load_csv,
    make_classification,
    make_regression,
    normalize,
    oracle_risk,
    oracle_sampler,
    split,
    synthetic_draw,
    synthetic_true_risk,
)
from .errors import MomentDomainError
from .evaluation import evaluate, train_map
from .laplace import CurvatureSummary, IsotropicGaussian, curvature, gradient_variance, posterior_variance
from .nnet import ArchSpec, Dataset, FlatParams, forward_raw

log = logging.getLogger(__name__)

# stream tags for derive_seed
_TRAIN, _MOMENT, _POSTERIOR, _TEST = 1, 2, 3, 4

SWEEP_COLUMNS = [
    "seed", "lambda", "prior_var", "posterior_var", "h", "sigma_x2", "n_bound", "d",
    "approx_c", "approx_lambda_max",
]
for _k in ("original", "mixed", "approximate"):
    SWEEP_COLUMNS += [f"{_k}_empirical_risk", f"{_k}_kl", f"{_k}_moment", f"{_k}_total", f"{_k}_status"]
SWEEP_COLUMNS += ["original_empirical_risk_se", "original_moment_se",
                  "test_nll", "test_gibbs_nll", "ece", "zero_one", "status"]


# ---------------------------------------------------------------------------
# report IO


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(v: str):
    if v == "":
        return None
    if v in ("True", "False"):
        return v == "True"
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def write_report(path: str | Path, rows: Sequence[dict], columns: Sequence[str], header: Sequence[str] = ()) -> None:
    """CSV with ``#``-prefixed provenance lines; floats written with ``repr`` (exact round trip)."""
    with Path(path).open("w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for c in columns:
                s = _fmt(row.get(c))
                if "," in s or '"' in s:
                    s = '"' + s.replace('"', '""') + '"'
                cells.append(s)
            fh.write(",".join(cells) + "\n")


def read_report(path: str | Path) -> tuple[list[str], list[dict]]:
    """Inverse of :func:`write_report`: (header lines, rows with parsed values)."""
    import csv
    header, body = [], []
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not body:
                header.append(line[2:].rstrip("\n"))
            else:
                body.append(line)
    reader = csv.reader(body)
    cols = next(reader)
    return header, [{c: _parse(v) for c, v in zip(cols, r)} for r in reader]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")


# ---------------------------------------------------------------------------
# sweep


def load_dataset(cfg: SweepConfig) -> Dataset:
    if cfg.source == "csv":
        return load_csv(cfg.csv_path, cfg.target_column, cfg.feature_columns, cfg.task).data
    if cfg.source == "synthetic-regression":
        return make_regression(cfg.synth_n, cfg.synth_seed, cfg.synth_features, cfg.synth_noise)
    return make_classification(cfg.synth_n, cfg.synth_seed, cfg.synth_features, cfg.synth_classes)


@dataclass
class SeedContext:
    """Everything a seed's cells share: splits, prior mean and fitted curvature statistics."""

    seed: int
    splits: object
    w_map: FlatParams
    curv: CurvatureSummary
    sigma_x2: float
    mse_sum: float | None
    w_star_norm2: float


def prepare_seed(cfg: SweepConfig, data: Dataset, seed: int) -> SeedContext:
    splits = split(data, cfg.split_counts, cfg.split_seed)
    if cfg.standardize:
        splits = splits.map(normalize(splits.train))
    task = cfg.effective_task
    n_out = int(data.y.max()) + 1 if task == "classification" else 1
    arch = ArchSpec((data.n_features, *cfg.hidden, n_out),
                    output_head="softmax" if task == "classification" else "identity")
    tcfg = cfg.train
    train_cfg = type(tcfg)(tcfg.step_size, tcfg.epochs, tcfg.batch_size, tcfg.init_scheme, tcfg.init_scale,
                           derive_seed(tcfg.seed, seed, _TRAIN))
    w_map = train_map(arch, splits.train, train_cfg)
    curv = curvature(w_map, splits.trainsuffix)
    sx2 = gradient_variance(w_map, splits.z_true)
    mse = None
    if task == "regression":
        raw = forward_raw(arch, w_map.values, splits.trainsuffix.x)
        mse = float(np.sum((splits.trainsuffix.y - raw[:, 0]) ** 2))
    ws = float(w_map.values @ w_map.values) if cfg.w_star_norm2 == "map" else float(cfg.w_star_norm2)
    return SeedContext(seed, splits, w_map, curv, sx2, mse, ws)


def _error_text(exc: Exception) -> str:
    return f"error: {type(exc).__name__}: {exc}".replace("\n", " ")


def sweep_seed(cfg: SweepConfig, data: Dataset, seed: int) -> list[dict]:
    """All (σ²_π, λ) cells for one seed, in lattice order (σ²_π outer, λ inner)."""
    try:
        ctx = prepare_seed(cfg, data, seed)
    except Exception as exc:  # noqa: BLE001 - recorded in every row of the seed
        msg = _error_text(exc)
        log.warning("seed %d failed during preparation: %s", seed, msg)
        return [{"seed": seed, "lambda": lam, "prior_var": pv, "status": msg}
                for pv in cfg.prior_var_grid for lam in cfg.lambda_grid]
    splits, w = ctx.splits, ctx.w_map
    d, n = w.d, len(splits.trainsuffix)
    risk_fn = dataset_risk_fn(w.arch, splits.z_true)
    sampler = subsample_sampler(splits.z_true)
    rows = []
    for p_idx, pv in enumerate(cfg.prior_var_grid):
        prior = IsotropicGaussian(w, pv)
        c = moment_constraint(n, ctx.sigma_x2, pv)
        excess = excess_error = None
        if {"original", "mixed"} & set(cfg.bounds):
            try:
                excess = excess_risk_draws(n, prior, risk_fn, sampler, cfg.m_prior, cfg.m_data,
                                           derive_seed(cfg.base_seed, seed, p_idx, _MOMENT))
            except Exception as exc:  # noqa: BLE001
                excess_error = _error_text(exc)
        post_seed = derive_seed(cfg.base_seed, seed, p_idx, _POSTERIOR)
        test_seed = derive_seed(cfg.base_seed, seed, p_idx, _TEST)
        for lam in cfg.lambda_grid:
            row = {"seed": seed, "lambda": lam, "prior_var": pv, "h": ctx.curv.h, "sigma_x2": ctx.sigma_x2,
                   "n_bound": n, "d": d, "approx_c": c, "approx_lambda_max": moment_lambda_max(c, cfg.moment_form)}
            errors = []
            try:
                sv = posterior_variance(lam, ctx.curv, pv)
                row["posterior_var"] = sv
                post = IsotropicGaussian(w, sv)
            except Exception as exc:  # noqa: BLE001
                row["status"] = _error_text(exc)
                rows.append(row)
                continue
            for kind in cfg.bounds:
                try:
                    if kind in ("original", "mixed") and excess_error:
                        raise RuntimeError(excess_error)
                    if kind == "original":
                        b = bound_original(post, prior, lam, splits.trainsuffix, cfg.delta, risk_fn, sampler,
                                           m_post=cfg.m_post, rng_seed=(post_seed, 0), excess=excess,
                                           true_set_size=len(splits.z_true))
                        row["original_empirical_risk_se"] = b.estimator_meta["empirical_risk_se"]
                        row["original_moment_se"] = b.estimator_meta["moment_se"]
                    elif kind == "mixed":
                        b = bound_mixed(post, prior, lam, splits.trainsuffix, cfg.delta, risk_fn, sampler,
                                        excess=excess, h=ctx.curv.h, true_set_size=len(splits.z_true))
                    else:
                        if ctx.mse_sum is None:
                            row["approximate_status"] = "unsupported: classification"
                            continue
                        b = bound_approximate(lam, n, d, ctx.curv.h, pv, ctx.mse_sum, ctx.sigma_x2, cfg.sigma_eps2,
                                              ctx.w_star_norm2, 0.0, cfg.delta, cfg.moment_form)
                    row[f"{kind}_empirical_risk"] = b.empirical_risk
                    row[f"{kind}_kl"] = b.kl_term
                    row[f"{kind}_moment"] = b.moment_term
                    row[f"{kind}_total"] = b.total
                    row[f"{kind}_status"] = "ok"
                except MomentDomainError as exc:
                    row[f"{kind}_status"] = f"domain_excluded(c={exc.c!r})"
                except Exception as exc:  # noqa: BLE001
                    row[f"{kind}_status"] = _error_text(exc)
                    errors.append(kind)
            try:
                rep = evaluate(post, splits.test, cfg.m_test, test_seed, cfg.ece_bins)
                row.update(test_nll=rep.nll, test_gibbs_nll=rep.gibbs_nll, ece=rep.ece, zero_one=rep.zero_one)
            except Exception as exc:  # noqa: BLE001
                errors.append("metrics")
                row["metrics_error"] = _error_text(exc)
            row["status"] = "ok" if not errors else "error: " + ",".join(errors)
            rows.append(row)
    return rows


def _spearman(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    ok = np.isfinite(a) & np.isfinite(b)
    if ok.sum() < 3 or np.ptp(a[ok]) == 0 or np.ptp(b[ok]) == 0:
        return float("nan")
    return float(stats.spearmanr(a[ok], b[ok])[0])


def _minmax(v: np.ndarray) -> list[float | None]:
    ok = np.isfinite(v)
    if not ok.any():
        return [None] * len(v)
    lo, hi = v[ok].min(), v[ok].max()
    span = hi - lo
    return [None if not f else (0.0 if span == 0 else float((x - lo) / span)) for x, f in zip(v, ok)]


def summarize_sweep(cfg: SweepConfig, rows: Sequence[dict]) -> dict:
    """Mean ± std over seeds per (λ, σ²_π), min-max normalized curves, and rank correlations."""
    def col(r, key):
        v = r.get(key)
        return float(v) if isinstance(v, (int, float)) and v is not None else math.nan

    metrics = [f"{k}_{t}" for k in cfg.bounds for t in ("empirical_risk", "kl", "moment", "total")]
    metrics += ["test_nll", "test_gibbs_nll", "ece", "zero_one", "posterior_var"]
    by_cell: dict = {}
    for r in rows:
        by_cell.setdefault((r["prior_var"], r["lambda"]), []).append(r)
    per_prior = []
    for pv in cfg.prior_var_grid:
        cells = []
        for lam in cfg.lambda_grid:
            group = by_cell.get((pv, lam), [])
            entry = {"lambda": lam, "n_rows": len(group)}
            for m in metrics:
                vals = np.array([col(r, m) for r in group])
                fin = vals[np.isfinite(vals)]
                entry[f"{m}_mean"] = float(fin.mean()) if fin.size else None
                entry[f"{m}_std"] = float(fin.std(ddof=1)) if fin.size > 1 else None
                entry[f"{m}_n"] = int(fin.size)
            cells.append(entry)
        for m in ("original_total", "test_nll"):
            if f"{m}_mean" in cells[0]:
                norm = _minmax(np.array([c[f"{m}_mean"] if c[f"{m}_mean"] is not None else math.nan
                                         for c in cells]))
                for c, v in zip(cells, norm):
                    c[f"{m}_minmax"] = v
        spearman = []
        if "original" in cfg.bounds:
            for s in range(cfg.n_seeds):
                seed_rows = [by_cell.get((pv, lam), []) for lam in cfg.lambda_grid]
                a = [next((col(r, "original_total") for r in g if r["seed"] == s), math.nan) for g in seed_rows]
                b = [next((col(r, "test_nll") for r in g if r["seed"] == s), math.nan) for g in seed_rows]
                spearman.append(_spearman(a, b))
        sp = np.array(spearman, float)
        per_prior.append({
            "prior_var": pv,
            "cells": cells,
            "spearman_original_vs_test_nll": [None if not np.isfinite(x) else x for x in spearman],
            "spearman_mean": float(np.nanmean(sp)) if np.isfinite(sp).any() else None,
            "approx_lambda_max_mean": _mean([col(r, "approx_lambda_max") for g in
                                             [by_cell.get((pv, lam), []) for lam in cfg.lambda_grid] for r in g]),
        })
    n_ok = sum(1 for r in rows if r.get("status") == "ok")
    sp_all = [p["spearman_mean"] for p in per_prior if p["spearman_mean"] is not None]
    return {
        "n_rows": len(rows),
        "n_rows_ok": n_ok,
        "nll_units": "mean per-sample NLL on standardized targets" if cfg.standardize else "mean per-sample NLL",
        "normalization": "min-max over the lambda grid of the seed-averaged curve (our convention)",
        "spearman_mean_over_priors": float(np.mean(sp_all)) if sp_all else None,
        "per_prior_var": per_prior,
        "config": cfg.resolved_lines(),
    }


def _mean(vals):
    v = np.array([x for x in vals if np.isfinite(x)])
    return float(v.mean()) if v.size else None


def run_sweep(cfg: SweepConfig, write: bool = True) -> tuple[list[dict], dict]:
    """Full λ × σ²_π × seed lattice.  Rows come back in (seed, σ²_π, λ) order."""
    data = load_dataset(cfg)
    split(data, cfg.split_counts, cfg.split_seed)  # fail fast on an undersized dataset
    seeds = list(range(cfg.n_seeds))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_seed = list(pool.map(sweep_seed, [cfg] * len(seeds), [data] * len(seeds), seeds))
    else:
        per_seed = [sweep_seed(cfg, data, s) for s in seeds]
    rows = [r for chunk in per_seed for r in chunk]
    summary = summarize_sweep(cfg, rows)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["coldpac sweep report", "rows: one per (seed, prior_var, lambda)",
                  "nll: " + summary["nll_units"]] + [f"config {line}" for line in cfg.resolved_lines()]
        write_report(out / "sweep.csv", rows, SWEEP_COLUMNS, header)
        _write_json(out / "summary.json", summary)
    return rows, summary


# ---------------------------------------------------------------------------
# corollary demo

COROLLARY_COLUMNS = ["lambda", "empirical_risk", "moment", "kl", "total", "status"]


def run_corollary_demo(lambda_grid: Sequence[float], delta: float, out_path: str | Path | None = None) -> dict:
    """Evaluate the simplified one-dimensional bound on a grid; out-of-domain points are marked."""
    rows = []
    for lam in lambda_grid:
        try:
            pt = corollary1_point(float(lam), delta)
            rows.append({"lambda": pt.lam, "empirical_risk": pt.empirical_risk, "moment": pt.moment,
                         "kl": pt.kl, "total": pt.total, "status": "ok"})
        except MomentDomainError:
            rows.append({"lambda": float(lam), "status": "domain_excluded"})
    ok = [r for r in rows if r["status"] == "ok"]
    summary: dict = {"delta": delta, "n_points": len(rows), "n_in_domain": len(ok)}
    if ok:
        best = min(range(len(ok)), key=lambda i: ok[i]["total"])
        summary.update(argmin_lambda=ok[best]["lambda"], min_total=ok[best]["total"],
                       interior_minimum=0 < best < len(ok) - 1 or len(ok) == 1)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_report(out_path, rows, COROLLARY_COLUMNS, [f"corollary curve, delta = {delta!r}"])
        _write_json(out_path.with_suffix(".json"), summary)
    summary["rows"] = rows
    return summary


# ---------------------------------------------------------------------------
# validity study on the synthetic oracle

VALIDITY_COLUMNS = ["trial", "posterior_var", "empirical_risk", "kl", "moment", "total", "true_gibbs_risk",
                    "holds", "empirical_risk_se", "moment_se"]


def tempered_posterior(spec: SyntheticOracleSpec, data: Dataset, lam: float, prior: IsotropicGaussian
                       ) -> IsotropicGaussian:
    """Isotropic Gaussian minimizing E_ρ L̂ + KL/(λn) for the linear oracle model."""
    X, y = data.x, data.y
    a = 1.0 / (lam * prior.variance)
    mean = np.linalg.solve(X.T @ X + a * np.eye(spec.d), X.T @ y + a * prior.mean.values)
    h = float(np.sum(X * X))
    sv = posterior_variance(lam, CurvatureSummary(h, len(data), spec.d, "regression"), prior.variance)
    return IsotropicGaussian(FlatParams(spec.arch, mean), sv)


def run_validity_study(spec: SyntheticOracleSpec, lam: float, prior_var: float, delta: float, trials: int, *,
                       m_post: int = 100, m_prior: int = 10, m_data: int = 10, z_true_size: int = 2000,
                       posterior: str = "laplace", risk: str = "ztrue", out_dir: str | Path | None = None,
                       header: Sequence[str] = ()) -> dict:
    """Fraction of independent dataset draws on which ``bound_original`` upper-bounds the exact Gibbs risk.

    ``posterior="oracle"`` uses a near-degenerate posterior at w_*; ``risk="exact"``
    replaces the Z_true approximation of L_D by the analytic risk.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    prior = IsotropicGaussian(FlatParams.zeros(spec.arch), prior_var)
    sampler = oracle_sampler(spec)
    rows = []
    for t in range(trials):
        data = synthetic_draw(spec, t)
        if posterior == "oracle":
            post = IsotropicGaussian(spec.w_star, 1e-12)
        else:
            post = tempered_posterior(spec, data, lam, prior)
        if risk == "exact":
            risk_fn = lambda W: oracle_risk(spec, W)  # noqa: E731
        else:
            risk_fn = dataset_risk_fn(spec.arch, synthetic_draw(spec, 1_000_000 + t, z_true_size))
        b = bound_original(post, prior, lam, data, delta, risk_fn, sampler, m_post=m_post, m_prior=m_prior,
                           m_data=m_data, rng_seed=derive_seed(spec.seed, t, 7))
        truth = synthetic_true_risk(spec, post)
        rows.append({"trial": t, "posterior_var": post.variance, "empirical_risk": b.empirical_risk,
                     "kl": b.kl_term, "moment": b.moment_term, "total": b.total, "true_gibbs_risk": truth,
                     "holds": bool(b.total >= truth), "empirical_risk_se": b.estimator_meta["empirical_risk_se"],
                     "moment_se": b.estimator_meta["moment_se"]})
    k = sum(r["holds"] for r in rows)
    frac = k / trials
    # one-sided 95% Clopper-Pearson lower limit on the true holding probability
    lower = float(stats.beta.ppf(0.05, k, trials - k + 1)) if k > 0 else 0.0
    summary = {
        "trials": trials, "holds": k, "holding_fraction": frac, "nominal": 1 - delta,
        "clopper_pearson_lower_95": lower,
        "note": (f"{k}/{trials} draws satisfied the bound; with 95% confidence the holding probability "
                 f"is at least {lower:.4f} (nominal {1 - delta:.4f})"),
        "lambda": lam, "prior_var": prior_var, "delta": delta, "posterior": posterior, "risk": risk,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(out / "validity.csv", rows, VALIDITY_COLUMNS, ["coldpac validity study", *header])
        _write_json(out / "validity.json", summary)
    summary["rows"] = rows
    return summary


def validity_from_config(cfg: ValidityConfig, write: bool = True) -> dict:
    spec = SyntheticOracleSpec.create(cfg.d, cfg.sigma_x2, cfg.sigma_eps2, cfg.n, cfg.oracle_seed,
                                      w_star_norm=cfg.w_star_norm)
    header = [f"config {k} = {v!r}" for k, v in cfg.__dict__.items()]
    return run_validity_study(spec, cfg.lam, cfg.prior_var, cfg.delta, cfg.trials, m_post=cfg.m_post,
                              m_prior=cfg.m_prior, m_data=cfg.m_data, z_true_size=cfg.z_true_size,
                              posterior=cfg.posterior, risk=cfg.risk,
                              out_dir=cfg.output_dir if write else None, header=header)
