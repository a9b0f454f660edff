"""Command-line entry point: ``coldpac {sweep,corollary,validity,synth-gen}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_sweep_config, load_synthgen_config, load_validity_config, parse_grid
from .data import SyntheticOracleSpec, make_classification, make_regression, synthetic_draw, write_csv
from .errors import ConfigError, DataError
from .experiments import run_corollary_demo, run_sweep, validity_from_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ALL_FAILED = 0, 1, 2, 3

log = logging.getLogger("coldpac")


def _cmd_sweep(args) -> int:
    cfg = load_sweep_config(args.config)
    rows, summary = run_sweep(cfg)
    print(f"wrote {len(rows)} rows to {Path(cfg.output_dir) / 'sweep.csv'} ({summary['n_rows_ok']} ok)")
    if rows and summary["n_rows_ok"] == 0:
        return EXIT_ALL_FAILED
    return EXIT_OK


def _cmd_corollary(args) -> int:
    grid = parse_grid(args.grid)
    if not 0 < args.delta <= 1:
        raise ConfigError("delta must lie in (0, 1]")
    summary = run_corollary_demo(grid, args.delta, args.out)
    print(json.dumps({k: v for k, v in summary.items() if k != "rows"}, sort_keys=True))
    return EXIT_OK if summary["n_in_domain"] else EXIT_ALL_FAILED


def _cmd_validity(args) -> int:
    cfg = load_validity_config(args.config)
    summary = validity_from_config(cfg)
    print(summary["note"])
    return EXIT_OK


def _cmd_synth_gen(args) -> int:
    cfg = load_synthgen_config(args.config)
    if cfg.kind == "regression":
        data = make_regression(cfg.n, cfg.seed, cfg.n_features, cfg.noise)
    elif cfg.kind == "classification":
        data = make_classification(cfg.n, cfg.seed, cfg.n_features, cfg.n_classes)
    else:
        spec = SyntheticOracleSpec.create(cfg.d, cfg.sigma_x2, cfg.sigma_eps2, cfg.n, cfg.seed,
                                          w_star_norm=cfg.w_star_norm)
        data = synthetic_draw(spec, 0)
    Path(cfg.path).parent.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.path, data)
    print(f"wrote {len(data)} samples to {cfg.path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coldpac", description="PAC-Bayes bounds for tempered Laplace posteriors.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="λ × σ²_π sweep of bounds and test metrics")
    s.add_argument("config", help="INI config file")
    s.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("corollary", help="one-dimensional bound curve in closed form")
    c.add_argument("--delta", type=float, default=0.05)
    c.add_argument("--grid", default="linspace:0.005:0.495:1000",
                   help="logspace:a:b:n, linspace:a:b:n or a comma list")
    c.add_argument("--out", default="corollary.csv")
    c.set_defaults(func=_cmd_corollary)

    v = sub.add_parser("validity", help="coverage of the bound on the synthetic linear oracle")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validity)

    g = sub.add_parser("synth-gen", help="write a synthetic dataset as CSV")
    g.add_argument("config")
    g.set_defaults(func=_cmd_synth_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
