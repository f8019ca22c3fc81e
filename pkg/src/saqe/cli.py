"""Command-line front end: fit, predict, bootstrap, simulate, shadow.

Every run is reproducible from its arguments; `simulate` writes a
run-metadata.json that can be fed back through --config to replay the run
byte-for-byte.  Exit codes: 0 ok, 2 configuration error, 3 numeric
non-convergence, 4 data validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .bootstrap import VARIANTS, BootstrapPlan, bootstrap_mse, bootstrap_variant
from .data import CONFIG_KEYS, load_census_csv, load_config, load_survey_csv, write_survey_csv
from .drm import BASES, fit_drm
from .errors import (
    ConfigError,
    DataValidationError,
    DegenerateDistributionError,
    NonConvergenceError,
    SaqeError,
)
from .methods import ALL_METHODS, CENSUS_METHODS, PredictorContext, normalize_method
from .ner import fit_ner_mle
from .rng import RngStream
from .simulation import BINOM_P_MODES, SCENARIOS, ScenarioSpec, run_experiment, shadow_population

_EXIT_CODES = (
    (ConfigError, 2),
    (NonConvergenceError, 3),
    (DegenerateDistributionError, 3),
    (DataValidationError, 4),
)


def _floats(text) -> list[float]:
    try:
        if isinstance(text, (list, tuple)):
            vals = [float(t) for t in text]
        else:
            vals = [float(t) for t in str(text).split(",") if t.strip()]
    except (TypeError, ValueError):
        raise ConfigError(f"invalid number list {text!r}") from None
    if not vals or any(not 0.0 < v < 1.0 for v in vals):
        raise ConfigError(f"alphas must lie in (0, 1): {text!r}")
    return vals


def _names(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _schema(cfg: dict) -> dict:
    return {k: cfg[k] for k in ("area_col", "y_col", "x_cols", "sampled_col", "size_col") if k in cfg}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """Config file supplies any flag not given explicitly on the command line."""
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(parser_defaults) - set(CONFIG_KEYS) - {"command", "version"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, default in parser_defaults.items():
        if getattr(args, key, None) == default and key in cfg:
            setattr(args, key, cfg[key])
    return cfg


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_fit_ner(args, cfg):
    sample = load_survey_csv(args.survey, _schema(cfg))
    census = load_census_csv(args.census, _schema(cfg)) if args.census else None
    if census is not None:
        census.validate_against(sample)
    fit = fit_ner_mle(sample, census)
    payload = {
        "type": "ner-fit", "version": __version__,
        "area_ids": list(fit.area_ids), "intercept": fit.intercept,
        "beta": fit.beta, "sigma_v2": fit.sigma_v2, "sigma_e2": fit.sigma_e2,
        "gamma": fit.gamma, "nu": fit.nu, "eblup_mean": fit.eblup_mean,
        "loglik": fit.loglik, "boundary_sigma_v": fit.boundary_sigma_v,
        "boundary_sigma_e": fit.boundary_sigma_e, "xbar_source": fit.xbar_source,
        "profile_phi": fit.profile_phi, "profile_grad": fit.profile_grad,
    }
    with open(args.out, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1)
    return 0


def _cmd_fit_drm(args, cfg):
    sample = load_survey_csv(args.survey, _schema(cfg))
    baseline = args.baseline or cfg.get("baseline_area")
    fit = fit_drm(sample, args.basis, baseline=baseline)
    payload = {
        "type": "drm-fit", "version": __version__, "basis": fit.tilt.basis_name,
        "area_ids": list(fit.area_ids), "baseline": fit.area_ids[fit.tilt.baseline],
        "beta_ls": fit.beta_ls, "theta": fit.theta, "p_base": fit.p_base,
        "loglik_dual": fit.loglik_dual, "grad_norm": fit.tilt.grad_norm,
        "nu_hat": fit.nu_hat,
        "residuals": {aid: r for aid, r in zip(fit.area_ids, fit.residuals)},
        "trace": [list(t) for t in fit.tilt.trace],
        "weight_sums": fit.tilt.weight_sums,
    }
    with open(args.out, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1)
    return 0


def _cmd_predict(args, cfg):
    sample = load_survey_csv(args.survey, _schema(cfg))
    census = load_census_csv(args.census, _schema(cfg)) if args.census else None
    if census is not None:
        census.validate_against(sample)
    method = normalize_method(args.method)
    if method in CENSUS_METHODS and census is None:
        raise ConfigError(f"method {method!r} needs --census")
    alphas = _floats(args.alphas)
    ctx = PredictorContext(
        sample, census, basis=args.basis,
        baseline=args.baseline or cfg.get("baseline_area"),
        mr_draws=args.L, rng=RngStream(args.seed),
    )
    table = ctx.table(method, alphas)
    _write_csv(args.out, ["area_id", "alpha", "quantile", "method"],
               ((aid, alpha, q, method) for aid, alpha, q in table.rows()))
    return 0


def _cmd_mse(args, cfg):
    sample = load_survey_csv(args.survey, _schema(cfg))
    census = load_census_csv(args.census, _schema(cfg)) if args.census else None
    if census is not None:
        census.validate_against(sample)
    method = normalize_method(args.method)
    variant = args.variant or bootstrap_variant(method, census_available=census is not None)
    plan = BootstrapPlan(B=args.B, variant=variant, alphas=tuple(_floats(args.alphas)),
                         method=method, seed=args.seed)
    report = bootstrap_mse(
        plan, sample, census, basis=args.basis,
        baseline=args.baseline or cfg.get("baseline_area"),
        mr_draws=args.L, threads=args.threads,
    )
    _write_csv(args.out, ["area_id", "alpha", "mse", "failures"], report.rows())
    return 0


def _cmd_simulate(args, cfg):
    spec = ScenarioSpec(
        scenario=args.scenario, beta_scale=args.beta_scale, areas=args.areas,
        unit_count=args.Nk, sample_size=args.nk, repetitions=args.reps,
        seed=args.seed, binom_p=args.binom_p,
    )
    methods = [normalize_method(m) for m in _names(args.methods)]
    boot_methods = [normalize_method(m) for m in _names(args.bootstrap_methods)]
    alphas = _floats(args.alphas)
    os.makedirs(args.out, exist_ok=True)

    def progress(done, total):
        step = max(1, total // 10)
        if done % step == 0 or done == total:
            print(f"repetition {done}/{total}", file=sys.stderr)

    result = run_experiment(
        spec, methods, alphas, bootstrap_b=args.bootstrap_B,
        bootstrap_methods=boot_methods, mr_draws=args.L,
        threads=args.threads, progress=progress if args.verbose else None,
    )
    _write_csv(os.path.join(args.out, "amse.csv"),
               ["method", "alpha", "amse"], result.amse_rows())
    _write_csv(os.path.join(args.out, "area_mse.csv"),
               ["method", "area_id", "alpha", "mse"], result.area_rows())
    _write_csv(os.path.join(args.out, "ratios.csv"),
               ["method", "alpha", "ratio"], result.ratio_rows())
    metadata = {
        "command": "simulate", "version": __version__,
        "scenario": spec.scenario, "beta_scale": spec.beta_scale,
        "areas": spec.areas, "Nk": spec.unit_count, "nk": spec.sample_size,
        "reps": spec.repetitions, "seed": spec.seed, "binom_p": spec.binom_p,
        "methods": methods, "alphas": alphas,
        "bootstrap_B": args.bootstrap_B, "bootstrap_methods": boot_methods,
        "L": args.L,
    }
    with open(os.path.join(args.out, "run-metadata.json"), "w") as fh:
        json.dump(_jsonable(metadata), fh, indent=1)
    return 0


def _cmd_shadow(args, cfg):
    sample = load_survey_csv(args.survey, _schema(cfg))
    shadow = shadow_population(sample, RngStream(args.seed))
    write_survey_csv(shadow, args.out, _schema(cfg))
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saqe",
        description="Small-area quantile estimation: model fits, CDF predictors, "
        "bootstrap MSEs, and a simulation bench.",
    )
    parser.add_argument("--version", action="version", version=f"saqe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, census=True):
        p.set_defaults(_parser=p)
        p.add_argument("--survey", required=True, help="survey CSV (area, y, covariates)")
        if census:
            p.add_argument("--census", help="census CSV (area, covariates[, sampled])")
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--basis", default="signroot", choices=sorted(BASES))
        p.add_argument("--baseline", help="baseline area id (default: first area)")

    p = sub.add_parser("fit-ner", help="fit the nested-error regression model")
    common(p)
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("fit-drm", help="fit the density-ratio tilts on pooled residuals")
    common(p, census=False)
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("predict", help="per-area quantile predictions of one method")
    common(p)
    p.add_argument("--method", required=True, help="|".join(ALL_METHODS))
    p.add_argument("--alphas", default="0.05,0.25,0.5,0.75,0.95")
    p.add_argument("--L", type=int, default=100, help="Monte-Carlo draws for mr")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("mse", help="bootstrap MSE of one predictor")
    common(p)
    p.add_argument("--method", required=True)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--alphas", default="0.05,0.25,0.5,0.75,0.95")
    p.add_argument("--variant", choices=VARIANTS, help="default: inferred from method")
    p.add_argument("--L", type=int, default=100)
    p.add_argument("--threads", type=int, default=os.cpu_count())
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("simulate", help="repeated-sampling bench on synthetic populations")
    p.set_defaults(_parser=p)
    p.add_argument("--config", help="JSON config (e.g. a previous run-metadata.json)")
    p.add_argument("--scenario", default="i", choices=SCENARIOS)
    p.add_argument("--beta-scale", dest="beta_scale", type=float, default=1.5)
    p.add_argument("--areas", type=int, default=20)
    p.add_argument("--Nk", type=int, default=1000)
    p.add_argument("--nk", type=int, default=30)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--binom-p", dest="binom_p", default="z-clamped", choices=BINOM_P_MODES)
    p.add_argument("--methods", default="dir,ner,el,mr,ebel")
    p.add_argument("--alphas", default="0.05,0.25,0.5,0.75,0.95")
    p.add_argument("--bootstrap-B", dest="bootstrap_B", type=int, default=0)
    p.add_argument("--bootstrap-methods", dest="bootstrap_methods", default="")
    p.add_argument("--L", type=int, default=100)
    p.add_argument("--threads", type=int, default=os.cpu_count())
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("shadow", help="shadow population from a real survey")
    p.set_defaults(_parser=p)
    p.add_argument("--survey", required=True)
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")

    return parser


_COMMANDS = {
    "fit-ner": _cmd_fit_ner,
    "fit-drm": _cmd_fit_drm,
    "predict": _cmd_predict,
    "mse": _cmd_mse,
    "simulate": _cmd_simulate,
    "shadow": _cmd_shadow,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = args._parser
    defaults = {k: sub.get_default(k) for k in vars(args) if k not in ("command", "_parser")}
    try:
        cfg = _merge_config(args, defaults)
        return _COMMANDS[args.command](args, cfg)
    except SaqeError as e:
        print(f"saqe {args.command}: {e}", file=sys.stderr)
        for exc, code in _EXIT_CODES:
            if isinstance(e, exc):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
