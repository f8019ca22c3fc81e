"""Parametric bootstrap MSE estimation for quantile predictors.

Three replicate worlds are supported: census populations with tilted errors
(census-drm), census populations with normal errors (census-ner), and
sampled-units-only pseudo-populations with tilted errors (nocensus-drm).
Within every replicate all model parameters are re-estimated from the
replicate sample; census variants average squared differences between
predicted and replicate-true quantiles, the no-census variant takes their
sample variance.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cdfs import empirical_quantiles, invert_shifted_step
from .data import AreaSample, CensusFrame, SurveySample
from .drm import DrmFit, fit_drm, gk_cdf
from .errors import (
    ConfigError,
    DataValidationError,
    DegenerateDistributionError,
    NonConvergenceError,
    SingularDesignError,
)
from .methods import CENSUS_METHODS, PredictorContext, normalize_method
from .ner import NerFit, fit_ner_mle, linear_predictor
from .rng import RngStream

VARIANTS = ("census-drm", "census-ner", "nocensus-drm")

_REPLICATE_ERRORS = (NonConvergenceError, SingularDesignError, DegenerateDistributionError)


@dataclass(frozen=True)
class BootstrapPlan:
    """What to bootstrap: replicate count, world variant, target quantiles,
    the predictor under assessment, and the seed owning the streams."""

    B: int
    variant: str
    alphas: tuple[float, ...]
    method: str
    seed: int = 0

    def __post_init__(self):
        if self.B < 2:
            raise ConfigError(f"bootstrap needs B >= 2, got {self.B}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "method", normalize_method(self.method))
        if self.variant == "nocensus-drm" and self.method in CENSUS_METHODS:
            raise ConfigError(f"method {self.method!r} needs a census world, not {self.variant}")


@dataclass(frozen=True)
class MseReport:
    """Per-(area, alpha) bootstrap MSE estimates with replicate diagnostics."""

    method: str
    variant: str
    B: int
    area_ids: tuple[str, ...]
    alphas: np.ndarray
    mse: np.ndarray  # (K, A)
    failures: tuple[tuple[int, str], ...]

    def rows(self):
        for k, aid in enumerate(self.area_ids):
            for a, alpha in enumerate(self.alphas):
                yield aid, float(alpha), float(self.mse[k, a]), len(self.failures)


def sample_gk(gk, count: int, rng: RngStream) -> np.ndarray:
    """iid draws from a weighted step CDF by inverse transform."""
    return _draw_step(gk.values, gk._cum, rng.generator().random(count))


def _draw_step(values, cum, u):
    idx = np.minimum(np.searchsorted(cum, u * cum[-1], side="left"), values.size - 1)
    return values[idx]


@dataclass(frozen=True)
class _World:
    """Frozen per-plan state shared by all replicates."""

    plan: BootstrapPlan
    survey: SurveySample
    census: CensusFrame | None
    ner: NerFit
    drm: DrmFit | None
    basis: object
    baseline: str | None
    mr_draws: int
    stream: RngStream
    xb: tuple[np.ndarray, ...]  # per-area linear predictor over the world units
    gk_values: np.ndarray | None  # shared support of the tilted error CDFs
    gk_cums: tuple[np.ndarray, ...] | None  # per-area cumulative weights
    links: tuple[np.ndarray, ...] | None  # sampled positions per area (census worlds)
    x_at_link: tuple[np.ndarray, ...] | None


def _build_world(plan, survey, census, ner, drm, basis, baseline, mr_draws, stream) -> _World:
    census_world = plan.variant.startswith("census")
    if census_world:
        if census is None:
            raise ConfigError(f"variant {plan.variant!r} needs a census")
        census.validate_against(survey)
    if plan.variant.endswith("drm"):
        if drm is None:
            drm = fit_drm(survey, basis, baseline=baseline)
    if ner is None:
        ner = fit_ner_mle(survey, census, warn_sample_means=False)
    xb = []
    for a in survey.areas:
        units = census.require_link(a.area_id).x if census_world else a.x
        if plan.variant == "census-ner":
            xb.append(linear_predictor(units, ner.beta, ner.intercept))
        else:
            xb.append(units @ drm.beta_ls)
    gk_values = gk_cums = None
    if plan.variant.endswith("drm"):
        cdfs = [gk_cdf(drm, aid) for aid in survey.area_ids]
        gk_values = cdfs[0].values
        gk_cums = tuple(c._cum for c in cdfs)
    links = x_at_link = None
    if census_world:
        cas = [census.require_link(a.area_id) for a in survey.areas]
        links = tuple(ca.sample_link for ca in cas)
        x_at_link = tuple(ca.x[ca.sample_link] for ca in cas)
    return _World(
        plan=plan, survey=survey, census=census if census_world else None,
        ner=ner, drm=drm, basis=basis, baseline=baseline, mr_draws=mr_draws,
        stream=stream, xb=tuple(xb), gk_values=gk_values, gk_cums=gk_cums,
        links=links, x_at_link=x_at_link,
    )


def _replicate(world: _World, b: int, predict_override=None) -> np.ndarray:
    """One bootstrap replicate: build the world, resample, refit, predict.
    Returns predicted-minus-true quantiles, shape (K, A)."""
    plan = world.plan
    survey = world.survey
    stream = world.stream.child(b)
    gen = stream.child(0).generator()
    alphas = np.asarray(plan.alphas)
    sigma_v = math.sqrt(max(world.ner.sigma_v2, 0.0))
    sigma_e = math.sqrt(max(world.ner.sigma_e2, 0.0))
    nu_star = gen.normal(0.0, sigma_v, size=len(survey.areas))
    y_star = []
    for k, a in enumerate(survey.areas):
        size = world.xb[k].size
        if plan.variant == "census-ner":
            e = gen.normal(0.0, sigma_e, size=size)
        else:
            e = _draw_step(world.gk_values, world.gk_cums[k], gen.random(size))
        y_star.append(world.xb[k] + nu_star[k] + e)
    if plan.variant == "nocensus-drm":
        # No realizable finite population without census x: the replicate truth
        # is the generating law itself, the tilted error CDF shifted by the
        # unit predictors and the realized area effect.
        truth = invert_shifted_step(
            world.gk_values,
            np.stack(world.gk_cums),
            [world.xb[k] + nu_star[k] for k in range(len(survey.areas))],
            alphas,
        )
    else:
        truth = np.stack([empirical_quantiles(yk, alphas) for yk in y_star])

    if plan.variant.startswith("census"):
        areas = [
            AreaSample(a.area_id, world.x_at_link[k], y_star[k][world.links[k]])
            for k, a in enumerate(survey.areas)
        ]
        sample_b = SurveySample(tuple(areas))
        census_b = world.census
    else:
        areas = [
            AreaSample(a.area_id, a.x, y_star[k]) for k, a in enumerate(survey.areas)
        ]
        sample_b = SurveySample(tuple(areas))
        census_b = None

    if predict_override is not None:
        predicted = predict_override(sample_b, census_b, truth, stream)
    else:
        ctx = PredictorContext(
            sample_b, census_b, basis=world.basis, baseline=world.baseline,
            mr_draws=world.mr_draws, rng=stream.child(1), warn=False,
            drm_start=None if world.drm is None else world.drm.theta,
        )
        predicted = ctx.table(plan.method, alphas).values
    return predicted - truth


def _replicate_chunk(args):
    world, bs = args
    out = []
    for b in bs:
        try:
            out.append((b, _replicate(world, b), None))
        except _REPLICATE_ERRORS as e:
            out.append((b, None, f"{type(e).__name__}: {e}"))
    return out


def bootstrap_mse(
    plan: BootstrapPlan,
    survey: SurveySample,
    census: CensusFrame | None = None,
    *,
    ner: NerFit | None = None,
    drm: DrmFit | None = None,
    basis="signroot",
    baseline: str | None = None,
    mr_draws: int = 100,
    stream: RngStream | None = None,
    threads: int = 1,
    predict_override=None,
) -> MseReport:
    """Bootstrap MSE of a quantile predictor under the plan's world variant.

    Replicate b depends only on (seed, b) and the fitted inputs, so results
    are identical for any thread count and replicate order.  Replicates that
    fail to converge are dropped with a warning when under 5% of B; more
    raises an aggregate error.
    """
    if stream is None:
        stream = RngStream(plan.seed)
    world = _build_world(plan, survey, census, ner, drm, basis, baseline, mr_draws, stream)
    if predict_override is not None:
        results = []
        for b in range(plan.B):
            try:
                results.append((b, _replicate(world, b, predict_override), None))
            except _REPLICATE_ERRORS as e:
                results.append((b, None, f"{type(e).__name__}: {e}"))
    elif threads > 1:
        chunk = max(1, plan.B // (threads * 4))
        chunks = [(world, list(range(i, min(i + chunk, plan.B)))) for i in range(0, plan.B, chunk)]
        results = []
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(_replicate_chunk, chunks):
                results.extend(part)
    else:
        results = _replicate_chunk((world, list(range(plan.B))))
    results.sort(key=lambda r: r[0])

    failures = tuple((b, msg) for b, _, msg in results if msg is not None)
    diffs = [d for _, d, msg in results if msg is None]
    if len(failures) > 0.05 * plan.B:
        raise NonConvergenceError(
            f"{len(failures)} of {plan.B} bootstrap replicates failed", trace=failures
        )
    if failures:
        warnings.warn(
            f"dropped {len(failures)} failed bootstrap replicate(s) out of {plan.B}",
            stacklevel=2,
        )
    if len(diffs) < 2:
        raise DataValidationError("fewer than 2 successful bootstrap replicates")
    stacked = np.stack(diffs)  # (B_ok, K, A)
    if plan.variant == "nocensus-drm":
        mse = stacked.var(axis=0, ddof=1)
    else:
        mse = np.mean(stacked**2, axis=0)
    return MseReport(
        method=plan.method, variant=plan.variant, B=plan.B,
        area_ids=survey.area_ids, alphas=np.asarray(plan.alphas),
        mse=mse, failures=failures,
    )


def bootstrap_variant(method: str, census_available: bool) -> str:
    """Default world variant for a predictor, used by the simulation bench."""
    method = normalize_method(method)
    if method == "el":
        return "nocensus-drm"
    if method in ("ner", "eb1", "eb2", "mr"):
        if not census_available:
            raise ConfigError(f"bootstrap for {method!r} needs a census world")
        return "census-ner"
    if method in ("ebel1", "ebel2", "mq"):
        return "census-drm"
    # dir: prefer the full tilted-census world when a census exists
    return "census-drm" if census_available else "nocensus-drm"
