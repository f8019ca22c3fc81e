"""Finite-population scenarios, repeated-sampling experiments, and shadow
populations built from a real survey.

Populations follow a unit-level linear model with an area effect and one of
four error laws: normal, symmetric normal mixture, and two mirrored skewed
mixtures.  Each repetition generates a fresh population, draws a simple
random sample per area, runs the requested predictors, and (optionally)
bootstrap MSE estimates, reducing everything deterministically by
repetition index.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .bootstrap import BootstrapPlan, bootstrap_mse, bootstrap_variant
from .cdfs import QuantileTable, amse, area_mse, empirical_quantiles, trimmed_ratio
from .data import AreaSample, CensusArea, CensusFrame, SurveySample
from .errors import ConfigError, DataValidationError, NonConvergenceError
from .methods import PredictorContext, normalize_method
from .ner import fit_ner_mle, linear_predictor
from .rng import RngStream

BETA0 = np.array([0.019, 0.022, 0.074])
SCENARIOS = ("i", "ii", "iii", "iv")
#: skewed/symmetric error mixtures: (weight of first component, mean factors)
_MIXTURES = {
    "ii": (0.5, -1.0 / 6.0, 1.0 / 6.0),
    "iii": (0.1, -1.0 / 2.0, 1.0 / 18.0),
    "iv": (0.9, -1.0 / 18.0, 1.0 / 2.0),
}
BINOM_P_MODES = ("z-clamped", "raw-clamped")


@dataclass(frozen=True)
class ScenarioSpec:
    """Population design for the simulation bench."""

    scenario: str
    beta_scale: float = 1.5
    areas: int = 20
    unit_count: int = 1000  # N_k
    sample_size: int = 30  # n_k
    repetitions: int = 200
    seed: int = 0
    binom_p: str = "z-clamped"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.binom_p not in BINOM_P_MODES:
            raise ConfigError(f"binom_p must be one of {BINOM_P_MODES}")
        if min(self.areas, self.unit_count, self.sample_size, self.repetitions) < 1:
            raise ConfigError("areas, unit_count, sample_size, repetitions must be positive")
        if self.sample_size > self.unit_count:
            raise ConfigError("sample_size cannot exceed unit_count")


@dataclass(frozen=True)
class Population:
    """One generated finite population."""

    census: CensusFrame
    y: tuple[np.ndarray, ...]  # per-area responses, census row order
    nu: np.ndarray  # (K,) area effects
    mu: np.ndarray  # (K,) mixture location scales

    def true_quantiles(self, alphas) -> np.ndarray:
        alphas = np.asarray(alphas, dtype=float).ravel()
        return np.stack([empirical_quantiles(yk, alphas) for yk in self.y])


def gen_population(spec: ScenarioSpec, rng: RngStream) -> Population:
    """Generate one finite population for the given scenario."""
    gen = rng.generator()
    beta = spec.beta_scale * BETA0
    census_areas, ys, nus, mus = [], [], [], []
    for k in range(spec.areas):
        n = spec.unit_count
        x1 = gen.uniform(0.0, 50.0, n)
        z = gen.beta(0.6, 0.6, n)
        x2 = 50.0 * z
        raw = z if spec.binom_p == "z-clamped" else x2
        p = np.clip(0.6 + 0.1 * raw, 0.01, 0.99)
        x3 = gen.binomial(12, p).astype(float)
        nu_k = gen.normal(8.0, 1.0)
        mu_k = gen.uniform(4.5, 6.0)
        if spec.scenario == "i":
            eps = gen.normal(0.0, math.sqrt(2.0), n)
        else:
            w1, f1, f2 = _MIXTURES[spec.scenario]
            first = gen.random(n) < w1
            means = np.where(first, f1 * mu_k, f2 * mu_k)
            eps = means + gen.normal(0.0, 1.0, n)
        x = np.column_stack([x1, x2, x3])
        ys.append(x @ beta + nu_k + eps)
        nus.append(nu_k)
        mus.append(mu_k)
        census_areas.append(CensusArea(f"a{k:02d}", n, xbar=x.mean(axis=0), x=x))
    return Population(
        census=CensusFrame(tuple(census_areas)),
        y=tuple(ys),
        nu=np.array(nus),
        mu=np.array(mus),
    )


def draw_sample(pop: Population, n_k: int, rng: RngStream):
    """Simple random sample without replacement in each area; returns the
    survey plus a census frame carrying the sample_link."""
    gen = rng.generator()
    areas, census_areas = [], []
    for k, ca in enumerate(pop.census.areas):
        idx = np.sort(gen.choice(ca.size, size=n_k, replace=False))
        areas.append(AreaSample(ca.area_id, ca.x[idx], pop.y[k][idx]))
        census_areas.append(replace(ca, sample_link=idx))
    return SurveySample(tuple(areas)), CensusFrame(tuple(census_areas))


@dataclass(frozen=True)
class ExperimentResult:
    """Reduced tables of a repeated-sampling experiment."""

    spec: ScenarioSpec
    methods: tuple[str, ...]
    alphas: np.ndarray
    area_ids: tuple[str, ...]
    amse: dict  # method -> (A,)
    area_mse: dict  # method -> (K, A)
    boot_mean_mse: dict  # method -> (K, A), bootstrapped methods only
    ratios: dict  # method -> (A,) trimmed ratio estimated/simulated
    failed_reps: tuple[tuple[int, str], ...]

    def amse_rows(self):
        for m in self.methods:
            for a, alpha in enumerate(self.alphas):
                yield m, float(alpha), float(self.amse[m][a])

    def area_rows(self):
        for m in self.methods:
            for k, aid in enumerate(self.area_ids):
                for a, alpha in enumerate(self.alphas):
                    yield m, aid, float(alpha), float(self.area_mse[m][k, a])

    def ratio_rows(self):
        for m in sorted(self.ratios):
            for a, alpha in enumerate(self.alphas):
                yield m, float(alpha), float(self.ratios[m][a])


def _one_repetition(args):
    (spec, methods, alphas, boot_methods, boot_b, mr_draws, r) = args
    root = RngStream(spec.seed)
    pop = gen_population(spec, root.child(r, 0))
    sample, census = draw_sample(pop, spec.sample_size, root.child(r, 1))
    truth = pop.true_quantiles(alphas)
    ctx = PredictorContext(
        sample, census, mr_draws=mr_draws, rng=root.child(r, 2), warn=False
    )
    predictions = {m: ctx.table(m, alphas).values for m in methods}
    boot = {}
    for i, m in enumerate(boot_methods):
        plan = BootstrapPlan(
            B=boot_b, variant=bootstrap_variant(m, census_available=True),
            alphas=tuple(alphas), method=m, seed=spec.seed,
        )
        report = bootstrap_mse(
            plan, sample, census, ner=ctx.ner,
            drm=ctx.drm if plan.variant.endswith("drm") else None,
            mr_draws=mr_draws, stream=root.child(r, 3, i),
        )
        boot[m] = report.mse
    return r, truth, predictions, sample.area_ids, boot


def run_experiment(
    spec: ScenarioSpec,
    methods,
    alphas,
    *,
    bootstrap_b: int = 0,
    bootstrap_methods=(),
    mr_draws: int = 100,
    threads: int = 1,
    progress=None,
) -> ExperimentResult:
    """Run the repeated-sampling bench and reduce to AMSE (and ratio) tables.

    Results depend only on (spec, seed) and are identical for every thread
    count; repetitions failing to converge are dropped with a warning when
    under 5% of R, otherwise the run errors out.
    """
    methods = tuple(normalize_method(m) for m in methods)
    boot_methods = tuple(normalize_method(m) for m in bootstrap_methods)
    if boot_methods and bootstrap_b < 2:
        raise ConfigError("bootstrap_methods given but bootstrap_b < 2")
    # ratios compare against the simulated MSE, so bootstrapped methods are
    # always evaluated in the main pass too
    methods = methods + tuple(m for m in boot_methods if m not in methods)
    alphas = np.asarray(alphas, dtype=float).ravel()
    if alphas.size == 0 or np.any(alphas <= 0) or np.any(alphas >= 1):
        raise ConfigError("alphas must lie in (0, 1)")
    tasks = [
        (spec, methods, alphas, boot_methods, bootstrap_b, mr_draws, r)
        for r in range(spec.repetitions)
    ]
    outcomes = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for out in pool.map(_safe_repetition, tasks):
                outcomes.append(out)
                if progress is not None:
                    progress(len(outcomes), spec.repetitions)
    else:
        for t in tasks:
            outcomes.append(_safe_repetition(t))
            if progress is not None:
                progress(len(outcomes), spec.repetitions)

    failed = tuple((r, msg) for r, msg in outcomes if isinstance(msg, str))
    if len(failed) > 0.05 * spec.repetitions:
        raise NonConvergenceError(
            f"{len(failed)} of {spec.repetitions} repetitions failed", trace=failed
        )
    if failed:
        warnings.warn(f"dropped {len(failed)} failed repetition(s)", stacklevel=2)
    ok = [payload for _, payload in outcomes if not isinstance(payload, str)]
    if not ok:
        raise DataValidationError("no successful repetitions")

    area_ids = ok[0][2]  # (truth, predictions, area_ids, boot)
    truth_tables = [QuantileTable("truth", area_ids, alphas, t) for t, _, _, _ in ok]
    amse_out, area_out = {}, {}
    for m in methods:
        tables = [QuantileTable(m, area_ids, alphas, p[m]) for _, p, _, _ in ok]
        amse_out[m] = amse(tables, truth_tables)
        area_out[m] = area_mse(tables, truth_tables)
    boot_mean, ratios = {}, {}
    for m in boot_methods:
        est = np.mean(np.stack([b[m] for _, _, _, b in ok]), axis=0)
        boot_mean[m] = est
        sim = area_out[m]
        ratios[m] = np.array(
            [trimmed_ratio(est[:, a], sim[:, a]) for a in range(alphas.size)]
        )
    return ExperimentResult(
        spec=spec, methods=methods, alphas=alphas, area_ids=area_ids,
        amse=amse_out, area_mse=area_out, boot_mean_mse=boot_mean,
        ratios=ratios, failed_reps=failed,
    )


def _safe_repetition(args):
    r = args[-1]
    try:
        r, truth, predictions, area_ids, boot = _one_repetition(args)
    except (NonConvergenceError, DataValidationError) as e:
        return r, f"{type(e).__name__}: {e}"
    return r, (truth, predictions, area_ids, boot)


def shadow_population(sample: SurveySample, rng: RngStream,
                      census=None) -> SurveySample:
    """Shadow population from a real survey: keep x, replace each response by
    its fitted value plus a within-area random permutation of the residuals."""
    fit = fit_ner_mle(sample, census, warn_sample_means=False)
    gen = rng.generator()
    areas = []
    for k, a in enumerate(sample.areas):
        fitted = linear_predictor(a.x, fit.beta, fit.intercept) + fit.gamma[k] * fit.nu[k]
        resid = a.y - fitted
        areas.append(AreaSample(a.area_id, a.x, fitted + resid[gen.permutation(a.n)]))
    return SurveySample(tuple(areas))
