"""Comparison predictors: direct sample quantiles, the conditional-draw EBP,
and the M-quantile CDF predictor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cdfs import CdfEstimate, StepCdf, StepMixtureCdf, _check_alpha
from .data import CensusFrame, SurveySample
from .errors import SingularDesignError
from .ner import NerFit, linear_predictor
from .rng import RngStream

MQ_GRID = np.arange(1, 200) / 200.0


def quantile_direct(sample: SurveySample, area: str, alpha: float) -> float:
    """Inf-convention sample quantile of the area's observed responses."""
    _check_alpha(alpha)
    return StepCdf(sample.area(area).y).invert(alpha)


# ---------------------------------------------------------------------------
# Conditional-draw EBP


def cdf_mr(
    ner: NerFit,
    sample: SurveySample,
    census: CensusFrame,
    area: str,
    L: int = 100,
    rng: RngStream | None = None,
) -> CdfEstimate:
    """EBP distribution predictor via conditional Monte-Carlo draws.

    Each non-sampled unit gets L draws mu_kj|s + u_k + e with the area effect
    u_k ~ N(0, (1-gamma_k) sigma_v^2) shared across the area's units within a
    replicate; sampled units enter as indicator atoms.  Bit-reproducible for
    a fixed stream.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    if rng is None:
        rng = RngStream(0)
    k = ner.index(area)
    ca = census.require_link(area)
    y = sample.area(area).y
    out = np.ones(ca.size, dtype=bool)
    out[ca.sample_link] = False
    if not out.any():
        return StepCdf(y)
    mu = linear_predictor(ca.x[out], ner.beta, ner.intercept) + ner.gamma[k] * ner.nu[k]
    gen = rng.generator()
    u = gen.normal(0.0, math.sqrt(max((1.0 - ner.gamma[k]) * ner.sigma_v2, 0.0)), size=L)
    e = gen.normal(0.0, math.sqrt(ner.sigma_e2), size=(L, mu.size))
    draws = (mu[None, :] + u[:, None] + e).ravel()
    values = np.concatenate([draws, y])
    weights = np.concatenate(
        [np.full(draws.size, 1.0 / (ca.size * L)), np.full(y.size, 1.0 / ca.size)]
    )
    return StepCdf(values, weights)


# ---------------------------------------------------------------------------
# M-quantile regression


@dataclass(frozen=True)
class MqFit:
    """Per-area M-quantile coefficient paths and unit quantile indices."""

    area_ids: tuple[str, ...]
    intercept: bool
    grid: np.ndarray  # (Q,)
    beta_by_q: np.ndarray  # (K, Q, p)
    beta_area: np.ndarray  # (K, p) coefficients at q_area
    q_unit: tuple[np.ndarray, ...]  # per-area unit-level q values
    q_area: np.ndarray  # (K,)
    residuals: tuple[np.ndarray, ...]  # y - x' beta_area per area

    def index(self, area_id: str) -> int:
        return self.area_ids.index(area_id)


def _irls_check(x, y, qs, h, *, area_id, tol=1e-8, max_iter=100):
    """Reweighted least squares on the h-smoothed check loss for every q in
    qs simultaneously; returns (Q, p) coefficients."""
    n, p = x.shape
    try:
        beta = np.linalg.solve(x.T @ x, x.T @ y)
    except np.linalg.LinAlgError:
        raise SingularDesignError(f"area {area_id!r}: M-quantile design singular") from None
    b = np.tile(beta, (qs.size, 1))
    active = np.ones(qs.size, dtype=bool)
    for _ in range(max_iter):
        qa = qs[active]
        ba = b[active]
        r = y[:, None] - x @ ba.T  # (n, |active|)
        w = np.where(r > 0, qa[None, :], 1.0 - qa[None, :]) / np.maximum(np.abs(r), h)
        a = np.einsum("nq,na,nb->qab", w, x, x)
        rhs = np.einsum("nq,na,n->qa", w, x, y)
        try:
            b_new = np.linalg.solve(a, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            raise SingularDesignError(
                f"area {area_id!r}: weighted M-quantile system singular"
            ) from None
        moved = np.abs(b_new - ba).max(axis=1) > tol
        b[active] = b_new
        still = np.zeros(qs.size, dtype=bool)
        still[np.flatnonzero(active)[moved]] = True
        active = still
        if not active.any():
            break
    return b


def fit_mq(sample: SurveySample, *, intercept: bool = True) -> MqFit:
    """Fit per-area M-quantile coefficients over q in {1,...,199}/200.

    Each unit receives the grid q minimizing |y_kj - x_kj' beta_k(q)| (ties
    broken toward the smallest q); the area coefficient vector is refit at
    the mean unit-level q.
    """
    betas, beta_area, q_units, q_areas, residuals = [], [], [], [], []
    for a in sample.areas:
        x = np.column_stack([np.ones(a.n), a.x]) if intercept else a.x
        med = np.median(a.y)
        h = 1e-4 * float(np.median(np.abs(a.y - med)))
        if h <= 0:
            h = 1e-12
        b = _irls_check(x, a.y, MQ_GRID, h, area_id=a.area_id)
        dist = np.abs(a.y[:, None] - x @ b.T)  # (n, Q)
        picks = np.argmin(dist, axis=1)  # first minimum = smallest q
        qu = MQ_GRID[picks]
        qa = float(qu.mean())
        ba = _irls_check(x, a.y, np.array([qa]), h, area_id=a.area_id)[0]
        betas.append(b)
        beta_area.append(ba)
        q_units.append(qu)
        q_areas.append(qa)
        residuals.append(a.y - x @ ba)
    return MqFit(
        area_ids=sample.area_ids,
        intercept=intercept,
        grid=MQ_GRID,
        beta_by_q=np.stack(betas),
        beta_area=np.stack(beta_area),
        q_unit=tuple(q_units),
        q_area=np.array(q_areas),
        residuals=tuple(residuals),
    )


def cdf_mq(fit: MqFit, sample: SurveySample, census: CensusFrame, area: str) -> CdfEstimate:
    """M-quantile CDF predictor: sampled units as atoms, non-sampled units as
    shifted copies of the area's M-quantile residual EDF."""
    k = fit.index(area)
    ca = census.require_link(area)
    y = sample.area(area).y
    out = np.ones(ca.size, dtype=bool)
    out[ca.sample_link] = False
    if not out.any():
        return StepCdf(y)
    shifts = linear_predictor(ca.x[out], fit.beta_area[k], fit.intercept)
    return StepMixtureCdf(
        StepCdf(fit.residuals[k]),
        shifts,
        shift_weights=np.full(shifts.size, 1.0 / ca.size),
        atoms=y,
        atom_weights=np.full(y.size, 1.0 / ca.size),
    )
