"""Nested-error regression: maximum-likelihood fit, EBLUP means, and the
normal-theory CDF predictors.

The model is y_kj = x_kj' beta + v_k + e_kj with v_k ~ N(0, sigma_v^2) and
e_kj ~ N(0, sigma_e^2).  beta and sigma_e^2 are profiled out in closed form
given the variance ratio phi = sigma_v^2 / sigma_e^2, and the 1-D profile
log-likelihood is maximized by a grid-bracketed golden section with a Newton
polish.  An intercept column is added by default so that area effects with a
nonzero common level are absorbed by beta rather than biasing the shrinkage.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cdfs import CdfEstimate, GaussianMixtureCdf, StepCdf
from .data import CensusFrame, SurveySample
from .errors import DegenerateDistributionError, NonConvergenceError, SingularDesignError

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def linear_predictor(x: np.ndarray, beta: np.ndarray, intercept: bool) -> np.ndarray:
    """x @ beta with the intercept (first coefficient) handled."""
    x = np.atleast_2d(x)
    if intercept:
        return beta[0] + x @ beta[1:]
    return x @ beta


class _Profile:
    """Per-area sufficient statistics and the profile log-likelihood in phi."""

    def __init__(self, sample: SurveySample, intercept: bool):
        xs = [np.column_stack([np.ones(a.n), a.x]) if intercept else a.x for a in sample.areas]
        self.counts = sample.counts.astype(float)
        self.n = float(self.counts.sum())
        self.p = xs[0].shape[1]
        self.sxx = np.stack([x.T @ x for x in xs])
        self.sxy = np.stack([x.T @ a.y for x, a in zip(xs, sample.areas)])
        self.syy = np.array([a.y @ a.y for a in sample.areas])
        self.xbar = np.stack([x.mean(axis=0) for x in xs])
        self.ybar = np.array([a.y.mean() for a in sample.areas])
        y_all = np.concatenate([a.y for a in sample.areas])
        self.var_y = float(np.var(y_all))
        centered = [a.x - a.x.mean(axis=0) for a in sample.areas]
        gram = sum(c.T @ c for c in centered)
        if np.linalg.matrix_rank(gram) < sample.d:
            raise SingularDesignError("within-area centered design is rank deficient")
        if np.linalg.matrix_rank(self.sxx.sum(axis=0)) < self.p:
            raise SingularDesignError("stacked design is rank deficient")

    def beta_and_rss(self, phi: float):
        w = phi * self.counts**2 / (1.0 + self.counts * phi)
        a = self.sxx.sum(axis=0) - np.einsum("k,ki,kj->ij", w, self.xbar, self.xbar)
        b = self.sxy.sum(axis=0) - (w * self.ybar) @ self.xbar
        try:
            beta = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            raise SingularDesignError(f"GLS normal equations singular at phi={phi}") from None
        rss = float(self.syy.sum() - (w * self.ybar) @ self.ybar - beta @ b)
        return beta, max(rss, 0.0)

    def loglik(self, phi: float) -> float:
        try:
            _, rss = self.beta_and_rss(phi)
        except SingularDesignError:
            # huge phi can make the GLS system numerically singular even on
            # valid data; treat as off the admissible grid
            if phi > 0:
                return -math.inf
            raise
        if rss <= 0.0:
            return math.inf
        n = self.n
        return (
            -0.5 * n * (math.log(2.0 * math.pi) + 1.0)
            - 0.5 * n * math.log(rss / n)
            - 0.5 * float(np.log1p(self.counts * phi).sum())
        )

    def grad(self, phi: float) -> float:
        beta, rss = self.beta_and_rss(phi)
        if rss <= 0.0:
            return 0.0
        rbar = self.ybar - self.xbar @ beta
        drss = -float(((self.counts * rbar) ** 2 / (1.0 + self.counts * phi) ** 2).sum())
        return -0.5 * self.n * drss / rss - 0.5 * float(
            (self.counts / (1.0 + self.counts * phi)).sum()
        )


@dataclass(frozen=True)
class NerFit:
    """Fitted nested-error regression with everything its predictors need."""

    area_ids: tuple[str, ...]
    intercept: bool
    beta: np.ndarray  # (d+1,) with intercept first, or (d,)
    sigma_v2: float
    sigma_e2: float
    gamma: np.ndarray  # (K,) shrinkage factors
    nu: np.ndarray  # (K,) raw area effects ybar_k - xbar_k' beta
    eblup_mean: np.ndarray  # (K,)
    loglik: float
    boundary_sigma_v: bool
    boundary_sigma_e: bool
    xbar_source: str  # "census" or "sample"
    profile_phi: float
    profile_grad: float
    xbar_pop: np.ndarray  # (K, d) means used for the EBLUP
    xbar_sample: np.ndarray  # (K, d)
    ybar: np.ndarray  # (K,)
    counts: np.ndarray  # (K,)
    centered_xb: tuple[np.ndarray, ...]  # per area (x_kj - xbar_k)' beta
    y_by_area: tuple[np.ndarray, ...]

    def index(self, area_id: str) -> int:
        return self.area_ids.index(area_id)

    def eblup_from_xbar(self, k: int, xbar_pop: np.ndarray) -> float:
        return float(linear_predictor(xbar_pop, self.beta, self.intercept)[0] + self.gamma[k] * self.nu[k])


def fit_ner_mle(
    sample: SurveySample,
    census: CensusFrame | None = None,
    *,
    intercept: bool = True,
    phi_max: float = 1e6,
    tol: float = 1e-10,
    warn_sample_means: bool = True,
) -> NerFit:
    """Maximum-likelihood fit of the nested-error regression model.

    Population x means come from `census` when given (means-only frames
    suffice); otherwise the sample means stand in, with a warning.
    """
    prof = _Profile(sample, intercept)
    n = prof.n

    # Degenerate case: data fit exactly at phi = 0.
    beta0, rss0 = prof.beta_and_rss(0.0)
    if rss0 / n <= 1e-15 * max(prof.var_y, 1e-12):
        return _assemble(
            sample, census, intercept, beta0, sigma_v2=0.0, sigma_e2=rss0 / n,
            loglik=math.inf, boundary_v=True, boundary_e=True,
            phi=0.0, grad=0.0, warn_sample_means=warn_sample_means,
        )

    grid = np.concatenate(([0.0], np.geomspace(1e-8, phi_max, 57)))
    vals = np.array([prof.loglik(p) for p in grid])
    i = int(np.argmax(vals))
    if not np.isfinite(vals[i]) or np.isnan(vals).any():
        raise NonConvergenceError(
            "profile log-likelihood not finite on the search grid",
            trace=[(float(p), float(v)) for p, v in zip(grid, vals)],
        )
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]

    # Golden section inside the bracket.
    a, b = lo, hi
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = prof.loglik(c), prof.loglik(d)
    for _ in range(200):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = prof.loglik(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = prof.loglik(d)
    phi = 0.5 * (a + b)
    best = prof.loglik(phi)

    # Newton polish on the analytic profile gradient.
    for _ in range(8):
        g = prof.grad(phi)
        h = max(1e-7 * phi, 1e-12)
        g2 = (prof.grad(phi + h) - prof.grad(max(phi - h, 0.0))) / (h + min(h, phi))
        if g2 == 0.0 or not math.isfinite(g2):
            break
        step = g / g2
        cand = min(max(phi - step, 0.0), phi_max)
        if abs(cand - phi) <= tol:
            phi = cand if prof.loglik(cand) >= best else phi
            break
        lc = prof.loglik(cand)
        if lc >= best:
            phi, best = cand, lc
        else:
            break

    if prof.loglik(0.0) >= best:
        phi, boundary_v = 0.0, True
    else:
        boundary_v = phi <= tol

    beta, rss = prof.beta_and_rss(phi)
    sigma_e2 = rss / n
    sigma_v2 = phi * sigma_e2
    return _assemble(
        sample, census, intercept, beta, sigma_v2=sigma_v2, sigma_e2=sigma_e2,
        loglik=prof.loglik(phi), boundary_v=boundary_v, boundary_e=False,
        phi=phi, grad=prof.grad(phi) if phi > 0 else min(prof.grad(0.0), 0.0),
        warn_sample_means=warn_sample_means,
    )


def _assemble(sample, census, intercept, beta, *, sigma_v2, sigma_e2, loglik,
              boundary_v, boundary_e, phi, grad, warn_sample_means):
    counts = sample.counts.astype(float)
    xbar_sample = np.stack([a.x.mean(axis=0) for a in sample.areas])
    ybar = np.array([a.y.mean() for a in sample.areas])
    if census is not None:
        xbar_pop = np.stack([census.area(a.area_id).xbar for a in sample.areas])
        source = "census"
    else:
        if warn_sample_means:
            warnings.warn(
                "no census supplied; EBLUP means use sample x means", stacklevel=2
            )
        xbar_pop = xbar_sample
        source = "sample"
    if sigma_e2 > 0 or sigma_v2 > 0:
        gamma = counts * sigma_v2 / (sigma_e2 + counts * sigma_v2)
    else:
        gamma = np.zeros_like(counts)
    nu = ybar - linear_predictor(xbar_sample, beta, intercept)
    eblup = linear_predictor(xbar_pop, beta, intercept) + gamma * nu
    centered = tuple(
        (a.x - a.x.mean(axis=0)) @ (beta[1:] if intercept else beta) for a in sample.areas
    )
    return NerFit(
        area_ids=sample.area_ids, intercept=intercept, beta=beta,
        sigma_v2=float(sigma_v2), sigma_e2=float(sigma_e2),
        gamma=gamma, nu=nu, eblup_mean=eblup, loglik=float(loglik),
        boundary_sigma_v=bool(boundary_v), boundary_sigma_e=bool(boundary_e),
        xbar_source=source, profile_phi=float(phi), profile_grad=float(grad),
        xbar_pop=xbar_pop, xbar_sample=xbar_sample, ybar=ybar, counts=counts,
        centered_xb=centered, y_by_area=tuple(a.y for a in sample.areas),
    )


def profile_loglik(sample: SurveySample, sigma_v2: float, sigma_e2: float,
                   *, intercept: bool = True) -> float:
    """Log-likelihood at (sigma_v2, sigma_e2) with beta profiled out."""
    if sigma_e2 <= 0.0 or sigma_v2 < 0.0:
        return -math.inf
    prof = _Profile(sample, intercept)
    phi = sigma_v2 / sigma_e2
    _, rss = prof.beta_and_rss(phi)
    n = prof.n
    return (
        -0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * n * math.log(sigma_e2)
        - 0.5 * float(np.log1p(prof.counts * phi).sum())
        - 0.5 * rss / sigma_e2
    )


def cdf_ner(fit: NerFit, area: str, xbar_pop: np.ndarray | None = None) -> CdfEstimate:
    """Sample-based CDF predictor: a normal mixture centred so that its mean
    is exactly the EBLUP mean of the area."""
    k = fit.index(area)
    if fit.sigma_e2 <= 0.0 or fit.boundary_sigma_e:
        raise DegenerateDistributionError("sigma_e is zero; CDF predictor is degenerate")
    mean_k = fit.eblup_mean[k] if xbar_pop is None else fit.eblup_from_xbar(k, xbar_pop)
    return GaussianMixtureCdf(fit.centered_xb[k] + mean_k, math.sqrt(fit.sigma_e2))


def cdf_eb(fit: NerFit, census: CensusFrame, area: str, variant: str = "eb2") -> CdfEstimate:
    """Census CDF predictors: eb2 smooths every unit, eb1 keeps the sampled
    units as indicator atoms (requires a sample_link)."""
    k = fit.index(area)
    if fit.sigma_e2 <= 0.0 or fit.boundary_sigma_e:
        raise DegenerateDistributionError("sigma_e is zero; CDF predictor is degenerate")
    scale = math.sqrt(fit.sigma_e2)
    if variant == "eb2":
        ca = census.require_full(area)
        means = fit.nu[k] + linear_predictor(ca.x, fit.beta, fit.intercept)
        return GaussianMixtureCdf(means, scale)
    if variant == "eb1":
        ca = census.require_link(area)
        out = np.ones(ca.size, dtype=bool)
        out[ca.sample_link] = False
        means = fit.nu[k] + linear_predictor(ca.x[out], fit.beta, fit.intercept)
        y = fit.y_by_area[k]
        if means.size == 0:
            return StepCdf(y)
        return GaussianMixtureCdf(
            means,
            scale,
            weights=np.full(means.size, 1.0 / ca.size),
            atoms=y,
            atom_weights=np.full(y.size, 1.0 / ca.size),
        )
    raise ValueError(f"unknown EB variant {variant!r}")
