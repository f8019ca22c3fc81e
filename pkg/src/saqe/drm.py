"""Density-ratio tilting of pooled residuals via dual empirical likelihood.

The random effects are removed by within-area centring, a least-squares beta
gives pooled residuals, and the per-area error distributions are linked by
log(dG_k/dG_0) = theta_k' q(t).  The tilts maximize the concave dual
log-likelihood (damped Newton, analytic gradient and Hessian); the fitted
baseline weights then yield per-area step CDFs supported on *all* residuals,
and the EL / EBEL distribution predictors follow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .cdfs import CdfEstimate, StepCdf, StepMixtureCdf
from .data import CensusFrame, SurveySample
from .errors import DataValidationError, NonConvergenceError, SingularDesignError

# ---------------------------------------------------------------------------
# Tilting bases


@dataclass(frozen=True)
class BasisQ:
    """Basis function q(t); first component is identically 1."""

    name: str
    dim: int
    _columns: callable

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float).ravel()
        cols = [np.ones_like(t)] + self._columns(t)
        return np.column_stack(cols)


def _signroot(t):
    return [np.sign(t) * np.sqrt(np.abs(t))]


BASES = {
    "signroot": BasisQ("signroot", 2, _signroot),
    "linear": BasisQ("linear", 2, lambda t: [t]),
    "quadratic": BasisQ("quadratic", 3, lambda t: [t, t * t]),
    "linear-root": BasisQ("linear-root", 3, lambda t: [t, np.sqrt(np.abs(t))]),
}


def get_basis(basis) -> BasisQ:
    if isinstance(basis, BasisQ):
        return basis
    try:
        return BASES[basis]
    except KeyError:
        raise DataValidationError(
            f"unknown basis {basis!r}; choose from {sorted(BASES)}"
        ) from None


# ---------------------------------------------------------------------------
# Centralized least squares


def fit_beta_centralized(sample: SurveySample):
    """Least-squares slope of the within-area centred model and its residuals.

    Returns (beta, residuals) where residuals is one array per area with
    exact zero mean (up to float rounding) in every area.
    """
    gram = np.zeros((sample.d, sample.d))
    rhs = np.zeros(sample.d)
    for a in sample.areas:
        xc = a.x - a.x.mean(axis=0)
        yc = a.y - a.y.mean()
        gram += xc.T @ xc
        rhs += xc.T @ yc
    if np.linalg.matrix_rank(gram) < sample.d:
        raise SingularDesignError("within-area centered design is rank deficient")
    beta = np.linalg.solve(gram, rhs)
    residuals = tuple(
        (a.y - a.y.mean()) - (a.x - a.x.mean(axis=0)) @ beta for a in sample.areas
    )
    return beta, residuals


# ---------------------------------------------------------------------------
# Dual empirical likelihood


def _pooled(residuals):
    eps = np.concatenate([np.asarray(r, dtype=float).ravel() for r in residuals])
    counts = np.array([len(r) for r in residuals], dtype=float)
    area_idx = np.repeat(np.arange(len(residuals)), counts.astype(int))
    return eps, counts, area_idx


def _dual_parts(t_full, q, area_idx, logrho, own):
    """Value, full-areas gradient, and responsibilities of the dual objective."""
    e = q @ t_full.T  # (n, K)
    shifted = e + logrho
    lse = logsumexp(shifted, axis=1)
    value = float(np.take_along_axis(e, area_idx[:, None], axis=1).sum() - lse.sum())
    resp = np.exp(shifted - lse[:, None])  # rows sum to 1
    grad_full = own - resp.T @ q  # (K, dim)
    return value, grad_full, resp


def dual_loglik(theta, residuals, rho=None, basis="signroot") -> float:
    """Dual empirical log-likelihood at tilts theta (rows for areas 1..m,
    baseline area 0 fixed at zero)."""
    basis = get_basis(basis)
    eps, counts, area_idx = _pooled(residuals)
    rho = counts / counts.sum() if rho is None else np.asarray(rho, dtype=float)
    q = basis(eps)
    t_full = np.vstack([np.zeros(basis.dim), np.atleast_2d(theta)])
    own = np.zeros((len(residuals), basis.dim))
    np.add.at(own, area_idx, q)
    value, _, _ = _dual_parts(t_full, q, area_idx, np.log(rho), own)
    return value


def dual_gradient(theta, residuals, rho=None, basis="signroot") -> np.ndarray:
    """Analytic gradient of the dual objective with respect to the non-baseline
    tilt rows; shape (m, dim)."""
    basis = get_basis(basis)
    eps, counts, area_idx = _pooled(residuals)
    rho = counts / counts.sum() if rho is None else np.asarray(rho, dtype=float)
    q = basis(eps)
    t_full = np.vstack([np.zeros(basis.dim), np.atleast_2d(theta)])
    own = np.zeros((len(residuals), basis.dim))
    np.add.at(own, area_idx, q)
    _, grad_full, _ = _dual_parts(t_full, q, area_idx, np.log(rho), own)
    return grad_full[1:]


@dataclass(frozen=True)
class TiltFit:
    """Maximizer of the dual empirical likelihood over the tilting parameters."""

    theta: np.ndarray  # (K, dim), baseline row is zero
    baseline: int
    basis_name: str
    p_base: np.ndarray  # (n,) baseline weights, support order
    loglik_dual: float
    grad_norm: float
    trace: tuple
    support: np.ndarray  # (n,) sorted residuals
    weights: np.ndarray  # (K, n) per-area weights on the support

    @property
    def weight_sums(self) -> np.ndarray:
        return self.weights.sum(axis=1)


def fit_tilts(
    residuals,
    rho=None,
    basis="signroot",
    *,
    baseline: int = 0,
    start: np.ndarray | None = None,
    max_iter: int = 200,
    grad_tol_factor: float = 1e-8,
) -> TiltFit:
    """Maximize the dual empirical likelihood over the tilts.

    residuals is one array per area; rho defaults to the sample fractions
    n_k/n.  Damped Newton with analytic derivatives, started at zero (or at
    `start`, a (K, dim) full tilt matrix used for warm starts).
    """
    basis = get_basis(basis)
    eps, counts, area_idx = _pooled(residuals)
    n_areas = len(residuals)
    if n_areas < 2:
        raise DataValidationError("tilt fit needs at least 2 areas")
    if np.unique(eps).size < basis.dim + 1:
        raise DataValidationError("residuals are too degenerate for the chosen basis")
    n = float(counts.sum())
    rho = counts / n if rho is None else np.asarray(rho, dtype=float)
    logrho = np.log(rho)
    q = basis(eps)
    own = np.zeros((n_areas, basis.dim))
    np.add.at(own, area_idx, q)
    free = np.array([k for k in range(n_areas) if k != baseline])

    t_full = np.zeros((n_areas, basis.dim))
    if start is not None:
        t_full = np.asarray(start, dtype=float).copy()
        t_full -= t_full[baseline]  # renormalize to the requested baseline
    value, grad_full, resp = _dual_parts(t_full, q, area_idx, logrho, own)
    grad_tol = grad_tol_factor * n
    trace = []
    converged = False
    for it in range(max_iter):
        g = grad_full[free]
        gmax = float(np.abs(g).max())
        trace.append((it, value, gmax))
        sums_ok = np.abs(resp.sum(axis=0) / (n * rho) - 1.0).max() <= 5e-7
        if gmax <= grad_tol and sums_ok:
            converged = True
            break
        rf = resp[:, free]
        dim = free.size * basis.dim
        g_big = (rf[:, :, None] * q[:, None, :]).reshape(len(eps), dim)
        p = -(g_big.T @ g_big)
        qq = (q[:, :, None] * q[:, None, :]).reshape(len(eps), basis.dim**2)
        diag = (rf.T @ qq).reshape(free.size, basis.dim, basis.dim)
        for r in range(free.size):
            sl = slice(r * basis.dim, (r + 1) * basis.dim)
            p[sl, sl] += diag[r]
        gflat = g.reshape(dim)
        ridge = 0.0
        scale = max(float(np.trace(p)) / dim, 1e-12)
        for _ in range(12):
            try:
                step = np.linalg.solve(p + ridge * np.eye(dim), gflat)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and step @ gflat > 0:
                break
            ridge = scale * 1e-8 if ridge == 0.0 else ridge * 100.0
        else:
            raise NonConvergenceError("tilt Hessian unusable", trace=trace)
        direction = np.zeros_like(t_full)
        direction[free] = step.reshape(free.size, basis.dim)
        slope = float(gflat @ step)
        t = 1.0
        for _ in range(60):
            cand = t_full + t * direction
            cval, cgrad, cresp = _dual_parts(cand, q, area_idx, logrho, own)
            if cval >= value + 1e-4 * t * slope:
                t_full, value, grad_full, resp = cand, cval, cgrad, cresp
                break
            t *= 0.5
        else:
            raise NonConvergenceError(
                "line search failed; samples may be separable in basis space", trace=trace
            )
    if not converged:
        raise NonConvergenceError(
            f"tilt fit did not reach gradient tolerance in {max_iter} iterations",
            trace=trace,
        )

    e = q @ t_full.T
    lse = logsumexp(e + logrho, axis=1)
    p_base_raw = np.exp(-lse) / n
    weights_raw = np.exp(e - lse[:, None]).T / n  # (K, n)
    order = np.argsort(eps, kind="stable")
    return TiltFit(
        theta=t_full,
        baseline=baseline,
        basis_name=basis.name,
        p_base=p_base_raw[order],
        loglik_dual=value,
        grad_norm=float(np.abs(grad_full[free]).max()),
        trace=tuple(trace),
        support=eps[order],
        weights=weights_raw[:, order],
    )


# ---------------------------------------------------------------------------
# Sample-level fit and predictors


@dataclass(frozen=True)
class DrmFit:
    """Centralized least squares plus fitted tilts, with prediction pieces."""

    area_ids: tuple[str, ...]
    beta_ls: np.ndarray  # (d,)
    residuals: tuple[np.ndarray, ...]
    tilt: TiltFit
    nu_hat: np.ndarray  # (K,) ybar_k - xbar_k' beta_ls
    xbar_sample: np.ndarray
    ybar: np.ndarray
    counts: np.ndarray
    centered_xb: tuple[np.ndarray, ...]
    y_by_area: tuple[np.ndarray, ...]

    @property
    def theta(self) -> np.ndarray:
        return self.tilt.theta

    @property
    def p_base(self) -> np.ndarray:
        return self.tilt.p_base

    @property
    def loglik_dual(self) -> float:
        return self.tilt.loglik_dual

    def index(self, area_id: str) -> int:
        return self.area_ids.index(area_id)


def fit_drm(
    sample: SurveySample,
    basis="signroot",
    *,
    baseline: str | None = None,
    start: np.ndarray | None = None,
    max_iter: int = 200,
) -> DrmFit:
    """Full pipeline: centralized LS residuals, then the tilt fit."""
    beta, residuals = fit_beta_centralized(sample)
    base_idx = 0 if baseline is None else sample.index(baseline)
    tilt = fit_tilts(
        residuals, basis=basis, baseline=base_idx, start=start, max_iter=max_iter
    )
    xbar = np.stack([a.x.mean(axis=0) for a in sample.areas])
    ybar = np.array([a.y.mean() for a in sample.areas])
    return DrmFit(
        area_ids=sample.area_ids,
        beta_ls=beta,
        residuals=residuals,
        tilt=tilt,
        nu_hat=ybar - xbar @ beta,
        xbar_sample=xbar,
        ybar=ybar,
        counts=sample.counts,
        centered_xb=tuple((a.x - a.x.mean(axis=0)) @ beta for a in sample.areas),
        y_by_area=tuple(a.y for a in sample.areas),
    )


class GkCdf(StepCdf):
    """Fitted error CDF of one area, supported on all pooled residuals."""

    def __init__(self, support, weights, area_id):
        super().__init__(support, weights, presorted=True)
        self.area_id = area_id


def gk_cdf(fit: DrmFit, area: str) -> GkCdf:
    """Tilted error CDF of one area: weights p_base * exp(theta_k' q) on the
    pooled residual support."""
    k = fit.index(area)
    return GkCdf(fit.tilt.support, fit.tilt.weights[k], area)


def el_shifts(fit: DrmFit, ner, k: int) -> np.ndarray:
    """Location shifts of the EL predictor for area index k."""
    if tuple(ner.area_ids) != tuple(fit.area_ids):
        raise DataValidationError("DRM and NER fits cover different areas")
    return fit.centered_xb[k] + ner.eblup_mean[k]


def ebel2_shifts(fit: DrmFit, census_area, k: int) -> np.ndarray:
    """Location shifts of the census EL predictor for area index k."""
    return fit.nu_hat[k] + census_area.x @ fit.beta_ls


def cdf_el(fit: DrmFit, ner, area: str) -> CdfEstimate:
    """Sample-based EL predictor: the area's tilted error CDF, shifted to the
    EBLUP mean through the centred regression predictions."""
    k = fit.index(area)
    return StepMixtureCdf(gk_cdf(fit, area), el_shifts(fit, ner, k))


def cdf_ebel(fit: DrmFit, census: CensusFrame, area: str, variant: str = "ebel2") -> CdfEstimate:
    """Census EL predictors: ebel2 tilts every unit, ebel1 keeps sampled units
    as indicator atoms (requires a sample_link)."""
    k = fit.index(area)
    base = gk_cdf(fit, area)
    if variant == "ebel2":
        ca = census.require_full(area)
        return StepMixtureCdf(base, ebel2_shifts(fit, ca, k))
    if variant == "ebel1":
        ca = census.require_link(area)
        out = np.ones(ca.size, dtype=bool)
        out[ca.sample_link] = False
        y = fit.y_by_area[k]
        if not out.any():
            return StepCdf(y)
        shifts = fit.nu_hat[k] + ca.x[out] @ fit.beta_ls
        return StepMixtureCdf(
            base,
            shifts,
            shift_weights=np.full(shifts.size, 1.0 / ca.size),
            atoms=y,
            atom_weights=np.full(y.size, 1.0 / ca.size),
        )
    raise ValueError(f"unknown EBEL variant {variant!r}")
