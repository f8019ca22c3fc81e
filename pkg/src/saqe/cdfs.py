"""CDF representations, quantile inversion, and accuracy metrics.

Three families cover every predictor in the package: explicit weighted step
functions, Gaussian mixtures (optionally with a discrete in-sample part), and
mixtures of shifted copies of one step function.  All evaluators are
right-continuous and non-decreasing; quantiles use the inf convention
``inf{y : F(y) >= alpha}``, exactly on step supports and by bracketed
bisection on smooth mixtures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DataValidationError, DegenerateDistributionError

_WSUM_TOL = 1e-6  # weights of any estimate must total 1 within this


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return alpha


class CdfEstimate:
    """Interface shared by all CDF evaluators."""

    def evaluate(self, y):
        raise NotImplementedError

    def invert(self, alpha: float) -> float:
        raise NotImplementedError

    def invert_many(self, alphas) -> np.ndarray:
        return np.array([self.invert(a) for a in np.atleast_1d(alphas)])

    def mean(self) -> float:
        raise NotImplementedError

    def __call__(self, y):
        return self.evaluate(y)


class StepCdf(CdfEstimate):
    """Weighted right-continuous step function on a finite support."""

    def __init__(self, values, weights=None, *, presorted=False):
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise DataValidationError("step CDF needs at least one atom")
        if weights is None:
            weights = np.full(values.size, 1.0 / values.size)
        else:
            weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != values.shape:
            raise DataValidationError("atom values and weights differ in length")
        if np.any(weights < 0):
            raise DataValidationError("negative atom weight")
        if not presorted:
            order = np.argsort(values, kind="stable")
            values, weights = values[order], weights[order]
        total = float(weights.sum())
        if abs(total - 1.0) > _WSUM_TOL:
            raise DataValidationError(f"atom weights sum to {total}, expected 1")
        self.values = values
        self.weights = weights
        self._cum = np.cumsum(weights)
        self._cum_padded = np.concatenate(([0.0], self._cum))

    def evaluate(self, y):
        y = np.asarray(y, dtype=float)
        return self._cum_padded[np.searchsorted(self.values, y, side="right")]

    def invert(self, alpha: float) -> float:
        alpha = _check_alpha(alpha)
        idx = np.searchsorted(self._cum, min(alpha, self._cum[-1]), side="left")
        return float(self.values[min(idx, self.values.size - 1)])

    def invert_many(self, alphas) -> np.ndarray:
        alphas = np.minimum(np.asarray(alphas, dtype=float), self._cum[-1])
        if np.any(alphas <= 0.0) or np.any(alphas >= 1.0 + _WSUM_TOL):
            raise ValueError("alphas must be in (0, 1)")
        idx = np.minimum(np.searchsorted(self._cum, alphas, side="left"), self.values.size - 1)
        return self.values[idx]

    def mean(self) -> float:
        return float(self.weights @ self.values)


def empirical_quantiles(values, alphas) -> np.ndarray:
    """Inf-convention quantiles of a finite population."""
    return StepCdf(values).invert_many(alphas)


class GaussianMixtureCdf(CdfEstimate):
    """Mixture of normal CDFs sharing one scale, plus an optional atom part.

    The atom part carries its own (unnormalized-against-the-mixture) weights;
    component weights and atom weights together must total 1.
    """

    def __init__(self, means, scale, weights=None, atoms=None, atom_weights=None):
        self.means = np.asarray(means, dtype=float).ravel()
        self.scale = float(scale)
        if not self.scale > 0.0 or not np.isfinite(self.scale):
            raise DegenerateDistributionError(f"gaussian mixture needs scale > 0, got {scale}")
        if atoms is not None:
            av = np.asarray(atoms, dtype=float).ravel()
            aw = np.asarray(atom_weights, dtype=float).ravel()
            order = np.argsort(av, kind="stable")
            self._atoms = StepCdfPart(av[order], np.cumsum(aw[order]))
        else:
            self._atoms = None
        atom_mass = self._atoms.cum[-1] if self._atoms is not None else 0.0
        if weights is None:
            weights = np.full(self.means.size, (1.0 - atom_mass) / max(self.means.size, 1))
        self.weights = np.asarray(weights, dtype=float).ravel()
        total = float(self.weights.sum()) + atom_mass
        if abs(total - 1.0) > _WSUM_TOL:
            raise DataValidationError(f"mixture weights sum to {total}, expected 1")

    def evaluate(self, y):
        y = np.asarray(y, dtype=float)
        z = (y[..., None] - self.means) / self.scale
        out = ndtr(z) @ self.weights
        if self._atoms is not None:
            out = out + self._atoms.evaluate(y)
        return out

    def mean(self) -> float:
        out = float(self.weights @ self.means)
        if self._atoms is not None:
            w = np.diff(self._atoms.cum, prepend=0.0)
            out += float(w @ self._atoms.values)
        return out

    def invert(self, alpha: float) -> float:
        alpha = _check_alpha(alpha)
        lo = float(self.means.min()) - 6.0 * self.scale
        hi = float(self.means.max()) + 6.0 * self.scale
        if self._atoms is not None:
            lo = min(lo, float(self._atoms.values[0]) - self.scale)
            hi = max(hi, float(self._atoms.values[-1]) + self.scale)
        width = hi - lo
        for _ in range(60):
            if self.evaluate(lo) < alpha:
                break
            lo -= width
            width *= 2.0
        width = hi - lo
        for _ in range(60):
            if self.evaluate(hi) >= alpha:
                break
            hi += width
            width *= 2.0
        smooth = self._atoms is None
        for _ in range(200):
            scale = max(1.0, abs(lo), abs(hi))
            if hi - lo <= 1e-12 * scale:
                break
            mid = 0.5 * (lo + hi)
            fmid = float(self.evaluate(mid))
            if smooth and abs(fmid - alpha) <= 1e-10:
                return mid
            if fmid >= alpha:
                hi = mid
            else:
                lo = mid
        return hi


@dataclass(frozen=True)
class StepCdfPart:
    """Sorted atoms with cumulative (not necessarily total-1) mass."""

    values: np.ndarray
    cum: np.ndarray

    def evaluate(self, y):
        cum_padded = np.concatenate(([0.0], self.cum))
        return cum_padded[np.searchsorted(self.values, np.asarray(y, dtype=float), side="right")]


class StepMixtureCdf(CdfEstimate):
    """Mixture of shifted copies of one step CDF, plus optional extra atoms.

    F(y) = sum_s w_s * G(y - c_s) + atom part.  The implicit support is
    {u_i + c_s} union {atoms}; inversion brackets by bisection and then snaps
    to the smallest implicit jump point, so quantiles are exact without ever
    materializing the |support| x |shifts| product.
    """

    def __init__(self, base: StepCdf, shifts, shift_weights=None, atoms=None, atom_weights=None):
        self.base = base
        self.shifts = np.sort(np.asarray(shifts, dtype=float).ravel())
        if self.shifts.size == 0:
            raise DataValidationError("step mixture needs at least one shift")
        if atoms is not None:
            av = np.asarray(atoms, dtype=float).ravel()
            aw = np.asarray(atom_weights, dtype=float).ravel()
            order = np.argsort(av, kind="stable")
            self._atoms = StepCdfPart(av[order], np.cumsum(aw[order]))
            atom_mass = float(self._atoms.cum[-1])
        else:
            self._atoms = None
            atom_mass = 0.0
        if shift_weights is None:
            shift_weights = np.full(self.shifts.size, (1.0 - atom_mass) / self.shifts.size)
        self.shift_weights = np.asarray(shift_weights, dtype=float).ravel()
        total = float(self.shift_weights.sum()) * float(self.base._cum[-1]) + atom_mass
        if abs(total - 1.0) > 10 * _WSUM_TOL:
            raise DataValidationError(f"mixture mass is {total}, expected 1")

    def evaluate(self, y):
        y = np.asarray(y, dtype=float)
        q = y[..., None] - self.shifts
        idx = np.searchsorted(self.base.values, q.ravel(), side="right").reshape(q.shape)
        out = self.base._cum_padded[idx] @ self.shift_weights
        if self._atoms is not None:
            out = out + self._atoms.evaluate(y)
        return out

    def mean(self) -> float:
        out = float(self.shift_weights @ (self.base.mean() + self.shifts))
        if self._atoms is not None:
            w = np.diff(self._atoms.cum, prepend=0.0)
            out += float(w @ self._atoms.values)
        return out

    def _next_jump(self, lo: float) -> float:
        """Smallest implicit jump point strictly above lo."""
        cand = _next_sum_above(self.base.values, self.shifts, lo)
        if self._atoms is not None:
            j = np.searchsorted(self._atoms.values, lo, side="right")
            if j < self._atoms.values.size:
                cand = min(cand, float(self._atoms.values[j]))
        return cand

    def invert(self, alpha: float) -> float:
        return float(self.invert_many([alpha])[0])

    def invert_many(self, alphas) -> np.ndarray:
        alphas = np.asarray(alphas, dtype=float).ravel()
        for a in alphas:
            _check_alpha(a)
        uniform = np.allclose(self.shift_weights, self.shift_weights[0])
        if self._atoms is None and uniform and abs(float(self.base._cum[-1]) - 1.0) < _WSUM_TOL:
            return invert_shifted_step(
                self.base.values, self.base._cum[None, :], [self.shifts], alphas
            )[0]
        u = self.base.values
        lo_abs = float(u[0] + self.shifts[0])
        hi_abs = float(u[-1] + self.shifts[-1])
        if self._atoms is not None:
            lo_abs = min(lo_abs, float(self._atoms.values[0]))
            hi_abs = max(hi_abs, float(self._atoms.values[-1]))
        lo = np.full(alphas.shape, np.nextafter(lo_abs, -math.inf))
        hi = np.full(alphas.shape, hi_abs)
        for _ in range(120):
            scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
            if np.all(hi - lo <= 1e-13 * scale):
                break
            mid = 0.5 * (lo + hi)
            above = self.evaluate(mid) >= alphas
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        out = np.empty_like(alphas)
        for i, a in enumerate(alphas):
            point = hi[i]
            # A few ulps of slack: the bracket ends may straddle the 1-ulp gap
            # between a float sum u + c and where the evaluation jumps.  A
            # candidate at or below lo can never evaluate >= alpha.
            cursor = _ulps_down(lo[i], 4)
            for _ in range(64):
                jump = self._next_jump(cursor)
                if not math.isfinite(jump) or jump > hi[i]:
                    break
                hit = next(
                    (y for y in _ulp_ladder(jump) if float(self.evaluate(y)) >= a),
                    None,
                )
                if hit is not None:
                    point = hit
                    break
                cursor = jump
            out[i] = point
        return out


def _ulps_down(x: float, k: int) -> float:
    for _ in range(k):
        x = np.nextafter(x, -math.inf)
    return x


def _ulp_ladder(x: float):
    yield x
    x = np.nextafter(x, math.inf)
    yield x
    yield np.nextafter(x, math.inf)


def _next_sum_above(u: np.ndarray, c: np.ndarray, lo: float) -> float:
    """Smallest u_i + c_s (as floats) strictly above lo.

    searchsorted on the rounded difference lo - c_s can be off by one, so the
    neighbouring support position is inspected as well.
    """
    idx = np.searchsorted(u, lo - c, side="right")
    cand = math.inf
    for off in (-1, 0):
        j = idx + off
        ok = (j >= 0) & (j < u.size)
        if ok.any():
            sums = u[j[ok]] + c[ok]
            above = sums[sums > lo]
            if above.size:
                cand = min(cand, float(above.min()))
    return cand


def invert_shifted_step(base_values, cum_by_area, shifts_by_area, alphas) -> np.ndarray:
    """Quantiles of K uniform mixtures of shifted copies of step CDFs sharing
    one support, batched across areas and alphas; shape (K, A).

    cum_by_area holds the per-area cumulative weights on the shared support.
    Bisection narrows a bracket per (area, alpha), then the result snaps to
    the smallest implicit jump point u_i + c_s with F >= alpha (resolved to
    within float-sum rounding of the implicit support).
    """
    from ._fastquant import HAVE_NUMBA, quantile_kernel

    u = np.asarray(base_values, dtype=float)
    cums = np.asarray(cum_by_area, dtype=float)
    alphas = np.asarray(alphas, dtype=float).ravel()
    k_areas = cums.shape[0]
    sizes = np.array([len(s) for s in shifts_by_area], dtype=np.int64)
    s_max = int(sizes.max())
    shifts = np.zeros((k_areas, s_max))
    c_lo = np.empty(k_areas)
    c_hi = np.empty(k_areas)
    for k, s in enumerate(shifts_by_area):
        s = np.sort(np.asarray(s, dtype=float).ravel())
        shifts[k, : s.size] = s
        c_lo[k], c_hi[k] = s[0], s[-1]
    cums_padded = np.concatenate([np.zeros((k_areas, 1)), cums], axis=1)

    # Per-area base quantiles bound the mixture quantile via the shift range.
    gidx = np.minimum(
        np.stack([np.searchsorted(cums[k], np.minimum(alphas, cums[k, -1]), side="left")
                  for k in range(k_areas)]),
        u.size - 1,
    )
    ginv = u[gidx]  # (K, A)
    lo = np.nextafter(ginv + c_lo[:, None], -math.inf)
    hi = ginv + c_hi[:, None]

    if HAVE_NUMBA:
        return quantile_kernel(u, cums_padded, shifts, sizes, alphas, lo, hi)
    return _invert_shifted_step_numpy(u, cums_padded, shifts, sizes, alphas, lo, hi)


def _invert_shifted_step_numpy(u, cums_padded, shifts, sizes, alphas, lo, hi):
    k_areas = shifts.shape[0]
    sweights = np.zeros_like(shifts)
    for k in range(k_areas):
        sweights[k, : sizes[k]] = 1.0 / sizes[k]
    flat_off = (np.arange(k_areas) * (u.size + 1))[:, None, None]
    cums_flat = cums_padded.ravel()

    def f_all(y):  # y: (K, A)
        q = y[:, :, None] - shifts[:, None, :]
        idx = np.searchsorted(u, q.ravel(), side="right").reshape(q.shape)
        return np.einsum("kas,ks->ka", cums_flat[idx + flat_off], sweights)

    for _ in range(80):
        scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
        if np.all(hi - lo <= 1e-10 * scale):
            break
        mid = 0.5 * (lo + hi)
        above = f_all(mid) >= alphas[None, :]
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)

    out = hi.copy()
    for k in range(k_areas):
        n_valid = int(sizes[k])
        ck = shifts[k, :n_valid]
        cumk = cums_padded[k]
        wk = 1.0 / n_valid

        def f_one(y):
            return float(cumk[np.searchsorted(u, y - ck, side="right")].sum() * wk)

        for a in range(alphas.size):
            # Slack below lo covers the 1-ulp gap between float sums u + c and
            # the points where the rounded-difference evaluation jumps.
            cursor = _ulps_down(lo[k, a], 4)
            for _ in range(64):
                jump = _next_sum_above(u, ck, cursor)
                if not math.isfinite(jump) or jump > hi[k, a]:
                    break
                hit = next((y for y in _ulp_ladder(jump) if f_one(y) >= alphas[a]), None)
                if hit is not None:
                    out[k, a] = hit
                    break
                cursor = jump
    return out


def invert(cdf: CdfEstimate, alpha: float) -> float:
    """Quantile of any CDF estimate at probability alpha (inf convention)."""
    return cdf.invert(_check_alpha(alpha))


# ---------------------------------------------------------------------------
# Quantile tables and accuracy metrics


@dataclass(frozen=True)
class QuantileTable:
    """Predicted quantiles for every (area, alpha) pair of one method."""

    method: str
    area_ids: tuple[str, ...]
    alphas: np.ndarray  # (A,)
    values: np.ndarray  # (K, A)

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.area_ids), alphas.size):
            raise DataValidationError(
                f"table shape {values.shape} != (areas {len(self.area_ids)}, alphas {alphas.size})"
            )
        if alphas.size > 1:
            tol = 1e-8 * (1.0 + np.abs(values).max())
            if np.any(np.diff(values, axis=1) < -tol):
                raise DataValidationError(f"{self.method}: quantiles not monotone in alpha")

    def rows(self):
        for k, aid in enumerate(self.area_ids):
            for a, alpha in enumerate(self.alphas):
                yield aid, float(alpha), float(self.values[k, a])


def _check_matching(predictions, truths):
    if len(predictions) != len(truths):
        raise DataValidationError(
            f"{len(predictions)} prediction tables vs {len(truths)} truth tables"
        )
    if not predictions:
        raise DataValidationError("no repetitions supplied")
    ref = predictions[0]
    for t in list(predictions) + list(truths):
        if t.area_ids != ref.area_ids or t.alphas.shape != ref.alphas.shape or np.any(
            t.alphas != ref.alphas
        ):
            raise DataValidationError("tables disagree on areas or alphas")


def amse(predictions, truths) -> np.ndarray:
    """Average squared error over repetitions and areas, one value per alpha.

    Sums are exactly rounded (math.fsum), so the result is invariant to the
    ordering of repetitions and areas.
    """
    _check_matching(predictions, truths)
    ref = predictions[0]
    count = len(predictions) * len(ref.area_ids)
    out = np.empty(ref.alphas.size)
    for a in range(ref.alphas.size):
        sq = [
            (p.values[k, a] - t.values[k, a]) ** 2
            for p, t in zip(predictions, truths)
            for k in range(len(ref.area_ids))
        ]
        out[a] = math.fsum(sq) / count
    return out


def area_mse(predictions, truths) -> np.ndarray:
    """Per-(area, alpha) mean squared error over repetitions."""
    _check_matching(predictions, truths)
    ref = predictions[0]
    out = np.empty((len(ref.area_ids), ref.alphas.size))
    for k in range(len(ref.area_ids)):
        for a in range(ref.alphas.size):
            sq = [(p.values[k, a] - t.values[k, a]) ** 2 for p, t in zip(predictions, truths)]
            out[k, a] = math.fsum(sq) / len(predictions)
    return out


def trimmed_ratio(estimated_mse, simulated_mse) -> float:
    """Mean of estimated/simulated MSE ratios over areas, dropping the areas
    with the two largest and two smallest simulated MSEs."""
    est = np.asarray(estimated_mse, dtype=float).ravel()
    sim = np.asarray(simulated_mse, dtype=float).ravel()
    if est.shape != sim.shape:
        raise DataValidationError("estimated and simulated MSE vectors differ in length")
    if est.size < 5:
        raise DataValidationError(f"trimmed ratio needs at least 5 areas, got {est.size}")
    order = np.argsort(sim, kind="stable")
    keep = order[2:-2]
    return math.fsum(est[keep] / sim[keep]) / keep.size
