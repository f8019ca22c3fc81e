"""Jitted kernel for shifted-step-mixture quantiles.

Same contract as the pure-numpy path in cdfs: bisection-style bracketing to a
relative tolerance, then an exact snap to the smallest float sum u_i + c_s
whose evaluated CDF reaches alpha (with 1-ulp retries for rounded
differences).  The kernel walks sorted shifts with a moving support pointer
(O(n + S) per evaluation) and narrows brackets by safeguarded interpolation,
which changes only the bracket path, never the snapped result.  Falls back
to the numpy path when numba is unavailable.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _bisect_right(u, q):
    lo, hi = 0, u.size
    while lo < hi:
        mid = (lo + hi) // 2
        if u[mid] <= q:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _f_cell(u, cumk, c_sorted, n_valid, y):
    """Mixture CDF at y; c_sorted ascending so queries y - c_s descend."""
    j = _bisect_right(u, y - c_sorted[0])
    total = cumk[j]
    for s in range(1, n_valid):
        q = y - c_sorted[s]
        while j > 0 and u[j - 1] > q:
            j -= 1
        total += cumk[j]
    return total / n_valid


@njit(cache=True)
def _ulps_down_jit(x, k):
    for _ in range(k):
        x = np.nextafter(x, -math.inf)
    return x


@njit(cache=True)
def quantile_kernel(u, cums_padded, shifts_sorted, sizes, alphas, lo0, hi0):
    k_areas, n_alpha = lo0.shape
    out = np.empty((k_areas, n_alpha))
    for k in range(k_areas):
        cumk = cums_padded[k]
        c = shifts_sorted[k]
        n_valid = sizes[k]
        for a in range(n_alpha):
            alpha = alphas[a]
            lo = lo0[k, a]
            hi = hi0[k, a]
            flo = _f_cell(u, cumk, c, n_valid, lo)
            fhi = _f_cell(u, cumk, c, n_valid, hi)
            for it in range(80):
                width = hi - lo
                scale = max(1.0, abs(lo), abs(hi))
                if width <= 1e-10 * scale:
                    break
                if it % 2 == 0 and fhi > flo:
                    x = lo + (alpha - flo) / (fhi - flo) * width
                    margin = 0.01 * width
                    if x < lo + margin:
                        x = lo + margin
                    elif x > hi - margin:
                        x = hi - margin
                else:
                    x = 0.5 * (lo + hi)
                fx = _f_cell(u, cumk, c, n_valid, x)
                if fx >= alpha:
                    hi, fhi = x, fx
                else:
                    lo, flo = x, fx
            point = hi
            cursor = _ulps_down_jit(lo, 4)
            for _ in range(64):
                jump = math.inf
                for s in range(n_valid):
                    j = _bisect_right(u, cursor - c[s])
                    for off in (-1, 0):
                        jj = j + off
                        if 0 <= jj < u.size:
                            v = u[jj] + c[s]
                            if cursor < v < jump:
                                jump = v
                if not math.isfinite(jump) or jump > hi:
                    break
                hit = math.nan
                y = jump
                for _ in range(3):
                    if _f_cell(u, cumk, c, n_valid, y) >= alpha:
                        hit = y
                        break
                    y = np.nextafter(y, math.inf)
                if not math.isnan(hit):
                    point = hit
                    break
                cursor = jump
            out[k, a] = point
    return out
