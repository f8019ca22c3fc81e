"""Method registry: one place that maps a method tag to its per-area CDF and
quantile table, with lazily shared model fits."""

from __future__ import annotations

import numpy as np

from .cdfs import QuantileTable, StepCdf, invert_shifted_step
from .competitors import cdf_mq, cdf_mr, fit_mq, quantile_direct
from .data import CensusFrame, SurveySample
from .drm import cdf_ebel, cdf_el, ebel2_shifts, el_shifts, fit_drm
from .errors import ConfigError
from .ner import cdf_eb, cdf_ner, fit_ner_mle
from .rng import RngStream

ALL_METHODS = ("dir", "ner", "el", "eb1", "eb2", "ebel1", "ebel2", "mr", "mq")
CENSUS_METHODS = frozenset({"eb1", "eb2", "ebel1", "ebel2", "mr", "mq"})
_ALIASES = {"eb": "eb2", "ebel": "ebel2"}


def normalize_method(tag: str) -> str:
    """Canonical method tag; resolves the eb/ebel aliases to their *2 forms."""
    tag = str(tag).strip().lower()
    tag = _ALIASES.get(tag, tag)
    if tag not in ALL_METHODS:
        raise ConfigError(f"unknown method {tag!r}; choose from {ALL_METHODS}")
    return tag


class PredictorContext:
    """Bundles one survey (and optional census) with lazily computed fits so
    that several methods can share the same NER/DRM/MQ estimates."""

    def __init__(
        self,
        sample: SurveySample,
        census: CensusFrame | None = None,
        *,
        basis="signroot",
        baseline: str | None = None,
        mr_draws: int = 100,
        rng: RngStream | None = None,
        warn: bool = True,
        drm_start: np.ndarray | None = None,
    ):
        self.sample = sample
        self.census = census
        self.basis = basis
        self.baseline = baseline
        self.mr_draws = mr_draws
        self.rng = rng
        self.warn = warn
        self.drm_start = drm_start
        self._ner = None
        self._drm = None
        self._mq = None

    @property
    def ner(self):
        if self._ner is None:
            self._ner = fit_ner_mle(self.sample, self.census, warn_sample_means=self.warn)
        return self._ner

    @property
    def drm(self):
        if self._drm is None:
            self._drm = fit_drm(
                self.sample, self.basis, baseline=self.baseline, start=self.drm_start
            )
        return self._drm

    @property
    def mq(self):
        if self._mq is None:
            self._mq = fit_mq(self.sample)
        return self._mq

    def _require_census(self, method: str) -> CensusFrame:
        if self.census is None:
            raise ConfigError(f"method {method!r} needs census x information")
        return self.census

    def area_cdf(self, method: str, area: str):
        """CDF estimate of one method for one area."""
        method = normalize_method(method)
        if method == "dir":
            return StepCdf(self.sample.area(area).y)
        if method == "ner":
            return cdf_ner(self.ner, area)
        if method == "el":
            return cdf_el(self.drm, self.ner, area)
        if method in ("eb1", "eb2"):
            return cdf_eb(self.ner, self._require_census(method), area, variant=method)
        if method in ("ebel1", "ebel2"):
            return cdf_ebel(self.drm, self._require_census(method), area, variant=method)
        if method == "mq":
            return cdf_mq(self.mq, self.sample, self._require_census(method), area)
        if method == "mr":
            census = self._require_census(method)
            rng = self.rng if self.rng is not None else RngStream(0)
            k = self.sample.index(area)
            return cdf_mr(self.ner, self.sample, census, area, L=self.mr_draws, rng=rng.child(k))
        raise ConfigError(f"unknown method {method!r}")

    def table(self, method: str, alphas) -> QuantileTable:
        """Quantile predictions of one method for every area."""
        method = normalize_method(method)
        alphas = np.asarray(alphas, dtype=float).ravel()
        if method == "dir":
            values = np.stack(
                [StepCdf(a.y).invert_many(alphas) for a in self.sample.areas]
            )
        elif method in ("el", "ebel2"):
            # Tilted CDFs share one support, so inversion batches across areas.
            fit = self.drm
            if method == "el":
                shifts = [el_shifts(fit, self.ner, k) for k in range(len(fit.area_ids))]
            else:
                census = self._require_census(method)
                shifts = [
                    ebel2_shifts(fit, census.require_full(aid), k)
                    for k, aid in enumerate(fit.area_ids)
                ]
            cums = np.cumsum(fit.tilt.weights, axis=1)
            values = invert_shifted_step(fit.tilt.support, cums, shifts, alphas)
        else:
            values = np.stack(
                [self.area_cdf(method, aid).invert_many(alphas) for aid in self.sample.area_ids]
            )
        return QuantileTable(method, self.sample.area_ids, alphas, values)


__all__ = [
    "ALL_METHODS",
    "CENSUS_METHODS",
    "PredictorContext",
    "normalize_method",
    "quantile_direct",
]
