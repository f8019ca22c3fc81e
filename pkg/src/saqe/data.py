"""Domain types, validation, and CSV ingestion.

A survey is a collection of per-area (x, y) records; a census frame carries
the auxiliary x values (or just their area means) for every population unit.
Area order is first-appearance order in the file, and the first area is the
default baseline for the density-ratio machinery.  All types are immutable
after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DataValidationError

#: Keys understood by config files (flat JSON object).  CLI flags override.
CONFIG_KEYS = {
    "area_col": "survey/census column holding the area identifier (default 'area')",
    "y_col": "survey column holding the response (default 'y')",
    "x_cols": "list of covariate column names (default: every other column)",
    "sampled_col": "census 0/1 column flagging sampled units (default 'sampled')",
    "size_col": "census column with N_k; its presence selects means-only mode (default 'N')",
    "baseline_area": "area id used as the tilting baseline (default: first area)",
    "seed": "root seed for all random streams",
    "basis": "tilting basis name: signroot | linear | quadratic | linear-root",
    "binom_p": "simulation binomial-probability reading: z-clamped | raw-clamped",
    "threads": "worker cap for parallel sections",
}


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class AreaSample:
    """Observed (x, y) records of one small area."""

    area_id: str
    x: np.ndarray  # (n_k, d)
    y: np.ndarray  # (n_k,)

    def __post_init__(self):
        object.__setattr__(self, "x", _freeze(np.atleast_2d(self.x)))
        object.__setattr__(self, "y", _freeze(np.atleast_1d(self.y)))
        if self.x.shape[0] != self.y.shape[0]:
            raise DataValidationError(
                f"area {self.area_id!r}: x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class SurveySample:
    """Per-area survey records, in first-appearance area order."""

    areas: tuple[AreaSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "areas", tuple(self.areas))
        if len(self.areas) < 2:
            raise DataValidationError("need at least 2 areas")
        seen = set()
        d = self.areas[0].x.shape[1]
        for a in self.areas:
            if a.area_id in seen:
                raise DataValidationError(f"duplicate area id {a.area_id!r}")
            seen.add(a.area_id)
            if a.n < 2:
                raise DataValidationError(
                    f"area {a.area_id!r} has {a.n} observation(s); at least 2 are required"
                )
            if a.x.shape[1] != d:
                raise DataValidationError(
                    f"area {a.area_id!r} has {a.x.shape[1]} covariates, expected {d}"
                )
            if not (np.isfinite(a.x).all() and np.isfinite(a.y).all()):
                raise DataValidationError(f"area {a.area_id!r} contains non-finite values")

    @property
    def d(self) -> int:
        return self.areas[0].x.shape[1]

    @property
    def n(self) -> int:
        return sum(a.n for a in self.areas)

    @property
    def area_ids(self) -> tuple[str, ...]:
        return tuple(a.area_id for a in self.areas)

    @property
    def counts(self) -> np.ndarray:
        return np.array([a.n for a in self.areas])

    @property
    def rho(self) -> np.ndarray:
        """Sampling fractions n_k / n as floats."""
        c = self.counts
        return c / c.sum()

    @property
    def rho_exact(self) -> tuple[Fraction, ...]:
        """Sampling fractions as exact rationals; they sum to 1 exactly."""
        n = self.n
        return tuple(Fraction(a.n, n) for a in self.areas)

    def index(self, area_id: str) -> int:
        try:
            return self.area_ids.index(area_id)
        except ValueError:
            raise DataValidationError(f"unknown area {area_id!r}") from None

    def area(self, area_id: str) -> AreaSample:
        return self.areas[self.index(area_id)]


@dataclass(frozen=True)
class CensusArea:
    """Census information for one area: full x rows or just their mean."""

    area_id: str
    size: int
    xbar: np.ndarray  # (d,)
    x: np.ndarray | None = None  # (N_k, d) in full mode
    sample_link: np.ndarray | None = None  # 0-based indices of sampled rows

    def __post_init__(self):
        object.__setattr__(self, "xbar", _freeze(self.xbar))
        if self.x is not None:
            x = _freeze(np.atleast_2d(self.x))
            object.__setattr__(self, "x", x)
            if x.shape[0] != self.size:
                raise DataValidationError(
                    f"area {self.area_id!r}: census size {self.size} != {x.shape[0]} rows"
                )
        if self.sample_link is not None:
            link = np.asarray(self.sample_link, dtype=int)
            link.flags.writeable = False
            object.__setattr__(self, "sample_link", link)
            if len(np.unique(link)) != link.size:
                raise DataValidationError(f"area {self.area_id!r}: duplicate sample_link rows")
            if link.size and (link.min() < 0 or link.max() >= self.size):
                raise DataValidationError(
                    f"area {self.area_id!r}: sample_link outside 1..N_k"
                )

    @property
    def means_only(self) -> bool:
        return self.x is None


@dataclass(frozen=True)
class CensusFrame:
    """Per-area census auxiliaries, aligned with a SurveySample by area id."""

    areas: tuple[CensusArea, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "areas", tuple(self.areas))
        seen = set()
        for a in self.areas:
            if a.area_id in seen:
                raise DataValidationError(f"duplicate census area {a.area_id!r}")
            seen.add(a.area_id)

    @property
    def area_ids(self) -> tuple[str, ...]:
        return tuple(a.area_id for a in self.areas)

    def area(self, area_id: str) -> CensusArea:
        for a in self.areas:
            if a.area_id == area_id:
                return a
        raise DataValidationError(f"area {area_id!r} missing from census")

    def require_full(self, area_id: str) -> CensusArea:
        a = self.area(area_id)
        if a.means_only:
            raise ConfigError(f"area {area_id!r}: census has means only, full x rows required")
        return a

    def require_link(self, area_id: str) -> CensusArea:
        a = self.require_full(area_id)
        if a.sample_link is None:
            raise ConfigError(f"area {area_id!r}: census carries no sample_link")
        return a

    def validate_against(self, sample: SurveySample) -> None:
        """Cross-check N_k >= n_k and link sizes for every surveyed area."""
        for s in sample.areas:
            c = self.area(s.area_id)
            if c.size < s.n:
                raise DataValidationError(
                    f"area {s.area_id!r}: census N_k={c.size} < sample n_k={s.n}"
                )
            if c.sample_link is not None and c.sample_link.size != s.n:
                raise DataValidationError(
                    f"area {s.area_id!r}: sample_link has {c.sample_link.size} rows, sample has {s.n}"
                )


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_cell(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise DataValidationError(f"row {row}: non-numeric value {raw!r} in column {col!r}") from None


def _resolve_columns(header: list[str], schema: dict | None, *, want_y: bool):
    schema = dict(schema or {})
    area_col = schema.get("area_col", "area")
    y_col = schema.get("y_col", "y") if want_y else None
    reserved = {area_col, y_col, schema.get("sampled_col", "sampled"), schema.get("size_col", "N")}
    x_cols = schema.get("x_cols")
    if x_cols is None:
        x_cols = [c for c in header if c not in reserved]
    for col in [area_col] + ([y_col] if want_y else []) + list(x_cols):
        if col not in header:
            raise DataValidationError(f"missing column {col!r} (header: {header})")
    return area_col, y_col, list(x_cols), schema


def load_survey_csv(path, schema: dict | None = None) -> SurveySample:
    """Read a survey CSV into a validated SurveySample.

    The file needs a header row with an area-id column, a response column,
    and one column per covariate; rows stay in file order within each area.
    `schema` may override column names via the keys ``area_col``, ``y_col``
    and ``x_cols``.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataValidationError(f"{path}: empty file")
        area_col, y_col, x_cols, _ = _resolve_columns(reader.fieldnames, schema, want_y=True)
        order: list[str] = []
        xs: dict[str, list[list[float]]] = {}
        ys: dict[str, list[float]] = {}
        for i, row in enumerate(reader, start=2):
            aid = row[area_col]
            if aid not in xs:
                order.append(aid)
                xs[aid], ys[aid] = [], []
            xs[aid].append([_parse_cell(row[c], i, c) for c in x_cols])
            ys[aid].append(_parse_cell(row[y_col], i, y_col))
    areas = tuple(AreaSample(aid, np.array(xs[aid]), np.array(ys[aid])) for aid in order)
    return SurveySample(areas)


def write_survey_csv(sample: SurveySample, path, schema: dict | None = None) -> None:
    """Write a SurveySample back to CSV, round-trip exact."""
    schema = dict(schema or {})
    area_col = schema.get("area_col", "area")
    y_col = schema.get("y_col", "y")
    x_cols = schema.get("x_cols") or [f"x{i + 1}" for i in range(sample.d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([area_col, y_col, *x_cols])
        for a in sample.areas:
            for j in range(a.n):
                writer.writerow(
                    [a.area_id, repr(float(a.y[j])), *(repr(float(v)) for v in a.x[j])]
                )


def load_census_csv(path, schema: dict | None = None) -> CensusFrame:
    """Read a census CSV into a CensusFrame.

    Full mode: one row per population unit, optionally with a 0/1
    ``sampled_col`` populating the sample_link.  Means-only mode is selected
    by the presence of the ``size_col`` column (default ``N``): then each
    area contributes a single row carrying its x means and N_k.
    """
    schema = dict(schema or {})
    sampled_col = schema.get("sampled_col", "sampled")
    size_col = schema.get("size_col", "N")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataValidationError(f"{path}: empty file")
        header = reader.fieldnames
        area_col, _, x_cols, _ = _resolve_columns(header, schema, want_y=False)
        means_only = size_col in header
        has_flag = sampled_col in header
        order: list[str] = []
        xs: dict[str, list[list[float]]] = {}
        links: dict[str, list[int]] = {}
        sizes: dict[str, int] = {}
        for i, row in enumerate(reader, start=2):
            aid = row[area_col]
            if aid not in xs:
                order.append(aid)
                xs[aid], links[aid] = [], []
            if means_only:
                if aid in sizes:
                    raise DataValidationError(f"row {i}: duplicate means row for area {aid!r}")
                sizes[aid] = int(_parse_cell(row[size_col], i, size_col))
            if has_flag and _parse_cell(row[sampled_col], i, sampled_col) != 0.0:
                links[aid].append(len(xs[aid]))
            xs[aid].append([_parse_cell(row[c], i, c) for c in x_cols])
    areas = []
    for aid in order:
        x = np.array(xs[aid])
        if means_only:
            areas.append(CensusArea(aid, sizes[aid], xbar=x[0]))
        else:
            link = np.array(links[aid], dtype=int) if has_flag and links[aid] else None
            areas.append(CensusArea(aid, x.shape[0], xbar=x.mean(axis=0), x=x, sample_link=link))
    return CensusFrame(tuple(areas))


def load_config(path) -> dict:
    """Load a flat JSON config file; see CONFIG_KEYS for documented keys."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return cfg
