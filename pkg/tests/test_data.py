import csv
from fractions import Fraction

import numpy as np
import pytest

from saqe.data import (
    AreaSample,
    CensusArea,
    CensusFrame,
    SurveySample,
    load_census_csv,
    load_survey_csv,
    write_survey_csv,
)
from saqe.errors import DataValidationError
from saqe.rng import RngStream

from conftest import make_survey


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_minimal_survey(tmp_path):
    p = tmp_path / "s.csv"
    write_rows(p, ["area", "y", "x1"], [
        ["A", "1.0", "0.5"], ["A", "2.0", "1.5"],
        ["B", "3.0", "2.5"], ["B", "4.0", "3.5"],
    ])
    s = load_survey_csv(p)
    assert len(s.areas) == 2 and s.n == 4 and s.d == 1
    assert s.area_ids == ("A", "B")


def test_single_observation_area_rejected(tmp_path):
    p = tmp_path / "s.csv"
    write_rows(p, ["area", "y", "x1"], [
        ["A", "1.0", "0.5"],
        ["B", "3.0", "2.5"], ["B", "4.0", "3.5"],
    ])
    with pytest.raises(DataValidationError, match="'A'"):
        load_survey_csv(p)


def test_paper_sized_survey(tmp_path):
    rng = np.random.default_rng(0)
    p = tmp_path / "s.csv"
    rows = []
    for k in range(20):
        for _ in range(30):
            rows.append([f"area{k}", repr(rng.normal()), repr(rng.normal()),
                         repr(rng.normal()), repr(rng.normal())])
    write_rows(p, ["area", "y", "x1", "x2", "x3"], rows)
    s = load_survey_csv(p)
    assert s.n == 600 and len(s.areas) == 20 and s.d == 3
    assert np.all(s.counts == 30)


def test_missing_column_and_bad_cell(tmp_path):
    p = tmp_path / "s.csv"
    write_rows(p, ["region", "y", "x1"], [["A", "1", "2"], ["A", "2", "3"]])
    with pytest.raises(DataValidationError, match="area"):
        load_survey_csv(p)
    p2 = tmp_path / "s2.csv"
    write_rows(p2, ["area", "y", "x1"], [
        ["A", "1", "2"], ["A", "oops", "3"], ["B", "1", "2"], ["B", "2", "3"],
    ])
    with pytest.raises(DataValidationError, match="row 3.*oops"):
        load_survey_csv(p2)


def test_roundtrip_lossless(tmp_path):
    s = make_survey(seed=5, n_areas=3, n_k=7, d=3)
    p = tmp_path / "out.csv"
    write_survey_csv(s, p)
    s2 = load_survey_csv(p)
    assert s2.area_ids == s.area_ids
    for a, b in zip(s.areas, s2.areas):
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    # second round trip is byte-stable
    p2 = tmp_path / "out2.csv"
    write_survey_csv(s2, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_rho_exact_sums_to_one():
    rng = np.random.default_rng(1)
    for _ in range(20):
        counts = rng.integers(2, 23, size=rng.integers(2, 9))
        areas = tuple(
            AreaSample(f"a{i}", rng.normal(size=(c, 1)), rng.normal(size=c))
            for i, c in enumerate(counts)
        )
        s = SurveySample(areas)
        assert sum(s.rho_exact, Fraction(0)) == 1
        assert np.isclose(s.rho.sum(), 1.0)


def test_census_full_and_flags(tmp_path):
    rng = np.random.default_rng(2)
    rows = []
    for k in range(3):
        flagged = set(rng.choice(50, 5, replace=False).tolist())
        for j in range(50):
            rows.append([f"a{k}", repr(rng.normal()), int(j in flagged)])
    p = tmp_path / "c.csv"
    write_rows(p, ["area", "x1", "sampled"], rows)
    c = load_census_csv(p)
    for ca in c.areas:
        assert ca.size == 50 and not ca.means_only
        assert ca.sample_link is not None and ca.sample_link.size == 5


def test_census_means_only(tmp_path):
    p = tmp_path / "c.csv"
    write_rows(p, ["area", "x1", "x2", "N"], [
        ["A", "1.5", "0.5", "100"], ["B", "2.5", "1.5", "200"],
    ])
    c = load_census_csv(p)
    assert all(ca.means_only for ca in c.areas)
    assert c.area("B").size == 200
    assert np.allclose(c.area("A").xbar, [1.5, 0.5])


def test_census_size_crosscheck():
    s = make_survey(n_k=10)
    small = CensusFrame(tuple(
        CensusArea(a.area_id, 5, xbar=a.x.mean(axis=0)) for a in s.areas
    ))
    with pytest.raises(DataValidationError, match="N_k"):
        small.validate_against(s)


def test_sample_link_validation():
    with pytest.raises(DataValidationError, match="duplicate"):
        CensusArea("A", 10, xbar=np.zeros(1), x=np.zeros((10, 1)),
                   sample_link=np.array([1, 1]))
    with pytest.raises(DataValidationError, match="1..N_k"):
        CensusArea("A", 10, xbar=np.zeros(1), x=np.zeros((10, 1)),
                   sample_link=np.array([3, 10]))


def test_rng_streams_reproducible_and_independent():
    a = RngStream(7, (1,)).generator().normal(size=5)
    b = RngStream(7, (1,)).generator().normal(size=5)
    assert np.array_equal(a, b)
    c = RngStream(7, (2,)).generator().normal(size=5)
    assert not np.array_equal(a, c)
    # creation order does not matter
    s = RngStream(7)
    first_then_second = (s.child(1).generator().normal(), s.child(2).generator().normal())
    second_then_first = (s.child(2).generator().normal(), s.child(1).generator().normal())
    assert first_then_second[0] == second_then_first[1]
    assert first_then_second[1] == second_then_first[0]
