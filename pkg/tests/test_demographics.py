import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recruitsim.demographics import (
    DEFAULT_SCHEMA,
    CohortCounts,
    JointDistribution,
    MarginalSet,
    SchemaError,
    apply_participation_rates,
    clean_counts_to_distribution,
    joint_from_marginals,
    marginals_of_joint,
    ratio_table_to_marginals,
    read_ratio_csv,
    read_site_bundle,
    redistribute_age_bin,
    write_site_bundle,
    bundled_table_path,
)

from conftest import TOY_2X2

CENSUS = (
    [0.2107, 0.3610, 0.2513, 0.1769],
    [0.5041, 0.4959],
    [0.0135, 0.0648, 0.1405, 0.0027, 0.7785],
    [0.1905, 0.8095],
)


def test_default_schema_layout():
    assert DEFAULT_SCHEMA.cell_count == 80
    assert DEFAULT_SCHEMA.shape == (4, 2, 5, 2)
    assert DEFAULT_SCHEMA.cell_labels(0) == ("0-17", "Female", "AI/AN", "H/L")
    assert DEFAULT_SCHEMA.cell_labels(1) == ("0-17", "Female", "AI/AN", "NH/L")
    assert DEFAULT_SCHEMA.cell_labels(79) == ("65+", "Male", "White", "NH/L")
    for i in range(80):
        assert DEFAULT_SCHEMA.cell_index(DEFAULT_SCHEMA.cell_labels(i)) == i


def test_joint_from_marginals_toy():
    m = MarginalSet(TOY_2X2, ([0.5, 0.5], [0.3, 0.7]))
    np.testing.assert_allclose(joint_from_marginals(m).probs, [0.15, 0.35, 0.15, 0.35], atol=1e-12)


def test_joint_degenerate_attribute_zeroes_cells():
    m = MarginalSet(TOY_2X2, ([1.0, 0.0], [0.3, 0.7]))
    j = joint_from_marginals(m)
    assert np.all(j.probs[2:] == 0)


def test_census_joint_cell():
    j = joint_from_marginals(MarginalSet.normalized(DEFAULT_SCHEMA, CENSUS))
    i = DEFAULT_SCHEMA.cell_index(("0-17", "Female", "White", "NH/L"))
    assert j.probs[i] == pytest.approx(0.2107 * 0.5041 * 0.7785 * 0.8095, rel=1e-3)
    assert j.probs[i] == pytest.approx(0.06694, abs=5e-5)


def test_joint_dimension_mismatch():
    with pytest.raises(SchemaError):
        MarginalSet(TOY_2X2, ([0.5, 0.5], [0.2, 0.3, 0.5]))


def test_marginals_of_joint():
    j = JointDistribution([0.15, 0.35, 0.15, 0.35], TOY_2X2)
    m = marginals_of_joint(j)
    np.testing.assert_allclose(m.vectors[0], [0.5, 0.5])
    np.testing.assert_allclose(m.vectors[1], [0.3, 0.7])
    u = marginals_of_joint(JointDistribution(np.full(80, 1 / 80)))
    for (_, cats), v in zip(DEFAULT_SCHEMA.attributes, u.vectors):
        np.testing.assert_allclose(v, 1 / len(cats))


simplex = lambda k: st.lists(st.floats(0.01, 10), min_size=k, max_size=k)


@given(simplex(4), simplex(2), simplex(5), simplex(2))
@settings(max_examples=50, deadline=None)
def test_marginal_round_trip(a, b, c, d):
    m = MarginalSet.normalized(DEFAULT_SCHEMA, (a, b, c, d))
    j = joint_from_marginals(m)
    assert abs(j.probs.sum() - 1) < 1e-9 and j.probs.min() >= 0
    back = marginals_of_joint(j)
    for x, y in zip(m.vectors, back.vectors):
        np.testing.assert_allclose(x, y, atol=1e-9)


def test_ratio_conversion_examples(table):
    census = table.census
    vumc = table.site_ratios["VUMC"]
    raw_age = 0.2107 * vumc[0][0]
    assert raw_age == pytest.approx(0.2606, abs=1e-4)
    raw_aian = 0.0135 / 6.374
    assert raw_aian == pytest.approx(0.002118, abs=1e-6)
    m = ratio_table_to_marginals(census, vumc)
    assert m["age"].sum() == pytest.approx(1.0, abs=1e-12)


def test_vumc_age_raw_sum():
    # hand sum: 0.2107*1.237 + 0.3610/1.082 + 0.2513/1.092 + 0.1769/1.008
    hand = 0.26063590 + 0.33364140 + 0.23012821 + 0.17549603
    assert hand == pytest.approx(0.9999, abs=1e-4)
    census = np.array(CENSUS[0])
    r = np.array([1.237, -1.082, -1.092, -1.008])
    raw = np.where(r > 0, census * r, census / np.abs(r))
    assert raw.sum() == pytest.approx(hand, abs=1e-7)


def test_all_sites_raw_sums_within_half_percent(table):
    for name, ratios in table.site_ratios.items():
        for base, r in zip(table.census.vectors, ratios):
            raw = np.where(r > 0, base * r, base / np.abs(r))
            assert abs(raw.sum() - 1) < 0.005, name


def test_ratio_errors(table):
    bad = [r.copy() for r in table.site_ratios["VUMC"]]
    bad[1][0] = 0.0
    with pytest.raises(ValueError, match="gender=Female"):
        ratio_table_to_marginals(table.census, bad)
    bad = [r.copy() for r in table.site_ratios["VUMC"]]
    bad[1][0] = 1.5
    with pytest.raises(ValueError, match="sum"):
        ratio_table_to_marginals(table.census, bad)


def test_clean_counts():
    np.testing.assert_allclose(clean_counts_to_distribution({"A": 50, "B": 30, "Unknown": 20}), [0.625, 0.375])
    np.testing.assert_allclose(clean_counts_to_distribution({"A": 10, "Unknown": 0}), [1.0])
    with pytest.raises(ValueError):
        clean_counts_to_distribution({"Unknown": 5})


FIVE_YEAR = ["0-4", "5-9", "10-14", "15-19", "20-24", "25-29", "30-34", "35-39", "40-44",
             "45-49", "50-54", "55-59", "60-64", "65-69", "70-74", "75-79", "80-84", "85+"]


def test_redistribute_age_bin():
    bins = {b: 0 for b in FIVE_YEAR}
    bins["15-19"] = 1000
    np.testing.assert_allclose(redistribute_age_bin(bins, normalize=False), [600, 400, 0, 0])
    uniform = {b: 1000 for b in FIVE_YEAR}
    mass = redistribute_age_bin(uniform, normalize=False)
    assert mass[0] == pytest.approx(3 * 1000 + 600)
    assert mass.sum() == pytest.approx(18000)
    no_teen = dict(uniform, **{"15-19": 0})
    np.testing.assert_allclose(redistribute_age_bin(no_teen, normalize=False), [3000, 5000, 4000, 5000])
    assert redistribute_age_bin(uniform).sum() == pytest.approx(1.0)


def test_participation_rates():
    d = JointDistribution([0.5, 0.5], _two_cell())
    np.testing.assert_allclose(apply_participation_rates(d, [2, 1]).probs, [2 / 3, 1 / 3])
    d = JointDistribution([0.8, 0.2], _two_cell())
    np.testing.assert_allclose(apply_participation_rates(d, [1, 4]).probs, [0.5, 0.5])
    with pytest.raises(ValueError):
        apply_participation_rates(d, [1, 0])


def test_constant_rates_identity(sites):
    r = sites[0].response
    np.testing.assert_allclose(apply_participation_rates(r, np.full(80, 3.7)).probs, r.probs, atol=1e-15)


def _two_cell():
    from recruitsim.demographics import AttributeSchema
    return AttributeSchema((("x", ("a", "b")),))


def test_cohort_counts():
    c = CohortCounts.empty(TOY_2X2).add([1, 2, 3, 4])
    assert c.total == 10
    with pytest.raises(ValueError):
        CohortCounts([1, -1, 0, 0], TOY_2X2)


def test_ratio_csv_errors_name_cell(tmp_path):
    text = bundled_table_path().read_text().replace("-6.374", "0")
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(SchemaError, match="VUMC at race=AI/AN"):
        read_ratio_csv(p)


def test_bundle_round_trip(tmp_path, sites, target):
    p = tmp_path / "b.json"
    write_site_bundle(p, sites, target)
    doc = json.loads(p.read_text())
    assert doc["sites"][0]["response"]["cells"][0]["labels"] == ["0-17", "Female", "AI/AN", "H/L"]
    s2, t2 = read_site_bundle(p)
    assert [s.name for s in s2] == [s.name for s in sites]
    np.testing.assert_array_equal(t2.probs, target.probs)
    np.testing.assert_array_equal(s2[3].response.probs, sites[3].response.probs)
