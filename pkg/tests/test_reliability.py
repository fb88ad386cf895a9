import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hardnet_cws.reliability import (AnovaTable, DegenerateRatingsError, RatingsMatrix, anova_two_way, band_label,
                                     icc_agreement, icc_consistency, improvement_table, interpret_icc,
                                     load_ratings_csv, rating_distribution, star_distribution)

from oracles import anova_loop, icc_from_ms

OFFSET = [[1, 2], [3, 4], [5, 6]]
# six subjects rated by four judges; widely reproduced textbook example
TEXTBOOK = [[9, 2, 5, 8], [6, 1, 3, 2], [8, 4, 6, 8], [7, 1, 2, 6], [10, 5, 6, 9], [6, 2, 4, 7]]

ratings = st.integers(2, 8).flatmap(lambda n: st.integers(2, 5).flatmap(
    lambda k: arrays(np.float64, (n, k), elements=st.integers(1, 5).map(float))))


def test_offset_fixture():
    t = anova_two_way(np.array(OFFSET, float))
    assert (t.ms_r, t.ms_c, t.ms_e) == pytest.approx(anova_loop(OFFSET), abs=1e-12)
    c, a = icc_consistency(t), icc_agreement(t)
    assert c.value == pytest.approx(1.0)
    assert a.value == pytest.approx(0.9412, abs=1e-4)
    assert a.value == pytest.approx(8 / 8.5)
    assert math.isnan(c.lower) and math.isnan(a.upper)


def test_textbook_values():
    t = anova_two_way(np.array(TEXTBOOK, float))
    c, a = icc_consistency(t), icc_agreement(t)
    assert c.value == pytest.approx(0.91, abs=0.005)
    assert (c.lower, c.upper) == pytest.approx((0.68, 0.99), abs=0.006)
    assert a.value == pytest.approx(0.62, abs=0.005)
    assert (a.lower, a.upper) == pytest.approx((0.07, 0.93), abs=0.006)


def test_bands():
    assert [interpret_icc(v) for v in (0.2, 0.5, 0.79)] == ["poor", "moderate", "excellent"]
    assert interpret_icc(0.4) == "moderate" and interpret_icc(0.75) == "excellent"
    assert interpret_icc(-0.3) == "poor"
    with pytest.raises(ValueError):
        interpret_icc(1.5)


@given(ratings)
def test_anova_matches_summation(x):
    assume(np.ptp(x.mean(axis=1)) > 0)
    t = anova_two_way(x)
    assert (t.ms_r, t.ms_c, t.ms_e) == pytest.approx(anova_loop(x.tolist()), rel=1e-9, abs=1e-9)
    assume(t.ms_r + (t.ms_c - t.ms_e) / t.n > 1e-9)
    c, a = icc_from_ms(t.ms_r, t.ms_c, t.ms_e, t.n)
    assert icc_consistency(t).value == pytest.approx(c)
    assert icc_agreement(t).value == pytest.approx(a)


@given(ratings, st.integers(1, 3), st.data())
def test_offset_invariance(x, shift, data):
    assume(np.ptp(x.mean(axis=1)) > 0)
    col = data.draw(st.integers(0, x.shape[1] - 1))
    y = x.copy()
    y[:, col] += shift
    tx, ty = anova_two_way(x), anova_two_way(y)
    assume(tx.ms_r > tx.ms_e + 1e-9)
    assert icc_consistency(ty).value == pytest.approx(icc_consistency(tx).value, abs=1e-9)
    # the shift changes only MS_C, and agreement falls exactly when MS_C rises
    assert (ty.ms_r, ty.ms_e) == pytest.approx((tx.ms_r, tx.ms_e), abs=1e-9)
    if ty.ms_c > tx.ms_c + 1e-9:
        assert icc_agreement(ty).value < icc_agreement(tx).value
    elif ty.ms_c < tx.ms_c - 1e-9:
        assert icc_agreement(ty).value > icc_agreement(tx).value


@given(ratings)
def test_agreement_below_consistency(x):
    assume(np.ptp(x.mean(axis=1)) > 0)
    t = anova_two_way(x)
    if t.ms_c >= t.ms_e and t.ms_r >= t.ms_e:
        assert icc_agreement(t).value <= icc_consistency(t).value + 1e-12


def test_adding_constant_strictly_lowers_agreement():
    x = np.array(TEXTBOOK, float)
    x = x - x.mean(axis=0)  # zero column effects, so MS_C = 0 before the shift
    y = x.copy()
    y[:, 0] += 2
    before, after = anova_two_way(x), anova_two_way(y)
    assert icc_consistency(after).value == pytest.approx(icc_consistency(before).value)
    assert icc_agreement(after).value < icc_agreement(before).value


@given(ratings, st.randoms())
def test_row_permutation_invariance(x, rnd):
    assume(np.ptp(x.mean(axis=1)) > 0)
    t = anova_two_way(x)
    assume(t.ms_r + (t.ms_c - t.ms_e) / t.n > 1e-9)
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    t1, t2 = anova_two_way(x), anova_two_way(x[perm])
    assert icc_consistency(t1).value == pytest.approx(icc_consistency(t2).value)
    assert icc_agreement(t1).value == pytest.approx(icc_agreement(t2).value)


def test_ci_brackets_estimate():
    t = anova_two_way(np.array(TEXTBOOK, float))
    for r in (icc_consistency(t), icc_agreement(t)):
        assert r.lower < r.value < r.upper
    wide = icc_consistency(t, confidence=0.99)
    assert wide.lower < icc_consistency(t).lower


def test_degenerate_inputs():
    with pytest.raises(DegenerateRatingsError):
        anova_two_way(np.array([[3, 3], [3, 3]], float))
    with pytest.raises(DegenerateRatingsError):
        anova_two_way(np.array([[1, 2]], float))
    with pytest.raises(DegenerateRatingsError):
        anova_two_way(np.array([[1, np.nan], [2, 3], [4, np.nan]]))
    with pytest.raises(DegenerateRatingsError):
        icc_consistency(AnovaTable(0.0, 1.0, 1.0, 3, 2))
    with pytest.raises(DegenerateRatingsError):
        icc_agreement(AnovaTable(0.1, 0.0, 1.0, 3, 2))


def test_negative_consistency_is_poor():
    r = icc_consistency(AnovaTable(0.1, 0.0, 1.0, 3, 2))
    assert r.value == pytest.approx(-9.0) and r.band == "poor"


def test_listwise_deletion():
    r = RatingsMatrix(np.array([[1, 2], [np.nan, 3], [3, 4], [5, 6]]), ["a", "b", "c", "d"], ["r1", "r2"])
    c = r.complete()
    assert c.subjects == ["a", "c", "d"]
    assert anova_two_way(r) == anova_two_way(c)


def test_check_scale():
    RatingsMatrix.from_array([[1, 5], [np.nan, 3]]).check_scale()
    with pytest.raises(ValueError, match="6"):
        RatingsMatrix.from_array(OFFSET).check_scale()


def test_load_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("image_id,rater_id,rating\na,r1,1\na,r2,2\nb,r1,3\nb,r2,\nc,r2,5\n")
    r = load_ratings_csv(p)
    assert r.subjects == ["a", "b", "c"] and r.raters == ["r1", "r2"]
    np.testing.assert_array_equal(np.isnan(r.values), [[False, False], [False, True], [True, False]])
    p.write_text("image_id,rater_id,rating\na,r1,x\n")
    with pytest.raises(ValueError, match="not a number"):
        load_ratings_csv(p)
    p.write_text("image_id,rater_id,rating\na,r1,1\na,r1,2\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_ratings_csv(p)
    p.write_text("image,rater_id,rating\n")
    with pytest.raises(ValueError, match="missing columns"):
        load_ratings_csv(p)


def test_distribution_and_pair_counts():
    r = RatingsMatrix(np.array([[5, 4], [4, 2], [3, 3], [5, np.nan]]), [], ["r1", "r2"])
    d = rating_distribution(r, (4, 5))
    assert d["band"] == "4-5 Star"
    assert d["per_rater"] == {"r1": 75.0, "r2": pytest.approx(100 / 3)}
    pair = d["pairs"][("r1", "r2")]
    assert pair == {"n": 3, "exact": 1, "off_by_one": 1, "larger": 1}
    assert pair["exact"] + pair["off_by_one"] + pair["larger"] == pair["n"]
    assert star_distribution(r)["r1"][5] == 50.0


def test_improvement_table_columns():
    base = RatingsMatrix(np.array([[5, 3], [4, 5]]), [], ["r1", "r2"])
    new = RatingsMatrix(np.array([[5, 5], [5, 5]]), [], ["r1", "r2"])
    rows = improvement_table(base, new)
    assert list(rows[0]) == ["Rater", "DFUS 5 Star", "CWS 5 Star", "Improvement %"]
    assert rows[0]["Improvement %"] == 50.0 and rows[1]["Improvement %"] == 50.0
    assert band_label((5,)) == "5 Star"
