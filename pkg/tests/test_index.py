import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nemonsoon.errors import (
    InsufficientSeasonSamplesError,
    ZeroVarianceError,
)
from nemonsoon.geogrid import AreaSet, Rect, month_axis
from nemonsoon.index import (
    ONSET_MONTHS,
    RETREAT_MONTHS,
    SeasonMask,
    evaluate_pair,
    normalise_series,
    objective_q,
    pearson,
    raw_index,
    seasonal_correlations,
)

from conftest import make_field, whole_grid_rect


class TestSeasons:
    def test_partition(self):
        assert ONSET_MONTHS | RETREAT_MONTHS == frozenset(range(1, 13))
        assert not ONSET_MONTHS & RETREAT_MONTHS
        assert ONSET_MONTHS == frozenset({10, 11, 12, 1, 2, 3})

    def test_bad_mask_rejected(self):
        with pytest.raises(ValueError):
            SeasonMask(frozenset({1, 2}), frozenset({2, 3}))
        with pytest.raises(ValueError):
            SeasonMask(frozenset({1}), frozenset({2}))


class TestPearson:
    def test_hand_case(self):
        r = pearson(np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 7.0]))
        assert r == pytest.approx(0.9934, abs=1e-4)

    def test_perfect_and_anti(self):
        x = np.arange(10.0)
        assert pearson(x, 3 * x + 1) == pytest.approx(1.0)
        assert pearson(x, -2 * x + 5) == pytest.approx(-1.0)

    def test_constant_raises(self):
        with pytest.raises(ZeroVarianceError):
            pearson(np.ones(5), np.arange(5.0))
        with pytest.raises(ZeroVarianceError):
            pearson(np.arange(5.0), np.ones(5))

    @given(st.integers(0, 100))
    @settings(max_examples=30, deadline=None)
    def test_bounded_and_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=30)
        y = rng.normal(size=30)
        r = pearson(x, y)
        assert -1.0 <= r <= 1.0
        assert pearson(y, x) == pytest.approx(r)

    @given(st.integers(0, 100), st.floats(0.1, 10), st.floats(-5, 5))
    @settings(max_examples=30, deadline=None)
    def test_affine_invariance(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=20)
        y = rng.normal(size=20)
        assert pearson(a * x + b, y) == pytest.approx(pearson(x, y), abs=1e-12)


class TestNormalise:
    def test_full_series_contract(self, rng):
        z = normalise_series(rng.normal(3.0, 2.0, size=240))
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1.0) < 1e-9

    def test_reference_window(self, rng):
        s = rng.normal(size=100)
        ref = slice(0, 50)
        z = normalise_series(s, ref)
        assert abs(z[ref].mean()) < 1e-9
        assert abs(z[ref].std() - 1.0) < 1e-9

    def test_constant_raises(self):
        with pytest.raises(ZeroVarianceError):
            normalise_series(np.full(12, 7.0))

    def test_preserves_pearson(self, rng):
        x = rng.normal(size=40)
        y = rng.normal(size=40)
        assert pearson(normalise_series(x), y) == pytest.approx(pearson(x, y), abs=1e-12)


class TestObjective:
    @pytest.mark.parametrize(
        "r_on,r_re,q",
        [(0.2, 0.3, 0.065), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (-0.5, 0.5, 0.25)],
    )
    def test_hand_values(self, r_on, r_re, q):
        assert objective_q(r_on, r_re) == pytest.approx(q)

    def test_sign_blind(self):
        assert objective_q(-0.7, 0.4) == objective_q(0.7, -0.4)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            objective_q(1.2, 0.0)

    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_bounds(self, a, b):
        assert 0.0 <= objective_q(a, b) <= 1.0


class TestSeasonalCorrelations:
    def test_season_restriction(self):
        nt = 24
        months = np.asarray(month_axis("2000-01", nt))
        rng = np.random.default_rng(7)
        z = rng.normal(size=nt)
        y_on = rng.normal(size=nt)
        y_re = rng.normal(size=nt)
        r_on, r_re = seasonal_correlations(z, y_on, y_re, months)
        sel_on = np.isin(months, list(ONSET_MONTHS))
        sel_re = ~sel_on
        assert r_on == pytest.approx(pearson(z[sel_on], y_on[sel_on]))
        assert r_re == pytest.approx(pearson(z[sel_re], y_re[sel_re]))

    def test_too_few_samples(self):
        months = np.array([10, 11, 12, 1])  # onset only
        z = np.arange(4.0)
        with pytest.raises(InsufficientSeasonSamplesError):
            seasonal_correlations(z, z, z, months)


class TestEvaluatePair:
    def _world(self, nt=36):
        rng = np.random.default_rng(5)
        vals = rng.uniform(15, 25, size=(nt, 4, 4)).astype(np.float32)
        field = make_field(vals)
        a = AreaSet.of(Rect(0.0, 0.5, 100.0, 100.5))
        b = AreaSet.of(Rect(1.0, 1.5, 101.0, 101.5))
        z = raw_index(field, a, b)
        return field, a, b, z

    def test_valid_pair_matches_components(self):
        field, a, b, raw = self._world()
        rng = np.random.default_rng(9)
        y_on = rng.normal(size=len(raw))
        y_re = rng.normal(size=len(raw))
        rep = evaluate_pair(field, a, b, y_on, y_re)
        assert rep.valid
        z = normalise_series(raw)
        r_on, r_re = seasonal_correlations(z, y_on, y_re, field.spec.months())
        assert rep.q == pytest.approx(objective_q(r_on, r_re))

    def test_ocean_constraint_invalid_not_raised(self):
        nt = 36
        vals = np.full((nt, 4, 4), 20.0, dtype=np.float32)
        vals += np.random.default_rng(1).normal(0, 1, size=vals.shape).astype(np.float32)
        vals[:, :2, :2] = np.nan  # land under rect A
        field = make_field(vals)
        a = AreaSet.of(Rect(0.0, 0.5, 100.0, 100.5))
        b = AreaSet.of(Rect(1.0, 1.5, 101.0, 101.5))
        y = np.random.default_rng(2).normal(size=nt)
        rep = evaluate_pair(field, a, b, y, y)
        assert not rep.valid
        assert "ocean_fraction" in rep.violation
        assert np.isnan(rep.q)

    def test_zero_variance_invalid(self):
        nt = 36
        field = make_field(np.full((nt, 4, 4), 20.0, dtype=np.float32))
        rect = whole_grid_rect(field.spec)
        y = np.random.default_rng(3).normal(size=nt)
        rep = evaluate_pair(field, AreaSet.of(rect), AreaSet.of(rect), y, y)
        assert not rep.valid

    def test_swap_symmetry(self):
        field, a, b, _ = self._world()
        rng = np.random.default_rng(11)
        y_on = rng.normal(size=field.spec.nt)
        y_re = rng.normal(size=field.spec.nt)
        r_ab = evaluate_pair(field, a, b, y_on, y_re)
        r_ba = evaluate_pair(field, b, a, y_on, y_re)
        assert r_ab.q == pytest.approx(r_ba.q, abs=1e-12)
        assert r_ab.r_onset == pytest.approx(-r_ba.r_onset, abs=1e-12)
