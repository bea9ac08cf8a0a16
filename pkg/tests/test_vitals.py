import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vitalloc import vitals
from vitalloc.errors import DegenerateRangeError, InvalidInputError

HR, RR, TEMP = vitals.preset_specs("mimic4")
SPO2 = vitals.preset_specs("mimic3")[2]
ALL_SIGNS = (HR, RR, TEMP, SPO2)


class TestPenalty:
    def test_zero_at_threshold_and_on_normal_side(self):
        assert vitals.penalty(HR, 120.0) == 0.0
        assert vitals.penalty(HR, 60.0) == 0.0
        assert vitals.penalty(SPO2, 90.0) == 0.0
        assert vitals.penalty(SPO2, 99.0) == 0.0

    def test_unit_scale_deviation_is_minus_e(self):
        # one penalty-scale past the threshold costs exactly -e
        assert vitals.penalty(HR, 137.0) == pytest.approx(-math.e, abs=1e-12)
        assert vitals.penalty(RR, 35.0) == pytest.approx(-math.e, abs=1e-12)
        assert vitals.penalty(TEMP, 40.0) == pytest.approx(-math.e, abs=1e-12)
        assert vitals.penalty(SPO2, 86.0) == pytest.approx(-math.e, abs=1e-12)

    def test_non_finite_reading_rejected(self):
        with pytest.raises(InvalidInputError):
            vitals.penalty(HR, float("nan"))

    @given(st.sampled_from(ALL_SIGNS), st.floats(-500, 500))
    def test_never_positive_and_zero_iff_normal(self, sign, reading):
        p = vitals.penalty(sign, reading)
        assert p <= 0.0
        assert (p == 0.0) == (not sign.is_abnormal(reading))

    @given(st.sampled_from(ALL_SIGNS), st.floats(0.01, 50), st.floats(0.01, 50))
    def test_monotone_in_deviation(self, sign, d1, d2):
        lo, hi = sorted((d1, d2))
        sgn = 1.0 if sign.direction == "above" else -1.0
        assert vitals.penalty(sign, sign.threshold + sgn * hi) <= vitals.penalty(
            sign, sign.threshold + sgn * lo
        )


class TestReward:
    def test_sums_per_sign_penalties(self):
        specs = (HR, RR, TEMP)
        assert vitals.reward(np.array([137.0, 35.0, 40.0]), specs) == pytest.approx(
            -3 * math.e, abs=1e-12
        )
        assert vitals.reward(np.array([80.0, 35.0, 36.5]), specs) == pytest.approx(
            -math.e, abs=1e-12
        )
        assert vitals.reward(np.array([80.0, 16.0, 36.5]), specs) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            vitals.reward(np.array([80.0, 16.0]), (HR, RR, TEMP))


class TestIntervention:
    def test_normal_signs_untouched(self):
        rng = np.random.default_rng(0)
        before = np.array([80.0, 16.0, 36.5])
        after = vitals.apply_intervention(before, (HR, RR, TEMP), rng)
        np.testing.assert_array_equal(after, before)

    def test_mean_shift_matches_spec(self):
        # spo2 at 86 is abnormal-low; the response adds N(3, 1), so the
        # post-intervention mean sits at 89
        rng = np.random.default_rng(1)
        draws = np.array(
            [vitals.apply_intervention(np.array([86.0]), (SPO2,), rng)[0] for _ in range(4000)]
        )
        assert draws.mean() == pytest.approx(89.0, abs=0.1)
        assert draws.std() == pytest.approx(1.0, abs=0.05)

    def test_above_direction_shifts_down(self):
        rng = np.random.default_rng(2)
        draws = np.array(
            [vitals.apply_intervention(np.array([140.0]), (HR,), rng)[0] for _ in range(4000)]
        )
        assert draws.mean() == pytest.approx(125.0, abs=0.5)

    def test_truncate_negative_never_worsens(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            after = vitals.apply_intervention(
                np.array([121.0]), (HR,), rng, truncate_negative=True
            )
            assert after[0] <= 121.0

    def test_only_abnormal_components_move(self):
        rng = np.random.default_rng(4)
        before = np.array([140.0, 16.0, 36.5])
        after = vitals.apply_intervention(before, (HR, RR, TEMP), rng)
        assert after[0] != before[0]
        np.testing.assert_array_equal(after[1:], before[1:])


class TestNormalization:
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
    def test_round_trip(self, values):
        specs = (HR, RR, TEMP)
        v = np.array(values)
        back = vitals.denormalize(vitals.normalize(v, specs), specs)
        np.testing.assert_allclose(back, v, atol=1e-9)

    def test_no_clamping(self):
        assert vitals.normalize(np.array([250.0]), (HR,))[0] > 1.0
        assert vitals.normalize(np.array([0.0]), (HR,))[0] < 0.0

    def test_rows_supported(self):
        rows = np.array([[30.0, 4.0, 32.0], [220.0, 60.0, 42.0]])
        norm = vitals.normalize(rows, (HR, RR, TEMP))
        np.testing.assert_allclose(norm, [[0, 0, 0], [1, 1, 1]], atol=1e-12)

    def test_degenerate_range_rejected_at_construction(self):
        with pytest.raises(DegenerateRangeError):
            vitals.with_range(HR, 50.0, 50.0)


class TestSpecFiles:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "specs.txt"
        specs = [vitals.with_range(HR, 41.0, 183.0), RR, SPO2]
        vitals.save_specs(specs, path)
        loaded = vitals.load_specs(path)
        assert loaded == specs

    def test_unknown_preset(self):
        with pytest.raises(Exception):
            vitals.preset_specs("mimic5")

    def test_presets_cover_three_signs(self):
        for name in vitals.PRESETS:
            assert len(vitals.preset_specs(name)) == 3
