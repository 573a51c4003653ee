import pytest

from ehrtext.errors import UnknownAnalyte
from ehrtext.ingest import ICUStay, MedicalEvent
from ehrtext.labels import (
    NULL_CLASS,
    WindowConfig,
    analyte_measurements,
    bin_lab,
    build_cohort,
    class_prevalence_table,
    compute_labels,
    default_tasks,
    label_aki,
    label_lab_task,
    label_los,
    label_mortality,
)

W = WindowConfig()
T0 = W.t0_minutes  # 1440


def make_stay(
    age=50.0,
    admit=0.0,
    discharge=10 * 1440.0,
    death=None,
    events=(),
    weight=80.0,
    dialysis=False,
):
    return ICUStay(
        patient_id="p",
        stay_id="s",
        age_years=age,
        admit_time=admit,
        discharge_time=discharge,
        death_time=death,
        events=list(events),
        site_id="site",
        weight_kg=weight,
        dialysis=dialysis,
    )


def lab(analyte, value, ts, unit=None):
    features = [("item", analyte), ("value", str(value))]
    if unit:
        features.append(("unit", unit))
    return MedicalEvent("lab", tuple(features), ts)


class TestCohort:
    def test_minor_excluded(self):
        result = build_cohort([make_stay(age=17.9), make_stay(age=18.0)])
        assert len(result.stays) == 1
        assert result.exclusions["age"] == 1

    def test_short_stay_excluded(self):
        result = build_cohort([make_stay(discharge=23.9 * 60), make_stay(discharge=24.0 * 60)])
        assert len(result.stays) == 1
        assert result.exclusions["short_stay"] == 1

    def test_gap_death_excluded(self):
        # death at exactly t0 is excluded; one minute later is kept
        result = build_cohort(
            [make_stay(death=T0), make_stay(death=T0 + 1.0)]
        )
        assert len(result.stays) == 1
        assert result.exclusions["gap_death"] == 1


class TestMortality:
    def test_death_30h_within_1d_horizon(self):
        stay = make_stay(death=30 * 60.0)
        assert label_mortality(stay, 1) == 1

    def test_death_50h_outside_1d_inside_2d(self):
        stay = make_stay(death=50 * 60.0)
        assert label_mortality(stay, 1) == 0
        assert label_mortality(stay, 2) == 1

    def test_survivor_is_zero(self):
        assert label_mortality(make_stay(), 14) == 0

    def test_boundary_inclusive(self):
        stay = make_stay(death=T0 + 1440.0)  # exactly t0 + 1 day
        assert label_mortality(stay, 1) == 1


class TestLos:
    def test_strictly_greater(self):
        # remaining LOS exactly k days -> 0; epsilon more -> 1
        stay = make_stay(discharge=T0 + 7 * 1440.0)
        assert label_los(stay, 7) == 0
        stay = make_stay(discharge=T0 + 7 * 1440.0 + 1.0)
        assert label_los(stay, 7) == 1


class TestBinLab:
    @pytest.mark.parametrize(
        "value,expected", [(1.2, 0), (1.21, 1), (2.0, 1), (2.5, 2), (3.5, 2), (5.0, 3), (9.9, 4)]
    )
    def test_creatinine_bins(self, value, expected):
        assert bin_lab("creatinine", value) == expected

    def test_unknown_analyte(self):
        with pytest.raises(UnknownAnalyte):
            bin_lab("glucose", 1.0)


class TestLabTask:
    def test_most_recent_in_horizon_wins(self):
        stay = make_stay(
            events=[
                lab("creatinine", 9.0, T0 + 10.0),
                lab("creatinine", 1.0, T0 + 20.0),
            ]
        )
        assert label_lab_task(stay, "creatinine", 1) == 0

    def test_observation_window_values_ignored(self):
        stay = make_stay(events=[lab("creatinine", 9.0, 60.0)])
        assert label_lab_task(stay, "creatinine", 1) == NULL_CLASS

    def test_unit_conversion_umol_l(self):
        # 221.05 umol/l / 88.42 = 2.5 mg/dl -> bin 2
        stay = make_stay(events=[lab("creatinine", 221.05, T0 + 10.0, unit="umol/l")])
        assert label_lab_task(stay, "creatinine", 1) == 2

    def test_alias_match(self):
        stay = make_stay(events=[lab("natrium", 150.0, T0 + 10.0)])
        assert label_lab_task(stay, "sodium", 1) == 2

    def test_dialysis_masks_creatinine_and_urine_only(self):
        stay = make_stay(
            dialysis=True,
            events=[
                lab("creatinine", 1.0, T0 + 10.0),
                lab("sodium", 140.0, T0 + 10.0),
            ],
        )
        assert label_lab_task(stay, "creatinine", 1) == NULL_CLASS
        assert label_lab_task(stay, "sodium", 1) == 1

    def test_horizon_monotone_more_data(self):
        # a k=2 horizon sees everything k=1 sees
        stay = make_stay(events=[lab("sodium", 150.0, T0 + 1440.0 + 10.0)])
        assert label_lab_task(stay, "sodium", 1) == NULL_CLASS
        assert label_lab_task(stay, "sodium", 2) == 2


class TestAki:
    def test_ratio_staging(self):
        for latest, expected in ((1.4, 0), (1.5, 1), (2.2, 2), (3.0, 3)):
            stay = make_stay(
                events=[lab("creatinine", 1.0, 60.0), lab("creatinine", latest, T0 + 10.0)]
            )
            assert label_aki(stay, 1) == expected, latest

    def test_baseline_missing_null(self):
        stay = make_stay(events=[lab("creatinine", 2.0, T0 + 10.0)])
        assert label_aki(stay, 1) == NULL_CLASS

    def test_horizon_creatinine_missing_null(self):
        stay = make_stay(events=[lab("creatinine", 1.0, 60.0)])
        assert label_aki(stay, 1) == NULL_CLASS

    def test_baseline_is_minimum(self):
        stay = make_stay(
            events=[
                lab("creatinine", 2.0, 30.0),
                lab("creatinine", 1.0, 60.0),
                lab("creatinine", 2.1, T0 + 10.0),
            ]
        )
        # ratio 2.1 / 1.0 >= 2.0 -> stage 2
        assert label_aki(stay, 1) == 2

    def test_dialysis_null(self):
        stay = make_stay(
            dialysis=True,
            events=[lab("creatinine", 1.0, 60.0), lab("creatinine", 3.0, T0 + 10.0)],
        )
        assert label_aki(stay, 1) == NULL_CLASS

    def test_urine_stage_beats_creatinine(self):
        # 6 consecutive hourly urine rates < 0.5 mL/kg/h -> stage 1
        urine = [
            MedicalEvent("output", (("item", "urine"), ("volume", "30")), T0 + 60.0 * (i + 1))
            for i in range(6)
        ]  # 30 mL / 80 kg = 0.375
        stay = make_stay(
            events=[lab("creatinine", 1.0, 60.0), lab("creatinine", 1.0, T0 + 10.0), *urine]
        )
        assert label_aki(stay, 1) == 1

    def test_urine_gap_breaks_run(self):
        times = [1, 2, 3, 7, 8, 9]  # two runs of 3, never 6 consecutive
        urine = [
            MedicalEvent("output", (("item", "urine"), ("volume", "30")), T0 + 60.0 * t)
            for t in times
        ]
        stay = make_stay(
            events=[lab("creatinine", 1.0, 60.0), lab("creatinine", 1.0, T0 + 10.0), *urine]
        )
        assert label_aki(stay, 1) == 0

    def test_anuria_stage_3(self):
        urine = [
            MedicalEvent("output", (("item", "urine"), ("volume", "0")), T0 + 60.0 * (i + 1))
            for i in range(12)
        ]
        stay = make_stay(
            events=[lab("creatinine", 1.0, 60.0), lab("creatinine", 1.0, T0 + 10.0), *urine]
        )
        assert label_aki(stay, 1) == 3


class TestComputeLabels:
    def test_full_battery_keys(self):
        tasks = default_tasks()
        labels = compute_labels(make_stay(), tasks)
        assert set(labels) == {t.task_id for t in tasks}
        assert all(isinstance(v, int) for v in labels.values())

    def test_prevalence_rows_sum_to_100(self):
        tasks = default_tasks()
        rows = [compute_labels(make_stay(), tasks), compute_labels(make_stay(death=30 * 60.0), tasks)]
        table = class_prevalence_table(rows, tasks)
        for task in tasks:
            assert sum(table[task.task_id].values()) == pytest.approx(100.0)


class TestAnalyteMeasurements:
    def test_sorted_and_converted(self):
        stay = make_stay(
            events=[
                lab("creatinine", 88.42, 120.0, unit="umol/l"),
                lab("creatinine", 2.0, 60.0, unit="mg/dl"),
            ]
        )
        ms = analyte_measurements(stay, "creatinine")
        assert ms == [(60.0, 2.0), (120.0, pytest.approx(1.0))]
