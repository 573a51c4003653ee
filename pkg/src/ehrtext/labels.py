"""Cohort construction and derivation of all prediction targets.

Prediction time t0 sits at the end of the 12 h observation window plus the
12 h gap, i.e. 24 h after admission. Every task label is a pure function of
the stay; a class of -1 marks the Null class, which is masked out of both
the loss and the metrics.

Lab severity bins are data, not code: cutoffs, analyte name aliases and
unit conversions live in data/cutoffs.json.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

from .errors import NonFinite, UnknownAnalyte
from .ingest import ICUStay

MORTALITY_HORIZONS = (1, 2, 3, 7, 14)
LOS_HORIZONS = (7, 14)
LAB_HORIZONS = (1, 2, 3)
AKI_HORIZONS = (1, 2, 3)

# Tasks masked to Null for dialysis-flagged stays.
DIALYSIS_MASKED_ANALYTES = frozenset({"creatinine", "urine"})

NULL_CLASS = -1


def _load_cutoffs() -> dict:
    text = resources.files("ehrtext.data").joinpath("cutoffs.json").read_text("utf-8")
    return json.loads(text)


_CUTOFFS = _load_cutoffs()
ANALYTES: dict[str, dict] = _CUTOFFS["analytes"]


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: str  # "binary" or "multiclass"
    horizon_days: int
    n_classes: int
    analyte: str | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "horizon_days": self.horizon_days,
            "n_classes": self.n_classes,
            "analyte": self.analyte,
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        return TaskSpec(**d)


def default_tasks(
    mortality: tuple[int, ...] = MORTALITY_HORIZONS,
    los: tuple[int, ...] = LOS_HORIZONS,
    labs: tuple[int, ...] = LAB_HORIZONS,
    aki: tuple[int, ...] = AKI_HORIZONS,
    analytes: tuple[str, ...] | None = None,
) -> list[TaskSpec]:
    """The full multi-task battery; callers may pass a reduced set."""
    tasks = []
    for k in mortality:
        tasks.append(TaskSpec(f"mortality_{k}", "binary", k, 2))
    for k in los:
        tasks.append(TaskSpec(f"los_{k}", "binary", k, 2))
    for analyte in analytes if analytes is not None else tuple(ANALYTES):
        n = len(ANALYTES[analyte]["cutoffs"]) + 1
        for k in labs:
            tasks.append(TaskSpec(f"{analyte}_{k}", "multiclass", k, n, analyte))
    for k in aki:
        tasks.append(TaskSpec(f"aki_{k}", "multiclass", k, 4))
    return tasks


@dataclass(frozen=True)
class WindowConfig:
    observation_hours: float = 12.0
    gap_hours: float = 12.0
    min_stay_hours: float = 24.0
    min_age_years: float = 18.0

    def __post_init__(self):
        if self.min_stay_hours < self.observation_hours + self.gap_hours:
            raise ValueError("min_stay_hours must cover observation + gap")

    @property
    def t0_minutes(self) -> float:
        """Prediction time relative to admission."""
        return (self.observation_hours + self.gap_hours) * 60.0


@dataclass
class CohortResult:
    stays: list[ICUStay]
    exclusions: dict[str, int] = field(default_factory=dict)


def build_cohort(stays: list[ICUStay], w: WindowConfig = WindowConfig()) -> CohortResult:
    """Apply the adult / minimum-LOS / gap-death cohort rules."""
    result = CohortResult(stays=[], exclusions={"age": 0, "short_stay": 0, "gap_death": 0})
    for stay in stays:
        if stay.age_years < w.min_age_years:
            result.exclusions["age"] += 1
            continue
        if stay.los_hours < w.min_stay_hours:
            result.exclusions["short_stay"] += 1
            continue
        if stay.death_time is not None and stay.death_time - stay.admit_time <= w.t0_minutes:
            result.exclusions["gap_death"] += 1
            continue
        result.stays.append(stay)
    return result


# --- binary tasks -----------------------------------------------------------


def label_mortality(stay: ICUStay, k: int, w: WindowConfig = WindowConfig()) -> int:
    if stay.death_time is None:
        return 0
    death_rel = stay.death_time - stay.admit_time
    t0 = w.t0_minutes
    return int(t0 < death_rel <= t0 + k * 1440.0)


def label_los(stay: ICUStay, k: int, w: WindowConfig = WindowConfig()) -> int:
    remaining = (stay.discharge_time - stay.admit_time) - w.t0_minutes
    return int(remaining > k * 1440.0)


# --- lab severity -----------------------------------------------------------


def bin_lab(analyte: str, value: float) -> int:
    """Ordinal bin of a canonical-unit value: value <= c1 -> 0, c1 < v <= c2 -> 1, ..."""
    spec = ANALYTES.get(analyte)
    if spec is None:
        raise UnknownAnalyte(analyte)
    if not math.isfinite(value):
        raise NonFinite(f"{analyte} value {value!r}")
    for i, cutoff in enumerate(spec["cutoffs"]):
        if value <= cutoff:
            return i
    return len(spec["cutoffs"])


def _event_measurement(event, spec) -> float | None:
    """Canonical-unit value of one event for one analyte spec, or None."""
    lowered = [value.strip().lower() for _, value in event.features]
    if not any(value in spec["_alias_set"] for value in lowered):
        return None
    number = None
    for value in lowered:
        try:
            candidate = float(value)
        except ValueError:
            continue
        if math.isfinite(candidate):
            number = candidate
            break
    if number is None:
        return None
    divisor = 1.0
    for value in lowered:
        if value in spec["unit_divisors"]:
            divisor = spec["unit_divisors"][value]
            break
    return number / divisor


def _spec_of(analyte: str) -> dict:
    spec = ANALYTES.get(analyte)
    if spec is None:
        raise UnknownAnalyte(analyte)
    if "_alias_set" not in spec:
        spec["_alias_set"] = set(spec["aliases"])
    return spec


def analyte_measurements(stay: ICUStay, analyte: str) -> list[tuple[float, float]]:
    """Extract (timestamp, canonical value) pairs for one analyte.

    Schema-agnostic by design: an event is a measurement of the analyte when
    any feature value matches one of its name aliases; the measured value is
    the first numeric feature and the unit the first feature matching a known
    unit string.
    """
    spec = _spec_of(analyte)
    out = []
    for event in stay.events:
        value = _event_measurement(event, spec)
        if value is not None:
            out.append((event.timestamp, value))
    out.sort(key=lambda p: p[0])
    return out


def _alias_index() -> dict[str, str]:
    global _ALIAS_TO_ANALYTE
    if _ALIAS_TO_ANALYTE is None:
        _ALIAS_TO_ANALYTE = {
            alias: analyte
            for analyte in ANALYTES
            for alias in _spec_of(analyte)["_alias_set"]
        }
    return _ALIAS_TO_ANALYTE


_ALIAS_TO_ANALYTE: dict[str, str] | None = None


def all_measurements(stay: ICUStay) -> dict[str, list[tuple[float, float]]]:
    """Per-analyte measurement series from a single pass over the events."""
    alias_to_analyte = _alias_index()
    out: dict[str, list[tuple[float, float]]] = {analyte: [] for analyte in ANALYTES}
    for event in stay.events:
        analyte = None
        for _, raw in event.features:
            analyte = alias_to_analyte.get(raw.strip().lower())
            if analyte is not None:
                break
        if analyte is None:
            continue
        value = _event_measurement(event, _spec_of(analyte))
        if value is not None:
            out[analyte].append((event.timestamp, value))
    for series in out.values():
        series.sort(key=lambda p: p[0])
    return out


def _latest_in_horizon(
    measurements: list[tuple[float, float]], k: int, w: WindowConfig
) -> float | None:
    t0 = w.t0_minutes
    horizon_end = t0 + k * 1440.0
    latest = None
    for ts, value in measurements:
        if t0 < ts <= horizon_end:
            latest = value
    return latest


def label_lab_task(
    stay: ICUStay,
    analyte: str,
    k: int,
    w: WindowConfig = WindowConfig(),
    measurements: list[tuple[float, float]] | None = None,
) -> int:
    """Bin of the most recent in-horizon measurement, or the Null class."""
    if stay.dialysis and analyte in DIALYSIS_MASKED_ANALYTES:
        return NULL_CLASS
    if measurements is None:
        measurements = analyte_measurements(stay, analyte)
    latest = _latest_in_horizon(measurements, k, w)
    if latest is None:
        return NULL_CLASS
    return bin_lab(analyte, latest)


# --- AKI staging ------------------------------------------------------------

KDIGO_CREATININE_RATIOS = (1.5, 2.0, 3.0)  # stage 1 / 2 / 3 thresholds
KDIGO_LOW_URINE = 0.5  # mL/kg/h
KDIGO_VERY_LOW_URINE = 0.3
KDIGO_ANURIA = 0.0


def _creatinine_stage(baseline: float, latest: float) -> int:
    ratio = latest / baseline
    if ratio >= KDIGO_CREATININE_RATIOS[2]:
        return 3
    if ratio >= KDIGO_CREATININE_RATIOS[1]:
        return 2
    if ratio >= KDIGO_CREATININE_RATIOS[0]:
        return 1
    return 0


def _urine_stage(rates: list[tuple[float, float]]) -> int:
    """Stage from hourly mL/kg rates; rates must be (timestamp, rate) sorted.

    Runs are maximal sequences of consecutive hourly measurements (60 min
    apart). A run of n measurements counts as n hours.
    """
    stage = 0
    i = 0
    n = len(rates)
    while i < n:
        j = i
        while j + 1 < n and abs(rates[j + 1][0] - rates[j][0] - 60.0) < 1e-6:
            j += 1
        run = [rate for _, rate in rates[i : j + 1]]
        # longest sub-runs below each threshold within this block
        for threshold, hours, run_stage in (
            (KDIGO_LOW_URINE, 6, 1),
            (KDIGO_LOW_URINE, 12, 2),
            (KDIGO_VERY_LOW_URINE, 24, 3),
        ):
            best = cur = 0
            for rate in run:
                cur = cur + 1 if rate < threshold else 0
                best = max(best, cur)
            if best >= hours:
                stage = max(stage, run_stage)
        best = cur = 0
        for rate in run:
            cur = cur + 1 if rate <= KDIGO_ANURIA else 0
            best = max(best, cur)
        if best >= 12:
            stage = max(stage, 3)
        i = j + 1
    return stage


def label_aki(
    stay: ICUStay,
    k: int,
    w: WindowConfig = WindowConfig(),
    measurements: dict[str, list[tuple[float, float]]] | None = None,
) -> int:
    """KDIGO-style stage: max of creatinine-ratio and urine-output staging.

    Baseline creatinine is the lowest observation-window value. Null when the
    baseline or the in-horizon creatinine is missing, or the stay is
    dialysis-flagged. Sites without urine events are staged on creatinine
    alone.
    """
    if stay.dialysis:
        return NULL_CLASS
    creatinine = (
        measurements["creatinine"]
        if measurements is not None
        else analyte_measurements(stay, "creatinine")
    )
    obs_end = w.observation_hours * 60.0
    baseline_values = [v for ts, v in creatinine if ts <= obs_end]
    if not baseline_values:
        return NULL_CLASS
    baseline = min(baseline_values)
    if baseline <= 0:
        return NULL_CLASS
    latest = _latest_in_horizon(creatinine, k, w)
    if latest is None:
        return NULL_CLASS
    stage = _creatinine_stage(baseline, latest)

    urine = (
        measurements["urine"]
        if measurements is not None
        else analyte_measurements(stay, "urine")
    )
    t0 = w.t0_minutes
    horizon_end = t0 + k * 1440.0
    weight = stay.weight_kg if stay.weight_kg > 0 else 80.0
    rates = [(ts, v / weight) for ts, v in urine if t0 < ts <= horizon_end]
    if rates:
        stage = max(stage, _urine_stage(rates))
    return stage


# --- per-stay label vectors -------------------------------------------------


def compute_labels(
    stay: ICUStay, tasks: list[TaskSpec], w: WindowConfig = WindowConfig()
) -> dict[str, int]:
    measurements = all_measurements(stay)  # one event pass shared by all tasks
    labels = {}
    for task in tasks:
        if task.task_id.startswith("mortality_"):
            labels[task.task_id] = label_mortality(stay, task.horizon_days, w)
        elif task.task_id.startswith("los_"):
            labels[task.task_id] = label_los(stay, task.horizon_days, w)
        elif task.task_id.startswith("aki_"):
            labels[task.task_id] = label_aki(stay, task.horizon_days, w, measurements)
        else:
            assert task.analyte is not None
            labels[task.task_id] = label_lab_task(
                stay, task.analyte, task.horizon_days, w, measurements[task.analyte]
            )
    return labels


def class_prevalence_table(
    label_rows: list[dict[str, int]], tasks: list[TaskSpec]
) -> dict[str, dict[int, float]]:
    """Per-task class percentages (Null included); rows sum to 100."""
    table: dict[str, dict[int, float]] = {}
    for task in tasks:
        counts: dict[int, int] = {}
        for row in label_rows:
            cls = row[task.task_id]
            counts[cls] = counts.get(cls, 0) + 1
        total = sum(counts.values())
        table[task.task_id] = {
            cls: 100.0 * counts.get(cls, 0) / total
            for cls in [NULL_CLASS] + list(range(task.n_classes))
        }
    return table
