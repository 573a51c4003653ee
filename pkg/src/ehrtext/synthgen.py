"""Multi-site, multilingual synthetic ICU data with planted outcome signal.

Each site is generated from a per-site content seed; the site language only
changes how clinical terms are rendered (via a bundled en/nl/de term table),
so two sites sharing a seed and schema variant are identical up to lexicon
substitution. A per-stay latent severity drives both the observation-window
measurements (attenuated by ``1 - signal_strength`` noise) and the outcomes,
which makes every downstream task learnable exactly when signal_strength is
high and unlearnable at signal_strength 0.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

OBS_END_MINUTES = 720.0  # 12 h observation window
MAX_URINE_HOURS = 96


def _load_terms() -> list[dict]:
    text = resources.files("ehrtext.data").joinpath("terms.json").read_text("utf-8")
    return json.loads(text)["concepts"]


TERMS = _load_terms()
CORE_ANALYTES = {c["key"]: c for c in TERMS if c["kind"] == "analyte"}
EXTRA_LABS = [c for c in TERMS if c["kind"] == "lab"]
DRUGS = [c for c in TERMS if c["kind"] == "drug"]
ROUTES = [c for c in TERMS if c["kind"] == "route"]
OBSERVATIONS = [c for c in TERMS if c["kind"] == "observation"]
VALUES = {c["en"]: c for c in TERMS if c["kind"] == "value"}

SICK_DRUGS = [
    "norepinephrine", "dobutamine", "furosemide", "vancomycin", "amiodarone", "heparin",
]
CALM_DRUGS = [c["en"] for c in DRUGS if c["en"] not in SICK_DRUGS]
SICK_FINDINGS = [
    "severe", "elevated", "worsened", "unstable", "low", "weak", "irregular",
    "cloudy", "pale", "cold",
]
CALM_FINDINGS = [
    "normal", "stable", "improved", "unchanged", "clear", "regular", "strong",
    "mild", "warm", "dry",
]

# Per-variant table schemas: (timestamp, patient, stay, payload columns...).
SCHEMA_VARIANTS = [
    {
        "creatinine_unit": "mg/dl",
        "lab": ("time", "patient_id", "stay_id", ["item", "value", "unit", "row_id"]),
        "med": ("time", "patient_id", "stay_id", ["drug", "dose", "route"]),
        "vitals": ("time", "patient_id", "stay_id",
                   ["heartrate", "sbp", "dbp", "resprate", "spo2", "temp"]),
        "obs": ("time", "patient_id", "stay_id", ["observation", "finding"]),
        "output": ("time", "patient_id", "stay_id", ["item", "volume", "unit"]),
    },
    {
        "creatinine_unit": "µmol/l",
        "lab": ("charttime", "subject", "icustay", ["parameter", "result", "uom", "entry_id"]),
        "med": ("charttime", "subject", "icustay", ["medication", "amount", "via"]),
        "vitals": ("charttime", "subject", "icustay",
                   ["hr", "sys_bp", "dia_bp", "rr", "sat", "temp_c"]),
        "obs": ("charttime", "subject", "icustay", ["category", "status"]),
        "output": ("charttime", "subject", "icustay", ["parameter", "amount_ml", "uom"]),
    },
    {
        "creatinine_unit": "mg/dl",
        "lab": ("ts", "pid", "sid", ["name", "val", "measure_unit", "rec_id"]),
        "med": ("ts", "pid", "sid", ["agent", "dosage", "mode"]),
        "vitals": ("ts", "pid", "sid",
                   ["pulse", "bp_systolic", "bp_diastolic", "breaths", "oxygen_sat",
                    "temperature_c"]),
        "obs": ("ts", "pid", "sid", ["aspect", "state"]),
        "output": ("ts", "pid", "sid", ["name", "ml", "measure_unit"]),
    },
]

VITALS_COMMON_VARIABLES = ["heartrate", "sbp", "resprate", "spo2", "temp"]


@dataclass(frozen=True)
class SiteSpec:
    site_id: str
    language: str  # en, nl, de
    n_stays: int
    schema_variant: int = 0
    vocabulary_seed: int = 0
    has_urine: bool = True
    untranslated_fraction: float = 0.25


@dataclass(frozen=True)
class GeneratorConfig:
    sites: tuple[SiteSpec, ...]
    signal_strength: float
    latent_dims: int = 3
    noise_seed: int = 0
    mortality_7_target: float = 0.08
    mortality_14_extra_target: float = 0.04

    def __post_init__(self):
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must be in [0, 1]")
        for site in self.sites:
            if site.n_stays <= 0:
                raise ValueError(f"site {site.site_id}: n_stays must be positive")
            if site.language not in ("en", "nl", "de"):
                raise ValueError(f"site {site.site_id}: unknown language {site.language}")
            if not 0 <= site.schema_variant < len(SCHEMA_VARIANTS):
                raise ValueError(f"site {site.site_id}: bad schema_variant")

    @staticmethod
    def from_json(path: str | Path) -> "GeneratorConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        sites = tuple(SiteSpec(**s) for s in raw.pop("sites"))
        return GeneratorConfig(sites=sites, **raw)


@dataclass
class GroundTruth:
    lexicon: dict[str, dict[str, str]]  # language -> rendered term -> english term
    sites: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"lexicon": self.lexicon, "sites": self.sites},
                          ensure_ascii=False, sort_keys=True, indent=1)


def ground_truth_lexicon() -> dict[str, dict[str, str]]:
    """nl->en and de->en term maps from the bundled term table (bijections)."""
    lex: dict[str, dict[str, str]] = {"nl": {}, "de": {}}
    for concept in TERMS:
        for lang in ("nl", "de"):
            lex[lang][concept[lang]] = concept["en"]
    return lex


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _softplus(x: float) -> float:
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def _calibrate_intercept(target: float, slope: float) -> float:
    """Solve E_{s~N(0,1)}[sigmoid(c + slope*s)] = target by bisection."""
    grid = np.linspace(-6, 6, 4001)
    weights = np.exp(-0.5 * grid**2)
    weights /= weights.sum()

    def mean_p(c: float) -> float:
        return float((weights / (1.0 + np.exp(-(c + slope * grid)))).sum())

    lo, hi = -20.0, 20.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mean_p(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _coin(term: str, seed: int) -> float:
    digest = hashlib.sha256(f"{term}:{seed}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class _Renderer:
    """Renders English concept terms in a site's language.

    A deterministic per-term coin leaves a configurable fraction of terms in
    English, mirroring the partially English vocabulary of real non-English
    ICU databases.
    """

    def __init__(self, site: SiteSpec):
        self.site = site
        self.by_en = {c["en"]: c for c in TERMS}

    def __call__(self, english_term: str) -> str:
        if self.site.language == "en":
            return english_term
        if _coin(english_term, self.site.vocabulary_seed) < self.site.untranslated_fraction:
            return english_term
        return self.by_en[english_term][self.site.language]


def _fmt(value) -> str:
    if isinstance(value, float):
        if value.is_integer():
            return str(int(value))
        return repr(value)
    return str(value)


@dataclass
class _StayRows:
    stays: list
    lab: list
    med: list
    vitals: list
    obs: list
    output: list


def _generate_stay(site: SiteSpec, config: GeneratorConfig, idx: int,
                   render, c7: float, c14: float) -> tuple[_StayRows, float, float]:
    rng = np.random.default_rng([config.noise_seed, site.vocabulary_seed, 1000 + idx])
    signal = config.signal_strength
    variant = SCHEMA_VARIANTS[site.schema_variant]

    z = rng.normal(size=config.latent_dims)
    s = float(z[0])
    s_obs = signal * s + (1.0 - signal) * float(rng.normal())

    patient_id = f"p{idx:06d}"
    stay_id = f"s{idx:06d}"
    minor = rng.random() < 0.02
    age = round(float(rng.uniform(16.0, 18.0) if minor else rng.uniform(18.0, 90.0)), 0)
    weight = round(float(np.clip(rng.normal(80.0, 15.0), 45.0, 140.0)), 1)
    dialysis = bool(rng.random() < 0.03)
    sex = "f" if rng.random() < 0.5 else "m"
    admit = 1_000_000.0 + idx * 20_000.0

    slope = 2.2
    died7 = rng.random() < _sigmoid(c7 + slope * s)
    death_rel: float | None = None
    if died7:
        frac = float(rng.beta(1.0, 1.0 + max(s, 0.0)))
        death_rel = 1441.0 + round(frac * (7 * 1440.0 - 2.0), 0)
    elif rng.random() < _sigmoid(c14 + slope * s):
        death_rel = 1440.0 + 7 * 1440.0 + 1.0 + round(float(rng.random()) * (7 * 1440.0 - 2.0), 0)
    if death_rel is not None:
        los_rel = death_rel
    else:
        los_days = 1.05 + float(rng.lognormal(mean=1.0 + 0.55 * s, sigma=0.8))
        los_rel = round(min(los_days, 28.0) * 1440.0, 0)

    def sev(t: float) -> float:
        return s_obs if t <= OBS_END_MINUTES else s

    rows = _StayRows([], [], [], [], [], [])
    rows.stays.append([
        patient_id, stay_id, _fmt(admit), _fmt(admit + los_rel),
        _fmt(admit + death_rel) if death_rel is not None else "",
        _fmt(age), _fmt(weight), "1" if dialysis else "0", sex,
    ])

    # Timestamps are unique within each (stay, table): tied timestamps would
    # make the event order depend on rendered (language-specific) content,
    # which would break the structural identity of sibling sites.
    used_ts: dict[str, set[float]] = {"lab": set(), "med": set(), "obs": set()}

    def unique_t(table: str, t: float) -> float:
        while t in used_ts[table]:
            t += 1.0
        used_ts[table].add(t)
        return t

    def lab_row(t: float, item_en: str, value: float, unit: str, key=None):
        t = unique_t("lab", t)
        if key == "creatinine" and variant["creatinine_unit"] != "mg/dl":
            value = round(value * 88.42, 1)
            unit = variant["creatinine_unit"]
        rows.lab.append([_fmt(admit + t), patient_id, stay_id,
                         render(item_en), _fmt(value), unit, None])

    base_cr = float(rng.uniform(0.7, 1.1))

    def core_value(key: str, t: float) -> tuple[float, str]:
        x = sev(t)
        if key == "creatinine":
            ramp = 0.9 * _softplus(x)
            v = base_cr * (1.0 + ramp * min(t, 5760.0) / 1440.0) + float(rng.normal(0, 0.04))
            return round(max(v, 0.2), 2), "mg/dl"
        if key == "platelets":
            return round(float(np.clip(225.0 * math.exp(-0.28 * x) + rng.normal(0, 12.0), 5, 1000)), 0), "10^3/ul"
        if key == "wbc":
            return round(float(np.clip(9.0 + 3.5 * x + rng.normal(0, 1.0), 0.5, 80)), 1), "10^3/ul"
        if key == "hb":
            return round(float(np.clip(11.5 - 1.4 * x + rng.normal(0, 0.4), 3, 19)), 1), "g/dl"
        if key == "bicarbonate":
            return round(float(np.clip(24.5 - 2.6 * x + rng.normal(0, 0.8), 5, 50)), 1), "meq/l"
        if key == "sodium":
            return round(float(np.clip(140.0 + 4.2 * x + rng.normal(0, 1.0), 115, 175)), 1), "mmol/l"
        raise KeyError(key)

    analyte_keys = [k for k in CORE_ANALYTES if k != "urine"]
    for key in analyte_keys:
        item_en = CORE_ANALYTES[key]["en"]
        for base_t in (90.0, 420.0, 690.0):
            if rng.random() < 0.9:
                t = base_t + round(float(rng.uniform(-20, 20)), 0)
                value, unit = core_value(key, t)
                lab_row(t, item_en, value, unit, key=key)
        for day in (1, 2, 3, 4):
            t = day * 1440.0 + 240.0 + round(float(rng.uniform(-60, 60)), 0)
            if t < los_rel and rng.random() < 0.88:
                value, unit = core_value(key, t)
                lab_row(t, item_en, value, unit, key=key)

    for _ in range(3):
        concept = EXTRA_LABS[int(rng.integers(len(EXTRA_LABS)))]
        t = round(float(rng.uniform(10, OBS_END_MINUTES)), 0)
        lab_row(t, concept["en"], round(float(rng.uniform(0.5, 8.0)), 2), "mmol/l")

    if site.has_urine:
        max_hours = int(min(los_rel / 60.0, MAX_URINE_HOURS))
        urine_en = CORE_ANALYTES["urine"]["en"]
        for hour in range(1, max_hours + 1):
            if rng.random() < 0.05:
                continue
            t = hour * 60.0
            rate = float(np.clip(1.1 * math.exp(-0.85 * sev(t)) + rng.normal(0, 0.06), 0.0, 5.0))
            volume = round(rate * weight, 0)
            rows.output.append([_fmt(admit + t), patient_id, stay_id,
                                render(urine_en), _fmt(volume), "ml"])

    for hour in range(12):
        t = hour * 60.0
        x = sev(t)
        rows.vitals.append([
            _fmt(admit + t), patient_id, stay_id,
            _fmt(round(float(np.clip(80 + 18 * x + rng.normal(0, 6), 30, 220)), 0)),
            _fmt(round(float(np.clip(118 - 14 * x + rng.normal(0, 8), 50, 240)), 0)),
            _fmt(round(float(np.clip(68 - 8 * x + rng.normal(0, 6), 25, 140)), 0)),
            _fmt(round(float(np.clip(16 + 4 * x + rng.normal(0, 2), 5, 60)), 0)),
            _fmt(round(float(np.clip(97 - 2.2 * max(x, 0) + rng.normal(0, 1), 60, 100)), 0)),
            _fmt(round(float(np.clip(37 + 0.5 * x + rng.normal(0, 0.3), 33, 43)), 1)),
        ])

    n_med = 2 + int(rng.poisson(4))
    for _ in range(n_med):
        # fixed draw range so the observation-window med density does not
        # depend on the stay length; post-discharge draws are dropped
        t = round(float(rng.uniform(0, 2160.0)), 0)
        if t >= los_rel:
            continue
        if rng.random() < _sigmoid(2.0 * sev(t) - 0.4):
            drug = SICK_DRUGS[int(rng.integers(len(SICK_DRUGS)))]
            route = "intravenous"
        else:
            drug = CALM_DRUGS[int(rng.integers(len(CALM_DRUGS)))]
            route = ROUTES[int(rng.integers(len(ROUTES)))]["en"]
        dose = round(float(rng.uniform(1, 500)), 1)
        t = unique_t("med", t)
        rows.med.append([_fmt(admit + t), patient_id, stay_id,
                         render(drug), _fmt(dose), render(route)])

    for _ in range(9):
        t = round(float(rng.uniform(0, OBS_END_MINUTES)), 0)
        concept = OBSERVATIONS[int(rng.integers(len(OBSERVATIONS)))]
        if rng.random() < _sigmoid(2.4 * sev(t)):
            finding = SICK_FINDINGS[int(rng.integers(len(SICK_FINDINGS)))]
        else:
            finding = CALM_FINDINGS[int(rng.integers(len(CALM_FINDINGS)))]
        t = unique_t("obs", t)
        rows.obs.append([_fmt(admit + t), patient_id, stay_id,
                         render(concept["en"]), render(finding)])

    return rows, s, s_obs


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _site_manifest(site: SiteSpec) -> dict:
    variant = SCHEMA_VARIANTS[site.schema_variant]
    tables = [
        {
            "file_path": "stays.csv",
            "event_type": "stays",
            "timestamp_column": "admit_time",
            "patient_column": "patient_id",
            "stay_column": "stay_id",
            "role": "stays",
        }
    ]
    table_names = ["lab", "med", "vitals", "obs"] + (["output"] if site.has_urine else [])
    for name in table_names:
        ts_col, patient_col, stay_col, _ = variant[name]
        tables.append(
            {
                "file_path": f"{name}.csv",
                "event_type": name,
                "timestamp_column": ts_col,
                "patient_column": patient_col,
                "stay_column": stay_col,
            }
        )
    vitals_cols = variant["vitals"][3]
    cvm = {
        var: {"table": "vitals", "column": col, "unit_scale": 1.0}
        for var, col in zip(VITALS_COMMON_VARIABLES, vitals_cols)
    }
    return {
        "site_id": site.site_id,
        "language": site.language,
        "tables": tables,
        "common_variable_map": cvm,
    }


def generate(config: GeneratorConfig, out_dir: str | Path) -> GroundTruth:
    """Generate every site's CSV tables + manifest and a ground_truth.json.

    Output is a pure function of the config: identical configs produce
    byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = GroundTruth(lexicon=ground_truth_lexicon())

    c7 = _calibrate_intercept(config.mortality_7_target, 2.2)
    c14 = _calibrate_intercept(config.mortality_14_extra_target, 2.2)

    for site in config.sites:
        site_dir = out_dir / site.site_id
        site_dir.mkdir(parents=True, exist_ok=True)
        render = _Renderer(site)
        variant = SCHEMA_VARIANTS[site.schema_variant]

        all_rows = _StayRows([], [], [], [], [], [])
        severities, observed = [], []
        for idx in range(site.n_stays):
            rows, s, s_obs = _generate_stay(site, config, idx, render, c7, c14)
            severities.append(round(s, 6))
            observed.append(round(s_obs, 6))
            for name in ("stays", "lab", "med", "vitals", "obs", "output"):
                getattr(all_rows, name).extend(getattr(rows, name))

        # identifier column: globally distinct integers, exercises auto-drop
        for i, row in enumerate(all_rows.lab):
            row[-1] = str(700000 + i)

        _write_csv(site_dir / "stays.csv",
                   ["patient_id", "stay_id", "admit_time", "discharge_time",
                    "death_time", "age_years", "weight_kg", "dialysis", "sex"],
                   all_rows.stays)
        n_event_rows = 0
        table_names = ["lab", "med", "vitals", "obs"] + (["output"] if site.has_urine else [])
        for name in table_names:
            ts_col, patient_col, stay_col, payload = variant[name]
            rows = getattr(all_rows, name)
            _write_csv(site_dir / f"{name}.csv", [ts_col, patient_col, stay_col] + payload, rows)
            n_event_rows += len(rows)

        manifest = _site_manifest(site)
        (site_dir / "manifest.json").write_text(
            json.dumps(manifest, ensure_ascii=False, indent=1), encoding="utf-8"
        )
        truth.sites[site.site_id] = {
            "language": site.language,
            "n_stays": site.n_stays,
            "severity": severities,
            "observed_severity": observed,
            "n_event_rows": n_event_rows,
            "config": asdict(site),
        }

    (out_dir / "ground_truth.json").write_text(truth.to_json(), encoding="utf-8")
    return truth
