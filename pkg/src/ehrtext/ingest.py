"""Raw CSV table ingestion into canonical per-stay event records.

One ICUStay is produced per (patient_id, stay_id) found in the site's stays
table; events from all event tables are merged and sorted by timestamp with
a deterministic tie-break on (timestamp, table name, row content).
Event timestamps are stored as minutes since ICU admission.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ClockSkew, CsvParse, IngestError
from .manifest import SiteManifest, TableSpec

Feature = tuple[str, str]


@dataclass(frozen=True)
class MedicalEvent:
    """One time-stamped event: type, ordered name-value pairs, timestamp.

    Feature values are kept as raw strings; numeric interpretation happens
    at linearization time. The feature order is the table's column order.
    """

    event_type: str
    features: tuple[Feature, ...]
    timestamp: float  # minutes since ICU admission


@dataclass
class ICUStay:
    patient_id: str
    stay_id: str
    age_years: float
    admit_time: float  # absolute minutes
    discharge_time: float  # absolute minutes
    death_time: float | None  # absolute minutes, None if no recorded death
    events: list[MedicalEvent]
    site_id: str
    weight_kg: float = 80.0
    dialysis: bool = False

    @property
    def los_hours(self) -> float:
        return (self.discharge_time - self.admit_time) / 60.0


@dataclass
class IngestResult:
    stays: list[ICUStay]
    language: str
    dropped_rows: int = 0
    orphan_rows: int = 0  # event rows whose (patient, stay) has no stays entry


def _parse_minutes(text: str) -> float | None:
    try:
        value = float(text)
    except (TypeError, ValueError):
        return None
    if value != value or value in (float("inf"), float("-inf")):
        return None
    return value


def _read_rows(table: TableSpec) -> tuple[list[str], list[list[str]]]:
    with open(table.file_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParse(table.event_type, 0, "missing header row") from None
        rows = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise CsvParse(table.event_type, i, "column count mismatch")
            rows.append(row)
    return header, rows


def ingest_site(manifest: SiteManifest, clock_slack_minutes: float = 0.0) -> IngestResult:
    """Ingest all tables of one site into canonical ICUStay records.

    Rows with unparseable timestamps are dropped and counted. Events dated
    before admission by more than ``clock_slack_minutes`` raise ClockSkew.
    """
    stays_table = manifest.stays_table
    header, rows = _read_rows(stays_table)
    col = {name: i for i, name in enumerate(header)}

    stays: dict[tuple[str, str], ICUStay] = {}
    result = IngestResult(stays=[], language=manifest.language)

    demo_columns = [
        name
        for name in header
        if name
        not in (
            stays_table.patient_column,
            stays_table.stay_column,
            stays_table.timestamp_column,
            "discharge_time",
            "death_time",
        )
        and name not in stays_table.excluded_columns
    ]

    for i, row in enumerate(rows, start=1):
        patient_id = row[col[stays_table.patient_column]]
        stay_id = row[col[stays_table.stay_column]]
        admit = _parse_minutes(row[col[stays_table.timestamp_column]])
        discharge = _parse_minutes(row[col["discharge_time"]])
        if admit is None or discharge is None:
            result.dropped_rows += 1
            continue
        death_text = row[col["death_time"]].strip()
        death = _parse_minutes(death_text) if death_text else None
        age = _parse_minutes(row[col["age_years"]])
        weight = _parse_minutes(row[col["weight_kg"]])
        if age is None:
            raise CsvParse(stays_table.event_type, i, "unparseable age_years")
        key = (patient_id, stay_id)
        if key in stays:
            raise CsvParse(stays_table.event_type, i, f"duplicate stay {key}")
        stay = ICUStay(
            patient_id=patient_id,
            stay_id=stay_id,
            age_years=age,
            admit_time=admit,
            discharge_time=discharge,
            death_time=death,
            events=[],
            site_id=manifest.site_id,
            weight_kg=weight if weight is not None else 80.0,
            dialysis=row[col["dialysis"]].strip() in ("1", "true", "True"),
        )
        stays[key] = stay
        # Demographics become a single event at admission so the model sees
        # age/weight/etc. as ordinary features.
        demo = tuple((name, row[col[name]]) for name in demo_columns)
        stay.events.append(MedicalEvent("demographics", demo, 0.0))

    # (timestamp, table, row content) sort keys collected per stay. Using the
    # row content rather than the input row index as the final tie-break makes
    # ingestion permutation-invariant: shuffling input rows cannot change the
    # event order (exact duplicate rows are interchangeable anyway).
    keyed: dict[tuple[str, str], list[tuple[float, str, tuple, MedicalEvent]]] = {
        key: [(0.0, stays_table.event_type, stay.events[0].features, stay.events[0])]
        for key, stay in stays.items()
    }
    for stay in stays.values():
        stay.events.clear()

    for table in manifest.event_tables:
        header, rows = _read_rows(table)
        col = {name: i for i, name in enumerate(header)}
        for need in (table.timestamp_column, table.patient_column, table.stay_column):
            if need not in col:
                raise CsvParse(table.event_type, 0, f"missing column {need!r}")
        feature_columns = [
            name
            for name in header
            if name
            not in (table.timestamp_column, table.patient_column, table.stay_column)
        ]
        for i, row in enumerate(rows, start=1):
            key = (row[col[table.patient_column]], row[col[table.stay_column]])
            stay = stays.get(key)
            if stay is None:
                result.orphan_rows += 1
                continue
            ts = _parse_minutes(row[col[table.timestamp_column]])
            if ts is None:
                result.dropped_rows += 1
                continue
            rel = ts - stay.admit_time
            if rel < -clock_slack_minutes:
                raise ClockSkew(table.event_type, i, -rel)
            rel = max(rel, 0.0)
            features = tuple((name, row[col[name]]) for name in feature_columns)
            keyed[key].append((rel, table.event_type, features, MedicalEvent(table.event_type, features, rel)))

    for key, entries in keyed.items():
        entries.sort(key=lambda e: (e[0], e[1], e[2]))
        stays[key].events = [e[3] for e in entries]

    result.stays = [stays[key] for key in sorted(stays)]
    return result


# --- canonical event store (JSON, lossless round-trip) ---------------------


def save_store(result: IngestResult, site_id: str, path: str | Path) -> None:
    """Write one site's ingested stays to a JSON event store file."""
    doc = {
        "format": "ehrtext-store-v1",
        "site_id": site_id,
        "language": result.language,
        "dropped_rows": result.dropped_rows,
        "orphan_rows": result.orphan_rows,
        "stays": [
            {
                "patient_id": s.patient_id,
                "stay_id": s.stay_id,
                "age_years": s.age_years,
                "admit_time": s.admit_time,
                "discharge_time": s.discharge_time,
                "death_time": s.death_time,
                "weight_kg": s.weight_kg,
                "dialysis": s.dialysis,
                "site_id": s.site_id,
                "events": [
                    [e.event_type, list(map(list, e.features)), e.timestamp]
                    for e in s.events
                ],
            }
            for s in result.stays
        ],
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")


def load_store(path: str | Path) -> IngestResult:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "ehrtext-store-v1":
        raise IngestError(f"{path}: not an ehrtext event store")
    stays = []
    for s in doc["stays"]:
        stays.append(
            ICUStay(
                patient_id=s["patient_id"],
                stay_id=s["stay_id"],
                age_years=s["age_years"],
                admit_time=s["admit_time"],
                discharge_time=s["discharge_time"],
                death_time=s["death_time"],
                events=[
                    MedicalEvent(ev[0], tuple((n, v) for n, v in ev[1]), ev[2])
                    for ev in s["events"]
                ],
                site_id=s["site_id"],
                weight_kg=s["weight_kg"],
                dialysis=s["dialysis"],
            )
        )
    result = IngestResult(
        stays=stays,
        language=doc["language"],
        dropped_rows=doc["dropped_rows"],
        orphan_rows=doc["orphan_rows"],
    )
    return result
