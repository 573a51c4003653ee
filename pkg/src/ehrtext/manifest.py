"""Site manifest parsing and validation.

A manifest is a JSON document describing one site: its language, the CSV
tables to ingest and (optionally) a mapping from shared variable names to
wide-format table columns, used only by the common-feature baseline.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateTable, ManifestError, MissingColumn, UnknownLanguage

LANGUAGES = ("en", "nl", "de")

# Columns every stays table must carry in addition to the mapped
# patient / stay / timestamp (= admission time) columns.
STAYS_REQUIRED_COLUMNS = (
    "discharge_time",
    "death_time",
    "age_years",
    "weight_kg",
    "dialysis",
)

_TABLE_KEYS = {
    "file_path",
    "event_type",
    "timestamp_column",
    "patient_column",
    "stay_column",
    "excluded_columns",
    "role",
}
_TOP_KEYS = {"site_id", "language", "tables", "common_variable_map"}
_CVM_KEYS = {"table", "column", "unit_scale"}


@dataclass(frozen=True)
class TableSpec:
    file_path: Path
    event_type: str
    timestamp_column: str
    patient_column: str
    stay_column: str
    excluded_columns: tuple[str, ...] = ()
    role: str = "events"  # "events" or "stays"


@dataclass(frozen=True)
class CommonVariable:
    table: str
    column: str
    unit_scale: float


@dataclass(frozen=True)
class SiteManifest:
    site_id: str
    language: str
    tables: tuple[TableSpec, ...]
    common_variable_map: dict[str, CommonVariable] = field(default_factory=dict)

    @property
    def stays_table(self) -> TableSpec:
        for t in self.tables:
            if t.role == "stays":
                return t
        raise ManifestError(f"site {self.site_id!r} has no stays table")

    @property
    def event_tables(self) -> tuple[TableSpec, ...]:
        return tuple(t for t in self.tables if t.role == "events")


def _read_header(path: Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            return next(reader)
        except StopIteration:
            raise ManifestError(f"table file {path} is empty") from None


def parse_manifest(path: str | Path) -> SiteManifest:
    """Parse and validate a site manifest JSON file.

    File paths inside the manifest are resolved relative to the manifest's
    own directory. Unknown keys anywhere in the document are rejected.
    """
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ManifestError("manifest root must be a JSON object")

    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    for key in ("site_id", "language", "tables"):
        if key not in raw:
            raise ManifestError(f"manifest missing required key {key!r}")

    site_id = raw["site_id"]
    if not isinstance(site_id, str) or not site_id:
        raise ManifestError("site_id must be a non-empty string")
    language = raw["language"]
    if language not in LANGUAGES:
        raise UnknownLanguage(str(language))

    tables: list[TableSpec] = []
    seen_types: set[str] = set()
    n_stays_tables = 0
    for entry in raw["tables"]:
        unknown = set(entry) - _TABLE_KEYS
        if unknown:
            raise ManifestError(f"unknown table keys: {sorted(unknown)}")
        event_type = entry.get("event_type")
        if not event_type:
            raise ManifestError("table entry missing event_type")
        for key in ("file_path", "timestamp_column", "patient_column", "stay_column"):
            if key not in entry:
                raise MissingColumn(event_type, key)
        role = entry.get("role", "events")
        if role not in ("events", "stays"):
            raise ManifestError(f"table {event_type!r}: invalid role {role!r}")
        if event_type in seen_types:
            raise DuplicateTable(event_type)
        seen_types.add(event_type)

        file_path = (path.parent / entry["file_path"]).resolve()
        if not file_path.is_file():
            raise ManifestError(f"table {event_type!r}: file {file_path} does not exist")
        header = _read_header(file_path)
        for col_key in ("timestamp_column", "patient_column", "stay_column"):
            if entry[col_key] not in header:
                raise MissingColumn(event_type, entry[col_key])
        if role == "stays":
            n_stays_tables += 1
            for col in STAYS_REQUIRED_COLUMNS:
                if col not in header:
                    raise MissingColumn(event_type, col)

        tables.append(
            TableSpec(
                file_path=file_path,
                event_type=event_type,
                timestamp_column=entry["timestamp_column"],
                patient_column=entry["patient_column"],
                stay_column=entry["stay_column"],
                excluded_columns=tuple(entry.get("excluded_columns", ())),
                role=role,
            )
        )

    if n_stays_tables != 1:
        raise ManifestError(
            f"manifest must declare exactly one stays table, found {n_stays_tables}"
        )

    cvm: dict[str, CommonVariable] = {}
    for name, spec in raw.get("common_variable_map", {}).items():
        unknown = set(spec) - _CVM_KEYS
        if unknown:
            raise ManifestError(f"unknown common_variable_map keys: {sorted(unknown)}")
        scale = float(spec.get("unit_scale", 1.0))
        if not scale > 0:
            raise ManifestError(f"common variable {name!r}: unit_scale must be > 0")
        table = spec["table"]
        if table not in seen_types:
            raise ManifestError(f"common variable {name!r} references unknown table {table!r}")
        cvm[name] = CommonVariable(table=table, column=spec["column"], unit_scale=scale)

    return SiteManifest(
        site_id=site_id,
        language=language,
        tables=tuple(tables),
        common_variable_map=cvm,
    )
