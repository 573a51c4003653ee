"""Deterministic serialization of medical events into text.

Each event becomes a single line of the form

    <event_type> | <name> <value tokens> | <name> <value tokens> | ...

Numeric values are rendered as digit-place tokens (``9@1 8@0 6@-1`` for
98.6); string values are lower-cased verbatim. The "|" separator, the NEG
sign token and all digit-place tokens are protected vocabulary items that
the subword tokenizer and the alignment stage must never touch.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from pathlib import Path
from typing import Iterable

from .errors import EmptyEvent, NonFinite
from .ingest import ICUStay, MedicalEvent

SEPARATOR = "|"
NEG_TOKEN = "NEG"
DIGIT_TOKEN_RE = re.compile(r"^\d@-?\d+$")
MAX_FRACTION_PLACES = 4


def is_protected_token(token: str) -> bool:
    return token == SEPARATOR or token == NEG_TOKEN or bool(DIGIT_TOKEN_RE.match(token))


@dataclass(frozen=True)
class LinearizedEvent:
    text: str
    timestamp: float
    event_type: str


def digit_place_encode(value: float) -> list[str]:
    """Decompose a finite number into sign + digit-place tokens.

    At most 4 fractional places are kept (rounding half-to-even); trailing
    zeros after the decimal point are dropped.
    """
    if isinstance(value, float) and not math.isfinite(value):
        raise NonFinite(f"cannot encode {value!r}")
    with localcontext() as ctx:
        ctx.prec = 50
        d = Decimal(str(value)).quantize(Decimal(1).scaleb(-MAX_FRACTION_PLACES), ROUND_HALF_EVEN)
    sign, digits, exponent = d.as_tuple()
    digits = list(digits)
    while exponent < 0 and len(digits) > 1 and digits[-1] == 0:
        digits.pop()
        exponent += 1
    if digits == [0]:
        return ["0@0"]
    tokens = [NEG_TOKEN] if sign else []
    top = len(digits) - 1 + exponent
    tokens.extend(f"{d}@{top - i}" for i, d in enumerate(digits))
    return tokens


def digit_place_decode(tokens: list[str]) -> float:
    """Inverse of digit_place_encode."""
    if not tokens:
        raise ValueError("empty token list")
    sign = Decimal(1)
    start = 0
    if tokens[0] == NEG_TOKEN:
        sign = Decimal(-1)
        start = 1
    total = Decimal(0)
    for token in tokens[start:]:
        m = DIGIT_TOKEN_RE.match(token)
        if not m:
            raise ValueError(f"not a digit-place token: {token!r}")
        digit, place = token.split("@")
        total += Decimal(digit).scaleb(int(place))
    return float(sign * total)


def _as_number(value: str) -> float | None:
    try:
        num = float(value)
    except (TypeError, ValueError):
        return None
    return num if math.isfinite(num) else None


def drop_identifier_columns(
    events: list[MedicalEvent], excluded_columns: Iterable[str] = ()
) -> list[MedicalEvent]:
    """Remove identifier-like features from a site's events.

    A feature is dropped when its name is explicitly excluded, or when every
    observed value (per event type) parses as an integer and the values are
    all distinct -- the signature of a row identifier.
    """
    excluded = set(excluded_columns)

    values: dict[tuple[str, str], list[str]] = {}
    for event in events:
        for name, value in event.features:
            values.setdefault((event.event_type, name), []).append(value)

    auto_drop: set[tuple[str, str]] = set()
    for key, vals in values.items():
        parsed = []
        for v in vals:
            num = _as_number(v)
            if num is None or num != int(num):
                break
            parsed.append(int(num))
        else:
            if len(set(parsed)) == len(parsed):
                auto_drop.add(key)

    out = []
    for event in events:
        kept = tuple(
            (name, value)
            for name, value in event.features
            if name not in excluded and (event.event_type, name) not in auto_drop
        )
        out.append(MedicalEvent(event.event_type, kept, event.timestamp))
    return out


def _sanitize(text: str) -> str:
    text = text.lower().replace("\t", " ").replace("\n", " ").replace(SEPARATOR, "/")
    return " ".join(text.split())


def linearize_event(event: MedicalEvent) -> LinearizedEvent:
    """Serialize one event into its canonical text line."""
    if not event.features:
        raise EmptyEvent(f"event {event.event_type!r} has no features")
    parts = [_sanitize(event.event_type)]
    for name, value in event.features:
        num = _as_number(value)
        if num is not None:
            rendered = " ".join(digit_place_encode(num))
        else:
            rendered = _sanitize(value)
        field = _sanitize(name).replace(" ", "_")
        parts.append(f"{field} {rendered}".strip())
    text = f" {SEPARATOR} ".join(parts)
    return LinearizedEvent(text=text, timestamp=event.timestamp, event_type=event.event_type)


@dataclass(frozen=True)
class CorpusRecord:
    stay_id: str
    timestamp: float
    text: str


def linearize_stays(
    stays: list[ICUStay], excluded_columns: Iterable[str] = ()
) -> list[CorpusRecord]:
    """Linearize every event of every stay, site-wide identifier drop included."""
    flat: list[tuple[str, MedicalEvent]] = [
        (stay.stay_id, event) for stay in stays for event in stay.events
    ]
    cleaned = drop_identifier_columns([e for _, e in flat], excluded_columns)
    records = []
    for (stay_id, _), event in zip(flat, cleaned):
        if not event.features:
            continue
        lin = linearize_event(event)
        records.append(CorpusRecord(stay_id=stay_id, timestamp=lin.timestamp, text=lin.text))
    return records


def write_corpus(records: list[CorpusRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for rec in records:
            writer.writerow([rec.stay_id, f"{rec.timestamp:g}", rec.text])


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            records.append(CorpusRecord(stay_id=row[0], timestamp=float(row[1]), text=row[2]))
    return records
