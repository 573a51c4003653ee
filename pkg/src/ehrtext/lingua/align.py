"""Word-level translation alignment of linearized event text.

Alignment substitutes each Dutch/German token by its English translation
while leaving English, undetected, and protected tokens untouched, so token
count and the positions of digit-place / separator tokens are preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..linearize import CorpusRecord, is_protected_token
from .langid import LanguageCascade, bundled_cascade
from .translate import TranslationCache, translate_token_dict, translate_token_service

ALIGN_MODES = ("none", "dict", "service")


def align_event_text(
    text: str,
    mode: str,
    cascade: LanguageCascade | None = None,
    dictionaries=None,
    client=None,
    cache: TranslationCache | None = None,
    _token_cache: dict[str, str] | None = None,
) -> str:
    if mode not in ALIGN_MODES:
        raise ValueError(f"unknown alignment mode {mode!r}")
    if mode == "none":
        return text

    cascade = cascade if cascade is not None else bundled_cascade()
    out = []
    for token in text.split():
        if is_protected_token(token):
            out.append(token)
            continue
        if _token_cache is not None and token in _token_cache:
            out.append(_token_cache[token])
            continue
        span = cascade.identify_token(token)
        if span.language in ("nl", "de"):
            if mode == "dict":
                span = translate_token_dict(span, dictionaries or {})
            else:
                span = translate_token_service(
                    span, text, client, cache=cache, dictionaries=dictionaries
                )
        aligned = span.translation if span.translation is not None else token
        if _token_cache is not None:
            _token_cache[token] = aligned
        out.append(aligned)
    return " ".join(out)


def align_corpus(
    records: list[CorpusRecord],
    mode: str,
    cascade: LanguageCascade | None = None,
    dictionaries=None,
    client=None,
    cache: TranslationCache | None = None,
) -> list[CorpusRecord]:
    if mode == "none":
        return list(records)
    cascade = cascade if cascade is not None else bundled_cascade()
    # identification and dictionary lookup are pure per token, so memoize;
    # service mode keys on context and bypasses the per-token memo
    token_cache: dict[str, str] | None = {} if mode == "dict" else None
    out = []
    for rec in records:
        aligned = align_event_text(
            rec.text,
            mode,
            cascade=cascade,
            dictionaries=dictionaries,
            client=client,
            cache=cache,
            _token_cache=token_cache,
        )
        out.append(CorpusRecord(stay_id=rec.stay_id, timestamp=rec.timestamp, text=aligned))
    return out


@dataclass
class LanguageStats:
    site_id: str
    token_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.token_counts.values())

    @property
    def percentages(self) -> dict[str, float]:
        total = self.total
        if total == 0:
            return {lang: 0.0 for lang in self.token_counts}
        return {lang: 100.0 * n / total for lang, n in self.token_counts.items()}


def language_stats(
    records: list[CorpusRecord], site_id: str, cascade: LanguageCascade | None = None
) -> LanguageStats:
    """Token-level language composition of a corpus (percentages sum to 100)."""
    cascade = cascade if cascade is not None else bundled_cascade()
    counts = {"en": 0, "nl": 0, "de": 0, "undetected": 0}
    memo: dict[str, str] = {}
    for rec in records:
        for token in rec.text.split():
            lang = memo.get(token)
            if lang is None:
                lang = cascade.identify_token(token).language
                memo[token] = lang
            counts[lang] += 1
    return LanguageStats(site_id=site_id, token_counts=counts)
