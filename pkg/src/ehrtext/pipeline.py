"""High-level wiring of the pipeline stages.

These helpers take one site from an ingested event store to a ready-to-train
dataset (cohort -> labels -> linearized corpus -> optional alignment ->
subword encoding -> patient split) and are shared by the CLI and the tests.
"""

from __future__ import annotations

from pathlib import Path

from .bpe import SubwordVocab, train_bpe
from .ingest import ICUStay, IngestResult, load_store
from .labels import TaskSpec, WindowConfig, build_cohort, compute_labels, default_tasks
from .linearize import CorpusRecord, linearize_stays
from .lingua import align_corpus, bundled_cascade, bundled_dictionaries
from .train import Example, SiteDataset, build_examples, split_site


def site_corpus(
    stays: list[ICUStay], align_mode: str = "none", cascade=None, dictionaries=None,
    client=None, cache=None,
) -> list[CorpusRecord]:
    records = linearize_stays(stays)
    if align_mode == "none":
        return records
    if dictionaries is None:
        dictionaries = bundled_dictionaries()
    return align_corpus(
        records, align_mode, cascade=cascade, dictionaries=dictionaries,
        client=client, cache=cache,
    )


def prepare_site(
    store: IngestResult | str | Path,
    vocab: SubwordVocab,
    seed: int,
    tasks: list[TaskSpec] | None = None,
    windows: WindowConfig = WindowConfig(),
    align_mode: str = "none",
    cascade=None,
    dictionaries=None,
    client=None,
    cache=None,
) -> SiteDataset:
    """Event store -> split SiteDataset for one site."""
    if not isinstance(store, IngestResult):
        store = load_store(store)
    tasks = tasks if tasks is not None else default_tasks()
    cohort = build_cohort(store.stays, windows)
    labels = {
        stay.stay_id: compute_labels(stay, tasks, windows) for stay in cohort.stays
    }
    patient_of = {stay.stay_id: stay.patient_id for stay in cohort.stays}
    stays_by_id = {stay.stay_id: stay for stay in cohort.stays}
    records = site_corpus(
        cohort.stays, align_mode, cascade=cascade, dictionaries=dictionaries,
        client=client, cache=cache,
    )
    site_id = cohort.stays[0].site_id if cohort.stays else "site"
    examples = build_examples(records, labels, vocab, patient_of, stays_by_id=stays_by_id)
    return split_site(site_id, examples, seed)


def train_tokenizer_for_sites(
    stores: list[IngestResult | str | Path],
    vocab_size: int,
    align_mode: str = "none",
    windows: WindowConfig = WindowConfig(),
    cascade=None,
    dictionaries=None,
) -> SubwordVocab:
    """Train a subword vocabulary on the pooled corpora of several sites.

    With align_mode "dict" this yields an EnTok-style English tokenizer on
    translated text; with "none" on mixed-language sites it yields MLTok.
    """
    lines: list[str] = []
    shared_cascade = cascade if cascade is not None else (
        bundled_cascade() if align_mode != "none" else None
    )
    for store in stores:
        if not isinstance(store, IngestResult):
            store = load_store(store)
        cohort = build_cohort(store.stays, windows)
        records = site_corpus(
            cohort.stays, align_mode, cascade=shared_cascade, dictionaries=dictionaries
        )
        lines.extend(rec.text for rec in records)
    return train_bpe(lines, vocab_size)
