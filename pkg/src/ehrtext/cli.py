"""Command-line interface orchestrating the pipeline end-to-end."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import synthgen
from .bpe import SubwordVocab, train_bpe
from .errors import ConfigurationError, EhrTextError
from .ingest import ingest_site, load_store, save_store
from .labels import (
    WindowConfig,
    build_cohort,
    class_prevalence_table,
    compute_labels,
    default_tasks,
)
from .linearize import linearize_stays, read_corpus, write_corpus
from .lingua import (
    BilingualDictionary,
    HttpTranslationClient,
    TranslationCache,
    align_corpus,
    bundled_cascade,
    bundled_dictionaries,
    language_stats,
)
from .manifest import parse_manifest
from .metrics import (
    MetricRow,
    aggregate_report,
    read_metrics_csv,
    read_transfer_grid,
    write_metrics_csv,
    write_transfer_grid,
)
from .model import ModelConfig, TextEncoderModel, save_checkpoint
from .pipeline import prepare_site, train_tokenizer_for_sites
from .train import RunConfig, train_model, transfer_matrix


def _fail(error: Exception, code: int = 1) -> None:
    payload = {"error": type(error).__name__, "message": str(error)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


@click.group()
def cli() -> None:
    """Schema-agnostic multilingual EHR prediction pipeline."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth(config_path: str, out_dir: str) -> None:
    """Generate synthetic multi-site data plus ground truth."""
    config = synthgen.GeneratorConfig.from_json(config_path)
    truth = synthgen.generate(config, out_dir)
    click.echo(f"generated {len(config.sites)} sites in {out_dir}")
    del truth


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest(manifest_path: str, out_path: str) -> None:
    """Ingest one site's CSV tables into an event store."""
    manifest = parse_manifest(manifest_path)
    result = ingest_site(manifest)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_store(result, manifest.site_id, out_path)
    click.echo(
        f"{manifest.site_id}: {len(result.stays)} stays, "
        f"{result.dropped_rows} dropped rows"
    )


def _windows(path: str | None) -> WindowConfig:
    if path is None:
        return WindowConfig()
    return WindowConfig(**json.loads(Path(path).read_text(encoding="utf-8")))


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--windows", "windows_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def cohort(store_path: str, windows_path: str | None, out_path: str) -> None:
    """Apply cohort rules and derive task labels."""
    windows = _windows(windows_path)
    store = load_store(store_path)
    result = build_cohort(store.stays, windows)
    tasks = default_tasks()
    rows = {
        stay.stay_id: compute_labels(stay, tasks, windows) for stay in result.stays
    }
    prevalence = class_prevalence_table(list(rows.values()), tasks)
    doc = {
        "exclusions": result.exclusions,
        "n_stays": len(result.stays),
        "labels": rows,
        "prevalence": {t: {str(c): p for c, p in d.items()} for t, d in prevalence.items()},
    }
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    click.echo(f"{len(result.stays)} stays labeled; exclusions {result.exclusions}")


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def linearize(store_path: str, out_path: str) -> None:
    """Serialize all events into the text corpus."""
    store = load_store(store_path)
    records = linearize_stays(store.stays)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_corpus(records, out_path)
    click.echo(f"{len(records)} events written to {out_path}")


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["none", "dict", "service"]), default="dict")
@click.option("--dict", "dict_paths", multiple=True, type=click.Path(exists=True))
@click.option("--cache", "cache_path", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--stats", "stats_path", type=click.Path())
def align(
    corpus_path: str,
    mode: str,
    dict_paths: tuple[str, ...],
    cache_path: str | None,
    out_path: str,
    stats_path: str | None,
) -> None:
    """Word-level translation alignment of a corpus."""
    records = read_corpus(corpus_path)
    dictionaries: dict[str, list[BilingualDictionary]] = {"nl": [], "de": []}
    for path in dict_paths:
        # file name prefix declares the source language, e.g. nl_medical.tsv
        lang = Path(path).name.split("_")[0].split("-")[0]
        if lang not in dictionaries:
            raise ConfigurationError(f"dictionary file {path}: unknown language {lang!r}")
        dictionaries[lang].append(BilingualDictionary.from_tsv(lang, path))
    for lang, bundled in bundled_dictionaries().items():
        dictionaries[lang].append(bundled)

    client = None
    cache = TranslationCache(cache_path) if cache_path else None
    if mode == "service":
        client = HttpTranslationClient()  # raises if TRANSLATE_ENDPOINT unset
    cascade = bundled_cascade()
    aligned = align_corpus(
        records, mode, cascade=cascade, dictionaries=dictionaries, client=client, cache=cache
    )
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_corpus(aligned, out_path)
    if stats_path:
        stats = language_stats(records, Path(corpus_path).stem, cascade=cascade)
        pct = stats.percentages
        Path(stats_path).write_text(json.dumps(pct, indent=1), encoding="utf-8")
    click.echo(f"aligned {len(aligned)} records (mode {mode})")


@cli.group()
def tokenizer() -> None:
    """Subword tokenizer commands."""


@tokenizer.command("train")
@click.option("--corpus", "corpus_paths", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--vocab-size", type=int, default=4096)
@click.option("--protected", "protected_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def tokenizer_train(
    corpus_paths: tuple[str, ...], vocab_size: int, protected_path: str | None, out_path: str
) -> None:
    """Train a byte-level BPE vocabulary on one or more corpora."""
    lines = []
    for path in corpus_paths:
        lines.extend(rec.text for rec in read_corpus(path))
    protected = None
    if protected_path:
        protected = [
            w.strip()
            for w in Path(protected_path).read_text(encoding="utf-8").splitlines()
            if w.strip()
        ]
    vocab = train_bpe(lines, vocab_size, protected)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out_path)
    click.echo(f"vocabulary of {len(vocab)} entries saved to {out_path}")


def _load_run_spec(path: str) -> dict:
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("stores", "vocab", "out_dir"):
        if key not in spec:
            raise ConfigurationError(f"run config missing {key!r}")
    return spec


def _run_tasks(spec: dict):
    tasks = default_tasks()
    if "tasks" in spec:
        wanted = set(spec["tasks"])
        tasks = [t for t in tasks if t.task_id in wanted]
        missing = wanted - {t.task_id for t in tasks}
        if missing:
            raise ConfigurationError(f"unknown task ids: {sorted(missing)}")
    return tasks


def _run_config(spec: dict, regime: str) -> RunConfig:
    fields = (
        "fewshot_fraction", "seeds", "batch_size", "learning_rate", "dropout",
        "max_steps", "eval_every", "patience", "site_balanced",
    )
    kwargs = {k: spec[k] for k in fields if k in spec}
    return RunConfig(
        regime=regime,
        source_sites=sorted(spec["stores"]),
        target_site=spec.get("target_site"),
        **kwargs,
    )


def _model_config(spec: dict, vocab: SubwordVocab, tasks) -> ModelConfig:
    model_kwargs = dict(spec.get("model", {}))
    return ModelConfig(vocab_size=len(vocab), tasks=tasks, **model_kwargs)


def _prepare_datasets(spec: dict, vocab: SubwordVocab, tasks, seed: int):
    align_mode = spec.get("align_mode", "none")
    dictionaries = bundled_dictionaries() if align_mode != "none" else None
    cascade = bundled_cascade() if align_mode != "none" else None
    datasets = {}
    for site_id, store_path in sorted(spec["stores"].items()):
        datasets[site_id] = prepare_site(
            store_path, vocab, seed, tasks=tasks, align_mode=align_mode,
            cascade=cascade, dictionaries=dictionaries,
        )
    return datasets


@cli.command("train")
@click.option("--run-config", "run_config_path", required=True, type=click.Path(exists=True))
def train_cmd(run_config_path: str) -> None:
    """Run the single or multi training regime over the configured seeds."""
    from .metrics import MetricRow
    from .train import evaluate_model

    spec = _load_run_spec(run_config_path)
    regime = spec.get("regime", "multi")
    if regime not in ("single", "multi"):
        raise ConfigurationError("train supports regimes 'single' and 'multi'")
    config = _run_config(spec, regime)
    tasks = _run_tasks(spec)
    vocab = SubwordVocab.load(spec["vocab"])
    out_dir = Path(spec["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = spec.get("mode", spec.get("align_mode", "none"))

    rows: list[MetricRow] = []
    for seed in config.seeds:
        datasets = _prepare_datasets(spec, vocab, tasks, seed)
        groups = (
            [{sid: ds} for sid, ds in datasets.items()] if regime == "single" else [datasets]
        )
        for group in groups:
            import torch

            torch.manual_seed(seed)
            model = TextEncoderModel(_model_config(spec, vocab, tasks), pad_id=vocab.pad_id)
            label = "_".join(sorted(group)) if regime == "single" else "multi"
            result = train_model(
                model, group, config, seed,
                log_path=out_dir / f"log_{regime}_{label}_seed{seed}.jsonl",
            )
            for sid, ckpt in result.checkpoints.items():
                model.load_state_dict(ckpt.state_dict)
                save_checkpoint(
                    out_dir / f"ckpt_{regime}_{sid}_seed{seed}.pt", model, ckpt.step,
                    {"site": sid, "val_auroc": ckpt.val_auroc, "seed": seed},
                )
                per_task = evaluate_model(model, datasets[sid].test, tasks)
                for task_id, value in per_task.items():
                    rows.append(MetricRow(sid, regime, mode, task_id, seed, value))
    write_metrics_csv(rows, out_dir / "metrics.csv")
    click.echo(f"wrote {len(rows)} metric rows to {out_dir / 'metrics.csv'}")


@cli.command("transfer")
@click.option("--run-config", "run_config_path", required=True, type=click.Path(exists=True))
def transfer_cmd(run_config_path: str) -> None:
    """Train per-site models and emit the transfer AUROC grid."""
    import torch

    spec = _load_run_spec(run_config_path)
    config = _run_config(spec, "transfer")
    tasks = _run_tasks(spec)
    vocab = SubwordVocab.load(spec["vocab"])
    out_dir = Path(spec["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    seed = config.seeds[0]
    datasets = _prepare_datasets(spec, vocab, tasks, seed)
    model_config = _model_config(spec, vocab, tasks)

    def make_model() -> TextEncoderModel:
        torch.manual_seed(seed)
        return TextEncoderModel(model_config, pad_id=vocab.pad_id)

    singles = {}
    for sid, ds in datasets.items():
        model = make_model()
        result = train_model(model, {sid: ds}, config, seed)
        singles[sid] = result.checkpoints[sid]
    grid = transfer_matrix(make_model, datasets, singles, config, seed)
    sites = sorted(datasets)
    write_transfer_grid(grid, sites, out_dir / "transfer_grid.csv")
    click.echo(f"transfer grid over {len(sites)} sites written to {out_dir}")


@cli.command()
@click.option("--logs", "logs_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--expected-seeds", type=int, default=None)
def report(logs_dir: str, out_dir: str, expected_seeds: int | None) -> None:
    """Aggregate metrics.csv files into the Markdown report."""
    logs = Path(logs_dir)
    rows: list[MetricRow] = []
    for path in sorted(logs.rglob("metrics.csv")):
        rows.extend(read_metrics_csv(path))
    if not rows:
        raise ConfigurationError(f"no metrics.csv found under {logs_dir}")
    transfer_grid = None
    sites = None
    grids = sorted(logs.rglob("transfer_grid.csv"))
    if grids:
        transfer_grid = read_transfer_grid(grids[0])
        sites = sorted({src for src, _ in transfer_grid})
    path = aggregate_report(
        rows, out_dir, transfer_grid=transfer_grid, sites=sites, expected_seeds=expected_seeds
    )
    click.echo(f"report written to {path}")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.exceptions.UsageError as exc:
        click.echo(exc.format_message(), err=True)
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except EhrTextError as exc:
        _fail(exc, 1)
    except Exception as exc:  # pragma: no cover - defensive
        _fail(exc, 1)


if __name__ == "__main__":
    main()
