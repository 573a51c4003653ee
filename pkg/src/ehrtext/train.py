"""Training regimes: Single (per site), Multi (pooled), and transfer.

One generic loop trains any of the models (text, code baseline, common
feature baseline) via a forward adapter. Early stopping is per validation
site: at every evaluation each site's mean validation AUROC is compared to
its best so far and the best parameter snapshot is kept per site; training
stops when every site has gone `patience` evaluations without improvement.
All randomness (init, split, shuffle, few-shot sampling) derives from the
run seed.
"""

from __future__ import annotations

import copy
import json
import math
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch

from .errors import DegenerateLabels, Diverged, MissingCheckpoint
from .labels import TaskSpec
from .linearize import CorpusRecord
from .metrics import auroc, auroc_ovr
from .split import split_patients

OBS_END_MINUTES = 720.0


@dataclass
class RunConfig:
    regime: str  # single / multi / transfer
    source_sites: list[str]
    target_site: str | None = None
    fewshot_fraction: float = 0.10
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    batch_size: int = 32
    learning_rate: float = 1e-4
    dropout: float = 0.3
    max_steps: int = 4000
    eval_every: int = 200
    patience: int = 5
    site_balanced: bool = False

    def __post_init__(self):
        if not 0 < self.fewshot_fraction <= 1:
            raise ValueError("fewshot_fraction must be in (0, 1]")
        if len(self.seeds) < 1:
            raise ValueError("at least one seed required")
        if self.regime not in ("single", "multi", "transfer"):
            raise ValueError(f"unknown regime {self.regime!r}")

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1), encoding="utf-8")

    @staticmethod
    def from_json(path: str | Path) -> "RunConfig":
        return RunConfig(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Example:
    stay_id: str
    patient_id: str
    events: list[list[int]]
    timestamps: list[float]
    labels: dict[str, int]
    raw_events: list | None = None  # MedicalEvents, for the code baseline
    stay: object | None = None  # ICUStay, for the common-feature baseline


@dataclass
class SiteDataset:
    site_id: str
    train: list[Example]
    valid: list[Example]
    test: list[Example]


def build_examples(
    records: list[CorpusRecord],
    labels: dict[str, dict[str, int]],
    vocab,
    patient_of: dict[str, str],
    stays_by_id: dict | None = None,
    obs_end: float = OBS_END_MINUTES,
) -> list[Example]:
    """Encode corpus records into training examples, one per labeled stay.

    Only events with timestamps inside the observation window feed the
    model. Stays absent from the label table (cohort exclusions) are
    skipped.
    """
    by_stay: dict[str, list[CorpusRecord]] = {}
    for rec in records:
        by_stay.setdefault(rec.stay_id, []).append(rec)
    examples = []
    for stay_id in sorted(by_stay):
        if stay_id not in labels:
            continue
        recs = [r for r in by_stay[stay_id] if r.timestamp <= obs_end]
        if not recs:
            continue
        stay = stays_by_id.get(stay_id) if stays_by_id else None
        raw = None
        if stay is not None:
            raw = [ev for ev in stay.events if ev.timestamp <= obs_end]
        examples.append(
            Example(
                stay_id=stay_id,
                patient_id=patient_of[stay_id],
                events=[vocab.encode(r.text) for r in recs],
                timestamps=[r.timestamp for r in recs],
                labels=dict(labels[stay_id]),
                raw_events=raw,
                stay=stay,
            )
        )
    return examples


def split_site(site_id: str, examples: list[Example], seed: int) -> SiteDataset:
    """Patient-level 8:1:1 split of a site's examples."""
    patients = sorted({ex.patient_id for ex in examples})
    ds = split_patients(patients, seed)
    parts = {"train": [], "valid": [], "test": []}
    for ex in examples:
        parts[ds.part_of(ex.patient_id)].append(ex)
    return SiteDataset(site_id, parts["train"], parts["valid"], parts["test"])


def text_forward(model, batch: list[Example]) -> dict[str, torch.Tensor]:
    tensors = model.prepare_batch([(ex.events, ex.timestamps) for ex in batch])
    return model(*tensors)


def code_forward(model, batch: list[Example]) -> dict[str, torch.Tensor]:
    return model([ex.raw_events for ex in batch])


def make_common_forward(common_variable_maps: dict[str, dict]):
    def forward(model, batch: list[Example]) -> dict[str, torch.Tensor]:
        stays = [ex.stay for ex in batch]
        cvms = [common_variable_maps[ex.stay.site_id] for ex in batch]
        return model(stays, cvms)

    return forward


def _label_tensors(batch: list[Example], tasks: list[TaskSpec]) -> dict[str, torch.Tensor]:
    return {
        t.task_id: torch.tensor([ex.labels.get(t.task_id, -1) for ex in batch], dtype=torch.long)
        for t in tasks
    }


@torch.no_grad()
def evaluate_model(
    model, examples: list[Example], tasks: list[TaskSpec], forward_fn=text_forward,
    batch_size: int = 64,
) -> dict[str, float]:
    """Per-task AUROC on a split; degenerate tasks are omitted."""
    was_training = model.training
    model.eval()
    probs: dict[str, list] = {t.task_id: [] for t in tasks}
    ys: dict[str, list] = {t.task_id: [] for t in tasks}
    for start in range(0, len(examples), batch_size):
        batch = examples[start : start + batch_size]
        logits = forward_fn(model, batch)
        for t in tasks:
            p = torch.softmax(logits[t.task_id], dim=-1)
            for row, ex in zip(p, batch):
                y = ex.labels.get(t.task_id, -1)
                if y == -1:
                    continue
                probs[t.task_id].append(row.tolist())
                ys[t.task_id].append(y)
    if was_training:
        model.train()
    out = {}
    for t in tasks:
        if not ys[t.task_id]:
            continue
        try:
            if t.n_classes == 2:
                out[t.task_id] = auroc([p[1] for p in probs[t.task_id]], ys[t.task_id])
            else:
                out[t.task_id] = auroc_ovr(probs[t.task_id], ys[t.task_id])
        except DegenerateLabels:
            continue
    return out


def _mean(d: dict[str, float]) -> float:
    return sum(d.values()) / len(d) if d else float("nan")


@dataclass
class SiteCheckpoint:
    site_id: str
    step: int
    val_auroc: float
    state_dict: dict


@dataclass
class TrainResult:
    checkpoints: dict[str, SiteCheckpoint]
    log: list[dict]
    steps_run: int


def train_model(
    model,
    datasets: dict[str, SiteDataset],
    config: RunConfig,
    seed: int,
    forward_fn=text_forward,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Train on the union of the datasets' train splits with per-site
    early stopping on validation AUROC."""
    from .model import multitask_loss

    torch.manual_seed(seed)
    rng = random.Random(seed)
    tasks = model.config.tasks
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999)
    )

    if config.site_balanced:
        pools = {sid: list(ds.train) for sid, ds in datasets.items()}
    train_pool = [ex for ds in datasets.values() for ex in ds.train]
    if not train_pool:
        raise ValueError("no training examples")

    best: dict[str, SiteCheckpoint] = {}
    stale: dict[str, int] = {sid: 0 for sid in datasets}
    log: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(record: dict) -> None:
        log.append(record)
        if log_fh:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    def next_batch() -> list[Example]:
        if config.site_balanced:
            sid = rng.choice(sorted(pools))
            pool = pools[sid]
        else:
            pool = train_pool
        return [pool[rng.randrange(len(pool))] for _ in range(config.batch_size)]

    model.train()
    step = 0
    try:
        while step < config.max_steps:
            step += 1
            batch = next_batch()
            logits = forward_fn(model, batch)
            loss = multitask_loss(logits, _label_tensors(batch, tasks))
            if not math.isfinite(float(loss.detach())):
                raise Diverged(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            if step % config.eval_every == 0:
                record = {"step": step, "loss": float(loss.detach()), "val_auroc": {}}
                for sid, ds in datasets.items():
                    per_task = evaluate_model(model, ds.valid, tasks, forward_fn)
                    score = _mean(per_task)
                    record["val_auroc"][sid] = score
                    if not math.isnan(score) and (
                        sid not in best or score > best[sid].val_auroc
                    ):
                        best[sid] = SiteCheckpoint(
                            site_id=sid,
                            step=step,
                            val_auroc=score,
                            state_dict=copy.deepcopy(model.state_dict()),
                        )
                        stale[sid] = 0
                    else:
                        stale[sid] += 1
                emit(record)
                if all(stale[sid] >= config.patience for sid in datasets):
                    break
    finally:
        if log_fh:
            log_fh.close()

    for sid in datasets:
        if sid not in best:
            # never evaluated above nan: keep the final weights
            best[sid] = SiteCheckpoint(
                site_id=sid,
                step=step,
                val_auroc=float("nan"),
                state_dict=copy.deepcopy(model.state_dict()),
            )
    return TrainResult(checkpoints=best, log=log, steps_run=step)


def fewshot_sample(examples: list[Example], fraction: float, seed: int) -> list[Example]:
    """Patient-level subsample of a train split."""
    if fraction >= 1.0:
        return list(examples)
    patients = sorted({ex.patient_id for ex in examples})
    rng = random.Random(seed)
    rng.shuffle(patients)
    n = max(1, round(fraction * len(patients)))
    chosen = set(patients[:n])
    return [ex for ex in examples if ex.patient_id in chosen]


def finetune(
    model,
    checkpoint_state: dict,
    target: SiteDataset,
    config: RunConfig,
    seed: int,
    forward_fn=text_forward,
) -> TrainResult:
    """Fine-tune all parameters from a source checkpoint on the target site."""
    model.load_state_dict(checkpoint_state)
    subset = fewshot_sample(target.train, config.fewshot_fraction, seed)
    target_ds = SiteDataset(target.site_id, subset, target.valid, target.test)
    return train_model(model, {target.site_id: target_ds}, config, seed, forward_fn)


def transfer_matrix(
    make_model,
    datasets: dict[str, SiteDataset],
    single_checkpoints: dict[str, SiteCheckpoint],
    config: RunConfig,
    seed: int,
    forward_fn=text_forward,
) -> dict[tuple[str, str], float]:
    """site x site grid of mean test AUROC.

    Diagonal cells evaluate each site's single-regime checkpoint on its own
    test split; off-diagonal cells fine-tune the source checkpoint on the
    target site first.
    """
    sites = sorted(datasets)
    grid: dict[tuple[str, str], float] = {}
    for src in sites:
        if src not in single_checkpoints:
            raise MissingCheckpoint(f"no single-regime checkpoint for site {src!r}")
    for src in sites:
        for dst in sites:
            model = make_model()
            if src == dst:
                model.load_state_dict(single_checkpoints[src].state_dict)
            else:
                result = finetune(
                    model, single_checkpoints[src].state_dict, datasets[dst], config, seed,
                    forward_fn,
                )
                model.load_state_dict(result.checkpoints[dst].state_dict)
            model.eval()
            per_task = evaluate_model(model, datasets[dst].test, model.config.tasks, forward_fn)
            grid[(src, dst)] = _mean(per_task)
    return grid
