"""Hierarchical text encoder: event encoder f, stay encoder g, task heads h.

Both encoders are small pre-norm transformers. f mean-pools subword
embeddings per event into an event vector; g adds a learned projection of a
sinusoidal encoding of the event timestamp, runs the event sequence through
its own transformer, and mean-pools into the stay representation h_P, which
per-task linear heads map to logits. Because the blocks are pre-norm
residual and g applies no final layer norm, zeroing g's weights makes h_P
exactly the mean of the event vectors — a property the tests rely on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .errors import EmptyEvent, NoEvents
from .labels import TaskSpec, default_tasks


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_layers_f: int = 2
    n_layers_g: int = 2
    n_heads: int = 4
    max_tokens_per_event: int = 64
    max_events_per_stay: int = 256
    dropout: float = 0.3
    tasks: list[TaskSpec] = field(default_factory=default_tasks)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_tokens_per_event <= 0 or self.max_events_per_stay <= 0:
            raise ValueError("sequence caps must be positive")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_layers_f": self.n_layers_f,
            "n_layers_g": self.n_layers_g,
            "n_heads": self.n_heads,
            "max_tokens_per_event": self.max_tokens_per_event,
            "max_events_per_stay": self.max_events_per_stay,
            "dropout": self.dropout,
            "tasks": [t.to_dict() for t in self.tasks],
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["tasks"] = [TaskSpec.from_dict(t) for t in d["tasks"]]
        return ModelConfig(**d)


class PreNormBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(4 * d_model, d_model),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        # pad_mask: (batch, seq) True where padding
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        x = x + self.drop(attn_out)
        x = x + self.drop(self.ff(self.norm2(x)))
        return x


def _masked_mean(x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
    keep = (~pad_mask).unsqueeze(-1).to(x.dtype)
    total = (x * keep).sum(dim=1)
    count = keep.sum(dim=1).clamp(min=1.0)
    return total / count


def sinusoidal_time_features(timestamps: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal encoding of minutes-since-admission; (…,) -> (…, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    )
    angles = timestamps.unsqueeze(-1).to(torch.float32) * freqs
    feats = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if feats.shape[-1] < dim:
        feats = torch.cat([feats, torch.zeros(*feats.shape[:-1], dim - feats.shape[-1])], dim=-1)
    return feats


class EventEncoder(nn.Module):
    """f: subword ids of one event -> event vector (mean-pooled)."""

    def __init__(self, config: ModelConfig, pad_id: int):
        super().__init__()
        self.pad_id = pad_id
        self.embed = nn.Embedding(config.vocab_size, config.d_model, padding_idx=pad_id)
        self.blocks = nn.ModuleList(
            PreNormBlock(config.d_model, config.n_heads, config.dropout)
            for _ in range(config.n_layers_f)
        )
        self.norm = nn.LayerNorm(config.d_model)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        # token_ids: (batch, tokens) padded with pad_id
        pad_mask = token_ids.eq(self.pad_id)
        if bool(pad_mask.all(dim=1).any()):
            raise EmptyEvent("event with no tokens")
        x = self.embed(token_ids)
        for block in self.blocks:
            x = block(x, pad_mask)
        return _masked_mean(self.norm(x), pad_mask)


class StayEncoder(nn.Module):
    """g: event vectors + timestamps -> stay representation h_P."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.time_proj = nn.Linear(config.d_model, config.d_model)
        self.blocks = nn.ModuleList(
            PreNormBlock(config.d_model, config.n_heads, config.dropout)
            for _ in range(config.n_layers_g)
        )
        self.d_model = config.d_model

    def forward(
        self, event_vectors: torch.Tensor, timestamps: torch.Tensor, pad_mask: torch.Tensor
    ) -> torch.Tensor:
        # event_vectors: (batch, events, d); timestamps: (batch, events)
        if bool(pad_mask.all(dim=1).any()):
            raise NoEvents("stay with no events")
        time_feats = sinusoidal_time_features(timestamps, self.d_model)
        x = event_vectors + self.time_proj(time_feats.to(self.time_proj.weight.dtype))
        for block in self.blocks:
            x = block(x, pad_mask)
        return _masked_mean(x, pad_mask)


class TaskHeads(nn.Module):
    """h: one linear classifier per task (binary tasks as 2-class)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.heads = nn.ModuleDict(
            {t.task_id: nn.Linear(config.d_model, t.n_classes) for t in config.tasks}
        )

    def forward(self, h_p: torch.Tensor) -> dict[str, torch.Tensor]:
        return {task_id: head(h_p) for task_id, head in self.heads.items()}


class TextEncoderModel(nn.Module):
    """End-to-end f -> g -> h model over batches of stays."""

    def __init__(self, config: ModelConfig, pad_id: int):
        super().__init__()
        self.config = config
        self.pad_id = pad_id
        self.event_encoder = EventEncoder(config, pad_id)
        self.stay_encoder = StayEncoder(config)
        self.heads = TaskHeads(config)
        self.truncated_tokens = 0
        self.truncated_events = 0

    def prepare_batch(
        self, stays: list[tuple[list[list[int]], list[float]]]
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Pad a list of (event token-id lists, timestamps) into tensors.

        Returns (token_ids (B, E, T), timestamps (B, E), event_pad_mask (B, E)).
        Over-long events are truncated; over-long stays keep the most recent
        events; both increment the truncation counters.
        """
        if any(len(events) == 0 for events, _ in stays):
            raise NoEvents("stay with no events in batch")
        clipped = []
        for events, times in stays:
            if len(events) > self.config.max_events_per_stay:
                self.truncated_events += len(events) - self.config.max_events_per_stay
                events = events[-self.config.max_events_per_stay :]
                times = times[-self.config.max_events_per_stay :]
            evs = []
            for ids in events:
                if not ids:
                    raise EmptyEvent("event with no tokens")
                if len(ids) > self.config.max_tokens_per_event:
                    self.truncated_tokens += len(ids) - self.config.max_tokens_per_event
                    ids = ids[: self.config.max_tokens_per_event]
                evs.append(ids)
            clipped.append((evs, list(times)))

        max_events = max(len(events) for events, _ in clipped)
        max_tokens = max(len(ids) for events, _ in clipped for ids in events)
        batch = len(clipped)
        token_ids = torch.full((batch, max_events, max_tokens), self.pad_id, dtype=torch.long)
        timestamps = torch.zeros((batch, max_events), dtype=torch.float32)
        event_pad = torch.ones((batch, max_events), dtype=torch.bool)
        for b, (events, times) in enumerate(clipped):
            for e, ids in enumerate(events):
                token_ids[b, e, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            timestamps[b, : len(times)] = torch.tensor(times, dtype=torch.float32)
            event_pad[b, : len(events)] = False
        return token_ids, timestamps, event_pad

    def embed_events(self, token_ids: torch.Tensor, event_pad: torch.Tensor) -> torch.Tensor:
        batch, n_events, n_tokens = token_ids.shape
        flat = token_ids.reshape(batch * n_events, n_tokens)
        flat_pad = event_pad.reshape(batch * n_events)
        weight = self.event_encoder.embed.weight
        vectors = torch.zeros(
            batch * n_events, self.config.d_model, dtype=weight.dtype, device=weight.device
        )
        real = ~flat_pad
        if bool(real.any()):
            vectors[real] = self.event_encoder(flat[real])
        return vectors.reshape(batch, n_events, self.config.d_model)

    def forward(
        self, token_ids: torch.Tensor, timestamps: torch.Tensor, event_pad: torch.Tensor
    ) -> dict[str, torch.Tensor]:
        event_vectors = self.embed_events(token_ids, event_pad)
        h_p = self.stay_encoder(event_vectors, timestamps, event_pad)
        return self.heads(h_p)


def multitask_loss(
    logits: dict[str, torch.Tensor], labels: dict[str, torch.Tensor]
) -> torch.Tensor:
    """Cross-entropy over unmasked (stay, task) pairs; label -1 masks a pair."""
    total = None
    count = 0
    for task_id, task_logits in logits.items():
        y = labels[task_id]
        keep = y.ne(-1)
        n = int(keep.sum())
        if n == 0:
            continue
        ce = nn.functional.cross_entropy(task_logits[keep], y[keep], reduction="sum")
        total = ce if total is None else total + ce
        count += n
    if total is None:
        # fully masked batch: exact zero with zero gradient
        any_logits = next(iter(logits.values()))
        return any_logits.sum() * 0.0
    return total / count


def save_checkpoint(
    path: str | Path, model: TextEncoderModel, step: int = 0, extra: dict | None = None
) -> None:
    """Atomic write: config + weights + metadata."""
    path = Path(path)
    payload = {
        "format": "ehrtext-ckpt-v1",
        "config": model.config.to_dict(),
        "pad_id": model.pad_id,
        "state_dict": model.state_dict(),
        "step": step,
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[TextEncoderModel, int, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != "ehrtext-ckpt-v1":
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    config = ModelConfig.from_dict(payload["config"])
    model = TextEncoderModel(config, pad_id=payload["pad_id"])
    model.load_state_dict(payload["state_dict"])
    return model, payload["step"], payload["extra"]


def save_config_json(config: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=1), encoding="utf-8")
