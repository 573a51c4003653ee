"""Baseline encoders: code-based events and common-feature grids.

The code-based baseline replaces the text event encoder f with a lookup:
each event's local code gets its own embedding (unseen codes share UNK) and
numeric feature values are discretized into per-(event_type, feature)
quantile bins whose embeddings are summed in. It shares the stay encoder g
and task heads h with the text model. The common-feature baseline resamples
manifest-mapped variables onto an hourly grid over the observation window
(forward-fill, then zero-impute with a missing-indicator channel) and feeds
the hour vectors through a g-style encoder.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import NoEvents
from .ingest import ICUStay, MedicalEvent
from .manifest import CommonVariable
from .model import ModelConfig, StayEncoder, TaskHeads

UNK_CODE = "<unk>"


def _numeric(value: str) -> float | None:
    try:
        return float(value)
    except ValueError:
        return None


def event_code(event: MedicalEvent) -> str:
    """Local categorical code: event type plus the non-numeric feature values."""
    parts = [event.event_type]
    for name, value in event.features:
        if _numeric(value) is None:
            parts.append(f"{name}={value}")
    return "|".join(parts)


@dataclass
class CodeVocab:
    """Training-site code list and per-(event_type, feature) quantile bins."""

    n_bins: int = 10
    code_to_id: dict[str, int] = field(default_factory=lambda: {UNK_CODE: 0})
    bin_edges: dict[tuple[str, str], list[float]] = field(default_factory=dict)
    bin_key_to_id: dict[tuple[str, str], int] = field(default_factory=dict)

    @staticmethod
    def build(stays: list[ICUStay], n_bins: int = 10) -> "CodeVocab":
        vocab = CodeVocab(n_bins=n_bins)
        values: dict[tuple[str, str], list[float]] = {}
        for stay in stays:
            for event in stay.events:
                code = event_code(event)
                if code not in vocab.code_to_id:
                    vocab.code_to_id[code] = len(vocab.code_to_id)
                for name, value in event.features:
                    x = _numeric(value)
                    if x is not None:
                        values.setdefault((event.event_type, name), []).append(x)
        for key, xs in sorted(values.items()):
            xs.sort()
            # interior quantile cut points; bin b holds the b-th n-quantile
            edges = [xs[int(len(xs) * q / n_bins)] for q in range(1, n_bins)]
            vocab.bin_edges[key] = edges
            vocab.bin_key_to_id[key] = len(vocab.bin_key_to_id)
        return vocab

    def code_id(self, event: MedicalEvent) -> int:
        return self.code_to_id.get(event_code(event), self.code_to_id[UNK_CODE])

    def value_bin(self, event_type: str, feature: str, value: float) -> int | None:
        edges = self.bin_edges.get((event_type, feature))
        if edges is None:
            return None
        return bisect.bisect_right(edges, value)

    def bin_slot(self, event_type: str, feature: str, value: float) -> int | None:
        """Flat embedding index for (feature, bin), or None if unseen feature."""
        b = self.value_bin(event_type, feature, value)
        if b is None:
            return None
        return self.bin_key_to_id[(event_type, feature)] * self.n_bins + b

    @property
    def n_codes(self) -> int:
        return len(self.code_to_id)

    @property
    def n_bin_slots(self) -> int:
        return max(len(self.bin_key_to_id) * self.n_bins, 1)


class CodeBaselineModel(nn.Module):
    """Code + value-bin embeddings feeding the shared g and h."""

    def __init__(self, config: ModelConfig, vocab: CodeVocab):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.code_embed = nn.Embedding(vocab.n_codes, config.d_model)
        self.bin_embed = nn.Embedding(vocab.n_bin_slots + 1, config.d_model, padding_idx=0)
        self.stay_encoder = StayEncoder(config)
        self.heads = TaskHeads(config)
        self.truncated_events = 0

    def embed_event(self, event: MedicalEvent) -> torch.Tensor:
        vec = self.code_embed(torch.tensor(self.vocab.code_id(event)))
        for name, value in event.features:
            x = _numeric(value)
            if x is None:
                continue
            slot = self.vocab.bin_slot(event.event_type, name, x)
            if slot is not None:
                vec = vec + self.bin_embed(torch.tensor(slot + 1))
        return vec

    def prepare_batch(
        self, stays: list[list[MedicalEvent]]
    ) -> tuple[list[list[MedicalEvent]], torch.Tensor, torch.Tensor]:
        if any(not events for events in stays):
            raise NoEvents("stay with no events in batch")
        clipped = []
        for events in stays:
            if len(events) > self.config.max_events_per_stay:
                self.truncated_events += len(events) - self.config.max_events_per_stay
                events = events[-self.config.max_events_per_stay :]
            clipped.append(events)
        max_events = max(len(e) for e in clipped)
        timestamps = torch.zeros((len(clipped), max_events), dtype=torch.float32)
        event_pad = torch.ones((len(clipped), max_events), dtype=torch.bool)
        for b, events in enumerate(clipped):
            timestamps[b, : len(events)] = torch.tensor(
                [ev.timestamp for ev in events], dtype=torch.float32
            )
            event_pad[b, : len(events)] = False
        return clipped, timestamps, event_pad

    def forward(self, stays: list[list[MedicalEvent]]) -> dict[str, torch.Tensor]:
        clipped, timestamps, event_pad = self.prepare_batch(stays)
        batch, max_events = event_pad.shape
        vectors = torch.zeros(batch, max_events, self.config.d_model)
        for b, events in enumerate(clipped):
            for e, event in enumerate(events):
                vectors[b, e] = self.embed_event(event)
        h_p = self.stay_encoder(vectors, timestamps, event_pad)
        return self.heads(h_p)


def common_feature_grid(
    stay: ICUStay,
    common_variable_map: dict[str, CommonVariable],
    variables: list[str],
    n_hours: int = 12,
) -> torch.Tensor:
    """(n_hours, 2K) grid: hourly value channels then missing indicators.

    The latest measurement within each hour wins; gaps are forward-filled
    from earlier hours, remaining cells are zero with indicator 1. Unmapped
    variables are all-missing.
    """
    k = len(variables)
    values = [[None] * k for _ in range(n_hours)]
    for vi, var in enumerate(variables):
        cv = common_variable_map.get(var)
        if cv is None:
            continue
        for event in stay.events:
            if event.event_type != cv.table:
                continue
            hour = int(event.timestamp // 60)
            if not 0 <= hour < n_hours:
                continue
            for name, value in event.features:
                if name == cv.column:
                    x = _numeric(value)
                    if x is not None:
                        values[hour][vi] = x * cv.unit_scale
    grid = torch.zeros(n_hours, 2 * k)
    last = [None] * k
    for h in range(n_hours):
        for vi in range(k):
            if values[h][vi] is not None:
                last[vi] = values[h][vi]
            if last[vi] is not None:
                grid[h, vi] = last[vi]
            else:
                grid[h, k + vi] = 1.0  # missing indicator
    return grid


class CommonFeatureModel(nn.Module):
    """Hourly common-variable grid through a g-style encoder and heads."""

    def __init__(
        self, config: ModelConfig, variables: list[str], n_hours: int = 12
    ):
        super().__init__()
        self.config = config
        self.variables = list(variables)
        self.n_hours = n_hours
        self.input_proj = nn.Linear(2 * len(self.variables), config.d_model)
        self.stay_encoder = StayEncoder(config)
        self.heads = TaskHeads(config)

    def forward(
        self, stays: list[ICUStay], common_variable_maps: list[dict[str, CommonVariable]]
    ) -> dict[str, torch.Tensor]:
        grids = torch.stack(
            [
                common_feature_grid(stay, cvm, self.variables, self.n_hours)
                for stay, cvm in zip(stays, common_variable_maps)
            ]
        )
        x = self.input_proj(grids)
        timestamps = (
            torch.arange(self.n_hours, dtype=torch.float32).unsqueeze(0).repeat(len(stays), 1)
            * 60.0
        )
        event_pad = torch.zeros(len(stays), self.n_hours, dtype=torch.bool)
        h_p = self.stay_encoder(x, timestamps, event_pad)
        return self.heads(h_p)
