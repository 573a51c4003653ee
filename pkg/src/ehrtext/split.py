"""Patient-level 8:1:1 train/valid/test splitting."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import DuplicatePatient

RATIOS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset[str]
    valid: frozenset[str]
    test: frozenset[str]

    def part_of(self, patient_id: str) -> str:
        if patient_id in self.train:
            return "train"
        if patient_id in self.valid:
            return "valid"
        if patient_id in self.test:
            return "test"
        raise KeyError(patient_id)


def _part_sizes(n: int) -> tuple[int, int, int]:
    # Largest-remainder apportionment of the 8:1:1 ratio; ties go to
    # train, then valid, then test.
    floors = [int(n * r) for r in RATIOS]
    remainders = [n * r - f for r, f in zip(RATIOS, floors)]
    leftover = n - sum(floors)
    order = sorted(range(3), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        floors[i] += 1
    return tuple(floors)  # type: ignore[return-value]


def split_patients(patients: list[str], seed: int) -> DatasetSplit:
    """Deterministically partition patients 8:1:1 for a fixed seed."""
    if not patients:
        raise ValueError("patient list is empty")
    if len(set(patients)) != len(patients):
        dupes = sorted({p for p in patients if patients.count(p) > 1})
        raise DuplicatePatient(f"duplicate patient ids: {dupes[:5]}")
    shuffled = sorted(patients)
    random.Random(seed).shuffle(shuffled)
    n_train, n_valid, _ = _part_sizes(len(shuffled))
    return DatasetSplit(
        train=frozenset(shuffled[:n_train]),
        valid=frozenset(shuffled[n_train : n_train + n_valid]),
        test=frozenset(shuffled[n_train + n_valid :]),
    )
