"""Stratified k-fold assignment of subjects."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FoldPlan:
    k: int
    assignments: dict[str, int] = field(default_factory=dict)

    def test_ids(self, fold: int) -> list[str]:
        return [s for s, f in self.assignments.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [s for s, f in self.assignments.items() if f != fold]

    def sizes(self) -> list[int]:
        return [len(self.test_ids(f)) for f in range(self.k)]


def make_folds(subject_ids, labels, k: int = 10, seed: int = 0) -> FoldPlan:
    """Shuffle within each class, then deal subjects round-robin across folds.

    Classes are dealt one after another so fold sizes differ by at most one
    overall and per class.
    """
    ids = list(subject_ids)
    labels = np.asarray(labels)
    if len(ids) != len(labels):
        raise ValueError(f"{len(ids)} subjects but {len(labels)} labels")
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")
    if not 2 <= k <= len(ids):
        raise ValueError(f"k={k} must lie in [2, {len(ids)}]")
    rng = np.random.default_rng(seed)
    plan = FoldPlan(k)
    slot = 0
    for cls in np.unique(labels):
        members = [ids[i] for i in np.flatnonzero(labels == cls)]
        for j in rng.permutation(len(members)):
            plan.assignments[members[j]] = slot % k
            slot += 1
    # keep the caller's subject order for stable iteration
    plan.assignments = {s: plan.assignments[s] for s in ids}
    return plan
