"""Train/validation splitting and micro-batch ordering."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import EmptyInput


@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple
    val_ids: tuple
    seed: int


def _cut(n: int, ratio: float) -> int:
    return int(math.floor(ratio * n + 0.5))


def make_splits(ids: Sequence, ratio: float = 0.5, seed: int = 0,
                labels: Optional[Sequence[int]] = None) -> SplitPlan:
    """Seeded shuffle then cut at ``round(ratio * n)``.

    With ``labels`` the cut is made per class, so both sides keep the class
    proportions (to within one sample).
    """
    ids = list(ids)
    if len(ids) < 2:
        raise EmptyInput(f"need at least 2 ids to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = [ids[i] for i in rng.permutation(len(ids))]
        k = _cut(len(ids), ratio)
        return SplitPlan(tuple(order[:k]), tuple(order[k:]), seed)
    if len(labels) != len(ids):
        raise ValueError("labels and ids differ in length")
    train, val = [], []
    for cls in sorted(set(labels)):
        members = [i for i, y in zip(ids, labels) if y == cls]
        members = [members[j] for j in rng.permutation(len(members))]
        k = _cut(len(members), ratio)
        train += members[:k]
        val += members[k:]
    # interleave classes so batch order carries no label pattern
    train = [train[j] for j in rng.permutation(len(train))]
    val = [val[j] for j in rng.permutation(len(val))]
    return SplitPlan(tuple(train), tuple(val), seed)


def batch_iter(plan: SplitPlan, batch_size: int = 3, epoch_seed: int = 0) -> list[list]:
    """Train-set batches for one epoch; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng([plan.seed, epoch_seed])
    order = [plan.train_ids[i] for i in rng.permutation(len(plan.train_ids))]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def val_batches(plan: SplitPlan, batch_size: int) -> list[list]:
    """Validation ids in their fixed order, chunked."""
    v = list(plan.val_ids)
    return [v[i:i + batch_size] for i in range(0, len(v), batch_size)]
