"""
Federated partitioning of a dataset into iid or Dirichlet label-skewed shards
"""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

import config
from core.datasets import Dataset
from core.errors import ValidationError

logger = logging.getLogger(__name__)

PARTITION_KINDS = ("iid", "dirichlet")


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across K clients"""
    kind: str = config.DEFAULT_PARTITION_KIND
    num_clients: int = config.DEFAULT_NUM_CLIENTS
    alpha: float = config.DEFAULT_DIRICHLET_ALPHA
    seed: int = config.DEFAULT_SEED

    def __post_init__(self):
        if self.kind not in PARTITION_KINDS:
            raise ValidationError(f"partition kind must be one of {PARTITION_KINDS}, got {self.kind!r}")
        if self.num_clients < 1:
            raise ValidationError(f"num_clients must be positive, got {self.num_clients}")
        if self.kind == "dirichlet" and not self.alpha > 0:
            raise ValidationError(f"dirichlet alpha must be positive, got {self.alpha}")


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to `total`, leftovers going to the largest fractional parts"""
    proportions = np.asarray(proportions, dtype=np.float64)
    raw = proportions / proportions.sum() * total
    counts = np.floor(raw).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts


def _repair_empty(shards: List[List[int]]):
    for client_id, shard in enumerate(shards):
        if shard:
            continue
        donor = max(range(len(shards)), key=lambda k: (len(shards[k]), -k))
        shard.append(shards[donor].pop())
        logger.warning(f"Client {client_id} received no samples; moved one from client {donor}")


def partition(dataset: Dataset, spec: PartitionSpec) -> List[List[int]]:
    """
    Split sample indices into spec.num_clients disjoint shards covering the dataset
    iid: shuffle then near-even split. dirichlet: for every class draw client
    proportions from Dirichlet(alpha * 1_K) and hand out that class's samples
    accordingly
    """
    n = len(dataset)
    k = spec.num_clients
    if k > n:
        raise ValidationError(f"cannot split {n} samples across {k} clients")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFF, 3]))

    if spec.kind == "iid":
        order = rng.permutation(n)
        return [chunk.tolist() for chunk in np.array_split(order, k)]

    shards: List[List[int]] = [[] for _ in range(k)]
    for label in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == label)
        if members.size == 0:
            continue
        members = rng.permutation(members)
        proportions = rng.dirichlet(np.full(k, spec.alpha))
        if not np.all(np.isfinite(proportions)) or proportions.sum() <= 0:
            proportions = np.full(k, 1.0 / k)
        counts = largest_remainder(proportions, members.size)
        start = 0
        for client_id, count in enumerate(counts):
            shards[client_id].extend(members[start:start + count].tolist())
            start += count

    _repair_empty(shards)
    return shards


def class_histograms(dataset: Dataset, shards: List[List[int]]) -> np.ndarray:
    """[K, C] label counts per shard"""
    return np.stack([
        np.bincount(dataset.labels[np.asarray(shard, dtype=np.int64)], minlength=dataset.num_classes)
        for shard in shards
    ])
