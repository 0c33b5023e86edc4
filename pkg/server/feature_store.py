"""
Server-side feature store
Bounded per-client queues of feature pairs with oldest-first eviction
"""
import logging
from collections import deque
from typing import Deque, Dict, List

import numpy as np

from core.errors import ValidationError
from server.messages import ClientUpdate, FeaturePair

logger = logging.getLogger(__name__)


class FeatureStore:
    """The server dataset S that broadcast samples are drawn from"""

    def __init__(self, capacity_per_client: int, feature_dim_in: int, feature_dim_out: int):
        if capacity_per_client < 1:
            raise ValidationError(f"store capacity must be positive, got {capacity_per_client}")
        self.capacity_per_client = capacity_per_client
        self.feature_dim_in = feature_dim_in
        self.feature_dim_out = feature_dim_out
        self.entries: Dict[int, Deque[FeaturePair]] = {}

    def __len__(self):
        return sum(len(queue) for queue in self.entries.values())

    def count(self, client_id: int) -> int:
        return len(self.entries.get(client_id, ()))

    def pairs(self) -> List[FeaturePair]:
        """Every stored pair, ascending client id, oldest first"""
        return [pair for client_id in sorted(self.entries) for pair in self.entries[client_id]]

    def validate(self, pair: FeaturePair):
        if pair.s_in.shape != (self.feature_dim_in,) or pair.s_out.shape != (self.feature_dim_out,):
            raise ValidationError(
                f"feature pair from client {pair.client_id} has widths "
                f"({pair.s_in.shape}, {pair.s_out.shape}), expected ({self.feature_dim_in}, {self.feature_dim_out})")

    def append(self, client_id: int, pair: FeaturePair):
        queue = self.entries.setdefault(client_id, deque(maxlen=self.capacity_per_client))
        queue.append(pair)


def server_ingest(store: FeatureStore, update: ClientUpdate):
    """Append an update's pairs to its sender's queue, evicting the oldest beyond capacity"""
    try:
        for pair in update.pairs:
            store.validate(pair)
    except ValidationError as e:
        logger.warning(f"Rejected {len(update.pairs)} pairs from client {update.client_id}: {e}")
        raise
    for pair in update.pairs:
        store.append(update.client_id, pair)
    logger.debug(f"Stored {len(update.pairs)} pairs from client {update.client_id} "
                 f"({store.count(update.client_id)}/{store.capacity_per_client})")


def sample_features(store: FeatureStore, size: int, rng: np.random.Generator) -> List[FeaturePair]:
    """Uniform sample without replacement; everything (shuffled) when size exceeds the store"""
    if size < 0:
        raise ValidationError(f"sample size must be non-negative, got {size}")
    available = store.pairs()
    if not available or size == 0:
        return []
    order = rng.permutation(len(available))[:size]
    return [available[i] for i in order]
