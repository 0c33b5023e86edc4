"""
Server round state: feature store, aggregated weights and the broadcast built from them
"""
import logging
from typing import Dict, Optional, Sequence

import numpy as np

import config
from core.errors import ConfigError
from server.aggregator import aggregate_full, aggregate_shells
from server.feature_store import FeatureStore, sample_features, server_ingest
from server.messages import ClientUpdate, ServerBroadcast
from utils.seeding import derive_rng

logger = logging.getLogger(__name__)

IN_MODES = (config.MODE_FEDIN, config.MODE_IGNORE_DIVERGENCE, config.MODE_NO_AGGREGATION)
SHELL_MODES = (config.MODE_FEDIN, config.MODE_IGNORE_DIVERGENCE, config.MODE_NO_IN)


class RoundState:
    """Everything the server keeps between rounds"""

    def __init__(self, seed: int, store: FeatureStore, mode: str,
                 aggregation: str = config.DEFAULT_AGGREGATION):
        if mode not in config.RUN_MODES:
            raise ConfigError(f"unknown run mode {mode!r}", "mode")
        self.seed = seed
        self.store = store
        self.mode = mode
        self.aggregation = aggregation
        self.round = 0
        self.w_e: Optional[Dict[str, np.ndarray]] = None
        self.w_c: Optional[Dict[str, np.ndarray]] = None
        self.w_in: Optional[Dict[str, np.ndarray]] = None

    def build_broadcast(self, sample_size: int) -> ServerBroadcast:
        """(S, w_e, w_c) for the next round; nothing but the round number before the first aggregation"""
        round_num = self.round + 1
        sample = []
        if self.mode in IN_MODES:
            sample = sample_features(self.store, sample_size, derive_rng(self.seed, "server-sample", round_num))
        return ServerBroadcast(
            round=round_num,
            w_e=self.w_e,
            w_c=self.w_c,
            sample=tuple(sample),
            w_in=self.w_in if self.mode == config.MODE_FEDAVG else None,
        )

    def absorb(self, updates: Sequence[ClientUpdate]):
        """Ingest pairs and re-aggregate, always in ascending client id"""
        ordered = sorted(updates, key=lambda u: u.client_id)
        if self.mode in IN_MODES:
            for update in ordered:
                server_ingest(self.store, update)
        if self.mode == config.MODE_FEDAVG:
            self.w_e, self.w_c, self.w_in = aggregate_full(ordered, "samples")
        elif self.mode in SHELL_MODES:
            self.w_e, self.w_c = aggregate_shells(ordered, self.aggregation)
        self.round += 1
        logger.debug(f"Round {self.round}: absorbed {len(ordered)} updates, store holds {len(self.store)} pairs")
