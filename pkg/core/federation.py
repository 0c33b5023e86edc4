"""
Round orchestration for FedIN and its ablations
Coordinates broadcast, client training, upload, aggregation and evaluation
"""
import logging
import math
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

import config
from core.client import ClientSettings, FederatedClient
from core.datasets import Dataset
from core.errors import ClientFailure
from core.split_model import class_accuracy, evaluate
from server.coordinator import RoundState
from server.messages import ClientUpdate

logger = logging.getLogger(__name__)


@dataclass
class RoundMetrics:
    """What one round produced"""
    round: int
    per_client_accuracy: List[float]
    mean_accuracy: float
    mean_local_loss: float
    mean_in_loss: Optional[float] = None
    elapsed_seconds: float = 0.0

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization"""
        return {
            'round': self.round,
            'per_client_accuracy': list(self.per_client_accuracy),
            'mean_accuracy': self.mean_accuracy,
            'mean_local_loss': self.mean_local_loss,
            'mean_in_loss': self.mean_in_loss,
            'elapsed_seconds': self.elapsed_seconds,
        }


@dataclass(frozen=True)
class RoundContext:
    """Round-invariant inputs for run_round"""
    settings: ClientSettings
    test_set: Dataset
    sample_size: int = config.DEFAULT_SAMPLE_SIZE
    eval_mode: str = config.DEFAULT_EVAL_MODE


def client_accuracy(client: FederatedClient, test_set: Dataset, eval_mode: str) -> float:
    """Held-out accuracy; 'local' reweights per-class accuracy by the client's own label mix"""
    if eval_mode == "global":
        return evaluate(client.model, test_set)
    per_class = class_accuracy(client.model, test_set)
    histogram = client.shard.class_histogram().astype(np.float64)
    present = ~np.isnan(per_class)
    weights = histogram * present
    if weights.sum() == 0:
        return evaluate(client.model, test_set)
    return float(np.sum(np.nan_to_num(per_class) * weights) / weights.sum())


def _execute_clients(clients: Sequence[FederatedClient], state: RoundState, context: RoundContext,
                     executor: Optional[Executor], round_num: int, broadcast) -> List[ClientUpdate]:
    def run(client: FederatedClient) -> ClientUpdate:
        return client.client_round(broadcast, context.settings, state.seed)

    updates: List[ClientUpdate] = []
    if executor is None:
        for client in clients:
            try:
                updates.append(run(client))
            except Exception as e:
                raise ClientFailure(client.client_id, round_num, e) from e
        return updates

    futures = [(client, executor.submit(run, client)) for client in clients]
    failure = None
    for client, future in futures:
        try:
            updates.append(future.result())
        except Exception as e:
            logger.error(f"Client {client.client_id} failed in round {round_num}: {e}")
            failure = failure or ClientFailure(client.client_id, round_num, e)
    if failure is not None:
        raise failure
    return updates


def run_round(state: RoundState, clients: Sequence[FederatedClient], context: RoundContext,
              executor: Optional[Executor] = None) -> RoundMetrics:
    """
    One communication round: broadcast -> client rounds -> ingest and
    aggregate -> evaluation. Clients may run concurrently; everything that
    touches shared state happens afterwards in ascending client id.
    """
    start = time.perf_counter()
    clients = sorted(clients, key=lambda c: c.client_id)
    broadcast = state.build_broadcast(context.sample_size)
    round_num = broadcast.round
    logger.debug(f"Round {round_num}: broadcasting {len(broadcast.sample)} feature pairs, "
                 f"shells {'present' if broadcast.w_e is not None else 'absent'}")

    updates = _execute_clients(clients, state, context, executor, round_num, broadcast)
    state.absorb(updates)

    if state.mode == config.MODE_FEDAVG:
        for client in clients:
            client.model.set_full({"extractor": state.w_e, "intermediate": state.w_in,
                                   "classifier": state.w_c})

    accuracies = [client_accuracy(client, context.test_set, context.eval_mode) for client in clients]
    in_losses = [u.in_loss for u in updates if u.in_loss is not None]
    metrics = RoundMetrics(
        round=round_num,
        per_client_accuracy=accuracies,
        mean_accuracy=float(np.mean(accuracies)),
        mean_local_loss=float(np.mean([u.local_loss for u in updates])),
        mean_in_loss=float(np.mean(in_losses)) if in_losses else None,
        elapsed_seconds=time.perf_counter() - start,
    )
    logger.info(f"Round {round_num}: mean accuracy {metrics.mean_accuracy:.4f}, "
                f"local loss {metrics.mean_local_loss:.4f}"
                + (f", IN loss {metrics.mean_in_loss:.4f}" if metrics.mean_in_loss is not None else ""))
    return metrics


class FederationRunner:
    """Drives rounds over a fixed client population"""

    def __init__(self, state: RoundState, clients: Sequence[FederatedClient], context: RoundContext,
                 threads: int = 1, progress_callback: Optional[Callable[[RoundMetrics], None]] = None):
        self.state = state
        self.clients = sorted(clients, key=lambda c: c.client_id)
        self.context = context
        self.threads = threads
        self.progress_callback = progress_callback
        self.history: List[RoundMetrics] = []

    def set_learning_rate(self, learning_rate: float):
        for client in self.clients:
            client.optimizer.set_learning_rate(learning_rate)

    def run(self, num_rounds: int, learning_rate_for: Callable[[int], float] = None) -> List[RoundMetrics]:
        executor = ThreadPoolExecutor(max_workers=self.threads) if self.threads > 1 else None
        try:
            for _ in range(num_rounds):
                next_round = self.state.round + 1
                if learning_rate_for is not None:
                    self.set_learning_rate(learning_rate_for(next_round))
                metrics = run_round(self.state, self.clients, self.context, executor)
                self.history.append(metrics)
                if self.progress_callback:
                    self.progress_callback(metrics)
        finally:
            if executor is not None:
                executor.shutdown(wait=True)
        return self.history

    def best_round(self) -> Optional[RoundMetrics]:
        finite = [m for m in self.history if not math.isnan(m.mean_accuracy)]
        return max(finite, key=lambda m: (m.mean_accuracy, -m.round)) if finite else None
