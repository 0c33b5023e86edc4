"""
Client side of FedIN: local training, IN training and the combined update
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

import config
from core.autodiff import backward, cross_entropy_loss, mse_loss
from core.datasets import Dataset, batches
from core.errors import ValidationError
from core.gradients import GradientSet, resolve_analytic, resolve_simplified
from core.optimizer import AdamOptimizer
from core.split_model import SplitModel, forward_full, forward_intermediate
from server.messages import ClientUpdate, FeaturePair, ServerBroadcast
from utils.seeding import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClientSettings:
    """Per-round knobs every client shares"""
    mode: str = config.MODE_FEDIN
    inner_epochs: int = config.DEFAULT_INNER_EPOCHS
    batch_size: int = config.DEFAULT_BATCH_SIZE
    lam: float = config.DEFAULT_LAMBDA
    resolver: str = config.DEFAULT_RESOLVER
    upload_cap: int = config.DEFAULT_UPLOAD_CAP
    exclude_self: bool = config.DEFAULT_EXCLUDE_SELF


def client_local_step(model: SplitModel, inputs: np.ndarray, labels: np.ndarray,
                      client_id: int = 0, round_num: int = 0) -> Tuple[GradientSet, List[FeaturePair], float]:
    """Cross-entropy gradient over all groups plus detached (s_in, s_out) copies; the model is not updated"""
    if len(labels) == 0:
        raise ValidationError("local step needs a non-empty batch")
    capture = forward_full(model, inputs)
    loss = cross_entropy_loss(capture.logits, labels)
    G_local = backward(loss, model.parameter_groups())
    # Same dtype as the model so the sender's own pairs replay exactly
    s_in = capture.s_in.detach().values
    s_out = capture.s_out.detach().values
    pairs = [FeaturePair(s_in[i].copy(), s_out[i].copy(), client_id, round_num) for i in range(len(labels))]
    return G_local, pairs, loss.item()


def client_in_step(model: SplitModel, feature_batch: Sequence[FeaturePair]) -> Tuple[GradientSet, float]:
    """MSE between the intermediate layers' output on s_in^c and s_out^c; only the intermediate group gets gradient"""
    if not feature_batch:
        raise ValidationError("IN step needs a non-empty feature batch")
    arch = model.arch
    for pair in feature_batch:
        if pair.s_in.shape != (arch.feature_dim_in,) or pair.s_out.shape != (arch.feature_dim_out,):
            raise ValidationError(
                f"feature pair widths ({pair.s_in.shape}, {pair.s_out.shape}) do not match "
                f"({arch.feature_dim_in}, {arch.feature_dim_out})")
    s_in = np.stack([p.s_in for p in feature_batch]).astype(model.dtype)
    s_out = np.stack([p.s_out for p in feature_batch]).astype(model.dtype)
    loss = mse_loss(forward_intermediate(model, s_in), s_out)
    G_IN = backward(loss, model.parameter_groups())
    return G_IN, loss.item()


class FederatedClient:
    """One participant: its model, optimizer and private shard"""

    def __init__(self, client_id: int, model: SplitModel, shard: Dataset,
                 learning_rate: float = config.DEFAULT_LEARNING_RATE):
        self.client_id = client_id
        self.model = model
        self.shard = shard
        self.optimizer = AdamOptimizer(model, learning_rate=learning_rate)
        # Separate moments for the IN half of the ignore-divergence step
        self.in_optimizer = AdamOptimizer(model, learning_rate=learning_rate)

    @property
    def variant(self) -> str:
        return self.model.arch.variant

    def _receive(self, broadcast: ServerBroadcast, mode: str):
        if mode == config.MODE_FEDAVG:
            if broadcast.w_e is not None:
                self.model.set_full({"extractor": broadcast.w_e, "intermediate": broadcast.w_in,
                                     "classifier": broadcast.w_c})
                self.optimizer.reset()
                self.in_optimizer.reset()
        elif mode != config.MODE_NO_AGGREGATION and broadcast.w_e is not None:
            self.model.set_shells(broadcast.w_e, broadcast.w_c)
            self.optimizer.reset(("extractor", "classifier"))

    def _resolve(self, G_IN: GradientSet, G_local: GradientSet, settings: ClientSettings) -> GradientSet:
        if settings.resolver == "analytic":
            return resolve_analytic(G_IN, G_local)
        return resolve_simplified(G_IN, G_local, settings.lam)

    def client_round(self, broadcast: ServerBroadcast, settings: ClientSettings, seed: int) -> ClientUpdate:
        """
        One client round: take the broadcast weights, train locally (with IN training when a
        feature sample is available), then return shells, pairs and losses
        """
        round_num = broadcast.round
        mode = settings.mode
        rng = derive_rng(seed, "client", self.client_id, round_num)
        self._receive(broadcast, mode)

        sample = list(broadcast.sample)
        if settings.exclude_self:
            sample = [p for p in sample if p.client_id != self.client_id]
        use_in = mode in (config.MODE_FEDIN, config.MODE_IGNORE_DIVERGENCE, config.MODE_NO_AGGREGATION) and bool(sample)
        collect = mode != config.MODE_FEDAVG

        captured: List[FeaturePair] = []
        local_losses: List[float] = []
        in_losses: List[float] = []
        cursor = 0
        for _ in range(settings.inner_epochs):
            for inputs, labels in batches(self.shard, settings.batch_size, rng):
                G_local, pairs, local_loss = client_local_step(self.model, inputs, labels,
                                                               self.client_id, round_num)
                local_losses.append(local_loss)
                if collect:
                    captured.extend(pairs)
                if not use_in:
                    self.optimizer.step(G_local)
                    continue

                feature_batch = [sample[(cursor + i) % len(sample)]
                                 for i in range(min(settings.batch_size, len(sample)))]
                cursor = (cursor + len(feature_batch)) % len(sample)
                if mode == config.MODE_IGNORE_DIVERGENCE:
                    # Two half-rate steps on the intermediate layers add up to one full step
                    half_rate = self.optimizer.learning_rate / 2
                    self.optimizer.step(G_local, groups=("extractor", "classifier"))
                    self.optimizer.step(G_local, groups=("intermediate",), learning_rate=half_rate)
                    G_IN, in_loss = client_in_step(self.model, feature_batch)
                    self.in_optimizer.step(G_IN, groups=("intermediate",), learning_rate=half_rate)
                else:
                    G_IN, in_loss = client_in_step(self.model, feature_batch)
                    self.optimizer.step(self._resolve(G_IN, G_local, settings))
                in_losses.append(in_loss)

        if len(captured) > settings.upload_cap:
            keep = np.sort(rng.choice(len(captured), settings.upload_cap, replace=False))
            captured = [captured[i] for i in keep]

        w_e, w_c = self.model.shell_arrays()
        update = ClientUpdate(
            client_id=self.client_id,
            w_e=w_e,
            w_c=w_c,
            pairs=tuple(captured),
            local_loss=float(np.mean(local_losses)) if local_losses else float("nan"),
            in_loss=float(np.mean(in_losses)) if in_losses else None,
            num_samples=len(self.shard),
            w_in=self.model.arrays(("intermediate",))["intermediate"] if mode == config.MODE_FEDAVG else None,
        )
        logger.debug(f"Client {self.client_id} ({self.variant}) round {round_num}: "
                     f"local loss {update.local_loss:.4f}, in loss {update.in_loss}, {len(captured)} pairs")
        return update
