"""
Experiment runner
Builds data, clients and server state from an ExperimentConfig and drives the rounds
"""
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

import config
from core.checkpoint import checkpoint_digest, save_checkpoint
from core.client import FederatedClient
from core.datasets import Dataset, load_idx, synth_blobs, train_test_split
from core.federation import FederationRunner, RoundContext, RoundMetrics
from core.partition import class_histograms, partition
from core.split_model import build_arch, build_model
from database.operations import DatabaseOperations
from harness.experiment_config import ExperimentConfig, serialize_config
from harness.metrics import MetricsWriter
from server.coordinator import RoundState
from server.feature_store import FeatureStore

logger = logging.getLogger(__name__)


@dataclass
class ExperimentSummary:
    """Outcome of run_experiment"""
    run_id: Optional[int]
    csv_path: Path
    final_mean_accuracy: float
    best_round: int
    best_accuracy: float
    history: List[RoundMetrics] = field(default_factory=list)
    checkpoints: Dict[int, Tuple[Path, str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Convert to dictionary for serialization"""
        return {
            'run_id': self.run_id,
            'csv_path': str(self.csv_path),
            'final_mean_accuracy': self.final_mean_accuracy,
            'best_round': self.best_round,
            'best_accuracy': self.best_accuracy,
            'rounds': len(self.history),
            'checkpoints': {k: {'path': str(p), 'sha256': d} for k, (p, d) in self.checkpoints.items()},
        }


def load_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """Train and held-out sets; IDX images are flattened for MLP models"""
    ds = cfg.dataset
    if ds.kind == "synth":
        full = synth_blobs(ds.num_samples + ds.test_samples, ds.num_classes, ds.dim, ds.spread, cfg.seed)
        return train_test_split(full, ds.test_samples, cfg.seed)

    train = load_idx(ds.train_images, ds.train_labels)
    test = load_idx(ds.test_images, ds.test_labels)
    num_classes = max(train.num_classes, test.num_classes)
    train = Dataset(train.inputs, train.labels, num_classes)
    test = Dataset(test.inputs, test.labels, num_classes)
    if cfg.model.kind == "mlp":
        train, test = train.flattened(), test.flattened()
    return train, test


def build_clients(cfg: ExperimentConfig, train: Dataset) -> List[FederatedClient]:
    """One client per shard; FedAvg runs force the homogeneous variant"""
    shards = partition(train, cfg.partition_spec())
    histograms = class_histograms(train, shards)
    dtype = np.float64 if cfg.model.dtype == "float64" else np.float32
    clients = []
    for client_id, indices in enumerate(shards):
        variant = config.FEDAVG_VARIANT if cfg.mode == config.MODE_FEDAVG else cfg.variant_assignment[client_id]
        arch = build_arch(variant, train.sample_shape, train.num_classes, kind=cfg.model.kind,
                          feature_dim_in=cfg.model.feature_dim_in, feature_dim_out=cfg.model.feature_dim_out,
                          hidden_dim=cfg.model.hidden_dim)
        model = build_model(arch, cfg.seed, dtype=dtype)
        clients.append(FederatedClient(client_id, model, train.subset(indices), cfg.learning_rate))
        logger.debug(f"Client {client_id}: variant {variant}, {len(indices)} samples, "
                     f"labels {histograms[client_id].tolist()}")
    return clients


def _prepare_state(cfg: ExperimentConfig, clients: List[FederatedClient]) -> RoundState:
    arch = clients[0].model.arch
    store = FeatureStore(cfg.store_capacity, arch.feature_dim_in, arch.feature_dim_out)
    return RoundState(cfg.seed, store, cfg.mode, cfg.aggregation)


def run_experiment(cfg: ExperimentConfig, out_csv=None, db_path=None, checkpoint_dir=None,
                   threads: Optional[int] = None,
                   progress_callback: Optional[Callable[[RoundMetrics], None]] = None) -> ExperimentSummary:
    """
    Run every round of an experiment
    Writes one CSV row per round, the final client checkpoints, and a run
    registry entry with wall-clock timings
    """
    out_csv = Path(out_csv) if out_csv else config.RESULTS_PATH / f"{cfg.run_name}.csv"
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else out_csv.parent / "checkpoints"
    threads = threads if threads is not None else config.thread_count()
    logger.info(f"Starting {cfg.run_name}: mode {cfg.mode}, {cfg.partition.num_clients} clients, "
                f"{cfg.num_rounds} rounds, {threads} thread(s)")

    with DatabaseOperations(db_path) as db:
        run = db.create_run({
            'run_name': cfg.run_name,
            'mode': cfg.mode,
            'seed': cfg.seed,
            'num_clients': cfg.partition.num_clients,
            'num_rounds': cfg.num_rounds,
            'config_json': json.dumps(serialize_config(cfg), sort_keys=True),
            'config_hash': cfg.config_hash(),
            'csv_path': str(out_csv),
        })
        start = time.perf_counter()
        try:
            train, test = load_datasets(cfg)
            clients = build_clients(cfg, train)
            state = _prepare_state(cfg, clients)
            context = RoundContext(cfg.client_settings(), test, cfg.sample_size, cfg.eval_mode)

            with MetricsWriter(out_csv, len(clients), wallclock=cfg.csv_wallclock) as writer:
                def on_round(metrics: RoundMetrics):
                    writer.write(metrics)
                    db.add_round(run.id, {
                        'round': metrics.round,
                        'mean_accuracy': metrics.mean_accuracy,
                        'mean_local_loss': metrics.mean_local_loss,
                        'mean_in_loss': metrics.mean_in_loss,
                        'elapsed_seconds': metrics.elapsed_seconds,
                    })
                    if progress_callback:
                        progress_callback(metrics)

                runner = FederationRunner(state, clients, context, threads=threads, progress_callback=on_round)
                history = runner.run(cfg.num_rounds, cfg.learning_rate_for)

            checkpoints: Dict[int, Tuple[Path, str]] = {}
            for client in clients:
                path = save_checkpoint(client.model, checkpoint_dir / f"client_{client.client_id}.ckpt")
                digest = checkpoint_digest(path)
                checkpoints[client.client_id] = (path, digest)
                db.add_checkpoint(run.id, {
                    'client_id': client.client_id,
                    'variant': client.variant,
                    'path': str(path),
                    'sha256': digest,
                })

        except Exception as e:
            logger.error(f"Run {cfg.run_name} failed: {e}")
            db.fail_run(run.id, str(e))
            raise

        best = runner.best_round()
        summary = ExperimentSummary(
            run_id=run.id,
            csv_path=out_csv,
            final_mean_accuracy=history[-1].mean_accuracy,
            best_round=best.round if best else history[-1].round,
            best_accuracy=best.mean_accuracy if best else history[-1].mean_accuracy,
            history=history,
            checkpoints=checkpoints,
        )
        db.complete_run(run.id, {
            'duration_seconds': time.perf_counter() - start,
            'final_mean_accuracy': summary.final_mean_accuracy,
            'best_round': summary.best_round,
            'best_accuracy': summary.best_accuracy,
        })

    logger.info(f"Finished {cfg.run_name}: final mean accuracy {summary.final_mean_accuracy:.4f}, "
                f"best round {summary.best_round} ({summary.best_accuracy:.4f})")
    return summary
