"""
Experiment configuration
JSON files parsed into frozen dataclasses, defaults taken from config.py
"""
import dataclasses
import hashlib
import json
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import config
from core.client import ClientSettings
from core.errors import ConfigError, ValidationError
from core.partition import PARTITION_KINDS, PartitionSpec

logger = logging.getLogger(__name__)

DATASET_KINDS = ("synth", "idx")
MODEL_KINDS = ("mlp", "conv")
DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class DatasetConfig:
    """Where the samples come from"""
    kind: str = "synth"
    # synth
    num_samples: int = config.DEFAULT_SYNTH_SAMPLES
    test_samples: int = config.DEFAULT_SYNTH_TEST_SAMPLES
    num_classes: int = config.DEFAULT_SYNTH_CLASSES
    dim: int = config.DEFAULT_SYNTH_DIM
    spread: float = config.DEFAULT_SYNTH_SPREAD
    # idx
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None


@dataclass(frozen=True)
class ModelConfig:
    kind: str = config.DEFAULT_MODEL_KIND
    feature_dim_in: int = config.DEFAULT_FEATURE_DIM_IN
    feature_dim_out: int = config.DEFAULT_FEATURE_DIM_OUT
    hidden_dim: int = config.DEFAULT_HIDDEN_DIM
    dtype: str = "float32"


@dataclass(frozen=True)
class PartitionConfig:
    """Partition settings; seed falls back to the experiment seed"""
    kind: str = config.DEFAULT_PARTITION_KIND
    num_clients: int = config.DEFAULT_NUM_CLIENTS
    alpha: float = config.DEFAULT_DIRICHLET_ALPHA
    seed: Optional[int] = None


@dataclass(frozen=True)
class LearningRateDrop:
    """Switch to `learning_rate` from `round` onwards"""
    round: int
    learning_rate: float


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully specified"""
    mode: str
    dataset: DatasetConfig
    name: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    num_rounds: int = config.DEFAULT_NUM_ROUNDS
    inner_epochs: int = config.DEFAULT_INNER_EPOCHS
    batch_size: int = config.DEFAULT_BATCH_SIZE
    lam: float = field(default=config.DEFAULT_LAMBDA, metadata={"key": "lambda"})
    resolver: str = config.DEFAULT_RESOLVER
    sample_size: int = config.DEFAULT_SAMPLE_SIZE
    store_capacity: int = config.DEFAULT_STORE_CAPACITY
    upload_cap: int = config.DEFAULT_UPLOAD_CAP
    exclude_self: bool = config.DEFAULT_EXCLUDE_SELF
    aggregation: str = config.DEFAULT_AGGREGATION
    eval_mode: str = config.DEFAULT_EVAL_MODE
    learning_rate: float = config.DEFAULT_LEARNING_RATE
    lr_drop: Optional[LearningRateDrop] = None
    seed: int = config.DEFAULT_SEED
    variant_assignment: Dict[int, str] = field(default_factory=dict)
    csv_wallclock: bool = config.CSV_WALLCLOCK

    def __post_init__(self):
        if not self.variant_assignment:
            object.__setattr__(self, "variant_assignment",
                               config.default_variant_assignment(self.partition.num_clients))
        _validate(self)

    @property
    def run_name(self) -> str:
        return self.name or f"{self.mode}-seed{self.seed}"

    def partition_spec(self) -> PartitionSpec:
        seed = self.partition.seed if self.partition.seed is not None else self.seed
        return PartitionSpec(self.partition.kind, self.partition.num_clients, self.partition.alpha, seed)

    def client_settings(self) -> ClientSettings:
        return ClientSettings(
            mode=self.mode,
            inner_epochs=self.inner_epochs,
            batch_size=self.batch_size,
            lam=self.lam,
            resolver=self.resolver,
            upload_cap=self.upload_cap,
            exclude_self=self.exclude_self,
        )

    def learning_rate_for(self, round_num: int) -> float:
        if self.lr_drop is not None and round_num >= self.lr_drop.round:
            return self.lr_drop.learning_rate
        return self.learning_rate

    def config_hash(self) -> str:
        """SHA256 of the canonical JSON form"""
        canonical = json.dumps(serialize_config(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check(condition: bool, key_path: str, message: str):
    if not condition:
        raise ConfigError(message, key_path)


def _check_choice(value: str, choices, key_path: str):
    _check(value in choices, key_path, f"{value!r} is not one of {', '.join(choices)}")


def _validate(cfg: ExperimentConfig):
    _check_choice(cfg.mode, config.RUN_MODES, "mode")
    _check_choice(cfg.dataset.kind, DATASET_KINDS, "dataset.kind")
    if cfg.dataset.kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            _check(getattr(cfg.dataset, key) is not None, f"dataset.{key}", "required for idx datasets")
    else:
        _check(cfg.dataset.num_samples >= 1, "dataset.num_samples", "must be positive")
        _check(cfg.dataset.test_samples >= 1, "dataset.test_samples", "must be positive")
        _check(cfg.dataset.num_classes >= 2, "dataset.num_classes", "must be at least 2")
        _check(cfg.dataset.dim >= 1, "dataset.dim", "must be positive")
        _check(cfg.dataset.spread >= 0, "dataset.spread", "must be non-negative")
    _check_choice(cfg.model.kind, MODEL_KINDS, "model.kind")
    _check_choice(cfg.model.dtype, DTYPES, "model.dtype")
    for key in ("feature_dim_in", "feature_dim_out", "hidden_dim"):
        _check(getattr(cfg.model, key) >= 1, f"model.{key}", "must be positive")
    _check_choice(cfg.partition.kind, PARTITION_KINDS, "partition.kind")
    _check(cfg.partition.num_clients >= 1, "partition.num_clients", "must be positive")
    _check(cfg.partition.alpha > 0, "partition.alpha", "must be positive")
    _check(cfg.num_rounds >= 1, "num_rounds", "must be at least 1")
    _check(cfg.inner_epochs >= 0, "inner_epochs", "must be non-negative")
    _check(cfg.batch_size >= 1, "batch_size", "must be at least 1")
    _check(cfg.lam >= 0, "lambda", "must be non-negative")
    _check_choice(cfg.resolver, config.RESOLVERS, "resolver")
    _check(cfg.sample_size >= 0, "sample_size", "must be non-negative")
    _check(cfg.store_capacity >= 1, "store_capacity", "must be positive")
    _check(cfg.upload_cap >= 0, "upload_cap", "must be non-negative")
    _check_choice(cfg.aggregation, config.AGGREGATIONS, "aggregation")
    _check_choice(cfg.eval_mode, config.EVAL_MODES, "eval_mode")
    _check(cfg.learning_rate > 0, "learning_rate", "must be positive")
    if cfg.lr_drop is not None:
        _check(cfg.lr_drop.round >= 1, "lr_drop.round", "must be at least 1")
        _check(cfg.lr_drop.learning_rate > 0, "lr_drop.learning_rate", "must be positive")

    expected = set(range(cfg.partition.num_clients))
    missing = sorted(expected - set(cfg.variant_assignment))
    extra = sorted(set(cfg.variant_assignment) - expected)
    _check(not missing, "variant_assignment", f"no variant for clients {missing}")
    _check(not extra, "variant_assignment", f"clients {extra} are outside 0..{cfg.partition.num_clients - 1}")
    for client_id, variant in cfg.variant_assignment.items():
        _check_choice(variant, config.VARIANTS, f"variant_assignment.{client_id}")


def _json_key(f: dataclasses.Field) -> str:
    return f.metadata.get("key", f.name)


def _join(prefix: str, key: str) -> str:
    return f"{prefix}.{key}" if prefix else key


def _convert(value: Any, hint, key_path: str) -> Any:
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        options = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, options[0], key_path)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, key_path)
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {type(value).__name__}", key_path)
        converted = {}
        for raw_key, raw_value in value.items():
            try:
                client_id = int(raw_key)
            except (TypeError, ValueError):
                raise ConfigError("keys must be client ids", _join(key_path, str(raw_key)))
            converted[client_id] = _convert(raw_value, str, _join(key_path, str(raw_key)))
        return converted
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key_path)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key_path)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key_path)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key_path)
        return value
    raise ConfigError(f"unsupported field type {hint}", key_path)


def _build(cls, data: Any, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", prefix or None)
    hints = typing.get_type_hints(cls)
    fields = {_json_key(f): f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError("unknown key", _join(prefix, unknown[0]))

    kwargs = {}
    for key, f in fields.items():
        key_path = _join(prefix, key)
        if key not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError("missing required key", key_path)
            continue
        kwargs[f.name] = _convert(data[key], hints[f.name], key_path)
    try:
        return cls(**kwargs)
    except ValidationError as e:
        raise ConfigError(str(e), prefix or None) from e


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed JSON, filling defaults"""
    return _build(ExperimentConfig, data)


def parse_config(path) -> ExperimentConfig:
    """Read a JSON experiment file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    cfg = config_from_dict(data)
    logger.debug(f"Parsed config {path}: mode={cfg.mode}, rounds={cfg.num_rounds}, seed={cfg.seed}")
    return cfg


def _serialize(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {_json_key(f): _serialize(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _serialize(v) for k, v in sorted(obj.items())}
    return obj


def serialize_config(cfg: ExperimentConfig) -> Dict[str, Any]:
    """JSON-ready form; config_from_dict(serialize_config(cfg)) == cfg"""
    return _serialize(cfg)


def write_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(serialize_config(cfg), indent=2) + "\n", encoding="utf-8")
    return path
