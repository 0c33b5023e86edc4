"""
Split client models for FedIN
Extractor -> intermediate layers -> classifier, with feature capture
"""
import logging
import zlib
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

import config
from core.autodiff import Tensor, affine, conv2d, flatten, relu, unflatten
from core.errors import ConfigError, DimensionError, ValidationError
from core.gradients import GROUPS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockSpec:
    """One trainable layer: affine (features) or conv (channels), always followed by ReLU except in the classifier"""
    kind: str
    fan_in: int
    fan_out: int
    stride: int = 1
    kernel: int = 0

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind == "conv":
            return (self.fan_out, self.fan_in, self.kernel, self.kernel)
        return (self.fan_in, self.fan_out)

    @property
    def init_fan_in(self) -> int:
        return self.fan_in * self.kernel * self.kernel if self.kind == "conv" else self.fan_in


@dataclass(frozen=True)
class ArchSpec:
    """Architecture of one variant; shells are shared, the middle is not"""
    variant: str
    kind: str
    input_shape: Tuple[int, ...]
    extractor: BlockSpec
    intermediate: Tuple[BlockSpec, ...]
    classifier: BlockSpec
    feature_dim_in: int
    feature_dim_out: int
    num_classes: int
    feature_map_in: Optional[Tuple[int, int, int]] = None

    @property
    def depth(self) -> int:
        return len(self.intermediate)


@dataclass
class ForwardCapture:
    """Outputs of one full forward pass: logits plus the features around the intermediate layers"""
    logits: Tensor
    s_in: Tensor
    s_out: Tensor


def _conv_out(size: int, stride: int) -> int:
    k = config.CONV_KERNEL_SIZE
    return (size + 2 * (k // 2) - k) // stride + 1


def build_arch(variant: str, input_shape: Sequence[int], num_classes: int,
               kind: str = config.DEFAULT_MODEL_KIND,
               feature_dim_in: int = config.DEFAULT_FEATURE_DIM_IN,
               feature_dim_out: int = config.DEFAULT_FEATURE_DIM_OUT,
               hidden_dim: int = config.DEFAULT_HIDDEN_DIM) -> ArchSpec:
    """Describe a variant; depths follow config.VARIANT_DEPTHS"""
    if variant not in config.VARIANT_DEPTHS:
        raise ConfigError(f"unknown model variant {variant!r}, expected one of {', '.join(config.VARIANTS)}")
    depth = config.VARIANT_DEPTHS[variant]
    input_shape = tuple(int(d) for d in input_shape)

    if kind == "mlp":
        if len(input_shape) != 1:
            raise ConfigError(f"mlp models need flat inputs, got sample shape {list(input_shape)}")
        widths = [feature_dim_in] + [hidden_dim] * (depth - 1) + [feature_dim_out]
        return ArchSpec(
            variant=variant,
            kind=kind,
            input_shape=input_shape,
            extractor=BlockSpec("affine", input_shape[0], feature_dim_in),
            intermediate=tuple(BlockSpec("affine", widths[i], widths[i + 1]) for i in range(depth)),
            classifier=BlockSpec("affine", feature_dim_out, num_classes),
            feature_dim_in=feature_dim_in,
            feature_dim_out=feature_dim_out,
            num_classes=num_classes,
        )

    if kind == "conv":
        if len(input_shape) != 3:
            raise ConfigError(f"conv models need [C, H, W] inputs, got sample shape {list(input_shape)}")
        channels, height, width = input_shape
        k = config.CONV_KERNEL_SIZE
        c1, c2 = config.CONV_EXTRACTOR_CHANNELS, config.CONV_INTERMEDIATE_CHANNELS
        h1, w1 = _conv_out(height, 2), _conv_out(width, 2)
        h2, w2 = _conv_out(h1, 2), _conv_out(w1, 2)
        blocks = [BlockSpec("conv", c1, c2, stride=2, kernel=k)]
        blocks += [BlockSpec("conv", c2, c2, stride=1, kernel=k) for _ in range(depth - 1)]
        return ArchSpec(
            variant=variant,
            kind=kind,
            input_shape=input_shape,
            extractor=BlockSpec("conv", channels, c1, stride=2, kernel=k),
            intermediate=tuple(blocks),
            classifier=BlockSpec("affine", c2 * h2 * w2, num_classes),
            feature_dim_in=c1 * h1 * w1,
            feature_dim_out=c2 * h2 * w2,
            num_classes=num_classes,
            feature_map_in=(c1, h1, w1),
        )

    raise ConfigError(f"unknown model kind {kind!r}, expected 'mlp' or 'conv'")


def _param_stream(seed: int, scope: str, name: str) -> np.random.Generator:
    entropy = [seed & 0xFFFFFFFF, zlib.crc32(scope.encode()), zlib.crc32(name.encode())]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _init_block(block: BlockSpec, prefix: str, seed: int, scope: str, dtype) -> Dict[str, Tensor]:
    weight_name, bias_name = f"{prefix}.weight", f"{prefix}.bias"
    bound = np.sqrt(6.0 / block.init_fan_in)
    weight = _param_stream(seed, scope, weight_name).uniform(-bound, bound, size=block.weight_shape)
    return {
        weight_name: Tensor(weight.astype(dtype), requires_grad=True, name=weight_name),
        bias_name: Tensor(np.zeros(block.fan_out, dtype=dtype), requires_grad=True, name=bias_name),
    }


class SplitModel:
    """Client model w_k = (w_e,k, w_IN,k, w_c,k)"""

    def __init__(self, arch: ArchSpec, extractor: Dict[str, Tensor],
                 intermediate: Dict[str, Tensor], classifier: Dict[str, Tensor]):
        self.arch = arch
        self.extractor = extractor
        self.intermediate = intermediate
        self.classifier = classifier

    @property
    def dtype(self):
        return next(iter(self.extractor.values())).dtype

    def parameter_groups(self) -> Dict[str, Dict[str, Tensor]]:
        return {
            "extractor": self.extractor,
            "intermediate": self.intermediate,
            "classifier": self.classifier,
        }

    def arrays(self, groups: Sequence[str] = GROUPS) -> Dict[str, Dict[str, np.ndarray]]:
        """Copies of parameter values, per group"""
        param_groups = self.parameter_groups()
        return {g: {name: p.values.copy() for name, p in param_groups[g].items()} for g in groups}

    def load_arrays(self, arrays: Dict[str, Dict[str, np.ndarray]]):
        """Overwrite parameters of the groups present in `arrays`"""
        param_groups = self.parameter_groups()
        for group, values in arrays.items():
            params = param_groups[group]
            if set(values) != set(params):
                raise DimensionError(f"{group} parameters {sorted(values)} do not match model {sorted(params)}")
            for name, array in values.items():
                if tuple(array.shape) != params[name].shape:
                    raise DimensionError(f"{name}: shape {list(array.shape)} != {list(params[name].shape)}")
                params[name].values = np.array(array, dtype=self.dtype)

    def shell_arrays(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        arrays = self.arrays(("extractor", "classifier"))
        return arrays["extractor"], arrays["classifier"]

    def set_shells(self, w_e: Dict[str, np.ndarray], w_c: Dict[str, np.ndarray]):
        self.load_arrays({"extractor": w_e, "classifier": w_c})

    def full_arrays(self) -> Dict[str, Dict[str, np.ndarray]]:
        return self.arrays(GROUPS)

    def set_full(self, arrays: Dict[str, Dict[str, np.ndarray]]):
        """Overwrite all three groups (FedAvg broadcast)"""
        missing = [g for g in GROUPS if g not in arrays]
        if missing:
            raise DimensionError(f"full weights are missing groups {missing}")
        self.load_arrays(arrays)

    def run_extractor(self, x: Tensor) -> Tensor:
        w, b = self.extractor["extractor.weight"], self.extractor["extractor.bias"]
        if self.arch.kind == "conv":
            return flatten(relu(conv2d(x, w, b, stride=self.arch.extractor.stride,
                                       padding=self.arch.extractor.kernel // 2)))
        return relu(affine(x, w, b))

    def run_intermediate(self, s_in: Tensor) -> Tensor:
        h = unflatten(s_in, self.arch.feature_map_in) if self.arch.kind == "conv" else s_in
        for index, block in enumerate(self.arch.intermediate):
            w = self.intermediate[f"intermediate.{index}.weight"]
            b = self.intermediate[f"intermediate.{index}.bias"]
            if block.kind == "conv":
                h = relu(conv2d(h, w, b, stride=block.stride, padding=block.kernel // 2))
            else:
                h = relu(affine(h, w, b))
        return flatten(h) if self.arch.kind == "conv" else h

    def run_classifier(self, s_out: Tensor) -> Tensor:
        return affine(s_out, self.classifier["classifier.weight"], self.classifier["classifier.bias"])

    def __repr__(self):
        return f"SplitModel(variant={self.arch.variant}, kind={self.arch.kind}, depth={self.arch.depth}, dtype={self.dtype})"


def build_model(arch: ArchSpec, seed: int, dtype=np.float32) -> SplitModel:
    """
    Initialise parameters with fan-in scaled uniform weights and zero biases
    Shell parameters are drawn from a stream keyed by (seed, name) so all
    variants start from the same extractor and classifier; intermediate
    parameters are keyed by (seed, variant, name)
    """
    if arch.variant not in config.VARIANT_DEPTHS:
        raise ConfigError(f"unknown model variant {arch.variant!r}")
    extractor = _init_block(arch.extractor, "extractor", seed, "shell", dtype)
    classifier = _init_block(arch.classifier, "classifier", seed, "shell", dtype)
    intermediate: Dict[str, Tensor] = {}
    for index, block in enumerate(arch.intermediate):
        intermediate.update(_init_block(block, f"intermediate.{index}", seed, arch.variant, dtype))
    logger.debug(f"Built variant {arch.variant} ({arch.kind}) with {arch.depth} intermediate blocks")
    return SplitModel(arch, extractor, intermediate, classifier)


def _input_tensor(model: SplitModel, x) -> Tensor:
    values = x.values if isinstance(x, Tensor) else np.asarray(x)
    if values.ndim < 1 or tuple(values.shape[1:]) != model.arch.input_shape:
        raise DimensionError(
            f"input shape {list(values.shape)} does not match [B, {', '.join(map(str, model.arch.input_shape))}]")
    return Tensor(values.astype(model.dtype, copy=False))


def forward_full(model: SplitModel, x) -> ForwardCapture:
    """Full forward pass keeping s_in and s_out on the graph"""
    s_in = model.run_extractor(_input_tensor(model, x))
    s_out = model.run_intermediate(s_in)
    logits = model.run_classifier(s_out)
    return ForwardCapture(logits=logits, s_in=s_in, s_out=s_out)


def forward_intermediate(model: SplitModel, s_in) -> Tensor:
    """Intermediate layers alone, on a fresh graph (the IN training path)"""
    values = s_in.values if isinstance(s_in, Tensor) else np.asarray(s_in)
    if values.ndim != 2 or values.shape[1] != model.arch.feature_dim_in:
        raise DimensionError(
            f"feature input shape {list(values.shape)} does not match [B, {model.arch.feature_dim_in}]")
    return model.run_intermediate(Tensor(values.astype(model.dtype, copy=False)))


def predict(model: SplitModel, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per sample; ties go to the lowest class index"""
    predictions = []
    for start in range(0, len(inputs), batch_size):
        logits = forward_full(model, inputs[start:start + batch_size]).logits.values
        predictions.append(np.argmax(logits, axis=1))
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def evaluate(model: SplitModel, dataset) -> float:
    """Fraction of samples whose argmax logit equals the label"""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, dataset.inputs) == dataset.labels))


def class_accuracy(model: SplitModel, dataset) -> np.ndarray:
    """Per-class accuracy; classes absent from the dataset score NaN"""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    correct = predict(model, dataset.inputs) == dataset.labels
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    hits = np.bincount(dataset.labels, weights=correct, minlength=dataset.num_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
