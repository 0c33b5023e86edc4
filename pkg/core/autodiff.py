"""
Reverse-mode automatic differentiation for the FedIN simulator
Dense numpy tensors, a recorded compute graph and the handful of ops the split models need
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import ContractError, DimensionError, ValidationError
from core.gradients import GradientSet

logger = logging.getLogger(__name__)

FLOAT_DTYPES = (np.float32, np.float64)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense numeric array with an optional gradient slot"""

    __slots__ = ("values", "grad", "requires_grad", "name", "graph", "node_id")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None):
        array = np.asarray(values, dtype=dtype)
        if array.dtype not in FLOAT_DTYPES:
            array = array.astype(np.float32)
        self.values = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.graph: Optional["ComputeGraph"] = None
        self.node_id: Optional[int] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Copy of the values with no graph link"""
        return Tensor(self.values.copy(), name=self.name)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    """One recorded op: kind, ids of its inputs and the tensor it produced"""
    op: str
    inputs: Tuple[int, ...]
    output: Tensor
    backward: Optional[BackwardFn] = None


class ComputeGraph:
    """Tape of ops in execution order, so every input precedes its consumer"""

    def __init__(self):
        self.nodes: List[Node] = []
        self._leaf_ids: Dict[int, int] = {}

    def __len__(self):
        return len(self.nodes)

    def node_of(self, tensor: Tensor) -> int:
        """Node id of a tensor, registering it as a leaf on first use"""
        if tensor.graph is self:
            return tensor.node_id
        if tensor.graph is not None:
            raise ContractError("tensor was produced by a different compute graph")
        key = id(tensor)
        if key not in self._leaf_ids:
            self._leaf_ids[key] = len(self.nodes)
            self.nodes.append(Node("leaf", (), tensor))
        return self._leaf_ids[key]

    def leaf_id(self, tensor: Tensor) -> Optional[int]:
        return self._leaf_ids.get(id(tensor))

    def record(self, op: str, inputs: Sequence[Tensor], values: np.ndarray,
               backward: BackwardFn) -> Tensor:
        input_ids = tuple(self.node_of(t) for t in inputs)
        out = Tensor(values)
        out.requires_grad = any(t.requires_grad for t in inputs)
        out.graph = self
        out.node_id = len(self.nodes)
        self.nodes.append(Node(op, input_ids, out, backward))
        return out


def _graph_for(*tensors: Tensor) -> ComputeGraph:
    graphs = {id(t.graph): t.graph for t in tensors if t.graph is not None}
    if len(graphs) > 1:
        raise ContractError("op mixes tensors from different compute graphs")
    if graphs:
        return next(iter(graphs.values()))
    return ComputeGraph()


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def fixed_order_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w summed over the inner index in ascending order

    Each output row depends only on its own input row, so results are
    bit-identical whatever the batch size.
    """
    return np.multiply(x[:, :, None], w[None, :, :]).sum(axis=1)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """out[r, c] = sum_k x[r, k] * W[k, c] + b[c]"""
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if (x.ndim != 2 or W.ndim != 2 or b.ndim != 1
            or x.shape[1] != W.shape[0] or b.shape[0] != W.shape[1]):
        raise DimensionError(f"affine: x{list(x.shape)} does not align with W{list(W.shape)} / b{list(b.shape)}")
    graph = _graph_for(x, W, b)
    x_values, w_values = x.values, W.values
    out = fixed_order_matmul(x_values, w_values) + b.values

    def _backward(grad):
        return grad @ w_values.T, x_values.T @ grad, grad.sum(axis=0)

    return graph.record("affine", (x, W, b), out, _backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at the kink"""
    x = _as_tensor(x)
    graph = _graph_for(x)
    mask = x.values > 0
    out = np.where(mask, x.values, np.zeros((), dtype=x.dtype))

    def _backward(grad):
        return (grad * mask,)

    return graph.record("relu", (x,), out, _backward)


def conv2d(x: Tensor, W: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution over [B, C, H, W] input with square kernels, no dilation"""
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if stride not in (1, 2):
        raise ValidationError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.ndim != 4 or W.ndim != 4 or b.ndim != 1:
        raise DimensionError(f"conv2d: x{list(x.shape)} W{list(W.shape)} b{list(b.shape)} have wrong rank")
    batch, channels, height, width = x.shape
    out_channels, in_channels, kh, kw = W.shape
    if in_channels != channels or kh != kw or b.shape[0] != out_channels:
        raise DimensionError(f"conv2d: x{list(x.shape)} does not align with W{list(W.shape)} / b{list(b.shape)}")
    k = kh
    if height + 2 * padding < k or width + 2 * padding < k:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {height}x{width}")

    graph = _graph_for(x, W, b)
    padded = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, channels * k * k)
    w_matrix = W.values.reshape(out_channels, channels * k * k)
    out = fixed_order_matmul(cols, w_matrix.T) + b.values
    out = out.reshape(batch, out_h, out_w, out_channels).transpose(0, 3, 1, 2)
    padded_shape = padded.shape
    w_shape = W.shape

    def _backward(grad):
        grad_rows = grad.transpose(0, 2, 3, 1).reshape(-1, out_channels)
        grad_w = (grad_rows.T @ cols).reshape(w_shape)
        grad_b = grad_rows.sum(axis=0)
        grad_cols = (grad_rows @ w_matrix).reshape(batch, out_h, out_w, channels, k, k)
        grad_padded = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, padding:padding + height, padding:padding + width]
        return grad_x, grad_w, grad_b

    return graph.record("conv2d", (x, W, b), np.ascontiguousarray(out), _backward)


def flatten(x: Tensor) -> Tensor:
    """[B, ...] -> [B, prod(...)]"""
    x = _as_tensor(x)
    graph = _graph_for(x)
    shape = x.shape
    out = x.values.reshape(shape[0], -1)

    def _backward(grad):
        return (grad.reshape(shape),)

    return graph.record("flatten", (x,), out, _backward)


def unflatten(x: Tensor, sample_shape: Sequence[int]) -> Tensor:
    """[B, n] -> [B, *sample_shape]"""
    x = _as_tensor(x)
    if x.ndim != 2 or int(np.prod(sample_shape)) != x.shape[1]:
        raise DimensionError(f"unflatten: cannot view {list(x.shape)} as [B, {', '.join(map(str, sample_shape))}]")
    graph = _graph_for(x)
    shape = x.shape
    out = x.values.reshape((shape[0],) + tuple(sample_shape))

    def _backward(grad):
        return (grad.reshape(shape),)

    return graph.record("unflatten", (x,), out, _backward)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-shifted"""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy_loss: logits{list(logits.shape)} vs labels{list(labels.shape)}")
    batch, num_classes = logits.shape
    if batch == 0:
        raise ValidationError("cross_entropy_loss needs a non-empty batch")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValidationError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")

    graph = _graph_for(logits)
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def _backward(grad):
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1
        return (grad * probs / batch,)

    return graph.record("cross_entropy", (logits,), np.asarray(loss, dtype=logits.dtype), _backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of (pred - target)^2 over all elements; target is treated as a constant"""
    pred = _as_tensor(pred)
    target_values = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != target_values.shape:
        raise DimensionError(f"mse_loss: pred{list(pred.shape)} vs target{list(target_values.shape)}")
    if pred.size == 0:
        raise ValidationError("mse_loss needs at least one element")
    graph = _graph_for(pred)
    diff = pred.values - target_values
    loss = np.mean(diff * diff)
    count = diff.size

    def _backward(grad):
        return (grad * 2 * diff / count,)

    return graph.record("mse", (pred,), np.asarray(loss, dtype=pred.dtype), _backward)


def backward(loss: Tensor,
             groups: Optional[Mapping[str, Mapping[str, Tensor]]] = None) -> Optional[GradientSet]:
    """
    Propagate gradients from a scalar loss back to every leaf of its graph
    Leaf grad slots are overwritten; when parameter groups are given the
    gradients come back as a GradientSet (zeros for unreachable parameters)
    """
    if loss.graph is None:
        raise ContractError("backward() needs the output of a recorded op")
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    graph = loss.graph
    grads: List[Optional[np.ndarray]] = [None] * len(graph.nodes)
    grads[loss.node_id] = np.ones_like(loss.values)

    for node_id in range(loss.node_id, -1, -1):
        node = graph.nodes[node_id]
        upstream = grads[node_id]
        if upstream is None or node.backward is None or not node.output.requires_grad:
            continue
        for input_id, input_grad in zip(node.inputs, node.backward(upstream)):
            if input_grad is None or not graph.nodes[input_id].output.requires_grad:
                continue
            if grads[input_id] is None:
                grads[input_id] = input_grad
            else:
                grads[input_id] = grads[input_id] + input_grad

    for node_id, node in enumerate(graph.nodes):
        if node.op == "leaf" and node.output.requires_grad:
            grad = grads[node_id]
            node.output.grad = np.zeros_like(node.output.values) if grad is None else grad.astype(node.output.dtype)

    if groups is None:
        return None

    arrays: Dict[str, Dict[str, np.ndarray]] = {}
    for group, params in groups.items():
        arrays[group] = {}
        for name, param in params.items():
            leaf = graph.leaf_id(param)
            grad = grads[leaf] if leaf is not None else None
            arrays[group][name] = np.zeros(param.shape) if grad is None else grad
    return GradientSet.from_arrays(arrays)


def finite_difference_check(model, loss_fn: Callable, batch, eps: float = 1e-6) -> float:
    """
    Compare backward() against central differences for every parameter entry
    The numerical side runs in float64 on a temporary upcast of the parameters,
    the analytic side at the model's own precision. Returns the worst
    per-parameter relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
    """
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    groups = model.parameter_groups()
    params = [p for group in groups.values() for p in group.values()]

    analytic = backward(loss_fn(model, batch), groups).unflatten()

    original = [p.values for p in params]
    try:
        for p in params:
            p.values = p.values.astype(np.float64)
        worst = 0.0
        for group, group_params in groups.items():
            for name, param in group_params.items():
                flat = param.values.reshape(-1)
                numeric = np.zeros(flat.size)
                for index in range(flat.size):
                    saved = flat[index]
                    flat[index] = saved + eps
                    plus = loss_fn(model, batch).item()
                    flat[index] = saved - eps
                    minus = loss_fn(model, batch).item()
                    flat[index] = saved
                    numeric[index] = (plus - minus) / (2 * eps)
                exact = analytic[group][name].reshape(-1).astype(np.float64)
                scale = max(np.linalg.norm(exact), np.linalg.norm(numeric))
                if scale < 1e-12:
                    continue
                error = float(np.linalg.norm(exact - numeric) / scale)
                logger.debug(f"finite differences {name}: relative error {error:.3e}")
                worst = max(worst, error)
    finally:
        for p, values in zip(params, original):
            p.values = values
    return worst
