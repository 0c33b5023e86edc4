"""
Adam optimizer driven by externally supplied gradient sets
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

import config
from core.gradients import GROUPS, GradientSet
from core.split_model import SplitModel


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class AdamOptimizer:
    """Adam with per-parameter step counters so individual moments can be reset"""
    model: SplitModel
    learning_rate: float = config.DEFAULT_LEARNING_RATE
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    eps: float = config.ADAM_EPS
    state: Dict[Tuple[str, str], _Moments] = field(default_factory=dict)

    def set_learning_rate(self, learning_rate: float):
        self.learning_rate = learning_rate

    def reset(self, groups: Iterable[str] = GROUPS):
        """Forget moment estimates for every parameter in `groups`"""
        groups = set(groups)
        for key in [k for k in self.state if k[0] in groups]:
            del self.state[key]

    def step(self, grads: GradientSet, groups: Optional[Iterable[str]] = None,
             learning_rate: Optional[float] = None):
        """Apply one update using `grads` as the gradient; optionally only for some groups or at another rate"""
        rate = self.learning_rate if learning_rate is None else learning_rate
        active = set(GROUPS if groups is None else groups)
        arrays = grads.unflatten()
        param_groups = self.model.parameter_groups()
        for group in GROUPS:
            if group not in active:
                continue
            for name, param in param_groups[group].items():
                grad = arrays[group][name]
                moments = self.state.get((group, name))
                if moments is None:
                    moments = _Moments(np.zeros(param.shape), np.zeros(param.shape))
                    self.state[(group, name)] = moments
                moments.step += 1
                moments.m = self.beta1 * moments.m + (1 - self.beta1) * grad
                moments.v = self.beta2 * moments.v + (1 - self.beta2) * grad * grad
                m_hat = moments.m / (1 - self.beta1 ** moments.step)
                v_hat = moments.v / (1 - self.beta2 ** moments.step)
                update = rate * m_hat / (np.sqrt(v_hat) + self.eps)
                param.values = (param.values - update).astype(param.dtype)
