"""
Gradient sets and the resolution of gradient divergence between
local training and IN training
"""
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from core.errors import ContractError, ValidationError

GROUPS = ("extractor", "intermediate", "classifier")
SHELL_GROUPS = ("extractor", "classifier")


@dataclass(frozen=True)
class LayoutEntry:
    """Where one parameter lives inside its group's flat vector"""
    group: str
    name: str
    offset: int
    length: int
    shape: Tuple[int, ...]


class GradientSet:
    """Per-group flattened gradients in float64 plus the layout to unflatten them"""

    def __init__(self, groups: Dict[str, np.ndarray], layout: Tuple[LayoutEntry, ...]):
        self.groups = groups
        self.layout = layout

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, Mapping[str, np.ndarray]]) -> "GradientSet":
        groups = {}
        layout = []
        for group in GROUPS:
            params = arrays.get(group, {})
            offset = 0
            pieces = []
            for name, values in params.items():
                values = np.asarray(values, dtype=np.float64)
                layout.append(LayoutEntry(group, name, offset, values.size, tuple(values.shape)))
                pieces.append(values.reshape(-1))
                offset += values.size
            groups[group] = np.concatenate(pieces) if pieces else np.zeros(0)
        return cls(groups, tuple(layout))

    def zeros_like(self) -> "GradientSet":
        return GradientSet({g: np.zeros_like(v) for g, v in self.groups.items()}, self.layout)

    def check_layout(self, other: "GradientSet"):
        if self.layout != other.layout:
            raise ContractError("gradient sets have different parameter layouts")

    def vector(self) -> np.ndarray:
        """All groups concatenated in extractor, intermediate, classifier order"""
        return np.concatenate([self.groups[g] for g in GROUPS])

    def unflatten(self) -> Dict[str, Dict[str, np.ndarray]]:
        arrays: Dict[str, Dict[str, np.ndarray]] = {group: {} for group in GROUPS}
        for entry in self.layout:
            flat = self.groups[entry.group][entry.offset:entry.offset + entry.length]
            arrays[entry.group][entry.name] = flat.reshape(entry.shape)
        return arrays

    def map(self, fn) -> "GradientSet":
        return GradientSet({g: fn(v) for g, v in self.groups.items()}, self.layout)

    def combine(self, other: "GradientSet", fn) -> "GradientSet":
        self.check_layout(other)
        return GradientSet({g: fn(self.groups[g], other.groups[g]) for g in GROUPS}, self.layout)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return self.combine(other, np.add)

    def __sub__(self, other: "GradientSet") -> "GradientSet":
        return self.combine(other, np.subtract)

    def __neg__(self) -> "GradientSet":
        return self.map(np.negative)

    def scaled(self, factor: float) -> "GradientSet":
        return self.map(lambda v: factor * v)

    def norm(self) -> float:
        return math.sqrt(frobenius_inner(self, self))

    def __repr__(self):
        sizes = ", ".join(f"{g}={self.groups[g].size}" for g in GROUPS)
        return f"GradientSet({sizes})"


def frobenius_inner(G1: GradientSet, G2: GradientSet) -> float:
    """Sum over all aligned entries of G1 * G2, groups taken in fixed order"""
    G1.check_layout(G2)
    return float(sum(float(np.dot(G1.groups[g], G2.groups[g])) for g in GROUPS))


def resolve_analytic(G_IN: GradientSet, G_local: GradientSet) -> GradientSet:
    """Closest Z to G_IN with <Z, G_local> >= 0"""
    G_IN.check_layout(G_local)
    a = frobenius_inner(G_local, G_local)
    if a == 0.0:
        return G_IN.map(np.copy)
    b = frobenius_inner(G_local, G_IN)
    if b >= 0:
        return G_IN.map(np.copy)
    return G_IN - G_local.scaled(b / a)


def resolve_simplified(G_IN: GradientSet, G_local: GradientSet, lam: float) -> GradientSet:
    """Z = G_IN + (lambda / 2) * G_local"""
    if lam < 0:
        raise ValidationError(f"lambda must be non-negative, got {lam}")
    return G_IN + G_local.scaled(lam / 2)


def projection_oracle(G_IN: GradientSet, G_local: GradientSet) -> GradientSet:
    """
    Euclidean projection of G_IN onto the halfspace {Z : <Z, G_local> >= 0}
    Works on the flat vectors with exactly rounded sums, so it shares no code
    path with resolve_analytic
    """
    G_IN.check_layout(G_local)
    g_in = G_IN.vector()
    g_local = G_local.vector()
    denom = math.fsum(g_local * g_local)
    if denom == 0.0:
        projected = g_in.copy()
    else:
        violation = min(0.0, math.fsum(g_in * g_local))
        projected = g_in - (violation / denom) * g_local

    groups = {}
    start = 0
    for group in GROUPS:
        size = G_IN.groups[group].size
        groups[group] = projected[start:start + size]
        start += size
    return GradientSet(groups, G_IN.layout)


def lagrangian_value(Z: GradientSet, lam: float, G_IN: GradientSet, G_local: GradientSet) -> float:
    """||G_IN||^2 - 2<Z, G_IN> + ||Z||^2 - lambda <G_local, Z>"""
    return (frobenius_inner(G_IN, G_IN) - 2 * frobenius_inner(Z, G_IN)
            + frobenius_inner(Z, Z) - lam * frobenius_inner(G_local, Z))


def dual_value(lam: float, G_IN: GradientSet, G_local: GradientSet) -> float:
    """g(lambda) = -(lambda^2 / 4) a - lambda b"""
    a = frobenius_inner(G_local, G_local)
    b = frobenius_inner(G_local, G_IN)
    return -(lam * lam / 4) * a - lam * b


def optimal_multiplier(G_IN: GradientSet, G_local: GradientSet) -> float:
    """Maximiser of the dual over lambda >= 0"""
    a = frobenius_inner(G_local, G_local)
    b = frobenius_inner(G_local, G_IN)
    if a == 0.0 or b >= 0:
        return 0.0
    return -2 * b / a
