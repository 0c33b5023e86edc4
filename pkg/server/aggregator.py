"""
Weight aggregation on the server
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ContractError, ValidationError
from server.messages import ClientUpdate

Arrays = Dict[str, np.ndarray]


def average_arrays(arrays: Sequence[Arrays], weights: Optional[Sequence[float]] = None) -> Arrays:
    """Elementwise (weighted) mean, accumulated in float64 in the given order"""
    if not arrays:
        raise ContractError("cannot average an empty list of weights")
    names = list(arrays[0])
    if weights is None:
        weights = [1.0] * len(arrays)
    total = float(sum(weights))
    if total <= 0:
        raise ValidationError("aggregation weights must sum to a positive value")

    averaged: Arrays = {}
    for name in names:
        reference = arrays[0][name]
        accumulator = np.zeros(reference.shape, dtype=np.float64)
        for entry, weight in zip(arrays, weights):
            if name not in entry or entry[name].shape != reference.shape:
                raise ContractError(f"parameter {name} is missing or has a mismatched shape")
            accumulator += weight * entry[name].astype(np.float64)
        averaged[name] = (accumulator / total).astype(reference.dtype)
    for entry in arrays:
        if set(entry) != set(names):
            raise ContractError("clients sent different parameter sets")
    return averaged


def _weights(updates: List[ClientUpdate], weighting: str) -> Optional[List[float]]:
    if weighting == "uniform":
        return None
    if weighting == "samples":
        return [float(u.num_samples) for u in updates]
    raise ValidationError(f"unknown aggregation weighting {weighting!r}")


def aggregate_shells(updates: Sequence[ClientUpdate], weighting: str = "uniform") -> Tuple[Arrays, Arrays]:
    """Average extractor and classifier weights, summing in ascending client id"""
    if not updates:
        raise ContractError("no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    weights = _weights(ordered, weighting)
    w_e = average_arrays([u.w_e for u in ordered], weights)
    w_c = average_arrays([u.w_c for u in ordered], weights)
    return w_e, w_c


def aggregate_full(updates: Sequence[ClientUpdate], weighting: str = "samples") -> Tuple[Arrays, Arrays, Arrays]:
    """FedAvg: average all three groups of homogeneous models"""
    ordered = sorted(updates, key=lambda u: u.client_id)
    if any(u.w_in is None for u in ordered):
        raise ContractError("full aggregation needs intermediate weights from every client")
    w_e, w_c = aggregate_shells(ordered, weighting)
    w_in = average_arrays([u.w_in for u in ordered], _weights(ordered, weighting))
    return w_e, w_c, w_in
