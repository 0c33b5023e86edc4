"""
Messages exchanged between clients and the server
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from core.errors import ContractError

Arrays = Dict[str, np.ndarray]


@dataclass(frozen=True)
class FeaturePair:
    """One captured (s_in, s_out) sample and where it came from"""
    s_in: np.ndarray
    s_out: np.ndarray
    client_id: int
    round: int


@dataclass(frozen=True)
class ClientUpdate:
    """What a client uploads after its round"""
    client_id: int
    w_e: Arrays
    w_c: Arrays
    pairs: Tuple[FeaturePair, ...]
    local_loss: float
    in_loss: Optional[float]
    num_samples: int
    w_in: Optional[Arrays] = None


@dataclass(frozen=True)
class ServerBroadcast:
    """What the server sends every client at the start of a round"""
    round: int
    w_e: Optional[Arrays] = None
    w_c: Optional[Arrays] = None
    sample: Tuple[FeaturePair, ...] = field(default_factory=tuple)
    w_in: Optional[Arrays] = None


def _encode_pairs(records: Dict[str, np.ndarray], pairs: Tuple[FeaturePair, ...],
                  dims: Tuple[int, int]):
    records["pairs.s_in"] = np.stack([p.s_in for p in pairs]) if pairs else np.zeros((0, dims[0]))
    records["pairs.s_out"] = np.stack([p.s_out for p in pairs]) if pairs else np.zeros((0, dims[1]))
    records["pairs.client_id"] = np.array([p.client_id for p in pairs], dtype=np.float32)
    records["pairs.round"] = np.array([p.round for p in pairs], dtype=np.float32)


def _decode_pairs(records: Dict[str, np.ndarray]) -> Tuple[FeaturePair, ...]:
    return tuple(
        FeaturePair(s_in.copy(), s_out.copy(), int(cid), int(rnd))
        for s_in, s_out, cid, rnd in zip(records["pairs.s_in"], records["pairs.s_out"],
                                         records["pairs.client_id"], records["pairs.round"])
    )


def _encode_group(records: Dict[str, np.ndarray], prefix: str, arrays: Optional[Arrays]):
    for name, array in (arrays or {}).items():
        records[f"{prefix}.{name}"] = array


def _decode_group(records: Dict[str, np.ndarray], prefix: str) -> Optional[Arrays]:
    marker = prefix + "."
    group = {name[len(marker):]: array for name, array in records.items() if name.startswith(marker)}
    return group or None


def encode_update(update: ClientUpdate, dims: Tuple[int, int]) -> Dict[str, np.ndarray]:
    """Flatten an update into named records for the checkpoint format"""
    records = {
        "meta.client_id": np.array([update.client_id]),
        "meta.local_loss": np.array([update.local_loss]),
        "meta.in_loss": np.array([np.nan if update.in_loss is None else update.in_loss]),
        "meta.num_samples": np.array([update.num_samples]),
    }
    _encode_group(records, "w_e", update.w_e)
    _encode_group(records, "w_c", update.w_c)
    _encode_group(records, "w_in", update.w_in)
    _encode_pairs(records, update.pairs, dims)
    return records


def decode_update(records: Dict[str, np.ndarray]) -> ClientUpdate:
    if "meta.client_id" not in records:
        raise ContractError("records do not describe a client update")
    in_loss = float(records["meta.in_loss"][0])
    return ClientUpdate(
        client_id=int(records["meta.client_id"][0]),
        w_e=_decode_group(records, "w_e") or {},
        w_c=_decode_group(records, "w_c") or {},
        pairs=_decode_pairs(records),
        local_loss=float(records["meta.local_loss"][0]),
        in_loss=None if np.isnan(in_loss) else in_loss,
        num_samples=int(records["meta.num_samples"][0]),
        w_in=_decode_group(records, "w_in"),
    )


def encode_broadcast(broadcast: ServerBroadcast, dims: Tuple[int, int]) -> Dict[str, np.ndarray]:
    records = {"meta.round": np.array([broadcast.round])}
    _encode_group(records, "w_e", broadcast.w_e)
    _encode_group(records, "w_c", broadcast.w_c)
    _encode_group(records, "w_in", broadcast.w_in)
    _encode_pairs(records, broadcast.sample, dims)
    return records


def decode_broadcast(records: Dict[str, np.ndarray]) -> ServerBroadcast:
    if "meta.round" not in records:
        raise ContractError("records do not describe a server broadcast")
    return ServerBroadcast(
        round=int(records["meta.round"][0]),
        w_e=_decode_group(records, "w_e"),
        w_c=_decode_group(records, "w_c"),
        sample=_decode_pairs(records),
        w_in=_decode_group(records, "w_in"),
    )
