"""
Checkpoint module for the mixture-activation training engine

Layout (all integers little-endian):
    8 bytes   magic b"MIXACTCK"
    8 bytes   u64 header length
    header    UTF-8 JSON, sorted keys, no whitespace:
              {"adam_t", "arrays": [{"dtype", "name", "nbytes", "offset", "shape"}],
               "meta", "rng_state", "version"}
    payload   raw float64 arrays in header order

Arrays are named ``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from errors import DataError
from model import Model, model_from_arrays
from optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"MIXACTCK"
VERSION = 1
_DTYPE = "<f8"


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    named = [("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)]
    for prefix, arrays in named:
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype=_DTYPE).tobytes()
            entries.append({
                "name": f"{prefix}/{name}",
                "shape": list(np.shape(array)),
                "dtype": _DTYPE,
                "offset": offset,
                "nbytes": len(data),
            })
            chunks.append(data)
            offset += len(data)
    header = {
        "version": VERSION,
        "meta": ckpt.meta,
        "arrays": entries,
        "rng_state": ckpt.rng_state,
        "adam_t": ckpt.adam_t,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if raw[:8] != MAGIC:
        raise DataError(f"{source}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise DataError(f"{source}: truncated checkpoint header")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{source}: corrupt checkpoint header: {e}") from e
    if header.get("version") != VERSION:
        raise DataError(f"{source}: unsupported checkpoint version {header.get('version')}")

    payload = raw[16 + header_len:]
    groups: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    try:
        for entry in header["arrays"]:
            start, end = entry["offset"], entry["offset"] + entry["nbytes"]
            if end > len(payload):
                raise DataError(f"{source}: truncated array {entry['name']}")
            prefix, name = entry["name"].split("/", 1)
            if prefix not in groups:
                raise DataError(f"{source}: unknown array group '{prefix}' in {entry['name']}")
            array = np.frombuffer(payload[start:end], dtype=entry["dtype"]).reshape(entry["shape"])
            groups[prefix][name] = array.astype(np.float64)
        return Checkpoint(
            params=groups["param"],
            adam_m=groups["adam_m"],
            adam_v=groups["adam_v"],
            adam_t=header["adam_t"],
            rng_state=header["rng_state"],
            meta=header["meta"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{source}: malformed checkpoint header: {e}") from e


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(ckpt))
    logger.debug(f"💾 Checkpoint written: {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise DataError(f"Checkpoint not found: {path}") from e
    return decode_checkpoint(raw, str(path))


def capture(model: Model, state: Optional[AdamState] = None,
            rng: Optional[np.random.Generator] = None, **meta) -> Checkpoint:
    """Snapshot a model (and optionally optimizer and RNG) into a Checkpoint"""
    return Checkpoint(
        params={name: p.data.copy() for name, p in model.parameters().items()},
        adam_m={k: v.copy() for k, v in state.m.items()} if state else {},
        adam_v={k: v.copy() for k, v in state.v.items()} if state else {},
        adam_t=state.t if state else 0,
        rng_state=rng.bit_generator.state if rng is not None else None,
        meta=dict(meta),
    )


def restore(ckpt: Checkpoint) -> Tuple[Model, AdamState]:
    """Rebuild the model and optimizer state held by a checkpoint"""
    model = model_from_arrays(ckpt.params)
    state = AdamState(
        m={k: v.copy() for k, v in ckpt.adam_m.items()},
        v={k: v.copy() for k, v in ckpt.adam_v.items()},
        t=ckpt.adam_t,
    )
    return model, state


def restore_model(ckpt: Checkpoint) -> Model:
    return restore(ckpt)[0]
