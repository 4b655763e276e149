"""
Checkpoint files.

    magic "R3DN" | version u32 | preset name (u32 length + UTF-8) | tensor count u32
    per tensor: name (u32 length + UTF-8) | tag u8 | rank u8 | dims u32 x rank | float32 data

All integers and floats are little-endian. Tags 0/1/2 are the parameter partitions,
tag 3 holds optimizer moments (`adam.m.<name>`, `adam.v.<name>`) and the trainer
state: a UTF-8 JSON document carried bit-for-bit in the float32 payload of `state.json`.
"""
import logging
import math
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from refine3d.errors import ConfigError, FormatError
from refine3d.fsutil import PathLike, write_bytes_atomic
from refine3d.model.config import get_preset
from refine3d.model.network import Refine3DNet, parameter_specs
from refine3d.model.registry import OPTIMIZER_TAG, PARTITION_TAGS, ParameterRegistry, Partition
from refine3d.training.adam import AdamState
from refine3d.training.state import TrainState

logger = logging.getLogger(__name__)

MAGIC = b"R3DN"
VERSION = 1
STATE_TENSOR = "state.json"
TAG_PARTITIONS = {tag: partition for partition, tag in PARTITION_TAGS.items()}


class _StateBlob(BaseModel):
    train_state: TrainState
    adam_tau: Dict[str, int]


@dataclass
class Checkpoint:
    preset: str
    net: Refine3DNet
    optimizers: Dict[Partition, AdamState]
    state: TrainState


# ---------------- writing ----------------
def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_tensor(name: str, tag: int, data: np.ndarray) -> bytes:
    array = np.ascontiguousarray(data, dtype="<f4")
    header = _pack_str(name) + struct.pack("<BB", tag, array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes()


def _json_as_float32(document: str) -> np.ndarray:
    raw = document.encode("utf-8")
    raw += b" " * (-len(raw) % 4)
    return np.frombuffer(raw, dtype="<u4").view("<f4")


def encode_checkpoint(net: Refine3DNet, optimizers: Dict[Partition, AdamState], state: TrainState) -> bytes:
    records: List[bytes] = []
    for name, entry in net.params.entries():
        records.append(_pack_tensor(name, PARTITION_TAGS[entry.partition], entry.tensor.data))
    for partition in Partition:
        opt = optimizers.get(partition)
        if opt is None:
            continue
        for name in sorted(opt.m):
            records.append(_pack_tensor(f"adam.m.{name}", OPTIMIZER_TAG, opt.m[name]))
            records.append(_pack_tensor(f"adam.v.{name}", OPTIMIZER_TAG, opt.v[name]))
    blob = _StateBlob(train_state=state, adam_tau={p.value: opt.tau for p, opt in optimizers.items()})
    records.append(_pack_tensor(STATE_TENSOR, OPTIMIZER_TAG, _json_as_float32(blob.model_dump_json())))

    header = MAGIC + struct.pack("<I", VERSION) + _pack_str(net.cfg.name) + struct.pack("<I", len(records))
    return header + b"".join(records)


def save_checkpoint(
    path: PathLike, net: Refine3DNet, optimizers: Dict[Partition, AdamState], state: TrainState
) -> None:
    write_bytes_atomic(path, encode_checkpoint(net, optimizers, state))
    logger.info("Saved checkpoint %s (phase %s, step %d)", path, state.phase, state.global_step)


# ---------------- reading ----------------
class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise FormatError(f"checkpoint truncated while reading {what}", offset=self.offset)
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def text(self, what: str) -> str:
        start = self.offset
        raw = self.take(self.u32(what), what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", offset=start)


def decode_tensors(payload: bytes) -> Tuple[str, List[Tuple[str, int, np.ndarray]]]:
    """Parse the whole file into (preset, [(name, tag, float32 array)]) without touching any model"""
    reader = _Reader(payload)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError("not a refine3d checkpoint (bad magic)", offset=0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    preset = reader.text("preset name")
    count = reader.u32("tensor count")
    tensors = []
    for _ in range(count):
        name = reader.text("tensor name")
        tag_offset = reader.offset
        tag = reader.u8(f"tag of {name}")
        if tag not in TAG_PARTITIONS and tag != OPTIMIZER_TAG:
            raise FormatError(f"unknown tag {tag} for {name}", offset=tag_offset)
        rank = reader.u8(f"rank of {name}")
        dims = tuple(reader.u32(f"dims of {name}") for _ in range(rank))
        size = math.prod(dims)
        if 4 * size > len(payload) - reader.offset:
            raise FormatError(
                f"{name} declares {list(dims)} floats but only {len(payload) - reader.offset} bytes remain",
                offset=reader.offset,
            )
        data = np.frombuffer(reader.take(4 * size, f"data of {name}"), dtype="<f4").reshape(dims)
        tensors.append((name, tag, data))
    if reader.offset != len(payload):
        raise FormatError(f"{len(payload) - reader.offset} trailing bytes", offset=reader.offset)
    return preset, tensors


def load_checkpoint(path: PathLike, expected_preset: Optional[str] = None) -> Checkpoint:
    """
    Read a checkpoint into a fresh network, optimizer states and TrainState.

    The file is parsed and validated completely before anything is built, so a bad
    file leaves no partial state behind.
    """
    with open(path, "rb") as f:
        payload = f.read()
    preset, tensors = decode_tensors(payload)
    if expected_preset is not None and preset != expected_preset:
        raise ConfigError(f"{path} holds a {preset!r} model, expected {expected_preset!r}")
    cfg = get_preset(preset)

    specs = {spec.name: spec for spec in parameter_specs(cfg)}
    by_name = {name: (tag, data) for name, tag, data in tensors}
    missing = [name for name in specs if name not in by_name]
    if missing:
        raise ConfigError(f"{path} lacks {len(missing)} parameter(s) of preset {preset!r}, e.g. {missing[0]}")

    registry = ParameterRegistry()
    for name, spec in specs.items():
        tag, data = by_name[name]
        if data.shape != spec.shape:
            raise ConfigError(f"{path}: {name} has shape {list(data.shape)}, preset {preset!r} needs {list(spec.shape)}")
        if TAG_PARTITIONS.get(tag) != spec.partition:
            raise ConfigError(f"{path}: {name} is tagged {tag}, expected {PARTITION_TAGS[spec.partition]}")
        registry.add(name, data.astype(np.float32), spec.partition, spec.trainable)

    if STATE_TENSOR not in by_name:
        raise FormatError(f"{path}: no {STATE_TENSOR} record")
    try:
        document = by_name[STATE_TENSOR][1].view("<u4").tobytes().decode("utf-8").rstrip(" ")
        blob = _StateBlob.model_validate_json(document)
    except (UnicodeDecodeError, ValidationError) as e:
        raise FormatError(f"{path}: unreadable trainer state: {e}")

    optimizers: Dict[Partition, AdamState] = {}
    for key, tau in blob.adam_tau.items():
        optimizers[Partition(key)] = AdamState(tau=tau)
    for name, (tag, data) in by_name.items():
        for prefix, field_name in (("adam.m.", "m"), ("adam.v.", "v")):
            if not name.startswith(prefix):
                continue
            param = name[len(prefix):]
            if param not in specs or specs[param].shape != data.shape:
                raise ConfigError(f"{path}: optimizer moment {name} does not match any parameter")
            opt = optimizers.setdefault(specs[param].partition, AdamState())
            getattr(opt, field_name)[param] = data.astype(np.float32)

    logger.info("Loaded checkpoint %s (preset %s, phase %s)", path, preset, blob.train_state.phase)
    return Checkpoint(preset, Refine3DNet(cfg, registry), optimizers, blob.train_state)
