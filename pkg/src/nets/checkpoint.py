"""
checkpoint.py

"UDAS" binary checkpoints: little-endian, shared by training and evaluation.

Layout:
    magic      4 bytes   b"UDAS"
    version    u32
    count      u32       number of parameter records
    records    count x (name_len u32, name utf-8, rank u32, dims rank x u32, f64 payload)

Parameter names carry the network prefix ("G/enc1.weight", "D1/conv1.bias").
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from autograd.tensor import ShapeError
from nets.network import Network

logger = logging.getLogger(__name__)

MAGIC = b"UDAS"
VERSION = 1


class CheckpointError(ValueError):
    """Raised on a malformed or mismatched checkpoint file."""


def save_checkpoint(path: Union[str, Path], networks: Mapping[str, Network]) -> Path:
    """Write every parameter of every network to `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    records = [(f"{prefix}/{name}", tensor.data)
               for prefix, net in networks.items()
               for name, tensor in net.named_parameters()]

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(records)))
        for name, data in records:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())

    logger.info(f"Checkpoint saved: {path} ({len(records)} tensors)")
    return path


def read_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")

    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a UDAS checkpoint")
    if len(blob) < 12:
        raise CheckpointError(f"{path} is truncated: header has {len(blob)} bytes")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path} has unsupported version {version}")

    offset = 12
    arrays: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            arrays[name] = payload.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path} is truncated: {e}") from e

    if offset != len(blob):
        raise CheckpointError(f"{path} has {len(blob) - offset} trailing bytes")
    return arrays


def load_checkpoint(path: Union[str, Path], networks: Mapping[str, Network]) -> None:
    """
    Copy checkpoint values into the given networks.

    Every name and shape is checked before the first copy, so a rejected
    checkpoint leaves the networks untouched.
    """
    arrays = read_checkpoint(path)
    targets = []
    for prefix, net in networks.items():
        for name, tensor in net.named_parameters():
            key = f"{prefix}/{name}"
            if key not in arrays:
                raise CheckpointError(f"{path} is missing parameter {key}")
            if arrays[key].shape != tensor.shape:
                raise ShapeError(f"{key}: checkpoint shape {arrays[key].shape} "
                                 f"!= network shape {tensor.shape}")
            targets.append((key, tensor))
    expected = {key for key, _ in targets}
    extra = sorted(k for k in arrays if k.split("/", 1)[0] in networks and k not in expected)
    if extra:
        raise CheckpointError(f"{path} has parameters the networks lack: {extra[:5]}")

    for key, tensor in targets:
        tensor.data = arrays[key].copy()
        tensor.zero_grad()
    logger.info(f"Checkpoint loaded: {path}")
