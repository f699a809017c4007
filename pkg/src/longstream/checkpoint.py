"""Flat binary tensor container and model checkpoint helpers.

Layout: magic "LSTM0" (5 bytes), version u32, count u32, then per tensor:
name length u16, UTF-8 name, rank u8, dims as u64, raw little-endian
float64 values.  The model config rides alongside as a key=value text
file with the same stem and a ``.cfg`` suffix.
"""

import hashlib
import os
import struct

import numpy as np

from .errors import ContractError, MissingArtifactError
from .model import GeneratorModel, ModelConfig
from .tensor import Tensor

MAGIC = b"LSTM0"
VERSION = 1


def write_container(path, arrays):
    """Write {name: float64 array} to the container format."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<Q", dim))
            f.write(arr.astype("<f8").tobytes())


def read_container(path):
    """Read a container back into {name: array}."""
    if not os.path.exists(path):
        raise MissingArtifactError(f"no container at {path}")
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != MAGIC:
            raise ContractError(f"bad magic {magic!r} in {path}")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ContractError(f"unsupported container version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            dims = [struct.unpack("<Q", f.read(8))[0] for _ in range(rank)]
            n = 1
            for d in dims:
                n *= d
            data = np.frombuffer(f.read(n * 8), dtype="<f8").reshape(dims)
            out[name] = np.array(data)  # own, native-endian
        return out


def save_model(model, path):
    """Write checkpoint container plus the .cfg sidecar."""
    write_container(path, {k: v.data for k, v in model.params.items()})
    with open(_cfg_path(path), "w") as f:
        f.write(model.config.to_text())


def load_model(path):
    cfg_path = _cfg_path(path)
    if not os.path.exists(cfg_path):
        raise MissingArtifactError(f"no config sidecar at {cfg_path}")
    config = ModelConfig.from_text(open(cfg_path).read())
    arrays = read_container(path)
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return GeneratorModel(config, params)


def _cfg_path(path):
    stem, _ = os.path.splitext(path)
    return stem + ".cfg"


def content_hash(path):
    """sha256 of the checkpoint bytes, for run manifests."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
