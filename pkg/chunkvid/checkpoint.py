"""
Parameter checkpoint files.

Little-endian layout:
    "LVCK"  u16 version
    u32 config length, UTF-8 JSON of DenoiserConfig
    u32 parameter count, then per parameter:
        u16 name length, UTF-8 name, u32 ndim, u32×ndim shape, f64 data
"""

import json
import struct
from dataclasses import asdict, fields
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from chunkvid.denoiser import DenoiserConfig, Params, param_shapes
from chunkvid.errors import FormatError
from chunkvid.kv_cache import BinaryReader
from chunkvid.tensor import Tensor

CHECKPOINT_MAGIC = b"LVCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: Union[str, Path], cfg: DenoiserConfig, params: Params) -> None:
    config_blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    parts = [
        struct.pack("<4sH", CHECKPOINT_MAGIC, CHECKPOINT_VERSION),
        struct.pack("<I", len(config_blob)),
        config_blob,
        struct.pack("<I", len(params)),
    ]
    for name in sorted(params):
        data = params[name].data
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape))
        parts.append(data.astype("<f8").tobytes())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: Union[str, Path]) -> Tuple[DenoiserConfig, Params]:
    """Read a checkpoint; parameter names and shapes must match its config."""
    path = str(path)
    reader = BinaryReader(path, Path(path).read_bytes())

    magic, version = reader.unpack("<4sH")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(path, f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(path, f"unsupported checkpoint version {version}")

    (config_len,) = reader.unpack("<I")
    config_text = reader.text(config_len, "config block")
    try:
        raw_config = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"unreadable config block ({exc})") from exc
    known = {f.name for f in fields(DenoiserConfig)}
    unknown = set(raw_config) - known
    if unknown:
        raise FormatError(path, f"unknown config fields {sorted(unknown)}")
    cfg = DenoiserConfig(**raw_config).validate()

    (count,) = reader.unpack("<I")
    params: Params = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.text(name_len, "parameter name")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = reader.array("<f8", size).reshape(shape)
        params[name] = Tensor(data, requires_grad=True)

    if reader.remaining:
        raise FormatError(path, f"{reader.remaining} trailing bytes")

    expected = param_shapes(cfg)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise FormatError(path, f"parameter names do not match config (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise FormatError(path, f"parameter {name} has shape {params[name].shape}, expected {shape}")
    return cfg, params
