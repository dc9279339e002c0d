"""
Video files.

Two inputs are accepted:
- a directory of binary PGM (P5) or PPM (P6) frames with maxval 255,
  read in lexicographic file-name order
- a .lvt file: "LVTF", u16 version, u32 T/H/W/C, then float32
  little-endian frames in [0, 1]
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from chunkvid.errors import DimensionError, FormatError, RangeError, VideoReadError
from chunkvid.scorers import FrameSequence

LVT_MAGIC = b"LVTF"
LVT_VERSION = 1
FRAME_SUFFIXES = (".pgm", ".ppm")
FRAME_MAGICS = (b"P5", b"P6")

_HEADER = "<4sH4I"


def read_video(path: Union[str, Path], frame_rate: float = 8.0) -> FrameSequence:
    path = Path(path)
    if path.is_dir():
        return read_frame_dir(path, frame_rate)
    if not path.exists():
        raise VideoReadError(str(path), "no such file or directory")
    return read_lvt(path, frame_rate)


# =============================================================================
# PGM / PPM Directories
# =============================================================================

def _read_frame(path: Path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            magic = f.read(2)
        if magic not in FRAME_MAGICS:
            raise VideoReadError(str(path), f"magic {magic!r} is not binary PGM/PPM (P5/P6)")
        with Image.open(path) as img:
            if img.format != "PPM" or img.mode not in ("L", "RGB"):
                raise VideoReadError(str(path), f"unsupported image ({img.format}, mode {img.mode})")
            arr = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise VideoReadError(str(path), str(exc)) from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr.astype(np.float64) / 255.0


def read_frame_dir(directory: Union[str, Path], frame_rate: float = 8.0) -> FrameSequence:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if len(files) < 2:
        raise VideoReadError(str(directory), f"found {len(files)} PGM/PPM frames, need at least 2")

    frames = []
    for f in files:
        frame = _read_frame(f)
        if frames and frame.shape != frames[0].shape:
            raise VideoReadError(str(f), f"frame shape {frame.shape} differs from {frames[0].shape}")
        frames.append(frame)
    return FrameSequence(np.stack(frames), frame_rate)


def write_frame_dir(video: FrameSequence, directory: Union[str, Path]) -> None:
    """Write frames as frame_00000.pgm (C=1) or .ppm (C=3), quantised to 8 bits."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = ".pgm" if video.channels == 1 else ".ppm"
    for i, frame in enumerate(video.frames):
        data = np.round(frame * 255.0).astype(np.uint8)
        img = Image.fromarray(data[..., 0] if video.channels == 1 else data)
        img.save(directory / f"frame_{i:05d}{suffix}", format="PPM")


# =============================================================================
# .lvt Files
# =============================================================================

def write_lvt(video: FrameSequence, path: Union[str, Path]) -> None:
    t, h, w, c = video.frames.shape
    header = struct.pack(_HEADER, LVT_MAGIC, LVT_VERSION, t, h, w, c)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + video.frames.astype("<f4").tobytes())


def read_lvt(path: Union[str, Path], frame_rate: float = 8.0) -> FrameSequence:
    path = Path(path)
    payload = path.read_bytes()
    size = struct.calcsize(_HEADER)
    if len(payload) < size:
        raise FormatError(str(path), "truncated header")
    magic, version, t, h, w, c = struct.unpack(_HEADER, payload[:size])
    if magic != LVT_MAGIC:
        raise FormatError(str(path), f"bad magic {magic!r}, expected {LVT_MAGIC!r}")
    if version != LVT_VERSION:
        raise FormatError(str(path), f"unsupported lvt version {version}")
    expected = 4 * t * h * w * c
    if len(payload) - size != expected:
        raise FormatError(str(path), f"payload holds {len(payload) - size} bytes, expected {expected}")
    frames = np.frombuffer(payload[size:], dtype="<f4").astype(np.float64).reshape(t, h, w, c)
    try:
        return FrameSequence(frames, frame_rate)
    except (RangeError, DimensionError) as exc:
        raise FormatError(str(path), exc.message) from exc
