"""
Video container type and the raw tensor file layout used for media on disk.

Raw tensor layout (little-endian):

    offset 0   4 bytes   magic b"AVT1"
    offset 4   4 bytes   uint32 length n of the dtype string
    offset 8   n bytes   numpy dtype string, ascii (e.g. "<f4")
    ...        4 bytes   uint32 ndim
    ...        8*ndim    uint64 dims
    ...        data      row-major (C order) array payload

Video frame stacks use dims (frames, 3, height, width); spectrograms use
(1, mel_bins, time).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"AVT1"


@dataclass
class VideoTensor:
    """frames x 3 x H x W array with values in [-1, 1]."""

    data: np.ndarray
    frame_rate: float = 10.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4 or self.data.shape[1] != 3:
            raise ValueError(f"video must be T x 3 x H x W, got {self.data.shape}")
        if self.data.shape[2] % 8 or self.data.shape[3] % 8:
            raise ValueError(f"video spatial dims must be divisible by 8, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("video has non-finite entries")
        if self.data.size and np.abs(self.data).max() > 1.0 + 1e-6:
            raise ValueError("video values must lie in [-1, 1]")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, VideoTensor):
            return NotImplemented
        return self.frame_rate == other.frame_rate and np.array_equal(self.data, other.data)


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    dt = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
    array = array.astype(dt, copy=False)
    dstr = dt.str.encode("ascii")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(dstr)))
        f.write(dstr)
        f.write(struct.pack("<I", array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(array.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a raw tensor file (bad magic)")
    (n,) = struct.unpack_from("<I", blob, 4)
    dtype = np.dtype(blob[8 : 8 + n].decode("ascii"))
    pos = 8 + n
    (ndim,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
    pos += 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    payload = blob[pos:]
    if len(payload) != count * dtype.itemsize:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, header promises {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_video(path: str | Path, video: VideoTensor) -> None:
    write_tensor(path, video.data)


def read_video(path: str | Path, frame_rate: float = 10.0) -> VideoTensor:
    return VideoTensor(read_tensor(path), frame_rate=frame_rate)


def export_png_sequence(video: VideoTensor, directory: str | Path, prefix: str = "frame") -> list[Path]:
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pixels = np.round((np.clip(video.data, -1, 1) + 1) * 127.5).astype(np.uint8)
    paths = []
    for i, frame in enumerate(pixels):
        p = directory / f"{prefix}_{i:04d}.png"
        Image.fromarray(frame.transpose(1, 2, 0)).save(p)
        paths.append(p)
    return paths
