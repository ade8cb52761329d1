"""Texture maps: the sole optimization variable of the attack.

A TextureMap is an HxWx3 float32 image in [0,1] plus a boolean mask of the
texels an attack may modify. Persistence comes in two flavors: 8-bit PNG for
export and a raw little-endian float32 container for checkpointing, which
round-trips bit-exactly.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .meshes import Mesh, trainable_mask_from_mesh

__all__ = [
    "TextureMap", "TextureError",
    "original_texture", "save_texture_raw", "load_texture_raw",
    "save_texture_png", "load_texture_png", "atomic_write_bytes",
]

_RAW_MAGIC = b"ADVT"
_RAW_VERSION = 1


class TextureError(ValueError):
    pass


@dataclass
class TextureMap:
    rgb: np.ndarray             # (H, W, 3) float32 in [0, 1]
    trainable_mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)
        self.trainable_mask = np.asarray(self.trainable_mask, dtype=bool)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise TextureError(f"rgb must be (H,W,3), got {self.rgb.shape}")
        if self.trainable_mask.shape != self.rgb.shape[:2]:
            raise TextureError("mask shape does not match rgb")
        if self.rgb.size and (self.rgb.min() < 0.0 or self.rgb.max() > 1.0):
            raise TextureError("texture values must lie in [0,1]")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def copy(self) -> "TextureMap":
        return TextureMap(self.rgb.copy(), self.trainable_mask.copy())


def original_texture(mesh: Mesh, size: int) -> TextureMap:
    """The clean texture: every paintable face's atlas region filled with its
    base color, so rendering with this texture reproduces the base-color look
    of the mesh exactly."""
    rgb = np.full((size, size, 3), 0.5, dtype=np.float32)
    tmax = size - 1
    for f in np.flatnonzero(mesh.paintable):
        tri = mesh.face_uvs[f] * tmax
        lo = np.clip(np.floor(tri.min(axis=0)).astype(int) - 3, 0, tmax)
        hi = np.clip(np.ceil(tri.max(axis=0)).astype(int) + 3, 0, tmax)
        rgb[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1] = mesh.base_colors[f]
    return TextureMap(rgb, trainable_mask_from_mesh(mesh, size))


# ---------------------------------------------------------------------------
# persistence


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write-then-rename so readers never observe a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_texture_raw(tex: TextureMap, path: str | Path) -> None:
    header = _RAW_MAGIC + struct.pack("<III", _RAW_VERSION, tex.height, tex.width)
    body = tex.rgb.astype("<f4").tobytes() + tex.trainable_mask.astype(np.uint8).tobytes()
    atomic_write_bytes(path, header + body)


def load_texture_raw(path: str | Path) -> TextureMap:
    data = Path(path).read_bytes()
    if data[:4] != _RAW_MAGIC:
        raise TextureError(f"{path}: not a raw texture file")
    version, h, w = struct.unpack("<III", data[4:16])
    if version != _RAW_VERSION:
        raise TextureError(f"{path}: unsupported raw texture version {version}")
    need = 16 + h * w * 3 * 4 + h * w
    if len(data) != need:
        raise TextureError(f"{path}: truncated raw texture ({len(data)} != {need} bytes)")
    rgb = np.frombuffer(data, dtype="<f4", count=h * w * 3, offset=16).reshape(h, w, 3)
    mask = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=16 + h * w * 12)
    return TextureMap(rgb.copy(), mask.reshape(h, w).astype(bool))


def save_texture_png(tex: TextureMap, path: str | Path) -> None:
    img = Image.fromarray((np.clip(tex.rgb, 0, 1) * 255.0).round().astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_texture_png(path: str | Path) -> TextureMap:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return TextureMap(arr, np.ones(arr.shape[:2], dtype=bool))
