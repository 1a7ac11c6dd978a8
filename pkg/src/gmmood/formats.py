"""Binary container for dense feature grids (FMAP files).

Layout, all little-endian: magic ``b"FMAP"``, version (uint16), then
H, W, D (uint32 each); payload of H*W*D float32 values, row-major with
the feature dimension fastest; H*W validity bytes (0 or 1) appended
after the payload.  Declared sizes must match the byte length exactly.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

_HEADER = struct.Struct("<4sHIII")


@dataclass
class FeatureMap:
    """H x W grid of D-dimensional feature vectors with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 3:
            raise ShapeError(f"feature values must be (H, W, D), got {self.values.shape}")
        if self.valid.shape != self.values.shape[:2]:
            raise ShapeError(
                f"validity mask {self.valid.shape} does not match grid "
                f"{self.values.shape[:2]}"
            )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_grid(cls, grid, valid) -> "FeatureMap":
        """Wrap a single-channel H x W grid as a D = 1 feature map."""
        grid = np.asarray(grid, dtype=np.float32)
        if grid.ndim != 2:
            raise ShapeError(f"expected a 2-d grid, got shape {grid.shape}")
        return cls(grid[:, :, None], valid)

    def grid(self) -> np.ndarray:
        """Return the single channel of a D = 1 map as an H x W array."""
        if self.dim != 1:
            raise ShapeError(f"grid() requires D = 1, map has D = {self.dim}")
        return self.values[:, :, 0]


def feature_map_to_bytes(fmap: FeatureMap) -> bytes:
    header = _HEADER.pack(FMAP_MAGIC, FMAP_VERSION, fmap.height, fmap.width, fmap.dim)
    payload = np.ascontiguousarray(fmap.values, dtype="<f4").tobytes()
    validity = fmap.valid.astype(np.uint8).tobytes()
    return header + payload + validity


def feature_map_from_bytes(data: bytes) -> FeatureMap:
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated FMAP container: {len(data)} bytes")
    magic, version, h, w, d = _HEADER.unpack_from(data)
    if magic != FMAP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FMAP_MAGIC!r}")
    if version != FMAP_VERSION:
        raise FormatError(f"unsupported FMAP version {version}")
    expected = _HEADER.size + 4 * h * w * d + h * w
    if len(data) != expected:
        raise FormatError(f"FMAP size mismatch: declared {expected} bytes, got {len(data)}")
    off = _HEADER.size
    values = np.frombuffer(data, dtype="<f4", count=h * w * d, offset=off)
    values = values.reshape(h, w, d).copy()
    valid = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=off + 4 * h * w * d)
    return FeatureMap(values, valid.reshape(h, w) != 0)


def write_feature_map(fmap: FeatureMap, path) -> None:
    Path(path).write_bytes(feature_map_to_bytes(fmap))


def read_feature_map(path) -> FeatureMap:
    return feature_map_from_bytes(Path(path).read_bytes())
