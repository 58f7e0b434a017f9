"""Bfloat16 storage, 32x32 tiles, and the float64 reference oracle.

Every value that lives in simulated SRAM or DRAM is a bfloat16 bit pattern
held in a ``uint16`` array.  Arithmetic happens in float32 and is rounded back
to bfloat16 (round-to-nearest-even) whenever a result is stored into a tile.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError

TILE = 32
TILE_SCALARS = TILE * TILE
TILE_BYTES = 2 * TILE_SCALARS

BF16_QNAN = 0x7FC0

# max abs elementwise error (and row-sum error) tolerated against float64 references
BF16_TOLERANCE = 1e-2
GFAT_MAGIC = b"GFAT"


def f32_to_bf16_bits(x) -> np.ndarray:
    """Round float32 values to bfloat16 bit patterns (nearest, ties to even).

    Infinities are kept, NaNs become a quiet NaN with the input's sign.
    """
    f = np.array(x, dtype=np.float32, copy=True, ndmin=1)
    u = f.view(np.uint32)
    bias = np.uint32(0x7FFF) + ((u >> np.uint32(16)) & np.uint32(1))
    out = ((u + bias) >> np.uint32(16)).astype(np.uint16)
    nan = np.isnan(f)
    if nan.any():
        sign = (u[nan] >> np.uint32(16)).astype(np.uint16) & np.uint16(0x8000)
        out[nan] = sign | np.uint16(BF16_QNAN)
    return out.reshape(np.shape(x))


def bf16_bits_to_f32(bits) -> np.ndarray:
    """Exact widening of bfloat16 bit patterns to float32."""
    b = np.asarray(bits, dtype=np.uint16)
    return (b.astype(np.uint32) << np.uint32(16)).view(np.float32)


def bf16_from_f32(x):
    """Scalar-friendly wrapper: returns ``np.uint16`` for a scalar input."""
    bits = f32_to_bf16_bits(x)
    return bits[()] if bits.ndim == 0 else bits


def round_bf16(x) -> np.ndarray:
    """float32 -> bfloat16 -> float32, i.e. what a tile store does to a value."""
    return bf16_bits_to_f32(f32_to_bf16_bits(x))


@dataclass(eq=False)
class TiledMatrix:
    """A ``rows x cols`` matrix stored as a ``(rows/32, cols/32, 32, 32)`` grid of tiles.

    Tiles are row-major internally; ``tiles[i, j, a, b]`` is element
    ``(32*i + a, 32*j + b)``.
    """

    rows: int
    cols: int
    tiles: np.ndarray

    def __post_init__(self):
        _check_dims(self.rows, self.cols)
        want = (self.rows // TILE, self.cols // TILE, TILE, TILE)
        if self.tiles.shape != want or self.tiles.dtype != np.uint16:
            raise DimensionError(f"tile array {self.tiles.shape}/{self.tiles.dtype} does not match {want}/uint16")

    @property
    def tile_rows(self) -> int:
        return self.rows // TILE

    @property
    def tile_cols(self) -> int:
        return self.cols // TILE

    @property
    def n_tiles(self) -> int:
        return self.tile_rows * self.tile_cols

    def tile(self, i: int, j: int) -> np.ndarray:
        return self.tiles[i, j]

    def __eq__(self, other):
        if not isinstance(other, TiledMatrix):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and np.array_equal(self.tiles, other.tiles)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "TiledMatrix":
        _check_dims(rows, cols)
        return cls(rows, cols, np.zeros((rows // TILE, cols // TILE, TILE, TILE), dtype=np.uint16))


def _check_dims(rows, cols):
    if rows <= 0 or cols <= 0 or rows % TILE or cols % TILE:
        raise DimensionError(f"matrix dims must be positive multiples of {TILE}, got {rows}x{cols}")


def tilize(m) -> TiledMatrix:
    """Convert a dense matrix (via float32) to bfloat16 tiles."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    rows, cols = m.shape
    _check_dims(rows, cols)
    bits = f32_to_bf16_bits(m.astype(np.float32, copy=False))
    tiles = bits.reshape(rows // TILE, TILE, cols // TILE, TILE).transpose(0, 2, 1, 3)
    return TiledMatrix(rows, cols, np.ascontiguousarray(tiles))


def untilize(t: TiledMatrix, dtype=np.float64) -> np.ndarray:
    """Inverse of :func:`tilize`; the bfloat16 widening is exact."""
    f = bf16_bits_to_f32(t.tiles).transpose(0, 2, 1, 3).reshape(t.rows, t.cols)
    return f.astype(dtype)


# Row reductions shared by every on-grid softmax.  Both fold strictly left to
# right (cumsum is sequential) so results never depend on array layout.

def tile_row_max(block: np.ndarray) -> np.ndarray:
    """Per-scalar-row max over ``(..., n_tiles, 32, 32)`` float32 tiles -> ``(..., 32)``."""
    return block.max(axis=-1).max(axis=-2)


def tile_row_sum(block: np.ndarray) -> np.ndarray:
    """Per-scalar-row float32 sum: 32-lane fold inside each tile, then a fold across tiles."""
    lanes = np.cumsum(block, axis=-1, dtype=np.float32)[..., -1]
    return np.cumsum(lanes, axis=-2, dtype=np.float32)[..., -1, :]


def oracle_attention_weights(q, k, d_k: int) -> np.ndarray:
    """float64 ``softmax(q @ k.T / sqrt(d_k))`` with max subtraction."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != d_k or k.shape[1] != d_k:
        raise DimensionError(f"Q {q.shape} and K {k.shape} must both have {d_k} columns")
    return stable_softmax(q @ k.T / np.sqrt(d_k))


def stable_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def write_matrix(path, m) -> None:
    """Write a GFAT file: ``b"GFAT"``, u32 rows, u32 cols, float32 row-major (little-endian)."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    rows, cols = m.shape
    with open(path, "wb") as f:
        f.write(GFAT_MAGIC + struct.pack("<II", rows, cols))
        f.write(m.astype("<f4").tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != GFAT_MAGIC:
        raise ValueError(f"{path}: not a GFAT file")
    rows, cols = struct.unpack_from("<II", data, 4)
    body = np.frombuffer(data, dtype="<f4", offset=12)
    if body.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} floats, found {body.size}")
    return body.reshape(rows, cols).astype(np.float64)
