"""CPU baseline softmax and the dedicated multi-core grid softmax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput
from .grid import CoreGrid, GridConfig
from .numerics import TILE, TiledMatrix, bf16_bits_to_f32, f32_to_bf16_bits, tile_row_max, tile_row_sum


@dataclass
class ExpCounter:
    """Counts scalar exponential evaluations made by :func:`cpu_softmax`."""

    count: int = 0


@dataclass
class SoftmaxStats:
    row_max: np.ndarray
    row_sum: np.ndarray


def softmax_stats(z) -> SoftmaxStats:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=1)
    return SoftmaxStats(m, np.exp(z - m[:, None]).sum(axis=1))


def cpu_softmax(z, mode: str = "cache", counter: ExpCounter | None = None) -> np.ndarray:
    """Row-by-row stable softmax in float64.

    ``mode="cache"`` keeps each row's exponentials between the sum and the
    normalisation; ``mode="recompute"`` evaluates them a second time.  The
    outputs are bit-identical, only ``counter.count`` differs.
    """
    if mode not in ("cache", "recompute"):
        raise ValueError(f"unknown mode {mode!r}")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise NonFiniteInput("cpu_softmax input contains NaN or Inf")
    counter = counter if counter is not None else ExpCounter()
    out = np.empty_like(z)
    for i, row in enumerate(z):
        shifted = row - row.max()
        if mode == "cache":
            e = np.exp(shifted)
            counter.count += e.size
            out[i] = e / e.sum()
        else:
            total = np.exp(shifted).sum()
            out[i] = np.exp(shifted) / total
            counter.count += 2 * row.size
    return out


@dataclass(frozen=True)
class RowAssignment:
    counts: tuple[int, ...]
    min_rows_per_core: int
    n_cores_plus_one: int

    def starts(self) -> list[int]:
        """First tile row owned by each core."""
        return [int(s) for s in np.concatenate([[0], np.cumsum(self.counts)[:-1]])]


def distribute_rows(n_tile_rows: int, n_cores: int) -> RowAssignment:
    """Division with remainder; the remainder goes one row each to the first cores."""
    if n_cores < 1:
        raise ValueError("need at least one core")
    q, rest = divmod(n_tile_rows, n_cores)
    counts = tuple(q + 1 if i < rest else q for i in range(n_cores))
    return RowAssignment(counts, q, rest)


def max_softmax_rows_check(cols: int, config: GridConfig | None = None) -> bool:
    """True when a row of ``cols`` scalars fits in one core's SRAM budget."""
    config = config or GridConfig()
    return cols <= config.budget_tiles * TILE


# Tile-level softmax steps shared with the fused kernel.  Every step computes
# in float32 and rounds to bfloat16 as its result is stored into a tile.  Row
# vectors have shape (..., 32) and broadcast over (..., n_tiles, 32, 32).

def _rows(v):
    return v[..., None, :, None]


def subtract_rows(block, row_max):
    return f32_to_bf16_bits(bf16_bits_to_f32(block) - _rows(row_max))


def exponentiate(block):
    return f32_to_bf16_bits(np.exp(bf16_bits_to_f32(block)))


def normalize_rows(block, row_sum):
    return f32_to_bf16_bits(bf16_bits_to_f32(block) / _rows(row_sum))


def row_max(block):
    return tile_row_max(bf16_bits_to_f32(block))


def row_sum(block):
    return tile_row_sum(bf16_bits_to_f32(block))


def check_finite(tiles: np.ndarray, what: str = "input") -> None:
    # exponent field all ones marks Inf or NaN
    if ((tiles & np.uint16(0x7F80)) == np.uint16(0x7F80)).any():
        raise NonFiniteInput(f"{what} contains NaN or Inf")


def grid_softmax(z: TiledMatrix, grid: CoreGrid | None = None, n_cores: int | None = None) -> TiledMatrix:
    """Softmax over rows of tiles distributed across the compute cores.

    Each core handles its assigned tile rows one at a time with a single
    row-sized SRAM buffer: load, max, subtract, exponentiate, sum, normalize,
    write.
    """
    grid = grid if grid is not None else CoreGrid()
    check_finite(z.tiles)
    coords = grid.config.compute_coords()
    if n_cores is not None:
        coords = coords[:n_cores]
    assignment = distribute_rows(z.tile_rows, len(coords))
    tc = z.tile_cols

    grid.dram.put("softmax_in", z.tiles)
    out = np.zeros_like(z.tiles)
    grid.dram.put("softmax_out", out)

    def make_kernel(start, count):
        def kernel(ctx):
            ctx.alloc("row", tc)
            for i in range(start, start + count):
                ctx.store("row", ctx.dram_read("softmax_in", i))
                ctx.count("load", tc)
                x = ctx.read("row")
                m = row_max(x)
                ctx.count("reduce_max", tc)
                x = subtract_rows(x, m)
                ctx.count("subtract", tc)
                x = exponentiate(x)
                ctx.count("exponentiate", tc)
                s = row_sum(x)
                ctx.count("reduce_sum", tc)
                x = normalize_rows(x, s)
                ctx.count("normalize", tc)
                ctx.store("row", x)
                ctx.dram_write("softmax_out", i, x)
                ctx.count("write", tc)
            ctx.core.free("row")

        return kernel

    program = {
        coord: make_kernel(start, count)
        for coord, start, count in zip(coords, assignment.starts(), assignment.counts)
        if count > 0
    }
    grid.run_program(program)
    return TiledMatrix(z.rows, z.cols, out)
