"""Fused matmul + score scaling + softmax on a sub-grid of cores.

Scores ``Q @ K.T`` are produced by a blocked multicast matmul: the first
sub-grid column loads blocks of ``Q`` and multicasts them along its row, the
first sub-grid row loads blocks of ``K.T`` and multicasts them down its
column, and every core accumulates its own output block.  The scores never
leave SRAM: each core scales them, takes local row maxima, gathers its row
peers' maxima, exponentiates, gathers peer sums, normalises, and finally
writes its block of attention weights to DRAM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .grid import CoreGrid
from .numerics import TILE, TILE_SCALARS, TiledMatrix, bf16_bits_to_f32, f32_to_bf16_bits
from .softmax import check_finite, exponentiate, normalize_rows, row_max, row_sum, subtract_rows


@dataclass(frozen=True)
class FusedConfig:
    d_k: int = 128
    subgrid: tuple[int, int] = (8, 8)
    # tiles along d_k moved per multicast step
    block_tiles: int = 1

    def __post_init__(self):
        if self.d_k <= 0 or self.d_k % TILE:
            raise DimensionError(f"d_k must be a positive multiple of {TILE}, got {self.d_k}")
        if min(self.subgrid) < 1:
            raise DimensionError(f"bad sub-grid {self.subgrid}")
        if self.block_tiles < 1 or (self.d_k // TILE) % self.block_tiles:
            raise DimensionError(f"block_tiles={self.block_tiles} must divide d_k/32={self.d_k // TILE}")

    @property
    def steps(self) -> int:
        return self.d_k // TILE // self.block_tiles


@dataclass
class DistributedScores:
    """A matrix resident in SRAM, block ``(r, c)`` on core ``(r, c)`` of the sub-grid."""

    grid: CoreGrid
    rows: int
    cols: int
    subgrid: tuple[int, int]
    buffer: str = "scores"

    @property
    def block_shape(self) -> tuple[int, int]:
        R, C = self.subgrid
        return self.rows // TILE // R, self.cols // TILE // C

    def coords(self):
        R, C = self.subgrid
        return [(r, c) for r in range(R) for c in range(C)]

    def block(self, coord) -> np.ndarray:
        return self.grid.core(coord).read(self.buffer)

    def to_tiled(self) -> TiledMatrix:
        rb, cb = self.block_shape
        out = TiledMatrix.zeros(self.rows, self.cols)
        for r, c in self.coords():
            out.tiles[r * rb:(r + 1) * rb, c * cb:(c + 1) * cb] = self.block((r, c))
        return out


def distribute(t: TiledMatrix, grid: CoreGrid, subgrid=(1, 1), buffer: str = "scores") -> DistributedScores:
    """Place the blocks of ``t`` straight into sub-grid SRAM (host-side staging, no ledger charge)."""
    R, C = subgrid
    _check_placement(FusedConfig(subgrid=subgrid), grid)
    if t.tile_rows % R or t.tile_cols % C:
        raise DimensionError(f"{t.tile_rows}x{t.tile_cols} tiles do not partition over {R}x{C}")
    scores = DistributedScores(grid, t.rows, t.cols, tuple(subgrid), buffer)
    rb, cb = scores.block_shape
    for r, c in scores.coords():
        core = grid.core((r, c))
        core.alloc(buffer, rb * cb)
        core.store(buffer, t.tiles[r * rb:(r + 1) * rb, c * cb:(c + 1) * cb].copy())
    return scores


def _check_placement(cfg: FusedConfig, grid: CoreGrid):
    R, C = cfg.subgrid
    if R > grid.config.compute_rows or C > grid.config.grid_cols:
        raise DimensionError(
            f"sub-grid {R}x{C} does not fit the {grid.config.compute_rows}x{grid.config.grid_cols} compute region"
        )


def _check_operands(q: TiledMatrix, k: TiledMatrix, cfg: FusedConfig, grid: CoreGrid):
    _check_placement(cfg, grid)
    R, C = cfg.subgrid
    if q.cols != cfg.d_k or k.cols != cfg.d_k:
        raise DimensionError(f"Q is {q.rows}x{q.cols} and K is {k.rows}x{k.cols}; both need d_k={cfg.d_k} columns")
    if q.tile_rows % R or k.tile_rows % C:
        raise DimensionError(
            f"{q.tile_rows}x{k.tile_rows} score tiles do not partition evenly over a {R}x{C} sub-grid"
        )
    check_finite(q.tiles, "Q")
    check_finite(k.tiles, "K")


def _stage_inputs(q: TiledMatrix, k: TiledMatrix, grid: CoreGrid):
    grid.dram.put("q", q.tiles)
    # host loader stores K transposed, tile by tile, so K.T flows down columns
    grid.dram.put("kt", np.ascontiguousarray(k.tiles.transpose(1, 0, 3, 2)))


def _block_matmul(a_tiles, b_tiles):
    """Exact-in-float64 product of a (rb, kb) and a (kb, cb) tile block, rounded to float32 tiles."""
    rb, kb = a_tiles.shape[:2]
    cb = b_tiles.shape[1]
    a = bf16_bits_to_f32(a_tiles).transpose(0, 2, 1, 3).reshape(rb * TILE, kb * TILE)
    b = bf16_bits_to_f32(b_tiles).transpose(0, 2, 1, 3).reshape(kb * TILE, cb * TILE)
    prod = (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    return prod.reshape(rb, TILE, cb, TILE).transpose(0, 2, 1, 3)


def _matmul_phases(ctx, cfg: FusedConfig, rb: int, cb: int):
    r, c = ctx.coord
    R, C = cfg.subgrid
    bt = cfg.block_tiles
    ctx.alloc("q_in", rb * bt)
    ctx.alloc("k_in", bt * cb)
    ctx.alloc("scores", rb * cb)
    # every core has reserved its SRAM before any tile moves
    yield
    acc = np.zeros((rb, cb, TILE, TILE), dtype=np.float32)
    for s in range(cfg.steps):
        ks = slice(s * bt, (s + 1) * bt)
        if c == 0:
            blk = ctx.dram_read("q", (slice(r * rb, (r + 1) * rb), ks))
            ctx.count("load", blk.size // TILE_SCALARS)
            ctx.store("q_in", blk)
            ctx.core.blocks.append(("A", r, s))
            ctx.multicast_row("q_in", blk, span=(0, C), tag=("A", r, s))
        if r == 0:
            blk = ctx.dram_read("kt", (ks, slice(c * cb, (c + 1) * cb)))
            ctx.count("load", blk.size // TILE_SCALARS)
            ctx.store("k_in", blk)
            ctx.core.blocks.append(("B", c, s))
            ctx.multicast_col("k_in", blk, span=(0, R), tag=("B", c, s))
        yield
        acc += _block_matmul(ctx.read("q_in"), ctx.read("k_in"))
        ctx.count("matmul_tile", rb * cb * bt)
        yield
    ctx.store("scores", f32_to_bf16_bits(acc))
    ctx.core.free("q_in")
    ctx.core.free("k_in")


def scale_factor(d_k: int) -> np.float32:
    return np.float32(1.0 / math.sqrt(d_k))


def _scale_step(ctx, d_k):
    x = ctx.read("scores")
    ctx.store("scores", f32_to_bf16_bits(bf16_bits_to_f32(x) * scale_factor(d_k)))
    ctx.count("scale", x.size // TILE_SCALARS)


def _xcore_tiles(peers: int, rb: int) -> int:
    # one 32-scalar statistic per tile row per peer, packed into whole tiles
    return math.ceil(peers * rb * TILE / TILE_SCALARS)


def _softmax_phases(ctx, C: int):
    r, c = ctx.coord
    x = ctx.read("scores")
    rb, cb = x.shape[:2]
    n = rb * cb
    row = [(r, j) for j in range(C)]

    local_max = row_max(x)
    ctx.count("reduce_max", n)
    ctx.publish("local_max", local_max)
    yield
    global_max = ctx.peer(row[0], "local_max")
    for peer in row[1:]:
        global_max = np.maximum(global_max, ctx.peer(peer, "local_max"))
    ctx.count("xcore_reduce", _xcore_tiles(C - 1, rb))

    x = subtract_rows(x, global_max)
    ctx.count("subtract", n)
    x = exponentiate(x)
    ctx.count("exponentiate", n)
    local_sum = row_sum(x)
    ctx.count("reduce_sum", n)
    ctx.store("scores", x)
    ctx.publish("local_sum", local_sum)
    yield
    global_sum = ctx.peer(row[0], "local_sum")
    for peer in row[1:]:
        global_sum = global_sum + ctx.peer(peer, "local_sum")
    ctx.count("xcore_reduce", _xcore_tiles(C - 1, rb))

    ctx.store("scores", normalize_rows(x, global_sum))
    ctx.count("normalize", n)
    ctx.publish("global_max", global_max)
    ctx.publish("global_sum", global_sum)


def _write_step(ctx, rb, cb):
    r, c = ctx.coord
    x = ctx.read("scores")
    ctx.dram_write("weights", (slice(r * rb, (r + 1) * rb), slice(c * cb, (c + 1) * cb)), x)
    ctx.count("write", x.size // TILE_SCALARS)


def _program(coords, kernel):
    return {coord: kernel for coord in coords}


def blocked_matmul(q: TiledMatrix, k: TiledMatrix, cfg: FusedConfig, grid: CoreGrid) -> DistributedScores:
    """Leave block ``(r, c)`` of ``Q @ K.T`` resident on core ``(r, c)``."""
    _check_operands(q, k, cfg, grid)
    _stage_inputs(q, k, grid)
    scores = DistributedScores(grid, q.rows, k.rows, cfg.subgrid)
    rb, cb = scores.block_shape
    grid.run_program(_program(scores.coords(), lambda ctx: _matmul_phases(ctx, cfg, rb, cb)))
    return scores


def scale_scores(scores: DistributedScores, d_k: int) -> DistributedScores:
    scores.grid.run_program(_program(scores.coords(), lambda ctx: _scale_step(ctx, d_k)))
    return scores


def fused_softmax(scores: DistributedScores) -> DistributedScores:
    """Row softmax of resident scores; every core computes the global reductions itself."""
    check_finite(np.stack([scores.block(c) for c in scores.coords()]), "scores")
    C = scores.subgrid[1]
    scores.grid.run_program(_program(scores.coords(), lambda ctx: _softmax_phases(ctx, C)))
    return scores


def fused_attention_weights(
    q: TiledMatrix, k: TiledMatrix, cfg: FusedConfig | None = None, grid: CoreGrid | None = None
) -> TiledMatrix:
    """``softmax(Q K^T / sqrt(d_k))`` as one grid program; only the weights touch DRAM."""
    cfg = cfg or FusedConfig()
    grid = grid if grid is not None else CoreGrid()
    _check_operands(q, k, cfg, grid)
    _stage_inputs(q, k, grid)
    out = TiledMatrix.zeros(q.rows, k.rows)
    grid.dram.put("weights", out.tiles)
    R, C = cfg.subgrid
    rb, cb = q.tile_rows // R, k.tile_rows // C

    def kernel(ctx):
        yield from _matmul_phases(ctx, cfg, rb, cb)
        _scale_step(ctx, cfg.d_k)
        yield from _softmax_phases(ctx, C)
        _write_step(ctx, rb, cb)
        ctx.core.free("scores")

    grid.run_program(_program([(r, c) for r in range(R) for c in range(C)], kernel))
    return out
