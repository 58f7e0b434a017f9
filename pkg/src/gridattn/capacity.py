"""Closed-form maximum sequence lengths for the three softmax implementations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .grid import GridConfig
from .numerics import TILE

FLOAT32_BYTES = 4
DEFAULT_HOST_MEMORY = 8 * 1024**3


@dataclass(frozen=True)
class CapacityReport:
    implementation: str
    n_max: int
    assumptions: tuple = field(default_factory=tuple)


def n_max_cpu(memory_bytes: int) -> int:
    """Largest square float32 matrix an in-place CPU softmax can hold."""
    if memory_bytes <= 0:
        raise ValueError("memory_bytes must be positive")
    return math.isqrt(memory_bytes // FLOAT32_BYTES)


def n_max_grid_softmax(config: GridConfig | None = None) -> int:
    """A full row of tiles must fit in one core's SRAM; the row count is unbounded."""
    config = config or GridConfig()
    return config.budget_tiles * TILE


def n_max_grid_fused(config: GridConfig | None = None, subgrid_rows: int | None = None) -> int:
    """Side of the largest square block one core holds, times the sub-grid height."""
    config = config or GridConfig()
    subgrid_rows = config.compute_rows if subgrid_rows is None else subgrid_rows
    if subgrid_rows < 1:
        raise ValueError("subgrid_rows must be at least 1")
    return math.isqrt(config.sram_scalars) * subgrid_rows


def capacity_reports(config: GridConfig | None = None, memory_bytes: int = DEFAULT_HOST_MEMORY,
                     subgrid_rows: int | None = None) -> list[CapacityReport]:
    config = config or GridConfig()
    subgrid_rows = config.compute_rows if subgrid_rows is None else subgrid_rows
    return [
        CapacityReport("cpu_inplace", n_max_cpu(memory_bytes), (("memory_bytes", memory_bytes),)),
        CapacityReport(
            "grid_softmax",
            n_max_grid_softmax(config),
            (("sram_usable_tiles", config.sram_usable_tiles), ("reserve_tiles", config.reserve_tiles)),
        ),
        CapacityReport(
            "grid_fused",
            n_max_grid_fused(config, subgrid_rows),
            (("sram_scalars", config.sram_scalars), ("subgrid_rows", subgrid_rows)),
        ),
    ]


def format_reports(reports) -> str:
    lines = [f"{'implementation':<14} {'n_max':>8}  assumptions"]
    for rep in reports:
        assumed = ", ".join(f"{k}={v}" for k, v in rep.assumptions)
        lines.append(f"{rep.implementation:<14} {rep.n_max:>8}  {assumed}")
    return "\n".join(lines)


def fused_block_tiles(n: int, subgrid: tuple[int, int], block_tiles: int = 1) -> int:
    """SRAM tiles one core of the fused kernel reserves: score block plus Q and K.T staging blocks."""
    R, C = subgrid
    rb, cb = n // TILE // R, n // TILE // C
    return rb * cb + rb * block_tiles + block_tiles * cb


def n_max_fused_practical(config: GridConfig | None = None, subgrid: tuple[int, int] = (8, 8),
                          block_tiles: int = 1) -> int:
    """Largest evenly partitioned ``n`` whose fused-kernel buffers fit the per-core budget.

    Smaller than :func:`n_max_grid_fused` because the matmul staging buffers
    share SRAM with the score block.  Returns 0 if nothing fits.
    """
    config = config or GridConfig()
    R, C = subgrid
    step = TILE * math.lcm(R, C)
    n = 0
    while fused_block_tiles(n + step, subgrid, block_tiles) <= config.budget_tiles:
        n += step
    return n
