"""Simulated core-grid kernels for attention weights: bfloat16 tiles, a
multi-core softmax, and a fused matmul + scaling + softmax."""

from .capacity import CapacityReport, capacity_reports, n_max_cpu, n_max_grid_fused, n_max_grid_softmax
from .errors import (
    DimensionError,
    KernelError,
    NonFiniteInput,
    OracleMismatch,
    PlacementError,
    SpecError,
    SramOverflow,
)
from .fused import (
    DistributedScores,
    FusedConfig,
    blocked_matmul,
    distribute,
    fused_attention_weights,
    fused_softmax,
    scale_scores,
)
from .grid import DEFAULT_WEIGHTS, OP_KINDS, CoreGrid, CostLedger, GridConfig, weighted_cost
from .numerics import (
    BF16_TOLERANCE,
    TiledMatrix,
    bf16_bits_to_f32,
    bf16_from_f32,
    f32_to_bf16_bits,
    oracle_attention_weights,
    read_matrix,
    tilize,
    untilize,
    write_matrix,
)
from .softmax import ExpCounter, RowAssignment, cpu_softmax, distribute_rows, grid_softmax, max_softmax_rows_check

__version__ = "0.1.0"
