# coding: utf-8
# # How long can the sequence be?
#
# Each strategy is bounded by a different memory: host RAM for the CPU, one
# core's SRAM for a full row, or a core's share of the score matrix for the
# fused kernel.

# %%
import numpy as np

from gridattn import CoreGrid, GridConfig, SramOverflow, grid_softmax, tilize
from gridattn.capacity import capacity_reports, format_reports, n_max_fused_practical

print(format_reports(capacity_reports()))

# %% [markdown]
# The softmax bound is exact in the simulator: one more tile column does not fit.

# %%
for cols in (15616, 15648):
    try:
        grid_softmax(tilize(np.zeros((32, cols), dtype=np.float32)), CoreGrid())
        print(cols, "fits")
    except SramOverflow as exc:
        print(cols, "->", exc)

# %% [markdown]
# The analytic fused bound ignores the Q and K^T staging blocks. Counting
# them gives a lower practical limit on an 8x8 sub-grid.

# %%
print("practical fused n on 8x8:", n_max_fused_practical(GridConfig(), (8, 8)))
print("practical fused n on 9x12:", n_max_fused_practical(GridConfig(), (9, 12)))

# %% [markdown]
# Work grows with n^2: doubling n roughly quadruples the ledger total.

# %%
prev = None
for n in (1024, 2048, 4096):
    g = CoreGrid()
    grid_softmax(tilize(np.zeros((n, n), dtype=np.float32)), g)
    total = g.total_ledger().total()
    print(n, total, "" if prev is None else f"x{total / prev:.2f}")
    prev = total
