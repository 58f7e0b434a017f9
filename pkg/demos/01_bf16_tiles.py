# coding: utf-8
# # Bfloat16 values and 32x32 tiles
#
# Everything stored on the simulated grid is a bfloat16 bit pattern. This
# walk-through shows what rounding does to ordinary numbers and how a dense
# matrix is cut into tiles.

# %%
import numpy as np

from gridattn import bf16_from_f32, bf16_bits_to_f32, tilize, untilize

# %% [markdown]
# bfloat16 keeps the float32 exponent and 7 mantissa bits, so 0.1 becomes the
# nearest representable value.

# %%
for x in (0.1, 1.0, 1 / 3, 3.14159, 65504.0):
    bits = bf16_from_f32(x)
    print(f"{x:>10.6g} -> 0x{int(bits):04X} -> {float(bf16_bits_to_f32(bits)):.8g}")

# %% [markdown]
# Halfway cases round to the even neighbour.

# %%
just_between = np.array([1 + 2**-8, 1 + 3 * 2**-8], dtype=np.float32)
print(bf16_bits_to_f32(bf16_from_f32(just_between)))

# %% [markdown]
# A 64x96 matrix becomes a 2x3 grid of tiles, and element (32i + a, 32j + b)
# sits at `tiles[i, j, a, b]`.

# %%
m = np.arange(64 * 96, dtype=np.float64).reshape(64, 96) / 100
t = tilize(m)
print(t.tiles.shape, t.tile(1, 2)[0, :4])
print(bf16_bits_to_f32(t.tiles[1, 2, 0, 0]), m[32, 64])

# %%
back = untilize(t)
print("max relative rounding error:", np.max(np.abs(back - m) / np.maximum(np.abs(m), 1e-30)))
