# %% [markdown]
# # Fixed 2D sinusoidal positions, dropout, and interpolation
#
# The image encoder uses a parameter-free sin/cos table over the token grid.
# During pretraining the whole table is withheld per image with some
# probability (all-or-nothing, not per token); at a new resolution the table
# is bilinearly interpolated rather than recomputed.

# %%
import numpy as np

from ovmask.autodiff import Tensor
from ovmask.encoders import apply_ped, interpolate_pe, sinusoidal_pe_2d

table = sinusoidal_pe_2d(4, 4, 32)
print("table shape:", table.shape)
print("row (0,0), first sin band and first cos band:", table[0, 0], table[0, 8])

# %% [markdown]
# ## Whole-table dropout
#
# With probability `ped_prob` an image keeps raw content tokens only. Rows
# of dropped images are bitwise untouched, which is what lets the
# "no positions at all" ablation reuse the same code path.

# %%
rng = np.random.default_rng(0)
tokens = Tensor(rng.normal(size=(6, 16, 32)).astype(np.float32))
out, kept = apply_ped(tokens, table, ped_prob=0.5, mode="train", rng=rng)
print("kept positions per image:", kept)
changed = [not np.array_equal(out.data[i], tokens.data[i]) for i in range(6)]
print("rows changed:            ", np.array(changed))

# %% [markdown]
# ## Resolution change
#
# Finetuning runs at a larger grid; the pretraining table is resized
# channelwise with align-corners bilinear interpolation. Identity resizes
# are bitwise; a 2x2 -> 3x3 resize puts the corner mean at the center.

# %%
same = interpolate_pe(table, (4, 4), (4, 4))
print("identity resize bitwise:", same.tobytes() == table.tobytes())

small = rng.normal(size=(4, 8)).astype(np.float32)
up = interpolate_pe(small, (2, 2), (3, 3)).reshape(3, 3, 8)
print("center == mean of corners:", np.allclose(up[1, 1], small.mean(axis=0), atol=1e-6))

big = interpolate_pe(table, (4, 4), (8, 8))
print("4x4 table ->", big.shape)
