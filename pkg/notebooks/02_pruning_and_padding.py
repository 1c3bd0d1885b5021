"""
Pruning, padding and the on-disk layer
======================================

Magnitude pruning keeps the largest weights, either globally or per row.
Global pruning leaves rows of different lengths, and padding with inert
(index 0, +0.0) pairs evens them out at the cost of extra registers.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from sparse_persistent import (
    effective_layer_size,
    keep_count,
    load_layer,
    pad_rows,
    prune_naive,
    prune_row_balanced,
    reconstruct_dense,
    save_layer,
)
from sparse_persistent.workloads import random_dense

hidden, density = 1152, 0.1
m = random_dense(hidden, hidden, seed=42)

# %% Global (naive) pruning keeps ceil(d * H^2) weights wherever they are.
naive = prune_naive(m, density)
print("kept", naive.nnz, "=", keep_count(density, hidden * hidden))
print("row lengths: min", naive.lengths.min(), "max", naive.lengths.max())

padded = pad_rows(naive)
overhead = padded.stored_pairs / naive.stored_pairs - 1
print(f"after padding every row holds {padded.pairs_per_row} pairs; overhead {overhead:.1%}")
assert np.array_equal(reconstruct_dense(padded), reconstruct_dense(naive))

# %% Skewed matrices make the overhead worse: here a tenth of the rows are 3x larger.
skewed = m.copy()
skewed[: hidden // 10] *= 3
sk = prune_naive(skewed, density)
print(f"skewed: max row {sk.lengths.max()} vs mean {sk.lengths.mean():.0f}, "
      f"overhead {pad_rows(sk).stored_pairs / sk.stored_pairs - 1:.0%}")

# %% Row-balanced pruning keeps ceil(d * H) per row, so padding has nothing to do.
balanced = prune_row_balanced(m, density)
print("row-balanced lengths:", set(balanced.lengths.tolist()), "padded already:",
      pad_rows(balanced) is balanced)

# %% A sparse layer with H=5760 at 1% holds as many weights as a dense layer of this size.
print("effective layer size of 5760 at 1%:", effective_layer_size(5760, 0.01))

# %% Layers round-trip through the little-endian SPRN format.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "layer.sprn"
    save_layer(padded, path)
    back = load_layer(path)
    print("file bytes:", path.stat().st_size, " identical after reload:", back.identical(padded))
