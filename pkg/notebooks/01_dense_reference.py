"""
Dense reference cell
====================

The dense RNN and LSTM steps are the oracle every sparse path is checked
against.  This script folds the input projection into the bias, runs a short
sequence and shows the sign-of-zero behaviour the sentinel relies on.
"""

# %%
import numpy as np

from sparse_persistent import precompute_input, run_sequence_dense
from sparse_persistent.dense import ascending_matvec, max_relative_error

rng = np.random.default_rng(0)
hidden, inputs, batch, steps = 8, 3, 2, 5

u = (0.4 * rng.standard_normal((hidden, hidden))).astype(np.float32)
w = rng.standard_normal((hidden, inputs)).astype(np.float32)
x_seq = rng.standard_normal((steps, inputs, batch)).astype(np.float32)
b = np.zeros(hidden, dtype=np.float32)

# %% The input term W x_t does not depend on h, so it is computed for all steps up front.
b_prime = precompute_input(w, x_seq, b)
print("b' shape (T, H, B):", b_prime.shape)

h0 = np.zeros((hidden, batch), dtype=np.float32)
out = run_sequence_dense(u, h0, b_prime, "tanh", trace=True)
print("h_T[:, 0] =", np.round(out.h[:, 0], 4))
print("per-step max |h|:", [round(float(np.abs(h).max()), 3) for h in out.trace])

# %% Columns are summed in ascending order starting from the first product,
# so a row whose products are all -0.0 stays -0.0 instead of turning into +0.0.
z = ascending_matvec(np.array([[1.0, 2.0]], np.float32), np.array([[-0.0], [-0.0]], np.float32))
print("all -0.0 products give bits", hex(int(z.view(np.uint32)[0, 0])))

# %% The comparison metric floors the denominator so cancelling elements do not dominate.
a = out.h + np.float32(1e-7)
print("max relative error after a 1e-7 nudge:", max_relative_error(a, out.h))

# %% LSTM: the gate matrix stacks [i; f; g; o] row blocks.
u4 = (0.3 * rng.standard_normal((4 * hidden, hidden))).astype(np.float32)
bias4 = (0.1 * rng.standard_normal((steps, 4 * hidden, batch))).astype(np.float32)
lstm = run_sequence_dense(u4, h0, bias4, c0=np.zeros_like(h0))
print("LSTM h_T[:, 0] =", np.round(lstm.h[:, 0], 4))
print("LSTM c_T[:, 0] =", np.round(lstm.c[:, 0], 4))
