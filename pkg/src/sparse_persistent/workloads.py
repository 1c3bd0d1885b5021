"""Seeded random workloads for tests, notebooks and the CLI."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dense import F32, precompute_input
from .sparse import SparseLayer, pad_rows, prune_naive, prune_row_balanced, reconstruct_dense

PRUNERS = {"naive": prune_naive, "row-balanced": prune_row_balanced}


def random_dense(rows: int, cols: int, seed, dist: str = "normal", scale: Optional[float] = None):
    """A float32 matrix with i.i.d. entries.

    ``normal`` draws N(0, scale^2) and ``uniform`` draws U(-scale, scale);
    the default scale is ``1 / sqrt(cols)``.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(cols) if scale is None else float(scale)
    if dist == "normal":
        m = rng.standard_normal((rows, cols)) * scale
    elif dist == "uniform":
        m = rng.uniform(-scale, scale, (rows, cols))
    else:
        raise ValueError(f"unknown distribution {dist!r}; expected 'normal' or 'uniform'")
    return m.astype(F32)


def contractive_sparse(rows: int, cols: int, density: float, seed, gain: float = 0.5,
                       pruning: str = "naive") -> SparseLayer:
    """Prune a Gaussian matrix, then rescale so the kept weights have spectral norm ``gain``.

    A gain below one keeps the recurrence contractive, so rounding
    differences between summation orders shrink instead of compounding.
    The result is padded.
    """
    prune = PRUNERS[pruning]
    m = random_dense(rows, cols, seed, scale=1.0)
    kept = reconstruct_dense(prune(m, density))
    norm = np.linalg.norm(kept.astype(np.float64), 2)
    if norm > 0:
        m = (m * (gain / norm)).astype(F32)
    return pad_rows(prune(m, density))


@dataclass
class Workload:
    """Everything a recurrent run needs: recurrent layer, initial state, per-step biases."""

    layer: SparseLayer
    h0: np.ndarray
    b_prime: np.ndarray  # (T, rows, B)
    c0: Optional[np.ndarray] = None

    @property
    def hidden(self) -> int:
        return self.layer.cols

    @property
    def batch(self) -> int:
        return self.h0.shape[1]

    @property
    def timesteps(self) -> int:
        return self.b_prime.shape[0]


def random_inputs(layer: SparseLayer, batch: int, timesteps: int, seed, cell: str = "rnn",
                  inputs: int = 8) -> Workload:
    """Seeded initial state and input-projected biases for an existing layer."""
    hidden, rows = layer.cols, layer.rows
    rng = np.random.default_rng([seed, 1])
    w = random_dense(rows, inputs, [seed, 2])
    x = rng.standard_normal((timesteps, inputs, batch)).astype(F32)
    bias = (0.1 * rng.standard_normal(rows)).astype(F32)
    b_prime = precompute_input(w, x, bias) if timesteps else np.zeros((0, rows, batch), F32)
    h0 = np.tanh(rng.standard_normal((hidden, batch))).astype(F32)
    c0 = (0.5 * rng.standard_normal((hidden, batch))).astype(F32) if cell == "lstm" else None
    return Workload(layer, h0, b_prime, c0)


def random_workload(hidden: int, density: float, batch: int, timesteps: int, seed,
                    cell: str = "rnn", gain: float = 0.5, inputs: int = 8,
                    pruning: str = "naive") -> Workload:
    """Random contractive RNN or LSTM workload with inputs folded into the biases."""
    rows = 4 * hidden if cell == "lstm" else hidden
    layer = contractive_sparse(rows, hidden, density, [seed, 0], gain, pruning)
    return random_inputs(layer, batch, timesteps, seed, cell, inputs)
