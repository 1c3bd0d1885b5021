"""Dense reference RNN/LSTM timesteps.

Everything here is float32 and sums in ascending column order, so the
results are reproducible and serve as the oracle for the sparse engine.
Activations are stored as ``(H, B)`` C-ordered arrays, i.e. element
``(j, b)`` sits at flat offset ``j * B + b`` (samples interleaved).
"""

from dataclasses import dataclass, field
import enum
from typing import List, Optional

import numpy as np

from .errors import ShapeError

F32 = np.float32


class ActivationFn(enum.Enum):
    TANH = "tanh"
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value) -> "ActivationFn":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown activation {value!r}; expected one of "
                f"{[a.value for a in cls]}"
            ) from None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=F32)
        if self is ActivationFn.TANH:
            return np.tanh(x)
        if self is ActivationFn.RELU:
            return np.maximum(x, F32(0.0))
        if self is ActivationFn.SIGMOID:
            return sigmoid(x)
        return x.copy()


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=F32)
    with np.errstate(over="ignore"):
        return F32(1.0) / (F32(1.0) + np.exp(-x))


def as_matrix(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=F32)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    return m


def as_batch(h, hidden: int, name="activations") -> np.ndarray:
    """Coerce ``h`` to an ``(H, B)`` float32 batch; 1-D input means B=1."""
    h = np.asarray(h, dtype=F32)
    if h.ndim == 1:
        h = h[:, None]
    if h.ndim != 2 or h.shape[0] != hidden:
        raise ShapeError(f"{name} must have shape ({hidden}, B), got {h.shape}")
    b = h.shape[1]
    if b < 1 or b & (b - 1):
        raise ShapeError(f"batch size must be a power of two, got {b}")
    return np.ascontiguousarray(h)


def as_bias(b, hidden: int, batch: int, name="bias") -> np.ndarray:
    """Return the bias as an ``(H, B)`` array (``(H,)`` input is broadcast)."""
    b = np.asarray(b, dtype=F32)
    if b.shape == (hidden,):
        return np.ascontiguousarray(np.broadcast_to(b[:, None], (hidden, batch)))
    if b.shape == (hidden, batch):
        return np.ascontiguousarray(b)
    raise ShapeError(f"{name} must have shape ({hidden},) or ({hidden}, {batch}), got {b.shape}")


def as_bias_sequence(b_seq, hidden: int, batch: int) -> np.ndarray:
    """Stack a sequence of biases into a ``(T, H, B)`` float32 array."""
    if isinstance(b_seq, np.ndarray) and b_seq.ndim == 3:
        if b_seq.shape[1:] != (hidden, batch):
            raise ShapeError(
                f"bias sequence must have shape (T, {hidden}, {batch}), got {b_seq.shape}"
            )
        return np.ascontiguousarray(b_seq, dtype=F32)
    steps = [as_bias(b, hidden, batch, name=f"bias[{t}]") for t, b in enumerate(b_seq)]
    if not steps:
        return np.zeros((0, hidden, batch), dtype=F32)
    return np.stack(steps)


def ascending_matvec(u: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``u @ h`` accumulated column by column in ascending order.

    The accumulator is seeded with the column-0 product (not with +0.0), so a
    row whose every product is -0.0 yields -0.0.
    """
    acc = u[:, 0:1] * h[0:1, :]
    for k in range(1, u.shape[1]):
        acc += u[:, k : k + 1] * h[k : k + 1, :]
    return acc


def precompute_input(w, x_seq, b) -> np.ndarray:
    """Fold the input projection into the bias: ``b'_t = W x_t + b``.

    Args:
        w: input-to-hidden weights, shape ``(H, I)``.
        x_seq: inputs, a ``(T, I, B)`` array or a sequence of ``(I, B)``/``(I,)``.
        b: bias, ``(H,)`` or ``(H, B)``.

    Returns:
        ``(T, H, B)`` float32 array of per-step biases.
    """
    w = as_matrix(w, "W")
    hidden, width = w.shape
    xs = [np.asarray(x, dtype=F32) for x in x_seq]
    if not xs:
        return np.zeros((0, hidden, 1), dtype=F32)
    xs = [x[:, None] if x.ndim == 1 else x for x in xs]
    batch = xs[0].shape[1] if xs[0].ndim == 2 else -1
    for t, x in enumerate(xs):
        if x.ndim != 2 or x.shape[0] != width:
            raise ShapeError(f"x[{t}] must have shape ({width}, B), got {x.shape}")
        if x.shape[1] != batch:
            raise ShapeError(f"x[{t}] has batch {x.shape[1]}, expected {batch}")
    bias = as_bias(b, hidden, batch)
    return np.stack([ascending_matvec(w, x) + bias for x in xs])


def rnn_step_dense(u, h_prev, b_prime, g=ActivationFn.TANH) -> np.ndarray:
    """One vanilla RNN step ``h_t = g(U h_{t-1} + b')``."""
    u = as_matrix(u, "U_r")
    if u.shape[0] != u.shape[1]:
        raise ShapeError(f"recurrent matrix must be square, got {u.shape}")
    h_prev = as_batch(h_prev, u.shape[1], "h_prev")
    bias = as_bias(b_prime, u.shape[0], h_prev.shape[1], "b_prime")
    return ActivationFn.parse(g)(ascending_matvec(u, h_prev) + bias)


def lstm_gates(pre: np.ndarray, c_prev: np.ndarray):
    """Turn ``(4H, B)`` pre-activations in [i; f; g; o] order into ``(h, c)``."""
    hidden = pre.shape[0] // 4
    i = sigmoid(pre[:hidden])
    f = sigmoid(pre[hidden : 2 * hidden])
    g = np.tanh(pre[2 * hidden : 3 * hidden])
    o = sigmoid(pre[3 * hidden :])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def lstm_step_dense(u_gates, h_prev, c_prev, b_prime):
    """One LSTM step with gate rows stacked as [input; forget; cell; output].

    Returns:
        ``(h_t, c_t)``, both ``(H, B)``.
    """
    u = as_matrix(u_gates, "U_gates")
    if u.shape[0] % 4:
        raise ShapeError(f"gate matrix row count {u.shape[0]} is not divisible by 4")
    hidden = u.shape[0] // 4
    if u.shape[1] != hidden:
        raise ShapeError(f"gate matrix must be 4H x H, got {u.shape}")
    h_prev = as_batch(h_prev, hidden, "h_prev")
    c_prev = as_batch(c_prev, hidden, "c_prev")
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"c_prev shape {c_prev.shape} != h_prev shape {h_prev.shape}")
    bias = as_bias(b_prime, 4 * hidden, h_prev.shape[1], "b_prime")
    return lstm_gates(ascending_matvec(u, h_prev) + bias, c_prev)


@dataclass
class SequenceResult:
    """Final state of a recurrent run, plus ``h_1 .. h_T`` when traced."""

    h: np.ndarray
    c: Optional[np.ndarray] = None
    trace: List[np.ndarray] = field(default_factory=list)


def run_sequence_dense(u, h0, b_prime_seq, g=ActivationFn.TANH, c0=None, trace=False):
    """Iterate the dense RNN (or LSTM, when ``c0`` is given) over all biases."""
    u = as_matrix(u, "U")
    lstm = c0 is not None
    hidden = u.shape[1]
    h = as_batch(h0, hidden, "h0").copy()
    c = as_batch(c0, hidden, "c0").copy() if lstm else None
    biases = as_bias_sequence(b_prime_seq, u.shape[0], h.shape[1])
    out = SequenceResult(h=h, c=c)
    for b in biases:
        if lstm:
            h, c = lstm_step_dense(u, h, c, b)
        else:
            h = rnn_step_dense(u, h, b, g)
        if trace:
            out.trace.append(h)
    out.h, out.c = h, c
    return out


RELATIVE_ERROR_FLOOR = 0.1


def max_relative_error(actual, expected, floor: float = RELATIVE_ERROR_FLOOR) -> float:
    """Largest elementwise ``|a - e| / max(|e|, floor)``.

    A pre-activation that cancels to nearly zero carries the rounding error
    of its O(1) terms, so its relative error under a different summation
    order is unbounded.  Below ``floor`` in magnitude the measure therefore
    becomes an absolute error scaled by ``1 / floor``.
    """
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if a.shape != e.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {e.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - e) / np.maximum(np.abs(e), floor)))
