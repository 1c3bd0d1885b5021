"""<index, value> sparse layers: pruning, zero-padding and file I/O.

A :class:`SparseLayer` stores each row's pairs in a fixed-width slab of
``pairs_per_row`` slots.  Before padding, row ``r`` only owns its first
``lengths[r]`` slots; the remaining slots hold ``(0, +0.0)`` and are not part
of the layer.  :func:`pad_rows` turns those unused slots into real padding
pairs, after which every row carries exactly ``pairs_per_row`` pairs.
"""

from dataclasses import dataclass
from fractions import Fraction
import math
import os
import struct
from typing import Iterable, Sequence, Tuple

import numpy as np

from .dense import F32, as_matrix
from .errors import CorruptLayerError, FormatError, ShapeError

LAYER_MAGIC = b"SPRN"
DENSE_MAGIC = b"DNSM"
FORMAT_VERSION = 1
VALID_WIDTHS = (1, 2, 4)

_LAYER_HEADER = struct.Struct("<4sIIIIB")
_DENSE_HEADER = struct.Struct("<4sIII")
PAIR_DTYPE = np.dtype([("index", "<u4"), ("value", "<f4")])


def _is_positive_zero(values: np.ndarray) -> np.ndarray:
    return (values == 0) & ~np.signbit(values)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseLayer:
    """Row-major <index, value> pairs plus layout metadata.

    Attributes:
        rows, cols: logical matrix shape.
        indices: ``(rows, pairs_per_row)`` uint32 column indices.
        values: ``(rows, pairs_per_row)`` float32 weights.
        lengths: ``(rows,)`` number of slots each row owns.
        bank_aware_width: 0 for the as-pruned layout, otherwise the vector
            width the bank-aware reordering was produced for.
    """

    rows: int
    cols: int
    indices: np.ndarray
    values: np.ndarray
    lengths: np.ndarray
    bank_aware_width: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ShapeError(f"layer must be at least 1x1, got {self.rows}x{self.cols}")
        idx = np.array(self.indices, dtype=np.int64, copy=True)
        val = np.array(self.values, dtype=F32, copy=True)
        if idx.ndim != 2 or idx.shape[0] != self.rows or idx.shape != val.shape:
            raise ShapeError(
                f"indices {idx.shape} / values {val.shape} do not match {self.rows} rows"
            )
        lengths = np.array(self.lengths, dtype=np.int64, copy=True)
        n = idx.shape[1]
        if lengths.shape != (self.rows,) or (lengths < 0).any() or (lengths > n).any():
            raise ShapeError(f"row lengths must lie in [0, {n}] for each of {self.rows} rows")
        if self.bank_aware_width not in (0,) + VALID_WIDTHS:
            raise ValueError(f"bad vector width {self.bank_aware_width}")

        owned = np.arange(n)[None, :] < lengths[:, None]
        bad = owned & ((idx < 0) | (idx >= self.cols))
        if bad.any():
            r, s = np.argwhere(bad)[0]
            raise CorruptLayerError(
                f"index {idx[r, s]} out of range for {self.cols} columns", row=int(r)
            )
        idx[~owned] = 0
        val[~owned] = 0.0
        dup_row = _first_duplicate_row(idx, val, owned)
        if dup_row is not None:
            raise CorruptLayerError("duplicate column index among nonzero pairs", row=dup_row)

        object.__setattr__(self, "indices", _readonly(idx.astype(np.uint32)))
        object.__setattr__(self, "values", _readonly(val))
        object.__setattr__(self, "lengths", _readonly(lengths))

    @classmethod
    def from_rows(cls, cols: int, rows: Sequence[Tuple[Iterable[int], Iterable[float]]], **kw):
        """Build an (unpadded) layer from per-row ``(indices, values)`` lists."""
        rows = [(np.asarray(list(i), dtype=np.int64), np.asarray(list(v), dtype=F32)) for i, v in rows]
        n = max((len(i) for i, _ in rows), default=0)
        idx = np.zeros((len(rows), n), dtype=np.int64)
        val = np.zeros((len(rows), n), dtype=F32)
        for r, (i, v) in enumerate(rows):
            if len(i) != len(v):
                raise ShapeError(f"row {r}: {len(i)} indices but {len(v)} values")
            idx[r, : len(i)] = i
            val[r, : len(v)] = v
        return cls(len(rows), cols, idx, val, [len(i) for i, _ in rows], **kw)

    @property
    def pairs_per_row(self) -> int:
        return self.indices.shape[1]

    @property
    def is_padded(self) -> bool:
        return bool((self.lengths == self.pairs_per_row).all())

    @property
    def layout_tag(self) -> str:
        if self.bank_aware_width:
            return f"bank-aware(w={self.bank_aware_width})"
        return "as-pruned"

    @property
    def stored_pairs(self) -> int:
        return int(self.lengths.sum())

    @property
    def nnz(self) -> int:
        owned = np.arange(self.pairs_per_row)[None, :] < self.lengths[:, None]
        return int((owned & (self.values != 0)).sum())

    @property
    def density(self) -> float:
        """Stored pairs (padding included) over ``rows * cols``."""
        return self.stored_pairs / (self.rows * self.cols)

    def row_pairs(self, r: int):
        n = self.lengths[r]
        return self.indices[r, :n], self.values[r, :n]

    def replace(self, **changes) -> "SparseLayer":
        fields = dict(
            rows=self.rows,
            cols=self.cols,
            indices=self.indices,
            values=self.values,
            lengths=self.lengths,
            bank_aware_width=self.bank_aware_width,
        )
        fields.update(changes)
        return SparseLayer(**fields)

    def identical(self, other: "SparseLayer") -> bool:
        """Bit-exact equality of shape, layout tag and every pair."""
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.bank_aware_width == other.bank_aware_width
            and np.array_equal(self.lengths, other.lengths)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
        )

    def __repr__(self):
        return (
            f"SparseLayer({self.rows}x{self.cols}, pairs_per_row={self.pairs_per_row}, "
            f"padded={self.is_padded}, layout={self.layout_tag})"
        )


def _first_duplicate_row(idx, val, owned):
    live = owned & (val != 0)
    if not live.any():
        return None
    n = idx.shape[1]
    # Dead slots get distinct negative keys so they never compare equal.
    keys = np.where(live, idx, -1 - np.arange(n)[None, :])
    keys = np.sort(keys, axis=1)
    dup = (keys[:, 1:] == keys[:, :-1]) & (keys[:, 1:] >= 0)
    hits = np.nonzero(dup.any(axis=1))[0]
    return int(hits[0]) if hits.size else None


def check_density(density) -> float:
    d = float(density)
    if not (0.0 < d <= 1.0):
        raise ValueError(f"density must lie in (0, 1], got {density!r}")
    return d


def keep_count(density: float, total: int) -> int:
    """``ceil(density * total)`` evaluated on the decimal value of ``density``.

    Going through ``repr`` avoids binary round-off pushing e.g. ``0.1 * 10``
    just past an integer.
    """
    return math.ceil(Fraction(repr(check_density(density))) * total)


def effective_layer_size(hidden: int, density: float) -> float:
    """Dense layer size with the same parameter count as a sparse one."""
    return hidden * math.sqrt(check_density(density))


def _layer_from_mask(m: np.ndarray, mask: np.ndarray) -> SparseLayer:
    rows, cols = m.shape
    lengths = mask.sum(axis=1)
    n = int(lengths.max(initial=0))
    idx = np.zeros((rows, n), dtype=np.int64)
    val = np.zeros((rows, n), dtype=F32)
    r, c = np.nonzero(mask)  # row-major, so columns ascend within a row
    slot = np.arange(r.size) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    idx[r, slot] = c
    val[r, slot] = m[r, c]
    return SparseLayer(rows, cols, idx, val, lengths)


def prune_naive(m, density) -> SparseLayer:
    """Keep the ``ceil(d * rows * cols)`` largest-magnitude weights anywhere.

    Ties in magnitude go to the smaller ``(row, col)``.  The result is not
    padded; rows may own different numbers of pairs.
    """
    m = as_matrix(m)
    k = keep_count(density, m.size)
    order = np.argsort(-np.abs(m).ravel(), kind="stable")[:k]
    mask = np.zeros(m.size, dtype=bool)
    mask[order] = True
    return _layer_from_mask(m, mask.reshape(m.shape))


def prune_row_balanced(m, density) -> SparseLayer:
    """Keep the ``ceil(d * cols)`` largest-magnitude weights of every row."""
    m = as_matrix(m)
    k = keep_count(density, m.shape[1])
    order = np.argsort(-np.abs(m), axis=1, kind="stable")[:, :k]
    mask = np.zeros(m.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return _layer_from_mask(m, mask)


def pad_rows(layer: SparseLayer) -> SparseLayer:
    """Give every row the maximum pair count by appending ``(0, +0.0)`` pairs."""
    n = int(layer.lengths.max(initial=0))
    if layer.is_padded and n == layer.pairs_per_row:
        return layer
    return layer.replace(
        indices=layer.indices[:, :n],
        values=layer.values[:, :n],
        lengths=np.full(layer.rows, n),
    )


def reconstruct_dense(layer: SparseLayer) -> np.ndarray:
    """Scatter the layer's pairs into a zero matrix.

    Padding pairs (value +0.0) are skipped; signed zeros are written before
    nonzeros so a stray ``-0.0`` can never mask a real weight.
    """
    out = np.zeros((layer.rows, layer.cols), dtype=F32)
    owned = np.arange(layer.pairs_per_row)[None, :] < layer.lengths[:, None]
    live = owned & ~_is_positive_zero(layer.values)
    idx = layer.indices.astype(np.int64)
    if (idx[live] >= layer.cols).any():
        raise CorruptLayerError("index out of range")
    for sel in (live & (layer.values == 0), live & (layer.values != 0)):
        r, s = np.nonzero(sel)
        out[r, idx[r, s]] = layer.values[r, s]
    return out


# --------------------------------------------------------------------------- I/O


def layer_to_bytes(layer: SparseLayer) -> bytes:
    if not layer.is_padded:
        raise ValueError("only padded layers can be serialized; call pad_rows first")
    header = _LAYER_HEADER.pack(
        LAYER_MAGIC, FORMAT_VERSION, layer.rows, layer.cols,
        layer.pairs_per_row, layer.bank_aware_width,
    )
    body = np.empty(layer.indices.shape, dtype=PAIR_DTYPE)
    body["index"] = layer.indices
    body["value"] = layer.values
    return header + body.tobytes()


def layer_from_bytes(data: bytes) -> SparseLayer:
    hsize = _LAYER_HEADER.size
    if len(data) < hsize:
        raise FormatError(f"truncated header: {len(data)} of {hsize} bytes", offset=len(data))
    magic, version, rows, cols, n, tag = _LAYER_HEADER.unpack_from(data)
    if magic != LAYER_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LAYER_MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if rows < 1:
        raise FormatError("row count must be positive", offset=8)
    if cols < 1:
        raise FormatError("column count must be positive", offset=12)
    if tag not in (0,) + VALID_WIDTHS:
        raise FormatError(f"unknown layout tag {tag}", offset=20)
    expected = hsize + rows * n * PAIR_DTYPE.itemsize
    if len(data) < expected:
        raise FormatError(f"truncated body: {len(data)} of {expected} bytes", offset=len(data))
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes", offset=expected)
    body = np.frombuffer(data, dtype=PAIR_DTYPE, count=rows * n, offset=hsize).reshape(rows, n)
    over = np.argwhere(body["index"] >= cols)
    if over.size:
        r, s = (int(v) for v in over[0])
        raise CorruptLayerError(
            f"index {body['index'][r, s]} >= cols {cols}",
            offset=hsize + (r * n + s) * PAIR_DTYPE.itemsize,
            row=r,
        )
    return SparseLayer(rows, cols, body["index"], body["value"], np.full(rows, n), tag)


def save_layer(layer: SparseLayer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(layer_to_bytes(layer))


def load_layer(path) -> SparseLayer:
    with open(path, "rb") as fh:
        return layer_from_bytes(fh.read())


def dense_to_bytes(m) -> bytes:
    m = as_matrix(m)
    header = _DENSE_HEADER.pack(DENSE_MAGIC, FORMAT_VERSION, *m.shape)
    return header + m.astype("<f4").tobytes()


def dense_from_bytes(data: bytes) -> np.ndarray:
    hsize = _DENSE_HEADER.size
    if len(data) < hsize:
        raise FormatError(f"truncated header: {len(data)} of {hsize} bytes", offset=len(data))
    magic, version, rows, cols = _DENSE_HEADER.unpack_from(data)
    if magic != DENSE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DENSE_MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if rows < 1 or cols < 1:
        raise FormatError(f"bad shape {rows}x{cols}", offset=8)
    expected = hsize + rows * cols * 4
    if len(data) != expected:
        raise FormatError(
            f"body is {len(data) - hsize} bytes, expected {expected - hsize}",
            offset=min(len(data), expected),
        )
    return np.frombuffer(data, dtype="<f4", offset=hsize).reshape(rows, cols).astype(F32)


def save_dense(m, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dense_to_bytes(m))


def load_dense(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        return dense_from_bytes(fh.read())
