"""Bank-aware reordering of row pairs and the warp/lane/step schedule.

The reordering is the greedy per-row coloring: each of the ``K`` banks owns
the positions ``(X + b) % K, +K, +2K, ...`` of row ``X``; a pair goes to the
next free position of its bank (``index % K``), probing ``index + 1, + 2, ...``
when that bank is full.  ``K`` is 32 for scalar loads and ``32 / w`` for
``w``-wide loads.  Lanes then walk a row with stride ``lanes_per_row``, so
with 32 lanes on one row the lanes of a step touch consecutive positions,
one per bank.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ScheduleMismatchError, ShapeError
from .sparse import VALID_WIDTHS, SparseLayer

WARP_SIZE = 32
NUM_BANKS = 32


def optimize_row_layout(indices, values, row_id: int, banks: int = NUM_BANKS):
    """Reorder one row's pairs so consecutive positions fall in distinct banks.

    Args:
        indices, values: the row's ``n`` pairs, in their current order.
        row_id: the row number ``X``; it staggers the starting positions.
        banks: number of shared-memory banks.

    Returns:
        ``(indices, values)`` holding the same pairs, reordered.
    """
    indices = np.asarray(indices)
    values = np.asarray(values)
    n = len(indices)
    if len(values) != n:
        raise ShapeError(f"{n} indices but {len(values)} values")
    next_free = [(row_id + b) % banks for b in range(banks)]
    dest = np.empty(n, dtype=np.int64)
    for i, index in enumerate(indices.tolist()):
        probe = int(index)
        bank = probe % banks
        # Bank capacities sum to exactly n, so some bank always has room.
        while next_free[bank] >= n:
            probe += 1
            bank = probe % banks
        dest[i] = next_free[bank]
        next_free[bank] += banks
    out_idx = np.empty_like(indices)
    out_val = np.empty_like(values)
    out_idx[dest] = indices
    out_val[dest] = values
    return out_idx, out_val


def _canonical_order(indices: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Row order that depends only on the pair multiset: real pairs by index, padding last."""
    bits = values.view(np.uint32)
    padding = (indices == 0) & (bits == 0)
    return np.lexsort((bits, indices, padding))


def optimize_layer(layer: SparseLayer, vector_width: int = 1, keep_better: bool = True) -> SparseLayer:
    """Apply :func:`optimize_row_layout` to every row of a padded layer.

    A ``w``-wide load is served in groups of ``32 / w`` lanes, and within a
    group index ``j`` lands in bank ``w*j % 32``, i.e. only ``j % (32 / w)``
    matters.  The coloring therefore runs over ``32 / w`` banks.

    Each row is colored from a canonical ordering of its pairs, so the result
    does not depend on the incoming order and a second pass changes nothing.
    The greedy can lose to the incoming order (short rows, or many padding
    pairs crowding bank 0).  With ``keep_better`` each warp of the default
    schedule keeps its incoming rows when the greedy layout would cost it
    more load cycles at ``vector_width``.
    """
    if vector_width not in VALID_WIDTHS:
        raise ValueError(f"vector width must be one of {VALID_WIDTHS}, got {vector_width}")
    if not layer.is_padded:
        raise ValueError("optimize_layer expects a padded layer; call pad_rows first")
    banks = NUM_BANKS // vector_width
    idx = np.empty_like(layer.indices)
    val = np.empty_like(layer.values)
    for r in range(layer.rows):
        order = _canonical_order(layer.indices[r], layer.values[r])
        idx[r], val[r] = optimize_row_layout(layer.indices[r][order], layer.values[r][order], r, banks)
    colored = layer.replace(indices=idx, values=val, bank_aware_width=vector_width)
    if keep_better and layer.pairs_per_row:
        worse = warp_cycles(colored, vector_width) > warp_cycles(layer, vector_width)
        if worse.any():
            rows = build_schedule(layer).lane_row[worse]
            rows = np.unique(rows[rows >= 0])
            idx[rows], val[rows] = layer.indices[rows], layer.values[rows]
            colored = layer.replace(indices=idx, values=val, bank_aware_width=vector_width)
    return colored


def warp_cycles(layer: SparseLayer, w: int = 1) -> np.ndarray:
    """Operate-stage load cycles of each warp of the default schedule, one ``w``-wide load per step."""
    from .banks import group_cycles  # banks builds on this module

    lanes = build_schedule(layer).lane_indices(layer)
    return group_cycles(lanes, w, w).sum(axis=(1, 2))


def default_lanes_per_row(pairs_per_row: int) -> int:
    """Largest power of two not above ``min(pairs_per_row, 32)``."""
    n = max(1, min(int(pairs_per_row), WARP_SIZE))
    return 1 << (n.bit_length() - 1)


@dataclass(frozen=True, eq=False)
class WarpSchedule:
    """Assignment of row positions to ``(warp, lane, step)`` slots.

    ``lane_row[w, l]`` is the row lane ``l`` of warp ``w`` works on (-1 for an
    idle lane) and ``positions[w, l, s]`` the row position it reads at step
    ``s`` (-1 for an inert slot).
    """

    rows: int
    pairs_per_row: int
    lanes_per_row: int
    lane_row: np.ndarray
    positions: np.ndarray

    @property
    def rows_per_warp(self) -> int:
        return WARP_SIZE // self.lanes_per_row

    @property
    def n_warps(self) -> int:
        return self.lane_row.shape[0]

    @property
    def steps(self) -> int:
        return self.positions.shape[2]

    def check(self, layer: SparseLayer) -> None:
        if layer.rows != self.rows or layer.pairs_per_row != self.pairs_per_row:
            raise ScheduleMismatchError(
                f"schedule is for {self.rows} rows x {self.pairs_per_row} pairs, "
                f"layer has {layer.rows} rows x {layer.pairs_per_row} pairs"
            )
        if not layer.is_padded:
            raise ScheduleMismatchError("schedules only cover padded layers")

    def lane_indices(self, layer: SparseLayer) -> np.ndarray:
        """Column index each lane loads, shaped ``(warps, steps, 32)``; -1 = inert."""
        self.check(layer)
        rows = np.broadcast_to(self.lane_row[:, :, None], self.positions.shape)
        live = self.positions >= 0
        out = np.full(self.positions.shape, -1, dtype=np.int64)
        out[live] = layer.indices[rows[live], self.positions[live]]
        return out.transpose(0, 2, 1)

    def reorder_warps(self, order) -> "WarpSchedule":
        order = np.asarray(order)
        return WarpSchedule(
            self.rows, self.pairs_per_row, self.lanes_per_row,
            self.lane_row[order], self.positions[order],
        )


def build_schedule(layer: SparseLayer, lanes_per_row: int = None) -> WarpSchedule:
    """Map a padded layer onto warps of 32 lanes.

    Each warp covers ``32 // lanes_per_row`` consecutive rows.  Lane ``o`` of a
    row reads positions ``o, o + lanes_per_row, o + 2 * lanes_per_row, ...``;
    slots past the end of the row are inert.
    """
    if not layer.is_padded:
        raise ValueError("build_schedule expects a padded layer; call pad_rows first")
    n = layer.pairs_per_row
    if n < 1:
        raise ValueError("layer has no pairs to schedule")
    lpr = default_lanes_per_row(n) if lanes_per_row is None else int(lanes_per_row)
    if lpr < 1 or lpr > WARP_SIZE or WARP_SIZE % lpr:
        raise ValueError(f"lanes_per_row must divide {WARP_SIZE}, got {lanes_per_row}")
    per_warp = WARP_SIZE // lpr
    n_warps = -(-layer.rows // per_warp)
    steps = -(-n // lpr)

    lane = np.arange(WARP_SIZE)
    lane_row = np.arange(n_warps)[:, None] * per_warp + lane[None, :] // lpr
    lane_row[lane_row >= layer.rows] = -1
    pos = (lane % lpr)[:, None] + lpr * np.arange(steps)[None, :]
    positions = np.broadcast_to(pos, (n_warps, WARP_SIZE, steps)).copy()
    positions[positions >= n] = -1
    positions[lane_row < 0] = -1
    return WarpSchedule(layer.rows, n, lpr, lane_row, positions)
