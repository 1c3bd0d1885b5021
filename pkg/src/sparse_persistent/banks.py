"""Shared-memory bank-conflict model for the operate stage, and a stage cost model.

Activation ``j`` of a ``w``-sample interleaved buffer occupies words
``w*j .. w*j + w - 1``, so its first word lives in bank ``(w * j) % 32``.  A
``w``-wide warp load is served as ``w`` back-to-back groups of ``32 / w`` lanes
(in lane order).  Within a group, lanes reading the same index share one
access (broadcast); distinct indices in the same bank serialize.  A group
therefore costs the largest number of distinct indices found in any one bank.
"""

from dataclasses import asdict, dataclass, field
import math
from typing import Dict, Optional

import numpy as np

from .config import SyncMode
from .layout import NUM_BANKS, WARP_SIZE, WarpSchedule
from .resources import ArchProfile
from .sparse import VALID_WIDTHS, SparseLayer

REPORT_SCHEMA_VERSION = 1


def bank_of(index: int, w: int = 1) -> int:
    if w not in VALID_WIDTHS:
        raise ValueError(f"vector width must be one of {VALID_WIDTHS}, got {w}")
    return (w * index) % NUM_BANKS


def _as_lanes(indices) -> np.ndarray:
    lanes = np.array([-1 if i is None else i for i in indices], dtype=np.int64)
    if lanes.shape[-1] != WARP_SIZE:
        raise ValueError(f"a warp load has {WARP_SIZE} lane slots, got {lanes.shape[-1]}")
    return lanes


def group_cycles(lanes: np.ndarray, groups: int, stride: int) -> np.ndarray:
    """Cycles of each lane group for a batch of warp loads.

    Args:
        lanes: ``(..., 32)`` int array of indices, ``-1`` marking inert lanes.
        groups: number of sequential lane groups per load.
        stride: words per activation (bank of index ``j`` is ``stride*j % 32``).

    Returns:
        ``(..., groups)`` array; fully inert groups cost 0.
    """
    lanes = np.asarray(lanes, dtype=np.int64)
    lead = lanes.shape[:-1]
    flat = np.sort(lanes.reshape(-1, WARP_SIZE // groups), axis=1)
    first = np.ones(flat.shape, dtype=bool)
    first[:, 1:] = flat[:, 1:] != flat[:, :-1]
    keep = first & (flat >= 0)
    gid = np.broadcast_to(np.arange(flat.shape[0])[:, None], flat.shape)
    key = gid[keep] * NUM_BANKS + (stride * flat[keep]) % NUM_BANKS
    counts = np.bincount(key, minlength=flat.shape[0] * NUM_BANKS)
    return counts.reshape(flat.shape[0], NUM_BANKS).max(axis=1).reshape(*lead, groups)


def load_cycles(indices, w: int = 1) -> int:
    """Cycles one ``w``-wide warp load of ``indices`` (32 slots, None/-1 inert) takes."""
    if w not in VALID_WIDTHS:
        raise ValueError(f"vector width must be one of {VALID_WIDTHS}, got {w}")
    return int(group_cycles(_as_lanes(indices), w, w).sum())


def ideal_load_cycles(indices, w: int = 1) -> int:
    """Conflict-free cost: one cycle per group that has an active lane."""
    lanes = _as_lanes(indices).reshape(w, WARP_SIZE // w)
    return int((lanes >= 0).any(axis=1).sum())


def scalar_batch_cycles(indices, batch: int) -> int:
    """Cycles for ``batch`` scalar loads from a ``batch``-interleaved buffer.

    This is what serving the same samples costs without wide loads: each
    scalar load covers all 32 lanes and index ``j`` of sample ``b`` sits in
    bank ``(batch * j + b) % 32`` (the ``+ b`` shift leaves the count unchanged).
    """
    return batch * int(group_cycles(_as_lanes(indices), 1, batch).sum())


@dataclass
class ConflictReport:
    rows: int
    cols: int
    pairs_per_row: int
    density: float
    layout_tag: str
    vector_width: int
    batch: int
    lanes_per_row: int
    load_instructions: int
    ideal_cycles: int
    actual_cycles: int
    histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def conflict_cycles(self) -> int:
        return self.actual_cycles - self.ideal_cycles

    @property
    def penalty(self) -> float:
        return self.conflict_cycles / self.ideal_cycles if self.ideal_cycles else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["histogram"] = {str(k): v for k, v in sorted(self.histogram.items())}
        d["conflict_cycles"] = self.conflict_cycles
        d["penalty"] = self.penalty
        d["schema_version"] = REPORT_SCHEMA_VERSION
        return d


def simulate_layer(schedule: WarpSchedule, layer: SparseLayer, w: int = 1,
                   batch: Optional[int] = None) -> ConflictReport:
    """Count operate-stage load cycles for one timestep of ``layer``.

    Every (warp, step) issues ``ceil(batch / w)`` identical ``w``-wide loads;
    padding pairs are loaded like any other pair, inert slots cost nothing.
    """
    if w not in VALID_WIDTHS:
        raise ValueError(f"vector width must be one of {VALID_WIDTHS}, got {w}")
    batch = w if batch is None else int(batch)
    repeats = -(-batch // w)
    lanes = schedule.lane_indices(layer).reshape(-1, WARP_SIZE)
    lanes = lanes[(lanes >= 0).any(axis=1)]
    per_group = group_cycles(lanes, w, w)
    per_load = per_group.sum(axis=1)
    ideal = int((per_group > 0).sum())
    values, counts = np.unique(per_load, return_counts=True)
    return ConflictReport(
        rows=layer.rows,
        cols=layer.cols,
        pairs_per_row=layer.pairs_per_row,
        density=layer.density,
        layout_tag=layer.layout_tag,
        vector_width=w,
        batch=batch,
        lanes_per_row=schedule.lanes_per_row,
        load_instructions=len(lanes) * repeats,
        ideal_cycles=ideal * repeats,
        actual_cycles=int(per_load.sum()) * repeats,
        histogram={int(v): int(c) * repeats for v, c in zip(values, counts)},
    )


@dataclass
class StageCosts:
    load: float
    operate: float
    reduce: float
    sync: float

    @property
    def total(self) -> float:
        return self.load + self.operate + self.reduce + self.sync


def estimate_timestep_cost(report: ConflictReport, arch: ArchProfile,
                           sync_mode=SyncMode.LAMPORT) -> StageCosts:
    """Qualitative per-timestep cost in model cycles, split by pipeline stage.

    Not a timing prediction: it only orders configurations.  Every term is
    monotone in its input (activation words, operate cycles, reduce width,
    sync constant).
    """
    load = report.rows * report.batch / arch.cost("load_words_per_cycle")
    operate = report.actual_cycles / (arch.sm_count * arch.cost("warps_in_flight_per_sm"))
    reduce = arch.cost("reduce_cycles_per_level") * math.log2(report.lanes_per_row)
    if SyncMode.parse(sync_mode) is SyncMode.LAMPORT:
        sync = arch.cost("lamport_sync_cycles")
    else:
        sync = arch.cost("barrier_sync_cycles")
    return StageCosts(load, operate, reduce, sync)
