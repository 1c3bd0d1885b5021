import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sparse_persistent.banks import simulate_layer
from sparse_persistent.errors import ScheduleMismatchError
from sparse_persistent.layout import (
    build_schedule,
    default_lanes_per_row,
    optimize_layer,
    optimize_row_layout,
    warp_cycles,
)
from sparse_persistent.sparse import SparseLayer, pad_rows, prune_naive
from sparse_persistent.workloads import random_dense

F32 = np.float32


def row_layer(indices, cols=None, x_rows=1):
    indices = np.asarray(indices)
    cols = cols or int(indices.max()) + 1
    vals = np.arange(1, len(indices) + 1, dtype=F32)
    return SparseLayer(x_rows, cols, np.tile(indices, (x_rows, 1)), np.tile(vals, (x_rows, 1)),
                       [len(indices)] * x_rows)


def test_full_row_lands_on_its_residue():
    perm = np.random.default_rng(0).permutation(32)
    idx, val = optimize_row_layout(perm, perm.astype(F32), 0)
    assert np.array_equal(idx, np.arange(32))
    assert np.array_equal(val, np.arange(32, dtype=F32))


def test_two_pairs_in_one_bank_probe_forward():
    idx, val = optimize_row_layout(np.array([0, 32]), np.array([1.0, 2.0], F32), 0)
    assert list(idx) == [0, 32] and list(val) == [1.0, 2.0]


def test_single_pair_unchanged():
    idx, _ = optimize_row_layout(np.array([17]), np.array([1.0], F32), 5)
    assert list(idx) == [17]


def test_row_id_staggers_start_positions():
    idx, _ = optimize_row_layout(np.arange(32), np.ones(32, F32), 3)
    # Bank b starts at position (3 + b) % 32.
    assert all(idx[(3 + b) % 32] == b for b in range(32))


def test_schedule_one_row_per_warp():
    layer = row_layer(np.arange(64), cols=64)
    sched = build_schedule(layer)
    assert sched.lanes_per_row == 32 and sched.steps == 2
    assert np.array_equal(sched.positions[0, :, 0], np.arange(32))
    assert np.array_equal(sched.positions[0, :, 1], np.arange(32, 64))


def test_schedule_one_lane_per_row():
    layer = row_layer(np.arange(5), cols=8, x_rows=32)
    sched = build_schedule(layer, lanes_per_row=1)
    assert sched.steps == 5 and sched.n_warps == 1
    assert np.array_equal(sched.lane_row[0], np.arange(32))
    assert np.array_equal(sched.positions[0, 7], np.arange(5))


def test_schedule_partial_rows_and_idle_lanes():
    layer = row_layer(np.arange(5), cols=8, x_rows=3)
    sched = build_schedule(layer)
    assert sched.lanes_per_row == 4 and sched.steps == 2
    assert (sched.lane_row[0, 12:] == -1).all()
    assert np.array_equal(sched.positions[0, 0], [0, 4])
    assert np.array_equal(sched.positions[0, 1], [1, -1])


@pytest.mark.parametrize("n,expected", [(1, 1), (3, 2), (5, 4), (31, 16), (32, 32), (500, 32)])
def test_default_lanes_per_row(n, expected):
    assert default_lanes_per_row(n) == expected


def test_schedule_rejects_bad_lane_counts():
    layer = row_layer(np.arange(8))
    with pytest.raises(ValueError):
        build_schedule(layer, lanes_per_row=3)
    with pytest.raises(ValueError):
        build_schedule(layer, lanes_per_row=64)


def test_schedule_mismatch_detected():
    sched = build_schedule(row_layer(np.arange(8)))
    with pytest.raises(ScheduleMismatchError):
        sched.lane_indices(row_layer(np.arange(9)))


def test_bank_aware_full_row_is_conflict_free():
    perm = np.random.default_rng(1).permutation(32)
    layer = optimize_layer(row_layer(perm, cols=32), 1)
    report = simulate_layer(build_schedule(layer), layer, 1)
    assert report.actual_cycles == report.ideal_cycles == 1


def test_optimize_layer_tags_and_requires_padding():
    layer = pad_rows(prune_naive(random_dense(8, 8, 0), 0.5))
    assert optimize_layer(layer, 2).layout_tag == "bank-aware(w=2)"
    with pytest.raises(ValueError):
        optimize_layer(prune_naive(random_dense(8, 8, 0) * np.arange(1, 9), 0.3), 1)
    with pytest.raises(ValueError):
        optimize_layer(layer, 3)


@pytest.mark.parametrize("w", [1, 2, 4])
def test_optimize_layer_is_idempotent(w):
    layer = pad_rows(prune_naive(random_dense(256, 256, 7), 0.1))
    once = optimize_layer(layer, w)
    twice = optimize_layer(once, w)
    assert twice.identical(once)
    for batch in (1, 4):
        a = simulate_layer(build_schedule(once), once, w, batch)
        b = simulate_layer(build_schedule(twice), twice, w, batch)
        assert a.actual_cycles == b.actual_cycles


@pytest.mark.parametrize("w", [1, 2, 4])
@pytest.mark.parametrize("hidden,density", [(64, 0.3), (128, 0.05), (512, 0.01), (512, 0.3)])
def test_optimize_layer_never_costs_a_warp_more(w, hidden, density):
    layer = pad_rows(prune_naive(random_dense(hidden, hidden, hidden), density))
    out = optimize_layer(layer, w)
    assert (warp_cycles(out, w) <= warp_cycles(layer, w)).all()


def test_greedy_without_guard_matches_oracle_in_canonical_order():
    layer = pad_rows(prune_naive(random_dense(64, 64, 3), 0.3))
    out = optimize_layer(layer, 1, keep_better=False)
    for r in range(layer.rows):
        # Canonical order of an as-pruned row: real pairs ascend, padding last.
        idx, val = layer.indices[r], layer.values[r]
        real = list(idx[val != 0])
        pads = [0] * int((val == 0).sum())
        assert list(out.indices[r]) == oracles.greedy_row(real + pads, r)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=1, max_size=70, unique=True),
       st.integers(0, 100), st.sampled_from([8, 16, 32]))
def test_row_layout_is_the_greedy_permutation(indices, x, banks):
    idx = np.array(indices)
    val = np.arange(len(idx), dtype=F32)
    out_idx, out_val = optimize_row_layout(idx, val, x, banks)
    assert sorted(out_idx) == sorted(indices)
    # Pairs travel together.
    assert all(idx[int(v)] == i for i, v in zip(out_idx, out_val))
    assert list(out_idx) == oracles.greedy_row(indices, x, banks)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(0, 31))
def test_row_layout_terminates_when_every_index_shares_a_bank(n, x):
    idx = np.arange(n) * 32
    out, _ = optimize_row_layout(idx, np.ones(n, F32), x)
    assert sorted(out) == list(idx)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 100), st.integers(0, 31), st.integers(0, 10_000))
def test_rows_within_bank_capacity_are_conflict_free(n, x, seed):
    # Bank b owns the positions p < n with p = x + b (mod 32). The capacities sum
    # to n, so a row of n pairs fits only when every bank is filled exactly.
    rng = np.random.default_rng(seed)
    capacity = [len(range((x + b) % 32, n, 32)) for b in range(32)]
    slots = np.arange(4) * 32
    chosen = [b + rng.choice(slots, size=capacity[b], replace=False) for b in range(32)]
    idx = rng.permutation(np.concatenate(chosen).astype(np.int64))
    assert idx.size == n
    out, _ = optimize_row_layout(idx, np.ones(n, F32), x)
    layer = SparseLayer(1, 128, [out], [np.ones(n, F32)], [n])
    report = simulate_layer(build_schedule(layer, lanes_per_row=32), layer, 1)
    assert report.actual_cycles == report.ideal_cycles
