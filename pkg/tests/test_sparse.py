import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from sparse_persistent.errors import CorruptLayerError, FormatError, ShapeError
from sparse_persistent.layout import optimize_layer
from sparse_persistent.sparse import (
    SparseLayer,
    dense_from_bytes,
    dense_to_bytes,
    effective_layer_size,
    keep_count,
    layer_from_bytes,
    layer_to_bytes,
    load_dense,
    load_layer,
    pad_rows,
    prune_naive,
    prune_row_balanced,
    reconstruct_dense,
    save_dense,
    save_layer,
)

F32 = np.float32
M = np.array([[1, -2], [3, -4]], dtype=F32)


def bits(a):
    return np.asarray(a, dtype=F32).view(np.uint32)


def kept(layer):
    return reconstruct_dense(layer) != 0


def test_naive_keeps_global_top_k():
    layer = prune_naive(M, 0.5)
    assert list(layer.lengths) == [0, 2]
    assert np.array_equal(reconstruct_dense(layer), [[0, 0], [3, -4]])


def test_naive_full_density_is_identity():
    assert np.array_equal(bits(reconstruct_dense(prune_naive(M, 1.0))), bits(M))


def test_naive_ties_prefer_smaller_row_col():
    m = np.array([[1, 2, 2], [2, 2, 1]], dtype=F32)
    layer = prune_naive(m, 0.5)  # keep 3 of the four 2s
    assert np.array_equal(kept(layer), [[False, True, True], [True, False, False]])


def test_row_balanced_keeps_row_top_k():
    layer = prune_row_balanced(M, 0.5)
    assert np.array_equal(reconstruct_dense(layer), [[0, -2], [0, -4]])


def test_row_balanced_counts():
    m = np.random.default_rng(0).standard_normal((4, 8)).astype(F32)
    layer = prune_row_balanced(m, 0.25)
    assert list(layer.lengths) == [2, 2, 2, 2] and layer.is_padded
    assert pad_rows(layer) is layer


def test_density_validation():
    for d in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            prune_naive(M, d)


def test_keep_count_uses_decimal_value():
    assert keep_count(0.1, 10) == 1
    assert keep_count(0.3, 10) == 3
    assert keep_count(0.01, 1152 * 1152) == 13272  # 13271.04 rounds up


def test_effective_layer_size():
    assert effective_layer_size(5760, 0.01) == pytest.approx(576.0)


def test_pad_rows_equalizes():
    layer = SparseLayer.from_rows(4, [([0, 1, 2], [1, 2, 3]), ([3], [4]), ([1, 2], [5, 6])])
    padded = pad_rows(layer)
    assert padded.pairs_per_row == 3 and list(padded.lengths) == [3, 3, 3]
    assert np.array_equal(padded.indices[1], [3, 0, 0])
    assert np.array_equal(bits(padded.values[2]), bits([5, 6, 0]))
    assert np.array_equal(bits(reconstruct_dense(padded)), bits(reconstruct_dense(layer)))
    assert pad_rows(padded) is padded


def test_padding_skewed_naive_layer_keeps_matrix():
    m = np.random.default_rng(4).standard_normal((8, 8)).astype(F32)
    m[0] *= 10  # skew: row 0 dominates
    layer = prune_naive(m, 0.5)
    assert layer.lengths.max() > layer.lengths.min()
    assert np.array_equal(bits(reconstruct_dense(pad_rows(layer))), bits(reconstruct_dense(layer)))
    assert pad_rows(layer).density > layer.stored_pairs / 64


def test_reconstruct_empty_layer():
    layer = SparseLayer(2, 3, np.zeros((2, 0)), np.zeros((2, 0)), [0, 0])
    assert np.array_equal(reconstruct_dense(layer), np.zeros((2, 3)))


def test_reconstruct_after_bank_aware_layout():
    m = np.random.default_rng(2).standard_normal((64, 64)).astype(F32)
    layer = pad_rows(prune_naive(m, 0.2))
    for w in (1, 2, 4):
        assert np.array_equal(bits(reconstruct_dense(optimize_layer(layer, w))),
                              bits(reconstruct_dense(layer)))


def test_layer_validation():
    with pytest.raises(CorruptLayerError) as err:
        SparseLayer(2, 3, [[0], [3]], [[1.0], [1.0]], [1, 1])
    assert err.value.row == 1
    with pytest.raises(CorruptLayerError):
        SparseLayer(1, 3, [[1, 1]], [[1.0, 2.0]], [2])
    with pytest.raises(ShapeError):
        SparseLayer(1, 3, [[1, 2]], [[1.0]], [1])
    # Padding pairs may repeat index 0 next to a real index-0 weight.
    SparseLayer(1, 3, [[0, 0, 0]], [[5.0, 0.0, 0.0]], [3])


def test_layer_arrays_are_read_only():
    layer = prune_naive(M, 1.0)
    with pytest.raises(ValueError):
        layer.values[0, 0] = 9.0


def test_layer_round_trip(tmp_path):
    m = np.random.default_rng(1).standard_normal((16, 12)).astype(F32)
    layer = optimize_layer(pad_rows(prune_naive(np.pad(m, ((0, 0), (0, 4))), 0.3)), 2)
    path = tmp_path / "l.sprn"
    save_layer(layer, path)
    back = load_layer(path)
    assert back.identical(layer)
    assert layer_to_bytes(back) == path.read_bytes()


def test_layer_header_layout():
    layer = pad_rows(prune_naive(M, 1.0))
    data = layer_to_bytes(optimize_layer(layer, 4))
    assert data[:4] == b"SPRN"
    assert struct.unpack_from("<IIIIB", data, 4) == (1, 2, 2, 2, 4)
    assert len(data) == 21 + 4 * 8


def test_unpadded_layer_cannot_be_saved():
    with pytest.raises(ValueError):
        layer_to_bytes(SparseLayer.from_rows(4, [([0, 1], [1, 2]), ([3], [4])]))


def test_bad_magic():
    data = bytearray(layer_to_bytes(pad_rows(prune_naive(M, 1.0))))
    data[:4] = b"XXXX"
    with pytest.raises(FormatError) as err:
        layer_from_bytes(bytes(data))
    assert err.value.offset == 0


def test_index_out_of_range_reports_row_and_offset():
    layer = pad_rows(prune_naive(np.ones((3, 4), dtype=F32), 1.0))
    data = bytearray(layer_to_bytes(layer))
    offset = 21 + (2 * 4 + 1) * 8  # row 2, slot 1
    data[offset:offset + 4] = struct.pack("<I", 4)
    with pytest.raises(CorruptLayerError) as err:
        layer_from_bytes(bytes(data))
    assert err.value.row == 2 and err.value.offset == offset


@pytest.mark.parametrize("cut", [0, 10, 21, 30])
def test_truncated_layer(cut):
    data = layer_to_bytes(pad_rows(prune_naive(M, 1.0)))
    with pytest.raises(FormatError):
        layer_from_bytes(data[:cut])


def test_trailing_bytes_rejected():
    data = layer_to_bytes(pad_rows(prune_naive(M, 1.0)))
    with pytest.raises(FormatError):
        layer_from_bytes(data + b"\0")


def test_bad_version_and_tag():
    data = bytearray(layer_to_bytes(pad_rows(prune_naive(M, 1.0))))
    bad = bytearray(data)
    bad[4:8] = struct.pack("<I", 2)
    with pytest.raises(FormatError):
        layer_from_bytes(bytes(bad))
    bad = bytearray(data)
    bad[20] = 3
    with pytest.raises(FormatError):
        layer_from_bytes(bytes(bad))


def test_dense_round_trip(tmp_path):
    m = np.array([[1.5, -0.0], [np.inf, 2.0]], dtype=F32)
    path = tmp_path / "m.dnsm"
    save_dense(m, path)
    assert np.array_equal(bits(load_dense(path)), bits(m))
    data = dense_to_bytes(m)
    with pytest.raises(FormatError):
        dense_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        dense_from_bytes(data[:-1])


matrices = hnp.arrays(
    F32,
    st.tuples(st.integers(1, 6), st.integers(1, 6)),
    elements=st.sampled_from([-3.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0]),
)


@settings(max_examples=60, deadline=None)
@given(matrices, st.sampled_from([0.1, 0.25, 0.5, 0.75, 1.0]))
def test_naive_matches_sort_oracle(m, d):
    layer = prune_naive(m, d)
    assert np.array_equal(kept(layer), oracles.prune_top_k(m, d))
    assert layer.nnz == keep_count(d, m.size)


@settings(max_examples=60, deadline=None)
@given(matrices, st.sampled_from([0.1, 0.25, 0.5, 0.75, 1.0]))
def test_row_balanced_matches_sort_oracle(m, d):
    layer = prune_row_balanced(m, d)
    assert np.array_equal(kept(layer), oracles.prune_row_top_k(m, d))
    assert pad_rows(layer) is layer


@settings(max_examples=40, deadline=None)
@given(matrices, st.sampled_from([0.2, 0.5, 1.0]))
def test_padding_preserves_matrix_and_adds_density(m, d):
    layer = prune_naive(m, d)
    padded = pad_rows(layer)
    assert np.array_equal(bits(reconstruct_dense(padded)), bits(reconstruct_dense(layer)))
    assert padded.stored_pairs >= layer.stored_pairs
    assert layer_from_bytes(layer_to_bytes(padded)).identical(padded)
