import json

import pytest

from sparse_persistent.config import RunConfig, SyncMode
from sparse_persistent.resources import (
    Algorithm,
    ArchProfile,
    check_feasibility,
    load_arch_profile,
    max_feasible_hidden,
    registers_required,
    shared_mem_required,
)

V100 = load_arch_profile("v100")


def test_profile_totals():
    assert V100.total_registers == 80 * 65536
    assert V100.register_budget("dense-persistent") == 3_670_016
    assert V100.register_budget(Algorithm.SPARSE_PERSISTENT) == 5_242_880


def test_profile_round_trip(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(V100.to_dict()))
    assert load_arch_profile(path) == V100
    with pytest.raises(FileNotFoundError):
        load_arch_profile("a100")


def test_profile_validation():
    data = V100.to_dict()
    with pytest.raises(ValueError):
        ArchProfile.from_dict({**data, "sm_count": 0})
    with pytest.raises(ValueError):
        ArchProfile.from_dict({**data, "usable_register_fraction": {"dense-persistent": 1.5}})
    with pytest.raises(ValueError):
        ArchProfile.from_dict({**data, "usable_register_fraction": {"magic": 0.5}})


def test_register_counts():
    assert registers_required("dense-persistent", 1792) == 3_211_264
    assert registers_required("sparse-persistent", 100, 0.1) == 2000
    assert registers_required("sparse-persistent", 100, pairs_per_row=12) == 2400
    assert registers_required("sparse-persistent", 100, 0.1, compress_indices=True) == 1500
    assert registers_required("dense-gemm", 10_000) == 0


def test_shared_memory_formula():
    assert shared_mem_required(5760, 2, "lamport") == 92_160
    assert shared_mem_required(5760, 4, "lamport") == 184_320
    assert shared_mem_required(5760, 4, "barrier") == 92_160
    assert shared_mem_required(11520, 1, SyncMode.LAMPORT) == 92_160


def test_calibrated_verdicts():
    assert check_feasibility(V100, "dense-persistent", 1792).feasible
    bad = check_feasibility(V100, "dense-persistent", 2304)
    assert not bad.feasible and str(bad) == "infeasible: Registers"
    sp = check_feasibility(V100, "sparse-persistent", 5632, 0.1)
    assert str(sp) == "infeasible: Registers"
    assert sp.registers_required == 6_343_886
    ok = check_feasibility(V100, "sparse-persistent", 11520, 0.01, 1, "lamport")
    assert ok.feasible and ok.shared_mem_required == 92_160 and ok.limiting_resource == "None"


def test_shared_memory_can_be_the_limit():
    v = check_feasibility(V100, "sparse-persistent", 11520, 0.01, 4, "lamport")
    assert str(v) == "infeasible: SharedMemory"


def test_barrier_doubles_feasible_width_when_memory_bound():
    lam = max_feasible_hidden(V100, "sparse-persistent", 0.001, 1, "lamport")
    bar = max_feasible_hidden(V100, "sparse-persistent", 0.001, 1, "barrier")
    assert lam == 12_288 and bar == 24_576
    assert shared_mem_required(23_040, 1, "barrier") == shared_mem_required(11_520, 1, "lamport")
    assert shared_mem_required(11_520, 1, "barrier") == 46_080


def test_dense_boundary():
    assert max_feasible_hidden(V100, "dense-persistent") == 1888
    assert max_feasible_hidden(V100, "dense-persistent", step=1) == 1915


def test_gemm_always_feasible():
    v = check_feasibility(V100, "sparse-gemm", 100_000, 0.5)
    assert v.feasible and v.limiting_resource == "None"


def test_compression_what_if_extends_sparse_range():
    base = check_feasibility(V100, "sparse-persistent", 5632, 0.1)
    packed = check_feasibility(V100, "sparse-persistent", 5632, 0.1, compress_indices=True)
    assert not base.feasible and packed.feasible


def test_bad_inputs():
    with pytest.raises(ValueError):
        check_feasibility(V100, "sparse-persistent", 100, 0.0)
    with pytest.raises(ValueError):
        check_feasibility(V100, "dense-persistent", 100, vector_width=3)
    with pytest.raises(ValueError):
        Algorithm.parse("cusparse")


def test_run_config():
    cfg = RunConfig.from_json('{"sync_mode": "global-barrier", "batch": 2, "schema_version": 1}')
    assert cfg.sync_mode == "barrier" and cfg.to_dict()["schema_version"] == 1
    assert RunConfig(workers=3).resolved_workers == 3
    for bad in ({"batch": 3}, {"vector_width": 8}, {"workers": -1}, {"colour": 1},
                {"activation": "gelu"}, {"sync_mode": "spin"}):
        with pytest.raises(ValueError):
            RunConfig.from_dict(bad)
