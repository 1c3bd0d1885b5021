"""Sparse persistent RNNs: reference math, sparse layers, bank-aware layout,
a bank-conflict model, a multi-worker persistent executor and a resource model."""

from .banks import (
    ConflictReport,
    StageCosts,
    bank_of,
    estimate_timestep_cost,
    ideal_load_cycles,
    load_cycles,
    scalar_batch_cycles,
    simulate_layer,
)
from .config import RunConfig, SyncMode
from .dense import (
    ActivationFn,
    SequenceResult,
    lstm_step_dense,
    max_relative_error,
    precompute_input,
    rnn_step_dense,
    run_sequence_dense,
)
from .errors import (
    CorruptLayerError,
    ExecutorAborted,
    FormatError,
    LivenessError,
    ScheduleMismatchError,
    ShapeError,
)
from .executor import (
    PersistentEngine,
    PollPolicy,
    RandomDelay,
    RunResult,
    SentinelBuffer,
    TimestepBuffer,
    canonicalize,
    run_sparse_lstm_sequence,
    run_sparse_sequence,
)
from .layout import WarpSchedule, build_schedule, optimize_layer, optimize_row_layout
from .resources import (
    Algorithm,
    ArchProfile,
    FeasibilityVerdict,
    check_feasibility,
    load_arch_profile,
    max_feasible_hidden,
    registers_required,
    shared_mem_required,
)
from .sparse import (
    SparseLayer,
    effective_layer_size,
    keep_count,
    load_dense,
    load_layer,
    pad_rows,
    prune_naive,
    prune_row_balanced,
    reconstruct_dense,
    save_dense,
    save_layer,
)
from .workloads import random_dense, random_inputs, random_workload

__version__ = "0.1.0"
