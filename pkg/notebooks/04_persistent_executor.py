"""
The persistent executor
=======================

Workers own disjoint rows and keep their pairs for the whole sequence.  Each
timestep they load h_{t-1}, accumulate their rows, reduce across lanes and
publish h_t.  Two synchronization modes are available: a global barrier, or
per-element readiness where an unpublished word holds the -0.0 bit pattern.
"""

# %%
import time

import numpy as np

from sparse_persistent import (
    PersistentEngine,
    PollPolicy,
    RandomDelay,
    reconstruct_dense,
    run_sequence_dense,
    run_sparse_lstm_sequence,
)
from sparse_persistent.dense import max_relative_error
from sparse_persistent.workloads import random_workload

wl = random_workload(hidden=512, density=0.1, batch=4, timesteps=32, seed=0)
reference = run_sequence_dense(reconstruct_dense(wl.layer), wl.h0, wl.b_prime).h

# %% Same numbers in every configuration: the reduction order does not depend on workers.
outputs = {}
for sync in ("barrier", "lamport"):
    for workers in (1, 2, 4):
        engine = PersistentEngine(wl.layer, workers=workers, sync_mode=sync, vector_width=4)
        start = time.perf_counter()
        result = engine.run(wl.h0, wl.b_prime)
        outputs[sync, workers] = result.h
        print(f"{sync:<8} workers={workers}  {time.perf_counter() - start:6.3f}s  "
              f"staging {result.staging_bytes_per_worker} B  "
              f"err vs dense {max_relative_error(result.h, reference):.1e}  polls {result.polls}")
first = next(iter(outputs.values()))
print("bit-identical across all runs:",
      all(np.array_equal(first.view(np.uint32), h.view(np.uint32)) for h in outputs.values()))

# %% Random delays reorder who finishes first, but not what is computed.
engine = PersistentEngine(wl.layer, workers=4, sync_mode="lamport",
                          delay=RandomDelay(seed=7, max_delay=1e-3), poll=PollPolicy(budget=50_000),
                          debug=True)
jittered = engine.run(wl.h0, wl.b_prime)
print("with injected delays, identical:", np.array_equal(jittered.h, first),
      " every element written once per step:", bool((jittered.write_counts == 1).all()))

# %% LSTM: the four gate rows of a unit stay with one worker, which keeps c_t locally.
lstm = random_workload(hidden=64, density=0.2, batch=2, timesteps=16, seed=1, cell="lstm")
ref = run_sequence_dense(reconstruct_dense(lstm.layer), lstm.h0, lstm.b_prime, c0=lstm.c0)
got = run_sparse_lstm_sequence(lstm.layer, lstm.h0, lstm.c0, lstm.b_prime, workers=3)
print(f"LSTM err h {max_relative_error(got.h, ref.h):.1e}, c {max_relative_error(got.c, ref.c):.1e}")
