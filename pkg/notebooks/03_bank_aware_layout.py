"""
Bank conflicts and the bank-aware layout
========================================

Each warp step loads one activation per lane from shared memory.  Lanes that
hit different words of the same bank serialize.  Reordering each row's pairs
so that the lanes of a step land in distinct banks removes most of that
serialization.  Wide (w-word) loads interleave w samples per activation and
shrink the number of banks a load group can reach.
"""

# %%
from sparse_persistent import (
    build_schedule,
    load_cycles,
    optimize_layer,
    pad_rows,
    prune_naive,
    scalar_batch_cycles,
    simulate_layer,
)
from sparse_persistent.workloads import random_dense

# %% A warp load of 32 distinct banks takes one cycle; 32 words in one bank take 32.
print("lanes 0..31:", load_cycles(list(range(32))))
print("lanes 0, 32, 64, ...:", load_cycles([32 * i for i in range(32)]))
print("all lanes on one word (broadcast):", load_cycles([7] * 32))

# %% Wide loads: a 4-wide load serves 4 samples; compare with 4 scalar loads of the same buffer.
lanes = [j + 2 * g for g in range(4) for j in (0, 8, 16, 24, 1, 9, 17, 25)]
print("w=4 load:", load_cycles(lanes, 4), " four scalar loads:", scalar_batch_cycles(lanes, 4),
      " one scalar load of unbatched storage:", load_cycles(lanes, 1))

# %% Whole layer at H=1152, 10% density, batch 4.
layer = pad_rows(prune_naive(random_dense(1152, 1152, seed=3), 0.1))
print(f"{'layout':<18}{'w':>3}{'ideal':>9}{'actual':>9}{'penalty':>9}")
for w in (1, 2, 4):
    for candidate in (layer, optimize_layer(layer, w)):
        r = simulate_layer(build_schedule(candidate), candidate, w, batch=4)
        print(f"{candidate.layout_tag:<18}{w:>3}{r.ideal_cycles:>9}{r.actual_cycles:>9}"
              f"{r.penalty:>9.3f}")

# %% Conflict cycles removed by the layout at w=4.
aware = optimize_layer(layer, 4)
before = simulate_layer(build_schedule(layer), layer, 4, 4).conflict_cycles
after = simulate_layer(build_schedule(aware), aware, 4, 4).conflict_cycles
print(f"conflict cycles {before} -> {after} ({1 - after / before:.0%} fewer)")
