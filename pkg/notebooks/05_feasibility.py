"""
Which layers fit on chip
========================

A persistent kernel keeps every weight in registers for the whole sequence
and the activations in shared memory.  The resource model turns that into a
verdict for a given GPU profile.
"""

# %%
from sparse_persistent import check_feasibility, load_arch_profile, max_feasible_hidden

v100 = load_arch_profile("v100")
print(v100.name, "-", v100.total_registers, "registers,",
      v100.shared_mem_bytes_per_block, "bytes of shared memory per block")

# %% Dense persistent: H^2 registers against a calibrated fraction of the register file.
for hidden in (1152, 1792, 2048, 2304):
    print(f"dense  H={hidden:<6}", check_feasibility(v100, "dense-persistent", hidden))

# %% Sparse persistent: two registers per pair, and activations in shared memory.
cases = [(5632, 0.10, 1, "lamport"), (5760, 0.01, 2, "lamport"), (5760, 0.01, 4, "lamport"),
         (11520, 0.01, 1, "lamport"), (11520, 0.01, 2, "lamport"), (11520, 0.01, 2, "barrier")]
for hidden, density, w, sync in cases:
    v = check_feasibility(v100, "sparse-persistent", hidden, density, w, sync)
    print(f"sparse H={hidden:<6} d={density:<5} w={w} {sync:<8} {str(v):<26}"
          f"regs {v.registers_required:>9}  smem {v.shared_mem_required:>7}")

# %% A barrier needs one activation buffer instead of two, doubling the memory-bound size.
for sync in ("lamport", "barrier"):
    print(sync, "max H at d=0.1%:", max_feasible_hidden(v100, "sparse-persistent", 0.001, 1, sync))

# %% Packing two 16-bit indices per register (1.5 words per pair) is a what-if.
print("5632 at 10% with packed indices:",
      check_feasibility(v100, "sparse-persistent", 5632, 0.1, compress_indices=True))
