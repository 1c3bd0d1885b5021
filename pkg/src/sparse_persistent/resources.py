"""Register / shared-memory feasibility of the four recurrent algorithms.

The persistent algorithms keep the recurrent weights in the register file
(dense: one word per weight; sparse: two words per <index, value> pair) and
the activations in per-block shared memory (``w`` samples per activation,
doubled by the Lamport double buffer).  The GEMM algorithms stream weights
from DRAM and are always feasible; they are reported for comparison.
"""

from dataclasses import asdict, dataclass, field
import enum
import json
import math
from importlib import resources as _pkg_resources
from pathlib import Path
from typing import Dict, Optional

from .config import SyncMode
from .sparse import check_density, keep_count

WORD_BYTES = 4


class Algorithm(enum.Enum):
    DENSE_GEMM = "dense-gemm"
    SPARSE_GEMM = "sparse-gemm"
    DENSE_PERSISTENT = "dense-persistent"
    SPARSE_PERSISTENT = "sparse-persistent"

    @classmethod
    def parse(cls, value) -> "Algorithm":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise ValueError(
                f"unknown algorithm {value!r}; expected one of {[a.value for a in cls]}"
            ) from None

    @property
    def persistent(self) -> bool:
        return self in (Algorithm.DENSE_PERSISTENT, Algorithm.SPARSE_PERSISTENT)


@dataclass
class ArchProfile:
    name: str
    sm_count: int
    registers_per_sm: int
    max_registers_per_thread: int
    shared_mem_bytes_per_block: int
    banks: int = 32
    usable_register_fraction: Dict[str, float] = field(default_factory=dict)
    cost_model: Dict[str, float] = field(default_factory=dict)
    calibration_note: str = ""

    def __post_init__(self):
        for name in ("sm_count", "registers_per_sm", "max_registers_per_thread",
                     "shared_mem_bytes_per_block", "banks"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for algo, frac in self.usable_register_fraction.items():
            Algorithm.parse(algo)
            if not (0.0 < frac <= 1.0):
                raise ValueError(f"usable register fraction for {algo} must lie in (0, 1]")

    @property
    def total_registers(self) -> int:
        return self.sm_count * self.registers_per_sm

    def register_budget(self, algorithm) -> int:
        algo = Algorithm.parse(algorithm)
        frac = self.usable_register_fraction.get(algo.value, 1.0)
        return int(self.total_registers * frac)

    def cost(self, key: str) -> float:
        return float(self.cost_model[key])

    @classmethod
    def from_dict(cls, data: dict) -> "ArchProfile":
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def load_arch_profile(source="v100") -> ArchProfile:
    """Load a profile from a JSON path, or a shipped one by name (``"v100"``)."""
    path = Path(str(source))
    if not path.is_file():
        path = _pkg_resources.files("sparse_persistent") / "data" / f"{path.stem}.json"
        if not path.is_file():
            raise FileNotFoundError(f"no arch profile at {source!r}")
    return ArchProfile.from_dict(json.loads(path.read_text()))


def shared_mem_required(hidden: int, vector_width: int = 1, sync_mode=SyncMode.LAMPORT) -> int:
    """Bytes of per-block shared memory holding the activations."""
    buffers = 2 if SyncMode.parse(sync_mode) is SyncMode.LAMPORT else 1
    return hidden * vector_width * WORD_BYTES * buffers


def registers_required(algorithm, hidden: int, density: float = 1.0,
                       pairs_per_row: Optional[int] = None,
                       compress_indices: bool = False) -> int:
    """32-bit register words needed to keep the recurrent weights resident.

    For the sparse algorithm the pair count is ``ceil(density * H^2)``, or
    ``pairs_per_row * H`` when a padded layer's width is known.
    ``compress_indices`` is the what-if of packing two 16-bit indices per
    register (1.5 words per pair).
    """
    algo = Algorithm.parse(algorithm)
    if algo is Algorithm.DENSE_PERSISTENT:
        return hidden * hidden
    if algo is Algorithm.SPARSE_PERSISTENT:
        check_density(density)
        pairs = pairs_per_row * hidden if pairs_per_row is not None else keep_count(density, hidden * hidden)
        if compress_indices:
            return pairs + math.ceil(pairs / 2)
        return 2 * pairs
    return 0


@dataclass
class FeasibilityVerdict:
    algorithm: str
    feasible: bool
    limiting_resource: str  # "Registers", "SharedMemory" or "None"
    registers_required: int
    registers_available: int
    shared_mem_required: int
    shared_mem_available: int

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self):
        if self.feasible:
            return "feasible"
        return f"infeasible: {self.limiting_resource}"


def check_feasibility(arch: ArchProfile, algorithm, hidden: int, density: float = 1.0,
                      vector_width: int = 1, sync_mode=SyncMode.LAMPORT,
                      compress_indices: bool = False) -> FeasibilityVerdict:
    algo = Algorithm.parse(algorithm)
    check_density(density)
    if vector_width not in (1, 2, 4):
        raise ValueError(f"vector width must be 1, 2 or 4, got {vector_width}")
    if not algo.persistent:
        return FeasibilityVerdict(algo.value, True, "None", 0, arch.total_registers,
                                  0, arch.shared_mem_bytes_per_block)
    regs = registers_required(algo, hidden, density, compress_indices=compress_indices)
    reg_budget = arch.register_budget(algo)
    smem = shared_mem_required(hidden, vector_width, sync_mode)
    smem_budget = arch.shared_mem_bytes_per_block
    reg_ratio = regs / reg_budget
    smem_ratio = smem / smem_budget
    feasible = reg_ratio <= 1.0 and smem_ratio <= 1.0
    if feasible:
        limit = "None"
    else:
        limit = "Registers" if reg_ratio >= smem_ratio else "SharedMemory"
    return FeasibilityVerdict(algo.value, feasible, limit, regs, reg_budget, smem, smem_budget)


def max_feasible_hidden(arch: ArchProfile, algorithm, density: float = 1.0,
                        vector_width: int = 1, sync_mode=SyncMode.LAMPORT,
                        step: int = 32, limit: int = 1 << 16) -> int:
    """Largest multiple of ``step`` for which the algorithm still fits (0 if none)."""
    best = 0
    lo, hi = 1, limit // step
    while lo <= hi:
        mid = (lo + hi) // 2
        if check_feasibility(arch, algorithm, mid * step, density, vector_width, sync_mode).feasible:
            best, lo = mid * step, mid + 1
        else:
            hi = mid - 1
    return best
