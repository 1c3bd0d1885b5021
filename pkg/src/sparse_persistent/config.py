"""Run configuration shared by the executor, cost model and CLI."""

from dataclasses import asdict, dataclass, fields
import enum
import json
import os

from .dense import ActivationFn

CONFIG_SCHEMA_VERSION = 1


class SyncMode(enum.Enum):
    BARRIER = "barrier"
    LAMPORT = "lamport"

    @classmethod
    def parse(cls, value) -> "SyncMode":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("_", "").replace("-", "")
        if v in ("barrier", "globalbarrier"):
            return cls.BARRIER
        if v == "lamport":
            return cls.LAMPORT
        raise ValueError(f"unknown sync mode {value!r}; expected 'barrier' or 'lamport'")


@dataclass
class RunConfig:
    sync_mode: str = "lamport"
    workers: int = 0  # 0 = one per available CPU
    vector_width: int = 4
    timesteps: int = 16
    batch: int = 4
    activation: str = "tanh"
    trace: bool = False

    def __post_init__(self):
        self.sync_mode = SyncMode.parse(self.sync_mode).value
        self.activation = ActivationFn.parse(self.activation).value
        if self.vector_width not in (1, 2, 4):
            raise ValueError(f"vector_width must be 1, 2 or 4, got {self.vector_width}")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")
        if self.timesteps < 0:
            raise ValueError("timesteps must be >= 0")
        if self.batch < 1 or self.batch & (self.batch - 1):
            raise ValueError(f"batch must be a power of two, got {self.batch}")

    @property
    def resolved_workers(self) -> int:
        return self.workers or (os.cpu_count() or 1)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"schema_version"}
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"schema_version": CONFIG_SCHEMA_VERSION, **asdict(self)}
