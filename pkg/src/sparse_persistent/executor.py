"""Multi-worker sparse persistent RNN/LSTM execution on CPU threads.

Each worker plays the part of a thread block: it owns a contiguous run of
warps (and therefore rows), keeps its rows' <index, value> pairs for the
whole sequence, and per timestep runs load -> operate -> reduce -> publish.

Synchronization between timesteps is either a global barrier or the flagless
Lamport scheme: output words start as the ``-0.0`` bit pattern and a word is
valid as soon as it holds anything else.  Computed ``-0.0`` results are
published as ``+0.0`` so they cannot alias the sentinel.

Lamport mode keeps three global activation slots.  Slot ``t % 3`` receives
``h_t``.  A worker resets its own rows of slot ``(t + 1) % 3`` only after it
has loaded all of ``h_{t-1}``: every other worker published its share of
``h_{t-1}`` after it finished reading ``h_{t-2}`` (the previous contents of
that slot), so nobody can still be reading it.
"""

from dataclasses import dataclass, field
import threading
import time
from typing import Callable, List, Optional

import numpy as np

from .config import SyncMode
from .dense import F32, ActivationFn, as_batch, as_bias_sequence, lstm_gates
from .errors import ExecutorAborted, LivenessError, ScheduleMismatchError, ShapeError
from .layout import WarpSchedule, build_schedule
from .sparse import VALID_WIDTHS, SparseLayer

SENTINEL_BITS = np.uint32(0x80000000)


def canonicalize(x: np.ndarray) -> np.ndarray:
    """Return ``x`` with every ``-0.0`` replaced by ``+0.0`` (other bits untouched)."""
    x = np.array(x, dtype=F32, copy=True)
    bits = x.view(np.uint32)
    bits[bits == SENTINEL_BITS] = 0
    return x


@dataclass
class PollPolicy:
    """Backoff for consumers waiting on unpublished words.

    The first ``spins`` polls only yield; after that the sleep starts at
    ``initial_sleep`` seconds and doubles up to ``max_sleep``.  ``budget``
    caps the number of polls per wait (None = unbounded).
    """

    spins: int = 8
    initial_sleep: float = 20e-6
    max_sleep: float = 1e-3
    budget: Optional[int] = None

    def pause(self, attempt: int) -> None:
        if attempt < self.spins:
            time.sleep(0)
        else:
            doublings = min(attempt - self.spins, 30)
            time.sleep(min(self.max_sleep, self.initial_sleep * 2.0 ** doublings))


class SentinelBuffer:
    """An ``(H, B)`` float32 buffer whose unpublished words hold ``-0.0``."""

    def __init__(self, hidden: int, batch: int, check_single_write: bool = False):
        self.data = np.empty((hidden, batch), dtype=F32)
        self.bits = self.data.view(np.uint32)
        self.check_single_write = check_single_write
        self.reset()

    def reset(self, rows=slice(None)) -> None:
        self.bits[rows] = SENTINEL_BITS

    def valid(self) -> np.ndarray:
        return self.bits != SENTINEL_BITS

    def publish(self, element, value) -> None:
        """Store one value; ``element`` is ``(row, sample)``."""
        if self.check_single_write and self.bits[element] != SENTINEL_BITS:
            raise RuntimeError(f"element {element} published twice")
        self.data[element] = canonicalize(np.asarray(value, dtype=F32))

    def publish_rows(self, rows, values: np.ndarray) -> None:
        if self.check_single_write and (self.bits[rows] != SENTINEL_BITS).any():
            raise RuntimeError("rows published twice in one timestep")
        # Values are canonical, so every word flips from the sentinel exactly once.
        self.data[rows] = values

    def consume(self, element, poll: PollPolicy = PollPolicy(), timestep=None,
                abort: Optional[threading.Event] = None):
        """Wait until ``element`` is published and return it."""
        attempt = 0
        while self.bits[element] == SENTINEL_BITS:
            _check_wait(attempt, poll, abort, element, timestep)
            poll.pause(attempt)
            attempt += 1
        return F32(self.data[element])


def _check_wait(attempt, poll, abort, element, timestep):
    if abort is not None and abort.is_set():
        raise ExecutorAborted("run aborted while waiting for activations")
    if poll.budget is not None and attempt >= poll.budget:
        raise LivenessError(
            f"element {element} of timestep {timestep} still unpublished "
            f"after {attempt} polls",
            element=element,
            timestep=timestep,
        )


class TimestepBuffer:
    """Worker-local activation staging, double-buffered for prefetching.

    ``stage[k]`` holds the activations of timestep ``epoch[k]`` and
    ``pending[k]`` flags the words that were not yet valid when they were
    copied; those have to be consumed again before use.
    """

    def __init__(self, hidden: int, batch: int, double: bool = True):
        count = 2 if double else 1
        self.stage = [np.zeros((hidden, batch), dtype=F32) for _ in range(count)]
        self.pending = [np.ones((hidden, batch), dtype=bool) for _ in range(count)]
        self.epoch = [-1] * count
        self.current = 0

    @property
    def nbytes(self) -> int:
        return sum(s.nbytes for s in self.stage)

    @property
    def next(self) -> int:
        return (self.current + 1) % len(self.stage)

    def swap(self) -> None:
        self.current = self.next

    def prefetch_next(self, source: SentinelBuffer, step: int) -> np.ndarray:
        """Copy the already-valid words of ``step``'s activations; return the invalid mask."""
        k = self.next
        valid = source.valid()
        np.copyto(self.stage[k], source.data, where=valid)
        self.pending[k] = ~valid
        self.epoch[k] = step
        return self.pending[k]

    def load(self, source: SentinelBuffer, step: int, poll: PollPolicy,
             abort: Optional[threading.Event] = None) -> np.ndarray:
        """Make ``stage[current]`` hold all of ``step``'s activations.

        Only words still pending from a prefetch are re-read; the rest are
        already staged.  Returns the staged array.
        """
        k = self.current
        if self.epoch[k] != step:
            self.pending[k][...] = True
            self.epoch[k] = step
        stage, pending = self.stage[k], self.pending[k]
        flat_stage, flat_pending = stage.reshape(-1), pending.reshape(-1)
        src_bits, src = source.bits.reshape(-1), source.data.reshape(-1)
        todo = np.flatnonzero(flat_pending)
        attempt = 0
        while todo.size:
            ready = src_bits[todo] != SENTINEL_BITS
            got = todo[ready]
            flat_stage[got] = src[got]
            flat_pending[got] = False
            todo = todo[~ready]
            if todo.size:
                _check_wait(attempt, poll, abort, int(todo[0]), step)
                poll.pause(attempt)
                attempt += 1
        self.polls = attempt
        return stage


@dataclass
class RunResult:
    h: np.ndarray
    c: Optional[np.ndarray] = None
    trace: Optional[np.ndarray] = None  # (T, H, B): published h_1 .. h_T
    staging_bytes_per_worker: int = 0
    workers: int = 1
    polls: int = 0
    write_counts: Optional[np.ndarray] = None


class RandomDelay:
    """Delay hook sleeping a random time at each stage boundary (for tests).

    Each worker draws from its own generator, so the hook is thread-safe.
    """

    def __init__(self, seed: int, max_delay: float = 2e-4, probability: float = 0.5):
        self.seed = seed
        self.max_delay = max_delay
        self.probability = probability
        self._rngs = {}
        self._lock = threading.Lock()

    def __call__(self, worker: int, step: int, stage: str) -> None:
        rng = self._rngs.get(worker)
        if rng is None:
            with self._lock:
                rng = self._rngs.setdefault(worker, np.random.default_rng([self.seed, worker]))
        if rng.random() < self.probability:
            time.sleep(rng.random() * self.max_delay)


def interleave_gate_rows(hidden: int) -> np.ndarray:
    """Row permutation putting unit ``j``'s [i, f, g, o] gate rows next to each other."""
    return (np.arange(hidden)[:, None] + hidden * np.arange(4)[None, :]).ravel()


def _lane_tables(layer: SparseLayer, schedule: WarpSchedule):
    """Per-row ``(rows, lanes, steps)`` index/value tables in ascending lane order."""
    lane_row = schedule.lane_row
    w_ids, l_ids = np.nonzero(lane_row >= 0)
    rows = lane_row[w_ids, l_ids]
    order = np.lexsort((l_ids, w_ids, rows))
    rows, w_ids, l_ids = rows[order], w_ids[order], l_ids[order]
    counts = np.bincount(rows, minlength=layer.rows)
    lpr = schedule.lanes_per_row
    if (counts != lpr).any():
        raise ScheduleMismatchError(f"every row needs exactly {lpr} lanes in the schedule")
    pos = schedule.positions[w_ids, l_ids].reshape(layer.rows, lpr, schedule.steps)
    covered = np.sort(pos.reshape(layer.rows, -1), axis=1)
    live = covered[:, covered.shape[1] - layer.pairs_per_row:]
    if (covered[:, :covered.shape[1] - layer.pairs_per_row] >= 0).any() or \
            (live != np.arange(layer.pairs_per_row)).any():
        raise ScheduleMismatchError("schedule does not cover each row position exactly once")
    r_idx = np.arange(layer.rows)[:, None, None]
    inert = pos < 0
    safe = np.where(inert, 0, pos)
    idx = np.where(inert, 0, layer.indices[r_idx, safe]).astype(np.intp)
    val = np.where(inert, F32(0.0), layer.values[r_idx, safe]).astype(F32)
    return idx, val


class PersistentEngine:
    """Runs one sparse recurrent layer over many timesteps with a pool of workers.

    Args:
        layer: padded layer; ``H x H`` for an RNN, ``4H x H`` (rows already
            unit-interleaved, see :func:`interleave_gate_rows`) for an LSTM.
        schedule: warp schedule for ``layer`` (built with defaults if None).
        workers: requested worker threads; workers that would own no rows
            are not started (``self.workers`` is the number actually used).
        sync_mode: ``"barrier"`` or ``"lamport"``.
        vector_width: activation words per wide load; it does not change the
            arithmetic, only the staging accounting.
        activation: output nonlinearity for the RNN cell.
        cell: ``"rnn"`` or ``"lstm"``.
        poll: backoff/budget for Lamport consumers.
        delay: optional hook ``delay(worker, step, stage)`` used to inject jitter.
        debug: count writes per element and timestep and verify exactly-once.
    """

    def __init__(self, layer: SparseLayer, schedule: Optional[WarpSchedule] = None,
                 workers: int = 1, sync_mode=SyncMode.LAMPORT, vector_width: int = 1,
                 activation=ActivationFn.TANH, cell: str = "rnn",
                 poll: Optional[PollPolicy] = None,
                 delay: Optional[Callable[[int, int, str], None]] = None,
                 debug: bool = False):
        if not layer.is_padded:
            raise ValueError("the engine needs a padded layer; call pad_rows first")
        if cell not in ("rnn", "lstm"):
            raise ValueError(f"cell must be 'rnn' or 'lstm', got {cell!r}")
        quantum = 4 if cell == "lstm" else 1
        if layer.rows != quantum * layer.cols:
            raise ShapeError(
                f"{cell} layer must have {quantum} x cols rows, got {layer.rows}x{layer.cols}"
            )
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if vector_width not in VALID_WIDTHS:
            raise ValueError(f"vector width must be one of {VALID_WIDTHS}")
        self.layer = layer
        self.schedule = schedule if schedule is not None else build_schedule(layer)
        self.schedule.check(layer)
        self.hidden = layer.cols
        self.workers = workers
        self.sync_mode = SyncMode.parse(sync_mode)
        self.vector_width = vector_width
        self.activation = ActivationFn.parse(activation)
        self.cell = cell
        self.poll = poll or PollPolicy()
        self.delay = delay
        self.debug = debug
        self._idx, self._val = _lane_tables(layer, self.schedule)
        self.requested_workers = workers
        self._owned = self._partition(quantum)
        # A worker owning no rows never publishes, and the Lamport slot-reuse
        # argument needs every reader to also be a publisher; such workers
        # are simply not started.
        self._owned = [rows for rows in self._owned if rows.size]
        self.workers = len(self._owned)

    def _partition(self, quantum: int) -> List[np.ndarray]:
        """Split warps into contiguous blocks, one per worker, as rows owned."""
        sched = self.schedule
        per_warp = sched.rows_per_warp
        warps_per_unit = max(1, quantum // per_warp)
        units = np.arange(sched.n_warps).reshape(-1, 1)
        if warps_per_unit > 1:
            pad = (-sched.n_warps) % warps_per_unit
            units = np.concatenate([np.arange(sched.n_warps), -np.ones(pad, int)])
            units = units.reshape(-1, warps_per_unit)
        owned = []
        for block in np.array_split(units, self.workers):
            warps = block.ravel()
            warps = warps[warps >= 0]
            rows = np.unique(sched.lane_row[warps][sched.lane_row[warps] >= 0])
            owned.append(rows)
        if quantum > 1:
            for rows in owned:
                if rows.size % quantum or (rows.size and (rows.reshape(-1, quantum)[:, 0] % quantum).any()):
                    raise ScheduleMismatchError("LSTM gate rows of one unit span two workers")
        return owned

    @property
    def staging_bytes_per_worker(self) -> int:
        """Bytes of worker-local activation staging (``w`` words per activation)."""
        buffers = 2 if self.sync_mode is SyncMode.LAMPORT else 1
        return buffers * self.hidden * self.vector_width * 4

    # ------------------------------------------------------------------ compute

    def _operate(self, rows: np.ndarray, act: np.ndarray, bias: np.ndarray) -> np.ndarray:
        """Pre-activations for ``rows``: lane sums in step order, then lanes in order.

        Both levels use compensated (Kahan) float32 summation.  The products
        are the same whatever the layout, so a bank-aware reordering moves the
        result by about one rounding instead of growing with the row length.
        """
        idx, val = self._idx[rows], self._val[rows]
        acc = val[:, :, 0, None] * act[idx[:, :, 0]]
        comp = np.zeros_like(acc)
        for s in range(1, idx.shape[2]):
            y = val[:, :, s, None] * act[idx[:, :, s]] - comp
            t = acc + y
            comp = (t - acc) - y
            acc = t
        total = acc[:, 0].copy()
        lost = np.zeros_like(total)
        for lane in range(1, acc.shape[1]):
            y = acc[:, lane] - lost
            t = total + y
            lost = (t - total) - y
            total = t
        # Lane residuals are tiny, so a plain sum of them is enough.
        lost += comp.sum(axis=1)
        return (total - lost) + bias[rows]

    def _finish(self, pre: np.ndarray, c_own):
        if self.cell == "rnn":
            return canonicalize(self.activation(pre)), None
        units = pre.shape[0] // 4
        blocks = pre.reshape(units, 4, -1).transpose(1, 0, 2).reshape(4 * units, -1)
        h, c = lstm_gates(blocks, c_own)
        return canonicalize(h), c

    # ---------------------------------------------------------------------- run

    def run(self, h0, b_prime_seq, c0=None, trace: bool = False) -> RunResult:
        """Run all timesteps in ``b_prime_seq`` starting from ``h0`` (and ``c0``)."""
        hidden = self.hidden
        h0 = as_batch(h0, hidden, "h0")
        batch = h0.shape[1]
        biases = as_bias_sequence(b_prime_seq, self.layer.rows, batch)
        lstm = self.cell == "lstm"
        if lstm:
            if c0 is None:
                raise ValueError("an LSTM run needs c0")
            c0 = as_batch(c0, hidden, "c0")
        steps = biases.shape[0]

        result = RunResult(
            h=h0.copy(),
            c=c0.copy() if lstm else None,
            trace=np.empty((steps, hidden, batch), dtype=F32) if trace else None,
            staging_bytes_per_worker=self.staging_bytes_per_worker,
            workers=self.workers,
        )
        if steps == 0:
            return result

        lamport = self.sync_mode is SyncMode.LAMPORT
        nslots = 3 if lamport else 2
        ring = [SentinelBuffer(hidden, batch, check_single_write=self.debug and lamport)
                for _ in range(nslots)]
        ring[0].data[...] = canonicalize(h0)  # a -0.0 input would read as unpublished
        if self.debug:
            result.write_counts = np.zeros((steps, hidden), dtype=np.int64)
        final_c = np.empty((hidden, batch), dtype=F32) if lstm else None
        state = _RunState(
            ring=ring, biases=biases, result=result, final_c=final_c, c0=c0,
            barrier=threading.Barrier(self.workers), abort=threading.Event(),
        )

        if self.workers == 1:
            self._worker(0, state)
        else:
            threads = [
                threading.Thread(target=self._worker_guarded, args=(w, state),
                                 name=f"persistent-worker-{w}", daemon=True)
                for w in range(self.workers)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if state.errors:
                first = state.errors[0]
                if isinstance(first, (LivenessError, ShapeError)):
                    raise first
                raise ExecutorAborted(f"worker failed: {first!r}") from first

        result.h = ring[steps % nslots].data.copy()
        if lstm:
            result.c = final_c
        if self.debug and (result.write_counts != 1).any():
            raise RuntimeError("an output element was not written exactly once per timestep")
        return result

    def _worker_guarded(self, wid: int, state: "_RunState") -> None:
        try:
            self._worker(wid, state)
        except BaseException as exc:  # noqa: BLE001 - reported by run()
            secondary = isinstance(exc, (threading.BrokenBarrierError, ExecutorAborted))
            with state.lock:
                # The root cause goes first; knock-on aborts queue behind it.
                if secondary:
                    state.errors.append(exc)
                else:
                    state.errors.insert(0, exc)
            state.abort.set()
            state.barrier.abort()

    def _worker(self, wid: int, state: "_RunState") -> None:
        rows = self._owned[wid]
        lamport = self.sync_mode is SyncMode.LAMPORT
        ring, biases, result = state.ring, state.biases, state.result
        hidden, batch = ring[0].data.shape
        nslots = len(ring)
        lstm = self.cell == "lstm"
        out_rows = rows[::4] // 4 if lstm else rows
        c_own = state.c0[out_rows].copy() if lstm else None
        staging = TimestepBuffer(hidden, batch, double=lamport)
        delay = self.delay
        polls = 0

        for t in range(1, biases.shape[0] + 1):
            if delay:
                delay(wid, t, "load")
            src = ring[(t - 1) % nslots]
            if lamport:
                act = staging.load(src, t - 1, self.poll, state.abort)
                polls += staging.polls
                ring[(t + 1) % nslots].reset(out_rows)
            else:
                act = staging.stage[0]
                np.copyto(act, src.data)
            pre = self._operate(rows, act, biases[t - 1])
            h_own, c_own = self._finish(pre, c_own)
            if delay:
                delay(wid, t, "publish")
            ring[t % nslots].publish_rows(out_rows, h_own)
            if result.trace is not None:
                # Read back the published words rather than the local copy.
                result.trace[t - 1, out_rows] = ring[t % nslots].data[out_rows]
            if result.write_counts is not None:
                result.write_counts[t - 1, out_rows] += 1
            if lamport:
                staging.prefetch_next(ring[t % nslots], t)
                staging.swap()
            elif self.workers > 1:
                state.barrier.wait()

        if lstm:
            state.final_c[out_rows] = c_own
        with state.lock:
            result.polls += polls


@dataclass
class _RunState:
    ring: list
    biases: np.ndarray
    result: RunResult
    final_c: Optional[np.ndarray]
    c0: Optional[np.ndarray]
    barrier: threading.Barrier
    abort: threading.Event
    lock: threading.Lock = field(default_factory=threading.Lock)
    errors: list = field(default_factory=list)


def run_sparse_sequence(layer: SparseLayer, schedule: Optional[WarpSchedule], h0, b_prime_seq,
                        g=ActivationFn.TANH, workers: int = 1, sync_mode=SyncMode.LAMPORT,
                        w: int = 1, trace: bool = False, **engine_kw) -> RunResult:
    """Run a sparse persistent RNN over ``len(b_prime_seq)`` timesteps."""
    engine = PersistentEngine(layer, schedule, workers=workers, sync_mode=sync_mode,
                              vector_width=w, activation=g, **engine_kw)
    return engine.run(h0, b_prime_seq, trace=trace)


def run_sparse_lstm_sequence(gate_layer: SparseLayer, h0, c0, b_prime_seq, workers: int = 1,
                             sync_mode=SyncMode.LAMPORT, w: int = 1,
                             lanes_per_row: Optional[int] = None, trace: bool = False,
                             **engine_kw) -> RunResult:
    """Run a sparse persistent LSTM.

    ``gate_layer`` is ``4H x H`` with gate blocks in [i; f; g; o] order (as for
    the dense reference) and ``b_prime_seq`` has ``4H`` rows in the same order.
    Rows are regrouped so each unit's four gate rows sit together in a warp.
    """
    hidden = gate_layer.cols
    if gate_layer.rows != 4 * hidden:
        raise ShapeError(f"gate layer must be 4H x H, got {gate_layer.rows}x{hidden}")
    perm = interleave_gate_rows(hidden)
    layer = gate_layer.replace(
        indices=gate_layer.indices[perm],
        values=gate_layer.values[perm],
        lengths=gate_layer.lengths[perm],
    )
    h0 = as_batch(h0, hidden, "h0")
    biases = as_bias_sequence(b_prime_seq, 4 * hidden, h0.shape[1])[:, perm]
    engine = PersistentEngine(layer, build_schedule(layer, lanes_per_row), workers=workers,
                              sync_mode=sync_mode, vector_width=w, cell="lstm", **engine_kw)
    return engine.run(h0, biases, c0=c0, trace=trace)
