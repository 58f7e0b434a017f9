"""Functional simulator of a rectangular grid of cores.

Each core owns a tile-budgeted SRAM and a :class:`CostLedger`.  A program maps
core coordinates to kernel callables.  A kernel may be a plain function or a
generator; every ``yield`` is a grid-wide barrier.  NoC sends issued during a
phase are buffered and delivered, in source order, when the barrier is
reached, so peers only ever observe each other's state across a barrier.
"""

from __future__ import annotations

import inspect
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import KernelError, PlacementError, SramOverflow
from .numerics import TILE_BYTES, TILE_SCALARS

OP_KINDS = (
    "load",
    "multicast_recv",
    "matmul_tile",
    "scale",
    "reduce_max",
    "reduce_sum",
    "xcore_reduce",
    "subtract",
    "exponentiate",
    "normalize",
    "write",
)

# Per-tile-op weights calibrated so the fused kernel's weighted decomposition
# lands on the measured runtime ordering (normalize ~2.6x matmul per output
# tile at d_k=128, exponentiate ~1.4x normalize).  A fit to one figure, not a
# hardware cycle model.
DEFAULT_WEIGHTS = {
    "load": 0.5,
    "multicast_recv": 0.25,
    "matmul_tile": 1.0,
    "scale": 0.5,
    "reduce_max": 0.5,
    "reduce_sum": 0.5,
    "xcore_reduce": 2.0,
    "subtract": 0.5,
    "exponentiate": 14.56,
    "normalize": 10.4,
    "write": 1.0,
}


def _parse_kv(path):
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out.append((key.strip(), value.strip()))
    return out


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class GridConfig:
    """Grid geometry and per-core memory budget.  Defaults describe a 10x12 board with 9 compute rows."""

    grid_rows: int = 10
    grid_cols: int = 12
    compute_rows: int = 9
    sram_bytes_per_core: int = 1_048_576
    sram_usable_tiles: int = 488
    # tiles held back for dataflow buffers; 0 exposes the full analytic bound
    reserve_tiles: int = 0
    # bfloat16 scalars one core can hold, used by the fused-kernel capacity estimate
    sram_scalars: int = 500_000
    # charge writes on row r with (compute_rows - r) in weighted costs
    write_stall: bool = False

    def __post_init__(self):
        if min(self.grid_rows, self.grid_cols, self.compute_rows) < 1:
            raise ValueError("grid dimensions must be positive")
        if self.compute_rows > self.grid_rows:
            raise ValueError("compute_rows cannot exceed grid_rows")
        if self.sram_usable_tiles < 1 or self.sram_usable_tiles * TILE_BYTES > self.sram_bytes_per_core:
            raise ValueError(
                f"{self.sram_usable_tiles} tiles do not fit in {self.sram_bytes_per_core} bytes"
            )
        if not 0 <= self.reserve_tiles < self.sram_usable_tiles:
            raise ValueError("reserve_tiles must be in [0, sram_usable_tiles)")
        if self.sram_scalars < 1:
            raise ValueError("sram_scalars must be positive")

    @property
    def budget_tiles(self) -> int:
        return self.sram_usable_tiles - self.reserve_tiles

    @property
    def n_compute_cores(self) -> int:
        return self.compute_rows * self.grid_cols

    def compute_coords(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.compute_rows) for c in range(self.grid_cols)]

    @classmethod
    def from_file(cls, path) -> "GridConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in _parse_kv(path):
            if key not in types:
                raise ValueError(f"{path}: unknown grid config key {key!r}")
            kwargs[key] = _parse_bool(value) if key == "write_stall" else int(value.replace("_", ""))
        return cls(**kwargs)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def load_weights(path) -> dict[str, float]:
    weights = dict(DEFAULT_WEIGHTS)
    for key, value in _parse_kv(path):
        if key not in OP_KINDS:
            raise ValueError(f"{path}: unknown op kind {key!r}")
        weights[key] = float(value)
    return weights


class CostLedger:
    """Monotone per-op-kind counters of tile-granularity operations."""

    def __init__(self):
        self._counts = Counter()

    def add(self, kind: str, n: int = 1) -> None:
        if kind not in OP_KINDS:
            raise KeyError(f"unknown op kind {kind!r}")
        if n < 0:
            raise ValueError("ledger counters never decrease")
        self._counts[kind] += int(n)

    def __getitem__(self, kind: str) -> int:
        return self._counts[kind]

    def total(self) -> int:
        return sum(self._counts.values())

    def as_dict(self) -> dict[str, int]:
        return {k: self._counts[k] for k in OP_KINDS}

    def __eq__(self, other):
        if not isinstance(other, CostLedger):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __repr__(self):
        nz = {k: v for k, v in self.as_dict().items() if v}
        return f"CostLedger({nz})"


def weighted_cost(ledger: CostLedger, weights=None, row=None, config: GridConfig | None = None):
    """Weighted cost per op kind.  ``row`` and ``config`` enable the write-stall surcharge."""
    weights = DEFAULT_WEIGHTS if weights is None else weights
    out = {k: ledger[k] * weights.get(k, 0.0) for k in OP_KINDS}
    if config is not None and config.write_stall and row is not None:
        out["write"] *= config.compute_rows - row
    return out


@dataclass
class Buffer:
    name: str
    capacity_tiles: int
    data: np.ndarray | None = None


@dataclass
class Core:
    coord: tuple[int, int]
    budget_tiles: int
    buffers: dict = field(default_factory=dict)
    occupancy: int = 0
    peak_occupancy: int = 0
    ledger: CostLedger = field(default_factory=CostLedger)
    # values a kernel publishes for peers to read after the next barrier
    published: dict = field(default_factory=dict)
    # tags of the input blocks this core loaded or received, in arrival order
    blocks: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def alloc(self, name: str, capacity_tiles: int) -> Buffer:
        if capacity_tiles <= 0:
            raise ValueError("buffer capacity must be positive")
        with self._lock:
            if name in self.buffers:
                raise ValueError(f"buffer {name!r} already allocated on {self.coord}")
            if self.occupancy + capacity_tiles > self.budget_tiles:
                raise SramOverflow(
                    f"allocating {capacity_tiles} tiles for {name!r} on top of {self.occupancy} "
                    f"exceeds {self.budget_tiles}",
                    self.coord,
                )
            self.occupancy += capacity_tiles
            self.peak_occupancy = max(self.peak_occupancy, self.occupancy)
            buf = Buffer(name, capacity_tiles)
            self.buffers[name] = buf
            return buf

    def free(self, name: str) -> None:
        with self._lock:
            buf = self.buffers.pop(name)
            self.occupancy -= buf.capacity_tiles

    def store(self, name: str, tiles: np.ndarray) -> None:
        buf = self.buffers[name]
        n = tiles.size // TILE_SCALARS
        if n > buf.capacity_tiles:
            raise SramOverflow(f"{n} tiles do not fit buffer {name!r} ({buf.capacity_tiles})", self.coord)
        buf.data = tiles

    def read(self, name: str) -> np.ndarray:
        return self.buffers[name].data


class Dram:
    """Host-visible device memory: named tile arrays with an access log."""

    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}
        self._log = []
        self._lock = threading.Lock()

    def put(self, name: str, tiles: np.ndarray) -> None:
        self.arrays[name] = tiles

    def read(self, phase, coord, name, index) -> np.ndarray:
        data = self.arrays[name][index]
        self._record(phase, coord, "read", name, data.size // TILE_SCALARS)
        return data

    def write(self, phase, coord, name, index, tiles) -> None:
        self.arrays[name][index] = tiles
        self._record(phase, coord, "write", name, np.size(tiles) // TILE_SCALARS)

    def _record(self, *entry):
        with self._lock:
            self._log.append(entry)

    def log(self, op: str | None = None):
        """Access log sorted by (phase, coord); ``op`` filters 'read' or 'write'."""
        entries = sorted(self._log, key=lambda e: (e[0], e[1], e[2], e[3]))
        return [e for e in entries if op is None or e[2] == op]


class CoreContext:
    """Handle a kernel uses to act on its own core, the NoC, and DRAM."""

    def __init__(self, grid: "CoreGrid", coord):
        self.grid = grid
        self.coord = coord
        self.core = grid.core(coord)
        self._seq = 0

    @property
    def ledger(self) -> CostLedger:
        return self.core.ledger

    @property
    def phase(self) -> int:
        return self.grid.phase

    def count(self, kind: str, n: int = 1) -> None:
        self.core.ledger.add(kind, n)

    def alloc(self, name: str, capacity_tiles: int) -> Buffer:
        return self.core.alloc(name, capacity_tiles)

    def store(self, name, tiles) -> None:
        self.core.store(name, tiles)

    def read(self, name) -> np.ndarray:
        return self.core.read(name)

    def publish(self, key, value) -> None:
        self.core.published[key] = value

    def peer(self, coord, key):
        """Read a value a peer published before the last barrier."""
        return self.grid.core(coord).published[key]

    def dram_read(self, name, index):
        return self.grid.dram.read(self.grid.phase, self.coord, name, index)

    def dram_write(self, name, index, tiles):
        self.grid.dram.write(self.grid.phase, self.coord, name, index, tiles)

    def multicast_row(self, buffer_id, payload, span=None, tag=None):
        self._seq += 1
        self.grid.multicast_row(self.coord, buffer_id, payload, span=span, tag=tag, _seq=self._seq)

    def multicast_col(self, buffer_id, payload, span=None, tag=None):
        self._seq += 1
        self.grid.multicast_col(self.coord, buffer_id, payload, span=span, tag=tag, _seq=self._seq)


def _drive(fn, ctx):
    result = fn(ctx)
    if inspect.isgenerator(result):
        yield from result


class CoreGrid:
    """A grid of cores plus DRAM, executing programs under a chosen scheduler.

    ``scheduler`` is ``"serial"`` or ``"threaded"``; both produce identical
    results because cross-core effects are only committed at barriers.
    """

    def __init__(self, config: GridConfig | None = None, scheduler: str = "serial", workers: int | None = None):
        if scheduler not in ("serial", "threaded"):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        self.config = config or GridConfig()
        self.scheduler = scheduler
        self.workers = workers
        self.cores = {
            (r, c): Core((r, c), self.config.budget_tiles)
            for r in range(self.config.grid_rows)
            for c in range(self.config.grid_cols)
        }
        self.dram = Dram()
        self.phase = 0
        self._running = False
        self._pending = []
        self._pending_lock = threading.Lock()

    def core(self, coord) -> Core:
        try:
            return self.cores[tuple(coord)]
        except KeyError:
            raise PlacementError(f"core {coord} is outside the {self.config.grid_rows}x{self.config.grid_cols} grid") from None

    def is_compute(self, coord) -> bool:
        r, c = coord
        return 0 <= r < self.config.compute_rows and 0 <= c < self.config.grid_cols

    def ledger(self, coord) -> CostLedger:
        return self.core(coord).ledger

    def total_ledger(self) -> CostLedger:
        out = CostLedger()
        for core in self.cores.values():
            for k, v in core.ledger.as_dict().items():
                out.add(k, v)
        return out

    def ledgers(self) -> dict:
        return {coord: core.ledger.as_dict() for coord, core in sorted(self.cores.items())}

    def alloc_buffer(self, coord, buffer_id: str, capacity_tiles: int) -> Buffer:
        return self.core(coord).alloc(buffer_id, capacity_tiles)

    # -- NoC ---------------------------------------------------------------

    def row_receivers(self, src, span=None):
        """Cores sharing ``src``'s row, visited in torus order starting after ``src``.

        ``span`` restricts the ring to columns ``range(*span)``.
        """
        r, c = src
        lo, hi = span if span is not None else (0, self.config.grid_cols)
        width = hi - lo
        return [(r, lo + (c - lo + k) % width) for k in range(1, width)]

    def col_receivers(self, src, span=None):
        r, c = src
        lo, hi = span if span is not None else (0, self.config.compute_rows)
        height = hi - lo
        return [(lo + (r - lo + k) % height, c) for k in range(1, height)]

    def multicast_row(self, src, buffer_id, payload, span=None, tag=None, _seq=0):
        """Send ``payload`` tiles to every other core of ``src``'s row (exactly once each)."""
        self._multicast(src, self.row_receivers(src, span), buffer_id, payload, tag, _seq)

    def multicast_col(self, src, buffer_id, payload, span=None, tag=None, _seq=0):
        """Send ``payload`` tiles to every other compute core of ``src``'s column."""
        self._multicast(src, self.col_receivers(src, span), buffer_id, payload, tag, _seq)

    def _multicast(self, src, receivers, buffer_id, payload, tag, seq):
        if not self.is_compute(src):
            raise PlacementError(f"multicast source {src} is not a compute core")
        sends = [(tuple(src), seq, dst, buffer_id, payload, tag) for dst in receivers]
        if self._running:
            with self._pending_lock:
                self._pending.extend(sends)
        else:
            for send in sends:
                self._deliver(*send)

    def _deliver(self, src, seq, dst, buffer_id, payload, tag):
        core = self.core(dst)
        n = payload.size // TILE_SCALARS
        if buffer_id not in core.buffers:
            core.alloc(buffer_id, n)
        core.store(buffer_id, payload)
        core.ledger.add("multicast_recv", n)
        if tag is not None:
            core.blocks.append(tag)

    def flush(self) -> None:
        """Deliver buffered NoC sends in (source, sequence) order."""
        with self._pending_lock:
            pending, self._pending = self._pending, []
        for send in sorted(pending, key=lambda s: (s[0], s[1], s[2])):
            try:
                self._deliver(*send)
            except SramOverflow as exc:
                if exc.coord is None:
                    exc.coord = send[2]
                raise

    # -- execution ---------------------------------------------------------

    def run_program(self, program: dict) -> None:
        """Run ``{coord: kernel}`` to completion, one barrier phase at a time."""
        for coord in program:
            if not self.is_compute(coord):
                raise PlacementError(f"core {coord} is not a compute core")
        live = {tuple(coord): _drive(fn, CoreContext(self, coord)) for coord, fn in sorted(program.items())}
        self._running = True
        try:
            if self.scheduler == "threaded" and len(live) > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    while live:
                        futures = {coord: pool.submit(_step, gen) for coord, gen in live.items()}
                        outcomes = {coord: f.result() for coord, f in futures.items()}
                        live = self._end_phase(live, outcomes)
            else:
                while live:
                    outcomes = {coord: _step(gen) for coord, gen in live.items()}
                    live = self._end_phase(live, outcomes)
        finally:
            self._running = False
            self._pending = []

    def _end_phase(self, live, outcomes):
        for coord in sorted(outcomes):
            exc = outcomes[coord]
            if exc is None or exc is StopIteration:
                continue
            if isinstance(exc, SramOverflow):
                if exc.coord is None:
                    exc.coord = coord
                raise exc
            raise KernelError(coord, exc) from exc
        self.flush()
        self.phase += 1
        return {coord: gen for coord, gen in live.items() if outcomes[coord] is None}


def _step(gen):
    """Advance one kernel to its next barrier; returns None, StopIteration, or the raised error."""
    try:
        next(gen)
    except StopIteration:
        return StopIteration
    except Exception as exc:  # noqa: BLE001 - re-raised with the core coordinate
        return exc
    return None
