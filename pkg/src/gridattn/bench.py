"""Seeded experiment sweeps that emit ledger and summary CSVs."""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, OracleMismatch, SpecError, SramOverflow
from .fused import FusedConfig, fused_attention_weights
from .grid import CoreGrid, CostLedger, GridConfig, _parse_kv, load_weights, weighted_cost
from .numerics import BF16_TOLERANCE, TILE, oracle_attention_weights, stable_softmax, tilize, untilize, write_matrix
from .softmax import ExpCounter, cpu_softmax, grid_softmax

log = logging.getLogger(__name__)

KERNELS = ("cpu_softmax_recompute", "cpu_softmax_cache", "grid_softmax", "fused")
HOST = (-1, -1)
CPU_TOLERANCE = 1e-12


def gen_matrix(n: int, d: int, seed: int, dist: str = "uniform") -> np.ndarray:
    """``n x d`` float64 matrix, uniform on [-1, 1] from ``np.random.default_rng(seed)``, or zeros."""
    if n <= 0 or d <= 0 or n % TILE or d % TILE:
        raise DimensionError(f"n and d must be positive multiples of {TILE}, got {n}x{d}")
    if dist == "zeros":
        return np.zeros((n, d))
    if dist != "uniform":
        raise ValueError(f"unknown distribution {dist!r}")
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, d))


def oracle_check(result, reference, tol: float = BF16_TOLERANCE, what: str = "result"):
    """Max abs deviation and max row-sum error; raises OracleMismatch past ``tol``."""
    result = np.asarray(result, dtype=np.float64)
    max_abs = float(np.abs(result - reference).max())
    row_err = float(np.abs(result.sum(axis=1) - 1.0).max())
    if not (max_abs <= tol and row_err <= tol):
        raise OracleMismatch(f"{what}: max |err| {max_abs:.3g}, row-sum err {row_err:.3g} exceed {tol}")
    return max_abs, row_err


@dataclass
class ExperimentSpec:
    name: str
    kernel: str
    sizes: list[int]
    repeats: int = 1
    seed: int = 0
    grid_config: str | None = None
    weight_table: str | None = None
    d_k: int = 128
    subgrid: tuple[int, int] = (8, 8)
    block_tiles: int = 1
    scheduler: str = "serial"

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise SpecError(f"unknown kernel {self.kernel!r}; choose from {', '.join(KERNELS)}")
        if not self.sizes:
            raise SpecError("experiment needs at least one size")
        bad = [n for n in self.sizes if n <= 0 or n % TILE]
        if bad:
            raise SpecError(f"sizes must be positive multiples of {TILE}: {bad}")
        if self.repeats < 1:
            raise SpecError("repeats must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must fit in 64 unsigned bits")

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        kw = {"sizes": []}
        for key, value in _parse_kv(path):
            if key == "size":
                kw["sizes"].append(int(value))
            elif key in ("repeats", "seed", "d_k", "block_tiles"):
                kw[key] = int(value)
            elif key == "subgrid":
                kw[key] = parse_subgrid(value)
            elif key in ("name", "kernel", "grid_config", "weight_table", "scheduler"):
                kw[key] = value
            else:
                raise SpecError(f"{path}: unknown key {key!r}")
        if "name" not in kw or "kernel" not in kw:
            raise SpecError(f"{path}: name and kernel are required")
        base = Path(path).parent
        for key in ("grid_config", "weight_table"):
            if kw.get(key):
                kw[key] = str(base / kw[key])
        return cls(**kw)


def parse_subgrid(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise SpecError(f"sub-grid must look like 8x8, got {text!r}") from None
    return r, c


@dataclass
class RunResult:
    output: np.ndarray
    ledgers: dict  # coord -> {op_kind: count}
    max_abs: float
    row_err: float


def run_kernel(spec: ExperimentSpec, n: int, rng: np.random.Generator, config: GridConfig) -> RunResult:
    """One seeded run of ``spec.kernel`` at size ``n``, validated against float64."""
    if spec.kernel.startswith("cpu_softmax"):
        z = rng.uniform(-1.0, 1.0, size=(n, n))
        counter = ExpCounter()
        out = cpu_softmax(z, mode=spec.kernel.rsplit("_", 1)[1], counter=counter)
        err = oracle_check(out, stable_softmax(z), CPU_TOLERANCE, spec.kernel)
        return RunResult(out, {HOST: {"exponentiate": counter.count}}, *err)

    grid = CoreGrid(config, scheduler=spec.scheduler)
    if spec.kernel == "grid_softmax":
        z = rng.uniform(-1.0, 1.0, size=(n, n))
        out = untilize(grid_softmax(tilize(z), grid))
        ref = stable_softmax(z)
    else:
        q = rng.uniform(-1.0, 1.0, size=(n, spec.d_k))
        k = rng.uniform(-1.0, 1.0, size=(n, spec.d_k))
        cfg = FusedConfig(d_k=spec.d_k, subgrid=spec.subgrid, block_tiles=spec.block_tiles)
        out = untilize(fused_attention_weights(tilize(q), tilize(k), cfg, grid))
        ref = oracle_attention_weights(q, k, spec.d_k)
    err = oracle_check(out, ref, what=f"{spec.kernel} n={n}")
    ledgers = {coord: counts for coord, counts in grid.ledgers().items() if any(counts.values())}
    return RunResult(out, ledgers, *err)


def _header(spec):
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return f"# gridattn experiment {spec.name} ({spec.kernel}) generated {stamp}\n"


def run_experiment(spec: ExperimentSpec, out_dir=".") -> dict[str, Path]:
    """Run every size/repeat, writing ``<name>_ledger.csv``, ``<name>_summary.csv``,
    ``<name>_timing.csv`` and one GFAT result per size.

    Apart from their first (timestamp) line, and the timing file, outputs are a
    pure function of ``spec``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = GridConfig.from_file(spec.grid_config) if spec.grid_config else GridConfig()
    weights = load_weights(spec.weight_table) if spec.weight_table else None

    paths = {
        "ledger": out_dir / f"{spec.name}_ledger.csv",
        "summary": out_dir / f"{spec.name}_summary.csv",
        "timing": out_dir / f"{spec.name}_timing.csv",
    }
    ledger_rows, summary_rows, timing_rows = [], [], []
    prev_total = None
    for n in spec.sizes:
        totals, errs = [], []
        for rep in range(spec.repeats):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, n, rep]))
            t0 = time.perf_counter()
            try:
                res = run_kernel(spec, n, rng, config)
            except SramOverflow as exc:
                raise SramOverflow(f"n={n}: {exc.args[0]}", exc.coord) from exc
            timing_rows.append([n, rep, f"{time.perf_counter() - t0:.6f}"])
            total = 0
            for (row, col), counts in sorted(res.ledgers.items()):
                costs = weighted_cost(_as_ledger(counts), weights, row, config) if weights else None
                for kind, count in counts.items():
                    if not count:
                        continue
                    total += count
                    line = [n, rep, row, col, kind, count]
                    if weights:
                        line.append(f"{costs[kind]:.6g}")
                    ledger_rows.append(line)
            totals.append(total)
            errs.append((res.max_abs, res.row_err))
            if rep == 0:
                write_matrix(out_dir / f"{spec.name}_n{n}.gfat", res.output)
            log.info("%s n=%d repeat=%d total=%d max_abs=%.3g", spec.name, n, rep, total, res.max_abs)
        total = totals[0]
        ratio = "" if prev_total is None else f"{total / prev_total:.6f}"
        summary_rows.append([n, spec.repeats, total, ratio,
                             f"{max(e[0] for e in errs):.6g}", f"{max(e[1] for e in errs):.6g}"])
        prev_total = total

    ledger_cols = ["n", "repeat", "core_row", "core_col", "op_kind", "count"] + (["weighted_cost"] if weights else [])
    _write_csv(paths["ledger"], _header(spec), ledger_cols, ledger_rows)
    _write_csv(paths["summary"], _header(spec),
               ["n", "repeats", "total_count", "ratio_to_prev", "max_abs_err", "max_rowsum_err"], summary_rows)
    _write_csv(paths["timing"], _header(spec), ["n", "repeat", "seconds"], timing_rows)
    return paths


def _as_ledger(counts):
    ledger = CostLedger()
    for kind, count in counts.items():
        ledger.add(kind, count)
    return ledger


def _write_csv(path, header, columns, rows):
    with open(path, "w", newline="") as f:
        f.write(header)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def write_ledger_csv(path, ledgers: dict) -> None:
    """Plain ``core_row,core_col,op_kind,count`` dump of nonzero counters."""
    rows = [[r, c, kind, count] for (r, c), counts in sorted(ledgers.items()) for kind, count in counts.items() if count]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["core_row", "core_col", "op_kind", "count"])
        writer.writerows(rows)
