import csv

import numpy as np
import pytest

from gridattn import DimensionError, OracleMismatch, SpecError, read_matrix, write_matrix
from gridattn.bench import ExperimentSpec, gen_matrix, oracle_check, run_experiment
from gridattn.cli import main


def body(path):
    """CSV contents without the timestamp header line."""
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# gridattn experiment")
    return lines[1:]


def read_rows(path):
    return list(csv.DictReader(body(path)))


def test_gen_matrix():
    assert not gen_matrix(64, 64, 0, "zeros").any()
    assert np.array_equal(gen_matrix(64, 128, 42), gen_matrix(64, 128, 42))
    m = gen_matrix(64, 128, 42)
    assert m.min() >= -1 and m.max() <= 1
    assert abs(m.mean()) < 0.05
    with pytest.raises(DimensionError):
        gen_matrix(63, 32, 0)


def test_spec_validation():
    with pytest.raises(SpecError):
        ExperimentSpec("x", "grid_softmax", [])
    with pytest.raises(SpecError):
        ExperimentSpec("x", "grid_softmax", [48])
    with pytest.raises(SpecError):
        ExperimentSpec("x", "gpu_softmax", [64])
    with pytest.raises(SpecError):
        ExperimentSpec("x", "fused", [64], repeats=0)


def test_spec_file(tmp_path):
    (tmp_path / "grid.cfg").write_text("reserve_tiles=4\n")
    path = tmp_path / "exp.spec"
    path.write_text("name=sweep\nkernel=fused\nsize=64\nsize=128\nrepeats=2\nseed=7\nsubgrid=2x2\ngrid_config=grid.cfg\n")
    spec = ExperimentSpec.from_file(path)
    assert spec.sizes == [64, 128] and spec.subgrid == (2, 2) and spec.repeats == 2
    assert spec.grid_config == str(tmp_path / "grid.cfg")


def test_oracle_check_raises():
    ref = np.full((2, 2), 0.5)
    assert oracle_check(ref, ref) == (0.0, 0.0)
    with pytest.raises(OracleMismatch):
        oracle_check(ref + [[0.02, -0.02], [0, 0]], ref)


def test_cpu_cache_vs_recompute(tmp_path):
    counts = {}
    for mode in ("cache", "recompute"):
        spec = ExperimentSpec(f"cpu_{mode}", f"cpu_softmax_{mode}", [1024], seed=3)
        paths = run_experiment(spec, tmp_path)
        counts[mode] = int(read_rows(paths["summary"])[0]["total_count"])
    assert counts["cache"] == 1024 * 1024
    assert counts["recompute"] == 2 * counts["cache"]
    a = read_matrix(tmp_path / "cpu_cache_n1024.gfat")
    b = read_matrix(tmp_path / "cpu_recompute_n1024.gfat")
    assert np.array_equal(a, b)


def test_grid_sweep_ratio(tmp_path):
    spec = ExperimentSpec("sm", "grid_softmax", [1024, 2048, 4096], seed=1)
    rows = read_rows(run_experiment(spec, tmp_path)["summary"])
    ratios = [float(r["ratio_to_prev"]) for r in rows[1:]]
    assert all(3.5 <= x <= 4.5 for x in ratios)
    assert all(float(r["max_abs_err"]) <= 1e-2 for r in rows)


def test_ledger_csv_matches_memory(tmp_path):
    spec = ExperimentSpec("fz", "fused", [128], subgrid=(2, 2), weight_table=None)
    paths = run_experiment(spec, tmp_path)
    rows = read_rows(paths["ledger"])
    total = sum(int(r["count"]) for r in rows)
    assert total == int(read_rows(paths["summary"])[0]["total_count"])
    mm = [r for r in rows if r["op_kind"] == "matmul_tile"]
    assert len(mm) == 4 and all(int(r["count"]) == 2 * 2 * 4 for r in mm)


def test_weighted_ledger_column(tmp_path):
    table = tmp_path / "w.cfg"
    table.write_text("exponentiate=2\nnormalize=1\n")
    spec = ExperimentSpec("w", "grid_softmax", [64], weight_table=str(table))
    rows = read_rows(run_experiment(spec, tmp_path)["ledger"])
    for r in rows:
        if r["op_kind"] == "exponentiate":
            assert float(r["weighted_cost"]) == 2 * int(r["count"])


def test_reproducible_csv(tmp_path):
    spec = ExperimentSpec("rep", "fused", [64, 128], repeats=2, seed=11, subgrid=(2, 2))
    a = run_experiment(spec, tmp_path / "a")
    b = run_experiment(ExperimentSpec("rep", "fused", [64, 128], repeats=2, seed=11, subgrid=(2, 2), scheduler="threaded"), tmp_path / "b")
    for kind in ("ledger", "summary"):
        assert body(a[kind]) == body(b[kind])
    assert (tmp_path / "a/rep_n128.gfat").read_bytes() == (tmp_path / "b/rep_n128.gfat").read_bytes()


def test_overflow_reports_size(tmp_path):
    spec = ExperimentSpec("big", "grid_softmax", [64], grid_config=None)
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("sram_usable_tiles=1\n")
    spec.grid_config = str(cfg)
    from gridattn import SramOverflow

    with pytest.raises(SramOverflow, match="n=64"):
        run_experiment(spec, tmp_path)


# -- command line ------------------------------------------------------------

def test_cli_softmax_modes(tmp_path, rng):
    z = rng.uniform(-1, 1, size=(64, 96))
    write_matrix(tmp_path / "z.gfat", z)
    outs = {}
    for mode in ("cpu-recompute", "cpu-cache", "grid"):
        out = tmp_path / f"{mode}.gfat"
        ledger = tmp_path / f"{mode}.csv"
        assert main(["softmax", "--input", str(tmp_path / "z.gfat"), "--output", str(out),
                     "--mode", mode, "--ledger", str(ledger)]) == 0
        outs[mode] = read_matrix(out)
        header = ledger.read_text().splitlines()[0]
        assert header == "core_row,core_col,op_kind,count"
    assert np.array_equal(outs["cpu-cache"], outs["cpu-recompute"])
    assert np.abs(outs["grid"] - outs["cpu-cache"]).max() <= 1e-2
    rows = list(csv.DictReader((tmp_path / "grid.csv").read_text().splitlines()))
    assert {(r["core_row"], r["core_col"]) for r in rows} == {("0", "0"), ("0", "1")}


def test_cli_fused_with_oracle(tmp_path, rng, capsys):
    write_matrix(tmp_path / "q.gfat", rng.uniform(-1, 1, size=(128, 128)))
    write_matrix(tmp_path / "k.gfat", rng.uniform(-1, 1, size=(128, 128)))
    code = main(["fused", "--q", str(tmp_path / "q.gfat"), "--k", str(tmp_path / "k.gfat"),
                 "--dk", "128", "--subgrid", "2x2", "--block-tiles", "2",
                 "--output", str(tmp_path / "w.gfat"), "--ledger", str(tmp_path / "w.csv"), "--oracle-check"])
    assert code == 0
    assert "max abs deviation" in capsys.readouterr().out
    assert read_matrix(tmp_path / "w.gfat").shape == (128, 128)


def test_cli_oracle_mismatch_exit_code(tmp_path, rng):
    write_matrix(tmp_path / "q.gfat", rng.uniform(-1, 1, size=(64, 128)))
    write_matrix(tmp_path / "k.gfat", rng.uniform(-1, 1, size=(64, 128)))
    write_matrix(tmp_path / "bad.gfat", np.zeros((64, 64)))
    code = main(["fused", "--q", str(tmp_path / "q.gfat"), "--k", str(tmp_path / "k.gfat"),
                 "--subgrid", "1x1", "--output", str(tmp_path / "w.gfat"),
                 "--oracle-check", "--oracle", str(tmp_path / "bad.gfat")])
    assert code == 3


def test_cli_capacity(capsys, tmp_path):
    assert main(["capacity"]) == 0
    out = capsys.readouterr().out
    assert "46340" in out and "15616" in out and "6363" in out
    cfg = tmp_path / "g.cfg"
    cfg.write_text("sram_usable_tiles=100\n")
    main(["capacity", "--grid-config", str(cfg)])
    assert "3200" in capsys.readouterr().out


def test_cli_experiment(tmp_path, capsys):
    spec = tmp_path / "e.spec"
    spec.write_text("name=cli\nkernel=grid_softmax\nsize=64\nsize=128\n")
    assert main(["experiment", "--spec", str(spec), "--out-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out/cli_summary.csv").exists()
    assert (tmp_path / "out/cli_n128.gfat").exists()
    bad = tmp_path / "bad.spec"
    bad.write_text("name=x\nkernel=grid_softmax\n")
    assert main(["experiment", "--spec", str(bad)]) == 2
