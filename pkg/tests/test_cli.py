"""Tests for config layering and the command-line entry points."""

import csv
import threading

import numpy as np
import pytest

from gelo.cli import (
    ATTACK_CSV_COLUMNS,
    BENCH_ROW_HEADER,
    BREAKDOWN_HEADER,
    RunConfig,
    load_run_config,
    main,
    parse_config_text,
)
from gelo.errors import ParameterError
from gelo.harness import BENCH_CSV_HEADER, UntrustedServer
from gelo.synthdata import load_dataset


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_parse_config_text_full():
    text = """
    # experiment setup
    seed = 7
    dims.n = 64
    dims.d = 32          # inline comment
    dims.p = 16
    mixing.kind = general
    mixing.kappa_max = 50
    shields.fraction = 0.1
    shields.scale = 4.0
    defense.skip_first = 0,1,2
    defense.skip_last = false
    defense.flood_threshold = 2.5
    endpoint = 127.0.0.1:9100
    output_dir = results
    """
    values = parse_config_text(text)
    cfg = RunConfig(**values)
    assert cfg.master_seed == 7
    assert (cfg.n, cfg.d, cfg.p) == (64, 32, 16)
    assert cfg.mixing_kind == "general" and cfg.kappa_max == 50.0
    assert cfg.shield_fraction == 0.1 and cfg.shield_scale == 4.0
    assert cfg.skip_first == (0, 1, 2) and cfg.skip_last is False
    assert cfg.flood_threshold == 2.5
    assert cfg.endpoint == "127.0.0.1:9100"
    assert cfg.output_dir == "results"


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ParameterError, match="unknown config key"):
        parse_config_text("dims.q = 4")


def test_parse_config_rejects_bad_lines():
    with pytest.raises(ParameterError):
        parse_config_text("just some words")
    with pytest.raises(ParameterError):
        parse_config_text("dims.n = eleven")
    with pytest.raises(ParameterError):
        parse_config_text("defense.skip_last = maybe")


def test_run_config_validation():
    with pytest.raises(ParameterError):
        RunConfig(n=1)
    with pytest.raises(ParameterError):
        RunConfig(mixing_kind="unitary")
    with pytest.raises(ParameterError):
        RunConfig(kappa_max=1.0)
    with pytest.raises(ParameterError):
        RunConfig(shield_fraction=-0.1)
    with pytest.raises(ParameterError):
        RunConfig(flood_threshold=0.0)


def test_load_run_config_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\ndims.n = 128\n", encoding="utf-8")
    cfg = load_run_config(path, n=64)
    assert cfg.master_seed == 3  # from file
    assert cfg.n == 64  # flag override wins
    assert cfg.d == 256  # untouched default
    assert load_run_config(None).master_seed == 0


# ---------------------------------------------------------------------------
# crossover
# ---------------------------------------------------------------------------


def test_crossover_defaults(capsys):
    assert main(["crossover"]) == 0
    out = capsys.readouterr().out
    assert "crossover length L = 24658" in out
    assert "67108864" in out and "135266304" in out


def test_crossover_variant_near_49k(capsys):
    assert main(["crossover", "--d", "8192", "--d-ffn", "22016", "--heads", "64"]) == 0
    length = int(capsys.readouterr().out.rsplit("=", 1)[1])
    assert abs(length - 49000) / 49000 <= 0.05


def test_crossover_rejects_nondividing_heads(capsys):
    assert main(["crossover", "--d", "100", "--heads", "3"]) == 2


# ---------------------------------------------------------------------------
# gramcheck
# ---------------------------------------------------------------------------


def test_gramcheck_passes_by_default(capsys):
    assert main(["gramcheck", "--seed", "11", "--n", "48", "--d", "32"]) == 0
    out = capsys.readouterr().out
    assert "gramcheck: PASS" in out
    assert out.count("ok") == 3


def test_gramcheck_detects_misconfigured_general_slot(capsys):
    code = main(
        ["gramcheck", "--seed", "11", "--n", "48", "--d", "32",
         "--general-kind", "orthogonal"]
    )
    assert code == 1
    assert "FAIL" in capsys.readouterr().out


def test_gramcheck_flags_zero_scale_shields(capsys):
    code = main(["gramcheck", "--seed", "11", "--n", "48", "--d", "32",
                 "--shield-scale", "0"])
    assert code == 1
    out = capsys.readouterr().out
    assert "shielded batch leak" in out and "FAIL" in out


# ---------------------------------------------------------------------------
# datagen
# ---------------------------------------------------------------------------


def test_datagen_writes_dataset_and_report(tmp_path, capsys):
    out = tmp_path / "data"
    code = main(
        ["datagen", "--n", "256", "--d", "64", "--r-eff", "8", "--seed", "9",
         "--out", str(out)]
    )
    assert code == 0
    h = load_dataset(out / "dataset.geld")
    assert h.shape == (256, 64)
    report = (out / "dataset.geld.report.txt").read_text()
    assert "participation_ratio:" in report
    cv = float([l for l in report.splitlines() if l.startswith("norm_cv")][0].split(":")[1])
    assert cv <= 0.05
    pr = float(
        [l for l in report.splitlines() if l.startswith("participation_ratio")][0].split(":")[1]
    )
    assert abs(pr - 8) / 8 <= 0.10


def test_datagen_deterministic_bytes(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["datagen", "--n", "64", "--d", "32", "--seed", "5",
                     "--out", str(out)]) == 0
    assert (out_a / "dataset.geld").read_bytes() == (out_b / "dataset.geld").read_bytes()


def test_datagen_rejects_tiny_n(tmp_path, capsys):
    assert main(["datagen", "--n", "0", "--out", str(tmp_path)]) == 2


# ---------------------------------------------------------------------------
# attack sweeps
# ---------------------------------------------------------------------------


def read_attack_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_attack_sweep_writes_rows(tmp_path):
    out = tmp_path / "atk"
    code = main(
        ["attack", "--n", "24", "--d", "48", "--k", "0,2", "--method",
         "subtraction,projection", "--bss", "fastica", "--shield-scale", "0.0",
         "--seeds", "1", "--seed", "3", "--out", str(out)]
    )
    assert code == 0
    rows = read_attack_csv(out / "attack_sweep.csv")
    assert len(rows) == 4  # 2 k x 2 methods
    assert list(rows[0]) == ATTACK_CSV_COLUMNS
    k0 = [r for r in rows if r["k"] == "0"]
    assert k0[0]["median_cos"] == k0[1]["median_cos"]  # method-independent path
    for row in rows:
        assert row["error"] == ""
        assert 0.0 <= float(row["p95_cos"]) <= 1.0 + 1e-9


def test_attack_sweep_survives_infeasible_cells(tmp_path):
    out = tmp_path / "atk"
    code = main(
        ["attack", "--n", "8", "--d", "16", "--k", "7,99", "--method",
         "subtraction", "--seeds", "1", "--out", str(out)]
    )
    assert code == 0
    rows = read_attack_csv(out / "attack_sweep.csv")
    assert len(rows) == 2
    for row in rows:
        assert row["error"] != ""
        assert row["median_cos"] == "nan"


def test_attack_sweep_empty_grid_header_only(tmp_path):
    out = tmp_path / "atk"
    code = main(["attack", "--n", "", "--out", str(out)])
    assert code == 0
    lines = (out / "attack_sweep.csv").read_text().strip().split("\n")
    assert lines == [",".join(ATTACK_CSV_COLUMNS)]


def test_attack_rejects_unknown_methods(tmp_path):
    assert main(["attack", "--method", "oracle", "--out", str(tmp_path)]) == 2
    assert main(["attack", "--bss", "pca", "--out", str(tmp_path)]) == 2


def test_attack_sweep_subset_reproduces_exactly(tmp_path):
    args = ["--n", "16", "--d", "24", "--bss", "fobi", "--seeds", "2",
            "--seed", "8"]
    out_full = tmp_path / "full"
    assert main(["attack", "--k", "0,3", *args, "--out", str(out_full)]) == 0
    out_sub = tmp_path / "sub"
    assert main(["attack", "--k", "3", *args, "--out", str(out_sub)]) == 0
    full = {
        (r["n"], r["k"], r["seed"]): r for r in read_attack_csv(out_full / "attack_sweep.csv")
    }
    for row in read_attack_csv(out_sub / "attack_sweep.csv"):
        assert full[(row["n"], row["k"], row["seed"])] == row


# ---------------------------------------------------------------------------
# bench against a live server
# ---------------------------------------------------------------------------


@pytest.fixture()
def live_server():
    server = UntrustedServer("127.0.0.1:0")
    address = server.bind()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield address
    server.close()
    thread.join(timeout=5.0)


def test_bench_writes_all_csvs(tmp_path, capsys, live_server):
    out = tmp_path / "bench"
    code = main(
        ["bench", "--endpoint", live_server, "--sizes", "8,16", "--reps", "3",
         "--d", "12", "--p", "8", "--seed", "2", "--out", str(out)]
    )
    assert code == 0
    assert (out / "bench.csv").read_text().splitlines()[0] == BENCH_ROW_HEADER
    assert (out / "breakdown.csv").read_text().splitlines()[0] == BREAKDOWN_HEADER
    combined = (out / "bench_combined.csv").read_text().splitlines()
    assert combined[0] == BENCH_CSV_HEADER
    assert len(combined) == 3
    table = capsys.readouterr().out
    assert "latency breakdown at n=16" in table
    for step in ("a_gen", "mix", "gemm", "unmix", "copy", "total"):
        assert step in table


def test_bench_baseline_only(tmp_path, capsys, live_server):
    out = tmp_path / "bench"
    code = main(
        ["bench", "--endpoint", live_server, "--sizes", "8", "--reps", "3",
         "--d", "8", "--p", "8", "--baseline-only", "--out", str(out)]
    )
    assert code == 0
    rows = list(csv.DictReader(open(out / "breakdown.csv")))
    assert rows[0]["a_gen_ms"] == "0.000000"
    assert rows[0]["mix_ms"] == "0.000000"
    assert rows[0]["unmix_ms"] == "0.000000"
    assert float(rows[0]["gemm_ms"]) >= 0.0
    assert not (out / "bench.csv").exists()


def test_bench_unreachable_server_exits_2(tmp_path, capsys):
    code = main(["bench", "--endpoint", "127.0.0.1:1", "--sizes", "8",
                 "--reps", "3", "--out", str(tmp_path)])
    assert code == 2
    assert "127.0.0.1:1" in capsys.readouterr().err


def test_unknown_flag_fails_fast():
    with pytest.raises(SystemExit) as exc:
        main(["crossover", "--bogus-flag", "1"])
    assert exc.value.code == 2


def test_unknown_command_fails_fast():
    with pytest.raises(SystemExit):
        main(["transmogrify"])
