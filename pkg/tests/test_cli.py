import csv
import io
import json
import subprocess
import sys

import pytest

from tcemu.cli import UsageError, main, parse_n_range, parse_triple, run
from tcemu.warp_model import Duplication, FragmentKind, Use, canonical_mapping, parse_mapping_dump

SMALL_ACC = ["accuracy", "--m", "32", "--n", "32", "--k", "32", "--batch", "2", "--blocking", "32,32,32", "--reg-blocking", "16,16,16"]


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_roofline_wmma_only_row():
    (row,) = rows(run(["roofline", "--spec", "a100", "--model", "tcec-wmma-only", "--n", "32"]))
    assert abs(float(row["attained_tflops"]) - 52.0) <= 0.05
    assert row["binding"] == "memory"


def test_roofline_wmmae_row():
    (row,) = rows(run(["roofline", "--model", "tcec-wmmae", "--n", "32"]))
    assert float(row["attained_tflops"]) == 104.0
    assert row["binding"] == "compute"


def test_roofline_simple_regs():
    (row,) = rows(run(["roofline", "--model", "simple", "--n", "64"]))
    assert float(row["regs"]) == 256 and row["spills"] == "True"
    assert float(row["ai"]) == 12.8


def test_roofline_range_and_json():
    data = json.loads(run(["roofline", "--n", "16..64:16", "--format", "json", "--spec", "v100"]))
    assert [r["n"] for r in data] == [16, 32, 48, 64]
    assert all(r["spec"] == "v100" for r in data)


def test_roofline_spec_file(tmp_path):
    cfg = tmp_path / "fast.cfg"
    cfg.write_text("base = a100\nshared_bw_gb_s = 39000\n")
    (row,) = rows(run(["roofline", "--spec", str(cfg), "--model", "tcec-wmma-only", "--n", "32"]))
    assert float(row["attained_tflops"]) == 104.0


@pytest.mark.parametrize(
    "argv",
    [
        ["roofline", "--n", "0"],
        ["roofline", "--n", "x..4"],
        ["roofline", "--model", "fancy"],
        ["roofline", "--spec", "h100"],
        ["accuracy", "--m", "48", "--blocking", "32,32,32"],
        ["accuracy", "--blocking", "1,2"],
        ["accuracy", "--batch", "0"],
        ["bench", "--kernel", "fft"],
        ["bench", "--kernel", "householder", "--size", "8"],
        ["bench", "--kernel", "givens", "--plane", "2,2"],
        ["mapping", "--shape", "16x16x8"],
    ],
)
def test_usage_errors_exit_nonzero(argv, capsys):
    assert main(argv) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("tcemu: error:")


def test_argparse_errors_exit_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["accuracy", "--path", "sideways"])
    assert exc.value.code != 0


def test_parsers():
    assert parse_n_range("8") == [8]
    assert parse_n_range("4..12:4") == [4, 8, 12]
    assert parse_n_range("1..3") == [1, 2, 3]
    assert parse_triple("1,2,3", "--x") == (1, 2, 3)
    for bad in ("0", "5..4", "-4..4"):
        with pytest.raises(UsageError):
            parse_n_range(bad)
    with pytest.raises(UsageError):
        parse_triple("1,0,3", "--x")


def test_accuracy_small_run():
    table = {r["method"]: r for r in rows(run(SMALL_ACC))}
    assert set(table) == {"tcec", "fp16-plain", "fp32-simt"}
    simt = float(table["fp32-simt"]["max_relative_error"])
    tcec = float(table["tcec"]["max_relative_error"])
    plain = float(table["fp16-plain"]["max_relative_error"])
    assert simt > 0
    assert tcec <= 4 * simt
    assert plain >= 32 * tcec
    assert int(table["tcec"]["shared_to_register_bytes"]) == 2 * 8 * 32 * 32 * 2


def test_accuracy_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(SMALL_ACC + ["--out", str(a)]) == 0
    assert main(SMALL_ACC + ["--out", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    other = run(SMALL_ACC + ["--seed", "7"])
    assert other != a.read_text()


def test_accuracy_staged_path_and_json():
    data = json.loads(run(SMALL_ACC + ["--path", "staged", "--method", "tcec", "--format", "json"]))
    assert len(data) == 1 and data[0]["path"] == "staged"
    assert data[0]["shared_to_register_bytes"] == 3 * 2 * 8 * 32 * 32 * 2
    assert data[0]["overflow"] is False


def test_mapping_dump(capsys):
    assert main(["mapping"]) == 0
    single = capsys.readouterr().out
    assert len(single.strip().splitlines()) == 257
    text = run(["mapping", "--duplication", "dual", "--out", "/dev/null"])
    assert len(text.strip().splitlines()) == 513
    kind = FragmentKind(Use.MATRIX_A, duplication=Duplication.DUAL, mapping="canonical")
    assert parse_mapping_dump(text) == {(e.i, e.j): sorted(e.slots) for e in canonical_mapping(kind)}


def test_bench_householder_traffic():
    table = {r["path"]: r for r in rows(run(["bench", "--kernel", "householder", "--size", "16"]))}
    assert table["direct"]["generated_shared_bytes"] == "0"
    assert table["baseline"]["generated_shared_bytes"] == "1024"
    assert table["direct"]["paths_bit_identical"] == "True"


def test_bench_givens_zero_angle():
    for row in rows(run(["bench", "--kernel", "givens", "--size", "32", "--plane", "3,17", "--theta", "0"])):
        assert float(row["max_abs_residual"]) == 0.0


def test_bench_scan_exact():
    for row in rows(run(["bench", "--kernel", "scan", "--batch", "4"])):
        assert row["exact_match"] == "True"


def test_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "tcemu", "roofline", "--n", "16", "--format", "json"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert json.loads(out.stdout)[0]["ai"] == 3.2
