import subprocess
import sys

import numpy as np
import pytest

from majdesign import io
from majdesign.cli import OUT_ENV, main


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def write_diag_M(path, d):
    from majdesign.majorizers import MajorizerSpec
    from majdesign.operators import IdentityOperator

    M = MajorizerSpec(IdentityOperator(len(d)), np.asarray(d, float), certified=True, method="analytic")
    return io.write_majorizer(path, M)


def test_design_diag(tmp_path, capsys):
    code, out, _ = run(["design", "--H", "diag:1..8", "--K", "identity", "--iters", "500",
                        "--cert", "none", "--out", str(tmp_path)], capsys)
    assert code == 0 and out.startswith("alpha 1.0")
    M = io.read_majorizer(tmp_path / "majorizer.txt")
    np.testing.assert_allclose(M.d, np.arange(1.0, 9.0), atol=1e-4)
    head, rows = io.read_csv(tmp_path / "majorizer_trace.csv")
    assert head == ["iter", "dual_value", "grad_norm"] and len(rows) >= 2
    cfg = io.read_config(tmp_path / "majorizer.txt")
    assert cfg["seed"] == "0"


def test_design_missing_H(tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, _, err = run(["design", "--H", str(tmp_path / "nope.mtx"), "--out", str(out_dir)], capsys)
    assert code != 0 and "nope.mtx" in err
    assert not out_dir.exists()


def test_design_bad_K(tmp_path, capsys):
    code, _, err = run(["design", "--H", "diag:1..4", "--K", "wavelet", "--out", str(tmp_path / "o")], capsys)
    assert code != 0 and "K" in err
    assert not (tmp_path / "o").exists()


def test_design_weight_file(tmp_path, capsys):
    io.write_vector(tmp_path / "w.csv", np.full(4, 2.0))
    code, _, _ = run(["design", "--H", "diag:1..4", "--W", str(tmp_path / "w.csv"), "--iters", "300",
                      "--cert", "none", "--out", str(tmp_path)], capsys)
    assert code == 0
    np.testing.assert_allclose(io.read_majorizer(tmp_path / "majorizer.txt").d, [1, 2, 3, 4], atol=1e-4)
    io.write_vector(tmp_path / "w3.csv", np.ones(3))
    code, _, err = run(["design", "--H", "diag:1..4", "--W", str(tmp_path / "w3.csv"),
                        "--out", str(tmp_path)], capsys)
    assert code == 2 and "3 entries" in err


def test_design_toeplitz_stacked_then_verify(tmp_path, capsys):
    code, _, _ = run(["design", "--H", "toeplitz:N=128", "--K", "stacked:dft+identity",
                      "--cert", "factor3", "--out", str(tmp_path), "--name", "tz"], capsys)
    assert code == 0
    code, out, _ = run(["verify", "--M", str(tmp_path / "tz.txt"), "--H", "toeplitz:N=128"], capsys)
    assert code == 0 and "majorizes" in out and "does not" not in out


def test_verify_examples(tmp_path, capsys):
    write_diag_M(tmp_path / "two.txt", [2.0, 2.0])
    write_diag_M(tmp_path / "one.txt", [1.0, 1.0])
    code, out, _ = run(["verify", "--M", str(tmp_path / "two.txt"), "--H", "diag:1,1"], capsys)
    assert code == 0 and "min_eig 1.0" in out
    code, out, _ = run(["verify", "--M", str(tmp_path / "one.txt"), "--H", "diag:2,2"], capsys)
    assert code != 0 and "does not majorize" in out
    code, out, _ = run(["verify", "--M", str(tmp_path / "two.txt"), "--H", "diag:1,1",
                        "--mode", "lanczos"], capsys)
    assert code == 0


def test_verify_errors(tmp_path, capsys):
    write_diag_M(tmp_path / "m.txt", [1.0, 1.0])
    code, _, err = run(["verify", "--M", str(tmp_path / "x.txt"), "--H", "diag:1,1"], capsys)
    assert code == 2 and "not found" in err
    code, _, err = run(["verify", "--M", str(tmp_path / "m.txt"), "--H", "diag:1..3"], capsys)
    assert code == 2 and "dimensional" in err


def test_spectrum_M_equals_H(tmp_path, capsys):
    write_diag_M(tmp_path / "m.txt", [1.0, 2.0, 5.0])
    code, _, _ = run(["spectrum", "--M", str(tmp_path / "m.txt"), "--H", "diag:1,2,5",
                      "--out", str(tmp_path), "--name", "spec"], capsys)
    assert code == 0
    head, rows = io.read_csv(tmp_path / "spec.csv")
    assert head == ["eigenvalue"]
    np.testing.assert_allclose([float(r[0]) for r in rows], 1.0, atol=1e-10)


def test_out_env_default(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    code, _, _ = run(["design", "--H", "diag:1..3", "--iters", "50", "--cert", "none"], capsys)
    assert code == 0
    assert (tmp_path / "env_out" / "majorizer.txt").exists()


def test_toeplitz_subcommand(tmp_path, capsys):
    cfg = tmp_path / "t.cfg"
    io.write_config(cfg, {"N": 16, "budget": 200, "structured_budget": 200,
                          "arms": "sqs,circ,design-circ+diag"})
    code, out, _ = run(["toeplitz", "--config", str(cfg), "--iters", "100", "--out", str(tmp_path / "o")],
                       capsys)
    assert code == 0
    assert len(out.strip().splitlines()) == 3
    saved = io.read_config(tmp_path / "o" / "config.txt")
    assert saved["diag_iters"] == "100" and saved["N"] == "16"


def test_ct_demo_subcommand(tmp_path, capsys):
    cfg = tmp_path / "ct.cfg"
    io.write_config(cfg, {"n_views": 18, "n_channels": 18, "design_iters": 200,
                          "view_factor": 3, "channel_factor": 3})
    code, out, _ = run(["ct-demo", "--config", str(cfg), "--N", "12", "--iters", "3",
                        "--out", str(tmp_path / "o")], capsys)
    assert code == 0 and "down:" in out
    assert io.read_config(tmp_path / "o" / "config.txt")["n"] == "12"
    assert len(io.read_csv(tmp_path / "o" / "cost_sqs.csv")[1]) == 4


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "majdesign.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("design", "verify", "spectrum", "toeplitz", "ct-demo"):
        assert sub in res.stdout


def test_design_flags_in_help(capsys):
    with pytest.raises(SystemExit):
        main(["design", "--help"])
    out = capsys.readouterr().out
    for flag in ("--H", "--K", "--W", "--iters", "--seed", "--cert", "--out"):
        assert flag in out
