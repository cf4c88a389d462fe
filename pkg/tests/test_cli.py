import numpy as np
import pytest

from gtlab import cli, harness
from gtlab.topology import build_topology, combination_matrix

pytestmark = pytest.mark.filterwarnings("ignore:combination matrix is not positive")

RUN = ["run", "--n", "6", "--d", "3", "--iters", "30", "--reps", "2", "--seed", "3", "--alpha", "0.05"]


def test_run_to_stdout_matches_library(capsys):
    assert cli.main(RUN) == 0
    out = capsys.readouterr().out
    tr = harness.run(harness.RunConfig(n=6, d=3, iters=30, reps=2, seed=3, alpha=0.05))
    assert out == tr.csv_text()
    assert out.splitlines()[0] == "k,run_id,algo,graph,n,alpha,rel_error,consensus_error,f_gap"


def test_run_files_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(RUN + ["--out", str(a)]) == 0
    assert cli.main(RUN + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_plot_out(tmp_path, capsys):
    path = tmp_path / "plot.csv"
    assert cli.main(RUN + ["--plot-out", str(path)]) == 0
    assert path.read_text().splitlines()[0] == harness.PLOT_HEADER


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# base setup\nalgo = dsgd\nn = 5\nd = 2\niters = 10\nreps = 1\nalpha = 0.1\n")
    assert cli.main(["run", "--config", str(cfg)]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[1].startswith("0,0,dsgd,ring,5,0.1,")
    assert cli.main(["run", "--config", str(cfg), "--algo", "gt", "--alpha", "0.2"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[1].startswith("0,0,gt,ring,5,0.2,")


def test_run_tune_to(capsys):
    assert cli.main(["run", "--n", "6", "--d", "3", "--iters", "60", "--reps", "2", "--tune-to", "0.5"]) == 0
    captured = capsys.readouterr()
    assert "tuned alpha=" in captured.err
    assert captured.out.startswith("k,run_id")


def test_config_file_tune_to(tmp_path, capsys):
    cfg = tmp_path / "tune.cfg"
    cfg.write_text("n = 6\nd = 3\niters = 60\nreps = 2\ntune-to = 0.5\n")
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert "tuned alpha=" in capsys.readouterr().err
    # an explicit stepsize on the command line beats the file's target
    assert cli.main(["run", "--config", str(cfg), "--alpha", "0.03"]) == 0
    captured = capsys.readouterr()
    assert "tuned" not in captured.err and ",0.03," in captured.out.splitlines()[1]


def test_csgd_graph_column(capsys):
    assert cli.main(["run", "--algo", "csgd", "--n", "4", "--d", "2", "--iters", "3", "--reps", "1"]) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith("0,0,csgd,central,4,")


def test_bad_config_exit_code(capsys):
    assert cli.main(["run", "--reps", "0"]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_spectral_ring30(capsys):
    assert cli.main(["spectral", "--graph", "ring"]) == 0
    out = capsys.readouterr().out
    lam = float(out.split("lambda=")[1].split()[0])
    assert lam == pytest.approx(combination_matrix(build_topology("ring", 30)).lam, abs=0)
    assert cli.main(["spectral", "--graph", "ring", "--require-psd"]) == 1
    assert cli.main(["spectral", "--graph", "ring", "--rule", "lazy-uniform", "--require-psd"]) == 0


def test_spectral_edge_file(tmp_path, capsys):
    path = tmp_path / "star.txt"
    path.write_text("0 1\n0 2\n0 3\n")
    assert cli.main(["spectral", "--edges", str(path), "--rule", "metropolis"]) == 0
    assert "n=4" in capsys.readouterr().out


def test_verify_exit_codes(tmp_path, capsys):
    assert cli.main(["verify", "--scope", "decomposition"]) == 0
    assert capsys.readouterr().out.rstrip().endswith("OK")
    W = combination_matrix(build_topology("ring", 10)).W.copy()
    W[0] *= 1.01
    path = tmp_path / "w.csv"
    np.savetxt(path, W, delimiter=",")
    assert cli.main(["verify", "--scope", "assumption1", "--weights", str(path)]) == 1
    assert "FAILED" in capsys.readouterr().out
    assert cli.main(["verify", "--scope", "lemma3", "--alpha", "0.5"]) == 1


def test_tune_command(capsys):
    args = ["tune", "--n", "6", "--d", "3", "--iters", "60", "--reps", "2"]
    assert cli.main(args + ["0.5"]) == 0
    assert "alpha=" in capsys.readouterr().out.splitlines()[-1]
    assert cli.main(args + ["--tune-to", "1e-12"]) == 1
    assert "tuning failed" in capsys.readouterr().err
    assert cli.main(args) == 2


def test_fixed_point_command(capsys):
    assert cli.main(["fixed-point", "--graph", "exponential", "--n", "12", "--alpha", "0.01"]) == 0
    out = capsys.readouterr().out
    assert float(out.split("residual_primal=")[1].split()[0]) <= 1e-8
    norm = float(out.split("dual_norm=")[1].split()[0])
    bound = float(out.split("bound=")[1].split()[0])
    assert norm <= bound * (1 + 1e-5)
