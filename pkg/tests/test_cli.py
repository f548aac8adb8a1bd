import json
import os
import subprocess
import sys

import pytest

from coherent_estimation import __version__, cli, invariants


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCosts:
    def test_single_point(self, capsys):
        code, out, _ = run(["costs", "--alg", "textbook_pe", "--n", "3", "--alpha", "0.25",
                            "--delta", "0.1"], capsys)
        assert code == 0
        rows = [line for line in out.splitlines() if not line.startswith("#")]
        assert rows[0].startswith("algorithm,")
        assert rows[1].split(",")[4] == "510"

    def test_empty_grid_is_header_only(self, capsys):
        code, out, _ = run(["costs", "--n", ""], capsys)
        assert code == 0
        rows = [line for line in out.splitlines() if not line.startswith("#")]
        assert rows == ["algorithm,n,alpha,delta,queries,garbage_qubits,ancillas,speedup_vs_textbook"]

    def test_fig5_grid(self, capsys):
        code, out, _ = run(["costs", "--figure", "fig5", "--alg", "improved_pe"], capsys)
        assert code == 0
        rows = [line for line in out.splitlines() if not line.startswith("#")][1:]
        assert len(rows) == 20 + 12 + 30

    def test_deterministic_file_output(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert cli.main(["costs", "--figure", "fig4", "--out", str(path)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert f"version={__version__}" in a.read_text()
        assert not [p for p in os.listdir(tmp_path) if p.startswith(".tmp-")]

    def test_invalid_grid(self, capsys):
        code, _, err = run(["costs", "--alpha", "1.5"], capsys)
        assert code == 2 and "invalid grid point" in err

    def test_unwritable_output(self, tmp_path, capsys):
        code, _, err = run(["costs", "--out", str(tmp_path / "missing" / "x.csv")], capsys)
        assert code == 2 and "cannot write" in err

    def test_argparse_errors_exit_2(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["costs", "--n", "x"])
        assert info.value.code == 2


class TestSimulate:
    def test_improved_pe(self, tmp_path):
        out = tmp_path / "r.json"
        code = cli.main(["simulate", "--alg", "improved_pe", "--n", "3", "--alpha", "0.3", "--delta", "0.05",
                         "--dim", "8", "--seed", "7", "--out", str(out)])
        data = json.loads(out.read_text())
        assert code == 0 and data["passed"]
        assert min(data["report"]["per_eigenstate_success"]) >= 0.95
        assert data["config"]["seed"] == 7 and data["version"] == __version__

    def test_no_promise(self, tmp_path):
        out = tmp_path / "r.json"
        assert cli.main(["simulate", "--no-promise", "--n", "3", "--dim", "3", "--out", str(out)]) == 0
        details = json.loads(out.read_text())["details"]
        M, below = details["support"]
        assert below == (M - 1) % 8
        assert details["gap_value_support_mass"] >= 0.95

    @pytest.mark.parametrize("alg", ["textbook_pe", "improved_ee", "amplitude"])
    def test_other_algorithms(self, alg, tmp_path):
        out = tmp_path / "r.json"
        assert cli.main(["simulate", "--alg", alg, "--n", "2", "--dim", "2", "--delta", "0.1",
                         "--out", str(out)]) == 0
        assert json.loads(out.read_text())["passed"]

    def test_one_dimensional_amplitude(self, tmp_path):
        out = tmp_path / "r.json"
        assert cli.main(["simulate", "--alg", "amplitude", "--dim", "1", "--n", "3", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["details"]["amplitude_squared"] == 0.0

    def test_deterministic(self, tmp_path):
        paths = [tmp_path / "a.json", tmp_path / "b.json"]
        for p in paths:
            cli.main(["simulate", "--n", "2", "--dim", "3", "--seed", "5", "--out", str(p)])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_budget_exceeded(self, capsys):
        code, _, err = run(["simulate", "--n", "8", "--dim", "64"], capsys)
        assert code == 2 and "dense budget" in err

    def test_unknown_algorithm(self, capsys):
        code, _, _ = run(["simulate", "--alg", "qft"], capsys)
        assert code == 2


class TestPoly:
    def test_amplifying(self, capsys):
        code, out, _ = run(["poly", "--eta", "0.25", "--delta", "0.01"], capsys)
        data = json.loads(out)
        assert code == 0 and data["passed"] and data["degree"] % 2 == 1

    def test_cosine(self, capsys):
        code, out, _ = run(["poly", "--kind", "cos", "--t", "6.0", "--eps", "1e-8"], capsys)
        assert code == 0 and json.loads(out)["max_error"] <= 1e-8

    def test_invalid(self, capsys):
        code, _, _ = run(["poly", "--eta", "0.7"], capsys)
        assert code == 2


class TestVerify:
    def test_all_suites_pass(self, capsys):
        code, out, _ = run(["verify"], capsys)
        assert code == 0
        assert "FAIL" not in out and out.strip().endswith(f"version {__version__}")

    def test_filter(self, capsys):
        code, out, _ = run(["verify", "--suite", "diamond_bound"], capsys)
        lines = out.strip().splitlines()
        assert code == 0 and len(lines) == 2 and "[diamond_bound]" in lines[0]

    def test_unknown_suite(self, capsys):
        code, _, _ = run(["verify", "--suite", "nope"], capsys)
        assert code == 2

    def test_corrupted_tolerance_fails(self, capsys, monkeypatch):
        monkeypatch.setattr(invariants, "COLLAPSE_TOL", -1.0)
        code, out, _ = run(["verify", "--suite", "collapse"], capsys)
        assert code == 1 and out.startswith("FAIL")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "coherent_estimation", "--version"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and __version__ in proc.stdout


def test_thread_variable(monkeypatch):
    env = {cli.THREAD_ENV: "2"}
    cli.configure_threads(env)
    assert all(env[v] == "2" for v in cli.THREAD_VARS)
