import subprocess
import sys

import pytest

from viscohom import cli
from viscohom.errors import SolverDiverged
from viscohom.homogenizer import EffectiveModel
from viscohom.properties import REGISTRY, config_path, run_property_suite

SLOW = {"mean_value_matches_window_average", "energy_bounds_uniform_in_eps", "reproducible_outputs"}
FAST = [name for _, name, _ in REGISTRY if name not in SLOW]


def csv_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.csv"))}


def test_effective_laminate_prints_harmonic_mean(tmp_path, capsys):
    assert cli.main(["effective", "--config", "laminate", "--out", str(tmp_path)]) == 0
    model = EffectiveModel.from_text(capsys.readouterr().out)
    assert model.C0[0, 0] == pytest.approx(1.6, rel=1e-2)
    assert (tmp_path / "effective.csv").exists()


@pytest.mark.parametrize("command", ["cell", "macro", "fine"])
def test_subcommands_write_outputs(command, tmp_path):
    assert cli.main([command, "--config", "quick", "--out", str(tmp_path)]) == 0
    assert csv_bytes(tmp_path)


def test_converge_then_report(tmp_path, capsys):
    assert cli.main(["converge", "--config", "quick", "--out", str(tmp_path)]) == 0
    assert "monotone decrease" in capsys.readouterr().out
    assert cli.main(["report", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "report.txt").exists()


@pytest.mark.parametrize("argv", [
    ["effective", "--config", "no/such/file.toml"],
    ["effective"],
    ["macro", "--config", "quick", "--threads", "0"],
])
def test_config_errors_exit_2(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)]) == 2


def test_unknown_key_exit_2_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(config_path("quick").read_text().replace("radius = 0.25",
                                                             "radius = 0.25\nbogus = 1"))
    assert cli.main(["effective", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "geometry.bogus" in capsys.readouterr().err


def test_solver_failure_exit_3(tmp_path, monkeypatch):
    import viscohom.harness as harness

    def diverge(*args, **kwargs):
        raise SolverDiverged("no convergence in 10 iterations")

    monkeypatch.setattr(harness, "run_macro", diverge)
    assert cli.main(["macro", "--config", "quick", "--out", str(tmp_path)]) == 3


def test_nonmonotone_convergence_exit_4(tmp_path, monkeypatch):
    import viscohom.harness as harness

    real = harness.run_convergence

    def flipped(cfg, out, model=None):
        rec = real(cfg, out, model)
        first, second = rec.ordered()[:2]
        first.error, second.error = second.error, first.error * 2
        return rec

    monkeypatch.setattr(harness, "run_convergence", flipped)
    assert cli.main(["converge", "--config", "quick", "--out", str(tmp_path)]) == 4


def test_negative_control_fails_only_coercivity(tmp_path, capsys):
    rc = cli.main(["props", "--inject-non-spd", "--out", str(tmp_path), "--only", *FAST])
    assert rc == 4
    failed = [line for line in capsys.readouterr().out.splitlines() if line.startswith("FAIL")]
    assert len(failed) == 1 and "fem.coercivity_smallest_ritz_value" in failed[0]


def test_props_pass_and_write_ledger(tmp_path):
    assert cli.main(["props", "--seed", "3", "--out", str(tmp_path), "--only", *FAST]) == 0
    assert (tmp_path / "properties.csv").exists()


def test_seed_sweep_same_pass_set():
    sets = {frozenset(r.name for r in run_property_suite(seed, only=FAST) if r.passed)
            for seed in range(10)}
    assert len(sets) == 1 and len(next(iter(sets))) == len(FAST)


def test_subset_independent_of_selection():
    a = {r.name: r.detail for r in run_property_suite(5, only=FAST)}
    b = {r.name: r.detail for r in run_property_suite(5, only=FAST[::3])}
    assert all(a[k] == v for k, v in b.items())


def test_converge_reproducible(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.main(["converge", "--config", "quick", "--seed", "7", "--out", str(out)]) == 0
    first, second = (csv_bytes(o) for o in outs)
    assert first and first == second


def test_threads_do_not_change_results(tmp_path):
    outs = [tmp_path / "one", tmp_path / "two"]
    for out, threads in zip(outs, ("1", "2")):
        assert cli.main(["fine", "--config", "quick", "--threads", threads, "--out", str(out)]) == 0
    assert csv_bytes(outs[0]) == csv_bytes(outs[1])


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "viscohom.cli", "effective", "--config",
                           "laminate", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert EffectiveModel.from_text(proc.stdout).C0.shape == (1, 1)
