import hashlib
import json

import numpy as np
import pytest

from spinmqc import cli, hamiltonians, validation
from spinmqc.echo import EchoCurve, fermi_model
from spinmqc.hamiltonians import HamiltonianKind
from spinmqc.mqc import MqcSeries

SHORT = ["--t-stop", "40", "--t-step", "4"]


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out), "--quiet"])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


class TestConfigErrors:
    @pytest.mark.parametrize("step", ["0", "-2"])
    def test_nonpositive_step(self, tmp_path, capsys, step):
        code, _ = run(tmp_path, "mqc", "--n-spins", "4", "--t-step", step)
        assert code == 2
        assert "dynamics.t_step_us" in capsys.readouterr().err

    def test_size_cap(self, tmp_path, capsys):
        code, _ = run(tmp_path, "mqc", "--n-spins", "13")
        assert code == 2
        assert "system.n_spins" in capsys.readouterr().err

    def test_size_cap_lowered(self, tmp_path):
        code, _ = run(tmp_path, "mqc", "--n-spins", "6", "--max-spins", "5")
        assert code == 2

    def test_unknown_ini_key(self, tmp_path, capsys):
        ini = tmp_path / "bad.ini"
        ini.write_text("[system]\nn_spin = 4\n")
        code, _ = run(tmp_path, "mqc", "--config", str(ini))
        assert code == 2
        assert "system.n_spin" in capsys.readouterr().err

    def test_wrong_section(self, tmp_path, capsys):
        ini = tmp_path / "bad.ini"
        ini.write_text("[echo]\nn_spins = 4\n")
        assert run(tmp_path, "mqc", "--config", str(ini))[0] == 2
        assert "belongs in section [system]" in capsys.readouterr().err

    def test_unparseable_value(self, tmp_path, capsys):
        ini = tmp_path / "bad.ini"
        ini.write_text("[system]\nn_spins = many\n")
        assert run(tmp_path, "mqc", "--config", str(ini))[0] == 2
        assert "system.n_spins" in capsys.readouterr().err

    def test_phase_aliasing(self, tmp_path, capsys):
        code, _ = run(tmp_path, "mqc", "--n-spins", "8", "--method", "phase", "--n-phases", "16", *SHORT)
        assert code == 2
        assert "n_phases" in capsys.readouterr().err

    def test_analytic_needs_nn(self, tmp_path):
        code, out = run(tmp_path, "analytic", "--n-spins", "4", "--truncation", "nnn", *SHORT)
        assert code == 2
        assert manifest(out)["status"] == "config-error"

    def test_ladder_needs_even(self, tmp_path):
        assert run(tmp_path, "echo", "--system", "hap-ladder", "--n-spins", "5")[0] == 2


class TestMqcCommand:
    def test_ini_then_flags(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[system]\nn_spins = 4\ntruncation = nn\n\n[dynamics]\nt_stop_us = 20\nt_step_us = 5\n")
        code, out = run(tmp_path, "mqc", "--config", str(ini), "--n-spins", "5")
        assert code == 0
        cfg = manifest(out)["config"]
        assert cfg["n_spins"] == 5 and cfg["truncation"] == "nn" and cfg["t_step_us"] == 5
        series = MqcSeries.from_csv((out / "mqc_dq_theta0_direct.csv").read_text())
        assert len(series.times) == 5
        assert max(series.orders) == 4  # only even orders are written

    def test_dual_method_cross_check(self, tmp_path):
        code, out = run(tmp_path, "mqc", "--n-spins", "6", "--hamiltonian", "xx", "--method", "direct",
                        "--method", "phase", *SHORT)
        assert code == 0
        diffs = manifest(out)["method_cross_checks"]
        assert list(diffs.values())[0] < 1e-9

    def test_manifest_checksums(self, tmp_path):
        code, out = run(tmp_path, "mqc", "--n-spins", "4", *SHORT)
        m = manifest(out)
        assert code == 0 and m["status"] == "ok"
        for name, digest in m["files"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
        assert len(m["config_sha256"]) == 64

    def test_checksum_ignores_out_and_threads(self, tmp_path):
        _, a = run(tmp_path, "mqc", "--n-spins", "4", *SHORT, name="a")
        _, b = run(tmp_path, "mqc", "--n-spins", "4", "--threads", "2", *SHORT, name="b")
        assert manifest(a)["config_sha256"] == manifest(b)["config_sha256"]
        assert manifest(a)["files"] == manifest(b)["files"]

    def test_powder_run(self, tmp_path):
        code, out = run(tmp_path, "mqc", "--n-spins", "4", "--powder", "16", *SHORT)
        assert code == 0
        assert (out / "mqc_dq_powder16_direct.csv").exists()

    def test_analytic_matches_direct(self, tmp_path):
        _, a = run(tmp_path, "analytic", "--n-spins", "6", *SHORT, name="a")
        _, d = run(tmp_path, "mqc", "--n-spins", "6", "--truncation", "nn", *SHORT, name="d")
        sa = MqcSeries.from_csv((a / "mqc_dq_theta0_analytic.csv").read_text())
        sd = MqcSeries.from_csv((d / "mqc_dq_theta0_direct.csv").read_text())
        assert sa.max_abs_diff(sd) < 1e-9

    def test_preset_fig3(self, tmp_path):
        code, out = run(tmp_path, "mqc", "--preset", "fig3", "--n-spins", "6", "--t-stop", "20")
        assert code == 0
        assert {"mqc_xx_theta0_direct.csv", "mqc_dq_theta0_direct.csv"} <= set(manifest(out)["files"])

    def test_health_failure_exit(self, tmp_path, monkeypatch):
        def broken(series, label):
            raise cli.NumericalHealthError("injected")

        monkeypatch.setattr(cli, "check_health", broken)
        code, out = run(tmp_path, "mqc", "--n-spins", "4", *SHORT)
        assert code == 3
        assert manifest(out)["status"] == "numerical-health-failure"


class TestEchoCommand:
    def test_fit_only_recovers_fermi(self, tmp_path):
        t = np.linspace(0, 1e-3, 80)
        csv = tmp_path / "curve.csv"
        csv.write_text(EchoCurve(t, fermi_model(t, 3e-4, 5e-5)).to_csv())
        code, out = run(tmp_path, "echo", "--fit-only", str(csv))
        assert code == 0
        report = json.loads((out / "echo_fit.json").read_text())
        assert report["preferred"] == "fermi"
        assert report["fermi"]["params_us"]["t_c"] == pytest.approx(300, rel=1e-4)
        assert report["fermi"]["params_us"]["tau_phi"] == pytest.approx(50, rel=1e-4)

    def test_fit_only_missing_file(self, tmp_path):
        assert run(tmp_path, "echo", "--fit-only", str(tmp_path / "nope.csv"))[0] == 2

    def test_zero_strength_notice(self, tmp_path):
        code, out = run(tmp_path, "echo", "--n-spins", "4", "--strength", "0", "--t-stop", "200", "--t-step", "20")
        assert code == 0
        curve = EchoCurve.from_csv((out / "echo.csv").read_text())
        np.testing.assert_allclose(curve.amplitude, 1, atol=1e-12)
        report = json.loads((out / "echo_fit.json").read_text())
        assert report["exponential"]["error"] == "DegenerateInputError"
        assert report["preferred"] is None

    def test_cross_chain_needs_ladder(self, tmp_path, capsys):
        code, _ = run(tmp_path, "echo", "--n-spins", "4", "--perturbation", "cross-chain")
        assert code == 2
        assert "echo.perturbation" in capsys.readouterr().err

    def test_ladder_cross_chain(self, tmp_path):
        code, out = run(tmp_path, "echo", "--system", "hap-ladder", "--n-spins", "6", "--perturbation",
                        "cross-chain", "--t-stop", "200", "--t-step", "20")
        assert code == 0
        assert (out / "echo.csv").exists()

    def test_seeded_disorder_deterministic(self, tmp_path):
        args = ["echo", "--n-spins", "5", "--perturbation", "zz-disorder", "--strength", "0.3", "--seed", "5",
                "--t-stop", "200", "--t-step", "20"]
        _, a = run(tmp_path, *args, name="a")
        _, b = run(tmp_path, *args, name="b")
        assert (a / "echo.csv").read_bytes() == (b / "echo.csv").read_bytes()


class TestZenoAndValidate:
    def test_zeno(self, tmp_path, capsys):
        code = cli.main(["zeno", "--out", str(tmp_path / "z")])
        assert code == 0
        data = json.loads((tmp_path / "z" / "zeno.json").read_text())
        assert data["ratio_couplings"] == pytest.approx(41.07, abs=0.01)
        assert "rate ratio" in capsys.readouterr().out

    def test_zeno_bad_radii(self, tmp_path):
        assert run(tmp_path, "zeno", "--r-in", "-1")[0] == 2

    def test_validate_reduced_cap_skips(self, tmp_path, monkeypatch):
        # keep this quick: only the checks whose sizes depend on the cap
        monkeypatch.setattr(validation, "CHECKS", (validation.check_free_fermion, validation.check_selection_rule,
                                                   validation.check_mesoscopic_echo))
        code, out = run(tmp_path, "validate", "--max-spins", "6")
        text = (out / "validate.txt").read_text()
        assert "SKIP [6]" in text
        assert "N=[8, 10] skipped by cap" in text
        assert code == 0

    def test_validate_exit_on_failure(self, tmp_path, monkeypatch):
        monkeypatch.setattr(validation, "CHECKS", (validation.check_zeno,))
        code, out = run(tmp_path, "validate")
        assert code == 4
        assert manifest(out)["status"] == "validation-failed"

    def test_version(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["--version"])
        assert capsys.readouterr().out.strip().startswith("spinmqc")


def test_mutated_dq_coefficients_are_caught(monkeypatch):
    """A zz admixture in H_DQ must be flagged by the acceptance checks.

    (A flip-flop admixture would not do: on an NN chain it stays a quadratic
    fermion model and keeps |M| <= 2.)
    """
    original = hamiltonians._coefficients

    def mutated(kind, d):
        if kind is HamiltonianKind.DQ:
            return d / 4, 0.0, d / 4
        return original(kind, d)

    monkeypatch.setattr(hamiltonians, "_coefficients", mutated)
    ctx = validation.Context(max_spins=8)
    checks = validation.check_free_fermion(ctx) + validation.check_selection_rule(ctx)
    assert checks[0].passed is False
    assert checks[-1].passed is False


def test_mutated_dq_scale_is_caught(monkeypatch):
    """A doubled DQ prefactor shifts every oscillation frequency."""
    original = hamiltonians._coefficients

    def mutated(kind, d):
        if kind is HamiltonianKind.DQ:
            return 0.0, 0.0, d / 2
        return original(kind, d)

    monkeypatch.setattr(hamiltonians, "_coefficients", mutated)
    ctx = validation.Context(max_spins=6)
    assert validation.check_free_fermion(ctx)[0].passed is False
