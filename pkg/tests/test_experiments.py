import math
from pathlib import Path

import numpy as np
import pytest

from bacnoma import ScenarioConfig
from bacnoma.cli import main
from bacnoma.experiments import (
    ConfigError,
    ExperimentSpec,
    fig_mode,
    result_to_csv,
    run_experiment,
    write_csv,
)

TINY_SCENARIO = ScenarioConfig(num_users=2, cluster_side=2.0, noise_power=1e-8)


def tiny_spec(**over):
    base = dict(
        scenario=TINY_SCENARIO,
        sweep_var="target_rate",
        sweep_values=(1.0, 2.0),
        trials=5,
        solvers=("oma", "closed-form"),
        master_seed=7,
    )
    base.update(over)
    return ExperimentSpec(**base)


class TestSpecValidation:
    def test_two_user_solvers_require_two_users(self):
        with pytest.raises(ConfigError):
            tiny_spec(scenario=ScenarioConfig(num_users=3))
        with pytest.raises(ConfigError):
            tiny_spec(sweep_var="num_users", sweep_values=(2, 3))
        tiny_spec(sweep_var="num_users", sweep_values=(2,))  # fine

    def test_unknown_solver(self):
        with pytest.raises(ConfigError):
            tiny_spec(solvers=("bogus",))

    def test_classes_mode_needs_closed_form(self):
        with pytest.raises(ConfigError):
            tiny_spec(mode="classes")
        tiny_spec(mode="classes", solvers=("closed-form",))

    def test_text_roundtrip(self):
        spec = tiny_spec(solvers=("oma", "sca"), scenario=ScenarioConfig(num_users=4))
        back = ExperimentSpec.from_text(spec.to_text())
        assert back == spec

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentSpec.from_text("wibble 3\n")


class TestRunExperiment:
    def test_paired_improvement_over_baseline(self):
        res = run_experiment(tiny_spec(trials=40))
        for value in (1.0, 2.0):
            by = {r["solver"]: r for r in res.rows if r["sweep_value"] == value}
            assert by["closed-form"]["mean_power"] < by["oma"]["mean_power"]
            assert by["oma"]["trials_ok"] == 40

    def test_deterministic_csv_bytes(self):
        a = result_to_csv(run_experiment(tiny_spec(trials=3)))
        b = result_to_csv(run_experiment(tiny_spec(trials=3)))
        assert a == b

    def test_jobs_do_not_change_results(self):
        def body(text):  # config echo differs in the jobs line; data must not
            return [l for l in text.splitlines() if not l.startswith("#")]

        a = result_to_csv(run_experiment(tiny_spec(trials=4)))
        b = result_to_csv(run_experiment(tiny_spec(trials=4, jobs=2)))
        assert body(a) == body(b)

    def test_class_frequencies_sum_to_one(self):
        res = run_experiment(tiny_spec(mode="classes", solvers=("closed-form",), trials=30))
        for value in (1.0, 2.0):
            freqs = [r["frequency"] for r in res.rows if r["sweep_value"] == value]
            assert sum(freqs) == pytest.approx(1.0)

    def test_content_hash_matches_body(self):
        import hashlib

        text = result_to_csv(run_experiment(tiny_spec(trials=2)))
        lines = text.splitlines(keepends=True)
        body = "".join(l for l in lines if not l.startswith("#"))
        stated = next(l.split()[-1] for l in lines if l.startswith("# content-sha1"))
        assert hashlib.sha1(body.encode()).hexdigest() == stated

    def test_failures_counted_not_hidden(self, monkeypatch):
        import bacnoma.experiments as ex

        real = ex.solve_single

        def flaky(solver, inst, spec, warm=None):
            if solver == "closed-form":
                raise RuntimeError("boom")
            return real(solver, inst, spec, warm)

        monkeypatch.setattr(ex, "solve_single", flaky)
        res = run_experiment(tiny_spec(trials=3, sweep_values=(1.0,)))
        assert res.failures[(1.0, "closed-form")] == 3
        assert res.any_failures
        row = next(r for r in res.rows if r["solver"] == "closed-form")
        assert row["failures"] == 3 and math.isnan(row["mean_power"])

    def test_trace_mode_rows(self):
        spec = tiny_spec(
            mode="trace", solvers=("sca", "bb-sra"), trials=1, sweep_values=(1.0,),
            n_max=40,
        )
        res = run_experiment(spec)
        solvers = {r["solver"] for r in res.rows}
        assert solvers == {"sca", "bb-sra"}
        bb_rows = [r for r in res.rows if r["solver"] == "bb-sra"]
        assert [r["iteration"] for r in bb_rows] == list(range(len(bb_rows)))


class TestFigPresets:
    def test_fig1_panels(self):
        panels = fig_mode("fig1")
        assert [label for label, _ in panels] == ["fig1_ru2", "fig1_ru5"]
        for _, spec in panels:
            assert spec.scenario.num_users == 2
            assert spec.scenario.noise_power == 1e-8

    def test_fig4_preset_values(self):
        for _, spec in fig_mode("fig4"):
            assert spec.scenario.target_rate == 4.0
            assert spec.scenario.noise_power == 1e-8
            assert spec.sweep_var == "num_users"
        assert {s.scenario.cluster_center for _, s in fig_mode("fig4")} == {15.0, 20.0}

    def test_fig6_preset_values(self):
        [(label, spec)] = fig_mode("fig6")
        assert spec.scenario.cluster_center == 20.0
        assert spec.scenario.cluster_side == 5.0
        assert spec.mode == "trace"

    def test_fig3_is_classes_mode(self):
        [(_, spec)] = fig_mode("fig3")
        assert spec.mode == "classes"
        assert spec.scenario.cluster_side == 2.0

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            fig_mode("fig9")


class TestCli:
    def test_solve_and_oracle(self, tmp_path, capsys):
        from bacnoma import SystemInstance

        inst = SystemInstance(np.array([[4.0, 0.0], [1.0, 1.0]]), math.log(2.0))
        path = tmp_path / "inst.txt"
        path.write_text(inst.to_text())
        assert main(["solve", "--instance", str(path), "--solver", "closed-form"]) == 0
        out = capsys.readouterr().out
        assert "H-NOMA II" in out
        assert main(["solve", "--instance", str(path), "--solver", "bb-sra", "--xi", "1e-2"]) == 0
        rc = main(["oracle", "--gamma0", "1", "--gamma1", "4", "--gamma2", "1",
                   "--rate", "0.6931471805599453", "--points", "100000"])
        assert rc == 0
        assert "objective=" in capsys.readouterr().out

    def test_oracle_needs_arguments(self, capsys):
        assert main(["oracle"]) == 2

    def test_two_user_solver_rejected_on_wrong_size(self, tmp_path):
        from bacnoma import SystemInstance

        inst = SystemInstance(np.array([[1.0]]), 1.0)
        path = tmp_path / "inst.txt"
        path.write_text(inst.to_text())
        assert main(["solve", "--instance", str(path), "--solver", "closed-form"]) == 2

    def test_sweep_writes_csv_and_plot(self, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text(
            "num_users 2\ncluster_side 2.0\nnoise_power 1e-08\n"
            "sweep_var target_rate\nsweep_values 1 2\ntrials 3\n"
            "solvers oma closed-form\nmaster_seed 5\n"
        )
        out = tmp_path / "out.csv"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        assert out.exists() and out.with_suffix(".png").exists()
        text = out.read_text()
        assert text.startswith("# bacnoma experiment result")

    def test_sweep_deterministic_bytes(self, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text(
            "num_users 2\nsweep_var target_rate\nsweep_values 1\ntrials 1\n"
            "solvers oma closed-form\nmaster_seed 3\n"
        )
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["sweep", "--config", str(cfg), "--out", str(a), "--no-plot"]) == 0
        assert main(["sweep", "--config", str(cfg), "--out", str(b), "--no-plot"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_config_is_config_error(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_fig_preset_smoke(self, tmp_path):
        rc = main(["fig", "fig3", "--trials", "5", "--out-dir", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "fig3.csv").exists()
        assert (tmp_path / "fig3.png").exists()

    def test_solver_failures_exit_code(self, tmp_path, monkeypatch):
        import bacnoma.experiments as ex

        def always_fail(solver, inst, spec, warm=None):
            raise RuntimeError("boom")

        monkeypatch.setattr(ex, "solve_single", always_fail)
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text(
            "num_users 2\nsweep_var target_rate\nsweep_values 1\ntrials 1\n"
            "solvers oma\nmaster_seed 3\n"
        )
        out = tmp_path / "f.csv"
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--no-plot"]) == 3
        assert out.exists()  # results still written, failure flagged
