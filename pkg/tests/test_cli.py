import json

import numpy as np
import pandas as pd
import pytest

from hiv_delay_control import cli
from hiv_delay_control.errors import ConfigError, NoBracket, NonFiniteState
from hiv_delay_control.model_core import State
from hiv_delay_control.optimal_control import Optimum, PmpReport


@pytest.fixture(autouse=True)
def isolated_environment(tmp_path, monkeypatch):
    """No stray .env file or HIVDELAY_* variables leak into a run"""
    monkeypatch.chdir(tmp_path)
    for key in ("CONFIG", "OUT_DIR", "GRID_N", "WORKERS", "LOG_LEVEL"):
        monkeypatch.delenv(f"HIVDELAY_{key}", raising=False)


def run(capsys, *argv: str) -> tuple[int, str]:
    code = cli.main(list(argv))
    return code, capsys.readouterr().out


def fake_optimum(violations: int = 0, status: str = "optimal") -> Optimum:
    pmp = PmpReport(violations, violations == 0, 0.1, 5.0, 47.08)
    return Optimum(t_s=47.08, J=475.19, terminal=State(139.5, 0.04, 0.96, 1.0), case="case1",
                   w=1.0, status=status, J_second=5.1, pmp=pmp)


class TestEquilibria:
    def test_table_document(self, capsys):
        code, out = run(capsys, "equilibria")
        document = json.loads(out)
        assert code == cli.EXIT_OK
        assert document["R0"] == pytest.approx(112.0)
        assert document["R1"] == pytest.approx(10.752)
        assert list(document["equilibria"]) == ["E0", "E1", "E2"]
        E2 = document["equilibria"]["E2"]
        assert (E2["Z"], E2["I"], E2["V"], E2["T"]) == pytest.approx((14.182, 1.5, 230.4, 54.5939), abs=5e-4)

    def test_subcritical_config(self, capsys, tmp_path):
        path = tmp_path / "params.json"
        path.write_text(json.dumps({"r": 0.0014 / 200}))
        code, out = run(capsys, "equilibria", "--config", str(path))
        assert code == cli.EXIT_OK
        assert list(json.loads(out)["equilibria"]) == ["E0"]

    def test_malformed_config(self, capsys, tmp_path):
        path = tmp_path / "params.json"
        path.write_text("{not json")
        code, _ = run(capsys, "equilibria", "--config", str(path))
        assert code == cli.EXIT_CONFIG

    def test_unknown_key_is_named(self, capsys, tmp_path):
        path = tmp_path / "params.json"
        path.write_text(json.dumps({"gamma": 1.0}))
        code = cli.main(["equilibria", "--config", str(path)])
        assert code == cli.EXIT_CONFIG
        assert "gamma" in capsys.readouterr().err

    def test_config_from_environment(self, capsys, tmp_path, monkeypatch):
        path = tmp_path / "env.json"
        path.write_text(json.dumps({"r": 0.0014 / 200}))
        monkeypatch.setenv("HIVDELAY_CONFIG", str(path))
        _, out = run(capsys, "equilibria")
        assert json.loads(out)["R0"] == pytest.approx(0.56)


class TestStability:
    def test_table_verdicts(self, capsys):
        code, out = run(capsys, "stability")
        reports = {item["equilibrium"]: item for item in json.loads(out)}
        assert code == cli.EXIT_OK
        assert reports["E0"]["verdict"] == "unstable"
        assert reports["E1"]["verdict"] == "unstable"
        assert reports["E2"]["verdict"] == "locally_asymptotically_stable"
        assert reports["E2"]["tau_independent"] is True


class TestSimulate:
    def test_zero_horizon_writes_initial_row(self, capsys, tmp_path):
        code, out = run(capsys, "simulate", "--horizon", "0", "--out", str(tmp_path))
        assert code == cli.EXIT_OK
        assert out.strip() == str(tmp_path / "trajectory_custom.csv")
        lines = (tmp_path / "trajectory_custom.csv").read_text().splitlines()
        assert lines[0] == "t,Z,I,V,T"
        assert len(lines) == 2
        assert [float(x) for x in lines[1].split(",")] == [0.0, 45.0, 3.0, 75.0, 20.0]

    def test_case_label_and_grid(self, capsys, tmp_path):
        run(capsys, "simulate", "--case", "3", "--horizon", "1", "--out", str(tmp_path))
        frame = pd.read_csv(tmp_path / "trajectory_case3.csv")
        assert len(frame) == 51
        assert frame["t"].iloc[-1] == pytest.approx(1.0)

    def test_identical_inputs_give_identical_files(self, capsys, tmp_path):
        for name in ("first", "second"):
            run(capsys, "simulate", "--case", "1", "--control", "bang:47.08", "--out", str(tmp_path / name))
        first = (tmp_path / "first" / "trajectory_case1.csv").read_bytes()
        assert first == (tmp_path / "second" / "trajectory_case1.csv").read_bytes()

    def test_paired_delays(self, capsys, tmp_path):
        code, out = run(capsys, "simulate", "--horizon", "20", "--paired", "--out", str(tmp_path))
        assert code == cli.EXIT_OK
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "first_maxima_custom.json",
            "trajectory_custom_tau0.5.csv",
            "trajectory_custom_tau0.csv",
        ]
        maxima = json.loads((tmp_path / "first_maxima_custom.json").read_text())
        assert set(maxima) == {"tau=0", "tau=0.5"}
        assert len(out.splitlines()) == 3

    def test_compare_uncontrolled(self, capsys, tmp_path):
        run(capsys, "simulate", "--control", "bang:10", "--horizon", "20", "--compare-uncontrolled",
            "--out", str(tmp_path))
        treated = pd.read_csv(tmp_path / "trajectory_custom.csv")
        untreated = pd.read_csv(tmp_path / "trajectory_custom_uncontrolled.csv")
        assert treated["V"].iloc[200] < untreated["V"].iloc[200]

    def test_control_from_file(self, capsys, tmp_path):
        t = 0.02 * np.arange(51)
        pd.DataFrame({"t": t, "c": np.ones_like(t)}).to_csv(tmp_path / "c.csv", index=False)
        code, _ = run(capsys, "simulate", "--case", "1", "--horizon", "1", "--control",
                      f"file:{tmp_path / 'c.csv'}", "--out", str(tmp_path / "run"))
        assert code == cli.EXIT_OK
        assert len(pd.read_csv(tmp_path / "run" / "trajectory_case1.csv")) == 51

    @pytest.mark.parametrize("control", ["bang:soon", "bang:-1", "pulse:3", "file:missing.csv"])
    def test_bad_control(self, capsys, control):
        code, _ = run(capsys, "simulate", "--control", control)
        assert code == cli.EXIT_CONFIG

    def test_incompatible_delay(self, capsys):
        code, _ = run(capsys, "simulate", "--tau", "0.03")
        assert code == cli.EXIT_CONFIG

    def test_blow_up_maps_to_integration_code(self, capsys, mocker):
        mocker.patch.object(cli, "integrate", side_effect=NonFiniteState("V is nan", 3.2))
        code, _ = run(capsys, "simulate")
        assert code == cli.EXIT_INTEGRATION


class TestOptimize:
    def test_writes_optimum_document(self, capsys, tmp_path, mocker):
        solver = mocker.patch.object(cli, "solve_iop", return_value=fake_optimum())
        code, out = run(capsys, "optimize", "--case", "1", "--out", str(tmp_path))
        assert code == cli.EXIT_OK
        assert solver.call_args.kwargs["case"] == "case1"
        document = json.loads((tmp_path / "optimum_case1_w1_iop.json").read_text())
        assert document["t_s"] == 47.08
        assert document["pmp"]["violations"] == 0
        assert out.strip() == str(tmp_path / "optimum_case1_w1_iop.json")

    def test_violations_exit_with_solver_code(self, capsys, tmp_path, mocker):
        mocker.patch.object(cli, "solve_iop", return_value=fake_optimum(violations=3))
        code, _ = run(capsys, "optimize", "--out", str(tmp_path))
        assert code == cli.EXIT_SOLVER

    def test_boundary_optimum_exit_with_solver_code(self, capsys, tmp_path, mocker):
        mocker.patch.object(cli, "solve_iop", return_value=fake_optimum(status="no_bracket"))
        code, _ = run(capsys, "optimize", "--out", str(tmp_path))
        assert code == cli.EXIT_SOLVER

    def test_sweep_runs_every_pair(self, capsys, tmp_path, mocker):
        solver = mocker.patch.object(cli, "solve_iop", return_value=fake_optimum())
        run(capsys, "optimize", "--cases", "1,2,3", "--weights", "1,5", "--out", str(tmp_path))
        seen = {(call.kwargs["case"], call.args[0].w, call.args[0].tau, call.args[0].xi)
                for call in solver.call_args_list}
        assert seen == {
            (f"case{c}", w, tau, xi)
            for c, (tau, xi) in {1: (0.0, 0.0), 2: (0.5, 0.0), 3: (0.5, 0.2)}.items()
            for w in (1.0, 5.0)
        }

    def test_grid_method(self, capsys, tmp_path, mocker):
        solver = mocker.patch.object(cli, "solve_grid", return_value=(None, fake_optimum()))
        run(capsys, "optimize", "--method", "grid", "--grid-n", "500", "--out", str(tmp_path))
        assert solver.call_args.args[1] == 500

    def test_grid_size_floor(self, capsys):
        code, _ = run(capsys, "optimize", "--method", "grid", "--grid-n", "50")
        assert code == cli.EXIT_CONFIG

    def test_no_bracket_maps_to_solver_code(self, capsys, mocker):
        mocker.patch.object(cli, "solve_iop", side_effect=NoBracket("monotone"))
        code, _ = run(capsys, "optimize")
        assert code == cli.EXIT_SOLVER


class TestSensitivity:
    def test_writes_indexed_table(self, capsys, tmp_path, mocker):
        from hiv_delay_control.optimal_control import SENSITIVITY_COLUMNS, SensitivityTable

        frame = pd.DataFrame([[-0.2, 47.1, -0.04, 0.04, 0.95]], index=pd.Index(["w"], name="parameter"),
                             columns=list(SENSITIVITY_COLUMNS))
        table = SensitivityTable(frame=frame, nominal={"w": 1.0}, t_s=47.08)
        compute = mocker.patch.object(cli, "sensitivities", return_value=table)
        code, out = run(capsys, "sensitivity", "--case", "1", "--vary", "w", "--out", str(tmp_path))
        assert code == cli.EXIT_OK
        assert compute.call_args.args[1] == ["w"]
        path = tmp_path / "sensitivity_case1_w1.csv"
        assert out.strip() == str(path)
        assert path.read_text().splitlines()[0] == "parameter,dt_s/dp,dJ/dp,dZ(t_f)/dp,dI(t_f)/dp,dV(t_f)/dp"

    def test_empty_vary(self, capsys):
        code, _ = run(capsys, "sensitivity", "--vary", ",")
        assert code == cli.EXIT_CONFIG

    def test_unknown_parameter(self, capsys):
        code, _ = run(capsys, "sensitivity", "--vary", "gamma", "--fixed-control", "off")
        assert code == cli.EXIT_CONFIG


class TestExitCodes:
    @pytest.mark.parametrize(
        "error, expected",
        [
            (ConfigError("bad"), cli.EXIT_CONFIG),
            (NonFiniteState("nan", 1.0), cli.EXIT_INTEGRATION),
            (NoBracket("flat"), cli.EXIT_SOLVER),
            (KeyError("other"), cli.EXIT_OTHER),
        ],
    )
    def test_mapping(self, error, expected):
        assert cli.exit_code_for(error) == expected

    def test_unexpected_failure(self, capsys, mocker):
        mocker.patch.object(cli, "equilibria", side_effect=RuntimeError("boom"))
        code, _ = run(capsys, "equilibria")
        assert code == cli.EXIT_OTHER

    def test_bad_log_level(self, capsys):
        code, _ = run(capsys, "equilibria", "--log-level", "LOUD")
        assert code == cli.EXIT_CONFIG
