import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from hiv_delay_control.config import RunConfig, Scenario
from hiv_delay_control.errors import ConfigError
from hiv_delay_control.export import dumps, read_csv, read_json, write_csv, write_json

pytestmark = pytest.mark.unit


class TestScenario:
    @pytest.mark.parametrize("flag", [3, "3", "case3", " CASE3 "])
    def test_flags(self, flag):
        assert Scenario.from_flag(flag) is Scenario.CASE3

    def test_delays(self):
        assert Scenario.CASE1.delays == (0.0, 0.0)
        assert Scenario.CASE2.delays == (0.5, 0.0)
        assert Scenario.CASE3.delays == (0.5, 0.2)
        assert Scenario.CUSTOM.delays is None

    def test_unknown_case(self):
        with pytest.raises(ConfigError) as info:
            Scenario.from_flag(4)
        assert info.value.key == "case"


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig.load(environ={})
        assert config.case_label == "custom"
        assert config.grid_n == 2500
        assert config.out_dir == Path(".")
        assert config.params.tau == 0.5 and config.params.xi == 0.2

    def test_case_sets_delays(self):
        config = RunConfig.load(case="2", environ={})
        assert (config.params.tau, config.params.xi) == (0.5, 0.0)
        assert config.case_label == "case2"

    def test_delay_override_drops_the_label(self):
        config = RunConfig.load(case=1, param_overrides={"tau": 0.25}, environ={})
        assert config.case_label == "custom"
        assert config.params.tau == 0.25

    def test_weight_override_keeps_the_label(self):
        config = RunConfig.load(case=3, param_overrides={"w": 5.0}, environ={})
        assert config.case_label == "case3"
        assert config.params.w == 5.0

    def test_precedence(self, tmp_path):
        path = tmp_path / "params.json"
        path.write_text(json.dumps({"w": 2.0, "tau": 0.0}))
        environ = {"HIVDELAY_CONFIG": str(path), "HIVDELAY_GRID_N": "500", "HIVDELAY_WORKERS": "4"}
        config = RunConfig.load(workers=2, param_overrides={"w": 3.0}, environ=environ)
        assert config.params.tau == 0.0
        assert config.params.w == 3.0
        assert config.grid_n == 500
        assert config.workers == 2

    def test_flag_config_beats_environment(self, tmp_path):
        flag, env = tmp_path / "flag.json", tmp_path / "env.json"
        flag.write_text(json.dumps({"w": 7.0}))
        env.write_text(json.dumps({"w": 9.0}))
        config = RunConfig.load(config_path=flag, environ={"HIVDELAY_CONFIG": str(env)})
        assert config.params.w == 7.0

    def test_bad_environment_value(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.load(environ={"HIVDELAY_GRID_N": "many"})
        assert info.value.key == "HIVDELAY_GRID_N"

    @pytest.mark.parametrize(
        "settings, key",
        [
            ({"grid_n": 99}, "grid_n"),
            ({"workers": 0}, "workers"),
            ({"log_level": "LOUD"}, "log_level"),
        ],
    )
    def test_invalid_settings(self, settings, key):
        with pytest.raises(ConfigError) as info:
            RunConfig(**settings)
        assert info.value.key == key

    def test_scenario_must_match_delays(self):
        with pytest.raises(ConfigError):
            RunConfig(scenario=Scenario.CASE1)

    @pytest.mark.parametrize("content", ["[1, 2]", "{broken", None])
    def test_unreadable_parameter_file(self, tmp_path, content):
        path = tmp_path / "params.json"
        if content is not None:
            path.write_text(content)
        with pytest.raises(ConfigError) as info:
            RunConfig.load(config_path=path, environ={})
        assert info.value.key == "config"


class TestExport:
    def test_csv_keeps_full_precision(self, tmp_path):
        frame = pd.DataFrame({"t": [0.0, 0.1], "V": [1 / 3, np.pi]})
        path = write_csv(frame, tmp_path / "nested" / "out.csv")
        raw = path.read_bytes()
        assert b"\r\n" not in raw
        assert raw.splitlines()[0] == b"t,V"
        np.testing.assert_array_equal(read_csv(path).to_numpy(), frame.to_numpy())

    def test_json_document(self, tmp_path):
        document = {"b": 1.0, "a": [True, None]}
        path = write_json(document, tmp_path / "doc.json")
        assert read_json(path) == document
        assert path.read_text().endswith("}\n")
        assert list(read_json(path)) == ["b", "a"]

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            dumps({"x": float("nan")})
