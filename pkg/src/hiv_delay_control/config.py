"""
Run configuration for the command-line front end

Values are merged in order: defaults, the JSON parameter document
(--config or HIVDELAY_CONFIG), HIVDELAY_* environment variables (a .env file
is honoured through python-dotenv), then explicit command-line flags.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from dotenv import load_dotenv

from .dde_integrator import DEFAULT_NODES
from .errors import ConfigError
from .model_core import InitialData, ModelParams

logger = logging.getLogger(__name__)

ENV_PREFIX = "HIVDELAY_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
MIN_GRID_N = 100


class Scenario(Enum):
    """Delay presets (tau, xi) used by the acceptance runs"""
    CASE1 = "case1"
    CASE2 = "case2"
    CASE3 = "case3"
    CUSTOM = "custom"

    @property
    def delays(self) -> tuple[float, float] | None:
        return _SCENARIO_DELAYS.get(self)

    @classmethod
    def from_flag(cls, value: str | int) -> "Scenario":
        """Accepts 1, "1", "case1" and so on"""
        text = str(value).strip().lower()
        if text.isdigit():
            text = f"case{text}"
        try:
            return cls(text)
        except ValueError:
            raise ConfigError(f"Unknown case {value!r}; expected 1, 2 or 3", key="case") from None


_SCENARIO_DELAYS = {
    Scenario.CASE1: (0.0, 0.0),
    Scenario.CASE2: (0.5, 0.0),
    Scenario.CASE3: (0.5, 0.2),
}


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    init: InitialData = field(default_factory=InitialData)
    scenario: Scenario = Scenario.CUSTOM
    grid_n: int = DEFAULT_NODES
    out_dir: Path = Path(".")
    workers: int = 1
    log_level: str = "WARNING"

    def __post_init__(self):
        self._validate_config()

    def _validate_config(self):
        """Collect every problem before raising"""
        problems = []
        if isinstance(self.grid_n, bool) or not isinstance(self.grid_n, int) or self.grid_n < MIN_GRID_N:
            problems.append(f"grid_n={self.grid_n!r} must be an integer >= {MIN_GRID_N}")
        if isinstance(self.workers, bool) or not isinstance(self.workers, int) or self.workers < 1:
            problems.append(f"workers={self.workers!r} must be a positive integer")
        if str(self.log_level).upper() not in LOG_LEVELS:
            problems.append(f"log_level={self.log_level!r} must be one of {LOG_LEVELS}")
        if self.scenario.delays is not None and self.scenario.delays != (self.params.tau, self.params.xi):
            problems.append(
                f"scenario {self.scenario.value} needs (tau, xi)={self.scenario.delays}, "
                f"got ({self.params.tau}, {self.params.xi})"
            )
        if problems:
            raise ConfigError(f"Invalid run configuration: {problems}", key=problems[0].split("=")[0])

    @property
    def case_label(self) -> str:
        return self.scenario.value

    def with_scenario(self, scenario: Scenario) -> "RunConfig":
        if scenario.delays is None:
            return replace(self, scenario=scenario)
        tau, xi = scenario.delays
        params = replace(self.params, tau=tau, xi=xi)
        return replace(self, params=params, scenario=scenario)

    def with_params(self, **values: float) -> "RunConfig":
        """Override parameters; leaves the preset label when delays change"""
        params = self.params
        for key, value in values.items():
            params = params.with_value(key, value)
        scenario = self.scenario
        if scenario.delays is not None and scenario.delays != (params.tau, params.xi):
            scenario = Scenario.CUSTOM
        return replace(self, params=params, scenario=scenario)

    @classmethod
    def load(
        cls,
        config_path: str | Path | None = None,
        case: str | int | None = None,
        param_overrides: Mapping[str, float] | None = None,
        out_dir: str | Path | None = None,
        grid_n: int | None = None,
        workers: int | None = None,
        log_level: str | None = None,
        environ: Mapping[str, str] | None = None,
    ) -> "RunConfig":
        """
        Build a configuration from file, environment and flags.

        Raises:
            ConfigError: unreadable or malformed JSON, unknown keys, bad values
        """
        if environ is None:
            load_dotenv()
            environ = os.environ
        env = _read_environment(environ)

        params = ModelParams()
        path = config_path or env.get("config")
        if path:
            params = _read_params(Path(path))

        config = cls(params=params)
        settings: dict[str, Any] = {}
        for key in ("out_dir", "grid_n", "workers", "log_level"):
            if key in env:
                settings[key] = env[key]
        flags = {"out_dir": out_dir, "grid_n": grid_n, "workers": workers, "log_level": log_level}
        settings.update({key: value for key, value in flags.items() if value is not None})
        if "out_dir" in settings:
            settings["out_dir"] = Path(settings["out_dir"])
        if "log_level" in settings:
            settings["log_level"] = str(settings["log_level"]).upper()
        config = replace(config, **settings)

        if case is not None:
            config = config.with_scenario(Scenario.from_flag(case))
        if param_overrides:
            config = config.with_params(**param_overrides)
        logger.debug(f"🔍 Run configuration: {config}")
        return config


def _read_params(path: Path) -> ModelParams:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}", key="config") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {path}: {e}", key="config") from None
    if not isinstance(document, dict):
        raise ConfigError(f"Config {path} must hold a JSON object", key="config")
    return ModelParams.from_dict(document)


def _read_environment(environ: Mapping[str, str]) -> dict[str, Any]:
    found: dict[str, Any] = {}
    problems = []
    for key, cast in (("config", str), ("out_dir", str), ("grid_n", int), ("workers", int), ("log_level", str)):
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is None or raw == "":
            continue
        try:
            found[key] = cast(raw)
        except ValueError:
            problems.append(f"{ENV_PREFIX}{key.upper()}={raw!r}")
    if problems:
        raise ConfigError(f"Invalid environment overrides: {problems}", key=problems[0].split("=")[0])
    return found
