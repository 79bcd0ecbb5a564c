"""
Delayed HIV-1 infection model with CTL response

Parameters, state vectors, the delayed vector fields (with and without the
reverse-transcriptase-inhibitor control), the reproduction thresholds and the
closed-form equilibria of the four-compartment model

    Z' = lambda - m Z - (1 - c(t - xi)) r V Z
    I' = (1 - c(t - xi)) r V(t - tau) Z(t - tau) - u I - s I T
    V' = k I - v V
    T' = a I T - n T
"""

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, NamedTuple

from .errors import ConfigError

# Threshold ties |R0 - 1| or |R0 - (1 + R1)| below this are boundary cases
BOUNDARY_TOL = 1e-12

RATE_FIELDS = ("lam", "m", "r", "u", "s", "k", "v", "a", "n")

# JSON document keys differ from attribute names only for lambda
_JSON_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_JSON = {value: key for key, value in _JSON_TO_FIELD.items()}


@dataclass(frozen=True)
class ModelParams:
    """Biological rates, horizon, delays and cost weight (standard defaults)"""

    lam: float = 5.0  # production of uninfected cells, day^-1 mm^-3
    m: float = 0.03  # uninfected-cell death, day^-1
    r: float = 0.0014  # infection rate, mm^3 virion^-1 day^-1
    u: float = 0.32  # infected-cell death, day^-1
    s: float = 0.05  # CTL killing, mm^3 day^-1
    k: float = 153.6  # virion production, day^-1
    v: float = 1.0  # virion clearance, day^-1
    a: float = 0.2  # CTL proliferation, mm^3 day^-1
    n: float = 0.3  # CTL decay, day^-1
    t_f: float = 50.0  # horizon, day
    tau: float = 0.5  # intracellular delay, day
    xi: float = 0.2  # pharmacological delay, day
    w: float = 1.0  # control weight in the cost

    def __post_init__(self):
        self._validate()

    def _validate(self):
        problems = []
        for name in RATE_FIELDS:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                problems.append(f"{_FIELD_TO_JSON.get(name, name)}={value!r} must be > 0")
        for name in ("tau", "xi"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                problems.append(f"{name}={value!r} must be >= 0")
        if not (isinstance(self.t_f, (int, float)) and math.isfinite(self.t_f)):
            problems.append(f"t_f={self.t_f!r} must be finite")
        elif not problems and (self.t_f <= self.tau or self.t_f <= self.xi):
            problems.append(f"t_f={self.t_f} must exceed tau={self.tau} and xi={self.xi}")
        if not (isinstance(self.w, (int, float)) and math.isfinite(self.w) and self.w >= 0):
            problems.append(f"w={self.w!r} must be a nonnegative weight")
        if problems:
            raise ConfigError(f"Invalid model parameters: {problems}", key=problems[0].split("=")[0])

    def with_value(self, key: str, value: float) -> "ModelParams":
        """Copy with one parameter replaced; accepts JSON or attribute names"""
        return replace(self, **{field_name(key): float(value)})

    def get(self, key: str) -> float:
        return float(getattr(self, field_name(key)))

    def to_dict(self) -> dict[str, float]:
        return {_FIELD_TO_JSON.get(key, key): value for key, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelParams":
        values: dict[str, float] = {}
        for key, raw in data.items():
            name = field_name(key)
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ConfigError(f"Parameter '{key}' must be a number, got {raw!r}", key=key)
            values[name] = float(raw)
        return cls(**values)

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelParams":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def field_name(key: str) -> str:
    """Map a JSON parameter key to the ModelParams attribute"""
    name = _JSON_TO_FIELD.get(key, key)
    if name not in {f.name for f in fields(ModelParams)}:
        raise ConfigError(f"Unknown model parameter '{key}'", key=key)
    return name


class State(NamedTuple):
    """Concentrations (mm^-3) of uninfected cells, infected cells, virus, CTLs"""

    Z: float
    I: float  # noqa: E741
    V: float
    T: float


@dataclass(frozen=True)
class InitialData:
    """Constant initial histories; defaults are the values used for every run"""

    I0: float = 3.0
    T0: float = 20.0
    Z_hist: float = 45.0
    V_hist: float = 75.0
    c_hist: float = 0.0

    def __post_init__(self):
        problems = [
            f"{name}={getattr(self, name)!r}"
            for name in ("I0", "T0", "Z_hist", "V_hist", "c_hist")
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) >= 0)
        ]
        if self.c_hist > 1:
            problems.append(f"c_hist={self.c_hist!r} exceeds 1")
        if problems:
            raise ConfigError(f"Invalid initial data: {problems}", key=problems[0].split("=")[0])

    @property
    def state0(self) -> State:
        return State(self.Z_hist, self.I0, self.V_hist, self.T0)

    @classmethod
    def at(cls, state: State, c_hist: float = 0.0) -> "InitialData":
        """Histories frozen at a given state, e.g. an equilibrium"""
        return cls(I0=state.I, T0=state.T, Z_hist=state.Z, V_hist=state.V, c_hist=c_hist)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "InitialData":
        known = {f.name for f in fields(cls)}
        for key, raw in data.items():
            if key not in known:
                raise ConfigError(f"Unknown initial-data key '{key}'", key=key)
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ConfigError(f"Initial-data '{key}' must be a number, got {raw!r}", key=key)
        return cls(**{key: float(raw) for key, raw in data.items()})


@dataclass(frozen=True)
class EquilibriumSet:
    R0: float
    R1: float
    E0: State
    E1: State | None = None
    E2: State | None = None
    e1_boundary: bool = False  # R0 == 1 within BOUNDARY_TOL
    e2_boundary: bool = False  # R0 == 1 + R1 within BOUNDARY_TOL

    def present(self) -> dict[str, State]:
        found = {"E0": self.E0}
        if self.E1 is not None:
            found["E1"] = self.E1
        if self.E2 is not None:
            found["E2"] = self.E2
        return found

    def to_dict(self, params: "ModelParams | None" = None) -> dict[str, Any]:
        """JSON document; with params each equilibrium also carries its residual"""
        points = {}
        for name, state in self.present().items():
            points[name] = dict(state._asdict())
            if params is not None:
                points[name]["residual"] = equilibrium_residual(state, params)
        return {
            "R0": self.R0,
            "R1": self.R1,
            "e1_boundary": self.e1_boundary,
            "e2_boundary": self.e2_boundary,
            "equilibria": points,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EquilibriumSet":
        points = {
            name: State(*(float(values[key]) for key in State._fields))
            for name, values in data["equilibria"].items()
        }
        return cls(
            R0=float(data["R0"]),
            R1=float(data["R1"]),
            E0=points["E0"],
            E1=points.get("E1"),
            E2=points.get("E2"),
            e1_boundary=bool(data.get("e1_boundary", False)),
            e2_boundary=bool(data.get("e2_boundary", False)),
        )


def reproduction_numbers(params: ModelParams) -> tuple[float, float]:
    """R0 = k lambda r / (m u v) and R1 = k n r / (m a v)"""
    p = params
    R0 = p.k * p.lam * p.r / (p.m * p.u * p.v)
    R1 = p.k * p.n * p.r / (p.m * p.a * p.v)
    return R0, R1


def equilibria(params: ModelParams) -> EquilibriumSet:
    """Closed-form equilibria; E1 needs R0 > 1, E2 needs R0 > 1 + R1"""
    p = params
    R0, R1 = reproduction_numbers(p)
    E0 = State(p.lam / p.m, 0.0, 0.0, 0.0)

    E1 = None
    if R0 - 1.0 > BOUNDARY_TOL:
        excess = p.k * p.lam * p.r - p.m * p.u * p.v
        E1 = State(
            p.u * p.v / (p.k * p.r),
            excess / (p.k * p.r * p.u),
            excess / (p.v * p.r * p.u),
            0.0,
        )

    E2 = None
    if R0 - (1.0 + R1) > BOUNDARY_TOL:
        E2 = State(
            p.a * p.lam * p.v / (p.a * p.m * p.v + p.k * p.n * p.r),
            p.n / p.a,
            p.k * p.n / (p.a * p.v),
            (p.a * p.k * p.lam * p.r - p.a * p.m * p.u * p.v - p.k * p.n * p.r * p.u)
            / (p.a * p.m * p.v * p.s + p.k * p.n * p.r * p.s),
        )

    return EquilibriumSet(
        R0=R0,
        R1=R1,
        E0=E0,
        E1=E1,
        E2=E2,
        e1_boundary=abs(R0 - 1.0) <= BOUNDARY_TOL,
        e2_boundary=abs(R0 - (1.0 + R1)) <= BOUNDARY_TOL,
    )


FieldFn = Callable[
    [float, float, float, float, float, float, float],
    tuple[float, float, float, float],
]


def make_field(params: ModelParams) -> FieldFn:
    """
    Controlled vector field on plain floats, closed over the rates.

    The returned callable takes (Z, I, V, T, Z(t - tau), V(t - tau),
    c(t - xi)) and is the inner kernel of the forward integrator.
    """
    lam, m, r, u, s = params.lam, params.m, params.r, params.u, params.s
    k, v, a, n = params.k, params.v, params.a, params.n

    def field(Z, I, V, T, Zd, Vd, omega):  # noqa: E741
        free = 1.0 - omega
        return (
            lam - m * Z - free * r * V * Z,
            free * r * Vd * Zd - u * I - s * I * T,
            k * I - v * V,
            a * I * T - n * T,
        )

    return field


def rhs_controlled(
    current: State,
    delayed_Z: float,
    delayed_V: float,
    c_delayed: float,
    params: ModelParams,
) -> State:
    """Right-hand side of the controlled system at one instant"""
    return State(*make_field(params)(*current, delayed_Z, delayed_V, c_delayed))


def rhs_uncontrolled(
    current: State, delayed_Z: float, delayed_V: float, params: ModelParams
) -> State:
    """Right-hand side of the untreated delayed system"""
    p = params
    Z, I, V, T = current  # noqa: E741
    return State(
        p.lam - p.m * Z - p.r * V * Z,
        p.r * delayed_V * delayed_Z - p.u * I - p.s * I * T,
        p.k * I - p.v * V,
        p.a * I * T - p.n * T,
    )


def equilibrium_residual(state: State, params: ModelParams) -> float:
    """Max-norm of the untreated field at a constant solution"""
    return max(abs(x) for x in rhs_controlled(state, state.Z, state.V, 0.0, params))
