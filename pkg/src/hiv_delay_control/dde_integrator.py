"""
Method-of-steps integration of the delayed model

Explicit trapezoidal (Heun) steps on a uniform grid. The step must divide
tau, xi and the horizon, so every delayed argument Z(t - tau), V(t - tau),
c(t - xi) at a grid node is read from an already computed node or from the
constant histories. Each step reads the delayed control at its own two
nodes, c(t_i - xi) and c(t_{i+1} - xi). A bang-bang switch between nodes is
resolved on a sub-grid in the steps where the control bends, so the cost
is a continuous function of t_s.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar

import numpy as np
import pandas as pd
from scipy.interpolate import CubicHermiteSpline

from .errors import ConfigError, GridMismatch, NonFiniteState, OutOfRange, StepIncompatible
from .model_core import InitialData, ModelParams, State, make_field

logger = logging.getLogger(__name__)

DEFAULT_NODES = 2500
DIVISIBILITY_TOL = 1e-12
SWITCH_SUBSTEPS = 10
COLUMNS = ("Z", "I", "V", "T")


def steps_in(span: float, step: float, name: str) -> int:
    """Number of steps covering span; raises unless step divides it"""
    if not step > 0:
        raise StepIncompatible(f"step={step} must be > 0")
    count = round(span / step)
    if abs(span - count * step) > DIVISIBILITY_TOL * max(1.0, abs(span)):
        raise StepIncompatible(f"step={step} does not divide {name}={span}")
    return int(count)


def default_step(params: ModelParams) -> float:
    return params.t_f / DEFAULT_NODES


# {{{ control schedules


class ControlSchedule(ABC):
    """Treatment efficiency c(t) in [0, 1] on [0, t_f], constant c_hist before 0"""

    c_hist: float

    @abstractmethod
    def value(self, t: float) -> float:
        """c(t); returns c_hist for t < 0"""

    @abstractmethod
    def stage_values(
        self, n_steps: int, delay_steps: int, step: float, refine: bool
    ) -> tuple[list[float], list[float], frozenset[int]]:
        """
        Delayed control c(t - xi) seen by the two Heun stages of each step.

        Step i reads node i - delay_steps at its start stage and node
        i + 1 - delay_steps at its end stage. Returns both lists and the steps
        in which the realized control bends between the nodes; those are
        corrected on a sub-grid by `integrate`.
        """

    def realized(self, x: float, step: float, refine: bool) -> float:
        """c at x steps after 0, as the integration scheme sees it"""
        return self.value(x * step)

    @abstractmethod
    def integral(self, t_end: float, step: float, refined: bool) -> float:
        """Quadrature of c over [0, t_end] matching the integration scheme"""

    def quadrature_weights(self, n_nodes: int, step: float) -> np.ndarray:
        """Weights q_j with integral = sum q_j c_j over the grid nodes"""
        return trapezoid_weights(n_nodes, step)

    def node_values(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.value(float(t)) for t in times])


def trapezoid_weights(n_nodes: int, step: float) -> np.ndarray:
    weights = np.full(n_nodes, step)
    weights[0] = weights[-1] = 0.5 * step
    if n_nodes == 1:
        weights[0] = 0.0
    return weights


@dataclass(frozen=True)
class BangBang(ControlSchedule):
    """
    Full treatment on [0, t_s), none on [t_s, t_f].

    On a grid of step h the switch is realized the way the trapezoidal
    transcription realizes it: c = 1 up to t_s - h, linear down to 0 at t_s,
    and linear from c_hist to c(0) over [-h, 0]. With t_s on a node the node
    values are exactly those of a GridControl with its first off node at t_s.
    """

    t_s: float
    c_hist: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.t_s) or self.t_s < 0:
            raise ConfigError(f"Switching time t_s={self.t_s!r} must be >= 0", key="t_s")
        if not 0.0 <= self.c_hist <= 1.0:
            raise ConfigError(f"c_hist={self.c_hist!r} outside [0, 1]", key="c_hist")

    def value(self, t: float) -> float:
        if t < 0:
            return self.c_hist
        return 1.0 if t < self.t_s else 0.0

    def position(self, step: float, refine: bool) -> float:
        """Switch position in steps, snapped to the nearest node unless refined"""
        position = self.t_s / step
        nearest = round(position)
        if not refine or abs(position - nearest) < 1e-9:
            return float(nearest)
        return position

    def _ramp(self, x: float, position: float) -> float:
        if x >= 0:
            return min(max(position - x, 0.0), 1.0)
        if x <= -1:
            return self.c_hist
        return self.c_hist + (x + 1.0) * (min(position, 1.0) - self.c_hist)

    def realized(self, x, step, refine):
        return self._ramp(x, self.position(step, refine))

    def stage_values(self, n_steps, delay_steps, step, refine):
        position = self.position(step, refine)
        nodes = [self._ramp(j - delay_steps, position) for j in range(n_steps + 1)]
        bends: frozenset[int] = frozenset()
        if position != round(position):
            # kinks at position - 1 and position
            cells = (math.floor(position) - 1, math.floor(position))
            bends = frozenset(
                k + delay_steps for k in cells if k >= 0 and k + delay_steps < n_steps
            )
        return nodes[:-1], nodes[1:], bends

    def integral(self, t_end, step, refined):
        """Exact integral of the realized schedule over [0, t_end]"""
        t_s = self.position(step, refined) * step
        ramp_start = max(t_s - step, 0.0)
        full = min(t_end, ramp_start)
        top = min(t_s, t_end)
        if top <= ramp_start:
            return full
        return full + ((t_s - ramp_start) ** 2 - (t_s - top) ** 2) / (2 * step)


@dataclass(frozen=True, eq=False)
class GridControl(ControlSchedule):
    """Control values on the trajectory nodes, linear in between"""

    values: np.ndarray
    step: float
    c_hist: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ConfigError("Grid control needs a one-dimensional array of values", key="values")
        if np.any(~np.isfinite(values)) or values.min() < -1e-12 or values.max() > 1 + 1e-12:
            raise ConfigError("Grid control values must lie in [0, 1]", key="values")
        object.__setattr__(self, "values", np.clip(values, 0.0, 1.0))

    @property
    def n_nodes(self) -> int:
        return int(self.values.size)

    def value(self, t: float) -> float:
        if t < 0:
            return self.c_hist
        grid = np.arange(self.n_nodes) * self.step
        return float(np.interp(t, grid, self.values))

    def node_values(self, times: np.ndarray) -> np.ndarray:
        if times.size == self.n_nodes:
            return self.values.copy()
        return super().node_values(times)

    def _at(self, j: int) -> float:
        return self.c_hist if j < 0 else float(self.values[j])

    def stage_values(self, n_steps, delay_steps, step, refine):
        if n_steps + 1 > self.n_nodes or abs(step - self.step) > 1e-12 * max(1.0, step):
            raise GridMismatch(
                f"Grid control has {self.n_nodes} nodes at step {self.step}, "
                f"integration needs {n_steps + 1} at step {step}"
            )
        start = [self._at(i - delay_steps) for i in range(n_steps)]
        end = [self._at(i + 1 - delay_steps) for i in range(n_steps)]
        return start, end, frozenset()

    def integral(self, t_end, step, refined):
        count = steps_in(t_end, step, "horizon") + 1
        return float(np.dot(self.quadrature_weights(count, step), self.values[:count]))

    def switching_time(self) -> float:
        """Left-Riemann mass of c; the first off node for a pure bang-bang grid"""
        return float(self.step * self.values[:-1].sum())


def uncontrolled(init: InitialData | None = None) -> BangBang:
    """c = 0 on [0, t_f] (a bang-bang switch at 0)"""
    return BangBang(t_s=0.0, c_hist=(init or InitialData()).c_hist)


# }}}


# {{{ trajectory


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution samples on t0 + i * step, plus histories for t < t0"""

    step: float
    states: np.ndarray  # (nodes, 4): Z, I, V, T
    history: InitialData
    tau: float
    derivatives: np.ndarray | None = None
    t0: float = 0.0
    switch_refined: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return int(self.states.shape[0])

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.n_nodes)

    @property
    def t_end(self) -> float:
        return self.t0 + self.step * (self.n_nodes - 1)

    @property
    def terminal(self) -> State:
        return State(*(float(x) for x in self.states[-1]))

    def column(self, name: str) -> np.ndarray:
        return self.states[:, COLUMNS.index(name)]

    @cached_property
    def _spline(self) -> CubicHermiteSpline | None:
        if self.derivatives is None or self.n_nodes < 2:
            return None
        return CubicHermiteSpline(self.times, self.states, self.derivatives, axis=0)

    def sample(self, t: float) -> State:
        """State at t; exact on nodes, Hermite in between, history before t0"""
        slack = 1e-12 * max(1.0, abs(t))
        if t < self.t0 - self.tau - slack or t > self.t_end + slack:
            raise OutOfRange(f"t={t} outside [{self.t0 - self.tau}, {self.t_end}]")
        if t < self.t0:
            h = self.history
            return State(h.Z_hist, h.I0, h.V_hist, h.T0)
        position = (t - self.t0) / self.step
        node = round(position)
        if abs(position - node) < 1e-9 or self.n_nodes == 1:
            return State(*(float(x) for x in self.states[min(node, self.n_nodes - 1)]))
        if self._spline is not None:
            return State(*(float(x) for x in self._spline(t)))
        return State(*(float(np.interp(t, self.times, self.states[:, c])) for c in range(4)))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.states, columns=list(COLUMNS))
        frame.insert(0, "t", self.times)
        return frame


def sample(traj: Trajectory, t: float) -> State:
    return traj.sample(t)


# }}}


# {{{ integration


def _hermite(s, y0, y1, f0, f1, h):
    """Cubic Hermite value at fraction s of an interval of length h"""
    s2 = s * s
    s3 = s2 * s
    return (
        (2 * s3 - 3 * s2 + 1) * y0
        + (s3 - 2 * s2 + s) * h * f0
        + (-2 * s3 + 3 * s2) * y1
        + (s3 - s2) * h * f1
    )


def _substeps(field_fn, h, y, i, d, Zs, Vs, derivs, hist, omega_of):
    """Step i on a sub-grid; omega_of maps the fraction of the step to c"""
    j = i - d

    def delayed(s, Z, V):
        if d == 0:
            return Z, V
        if j < 0:
            return hist
        return (
            _hermite(s, Zs[j], Zs[j + 1], derivs[j][0], derivs[j + 1][0], h),
            _hermite(s, Vs[j], Vs[j + 1], derivs[j][2], derivs[j + 1][2], h),
        )

    Z, I, V, T = y  # noqa: E741
    sub = h / SWITCH_SUBSTEPS
    half = 0.5 * sub
    for n in range(SWITCH_SUBSTEPS):
        s0, s1 = n / SWITCH_SUBSTEPS, (n + 1) / SWITCH_SUBSTEPS
        Zd, Vd = delayed(s0, Z, V)
        f = field_fn(Z, I, V, T, Zd, Vd, omega_of(s0))
        pZ, pI, pV, pT = Z + sub * f[0], I + sub * f[1], V + sub * f[2], T + sub * f[3]
        Zd, Vd = delayed(s1, pZ, pV)
        g = field_fn(pZ, pI, pV, pT, Zd, Vd, omega_of(s1))
        Z, I, V, T = (  # noqa: E741
            Z + half * (f[0] + g[0]),
            I + half * (f[1] + g[1]),
            V + half * (f[2] + g[2]),
            T + half * (f[3] + g[3]),
        )
    return Z, I, V, T


def integrate(
    params: ModelParams,
    init: InitialData | None = None,
    control: ControlSchedule | None = None,
    step: float | None = None,
    horizon: float | None = None,
    refine_switch: bool = False,
) -> Trajectory:
    """
    Solve the controlled delayed system on [0, horizon].

    Args:
        params: model parameters (tau and xi are taken from here)
        init: constant histories, defaults to the standard initial data
        control: treatment schedule, defaults to no treatment
        step: uniform step, defaults to t_f / 2500
        horizon: final time, defaults to t_f
        refine_switch: keep a bang-bang switch between nodes (sub-grid
            correction of the bent steps) instead of snapping it to the
            nearest node

    Raises:
        StepIncompatible: step does not divide tau, xi or the horizon
        NonFiniteState: the solution blew up
    """
    init = init or InitialData()
    control = control or uncontrolled(init)
    step = default_step(params) if step is None else float(step)
    horizon = params.t_f if horizon is None else float(horizon)

    n_steps = steps_in(horizon, step, "horizon")
    d = steps_in(params.tau, step, "tau")
    e = steps_in(params.xi, step, "xi")
    start, end, bends = control.stage_values(n_steps, e, step, refine_switch)

    field_fn = make_field(params)
    hist = (init.Z_hist, init.V_hist)
    h = step
    half = 0.5 * h

    Zs, Is, Vs, Ts = [init.Z_hist], [init.I0], [init.V_hist], [init.T0]
    derivs: list[tuple[float, float, float, float]] = []

    for i in range(n_steps):
        Z, I, V, T = Zs[i], Is[i], Vs[i], Ts[i]  # noqa: E741
        j = i - d
        if d == 0:
            Zd, Vd = Z, V
        elif j >= 0:
            Zd, Vd = Zs[j], Vs[j]
        else:
            Zd, Vd = hist
        f = field_fn(Z, I, V, T, Zd, Vd, start[i])
        derivs.append(f)

        pZ, pI, pV, pT = Z + h * f[0], I + h * f[1], V + h * f[2], T + h * f[3]
        j1 = j + 1
        if d == 0:
            Zd, Vd = pZ, pV
        elif j1 >= 0:
            Zd, Vd = Zs[j1], Vs[j1]
        else:
            Zd, Vd = hist
        g = field_fn(pZ, pI, pV, pT, Zd, Vd, end[i])
        nZ = Z + half * (f[0] + g[0])
        nI = I + half * (f[1] + g[1])
        nV = V + half * (f[2] + g[2])
        nT = T + half * (f[3] + g[3])

        if i in bends:
            # the correction vanishes when c is linear over the step
            y = (Z, I, V, T)
            x0, c0, c1 = i - e, start[i], end[i]
            bent = _substeps(
                field_fn, h, y, i, d, Zs, Vs, derivs, hist,
                lambda s: control.realized(x0 + s, step, refine_switch),
            )
            linear = _substeps(
                field_fn, h, y, i, d, Zs, Vs, derivs, hist, lambda s: c0 + s * (c1 - c0)
            )
            nZ += bent[0] - linear[0]
            nI += bent[1] - linear[1]
            nV += bent[2] - linear[2]
            nT += bent[3] - linear[3]

        if not (math.isfinite(nZ) and math.isfinite(nI) and math.isfinite(nV) and math.isfinite(nT)):
            t_fail = (i + 1) * h
            logger.error(f"❌ Non-finite state at t={t_fail:.6g}")
            raise NonFiniteState(f"State became non-finite at t={t_fail}", time=t_fail)
        Zs.append(nZ)
        Is.append(nI)
        Vs.append(nV)
        Ts.append(nT)

    # derivative at the last node, for dense sampling
    j = n_steps - d
    if d == 0:
        Zd, Vd = Zs[-1], Vs[-1]
    elif j >= 0:
        Zd, Vd = Zs[j], Vs[j]
    else:
        Zd, Vd = hist
    last_control = end[-1] if n_steps else control.value(-params.xi if params.xi > 0 else 0.0)
    derivs.append(field_fn(Zs[-1], Is[-1], Vs[-1], Ts[-1], Zd, Vd, last_control))

    return Trajectory(
        step=step,
        states=np.column_stack([Zs, Is, Vs, Ts]),
        history=init,
        tau=params.tau,
        derivatives=np.array(derivs),
        switch_refined=refine_switch,
        meta={"xi": params.xi, "delay_steps": d, "control_delay_steps": e},
    )


def first_local_maxima(
    traj: Trajectory, components: tuple[str, ...] = ("I", "V", "T")
) -> dict[str, tuple[float, float] | None]:
    """(time, value) of the first interior local maximum of each component"""
    found: dict[str, tuple[float, float] | None] = {}
    times = traj.times
    for name in components:
        x = traj.column(name)
        peaks = np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1
        found[name] = (float(times[peaks[0]]), float(x[peaks[0]])) if peaks.size else None
    return found


# }}}
