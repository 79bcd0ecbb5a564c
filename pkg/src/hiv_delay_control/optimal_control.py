"""
Optimal treatment with state and control delays

Minimizes J(c) = integral over [0, t_f] of V(t) + w c(t) subject to the
controlled delayed model. Two solvers are provided:

- solve_iop: the induced optimization problem, where the bang-bang control
  is parametrized by its single switching time t_s;
- solve_grid: the control discretized on the integration grid and improved
  by spectral projected gradient steps, with gradients from the adjoint pass.

The adjoint pass is the exact transpose of the node-level Heun scheme (method
of steps run backwards), so the advanced terms H_zeta[t + tau], H_eta[t + tau]
and H_omega[t + xi] are accumulated into nodes that have already been
visited. Its costates vanish at t_f and feed the switching function, which is
used to certify the minimum principle rather than to drive the IOP solver.
For a bang-bang switch kept between nodes, the sub-grid correction of the
bent steps is not transposed; there the costates are those of the node
values alone, which is all the switching-function check needs.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from .dde_integrator import (
    DEFAULT_NODES,
    BangBang,
    ControlSchedule,
    GridControl,
    Trajectory,
    default_step,
    integrate,
    steps_in,
    trapezoid_weights,
)
from .errors import ConfigError, GridMismatch, NoBracket, NotConverged
from .model_core import InitialData, ModelParams, State, field_name, make_field

logger = logging.getLogger(__name__)

SCAN_POINTS = 26
IOP_XATOL = 1e-4
SENSITIVITY_XATOL = 1e-7
SENSITIVITY_BRACKET = 1.0
SECOND_DERIVATIVE_DELTAS = (0.05, 0.025)
SINGULAR_TOL = 1e-6
SINGULAR_MIN_NODES = 5

# spectral projected gradient
NONMONOTONE_MEMORY = 10
ARMIJO = 1e-4
ALPHA_MIN, ALPHA_MAX = 1e-10, 1e10

SENSITIVITY_COLUMNS = ("dt_s/dp", "dJ/dp", "dZ(t_f)/dp", "dI(t_f)/dp", "dV(t_f)/dp")


# {{{ hamiltonian


def _make_transpose(params: ModelParams):
    """
    Transposed Jacobian of the controlled field.

    Given a point (x, delayed Z, delayed V, omega) and a multiplier mu,
    returns mu^T dF/dx (4 values), mu^T dF/d(zeta, eta) and mu^T dF/domega.
    These are the costate parts of H_x, H_zeta, H_eta and H_omega.
    """
    m, r, u, s, k, v, a, n = params.m, params.r, params.u, params.s, params.k, params.v, params.a, params.n

    def transpose(Z, I, V, T, Zd, Vd, omega, mZ, mI, mV, mT):  # noqa: E741
        free = 1.0 - omega
        return (
            -mZ * (m + free * r * V),
            -mI * (u + s * T) + mV * k + mT * a * T,
            -mZ * free * r * Z - mV * v,
            -mI * s * I + mT * (a * I - n),
            mI * free * r * Vd,
            mI * free * r * Zd,
            mZ * r * V * Z - mI * r * Vd * Zd,
        )

    return transpose


def hamiltonian_partials(
    params: ModelParams,
    state: State,
    delayed_Z: float,
    delayed_V: float,
    omega: float,
    costate: tuple[float, float, float, float],
) -> dict[str, float]:
    """Partial derivatives of H = V + w c + lambda^T F at one instant"""
    H_Z, H_I, H_V, H_T, H_zeta, H_eta, H_omega = _make_transpose(params)(
        *state, delayed_Z, delayed_V, omega, *costate
    )
    return {
        "H_Z": H_Z,
        "H_I": H_I,
        "H_V": 1.0 + H_V,
        "H_T": H_T,
        "H_zeta": H_zeta,
        "H_eta": H_eta,
        "H_c": params.w,
        "H_omega": H_omega,
    }


# }}}


# {{{ cost and adjoint


def _check_control_grid(traj: Trajectory, control: ControlSchedule):
    if isinstance(control, GridControl) and (
        control.n_nodes != traj.n_nodes or abs(control.step - traj.step) > 1e-12
    ):
        raise GridMismatch(
            f"Control has {control.n_nodes} nodes, trajectory has {traj.n_nodes}"
        )


def cost(traj: Trajectory, control: ControlSchedule, w: float) -> float:
    """Trapezoidal J = integral of V + w c over the trajectory horizon"""
    _check_control_grid(traj, control)
    if traj.n_nodes == 1:
        return 0.0
    running = float(np.dot(trapezoid_weights(traj.n_nodes, traj.step), traj.column("V")))
    return running + w * control.integral(traj.t_end, traj.step, traj.switch_refined)


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    """Costates on the trajectory grid and the exact gradient of J in c"""

    step: float
    costates: np.ndarray  # (nodes, 4): lambda_Z, lambda_I, lambda_V, lambda_T
    control_gradient: np.ndarray  # dJ/dc_j at each node

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.costates.shape[0])

    @property
    def terminal(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.costates[-1])


def integrate_adjoint(
    params: ModelParams, traj: Trajectory, control: ControlSchedule
) -> AdjointTrajectory:
    """
    Backward pass of the node-level forward scheme from the zero terminal
    condition.

    The costate at node j is the sensitivity of the cost accrued after t_j
    to the state at t_j; it is exactly zero at t_f.
    """
    _check_control_grid(traj, control)
    if abs(traj.tau - params.tau) > 1e-12:
        raise GridMismatch(f"Trajectory computed with tau={traj.tau}, params have {params.tau}")
    h = traj.step
    N = traj.n_nodes - 1
    d = steps_in(params.tau, h, "tau")
    e = steps_in(params.xi, h, "xi")
    start, end, _ = control.stage_values(N, e, h, traj.switch_refined)

    field_fn = make_field(params)
    transpose = _make_transpose(params)
    hist = (traj.history.Z_hist, traj.history.V_hist)
    Zs, Is, Vs, Ts = (traj.states[:, c].tolist() for c in range(4))

    running = trapezoid_weights(N + 1, h)
    bZ = [0.0] * (N + 1)
    bI = [0.0] * (N + 1)
    bV = running.tolist()
    bT = [0.0] * (N + 1)
    grad_start = [0.0] * max(N, 0)
    grad_end = [0.0] * max(N, 0)
    half = 0.5 * h

    for i in range(N - 1, -1, -1):
        Z, I, V, T = Zs[i], Is[i], Vs[i], Ts[i]  # noqa: E741
        j = i - d
        if d == 0:
            Zd, Vd = Z, V
        elif j >= 0:
            Zd, Vd = Zs[j], Vs[j]
        else:
            Zd, Vd = hist
        f = field_fn(Z, I, V, T, Zd, Vd, start[i])
        pZ, pI, pV, pT = Z + h * f[0], I + h * f[1], V + h * f[2], T + h * f[3]
        j1 = j + 1
        if d == 0:
            Pd = (pZ, pV)
        elif j1 >= 0:
            Pd = (Zs[j1], Vs[j1])
        else:
            Pd = hist

        yZ, yI, yV, yT = bZ[i + 1], bI[i + 1], bV[i + 1], bT[i + 1]
        gZ, gI, gV, gT = half * yZ, half * yI, half * yV, half * yT

        # end stage g = F(p, delayed, omega_end)
        qZ, qI, qV, qT, qZd, qVd, q_om = transpose(
            pZ, pI, pV, pT, Pd[0], Pd[1], end[i], gZ, gI, gV, gT
        )
        grad_end[i] = q_om
        if d == 0:
            qZ += qZd
            qV += qVd
        elif j1 >= 0:
            bZ[j1] += qZd
            bV[j1] += qVd

        # predictor p = y_i + h f
        fZ, fI, fV, fT = gZ + h * qZ, gI + h * qI, gV + h * qV, gT + h * qT
        bZ[i] += yZ + qZ
        bI[i] += yI + qI
        bV[i] += yV + qV
        bT[i] += yT + qT

        # start stage f = F(y_i, delayed, omega_start)
        xZ, xI, xV, xT, xZd, xVd, x_om = transpose(
            Z, I, V, T, Zd, Vd, start[i], fZ, fI, fV, fT
        )
        grad_start[i] = x_om
        bZ[i] += xZ
        bI[i] += xI
        bV[i] += xV
        bT[i] += xT
        if d == 0:
            bZ[i] += xZd
            bV[i] += xVd
        elif j >= 0:
            bZ[j] += xZd
            bV[j] += xVd

    gradient = params.w * control.quadrature_weights(N + 1, h)
    for i in range(N):
        if 0 <= i - e <= N:
            gradient[i - e] += grad_start[i]
        if 0 <= i + 1 - e <= N:
            gradient[i + 1 - e] += grad_end[i]

    costates = np.column_stack([bZ, bI, np.array(bV) - running, bT])
    return AdjointTrajectory(step=h, costates=costates, control_gradient=gradient)


# }}}


# {{{ switching function and minimum principle


@dataclass(frozen=True, eq=False)
class SwitchingFunction:
    step: float
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.values.size)

    def to_frame(self, control: ControlSchedule) -> pd.DataFrame:
        return pd.DataFrame(
            {"t": self.times, "phi": self.values, "c": control.node_values(self.times)}
        )


def switching_function(
    params: ModelParams,
    traj: Trajectory,
    adjoint: AdjointTrajectory,
    control: ControlSchedule,
) -> SwitchingFunction:
    """
    phi(t) = w + r [lambda_Z V Z - lambda_I V(. - tau) Z(. - tau)] at t + xi

    for t <= t_f - xi, and phi = w on the last xi days.
    """
    _check_control_grid(traj, control)
    if adjoint.costates.shape[0] != traj.n_nodes or abs(adjoint.step - traj.step) > 1e-12:
        raise GridMismatch(
            f"Adjoint has {adjoint.costates.shape[0]} nodes, trajectory has {traj.n_nodes}"
        )
    h = traj.step
    N = traj.n_nodes - 1
    d = steps_in(params.tau, h, "tau")
    e = steps_in(params.xi, h, "xi")

    Z, V = traj.column("Z"), traj.column("V")
    lam_Z, lam_I = adjoint.costates[:, 0], adjoint.costates[:, 1]
    Zd = np.concatenate([np.full(d, traj.history.Z_hist), Z])[: N + 1]
    Vd = np.concatenate([np.full(d, traj.history.V_hist), V])[: N + 1]
    advanced = params.r * (lam_Z * V * Z - lam_I * Vd * Zd)

    phi = np.full(N + 1, params.w)
    shifted = advanced[e:]
    phi[: shifted.size] += shifted
    return SwitchingFunction(step=h, values=phi)


@dataclass(frozen=True)
class PmpReport:
    violations: int
    strict_bang_bang: bool
    min_abs_phi: float | None  # outside the one-node band around t_s
    phi_slope: float | None  # finite-difference phi'(t_s)
    t_s: float
    singular_arcs: tuple[tuple[float, float], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "violations": self.violations,
            "strict_bang_bang": self.strict_bang_bang,
            "min_abs_phi": self.min_abs_phi,
            "phi_slope": self.phi_slope,
            "t_s": self.t_s,
            "singular_arcs": [list(arc) for arc in self.singular_arcs],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PmpReport":
        return cls(
            violations=int(data["violations"]),
            strict_bang_bang=bool(data["strict_bang_bang"]),
            min_abs_phi=data.get("min_abs_phi"),
            phi_slope=data.get("phi_slope"),
            t_s=float(data["t_s"]),
            singular_arcs=tuple(tuple(arc) for arc in data.get("singular_arcs", [])),
        )


def _switch_of(control: ControlSchedule, t_end: float) -> float:
    if isinstance(control, BangBang):
        return min(control.t_s, t_end)
    if isinstance(control, GridControl):
        return control.switching_time()
    raise ConfigError(f"Unsupported control schedule {type(control).__name__}")


def _singular_arcs(times: np.ndarray, values: np.ndarray) -> tuple[tuple[float, float], ...]:
    arcs = []
    small = np.abs(values) < SINGULAR_TOL
    run_start = None
    for idx, flag in enumerate(np.append(small, False)):
        if flag and run_start is None:
            run_start = idx
        elif not flag and run_start is not None:
            if idx - run_start >= SINGULAR_MIN_NODES:
                arcs.append((float(times[run_start]), float(times[idx - 1])))
            run_start = None
    return tuple(arcs)


def verify_pmp(control: ControlSchedule, phi: SwitchingFunction) -> PmpReport:
    """Check the control law c = 1 where phi < 0, c = 0 where phi > 0"""
    times, values, h = phi.times, phi.values, phi.step
    t_s = _switch_of(control, float(times[-1]))
    c = control.node_values(times)

    band = np.abs(times - t_s) <= h * (1 + 1e-9)
    on = c >= 1.0 - 1e-6
    off = c <= 1e-6
    middle = ~on & ~off
    wrong = (on & (values > 0)) | (off & (values < 0)) | (middle & (np.abs(values) > SINGULAR_TOL))
    violations = int(np.count_nonzero(wrong & ~band))

    before = (times < t_s) & ~band
    after = (times > t_s) & ~band
    strict = bool(np.all(values[before] < 0) and np.all(values[after] > 0))
    node = int(round(t_s / h))
    slope = None
    if 1 <= node <= values.size - 2:
        slope = float((values[node + 1] - values[node - 1]) / (2 * h))
    strict = strict and slope is not None and slope > 0

    away = values[~band]
    arcs = _singular_arcs(times, values)
    if arcs:
        logger.warning(f"⚠️  Possible singular arcs where |phi| < {SINGULAR_TOL}: {arcs}")
    return PmpReport(
        violations=violations,
        strict_bang_bang=strict,
        min_abs_phi=float(np.min(np.abs(away))) if away.size else None,
        phi_slope=slope,
        t_s=float(t_s),
        singular_arcs=arcs,
    )


# }}}


# {{{ optimum


@dataclass(frozen=True)
class Optimum:
    t_s: float
    J: float
    terminal: State
    case: str = "custom"
    tau: float = 0.0
    xi: float = 0.0
    w: float = 1.0
    method: str = "iop"
    status: str = "optimal"
    J_second: float | None = None
    pmp: PmpReport | None = None
    iterations: int = 0
    phi: SwitchingFunction | None = field(default=None, compare=False, repr=False)
    control: ControlSchedule | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case": self.case,
            "tau": self.tau,
            "xi": self.xi,
            "w": self.w,
            "method": self.method,
            "status": self.status,
            "t_s": self.t_s,
            "J": self.J,
            "terminal": dict(self.terminal._asdict()),
            "J_second": self.J_second,
            "pmp": self.pmp.to_dict() if self.pmp is not None else None,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Optimum":
        pmp = data.get("pmp")
        return cls(
            t_s=float(data["t_s"]),
            J=float(data["J"]),
            terminal=State(**{key: float(value) for key, value in data["terminal"].items()}),
            case=str(data.get("case", "custom")),
            tau=float(data.get("tau", 0.0)),
            xi=float(data.get("xi", 0.0)),
            w=float(data.get("w", 1.0)),
            method=str(data.get("method", "iop")),
            status=str(data.get("status", "optimal")),
            J_second=data.get("J_second"),
            pmp=PmpReport.from_dict(pmp) if pmp is not None else None,
            iterations=int(data.get("iterations", 0)),
        )


def switching_cost(
    params: ModelParams, init: InitialData | None = None, step: float | None = None
) -> Callable[[float], float]:
    """J as a function of the bang-bang switching time"""
    init = init or InitialData()
    step = default_step(params) if step is None else step

    def objective(t_s: float) -> float:
        control = BangBang(t_s=min(max(float(t_s), 0.0), params.t_f), c_hist=init.c_hist)
        traj = integrate(params, init, control, step, refine_switch=True)
        return cost(traj, control, params.w)

    return objective


def _minimize_switch(
    objective: Callable[[float], float],
    t_f: float,
    xatol: float,
    bracket: tuple[float, float] | None,
    scan_points: int,
) -> tuple[float, bool]:
    """Returns (t_s, interior); bracket scan then bounded Brent refinement"""
    if bracket is not None:
        lo, hi = max(bracket[0], 0.0), min(bracket[1], t_f)
        result = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": xatol})
        edge = 10 * xatol
        if (result.x - lo > edge or lo == 0.0) and (hi - result.x > edge or hi == t_f):
            return float(result.x), True
        logger.info(f"🔍 Switch {result.x:.6g} at warm bracket edge, rescanning")

    grid = np.linspace(0.0, t_f, scan_points)
    values = [objective(t) for t in grid]
    best = int(np.argmin(values))
    if best == 0 or best == scan_points - 1:
        return float(grid[best]), False
    result = minimize_scalar(
        objective,
        bounds=(float(grid[best - 1]), float(grid[best + 1])),
        method="bounded",
        options={"xatol": xatol},
    )
    return float(result.x), True


def solve_iop(
    params: ModelParams,
    init: InitialData | None = None,
    step: float | None = None,
    xatol: float = IOP_XATOL,
    bracket: tuple[float, float] | None = None,
    scan_points: int = SCAN_POINTS,
    with_second_derivative: bool = False,
    case: str = "custom",
    strict: bool = False,
) -> Optimum:
    """
    Optimal single switching time of the bang-bang control.

    Raises:
        NoBracket: only with strict=True, when J(t_s) is monotone on [0, t_f];
            otherwise the boundary optimum is returned with status "no_bracket"
    """
    init = init or InitialData()
    step = default_step(params) if step is None else step
    objective = switching_cost(params, init, step)

    t_s, interior = _minimize_switch(objective, params.t_f, xatol, bracket, scan_points)
    status = "optimal"
    if not interior:
        message = f"J(t_s) has no interior minimum on [0, {params.t_f}], boundary t_s={t_s}"
        if strict:
            raise NoBracket(message)
        logger.warning(f"⚠️  {message}")
        status = "no_bracket"

    control = BangBang(t_s=t_s, c_hist=init.c_hist)
    traj = integrate(params, init, control, step, refine_switch=True)
    J = cost(traj, control, params.w)
    adjoint = integrate_adjoint(params, traj, control)
    phi = switching_function(params, traj, adjoint, control)
    pmp = verify_pmp(control, phi)
    J_second = second_derivative(params, t_s, init, step) if with_second_derivative and interior else None

    logger.info(f"✅ IOP ({case}, w={params.w}): t_s={t_s:.5f}, J={J:.5f}")
    return Optimum(
        t_s=t_s,
        J=J,
        terminal=traj.terminal,
        case=case,
        tau=params.tau,
        xi=params.xi,
        w=params.w,
        method="iop",
        status=status,
        J_second=J_second,
        pmp=pmp,
        phi=phi,
        control=control,
    )


def second_derivative(
    params: ModelParams,
    t_s_star: float,
    init: InitialData | None = None,
    step: float | None = None,
    deltas: tuple[float, float] = SECOND_DERIVATIVE_DELTAS,
    objective: Callable[[float], float] | None = None,
) -> float:
    """Central second difference of J(t_s), Richardson-extrapolated over two deltas"""
    objective = objective or switching_cost(params, init, step)
    center = objective(t_s_star)

    def central(delta: float) -> float:
        return (objective(t_s_star + delta) - 2.0 * center + objective(t_s_star - delta)) / delta**2

    coarse, fine = deltas
    ratio2 = (coarse / fine) ** 2
    return (ratio2 * central(fine) - central(coarse)) / (ratio2 - 1.0)


# }}}


# {{{ grid solver


def solve_grid(
    params: ModelParams,
    n_nodes: int = DEFAULT_NODES,
    init: InitialData | None = None,
    initial_control: np.ndarray | None = None,
    max_iter: int = 5000,
    tol: float = 1e-5,
    case: str = "custom",
    strict: bool = False,
) -> tuple[GridControl, Optimum]:
    """
    Control values on N + 1 nodes by spectral projected gradient descent.

    The gradient dJ/dc_j comes from integrate_adjoint and approaches
    phi(t_j) times the quadrature weight as the grid is refined. Iterates
    are projected onto the box [0, 1]; a nonmonotone Armijo search guards
    the Barzilai-Borwein steps.

    Raises:
        NotConverged: only with strict=True; otherwise the best iterate is
            returned with status "not_converged"
    """
    if n_nodes < 100:
        raise ConfigError(f"Grid size N={n_nodes} must be >= 100", key="grid_n")
    init = init or InitialData()
    step = params.t_f / n_nodes
    if initial_control is None:
        values = np.zeros(n_nodes + 1)
    else:
        values = np.clip(np.asarray(initial_control, dtype=float), 0.0, 1.0)

    def evaluate(trial: np.ndarray):
        control = GridControl(trial, step, init.c_hist)
        traj = integrate(params, init, control, step)
        return control, traj, cost(traj, control, params.w)

    def gradient_of(control, traj) -> np.ndarray:
        return integrate_adjoint(params, traj, control).control_gradient

    control, traj, J = evaluate(values)
    gradient = gradient_of(control, traj)
    alpha = 1.0 / max(float(np.abs(gradient).max()), 1e-12)
    history = [J]
    converged = False
    iterations = 0

    for iterations in range(max_iter + 1):
        if np.abs(np.clip(values - gradient, 0.0, 1.0) - values).max() < tol:
            converged = True
            break
        if iterations == max_iter:
            break
        direction = np.clip(values - alpha * gradient, 0.0, 1.0) - values
        slope = float(gradient @ direction)
        reference = max(history[-NONMONOTONE_MEMORY:])
        length = 1.0
        while True:
            trial = values + length * direction
            t_control, t_traj, t_J = evaluate(trial)
            if t_J <= reference + ARMIJO * length * slope or length < 1e-10:
                break
            length *= 0.5
        t_gradient = gradient_of(t_control, t_traj)

        s = trial - values
        y = t_gradient - gradient
        sy = float(s @ y)
        alpha = min(max(float(s @ s) / sy, ALPHA_MIN), ALPHA_MAX) if sy > 0 else ALPHA_MAX
        values, gradient, J, control, traj = trial, t_gradient, t_J, t_control, t_traj
        history.append(J)

    status = "optimal"
    if not converged:
        message = f"Projected gradient stopped after {iterations} iterations"
        if strict:
            raise NotConverged(message)
        logger.warning(f"⚠️  {message}, returning the last iterate")
        status = "not_converged"

    adjoint = integrate_adjoint(params, traj, control)
    phi = switching_function(params, traj, adjoint, control)
    logger.info(f"✅ Grid ({case}, w={params.w}, N={n_nodes}): J={J:.5f} after {iterations} iterations")
    optimum = Optimum(
        t_s=control.switching_time(),
        J=J,
        terminal=traj.terminal,
        case=case,
        tau=params.tau,
        xi=params.xi,
        w=params.w,
        method="grid",
        status=status,
        pmp=verify_pmp(control, phi),
        iterations=iterations,
        phi=phi,
        control=control,
    )
    return control, optimum


# }}}


# {{{ sensitivities


@dataclass(frozen=True, eq=False)
class SensitivityTable:
    frame: pd.DataFrame  # index: parameter, columns: SENSITIVITY_COLUMNS
    nominal: dict[str, float]
    t_s: float

    def row(self, parameter: str) -> dict[str, float]:
        return {key: float(value) for key, value in self.frame.loc[parameter].items()}

    def predict_switch(self, parameter: str, delta: float) -> float:
        """First-order t_s(p0 + delta) from the sensitivity derivative"""
        return self.t_s + float(self.frame.loc[parameter, "dt_s/dp"]) * delta

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, float_format="%.17g", lineterminator="\n")


def _quantities(
    params: ModelParams,
    init: InitialData,
    step: float,
    bracket: tuple[float, float] | None,
    fixed_control: ControlSchedule | None,
) -> tuple[float, float, float, float, float]:
    """(t_s, J, Z(t_f), I(t_f), V(t_f)) at the re-optimized switch"""
    if fixed_control is not None:
        control = fixed_control
        traj = integrate(params, init, control, step)
        t_s = _switch_of(control, traj.t_end)
    else:
        objective = switching_cost(params, init, step)
        t_s, interior = _minimize_switch(objective, params.t_f, SENSITIVITY_XATOL, bracket, SCAN_POINTS)
        if not interior:
            raise NoBracket(f"No interior switching time for perturbed parameters {params}")
        control = BangBang(t_s=t_s, c_hist=init.c_hist)
        traj = integrate(params, init, control, step, refine_switch=True)
    Z, I, V, _ = traj.terminal  # noqa: E741
    return t_s, cost(traj, control, params.w), Z, I, V


def _quantities_job(args) -> tuple[float, float, float, float, float]:
    return _quantities(*args)


def sensitivities(
    params: ModelParams,
    targets: Iterable[str] = ("w", "r", "v"),
    init: InitialData | None = None,
    step: float | None = None,
    rel_step: float = 1e-3,
    workers: int = 1,
    fixed_control: ControlSchedule | None = None,
) -> SensitivityTable:
    """
    Derivatives of t_s, J and the terminal state with respect to parameters.

    Each parameter p is perturbed by +-delta and +-delta/2 (delta = rel_step
    |p|); the switching time is re-optimized for every perturbation and the
    two central differences are Richardson-combined.
    """
    init = init or InitialData()
    step = default_step(params) if step is None else step
    targets = list(targets)
    for name in targets:
        if field_name(name) in ("t_f", "tau", "xi"):
            raise ConfigError(f"Sensitivity with respect to '{name}' is not supported", key=name)

    if fixed_control is None:
        nominal_ts, interior = _minimize_switch(
            switching_cost(params, init, step), params.t_f, SENSITIVITY_XATOL, None, SCAN_POINTS
        )
        if not interior:
            raise NoBracket("No interior switching time at the nominal parameters")
        bracket = (nominal_ts - SENSITIVITY_BRACKET, nominal_ts + SENSITIVITY_BRACKET)
    else:
        nominal_ts = _switch_of(fixed_control, params.t_f)
        bracket = None

    jobs = []
    deltas = {}
    for name in targets:
        p0 = params.get(name)
        delta = rel_step * abs(p0) if p0 != 0 else rel_step
        deltas[name] = delta
        for offset in (delta, -delta, 0.5 * delta, -0.5 * delta):
            jobs.append((params.with_value(name, p0 + offset), init, step, bracket, fixed_control))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_quantities_job, jobs))
    else:
        results = [_quantities_job(job) for job in jobs]

    rows = {}
    for index, name in enumerate(targets):
        plus, minus, half_plus, half_minus = (np.array(r) for r in results[4 * index : 4 * index + 4])
        delta = deltas[name]
        coarse = (plus - minus) / (2 * delta)
        fine = (half_plus - half_minus) / delta
        rows[name] = (4.0 * fine - coarse) / 3.0
        logger.info(f"🔍 Sensitivities for {name}: {dict(zip(SENSITIVITY_COLUMNS, rows[name].round(6)))}")

    frame = pd.DataFrame.from_dict(rows, orient="index", columns=list(SENSITIVITY_COLUMNS))
    frame.index.name = "parameter"
    return SensitivityTable(
        frame=frame,
        nominal={name: params.get(name) for name in targets},
        t_s=nominal_ts,
    )


# }}}
