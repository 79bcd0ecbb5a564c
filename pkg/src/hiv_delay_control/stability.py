"""
Local stability of the untreated delayed model

Verdicts follow the threshold table in R0 and R1 and carry the numbers that
back them: Routh-Hurwitz coefficients of the characteristic polynomial at
tau = 0 and, for tau > 0, the polynomial (E0, E1) or modulus (E2) tests that
rule out roots crossing the imaginary axis. Roots of the quasi-polynomials
are never computed.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import EquilibriumAbsent
from .model_core import BOUNDARY_TOL, ModelParams, State, equilibria

logger = logging.getLogger(__name__)

CROSSING_W_MAX = 100.0
CROSSING_SAMPLES = 10_000

Evidence = dict[str, float | bool]


class Which(Enum):
    """Equilibria of the untreated model"""
    E0 = "E0"  # infection-free
    E1 = "E1"  # infected, no CTL response
    E2 = "E2"  # infected, with CTL response


class Verdict(Enum):
    STABLE = "locally_asymptotically_stable"
    UNSTABLE = "unstable"
    CRITICAL = "critical"


@dataclass(frozen=True)
class StabilityReport:
    """Verdict for one equilibrium and the scalars it rests on"""
    equilibrium: Which
    verdict: Verdict
    tau_independent: bool
    point: State
    evidence: Evidence = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "equilibrium": self.equilibrium.value,
            "verdict": self.verdict.value,
            "tau_independent": self.tau_independent,
            "point": dict(self.point._asdict()),
            "evidence": dict(self.evidence),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StabilityReport":
        return cls(
            equilibrium=Which(data["equilibrium"]),
            verdict=Verdict(data["verdict"]),
            tau_independent=bool(data["tau_independent"]),
            point=State(**{key: float(value) for key, value in data["point"].items()}),
            evidence=dict(data.get("evidence", {})),
        )


def _point(params: ModelParams, which: Which) -> State:
    found = equilibria(params)
    present = found.present()
    if which.value not in present:
        raise EquilibriumAbsent(
            f"{which.value} does not exist for R0={found.R0:.6g}, R1={found.R1:.6g}"
        )
    return present[which.value]


def _e1_coefficients(params: ModelParams, V_bar: float) -> tuple[float, float, float, float, float]:
    """A, B, C, D, E of P(y) - Q(y) e^(-tau y) with P = y^3 + A y^2 + B y + C, Q = D y + E"""
    p = params
    Vr = V_bar * p.r
    A = p.m + p.u + p.v + Vr
    B = Vr * p.u + Vr * p.v + p.m * p.u + p.m * p.v + p.u * p.v
    C = p.m * p.u * p.v + Vr * p.u * p.v
    D = p.u * p.v
    E = p.m * p.u * p.v
    return A, B, C, D, E


# {{{ linearization


def linearization(params: ModelParams, state: State) -> tuple[np.ndarray, np.ndarray]:
    """
    Jacobians of the untreated field at a constant solution.

    Returns (A1, A2): derivatives with respect to the current state and to
    the state delayed by tau, in the (Z, I, V, T) ordering.
    """
    p = params
    Z, I, V, T = state  # noqa: E741
    A1 = np.array(
        [
            [-p.m - p.r * V, 0.0, -p.r * Z, 0.0],
            [0.0, -p.u - p.s * T, 0.0, -p.s * I],
            [0.0, p.k, -p.v, 0.0],
            [0.0, p.a * T, 0.0, p.a * I - p.n],
        ]
    )
    A2 = np.zeros((4, 4))
    A2[1, 0] = p.r * V
    A2[1, 2] = p.r * Z
    return A1, A2


def characteristic_function(params: ModelParams, state: State, y: complex) -> complex:
    """det(y I - A1 - A2 exp(-tau y)) at a single complex point"""
    A1, A2 = linearization(params, state)
    matrix = y * np.eye(4) - A1 - A2 * np.exp(-params.tau * y)
    return complex(np.linalg.det(matrix))


# }}}


# {{{ evidence


def routh_hurwitz_tau0(params: ModelParams, which: Which) -> Evidence:
    """
    Routh-Hurwitz test of the characteristic polynomial at tau = 0.

    E0: y^2 + (u + v) y + uv - k lambda r / m, stable iff every coefficient
    is positive. E1: y^3 + A y^2 + (B - D) y + (C - E), stable iff A, C - E
    are positive and A (B - D) > C - E.

    Raises:
        EquilibriumAbsent: E1 requested with R0 <= 1
    """
    p = params
    if which is Which.E0:
        a3 = p.u * p.v - p.k * p.lam * p.r / p.m
        return {"a1": 1.0, "a2": p.u + p.v, "a3": a3, "stable": bool(p.u + p.v > 0 and a3 > 0)}
    if which is Which.E1:
        point = _point(params, Which.E1)
        A, B, C, D, E = _e1_coefficients(params, point.V)
        BminusD, CminusE = B - D, C - E
        hurwitz = A * BminusD - CminusE
        return {
            "A": A,
            "BminusD": BminusD,
            "CminusE": CminusE,
            "hurwitz_minor": hurwitz,
            "stable": bool(A > 0 and CminusE > 0 and hurwitz > 0),
        }
    raise EquilibriumAbsent(f"No Routh-Hurwitz test for {which.value}")


def imaginary_crossing_test(
    params: ModelParams,
    which: Which,
    w_max: float = CROSSING_W_MAX,
    samples: int = CROSSING_SAMPLES,
) -> Evidence:
    """
    Evidence that no root y = i w, w > 0, solves the characteristic equation.

    E0 and E1 reduce |P(i w)| = |Q(i w)| to a polynomial in w^2 and report
    its coefficients. E2 samples the gap between the two moduli on
    [0, w_max] and adds a tail bound that covers w > w_max.

    Raises:
        EquilibriumAbsent: the requested equilibrium does not exist
    """
    p = params
    if which is Which.E0:
        gain = p.k * p.lam * p.r / p.m
        b = p.u**2 + p.v**2
        c0 = (p.u * p.v) ** 2 - gain**2
        discriminant = b * b - 4.0 * c0
        w2 = 0.5 * (-b + math.sqrt(discriminant))
        return {
            "w4_coefficient_b": b,
            "w4_constant": c0,
            "discriminant": discriminant,
            "w2_root": w2,
            "no_crossing": bool(w2 < 0),
        }

    if which is Which.E1:
        point = _point(params, Which.E1)
        A, B, C, D, E = _e1_coefficients(params, point.V)
        A2minus2B = A * A - 2.0 * B
        B2minus2ACminusD2 = B * B - 2.0 * A * C - D * D
        C2minusE2 = C * C - E * E
        return {
            "A2minus2B": A2minus2B,
            "B2minus2ACminusD2": B2minus2ACminusD2,
            "C2minusE2": C2minusE2,
            "no_crossing": bool(A2minus2B > 0 and B2minus2ACminusD2 > 0 and C2minusE2 > 0),
        }

    Z, I, V, T = _point(params, Which.E2)  # noqa: E741
    w = np.linspace(0.0, w_max, samples)
    iw = 1j * w
    lhs = (
        np.abs(iw + p.m + V * p.r) ** 2
        * np.abs(p.v + iw) ** 2
        * np.abs(T * p.n * p.s + iw * (p.u + iw + T * p.s)) ** 2
    )
    rhs = np.abs(iw + p.m) ** 2 * p.v**2 * (Z * p.k * p.r * w / p.v) ** 2
    gap = lhs - rhs
    worst = int(np.argmin(gap))

    # For w >= W the modulus ratio is at least (W^2 - T n s)^2 / (Z k r)^2
    knee = T * p.n * p.s
    tail = (w_max**2 - knee) ** 2 / (Z * p.k * p.r) ** 2 if w_max**2 > knee else 0.0
    return {
        "modulus_gap_min": float(gap[worst]),
        "modulus_gap_argmin": float(w[worst]),
        "w_max": float(w_max),
        "tail_ratio_bound": float(tail),
        "no_crossing": bool(gap[worst] > 0 and tail > 1.0),
    }


# }}}


def classify(params: ModelParams) -> list[StabilityReport]:
    """Verdicts for every equilibrium that exists at these parameters"""
    p = params
    found = equilibria(params)
    R0, R1 = found.R0, found.R1
    reports = []

    # E0
    evidence: Evidence = {"R0": R0, **routh_hurwitz_tau0(params, Which.E0)}
    evidence.update(imaginary_crossing_test(params, Which.E0))
    evidence["q0"] = evidence["a3"]
    if abs(R0 - 1.0) <= BOUNDARY_TOL:
        verdict = Verdict.CRITICAL
        # y = 0 in y^2 + (u + v) y + uv - (k lambda r / m) e^(-tau y)
        evidence["critical_root_residual"] = abs(evidence["a3"])
    else:
        verdict = Verdict.STABLE if R0 < 1.0 else Verdict.UNSTABLE
    reports.append(StabilityReport(Which.E0, verdict, verdict is not Verdict.CRITICAL, found.E0, evidence))

    # E1
    if found.E1 is not None:
        evidence = {"R0": R0, "R1": R1, **routh_hurwitz_tau0(params, Which.E1)}
        evidence.update(imaginary_crossing_test(params, Which.E1))
        evidence["E1_real_root"] = p.a * found.E1.I - p.n
        if found.e2_boundary:
            verdict = Verdict.CRITICAL
        else:
            verdict = Verdict.STABLE if R0 < 1.0 + R1 else Verdict.UNSTABLE
        reports.append(
            StabilityReport(Which.E1, verdict, verdict is not Verdict.CRITICAL, found.E1, evidence)
        )

    # E2
    if found.E2 is not None:
        evidence = {"R0": R0, "R1": R1, **imaginary_crossing_test(params, Which.E2)}
        if not evidence["no_crossing"]:
            logger.warning(f"⚠️  E2 modulus test inconclusive: {evidence}")
        reports.append(StabilityReport(Which.E2, Verdict.STABLE, True, found.E2, evidence))

    logger.debug(f"🔍 R0={R0:.6g}, R1={R1:.6g}: " + ", ".join(f"{r.equilibrium.value} {r.verdict.value}" for r in reports))
    return reports
