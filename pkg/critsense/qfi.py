"""
Quantum Fisher information for the critical families.

Covers:
- the transformed local generator h = H₁t + c_C(t) C + c_D(t) D
- the dominant-term critical QFI 4[sin(√Δt) − √Δt]²/Δ³ · Var[D]
- 4·Var[h] with all generator terms retained
- an independent fidelity-based oracle with step halving
- SLD QFI for mixed states

Values are reported in the physical parameter of the model; the
jacobian dλ/d(parameter) is squared and applied here and nowhere else.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, GapError, InvalidStateError, ParameterError, SpaceMismatchError
from .hilbert import Operator, Propagator, QuantumState, variance
from .models import CriticalModel

logger = logging.getLogger(__name__)

SERIES_SWITCH = 1e-3
FIDELITY_START = 1e-4
FIDELITY_RTOL = 1e-4
FIDELITY_ATOL = 1e-12
MAX_HALVINGS = 20
SLD_CUTOFF = 1e-12
TRACE_TOL = 1e-8


class QfiMethod(str, Enum):
    ANALYTIC = "analytic"
    GENERATOR_FULL = "generator_full"
    FIDELITY_EXACT = "fidelity_exact"
    SLD = "sld"


@dataclass(frozen=True)
class QfiResult:
    value: float
    method: QfiMethod
    parameter: float
    time: float
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.value >= 0.0:
            raise ParameterError(f"QFI must be >= 0, got {self.value!r}")


def generator_coefficients(delta: float, t: float) -> tuple[float, float]:
    """(c_C, c_D) multiplying C and D in the local generator."""
    if delta <= 0.0:
        raise GapError(f"generator needs Δ > 0, got {delta!r}")
    root = math.sqrt(delta)
    s = root * t
    if abs(s) < SERIES_SWITCH:
        t2 = t * t
        c_c = -t2 / 2.0 + delta * t2 * t2 / 24.0 - delta * delta * t2**3 / 720.0
        c_d = t * t2 / 6.0 - delta * t * t2 * t2 / 120.0 + delta * delta * t * t2**3 / 5040.0
        return c_c, c_d
    return (math.cos(s) - 1.0) / delta, -(math.sin(s) - s) / (delta * root)


def generator(model: CriticalModel, t: float) -> Operator:
    if model.h0h1.max_abs == 0.0:
        return t * model.h1
    c_c, c_d = generator_coefficients(model.delta, t)
    return t * model.h1 + c_c * model.c_op + c_d * model.d_op


def _require_pure(state: QuantumState, model: CriticalModel) -> None:
    if state.space != model.space:
        raise SpaceMismatchError(f"state space {state.space} != model space {model.space}")
    if not state.is_pure:
        raise InvalidStateError("generator QFI is defined for pure initial states")


def qfi_analytic(model: CriticalModel, state: QuantumState, t: float) -> QfiResult:
    delta = model.delta
    if delta <= 0.0:
        raise GapError(f"analytic QFI needs Δ > 0, got {delta!r}")
    if state.space != model.space:
        raise SpaceMismatchError(f"state space {state.space} != model space {model.space}")
    s = math.sqrt(delta) * t
    var_d = variance(model.dominant_d, state)
    value = 4.0 * (math.sin(s) - s) ** 2 / delta**3 * var_d * model.jacobian**2
    return QfiResult(
        value,
        QfiMethod.ANALYTIC,
        model.parameter,
        t,
        MappingProxyType({"var_d": var_d, "phase": s, "cutoff": model.space.cutoff}),
    )


def qfi_generator_full(model: CriticalModel, state: QuantumState, t: float) -> QfiResult:
    _require_pure(state, model)
    h = generator(model, t)
    value = 4.0 * variance(h, state) * model.jacobian**2
    return QfiResult(
        value,
        QfiMethod.GENERATOR_FULL,
        model.parameter,
        t,
        MappingProxyType({"cutoff": model.space.cutoff}),
    )


def _fidelity_estimate(model: CriticalModel, state: QuantumState, t: float, delta: float) -> float:
    p = model.parameter
    plus = Propagator.from_hamiltonian(model.with_parameter(p + delta).hamiltonian).evolve(state, t)
    minus = Propagator.from_hamiltonian(model.with_parameter(p - delta).hamiltonian).evolve(state, t)
    overlap = np.vdot(minus.data, plus.data)
    phase = np.exp(1j * np.angle(overlap)) if overlap != 0 else 1.0
    dist = np.linalg.norm(plus.data - phase * minus.data)
    return float(dist * dist) / (delta * delta)


def qfi_fidelity_exact(
    model: CriticalModel,
    state: QuantumState,
    t: float,
    delta: float | None = None,
) -> QfiResult:
    """
    8(1 − |⟨ψ(p−δ)|ψ(p+δ)⟩|)/(2δ)², evaluated as a phase-aligned distance.

    The step is halved until two successive estimates agree to FIDELITY_RTOL;
    the Richardson extrapolation is returned with its discretization error.
    """
    _require_pure(state, model)
    step = delta if delta is not None else FIDELITY_START * max(abs(model.parameter), 1.0)
    if step <= 0.0:
        raise ParameterError(f"finite-difference step must be > 0, got {step}")
    coarse = _fidelity_estimate(model, state, t, step)
    for halving in range(1, MAX_HALVINGS + 1):
        fine = _fidelity_estimate(model, state, t, step / 2.0)
        extrapolated = (4.0 * fine - coarse) / 3.0
        error = abs(extrapolated - fine)
        quadratic = fine * step * step < 1e-2
        logger.debug("fidelity QFI: δ=%.3g estimate=%.6g error=%.2e", step / 2.0, fine, error)
        if quadratic and error <= FIDELITY_RTOL * abs(fine) + FIDELITY_ATOL:
            return QfiResult(
                max(extrapolated, 0.0),
                QfiMethod.FIDELITY_EXACT,
                model.parameter,
                t,
                MappingProxyType(
                    {
                        "delta": step / 2.0,
                        "error": error,
                        "halvings": halving,
                        "cutoff": model.space.cutoff,
                    }
                ),
            )
        step /= 2.0
        coarse = fine
    raise ConvergenceError(
        f"QFI too large for requested δ floor: no quadratic regime after {MAX_HALVINGS} halvings "
        f"(last estimate {coarse:.6g}, δ={step:.3g})"
    )


def density_derivative(rho_plus: QuantumState, rho_minus: QuantumState, delta: float) -> Operator:
    if rho_plus.space != rho_minus.space:
        raise SpaceMismatchError("density derivative needs matching spaces")
    diff = (rho_plus.to_density().data - rho_minus.to_density().data) / (2.0 * delta)
    return Operator(rho_plus.space, 0.5 * (diff + diff.conj().T))


def qfi_sld(
    rho: QuantumState,
    drho: Operator,
    parameter: float = math.nan,
    time: float = math.nan,
) -> QfiResult:
    if drho.space != rho.space:
        raise SpaceMismatchError(f"dρ space {drho.space} != ρ space {rho.space}")
    tr = drho.trace()
    if abs(tr) > TRACE_TOL:
        raise ParameterError(f"parameter derivative of ρ must be traceless, got trace {tr:.3e}")
    dense = rho.to_density().data
    probs, vectors = sla.eigh(0.5 * (dense + dense.conj().T))
    rotated = vectors.conj().T @ drho.matrix @ vectors
    denom = probs[:, None] + probs[None, :]
    mask = denom > SLD_CUTOFF
    value = 2.0 * float(np.sum(np.abs(rotated[mask]) ** 2 / denom[mask]))
    return QfiResult(
        value,
        QfiMethod.SLD,
        parameter,
        time,
        MappingProxyType({"rank": int(np.sum(probs > SLD_CUTOFF))}),
    )
