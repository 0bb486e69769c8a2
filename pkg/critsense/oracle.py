"""
Truncation-free moment dynamics for the quadratic models.

H = ½ rᵀ M r with r = (X, P) closes the first and second moments:
r(t) = S(t) r(0) and σ(t) = S(t) σ(0) S(t)ᵀ with S(t) = exp(ΩM t).
The 2×2 exponential is taken in closed form from A = ΩM, A² = −det(M)·I.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidStateError, ParameterError
from .hilbert import QuantumState, expect_real, ladder_ops
from .models import CriticalModel, ModelName

OMEGA = np.array([[0.0, 1.0], [-1.0, 0.0]])
SYMMETRY_TOL = 1e-12
GAP_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.shape != (2, 2):
            raise ParameterError(f"quadratic form must be 2x2, got {m.shape}")
        if abs(m[0, 1] - m[1, 0]) > SYMMETRY_TOL:
            raise ParameterError("quadratic form must be symmetric")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def det(self) -> float:
        m = self.matrix
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    @property
    def branch(self) -> str:
        d = self.det
        if d > 0.0:
            return "trigonometric"
        if d < 0.0:
            return "hyperbolic"
        return "polynomial"


@dataclass(frozen=True, eq=False)
class MomentState:
    r: np.ndarray
    sigma: np.ndarray
    gaussian: bool = False

    def __post_init__(self) -> None:
        r = np.array(self.r, dtype=float).reshape(2)
        s = np.array(self.sigma, dtype=float)
        if s.shape != (2, 2) or abs(s[0, 1] - s[1, 0]) > SYMMETRY_TOL * max(1.0, np.max(np.abs(s))):
            raise InvalidStateError(f"covariance must be a symmetric 2x2 matrix, got {s!r}")
        if self.gaussian and np.linalg.det(s) < 0.25 - 1e-12:
            raise InvalidStateError(f"Gaussian covariance violates det >= 1/4: {np.linalg.det(s):.6g}")
        r.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "sigma", s)

    @property
    def mean_x(self) -> float:
        return float(self.r[0])

    @property
    def var_x(self) -> float:
        return float(self.sigma[0, 0])


def quadratic_form(model: CriticalModel) -> QuadraticForm:
    if model.name is ModelName.QRM_EFFECTIVE:
        w = model.omega
        m = np.diag([w * (1.0 - model.lam), w])
    elif model.name is ModelName.OPO:
        w, k = model.params["omega"], model.params["kappa"]
        m = np.array([[w, 2.0 * k], [2.0 * k, w]])
    elif model.name is ModelName.LMG:
        lam, gamma = model.lam, model.params["gamma"]
        m = np.diag([2.0 * (lam - 1.0), 2.0 * (lam - gamma)])
    else:
        raise ParameterError(f"{model.name.value} is not quadratic")
    qf = QuadraticForm(m)
    expected = model.delta
    if abs(4.0 * qf.det - expected) > GAP_RTOL * max(1.0, abs(expected)):
        raise ParameterError(f"4·det(M)={4.0 * qf.det!r} disagrees with Δ={expected!r}")
    return qf


def symplectic_propagator(qf: QuadraticForm, t: float) -> np.ndarray:
    a = OMEGA @ qf.matrix
    d = qf.det
    if d > 0.0:
        w = math.sqrt(d)
        return math.cos(w * t) * np.eye(2) + (math.sin(w * t) / w) * a
    if d < 0.0:
        w = math.sqrt(-d)
        return math.cosh(w * t) * np.eye(2) + (math.sinh(w * t) / w) * a
    return np.eye(2) + a * t


def symplectic_residual(s: np.ndarray) -> float:
    return float(np.max(np.abs(s @ OMEGA @ s.T - OMEGA)))


def moments_evolve(qf: QuadraticForm, m0: MomentState, t: float) -> MomentState:
    s = symplectic_propagator(qf, t)
    sigma = s @ m0.sigma @ s.T
    return MomentState(s @ m0.r, 0.5 * (sigma + sigma.T), m0.gaussian)


def moments_from_state(state: QuantumState) -> MomentState:
    lad = ladder_ops(state.space)
    x, p = lad.x, lad.p
    mx = expect_real(x, state)
    mp = expect_real(p, state)
    xx = expect_real(x @ x, state) - mx * mx
    pp = expect_real(p @ p, state) - mp * mp
    xp = 0.5 * expect_real(x @ p + p @ x, state) - mx * mp
    return MomentState(np.array([mx, mp]), np.array([[xx, xp], [xp, pp]]))
