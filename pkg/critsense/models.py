"""
Critical Hamiltonian families H(λ) = H₀ + λH₁ and their commutator algebra.

Features:
- builders for the full and effective quantum Rabi model, the degenerate
  parametric oscillator and the Holstein–Primakoff reduced LMG model
- the conditioned two-branch Rabi model used by the qubit-readout protocol
- C = −i[H₀,H₁], D = −[H,[H₀,H₁]], Λ = i√Δ C − D and the closed-form gap Δ(λ)
- truncation-edge-aware residual of [H,Λ] = √Δ Λ

Time is measured in units of 1/ω. Constant energy offsets are dropped from
every Hamiltonian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np
import scipy.linalg as sla

from .errors import GapError, ParameterError, SpaceMismatchError, TruncationError
from .hilbert import (
    Operator,
    SpaceDescriptor,
    identity,
    ladder_ops,
    pauli_ops,
    tensor,
)

logger = logging.getLogger(__name__)

QRM_MIN_CUTOFF = 8
INTERIOR_FRACTION = 0.3


class ModelName(str, Enum):
    QRM_FULL = "qrm_full"
    QRM_EFFECTIVE = "qrm_effective"
    QRM_CONDITIONED = "qrm_conditioned"
    OPO = "opo"
    LMG = "lmg"
    LINEAR = "linear"


GapFunction = Callable[[float], float]
Builder = Callable[[float, int], "CriticalModel"]


@dataclass(frozen=True, eq=False)
class CriticalModel:
    """
    One member of a parametric family, pinned at a value of its physical parameter.

    `parameter` is the physical knob (g, ω or λ), `lam` the linear coordinate
    entering H₀ + λH₁ and `jacobian` the derivative dλ/d(parameter).
    """

    name: ModelName
    space: SpaceDescriptor
    params: Mapping[str, float]
    parameter: float
    lam: float
    hamiltonian: Operator
    h0: Operator
    h1: Operator
    jacobian: float = 1.0
    critical_lambda: float | None = None
    gap_fn: GapFunction | None = field(default=None, repr=False)
    builder: Builder | None = field(default=None, repr=False)

    @property
    def omega(self) -> float:
        return float(self.params.get("omega", 1.0))

    @property
    def has_gap(self) -> bool:
        return self.gap_fn is not None

    @cached_property
    def delta(self) -> float:
        if self.gap_fn is None:
            raise GapError(f"{self.name.value} has no closed-form gap")
        return float(self.gap_fn(self.lam))

    @property
    def reduced_delta(self) -> float:
        """Δ in the dimensionless form quoted per model (Δ_g for the Rabi family)."""
        if self.name in (ModelName.QRM_EFFECTIVE, ModelName.QRM_CONDITIONED, ModelName.QRM_FULL):
            return 4.0 * (1.0 - self.parameter**2)
        return self.delta

    def sqrt_gap(self) -> float:
        d = self.delta
        if d <= 0.0:
            raise GapError(f"{self.name.value}: Δ={d!r} <= 0; imaginary gap")
        return math.sqrt(d)

    @cached_property
    def h0h1(self) -> Operator:
        return self.h0.commutator(self.h1)

    @cached_property
    def c_op(self) -> Operator:
        return -1j * self.h0h1

    @cached_property
    def d_op(self) -> Operator:
        return -self.hamiltonian.commutator(self.h0h1)

    @cached_property
    def lambda_op(self) -> Operator:
        return (1j * self.sqrt_gap()) * self.c_op - self.d_op

    @cached_property
    def dominant_d(self) -> Operator:
        """The part of D that survives at the critical point."""
        if self.name is ModelName.QRM_EFFECTIVE:
            p = ladder_ops(self.space).p
            return -(self.omega**3) * (p @ p)
        if self.name is ModelName.LMG:
            gamma = self.params["gamma"]
            p = ladder_ops(self.space).p
            return 8.0 * (1.0 - gamma) * (self.lam - gamma) * (p @ p)
        return self.d_op

    def hamiltonian_at(self, lam: float) -> Operator:
        return self.h0 + lam * self.h1

    def with_parameter(self, value: float) -> CriticalModel:
        if self.builder is None:
            raise ParameterError(f"{self.name.value} cannot be rebuilt at another parameter")
        return self.builder(value, self.space.cutoff)

    def with_cutoff(self, cutoff: int) -> CriticalModel:
        if self.builder is None:
            raise ParameterError(f"{self.name.value} cannot be rebuilt at another cutoff")
        return self.builder(self.parameter, cutoff)


def _check_finite(**values: float) -> None:
    for key, value in values.items():
        if not math.isfinite(value):
            raise ParameterError(f"{key} must be finite, got {value!r}")


def qrm_expected_excitation(g: float, eta: float = math.inf) -> float:
    """Mean boson number reached from the canonical state (normal phase) or the superradiant displacement."""
    if g < 1.0:
        delta_g = 4.0 * (1.0 - g * g)
        return 0.5 + min(2.0 * g**4 / delta_g, eta ** (1.0 / 3.0))
    return max(eta * (g * g - 1.0 / (g * g)) / 4.0, eta ** (1.0 / 3.0)) + 1.0


def required_cutoff(g: float, eta: float = math.inf) -> int:
    return max(QRM_MIN_CUTOFF, int(math.ceil(4.0 * qrm_expected_excitation(g, eta) + 8.0)))


def suggest_cutoff(g: float, eta: float = math.inf) -> int:
    return max(QRM_MIN_CUTOFF, int(math.ceil(40.0 * qrm_expected_excitation(g, eta) + 16.0)))


def build_qrm_full(omega: float, eta: float, g: float, cutoff: int) -> CriticalModel:
    """ω a†a + (ηω/2)σz − λ_cpl (a+a†)σx with λ_cpl = g√(ω·ηω)/2, linear in g."""
    _check_finite(omega=omega, eta=eta, g=g)
    if omega <= 0.0:
        raise ParameterError(f"omega must be > 0, got {omega}")
    if eta < 1.0:
        raise ParameterError(f"eta must be >= 1, got {eta}")
    if g < 0.0:
        raise ParameterError(f"g must be >= 0, got {g}")
    need = required_cutoff(g, eta)
    if cutoff < need:
        raise TruncationError(
            f"cutoff={cutoff} too small for qrm_full at g={g}, eta={eta} (need >= {need})",
            suggested_cutoff=suggest_cutoff(g, eta),
        )
    space = SpaceDescriptor.composite(cutoff)
    lad = ladder_ops(space)
    pau = pauli_ops(space)
    h0 = omega * lad.n + (eta * omega / 2.0) * pau.sz
    h1 = (-omega * math.sqrt(eta) / 2.0) * ((lad.a + lad.adag) @ pau.sx)

    def rebuild(value: float, c: int) -> CriticalModel:
        return build_qrm_full(omega, eta, value, c)

    return CriticalModel(
        name=ModelName.QRM_FULL,
        space=space,
        params=MappingProxyType({"omega": omega, "eta": eta, "g": g}),
        parameter=g,
        lam=g,
        hamiltonian=h0 + g * h1,
        h0=h0,
        h1=h1,
        jacobian=1.0,
        builder=rebuild,
    )


def _qrm_quadratic_pair(space: SpaceDescriptor, omega: float) -> tuple[Operator, Operator]:
    boson = space.boson_factor()
    lad = ladder_ops(boson)
    q = lad.a + lad.adag
    return omega * lad.n, (-omega / 4.0) * (q @ q)


def build_qrm_effective(omega: float, g: float, cutoff: int) -> CriticalModel:
    """Normal-phase ω[a†a − g²(a+a†)²/4], linear in λ = g²."""
    _check_finite(omega=omega, g=g)
    if omega <= 0.0:
        raise ParameterError(f"omega must be > 0, got {omega}")
    if g < 0.0:
        raise ParameterError(f"g must be >= 0, got {g}")
    if g >= 1.0:
        logger.warning("qrm_effective built beyond the normal phase: g=%s (Δ_g=%.4g)", g, 4 * (1 - g * g))
    space = SpaceDescriptor.boson(cutoff)
    h0, h1 = _qrm_quadratic_pair(space, omega)
    lam = g * g

    def rebuild(value: float, c: int) -> CriticalModel:
        return build_qrm_effective(omega, value, c)

    return CriticalModel(
        name=ModelName.QRM_EFFECTIVE,
        space=space,
        params=MappingProxyType({"omega": omega, "g": g}),
        parameter=g,
        lam=lam,
        hamiltonian=h0 + lam * h1,
        h0=h0,
        h1=h1,
        jacobian=2.0 * g,
        critical_lambda=1.0,
        gap_fn=lambda x: 4.0 * omega * omega * (1.0 - x),
        builder=rebuild,
    )


def build_qrm_conditioned(omega: float, g: float, cutoff: int) -> CriticalModel:
    """I⊗H₀ − λσz⊗H₁ with λ = g²: the ↓ branch is H_↓, the ↑ branch H_↑."""
    _check_finite(omega=omega, g=g)
    if omega <= 0.0:
        raise ParameterError(f"omega must be > 0, got {omega}")
    if not 0.0 <= g < 1.0:
        raise ParameterError(f"conditioned Rabi model needs 0 <= g < 1, got {g}")
    boson = SpaceDescriptor.boson(cutoff)
    b0, b1 = _qrm_quadratic_pair(boson, omega)
    qubit = SpaceDescriptor.qubit()
    sz = pauli_ops(qubit).sz
    h0 = tensor(identity(qubit), b0)
    h1 = -tensor(sz, b1)
    lam = g * g

    def rebuild(value: float, c: int) -> CriticalModel:
        return build_qrm_conditioned(omega, value, c)

    return CriticalModel(
        name=ModelName.QRM_CONDITIONED,
        space=h0.space,
        params=MappingProxyType({"omega": omega, "g": g}),
        parameter=g,
        lam=lam,
        hamiltonian=h0 + lam * h1,
        h0=h0,
        h1=h1,
        jacobian=2.0 * g,
        builder=rebuild,
    )


def build_opo(omega: float, kappa: float, cutoff: int) -> CriticalModel:
    """ω a†a + iκ[(a†)² − a²] with the pump frequency ω as the estimated parameter."""
    _check_finite(omega=omega, kappa=kappa)
    if omega <= 0.0:
        raise ParameterError(f"omega must be > 0, got {omega}")
    if kappa < 0.0:
        raise ParameterError(f"kappa must be >= 0, got {kappa}")
    space = SpaceDescriptor.boson(cutoff)
    lad = ladder_ops(space)
    h0 = (1j * kappa) * (lad.adag @ lad.adag - lad.a @ lad.a)
    h1 = lad.n

    def rebuild(value: float, c: int) -> CriticalModel:
        return build_opo(value, kappa, c)

    return CriticalModel(
        name=ModelName.OPO,
        space=space,
        params=MappingProxyType({"omega": omega, "kappa": kappa}),
        parameter=omega,
        lam=omega,
        hamiltonian=h0 + omega * h1,
        h0=h0,
        h1=h1,
        critical_lambda=2.0 * kappa,
        gap_fn=lambda x: 4.0 * x * x - 16.0 * kappa * kappa,
        builder=rebuild,
    )


def build_lmg(gamma: float, lam: float, cutoff: int) -> CriticalModel:
    """Holstein–Primakoff LMG: 2λ a†a + [γ(a†−a)² − (a+a†)²]/2."""
    _check_finite(gamma=gamma, lam=lam)
    if gamma == 1.0:
        raise ParameterError("isotropic LMG (gamma=1) is not critical at lambda=1 in this framework")
    space = SpaceDescriptor.boson(cutoff)
    lad = ladder_ops(space)
    minus = lad.adag - lad.a
    plus = lad.a + lad.adag
    h0 = 0.5 * (gamma * (minus @ minus) - plus @ plus)
    h1 = 2.0 * lad.n

    def rebuild(value: float, c: int) -> CriticalModel:
        return build_lmg(gamma, value, c)

    return CriticalModel(
        name=ModelName.LMG,
        space=space,
        params=MappingProxyType({"gamma": gamma, "lambda": lam}),
        parameter=lam,
        lam=lam,
        hamiltonian=h0 + lam * h1,
        h0=h0,
        h1=h1,
        critical_lambda=1.0,
        gap_fn=lambda x: 16.0 * (gamma - x) * (1.0 - x),
        builder=rebuild,
    )


def build_linear(
    h0: Operator,
    h1: Operator,
    lam: float,
    gap_fn: GapFunction | None = None,
    critical_lambda: float | None = None,
) -> CriticalModel:
    """Any H₀ + λH₁ pair on a shared space."""
    if h0.space != h1.space:
        raise SpaceMismatchError(f"H0 space {h0.space} != H1 space {h1.space}")
    _check_finite(lam=lam)

    def rebuild(value: float, c: int) -> CriticalModel:
        if c != h0.space.cutoff:
            raise ParameterError("linear models are fixed to the cutoff of their operators")
        return build_linear(h0, h1, value, gap_fn, critical_lambda)

    return CriticalModel(
        name=ModelName.LINEAR,
        space=h0.space,
        params=MappingProxyType({"lambda": lam}),
        parameter=lam,
        lam=lam,
        hamiltonian=h0 + lam * h1,
        h0=h0,
        h1=h1,
        critical_lambda=critical_lambda,
        gap_fn=gap_fn,
        builder=rebuild,
    )


def _interior_indices(space: SpaceDescriptor, interior_fraction: float) -> np.ndarray:
    if not 0.0 < interior_fraction < 1.0:
        raise ParameterError(f"interior_fraction must lie in (0, 1), got {interior_fraction}")
    keep = int(math.floor((1.0 - interior_fraction) * space.boson_dim))
    levels = np.arange(space.dim) % space.boson_dim
    return np.flatnonzero(levels < keep)


def commutator_residual(model: CriticalModel, interior_fraction: float = INTERIOR_FRACTION) -> float:
    """‖Π([H,Λ] − √Δ Λ)Π‖ / ‖ΠΛΠ‖ on the lowest Fock levels."""
    if model.delta <= 0.0:
        raise GapError(f"Δ={model.delta!r} <= 0: imaginary gap; residual undefined as stated")
    root = model.sqrt_gap()
    lam_op = model.lambda_op
    lhs = model.hamiltonian.commutator(lam_op) - root * lam_op
    idx = _interior_indices(model.space, interior_fraction)
    block = np.ix_(idx, idx)
    scale = np.linalg.norm(lam_op.matrix[block])
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(lhs.matrix[block]) / scale)


def spectral_gap(model: CriticalModel, levels: int = 6) -> float:
    """4·(mean spacing)² of the lowest eigenvalues; equals Δ for an equally spaced spectrum."""
    if levels < 2:
        raise ParameterError(f"need at least 2 levels, got {levels}")
    energies = sla.eigvalsh(model.hamiltonian.matrix, subset_by_index=[0, levels - 1])
    spacing = float(np.mean(np.diff(energies)))
    return 4.0 * spacing * spacing


def conditioned_hamiltonians(model: CriticalModel) -> tuple[Operator, Operator]:
    """(H_↑, H_↓) acting on the boson mode for the qubit held in |↑⟩ or |↓⟩."""
    if model.name not in (ModelName.QRM_EFFECTIVE, ModelName.QRM_CONDITIONED):
        raise ParameterError(f"conditioned Hamiltonians need a Rabi model, got {model.name.value}")
    g = model.parameter
    if not 0.0 <= g < 1.0:
        raise ParameterError(f"conditioned Hamiltonians need 0 <= g < 1, got {g}")
    boson = model.space.boson_factor()
    h0, h1 = _qrm_quadratic_pair(boson, model.omega)
    lam = g * g
    return h0 - lam * h1, h0 + lam * h1


def rabi_frequency_ratio(g: float) -> float:
    if not 0.0 <= g < 1.0:
        raise ParameterError(f"R(g) needs 0 <= g < 1, got {g}")
    return math.sqrt((1.0 + g * g) / (1.0 - g * g))


def fractional_ratio(g: float) -> float:
    r = rabi_frequency_ratio(g)
    return r - math.floor(r)


def coupling_for_ratio(ratio: float) -> float:
    if ratio < 1.0:
        raise ParameterError(f"R must be >= 1, got {ratio}")
    r2 = ratio * ratio
    return math.sqrt((r2 - 1.0) / (r2 + 1.0))
