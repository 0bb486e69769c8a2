"""
Truncated Fock-space and qubit⊗boson linear algebra.

Covers:
- space descriptors for a boson mode, a qubit and the qubit⊗boson product
- dense operators (ladder, quadrature and Pauli matrices, Kronecker products)
- pure and mixed states with their validity checks
- exact unitary propagation through a cached Hermitian eigendecomposition
- expectation values, variances and the truncation-edge population guard
- the adaptive cutoff-doubling rule shared by every experiment

Basis order is qubit-major: the |↑⟩ block comes first, then the |↓⟩ block,
with σz|↑⟩ = +|↑⟩. All arrays are stored dense.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaln

from .errors import (
    ConvergenceError,
    EvolutionError,
    InvalidStateError,
    NotHermitianError,
    ParameterError,
    SpaceMismatchError,
)

logger = logging.getLogger(__name__)

MIN_CUTOFF = 2
HERMITIAN_TOL = 1e-10
NORM_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8
IMAG_ERROR_TOL = 1e-8
IMAG_DISCARD_TOL = 1e-10
EDGE_FRACTION = 0.1
EDGE_WEIGHT_TOL = 1e-8
CUTOFF_RTOL = 1e-6


class SpaceKind(str, Enum):
    BOSON = "boson"
    QUBIT = "qubit"
    COMPOSITE = "qubit_boson"


class Spin(IntEnum):
    UP = 0
    DOWN = 1


@dataclass(frozen=True)
class SpaceDescriptor:
    kind: SpaceKind
    cutoff: int = 0

    def __post_init__(self) -> None:
        kind = SpaceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is SpaceKind.QUBIT:
            object.__setattr__(self, "cutoff", 0)
        elif int(self.cutoff) < MIN_CUTOFF:
            raise ParameterError(f"cutoff must be >= {MIN_CUTOFF}, got {self.cutoff}")
        else:
            object.__setattr__(self, "cutoff", int(self.cutoff))

    @classmethod
    def boson(cls, cutoff: int) -> SpaceDescriptor:
        return cls(SpaceKind.BOSON, cutoff)

    @classmethod
    def qubit(cls) -> SpaceDescriptor:
        return cls(SpaceKind.QUBIT)

    @classmethod
    def composite(cls, cutoff: int) -> SpaceDescriptor:
        return cls(SpaceKind.COMPOSITE, cutoff)

    @property
    def has_boson(self) -> bool:
        return self.kind is not SpaceKind.QUBIT

    @property
    def has_qubit(self) -> bool:
        return self.kind is not SpaceKind.BOSON

    @property
    def boson_dim(self) -> int:
        return self.cutoff + 1 if self.has_boson else 0

    @property
    def dim(self) -> int:
        if self.kind is SpaceKind.BOSON:
            return self.cutoff + 1
        if self.kind is SpaceKind.QUBIT:
            return 2
        return 2 * (self.cutoff + 1)

    def with_cutoff(self, cutoff: int) -> SpaceDescriptor:
        return SpaceDescriptor(self.kind, cutoff)

    def boson_factor(self) -> SpaceDescriptor:
        if not self.has_boson:
            raise SpaceMismatchError("no bosonic factor")
        return SpaceDescriptor.boson(self.cutoff)


def _frozen_array(data: Any, dtype: type = complex) -> np.ndarray:
    arr = np.array(data, dtype=dtype)
    arr.flags.writeable = False
    return arr


def _hermitian_residual(m: np.ndarray) -> float:
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(m - m.conj().T)))


@dataclass(frozen=True, eq=False)
class Operator:
    space: SpaceDescriptor
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = _frozen_array(self.matrix)
        if m.shape != (self.space.dim, self.space.dim):
            raise SpaceMismatchError(
                f"matrix shape {m.shape} does not match {self.space.kind.value} dim={self.space.dim}"
            )
        object.__setattr__(self, "matrix", m)

    def _check(self, other: Operator) -> None:
        if not isinstance(other, Operator):
            raise TypeError(f"expected Operator, got {type(other).__name__}")
        if other.space != self.space:
            raise SpaceMismatchError(f"space mismatch: {self.space} vs {other.space}")

    def __add__(self, other: Operator) -> Operator:
        self._check(other)
        return Operator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: Operator) -> Operator:
        self._check(other)
        return Operator(self.space, self.matrix - other.matrix)

    def __neg__(self) -> Operator:
        return Operator(self.space, -self.matrix)

    def __mul__(self, scalar: complex) -> Operator:
        if isinstance(scalar, Operator):
            raise TypeError("use @ for operator products")
        return Operator(self.space, self.matrix * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> Operator:
        return Operator(self.space, self.matrix / scalar)

    def __matmul__(self, other: Operator) -> Operator:
        self._check(other)
        return Operator(self.space, self.matrix @ other.matrix)

    @property
    def dag(self) -> Operator:
        return Operator(self.space, self.matrix.conj().T)

    def commutator(self, other: Operator) -> Operator:
        self._check(other)
        return Operator(self.space, self.matrix @ other.matrix - other.matrix @ self.matrix)

    def hermiticity_residual(self) -> float:
        return _hermitian_residual(self.matrix)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermiticity_residual() <= tol * max(1.0, self.max_abs)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.matrix))) if self.matrix.size else 0.0

    def spectral_radius(self) -> float:
        if not self.is_hermitian():
            raise NotHermitianError("spectral radius requested for a non-Hermitian operator")
        evals = sla.eigvalsh(self.matrix)
        return float(np.max(np.abs(evals)))

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))


class StateKind(str, Enum):
    PURE = "pure"
    DENSITY = "density"


@dataclass(frozen=True, eq=False)
class QuantumState:
    space: SpaceDescriptor
    kind: StateKind
    data: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        kind = StateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        arr = _frozen_array(self.data)
        dim = self.space.dim
        if kind is StateKind.PURE:
            if arr.shape != (dim,):
                raise SpaceMismatchError(f"state vector shape {arr.shape} != ({dim},)")
            if self.validate:
                norm = float(np.linalg.norm(arr))
                if abs(norm - 1.0) > NORM_TOL:
                    raise InvalidStateError(f"pure state not normalized: norm={norm!r}")
        else:
            if arr.shape != (dim, dim):
                raise SpaceMismatchError(f"density shape {arr.shape} != ({dim}, {dim})")
            if self.validate:
                _check_density(arr)
        object.__setattr__(self, "data", arr)

    @classmethod
    def pure(cls, space: SpaceDescriptor, vector: Any, normalize: bool = False) -> QuantumState:
        vec = np.asarray(vector, dtype=complex)
        if normalize:
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise InvalidStateError("cannot normalize the zero vector")
            vec = vec / norm
        return cls(space, StateKind.PURE, vec)

    @classmethod
    def density(cls, space: SpaceDescriptor, matrix: Any) -> QuantumState:
        return cls(space, StateKind.DENSITY, matrix)

    @property
    def is_pure(self) -> bool:
        return self.kind is StateKind.PURE

    def to_density(self) -> QuantumState:
        if not self.is_pure:
            return self
        return QuantumState.density(self.space, np.outer(self.data, self.data.conj()))


def _check_density(rho: np.ndarray) -> None:
    herm = _hermitian_residual(rho)
    if herm > HERMITIAN_TOL:
        raise InvalidStateError(f"density matrix not Hermitian: residual={herm:.3e}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"density matrix trace {tr.real!r} != 1")
    lowest = float(sla.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    if lowest < -POSITIVITY_TOL:
        raise InvalidStateError(f"density matrix has negative eigenvalue {lowest:.3e}")


class LadderOps(NamedTuple):
    a: Operator
    adag: Operator
    n: Operator
    x: Operator
    p: Operator


class PauliOps(NamedTuple):
    sx: Operator
    sz: Operator
    sm: Operator


def _annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), k=1).astype(complex)


def _embed(space: SpaceDescriptor, qubit: np.ndarray | None, boson: np.ndarray | None) -> np.ndarray:
    if space.kind is SpaceKind.BOSON:
        return boson
    if space.kind is SpaceKind.QUBIT:
        return qubit
    q = qubit if qubit is not None else np.eye(2, dtype=complex)
    b = boson if boson is not None else np.eye(space.boson_dim, dtype=complex)
    return np.kron(q, b)


def identity(space: SpaceDescriptor) -> Operator:
    return Operator(space, np.eye(space.dim, dtype=complex))


def zero(space: SpaceDescriptor) -> Operator:
    return Operator(space, np.zeros((space.dim, space.dim), dtype=complex))


def ladder_ops(space: SpaceDescriptor) -> LadderOps:
    """Return a, a†, N, X, P, identity-extended on the qubit factor when present."""
    if not space.has_boson:
        raise SpaceMismatchError("no bosonic factor")
    a = _annihilation(space.cutoff)
    adag = a.conj().T
    x = (a + adag) / math.sqrt(2.0)
    p = 1j * (adag - a) / math.sqrt(2.0)
    n = np.diag(np.arange(space.cutoff + 1, dtype=float)).astype(complex)
    return LadderOps(
        *(Operator(space, _embed(space, None, m)) for m in (a, adag, n, x, p))
    )


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# (σx − iσy)/2: |↑⟩ → |↓⟩ with |↑⟩ at index 0
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)


def pauli_ops(space: SpaceDescriptor) -> PauliOps:
    if not space.has_qubit:
        raise SpaceMismatchError("no qubit factor")
    return PauliOps(
        *(Operator(space, _embed(space, m, None)) for m in (SIGMA_X, SIGMA_Z, SIGMA_MINUS))
    )


def tensor(qubit_op: Operator, boson_op: Operator) -> Operator:
    if qubit_op.space.kind is not SpaceKind.QUBIT:
        raise SpaceMismatchError(f"first factor must act on a qubit, got {qubit_op.space.kind.value}")
    if boson_op.space.kind is not SpaceKind.BOSON:
        raise SpaceMismatchError(f"second factor must act on a boson, got {boson_op.space.kind.value}")
    space = SpaceDescriptor.composite(boson_op.space.cutoff)
    return Operator(space, np.kron(qubit_op.matrix, boson_op.matrix))


def fock_state(space: SpaceDescriptor, n: int, spin: Spin | None = None) -> QuantumState:
    if not space.has_boson:
        raise SpaceMismatchError("no bosonic factor")
    if not 0 <= n <= space.cutoff:
        raise ParameterError(f"Fock level {n} outside 0..{space.cutoff}")
    boson = np.zeros(space.boson_dim, dtype=complex)
    boson[n] = 1.0
    return _with_spin(space, boson, spin)


def coherent_state(space: SpaceDescriptor, alpha: complex, spin: Spin | None = None) -> QuantumState:
    """Truncated coherent state, renormalized on the retained levels."""
    if not space.has_boson:
        raise SpaceMismatchError("no bosonic factor")
    levels = np.arange(space.boson_dim)
    if alpha == 0:
        boson = np.zeros(space.boson_dim, dtype=complex)
        boson[0] = 1.0
    else:
        log_mag = levels * math.log(abs(alpha)) - 0.5 * gammaln(levels + 1) - 0.5 * abs(alpha) ** 2
        phase = np.exp(1j * levels * np.angle(alpha))
        boson = np.exp(log_mag) * phase
        boson = boson / np.linalg.norm(boson)
    return _with_spin(space, boson, spin)


def product_state(
    space: SpaceDescriptor, qubit_amplitudes: Sequence[complex], boson_vector: Any
) -> QuantumState:
    if space.kind is not SpaceKind.COMPOSITE:
        raise SpaceMismatchError("product states live on the qubit_boson space")
    qubit = np.asarray(qubit_amplitudes, dtype=complex)
    boson = np.asarray(boson_vector, dtype=complex)
    if qubit.shape != (2,) or boson.shape != (space.boson_dim,):
        raise SpaceMismatchError(
            f"factor shapes {qubit.shape}, {boson.shape} do not fit cutoff={space.cutoff}"
        )
    return QuantumState.pure(space, np.kron(qubit, boson))


def _with_spin(space: SpaceDescriptor, boson: np.ndarray, spin: Spin | None) -> QuantumState:
    if space.kind is SpaceKind.BOSON:
        return QuantumState.pure(space, boson)
    if spin is None:
        raise ParameterError("composite space needs a qubit spin (Spin.UP or Spin.DOWN)")
    qubit = np.zeros(2, dtype=complex)
    qubit[int(spin)] = 1.0
    return QuantumState.pure(space, np.kron(qubit, boson))


def _check_pair(op: Operator, s: QuantumState) -> None:
    if op.space != s.space:
        raise SpaceMismatchError(f"operator space {op.space} != state space {s.space}")


def expect(op: Operator, s: QuantumState) -> complex:
    _check_pair(op, s)
    m = op.matrix
    if s.is_pure:
        value = complex(np.vdot(s.data, m @ s.data))
    else:
        value = complex(np.einsum("ij,ji->", s.data, m))
    if op.is_hermitian():
        scale = max(1.0, abs(value))
        if abs(value.imag) > IMAG_ERROR_TOL * scale:
            raise InvalidStateError(
                f"Hermitian expectation has imaginary part {value.imag:.3e}; numerical corruption"
            )
        if abs(value.imag) <= IMAG_DISCARD_TOL * scale:
            value = complex(value.real, 0.0)
    return value


def expect_real(op: Operator, s: QuantumState) -> float:
    if not op.is_hermitian():
        raise NotHermitianError("expect_real needs a Hermitian operator")
    return expect(op, s).real


def variance(op: Operator, s: QuantumState) -> float:
    if not op.is_hermitian():
        raise NotHermitianError("variance needs a Hermitian operator")
    mean = expect_real(op, s)
    shifted = op.matrix - mean * np.eye(op.space.dim)
    if s.is_pure:
        return float(np.linalg.norm(shifted @ s.data) ** 2)
    value = float(np.einsum("ij,ji->", s.data, shifted @ shifted).real)
    return max(value, 0.0)


def reduced_boson_density(s: QuantumState) -> np.ndarray:
    if not s.space.has_boson:
        raise SpaceMismatchError("no bosonic factor")
    nb = s.space.boson_dim
    rho = s.to_density().data if s.is_pure and s.space.kind is SpaceKind.COMPOSITE else s.data
    if s.space.kind is SpaceKind.BOSON:
        return np.outer(rho, rho.conj()) if s.is_pure else np.array(rho)
    return np.einsum("qiqj->ij", np.asarray(rho).reshape(2, nb, 2, nb))


def boson_populations(s: QuantumState) -> np.ndarray:
    if not s.space.has_boson:
        raise SpaceMismatchError("no bosonic factor")
    nb = s.space.boson_dim
    if s.is_pure:
        probs = np.abs(s.data) ** 2
        if s.space.kind is SpaceKind.COMPOSITE:
            probs = probs.reshape(2, nb).sum(axis=0)
        return probs
    return np.real(np.diag(reduced_boson_density(s)))


def interior_weight(s: QuantumState, fraction: float = EDGE_FRACTION) -> float:
    """Population held in the top `fraction` of Fock levels, traced over the qubit."""
    if not 0.0 < fraction < 1.0:
        raise ParameterError(f"fraction must lie in (0, 1), got {fraction}")
    pops = boson_populations(s)
    start = int(math.floor((1.0 - fraction) * len(pops)))
    return float(np.sum(pops[start:]))


@dataclass(frozen=True, eq=False)
class Propagator:
    """exp(−iHt) for any t from one eigendecomposition H = V E V†."""

    hamiltonian: Operator
    energies: np.ndarray
    vectors: np.ndarray

    @classmethod
    def from_hamiltonian(cls, h: Operator) -> Propagator:
        residual = h.hermiticity_residual()
        if residual > HERMITIAN_TOL:
            raise NotHermitianError(f"Hamiltonian not Hermitian: residual={residual:.3e}")
        m = 0.5 * (h.matrix + h.matrix.conj().T)
        try:
            if np.max(np.abs(m.imag), initial=0.0) == 0.0:
                energies, vectors = sla.eigh(m.real)
            else:
                energies, vectors = sla.eigh(m)
        except (sla.LinAlgError, ValueError) as exc:
            raise EvolutionError(f"eigendecomposition failed (dim={h.space.dim}): {exc}") from exc
        return cls(h, _frozen_array(energies, float), _frozen_array(vectors))

    @property
    def space(self) -> SpaceDescriptor:
        return self.hamiltonian.space

    def unitary(self, t: float) -> Operator:
        phases = np.exp(-1j * self.energies * t)
        return Operator(self.space, (self.vectors * phases) @ self.vectors.conj().T)

    def reconstruction_residual(self) -> float:
        rebuilt = (self.vectors * self.energies) @ self.vectors.conj().T
        return float(np.max(np.abs(rebuilt - self.hamiltonian.matrix)))

    def evolve(self, psi: QuantumState, t: float) -> QuantumState:
        return self.evolve_many(psi, [t])[0]

    def evolve_many(self, psi: QuantumState, times: Sequence[float]) -> list[QuantumState]:
        if psi.space != self.space:
            raise SpaceMismatchError(f"state space {psi.space} != Hamiltonian space {self.space}")
        if not psi.is_pure:
            raise InvalidStateError("evolve_pure needs a pure state")
        coeffs = self.vectors.conj().T @ psi.data
        out: list[QuantumState] = []
        for t in times:
            vec = self.vectors @ (np.exp(-1j * self.energies * t) * coeffs)
            out.append(QuantumState.pure(self.space, vec))
        return out


def evolve_pure(h: Operator, psi: QuantumState, t: float) -> QuantumState:
    return Propagator.from_hamiltonian(h).evolve(psi, t)


@dataclass(frozen=True)
class CutoffSample:
    value: float
    states: tuple[QuantumState, ...]
    payload: Any = None


@dataclass(frozen=True)
class CutoffResult:
    sample: CutoffSample
    cutoff: int
    converged: bool
    edge_weight: float


def _settled(new: float, old: float, rtol: float) -> bool:
    if not (math.isfinite(new) and math.isfinite(old)):
        return False
    return abs(new - old) <= rtol * max(abs(new), abs(old), 1.0)


def converge_cutoff(
    evaluate: Callable[[int], CutoffSample],
    initial: int = 32,
    maximum: int = 1024,
    rtol: float = CUTOFF_RTOL,
    weight_tol: float = EDGE_WEIGHT_TOL,
    fraction: float = EDGE_FRACTION,
    strict: bool = False,
) -> CutoffResult:
    """
    Double the cutoff until the sampled value settles and the truncation edge is empty.

    The value must change by less than `rtol` (relative, floored at 1) between two
    consecutive cutoffs and every sampled state must keep less than `weight_tol` of
    its population in the top `fraction` of Fock levels.
    """
    cutoff = max(int(initial), MIN_CUTOFF)
    previous: CutoffSample | None = None
    while True:
        sample = evaluate(cutoff)
        weight = max((interior_weight(s, fraction) for s in sample.states), default=0.0)
        if previous is not None and weight < weight_tol and _settled(sample.value, previous.value, rtol):
            return CutoffResult(sample, cutoff, True, weight)
        if cutoff * 2 > maximum:
            message = (
                f"cutoff not converged at {cutoff} (max {maximum}): "
                f"edge_weight={weight:.2e} value={sample.value!r}"
            )
            if strict:
                raise ConvergenceError(message)
            logger.warning(message)
            return CutoffResult(sample, cutoff, False, weight)
        previous = sample
        cutoff *= 2
