"""
Lindblad dynamics of the full Rabi model and the noisy homodyne readout.

ρ̇ = −i[H, ρ] + Σ γ_k (A_k ρ A_k† − ½{A_k†A_k, ρ})
with A ∈ {σz (Γ), σ− (γ_c), a (γ_a), a† (γ_h)}.

Integration is fixed-step RK4 on the dense density matrix, symmetrized after
every step. Trace drift and positivity are monitored, never corrected.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np
import scipy.linalg as sla

from .errors import ParameterError, SpaceMismatchError, StepSizeError
from .hilbert import (
    Operator,
    QuantumState,
    SpaceDescriptor,
    expect_real,
    interior_weight,
    ladder_ops,
    pauli_ops,
    variance,
)
from .models import build_qrm_full, required_cutoff
from .protocols import ProtocolPoint, canonical_initial_state, reduced_gap, tau_n
from .qfi import density_derivative, qfi_sld

logger = logging.getLogger(__name__)

STEP_BOUND = 0.05
TRACE_DRIFT_TOL = 1e-7
POSITIVITY_TOL = 1e-6
NOISY_STEP = 1e-4
NOISY_EDGE_TOL = 1e-6


@dataclass(frozen=True)
class NoiseSpec:
    dephasing: float = 0.0
    qubit_decay: float = 0.0
    boson_decay: float = 0.0
    boson_heating: float = 0.0

    def __post_init__(self) -> None:
        for name in ("dephasing", "qubit_decay", "boson_decay", "boson_heating"):
            rate = getattr(self, name)
            if not (math.isfinite(rate) and rate >= 0.0):
                raise ParameterError(f"noise rate {name} must be finite and >= 0, got {rate!r}")

    @classmethod
    def from_dephasing(cls, rate: float) -> NoiseSpec:
        """Γ for the qubit, Γ/2 for every other channel."""
        return cls(rate, rate / 2.0, rate / 2.0, rate / 2.0)

    @property
    def is_zero(self) -> bool:
        return not any((self.dephasing, self.qubit_decay, self.boson_decay, self.boson_heating))


def jump_operators(space: SpaceDescriptor, noise: NoiseSpec) -> list[tuple[float, Operator]]:
    jumps: list[tuple[float, Operator]] = []
    if noise.dephasing or noise.qubit_decay:
        if not space.has_qubit:
            raise SpaceMismatchError("qubit noise requested on a space without a qubit")
        pau = pauli_ops(space)
        if noise.dephasing:
            jumps.append((noise.dephasing, pau.sz))
        if noise.qubit_decay:
            jumps.append((noise.qubit_decay, pau.sm))
    if noise.boson_decay or noise.boson_heating:
        if not space.has_boson:
            raise SpaceMismatchError("boson noise requested on a space without a boson")
        lad = ladder_ops(space)
        if noise.boson_decay:
            jumps.append((noise.boson_decay, lad.a))
        if noise.boson_heating:
            jumps.append((noise.boson_heating, lad.adag))
    return jumps


@dataclass(frozen=True, eq=False)
class _Generator:
    h_eff: np.ndarray
    jumps: tuple[tuple[float, np.ndarray], ...]
    norm: float


def _prepare(h: Operator, noise: NoiseSpec) -> _Generator:
    jumps = jump_operators(h.space, noise)
    h_eff = h.matrix.astype(complex)
    norm = h.spectral_radius()
    for rate, op in jumps:
        m = op.matrix
        h_eff = h_eff - 0.5j * rate * (m.conj().T @ m)
        norm += 0.5 * rate * float(np.linalg.norm(m, ord=2)) ** 2
    return _Generator(h_eff, tuple((rate, op.matrix) for rate, op in jumps), norm)


def _rhs(gen: _Generator, rho: np.ndarray) -> np.ndarray:
    out = -1j * (gen.h_eff @ rho - rho @ gen.h_eff.conj().T)
    for rate, m in gen.jumps:
        out += rate * (m @ rho @ m.conj().T)
    return out


def lindblad_rhs(h: Operator, noise: NoiseSpec, rho: QuantumState) -> Operator:
    if rho.space != h.space:
        raise SpaceMismatchError(f"ρ space {rho.space} != H space {h.space}")
    return Operator(h.space, _rhs(_prepare(h, noise), rho.to_density().data))


def step_limit(h: Operator, noise: NoiseSpec) -> float:
    """Largest dt with dt·(‖H‖ + ½Σγ‖A‖²) within the RK4 accuracy bound."""
    norm = _prepare(h, noise).norm
    return STEP_BOUND / norm if norm > 0.0 else math.inf


@dataclass(frozen=True, eq=False)
class LindbladResult:
    rho: QuantumState
    times: tuple[float, ...]
    samples: tuple[QuantumState, ...]
    steps: int
    dt: float
    trace_drift: float
    min_eigenvalue: float


def _steps_for(t_final: float, dt_max: float) -> int:
    if math.isinf(dt_max):
        return 1
    return max(1, int(math.ceil(t_final / dt_max - 1e-12)))


def lindblad_evolve(
    h: Operator,
    noise: NoiseSpec,
    rho0: QuantumState,
    t_final: float,
    dt: float | None = None,
    steps: int | None = None,
    sample_every: int = 0,
) -> LindbladResult:
    """
    Integrate the master equation from 0 to t_final.

    Pass `steps` to pin the step count (e.g. for finite differences across
    neighbouring Hamiltonians); otherwise dt is derived from the step bound.
    Samples are taken every `sample_every` steps and always at t_final.
    """
    if rho0.space != h.space:
        raise SpaceMismatchError(f"ρ0 space {rho0.space} != H space {h.space}")
    if t_final < 0.0:
        raise ParameterError(f"t_final must be >= 0, got {t_final}")
    gen = _prepare(h, noise)
    dt_max = STEP_BOUND / gen.norm if gen.norm > 0.0 else math.inf
    if steps is None:
        steps = _steps_for(t_final, dt if dt is not None else dt_max)
    step = t_final / steps if steps else 0.0
    if step * gen.norm > STEP_BOUND * (1.0 + 1e-9):
        raise StepSizeError(
            f"step size too large: dt={step:.3g} with dt*norm={step * gen.norm:.3g} > {STEP_BOUND}",
            suggested_dt=dt_max,
        )

    rho = rho0.to_density().data.copy()
    samples: list[QuantumState] = []
    times: list[float] = []
    worst_drift = 0.0
    lowest = 0.0

    def record(k: int) -> None:
        nonlocal worst_drift, lowest
        drift = abs(np.trace(rho).real - 1.0)
        floor = float(sla.eigvalsh(rho)[0])
        worst_drift = max(worst_drift, drift)
        lowest = min(lowest, floor)
        if drift > TRACE_DRIFT_TOL or floor < -POSITIVITY_TOL:
            raise StepSizeError(
                f"step size too large: trace drift {drift:.2e}, min eigenvalue {floor:.2e} at t={k * step:.6g}",
                suggested_dt=step / 2.0,
            )
        samples.append(QuantumState(rho0.space, "density", rho, validate=False))
        times.append(k * step)

    for k in range(1, steps + 1):
        k1 = _rhs(gen, rho)
        k2 = _rhs(gen, rho + 0.5 * step * k1)
        k3 = _rhs(gen, rho + 0.5 * step * k2)
        k4 = _rhs(gen, rho + step * k3)
        rho = rho + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        if (sample_every and k % sample_every == 0) or k == steps:
            record(k)
    if steps == 0:
        record(0)

    logger.debug("lindblad: %d steps of dt=%.3g, drift=%.2e", steps, step, worst_drift)
    return LindbladResult(
        rho=samples[-1],
        times=tuple(times),
        samples=tuple(samples),
        steps=steps,
        dt=step,
        trace_drift=worst_drift,
        min_eigenvalue=lowest,
    )


def noisy_inverted_variance(
    g: float,
    omega: float,
    eta: float,
    noise: NoiseSpec,
    n: int = 1,
    cutoff: int | None = None,
) -> ProtocolPoint:
    """Homodyne readout of the full Rabi model under noise at τ_n, with the SLD QFI of ρ(τ_n)."""
    t = tau_n(g, omega, n)
    c = cutoff if cutoff is not None else max(required_cutoff(g, eta), 16)
    delta = NOISY_STEP * g
    models = [build_qrm_full(omega, eta, gv, c) for gv in (g, g + delta, g - delta)]
    space = models[0].space
    rho0 = canonical_initial_state(space).to_density()
    norm_max = max(_prepare(m.hamiltonian, noise).norm for m in models)
    steps = _steps_for(t, STEP_BOUND / norm_max)
    center, plus, minus = (lindblad_evolve(m.hamiltonian, noise, rho0, t, steps=steps).rho for m in models)

    x = ladder_ops(space).x
    mean = expect_real(x, center)
    var = variance(x, center)
    chi = (expect_real(x, plus) - expect_real(x, minus)) / (2.0 * delta)
    sld = qfi_sld(center, density_derivative(plus, minus, delta), g, t)
    weight = interior_weight(center)
    if weight >= NOISY_EDGE_TOL:
        logger.warning("noisy run at g=%s: edge weight %.2e at cutoff %d", g, weight, c)
    return ProtocolPoint(
        protocol="noise",
        model=models[0].name.value,
        parameter=g,
        delta=reduced_gap(g),
        time=t,
        n=n,
        mean=mean,
        variance=var,
        chi=chi,
        qfi_exact=sld.value,
        closed_form=32.0 * math.pi**2 * g * g * n * n / reduced_gap(g) ** 3,
        eta=eta,
        cutoff=c,
        converged=weight < NOISY_EDGE_TOL,
        extras=MappingProxyType(
            {
                "dephasing": noise.dephasing,
                "steps": steps,
                "edge_weight": weight,
            }
        ),
    )
