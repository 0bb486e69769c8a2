"""
Measurement protocols on the Rabi family.

Homodyne quadrature readout:
- canonical initial state |↓⟩⊗(|0⟩+i|1⟩)/√2 and closed-form ⟨X⟩_t, Var[X]_t
- susceptibility χ by Richardson-checked central differences
- inverted variance F = χ²/Var at the refocusing times τ_n
- frequency estimation and the peak dynamical excitation

Qubit Loschmidt-echo readout:
- working points where the conditioned frequency ratio has fractional part 1/2
- Loschmidt amplitude, ⟨σx⟩ and F for arbitrary qubit/boson preparations

Every simulated quantity is certified by hilbert.converge_cutoff.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import ConvergenceError, ParameterError
from .hilbert import (
    CutoffSample,
    Propagator,
    QuantumState,
    SpaceDescriptor,
    SpaceKind,
    converge_cutoff,
    expect_real,
    ladder_ops,
    product_state,
    variance,
)
from .models import (
    CriticalModel,
    build_qrm_conditioned,
    build_qrm_effective,
    conditioned_hamiltonians,
    coupling_for_ratio,
    rabi_frequency_ratio,
)
from .qfi import qfi_analytic, qfi_fidelity_exact, qfi_generator_full

logger = logging.getLogger(__name__)

SUSCEPTIBILITY_STEP = 1e-5
RICHARDSON_RTOL = 1e-4
DEFAULT_CUTOFF = 32
DEFAULT_CUTOFF_MAX = 1024
EXCITATION_SAMPLES = 201
FINITE_ETA_MARGIN = 10.0

InitialState = Callable[[SpaceDescriptor], QuantumState]
ModelBuilder = Callable[[float, int], CriticalModel]


def _check_normal_phase(g: float) -> None:
    if not 0.0 <= g < 1.0:
        raise ParameterError(f"protocol needs 0 <= g < 1 (normal phase), got {g}")


def reduced_gap(g: float) -> float:
    return 4.0 * (1.0 - g * g)


def finite_eta_bound(eta: float) -> float:
    """Smallest Δ_g at which the η → ∞ homodyne results hold at frequency ratio η."""
    if not eta >= 1.0:
        raise ParameterError(f"eta must be >= 1, got {eta}")
    return FINITE_ETA_MARGIN * eta ** (-1.0 / 3.0)


def canonical_initial_state(space: SpaceDescriptor) -> QuantumState:
    """|↓⟩⊗(|0⟩+i|1⟩)/√2, or the boson factor alone on a boson space."""
    boson = np.zeros(space.boson_dim, dtype=complex)
    boson[0] = 1.0 / math.sqrt(2.0)
    boson[1] = 1j / math.sqrt(2.0)
    if space.kind is SpaceKind.BOSON:
        return QuantumState.pure(space, boson)
    return product_state(space, (0.0, 1.0), boson)


class StatsSource(str, Enum):
    SIMULATED = "simulated"
    CLOSED_FORM = "closed_form"


@dataclass(frozen=True)
class QuadratureStats:
    mean_x: float
    var_x: float
    time: float
    source: StatsSource


def quadrature_closed_form(g: float, omega: float, t: float) -> QuadratureStats:
    if not 0.0 <= g < 1.0:
        raise ParameterError(f"closed form holds for 0 <= g < 1, got {g}")
    delta = reduced_gap(g)
    root = math.sqrt(delta)
    phase = root * omega * t
    mean = math.sqrt(2.0) / root * math.sin(phase / 2.0)
    var = 1.0 + (2.0 * g * g - 1.0) / delta * (1.0 - math.cos(phase))
    return QuadratureStats(mean, var, t, StatsSource.CLOSED_FORM)


def simulate_quadrature(
    model: CriticalModel, state: QuantumState, times: Sequence[float]
) -> list[QuadratureStats]:
    x = ladder_ops(model.space).x
    evolved = Propagator.from_hamiltonian(model.hamiltonian).evolve_many(state, times)
    return [
        QuadratureStats(expect_real(x, s), variance(x, s), t, StatsSource.SIMULATED)
        for s, t in zip(evolved, times)
    ]


def tau_n(g: float, omega: float, n: int) -> float:
    if not 0.0 <= g < 1.0:
        raise ParameterError(f"tau_n needs 0 <= g < 1, got {g}")
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return 2.0 * n * math.pi / (math.sqrt(reduced_gap(g)) * omega)


def susceptibility(
    observable_fn: Callable[[float, float], float],
    param: float,
    t: float,
    delta: float | None = None,
    lower: float = -math.inf,
) -> float:
    """
    ∂_param f(param, t), Richardson-combined over δ and δ/2.

    Central differences, or the second-order forward stencil when param − δ
    would leave the domain bounded below by `lower`.
    """
    step = delta if delta is not None else SUSCEPTIBILITY_STEP * max(abs(param), 1.0)
    if step <= 0.0:
        raise ParameterError(f"finite-difference step must be > 0, got {step}")
    if param < lower:
        raise ParameterError(f"param={param} is below the domain bound {lower}")
    one_sided = param - step < lower

    def evaluate(x: float) -> float:
        value = observable_fn(x, t)
        if not math.isfinite(value):
            raise ConvergenceError(f"non-finite observable near param={param} (at {x:.6g})")
        return value

    def difference(h: float) -> float:
        if one_sided:
            return (-3.0 * evaluate(param) + 4.0 * evaluate(param + h) - evaluate(param + 2.0 * h)) / (2.0 * h)
        return (evaluate(param + h) - evaluate(param - h)) / (2.0 * h)

    coarse = difference(step)
    fine = difference(step / 2.0)
    if abs(coarse - fine) > RICHARDSON_RTOL * max(abs(fine), 1e-8):
        logger.warning(
            "Richardson disagreement in susceptibility at param=%s: %.10g vs %.10g", param, coarse, fine
        )
    return (4.0 * fine - coarse) / 3.0


@dataclass(frozen=True)
class ProtocolPoint:
    protocol: str
    model: str
    parameter: float
    delta: float
    time: float
    n: int
    mean: float
    variance: float
    chi: float
    qfi_analytic: float = math.nan
    qfi_exact: float = math.nan
    closed_form: float = math.nan
    eta: float = math.inf
    cutoff: int = 0
    converged: bool = True
    extras: Mapping[str, Any] = field(default_factory=dict)

    @property
    def inverted_variance(self) -> float:
        if self.variance == 0.0:
            return math.inf if self.chi != 0.0 else 0.0
        return self.chi * self.chi / self.variance


@dataclass(frozen=True)
class _HomodyneRun:
    model: CriticalModel
    initial: QuantumState
    mean: float
    var: float
    chi: float


def _homodyne_sample(build: ModelBuilder, g: float, t: float, initial: InitialState) -> Callable[[int], CutoffSample]:
    def evaluate(cutoff: int) -> CutoffSample:
        model = build(g, cutoff)
        psi0 = initial(model.space)
        x = ladder_ops(model.space).x
        psi_t = Propagator.from_hamiltonian(model.hamiltonian).evolve(psi0, t)

        def mean_x(gv: float, tv: float) -> float:
            shifted = model.with_parameter(gv)
            return expect_real(x, Propagator.from_hamiltonian(shifted.hamiltonian).evolve(psi0, tv))

        chi = susceptibility(mean_x, g, t, lower=0.0)
        mean = expect_real(x, psi_t)
        var = variance(x, psi_t)
        value = chi * chi / var if var > 0 else math.inf
        return CutoffSample(value, (psi_t,), _HomodyneRun(model, psi0, mean, var, chi))

    return evaluate


def homodyne_point(
    build: ModelBuilder,
    g: float,
    t: float,
    n: int = 1,
    initial: InitialState = canonical_initial_state,
    cutoff: int = DEFAULT_CUTOFF,
    cutoff_max: int = DEFAULT_CUTOFF_MAX,
    with_qfi: bool = True,
) -> ProtocolPoint:
    """Homodyne readout of ⟨X⟩ at time t for any model family builder (g, cutoff) -> model."""
    result = converge_cutoff(_homodyne_sample(build, g, t, initial), initial=cutoff, maximum=cutoff_max)
    run: _HomodyneRun = result.sample.payload
    qa = qe = math.nan
    if with_qfi and run.model.has_gap and run.model.delta > 0.0:
        qa = qfi_analytic(run.model, run.initial, t).value
        qe = qfi_generator_full(run.model, run.initial, t).value
    return ProtocolPoint(
        protocol="quadrature",
        model=run.model.name.value,
        parameter=g,
        delta=run.model.reduced_delta,
        time=t,
        n=n,
        mean=run.mean,
        variance=run.var,
        chi=run.chi,
        qfi_analytic=qa,
        qfi_exact=qe,
        eta=float(run.model.params.get("eta", math.inf)),
        cutoff=result.cutoff,
        converged=result.converged,
        extras=MappingProxyType({"edge_weight": result.edge_weight}),
    )


def homodyne_value(
    build: ModelBuilder,
    g: float,
    t: float,
    cutoff: int,
    initial: InitialState = canonical_initial_state,
) -> float:
    """F = χ²/Var at one fixed cutoff, without certification."""
    return _homodyne_sample(build, g, t, initial)(cutoff).value


def quadrature_peak_closed_form(g: float, n: int) -> float:
    """32π²g²Δ_g⁻³n² for the canonical initial state."""
    _check_normal_phase(g)
    return 32.0 * math.pi**2 * g * g * n * n / reduced_gap(g) ** 3


def inverted_variance_quadrature(
    g: float,
    omega: float = 1.0,
    n: int = 1,
    initial: InitialState = canonical_initial_state,
    cutoff: int = DEFAULT_CUTOFF,
    cutoff_max: int = DEFAULT_CUTOFF_MAX,
) -> ProtocolPoint:
    _check_normal_phase(g)
    t = tau_n(g, omega, n)

    def build(gv: float, c: int) -> CriticalModel:
        return build_qrm_effective(omega, gv, c)

    point = homodyne_point(build, g, t, n, initial, cutoff, cutoff_max)
    return _replace_closed_form(point, quadrature_peak_closed_form(g, n))


def quadrature_trace_point(
    g: float,
    t: float,
    omega: float = 1.0,
    initial: InitialState = canonical_initial_state,
    cutoff: int = DEFAULT_CUTOFF,
    cutoff_max: int = DEFAULT_CUTOFF_MAX,
) -> ProtocolPoint:
    """
    Homodyne readout of the effective model at an arbitrary time t.

    The point carries n = 0 and no closed form, since t need not be a
    refocusing time. `qfi_exact` holds the generator QFI at t.
    """
    _check_normal_phase(g)
    if not (math.isfinite(t) and t >= 0.0):
        raise ParameterError(f"t must be finite and >= 0, got {t}")

    def build(gv: float, c: int) -> CriticalModel:
        return build_qrm_effective(omega, gv, c)

    return homodyne_point(build, g, t, 0, initial, cutoff, cutoff_max)


def _replace_closed_form(point: ProtocolPoint, value: float, **extras: Any) -> ProtocolPoint:
    merged = dict(point.extras)
    merged.update(extras)
    return replace(point, closed_form=value, extras=MappingProxyType(merged))


def peak_excitation(
    model: CriticalModel, state: QuantumState, t_max: float, samples: int = EXCITATION_SAMPLES
) -> float:
    """max over [0, t_max] of ⟨N⟩_t − ⟨N⟩_0."""
    if samples < 3:
        raise ParameterError(f"need at least 3 samples, got {samples}")
    number = ladder_ops(model.space).n
    prop = Propagator.from_hamiltonian(model.hamiltonian)
    times = np.linspace(0.0, t_max, samples)
    values = [expect_real(number, s) for s in prop.evolve_many(state, times)]
    best = int(np.argmax(values))
    lo = times[max(best - 1, 0)]
    hi = times[min(best + 1, samples - 1)]
    refined = minimize_scalar(
        lambda tv: -expect_real(number, prop.evolve(state, tv)),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    peak = max(values[best], -float(refined.fun))
    return peak - values[0]


def frequency_inverted_variance(
    g: float,
    omega: float = 1.0,
    n: int = 1,
    cutoff: int = DEFAULT_CUTOFF,
    cutoff_max: int = DEFAULT_CUTOFF_MAX,
) -> ProtocolPoint:
    """
    Homodyne estimation of ω at fixed coupling λ_cpl and qubit frequency ω₀.

    The coupling scales as g(ω') = g·√(ω/ω'); the evolution time is held fixed
    in units of 1/ω, so ω enters the readout only through g.
    """
    _check_normal_phase(g)
    tau = tau_n(g, omega, n)
    scaled = omega * tau

    def build(gv: float, c: int) -> CriticalModel:
        return build_qrm_effective(1.0, gv, c)

    base = homodyne_point(build, g, scaled, n, canonical_initial_state, cutoff, cutoff_max, with_qfi=False)
    model = build(g, base.cutoff)
    psi0 = canonical_initial_state(model.space)
    x = ladder_ops(model.space).x

    def mean_x(w: float, tv: float) -> float:
        shifted = model.with_parameter(g * math.sqrt(omega / w))
        return expect_real(x, Propagator.from_hamiltonian(shifted.hamiltonian).evolve(psi0, tv))

    chi_omega = susceptibility(mean_x, omega, scaled)
    excitation = peak_excitation(model, psi0, scaled)
    f_omega = chi_omega * chi_omega / base.variance
    delta = reduced_gap(g)
    return ProtocolPoint(
        protocol="frequency",
        model=model.name.value,
        parameter=g,
        delta=delta,
        time=tau,
        n=n,
        mean=base.mean,
        variance=base.variance,
        chi=chi_omega,
        closed_form=2.0 * g**4 / delta**2 * tau * tau,
        cutoff=base.cutoff,
        converged=base.converged,
        extras=MappingProxyType(
            {
                "omega": omega,
                "peak_excitation": excitation,
                "excitation_bound": 2.0 * g**4 / delta,
                "heisenberg_ratio": f_omega / (excitation * excitation * tau * tau),
                "heisenberg_prefactor": 1.0 / (2.0 * g**4),
            }
        ),
    )


@dataclass(frozen=True)
class WorkingPoint:
    m: int
    g_o: float
    r_value: float
    tau: float


def working_points(m_max: int, omega: float = 1.0) -> list[WorkingPoint]:
    if m_max < 1:
        raise ParameterError(f"m_max must be >= 1, got {m_max}")
    return [working_point(m, omega) for m in range(1, m_max + 1)]


def working_point(m: int, omega: float = 1.0) -> WorkingPoint:
    if m < 1:
        raise ParameterError(f"branch m must be >= 1, got {m}")
    ratio = m + 0.5
    g_o = coupling_for_ratio(ratio)
    return WorkingPoint(m, g_o, ratio, 4.0 * math.pi / (math.sqrt(reduced_gap(g_o)) * omega))


@dataclass(frozen=True)
class LoschmidtResult:
    amplitude: complex
    sigma_x: float
    variance: float
    chi: float
    inverted_variance: float


def _normalized_qubit(c_up: complex, c_down: complex) -> tuple[complex, complex]:
    norm = abs(c_up) ** 2 + abs(c_down) ** 2
    if abs(norm - 1.0) > 1e-10:
        raise ParameterError(f"|c_up|^2 + |c_down|^2 must be 1, got {norm!r}")
    return complex(c_up), complex(c_down)


def loschmidt_amplitude(model: CriticalModel, phi: QuantumState, t: float) -> complex:
    """⟨φ|u_↑† u_↓|φ⟩ with u_σ generated by the conditioned Hamiltonians."""
    h_up, h_down = conditioned_hamiltonians(model)
    up = Propagator.from_hamiltonian(h_up).evolve(phi, t)
    down = Propagator.from_hamiltonian(h_down).evolve(phi, t)
    return complex(np.vdot(up.data, down.data))


def _boson_state(phi: Any, space: SpaceDescriptor) -> QuantumState:
    if callable(phi):
        return phi(space)
    if isinstance(phi, QuantumState):
        return phi
    return QuantumState.pure(space, phi)


def loschmidt(
    g: float,
    omega: float,
    phi_b: InitialState | QuantumState,
    c_up: complex,
    c_down: complex,
    t: float,
    cutoff: int = DEFAULT_CUTOFF,
) -> LoschmidtResult:
    _check_normal_phase(g)
    c_up, c_down = _normalized_qubit(c_up, c_down)
    weight = np.conj(c_up) * c_down
    model = build_qrm_effective(omega, g, cutoff)
    phi = _boson_state(phi_b, model.space)

    def sigma_x(gv: float, tv: float) -> float:
        return 2.0 * float(np.real(weight * loschmidt_amplitude(model.with_parameter(gv), phi, tv)))

    amplitude = loschmidt_amplitude(model, phi, t)
    sx = 2.0 * float(np.real(weight * amplitude))
    var = max(1.0 - sx * sx, 0.0)
    chi = susceptibility(sigma_x, g, t, lower=0.0)
    f = chi * chi / var if var > 0 else (math.inf if chi != 0.0 else 0.0)
    return LoschmidtResult(amplitude, sx, var, chi, f)


def loschmidt_closed_form(g: float) -> float:
    """F at a working point for |φ⟩_b = |0⟩ and 2c_↑*c_↓ = 1."""
    _check_normal_phase(g)
    c = math.sqrt(1.0 - g * g)
    chi = math.pi * g / (2.0 * c) * (2.0 + 1.0 / (1.0 + g * g) + 1.0 / (1.0 - g * g))
    return chi * chi


def _vacuum(space: SpaceDescriptor) -> QuantumState:
    vec = np.zeros(space.dim, dtype=complex)
    vec[0] = 1.0
    return QuantumState.pure(space, vec)


def loschmidt_point(
    wp: WorkingPoint,
    omega: float = 1.0,
    phi_b: InitialState = _vacuum,
    c_up: complex = 1.0 / math.sqrt(2.0),
    c_down: complex = 1.0 / math.sqrt(2.0),
    cutoff: int = DEFAULT_CUTOFF,
    cutoff_max: int = DEFAULT_CUTOFF_MAX,
    with_qfi: bool = True,
) -> ProtocolPoint:
    """Qubit readout at a working point with the cutoff certified on the conditioned states."""
    g = wp.g_o
    t = wp.tau

    def evaluate(c: int) -> CutoffSample:
        res = loschmidt(g, omega, phi_b, c_up, c_down, t, c)
        model = build_qrm_effective(omega, g, c)
        phi = _boson_state(phi_b, model.space)
        h_up, h_down = conditioned_hamiltonians(model)
        states = (
            Propagator.from_hamiltonian(h_up).evolve(phi, t),
            Propagator.from_hamiltonian(h_down).evolve(phi, t),
        )
        return CutoffSample(res.inverted_variance, states, res)

    result = converge_cutoff(evaluate, initial=cutoff, maximum=cutoff_max)
    res: LoschmidtResult = result.sample.payload
    qe = math.nan
    if with_qfi:
        cond = build_qrm_conditioned(omega, g, result.cutoff)
        boson = _boson_state(phi_b, cond.space.boson_factor())
        psi0 = product_state(cond.space, (c_up, c_down), boson.data)
        qe = qfi_fidelity_exact(cond, psi0, t).value
    return ProtocolPoint(
        protocol="loschmidt",
        model="qrm_conditioned",
        parameter=g,
        delta=reduced_gap(g),
        time=t,
        n=wp.m,
        mean=res.sigma_x,
        variance=res.variance,
        chi=res.chi,
        qfi_exact=qe,
        closed_form=loschmidt_closed_form(g),
        cutoff=result.cutoff,
        converged=result.converged,
        extras=MappingProxyType(
            {
                "amplitude_re": res.amplitude.real,
                "amplitude_im": res.amplitude.imag,
                "ratio": rabi_frequency_ratio(g),
                "edge_weight": result.edge_weight,
            }
        ),
    )


def response_fwhm(
    response: Callable[[float], float],
    center: float,
    span: float,
    lower: float = 0.0,
    upper: float = 1.0,
    samples: int = 41,
) -> float:
    """Full width at half maximum of response(x) around `center`; nan when a side never halves."""
    peak = response(center)
    if not (math.isfinite(peak) and peak > 0.0):
        return math.nan
    half = peak / 2.0

    def excess(x: float) -> float:
        return response(x) - half

    edges = []
    for direction in (-1.0, 1.0):
        end = center + direction * span
        end = max(end, lower + 1e-12) if direction < 0 else min(end, upper - 1e-12)
        grid = np.linspace(center, end, samples // 2 + 1)
        crossing = math.nan
        prev = center
        for x in grid[1:]:
            if excess(x) < 0.0:
                crossing = brentq(excess, min(prev, x), max(prev, x), xtol=1e-12)
                break
            prev = x
        if math.isnan(crossing):
            logger.warning("response never halves between %s and %s", center, end)
            return math.nan
        edges.append(crossing)
    return edges[1] - edges[0]
