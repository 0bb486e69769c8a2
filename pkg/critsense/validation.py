"""
Invariant checks behind `critsense validate`.

Fast checks run in seconds on small truncations. Slow checks reproduce the
scaling laws over full grids and can take from minutes to hours.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ETA_DECADES, build_config
from .errors import CritSenseError
from .hilbert import (
    Propagator,
    SpaceDescriptor,
    coherent_state,
    expect_real,
    fock_state,
    ladder_ops,
    pauli_ops,
    product_state,
    variance,
    zero,
)
from .models import (
    build_linear,
    build_lmg,
    build_opo,
    build_qrm_effective,
    build_qrm_full,
    commutator_residual,
    fractional_ratio,
    required_cutoff,
    spectral_gap,
)
from .openquantum import NoiseSpec, lindblad_evolve, noisy_inverted_variance, step_limit
from .oracle import moments_evolve, moments_from_state, quadratic_form, symplectic_propagator, symplectic_residual
from .protocols import (
    canonical_initial_state,
    finite_eta_bound,
    frequency_inverted_variance,
    inverted_variance_quadrature,
    loschmidt_amplitude,
    loschmidt_point,
    quadrature_closed_form,
    reduced_gap,
    simulate_quadrature,
    tau_n,
    working_point,
    working_points,
)
from .qfi import generator, qfi_fidelity_exact, qfi_generator_full
from .runner import eta_optimum, finite_eta_point, fit_powerlaw, qfi_record

logger = logging.getLogger(__name__)

Outcome = tuple[bool, str]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    slow: bool = False


def check_truncation_identity() -> Outcome:
    cutoff = 16
    lad = ladder_ops(SpaceDescriptor.boson(cutoff))
    comm = lad.a.commutator(lad.adag).matrix
    expected = np.eye(cutoff + 1)
    expected[-1, -1] = -float(cutoff)
    err = float(np.max(np.abs(comm - expected)))
    return err < 1e-12, f"max |[a,a†] − (I − (N+1)·P_top)| = {err:.2e}"


def check_propagator() -> Outcome:
    model = build_qrm_effective(1.0, 0.8, 64)
    prop = Propagator.from_hamiltonian(model.hamiltonian)
    u = prop.unitary(3.0).matrix
    unitarity = float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
    rebuilt = prop.reconstruction_residual()
    psi0 = canonical_initial_state(model.space)
    drift = abs(expect_real(model.hamiltonian, prop.evolve(psi0, 5.0)) - expect_real(model.hamiltonian, psi0))
    ok = unitarity < 1e-10 and rebuilt < 1e-10 and drift < 1e-9
    return ok, f"unitarity {unitarity:.2e}, reconstruction {rebuilt:.2e}, energy drift {drift:.2e}"


def check_commutator_identity() -> Outcome:
    models = [build_qrm_effective(1.0, g, 64) for g in (0.3, 0.5, 0.8)]
    models += [build_opo(1.0, k, 64) for k in (0.1, 0.3)]
    models += [build_lmg(0.0, lam, 64) for lam in (1.3, 1.6)]
    worst = max(commutator_residual(m) for m in models)
    return worst < 1e-8, f"worst residual {worst:.2e} over {len(models)} models"


def check_spectral_gap() -> Outcome:
    worst = 0.0
    for g in (0.3, 0.6, 0.9):
        model = build_qrm_effective(1.0, g, 256)
        worst = max(worst, abs(spectral_gap(model) - model.delta) / model.delta)
    return worst < 1e-6, f"worst relative gap error {worst:.2e}"


def check_generator_hermitian() -> Outcome:
    models = [build_qrm_effective(1.0, 0.8, 48), build_opo(1.0, 0.2, 48), build_lmg(0.0, 1.4, 48)]
    worst = max(generator(m, 2.7).hermiticity_residual() for m in models)
    return worst < 1e-10, f"worst generator hermiticity residual {worst:.2e}"


def check_quadrature_closed_form() -> Outcome:
    worst = 0.0
    for g in (0.5, 0.8, 0.95):
        model = build_qrm_effective(1.0, g, 256)
        psi0 = canonical_initial_state(model.space)
        times = np.linspace(0.0, 2.0 * tau_n(g, 1.0, 1), 200)
        for sim in simulate_quadrature(model, psi0, times):
            ref = quadrature_closed_form(g, 1.0, sim.time)
            worst = max(
                worst,
                abs(sim.mean_x - ref.mean_x) / max(1.0, abs(ref.mean_x)),
                abs(sim.var_x - ref.var_x) / max(1.0, abs(ref.var_x)),
            )
    return worst < 1e-6, f"worst relative deviation {worst:.2e}"


def check_oracle() -> Outcome:
    models = [build_qrm_effective(1.0, 0.8, 128), build_opo(1.0, 0.1, 128), build_lmg(0.0, 1.3, 128)]
    worst = 0.0
    for model in models:
        qf = quadratic_form(model)
        worst = max(worst, symplectic_residual(symplectic_propagator(qf, 1.7)))
        psi0 = canonical_initial_state(model.space)
        m0 = moments_from_state(psi0)
        prop = Propagator.from_hamiltonian(model.hamiltonian)
        times = np.linspace(0.0, 10.0, 25)
        for t, psi in zip(times, prop.evolve_many(psi0, times)):
            ref = moments_evolve(qf, m0, t)
            sim = moments_from_state(psi)
            worst = max(worst, abs(sim.mean_x - ref.mean_x), abs(sim.var_x - ref.var_x))
    return worst < 1e-6, f"worst moment deviation {worst:.2e}"


def check_inverted_variance_peak() -> Outcome:
    ratios = []
    bound_ok = True
    for n in (1, 2):
        for g in np.linspace(0.7, 0.95, 8):
            point = inverted_variance_quadrature(float(g), 1.0, n)
            ratios.append(point.inverted_variance / point.closed_form)
            bound_ok &= point.inverted_variance <= 1.02 * point.qfi_exact
    ok = bound_ok and all(0.99 <= r <= 1.01 for r in ratios)
    return ok, f"F/closed form in [{min(ratios):.5f}, {max(ratios):.5f}], F <= QFI: {bound_ok}"


def check_heisenberg_limit() -> Outcome:
    details = []
    ok = True
    for g in (0.7, 0.8, 0.9):
        extras = frequency_inverted_variance(g).extras
        scaled = extras["heisenberg_ratio"] / extras["heisenberg_prefactor"]
        excitation = extras["peak_excitation"] / extras["excitation_bound"]
        ok &= 0.9 <= scaled <= 1.1 and 1.0 / 1.5 <= excitation <= 1.5
        details.append(f"g={g}: {scaled:.4f}")
    return ok, "F_ω·2g⁴/(⟨N⟩τ)² " + ", ".join(details)


def check_working_points() -> Outcome:
    points = working_points(6)
    fractions = [fractional_ratio(wp.g_o) for wp in points]
    increasing = all(a.g_o < b.g_o for a, b in zip(points, points[1:]))
    ok = increasing and all(abs(f - 0.5) < 1e-12 for f in fractions) and abs(points[0].g_o - 0.6202) < 1e-3
    return ok, f"g_o from {points[0].g_o:.4f} to {points[-1].g_o:.4f}"


def check_loschmidt_closed_form() -> Outcome:
    ratios = []
    for m in (1, 2, 3):
        point = loschmidt_point(working_point(m), with_qfi=False)
        ratios.append(point.inverted_variance / point.closed_form)
    worst = max(abs(r - 1.0) for r in ratios)
    return worst < 1e-3, f"worst |F/closed form − 1| = {worst:.2e}"


def check_lindblad_limits() -> Outcome:
    model = build_qrm_effective(1.0, 0.5, 8)
    psi0 = canonical_initial_state(model.space)
    t = 1.0
    steps = 4 * max(1, math.ceil(t / step_limit(model.hamiltonian, NoiseSpec())))
    res = lindblad_evolve(model.hamiltonian, NoiseSpec(), psi0.to_density(), t, steps=steps)
    exact = Propagator.from_hamiltonian(model.hamiltonian).evolve(psi0, t).to_density().data
    unitary_err = float(np.max(np.abs(res.rho.data - exact)))

    rate, t = 0.3, 1.5
    space = SpaceDescriptor.composite(4)
    c = 1.0 / math.sqrt(2.0)
    plus = product_state(space, (c, c), fock_state(space.boson_factor(), 0).data)
    deph = lindblad_evolve(zero(space), NoiseSpec(dephasing=rate), plus.to_density(), t, steps=200)
    sx = expect_real(pauli_ops(space).sx, deph.rho)
    deph_err = abs(sx - math.exp(-2.0 * rate * t)) / math.exp(-2.0 * rate * t)

    boson = SpaceDescriptor.boson(12)
    number = ladder_ops(boson).n
    start = coherent_state(boson, 1.0)
    damp = lindblad_evolve(zero(boson), NoiseSpec(boson_decay=rate), start.to_density(), t, steps=200)
    target = expect_real(number, start) * math.exp(-rate * t)
    damp_err = abs(expect_real(number, damp.rho) - target) / target

    ok = unitary_err < 1e-8 and deph_err < 1e-5 and damp_err < 1e-5 and res.trace_drift < 1e-7
    return ok, f"unitary {unitary_err:.2e}, dephasing {deph_err:.2e}, damping {damp_err:.2e}"


def check_number_generator_qfi() -> Outcome:
    space = SpaceDescriptor.boson(40)
    number = ladder_ops(space).n
    model = build_linear(zero(space), number, 0.7)
    alpha, t = 1.2, 1.3
    psi0 = coherent_state(space, alpha)
    expected = 4.0 * t * t * alpha * alpha
    gen = qfi_generator_full(model, psi0, t).value
    fid = qfi_fidelity_exact(model, psi0, t).value
    worst = max(abs(gen - expected), abs(fid - expected)) / expected
    return worst < 1e-4, f"generator {gen:.6g}, fidelity {fid:.6g}, expected {expected:.6g}"


def check_qfi_consistency() -> Outcome:
    config = build_config("qfi", overrides={"grid_values": (0.995,), "state": "vacuum"})
    rec = qfi_record(config, 0.995)
    fid = abs(rec.qfi_exact - rec.qfi_generator) / rec.qfi_generator
    ok = fid < 1e-2 and abs(rec.ratio - 1.0) < 0.05
    return ok, f"Δ={rec.delta:.3g}: fidelity/generator −1 = {fid:.2e}, analytic/generator = {rec.ratio:.4f}"


def check_hamiltonian_split() -> Outcome:
    worst = 0.0
    reference = build_qrm_effective(1.0, 0.3, 48)
    for g in (0.3, 0.6, 0.9, 0.99):
        model = build_qrm_effective(1.0, g, 48)
        if model.lam != g * g:
            return False, f"λ={model.lam!r} is not g² at g={g}"
        split = reference.h0 + (g * g) * reference.h1
        worst = max(worst, float(np.max(np.abs(model.hamiltonian.matrix - split.matrix))))
    for model in (build_opo(1.3, 0.2, 48), build_lmg(0.2, 1.6, 48)):
        split = model.h0 + model.lam * model.h1
        worst = max(worst, float(np.max(np.abs(model.hamiltonian.matrix - split.matrix))))
    return worst < 1e-12, f"max |H − (H₀ + λH₁)| = {worst:.2e}"


def check_commutator_operators() -> Outcome:
    worst_herm = worst_adj = 0.0
    for model in (build_qrm_effective(1.0, 0.8, 48), build_opo(1.0, 0.2, 48), build_lmg(0.0, 1.4, 48)):
        for op in (model.c_op, model.d_op):
            worst_herm = max(worst_herm, op.hermiticity_residual() / max(1.0, op.max_abs))
        adjoint = (-1j * model.sqrt_gap()) * model.c_op - model.d_op
        scale = max(1.0, model.lambda_op.max_abs)
        worst_adj = max(worst_adj, float(np.max(np.abs(model.lambda_op.dag.matrix - adjoint.matrix))) / scale)
    ok = worst_herm < 1e-12 and worst_adj < 1e-12
    return ok, f"C, D relative hermiticity {worst_herm:.2e}, Λ† relative residual {worst_adj:.2e}"


def check_qfi_divergence() -> Outcome:
    couplings = (0.8, 0.9, 0.95, 0.98)
    config = build_config("qfi", overrides={"grid_values": couplings, "state": "vacuum"})
    values = [qfi_record(config, g).qfi_generator for g in couplings]
    ok = all(a < b for a, b in zip(values, values[1:]))
    return ok, "4·Var[h] = " + ", ".join(f"{v:.4g}" for v in values)


def check_small_time_qfi() -> Outcome:
    model = build_qrm_effective(1.0, 0.8, 48)
    psi0 = canonical_initial_state(model.space)
    scale = 4.0 * variance(model.h1, psi0) * model.jacobian**2
    errors = [abs(qfi_generator_full(model, psi0, t).value / (scale * t * t) - 1.0) for t in (1e-2, 1e-3, 1e-4)]
    ok = errors[-1] < 1e-3 and errors[0] > errors[1] > errors[2]
    return ok, "|I/(4t²Var[H₁]) − 1| = " + ", ".join(f"{e:.2e}" for e in errors)


def check_loschmidt_bounds() -> Outcome:
    wp = working_point(1)
    space = SpaceDescriptor.boson(32)
    starts = (fock_state(space, 0), coherent_state(space, 0.5), fock_state(space, 2))
    model = build_qrm_effective(1.0, wp.g_o, 32)
    largest = 0.0
    for phi in starts:
        for t in np.linspace(0.0, 2.0 * wp.tau, 9):
            largest = max(largest, abs(loschmidt_amplitude(model, phi, float(t))))
    ratios = []
    for m in (1, 2):
        point = loschmidt_point(working_point(m))
        ratios.append(point.inverted_variance / point.qfi_exact)
    ok = largest <= 1.0 + 1e-12 and all(r <= 1.02 for r in ratios)
    return ok, f"max |G| = {largest:.12f}, F/QFI = " + ", ".join(f"{r:.4f}" for r in ratios)


def check_lindblad_step_halving() -> Outcome:
    g, eta, t = 0.5, 4.0, 2.0
    model = build_qrm_full(1.0, eta, g, required_cutoff(g, eta))
    rho0 = canonical_initial_state(model.space).to_density()
    noise = NoiseSpec.from_dephasing(0.1)
    steps = max(1, math.ceil(t / step_limit(model.hamiltonian, noise)))
    coarse = lindblad_evolve(model.hamiltonian, noise, rho0, t, steps=steps).rho.data
    fine = lindblad_evolve(model.hamiltonian, noise, rho0, t, steps=2 * steps).rho.data
    change = float(np.max(np.abs(coarse - fine)))
    return change < 1e-5, f"max |ρ(dt) − ρ(dt/2)| = {change:.2e} over {steps} steps"


def check_oracle_branches() -> Outcome:
    cases = (
        (build_qrm_effective(1.0, 0.8, 16), "trigonometric"),
        (build_opo(1.0, 0.5, 16), "polynomial"),
        (build_opo(1.0, 0.6, 16), "hyperbolic"),
        (build_lmg(0.0, 0.5, 16), "hyperbolic"),
    )
    wrong = []
    for model, expected in cases:
        qf = quadratic_form(model)
        if qf.branch != expected or (qf.det > 0) != (model.delta > 0):
            wrong.append(f"{model.name.value} λ={model.lam:g}: {qf.branch}")
        s = symplectic_propagator(qf, 1.3)
        if symplectic_residual(s) > 1e-10:
            wrong.append(f"{model.name.value} λ={model.lam:g}: not symplectic")
    return not wrong, "; ".join(wrong) or f"{len(cases)} branches match sign(det M)"


def check_refocusing_moments() -> Outcome:
    worst = 0.0
    smallest_chi = math.inf
    for n in (1, 2):
        for g in (0.6, 0.8, 0.9):
            point = inverted_variance_quadrature(g, 1.0, n)
            worst = max(worst, abs(point.mean), abs(point.variance - 1.0))
            smallest_chi = min(smallest_chi, abs(point.chi))
    ok = worst < 1e-6 and smallest_chi > 1.0
    return ok, f"max(|⟨X⟩|, |Var − 1|) = {worst:.2e}, min |χ| = {smallest_chi:.4g}"


def check_finite_eta_validity() -> Outcome:
    config = build_config("finite_eta")
    ratios = []
    for eta in (1e2, 1e3, 1e4):
        g = math.sqrt(1.0 - finite_eta_bound(eta) / 4.0)
        point = finite_eta_point(config, eta, g)
        ratios.append(point.inverted_variance / point.closed_form)
    ok = all(r >= 0.9 for r in ratios)
    return ok, "F(η)/F at Δ_g = 10η^(−1/3): " + ", ".join(f"{r:.4f}" for r in ratios)


def check_quadrature_slope() -> Outcome:
    pts = []
    for g in np.linspace(0.7, 0.97, 8):
        point = inverted_variance_quadrature(float(g))
        pts.append((point.delta, point.inverted_variance / (g * g)))
    fit = fit_powerlaw(pts)
    return abs(fit.exponent + 3.0) <= 0.05, f"slope {fit.exponent:.4f}"


def check_loschmidt_slope() -> Outcome:
    pts = []
    for m in range(10, 21):
        point = loschmidt_point(working_point(m), with_qfi=False)
        pts.append((point.delta, point.inverted_variance))
    fit = fit_powerlaw(pts)
    return abs(fit.exponent + 3.0) <= 0.1, f"slope {fit.exponent:.4f} on m=10..20"


def check_finite_eta_slope() -> Outcome:
    config = build_config("finite_eta")
    optima = [eta_optimum(config, eta) for eta in ETA_DECADES]
    fit = fit_powerlaw([(o["eta"], o["delta_o"]) for o in optima])
    return abs(fit.exponent + 0.358) <= 0.05, f"slope {fit.exponent:.4f}"


def check_noise_exponent() -> Outcome:
    config = build_config("noise")
    couplings = config.grid()
    bound = finite_eta_bound(config.eta)
    if min(reduced_gap(g) for g in couplings) < bound:
        return False, f"noise grid reaches below Δ_g = {bound:.3g} at eta={config.eta:.6g}"
    alphas = []
    curves = []
    for rate in config.dephasing:
        noise = NoiseSpec.from_dephasing(rate)
        points = [noisy_inverted_variance(g, config.omega, config.eta, noise, config.n) for g in couplings]
        curves.append([p.inverted_variance for p in points])
        alphas.append(-fit_powerlaw([(p.delta, p.inverted_variance / (p.parameter**2)) for p in points]).exponent)
    ok = abs(alphas[0] - 3.0) <= 0.05 and all(1.0 < a < 3.0 for a in alphas[1:])
    ok &= all(a > b for a, b in zip(alphas, alphas[1:]))
    ok &= all(x > y for lo, hi in zip(curves, curves[1:]) for x, y in zip(lo, hi))
    return ok, f"eta={config.eta:.6g}: α = " + ", ".join(f"{a:.3f}" for a in alphas)


FAST_CHECKS: tuple[tuple[str, Callable[[], Outcome]], ...] = (
    ("truncation_identity", check_truncation_identity),
    ("propagator", check_propagator),
    ("commutator_identity", check_commutator_identity),
    ("spectral_gap", check_spectral_gap),
    ("generator_hermitian", check_generator_hermitian),
    ("quadrature_closed_form", check_quadrature_closed_form),
    ("oracle_moments", check_oracle),
    ("inverted_variance_peak", check_inverted_variance_peak),
    ("heisenberg_limit", check_heisenberg_limit),
    ("working_points", check_working_points),
    ("loschmidt_closed_form", check_loschmidt_closed_form),
    ("lindblad_limits", check_lindblad_limits),
    ("number_generator_qfi", check_number_generator_qfi),
    ("qfi_consistency", check_qfi_consistency),
    ("hamiltonian_split", check_hamiltonian_split),
    ("commutator_operators", check_commutator_operators),
    ("qfi_divergence", check_qfi_divergence),
    ("small_time_qfi", check_small_time_qfi),
    ("loschmidt_bounds", check_loschmidt_bounds),
    ("lindblad_step_halving", check_lindblad_step_halving),
    ("oracle_branches", check_oracle_branches),
    ("refocusing_moments", check_refocusing_moments),
    ("finite_eta_validity", check_finite_eta_validity),
)

SLOW_CHECKS: tuple[tuple[str, Callable[[], Outcome]], ...] = (
    ("quadrature_slope", check_quadrature_slope),
    ("loschmidt_slope", check_loschmidt_slope),
    ("finite_eta_slope", check_finite_eta_slope),
    ("noise_exponent", check_noise_exponent),
)


def run_checks(slow: bool = False) -> list[CheckResult]:
    plan = [(name, fn, False) for name, fn in FAST_CHECKS]
    if slow:
        plan += [(name, fn, True) for name, fn in SLOW_CHECKS]
    results = []
    for name, fn, is_slow in plan:
        logger.info("check %s", name)
        try:
            passed, detail = fn()
        except (CritSenseError, ArithmeticError, np.linalg.LinAlgError) as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, is_slow))
    return results
