import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from critsense.errors import ConvergenceError, ParameterError
from critsense.hilbert import (
    QuantumState,
    SpaceDescriptor,
    Spin,
    coherent_state,
    expect_real,
    fock_state,
    ladder_ops,
    pauli_ops,
)
from critsense.models import build_qrm_effective, fractional_ratio
from critsense.protocols import (
    ProtocolPoint,
    StatsSource,
    canonical_initial_state,
    finite_eta_bound,
    frequency_inverted_variance,
    inverted_variance_quadrature,
    loschmidt,
    loschmidt_amplitude,
    loschmidt_closed_form,
    loschmidt_point,
    peak_excitation,
    quadrature_closed_form,
    quadrature_peak_closed_form,
    reduced_gap,
    response_fwhm,
    simulate_quadrature,
    susceptibility,
    tau_n,
    working_point,
    working_points,
)


def _vacuum(space):
    return fock_state(space, 0)


class TestCanonicalState:
    def test_boson_factor(self, boson_space):
        psi = canonical_initial_state(boson_space)
        assert expect_real(ladder_ops(boson_space).n, psi) == pytest.approx(0.5)
        assert expect_real(ladder_ops(boson_space).p, psi) == pytest.approx(math.sqrt(2.0) / 2.0)

    def test_qubit_starts_down(self, composite_space):
        psi = canonical_initial_state(composite_space)
        assert expect_real(pauli_ops(composite_space).sz, psi) == pytest.approx(-1.0)


class TestQuadratureDynamics:
    def test_free_oscillator_closed_form(self):
        stats = quadrature_closed_form(0.0, 1.0, 0.7)
        assert stats.source is StatsSource.CLOSED_FORM
        assert stats.mean_x == pytest.approx(math.sqrt(2.0) / 2.0 * math.sin(0.7))
        assert stats.var_x == pytest.approx(1.0 - 0.25 * (1.0 - math.cos(1.4)))

    @pytest.mark.parametrize("g", [0.5, 0.8])
    def test_simulation_matches_closed_form(self, g):
        model = build_qrm_effective(1.0, g, 64)
        psi0 = canonical_initial_state(model.space)
        times = np.linspace(0.0, 2.0 * tau_n(g, 1.0, 1), 40)
        for sim in simulate_quadrature(model, psi0, times):
            ref = quadrature_closed_form(g, 1.0, sim.time)
            assert sim.source is StatsSource.SIMULATED
            assert sim.mean_x == pytest.approx(ref.mean_x, abs=1e-8)
            assert sim.var_x == pytest.approx(ref.var_x, abs=1e-8)

    @pytest.mark.parametrize("eta, bound", [(1000.0, 1.0), (1e6, 0.1), (math.inf, 0.0)])
    def test_finite_eta_bound(self, eta, bound):
        assert finite_eta_bound(eta) == pytest.approx(bound)

    def test_finite_eta_bound_domain(self):
        with pytest.raises(ParameterError):
            finite_eta_bound(0.5)

    def test_tau_n(self):
        assert tau_n(0.6, 1.0, 1) == pytest.approx(2.0 * math.pi / 1.6)
        assert tau_n(0.6, 2.0, 3) == pytest.approx(3.0 * tau_n(0.6, 2.0, 1))

    @pytest.mark.parametrize("g, n", [(1.0, 1), (0.5, 0)])
    def test_tau_n_domain(self, g, n):
        with pytest.raises(ParameterError):
            tau_n(g, 1.0, n)


class TestSusceptibility:
    def test_smooth_function(self):
        chi = susceptibility(lambda p, t: t * math.sin(p), 0.3, 2.0)
        assert chi == pytest.approx(2.0 * math.cos(0.3), rel=1e-9)

    def test_non_finite_observable(self):
        with pytest.raises(ConvergenceError, match="non-finite"):
            susceptibility(lambda p, t: math.nan, 0.3, 1.0)

    @pytest.mark.parametrize("param", [0.0, 1e-6])
    def test_stays_inside_lower_bound(self, param):
        def observable(p, t):
            if p < 0.0:
                raise ParameterError(f"p must be >= 0, got {p}")
            return p * p + 3.0 * p

        chi = susceptibility(observable, param, 1.0, lower=0.0)
        assert chi == pytest.approx(2.0 * param + 3.0, rel=1e-8)

    def test_below_lower_bound(self):
        with pytest.raises(ParameterError, match="domain bound"):
            susceptibility(lambda p, t: p, -0.1, 1.0, lower=0.0)

    @pytest.mark.parametrize("g", [0.0, 1e-6])
    def test_quadrature_near_zero_coupling(self, g):
        point = inverted_variance_quadrature(g)
        assert point.converged
        assert abs(point.chi) < 1e-4
        assert point.inverted_variance == pytest.approx(quadrature_peak_closed_form(g, 1), abs=1e-9)


class TestHomodyne:
    @pytest.mark.parametrize("g, n", [(0.7, 1), (0.85, 2)])
    def test_peak_matches_closed_form(self, g, n):
        point = inverted_variance_quadrature(g, 1.0, n)
        assert point.converged
        assert point.closed_form == pytest.approx(quadrature_peak_closed_form(g, n))
        assert point.inverted_variance / point.closed_form == pytest.approx(1.0, abs=0.01)
        assert point.variance == pytest.approx(1.0, abs=1e-6)
        assert point.inverted_variance <= 1.02 * point.qfi_exact

    def test_coherent_spot_check(self):
        point = inverted_variance_quadrature(0.8, initial=lambda space: coherent_state(space, 1j))
        assert point.inverted_variance / point.closed_form == pytest.approx(8.0, rel=1e-3)

    @pytest.mark.parametrize(
        "initial, mean",
        [
            (lambda space: fock_state(space, 0), 0.0),
            (lambda space: coherent_state(space, 1.0), -math.sqrt(2.0)),
        ],
        ids=["vacuum", "coherent_real"],
    )
    def test_states_without_momentum_give_no_signal(self, initial, mean):
        # X(τ_1) = −X(0) and ∂_g X(τ_n) ∝ P(0): no ⟨P⟩, no susceptibility
        point = inverted_variance_quadrature(0.8, initial=initial)
        assert point.mean == pytest.approx(mean, abs=1e-8)
        assert point.variance == pytest.approx(0.5, abs=1e-8)
        assert abs(point.chi) < 1e-6
        assert point.inverted_variance < 1e-10
        assert point.qfi_analytic == pytest.approx(67.69, abs=0.01)

    def test_zero_variance_point(self):
        point = ProtocolPoint("quadrature", "qrm_effective", 0.5, 3.0, 1.0, 1, 0.0, 0.0, 2.0)
        assert point.inverted_variance == math.inf


class TestFrequencyEstimation:
    def test_peak_excitation_bound(self):
        g = 0.8
        model = build_qrm_effective(1.0, g, 64)
        psi0 = canonical_initial_state(model.space)
        peak = peak_excitation(model, psi0, tau_n(g, 1.0, 1))
        assert peak == pytest.approx(2.0 * g**4 / reduced_gap(g), rel=1e-4)

    @pytest.mark.parametrize("g", [0.7, 0.9])
    def test_heisenberg_scaling(self, g):
        point = frequency_inverted_variance(g)
        assert point.protocol == "frequency"
        assert point.inverted_variance / point.closed_form == pytest.approx(1.0, abs=0.01)
        ratio = point.extras["heisenberg_ratio"] / point.extras["heisenberg_prefactor"]
        assert 0.9 <= ratio <= 1.1


class TestWorkingPoints:
    def test_first_branch(self):
        wp = working_point(1)
        assert wp.g_o == pytest.approx(0.62017, abs=1e-5)
        assert wp.r_value == 1.5
        assert wp.tau == pytest.approx(4.0 * math.pi / math.sqrt(reduced_gap(wp.g_o)))

    def test_half_integer_fractions(self):
        points = working_points(6)
        assert [wp.m for wp in points] == list(range(1, 7))
        assert all(fractional_ratio(wp.g_o) == pytest.approx(0.5) for wp in points)
        assert all(a.g_o < b.g_o for a, b in zip(points, points[1:]))

    def test_branch_domain(self):
        with pytest.raises(ParameterError):
            working_point(0)


class TestLoschmidt:
    @pytest.mark.parametrize("g", [0.0, 1e-6])
    def test_decoupled_limit(self, g):
        result = loschmidt(g, 1.0, _vacuum, 0.6, 0.8, 3.0, cutoff=16)
        assert result.amplitude == pytest.approx(1.0, abs=1e-8)
        assert result.sigma_x == pytest.approx(2.0 * 0.6 * 0.8, abs=1e-8)
        assert abs(result.chi) < 1e-4

    def test_amplitude_at_working_point(self):
        wp = working_point(1)
        c = 1.0 / math.sqrt(2.0)
        result = loschmidt(wp.g_o, 1.0, _vacuum, c, c, wp.tau, cutoff=64)
        assert result.amplitude == pytest.approx(1j, abs=1e-8)
        assert result.sigma_x == pytest.approx(0.0, abs=1e-8)
        assert result.variance == pytest.approx(1.0, abs=1e-8)

    def test_qubit_normalization_checked(self):
        with pytest.raises(ParameterError, match="must be 1"):
            loschmidt(0.6, 1.0, _vacuum, 1.0, 1.0, 1.0, cutoff=16)

    @pytest.mark.parametrize("m", [1, 2])
    def test_matches_closed_form(self, m):
        point = loschmidt_point(working_point(m), with_qfi=False)
        assert point.converged
        assert point.inverted_variance == pytest.approx(loschmidt_closed_form(point.parameter), rel=1e-3)
        assert point.extras["ratio"] == pytest.approx(m + 0.5)

    def test_bounded_by_conditioned_qfi(self):
        point = loschmidt_point(working_point(1))
        assert point.inverted_variance <= 1.02 * point.qfi_exact

    def test_boson_state_can_be_a_vector(self):
        space = SpaceDescriptor.boson(32)
        wp = working_point(1)
        c = 1.0 / math.sqrt(2.0)
        from_fn = loschmidt(wp.g_o, 1.0, _vacuum, c, c, wp.tau, cutoff=32)
        from_state = loschmidt(wp.g_o, 1.0, fock_state(space, 0), c, c, wp.tau, cutoff=32)
        assert from_state.amplitude == pytest.approx(from_fn.amplitude)

    @pytest.mark.parametrize(
        "amplitudes, parity",
        [
            ({0: 1.0, 2: 1.0}, 1.0),
            ({0: 1.0, 1: 1.0}, 0.0),
            ({1: 1.0}, -1.0),
            ({0: 1.0, 1: 0.5j, 3: 0.25}, (1.0 - 0.25 - 0.0625) / 1.3125),
        ],
        ids=["even", "mixed_parity", "odd", "three_levels"],
    )
    def test_fock_superpositions_at_working_point(self, amplitudes, parity):
        # both branches refocus up to a phase: G(φ) = G(0)·⟨φ|(−1)^N|φ⟩
        space = SpaceDescriptor.boson(64)
        vec = np.zeros(space.dim, dtype=complex)
        for level, amp in amplitudes.items():
            vec[level] = amp
        phi = QuantumState.pure(space, vec, normalize=True)
        wp = working_point(1)
        c = 1.0 / math.sqrt(2.0)
        result = loschmidt(wp.g_o, 1.0, phi, c, c, wp.tau, cutoff=64)
        assert result.amplitude == pytest.approx(1j * parity, abs=1e-8)
        assert result.sigma_x == pytest.approx(0.0, abs=1e-8)

    def test_coherent_state_at_working_point(self):
        space = SpaceDescriptor.boson(64)
        wp = working_point(2)
        c = 1.0 / math.sqrt(2.0)
        vacuum = loschmidt(wp.g_o, 1.0, _vacuum, c, c, wp.tau, cutoff=64)
        result = loschmidt(wp.g_o, 1.0, coherent_state(space, 0.5), c, c, wp.tau, cutoff=64)
        assert abs(vacuum.amplitude) == pytest.approx(1.0, abs=1e-8)
        assert result.amplitude == pytest.approx(vacuum.amplitude * math.exp(-0.5), abs=1e-8)
        assert result.variance == pytest.approx(1.0, abs=1e-8)
        assert abs(result.chi) > 0.0

    def test_amplitude_never_exceeds_one(self):
        wp = working_point(1)
        model = build_qrm_effective(1.0, wp.g_o, 32)
        states = (fock_state(model.space, 0), coherent_state(model.space, 0.7), fock_state(model.space, 3))
        for phi in states:
            for t in np.linspace(0.0, 2.0 * wp.tau, 13):
                assert abs(loschmidt_amplitude(model, phi, float(t))) <= 1.0 + 1e-12


class TestResponseWidth:
    def test_lorentzian(self):
        width = 0.05

        def response(x):
            return 1.0 / (1.0 + ((x - 0.5) / width) ** 2)

        assert response_fwhm(response, 0.5, 0.3) == pytest.approx(2.0 * width, rel=1e-8)

    def test_flat_response(self, caplog):
        assert math.isnan(response_fwhm(lambda x: 1.0, 0.5, 0.2))
        assert "never halves" in caplog.text


def test_composite_state_spin_indexing(composite_space):
    up = fock_state(composite_space, 0, Spin.UP)
    assert_allclose(up.data[0], 1.0)
