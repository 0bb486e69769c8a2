import math

import pytest
from numpy.testing import assert_allclose

from critsense.errors import GapError, ParameterError, TruncationError
from critsense.hilbert import SpaceDescriptor, SpaceKind, ladder_ops, zero
from critsense.models import (
    ModelName,
    build_linear,
    build_lmg,
    build_opo,
    build_qrm_conditioned,
    build_qrm_effective,
    build_qrm_full,
    commutator_residual,
    conditioned_hamiltonians,
    coupling_for_ratio,
    fractional_ratio,
    qrm_expected_excitation,
    rabi_frequency_ratio,
    required_cutoff,
    spectral_gap,
    suggest_cutoff,
)


class TestGap:
    @pytest.mark.parametrize("g", [0.3, 0.7, 0.95])
    def test_effective_rabi_gap(self, g):
        model = build_qrm_effective(2.0, g, 16)
        assert model.lam == pytest.approx(g * g)
        assert model.jacobian == pytest.approx(2.0 * g)
        assert model.delta == pytest.approx(16.0 * (1.0 - g * g))
        assert model.reduced_delta == pytest.approx(4.0 * (1.0 - g * g))

    def test_opo_gap(self):
        assert build_opo(1.0, 0.2, 16).delta == pytest.approx(4.0 - 16.0 * 0.04)

    def test_lmg_gap(self):
        assert build_lmg(0.0, 1.4, 16).delta == pytest.approx(16.0 * (0.0 - 1.4) * (1.0 - 1.4))

    def test_isotropic_lmg_rejected(self):
        with pytest.raises(ParameterError, match="isotropic"):
            build_lmg(1.0, 1.2, 16)

    def test_imaginary_gap(self):
        model = build_opo(0.3, 0.2, 16)
        assert model.delta < 0.0
        with pytest.raises(GapError, match="imaginary gap"):
            model.sqrt_gap()

    def test_full_model_has_no_closed_gap(self):
        model = build_qrm_full(1.0, 20.0, 0.5, 16)
        assert not model.has_gap
        with pytest.raises(GapError):
            _ = model.delta


class TestCommutatorIdentity:
    def test_residual_small_on_interior(self, quadratic_model):
        assert commutator_residual(quadratic_model) < 1e-8

    def test_spectral_gap_matches_closed_form(self):
        model = build_qrm_effective(1.0, 0.6, 96)
        assert spectral_gap(model) == pytest.approx(model.delta, rel=1e-8)

    def test_residual_needs_real_gap(self):
        with pytest.raises(GapError):
            commutator_residual(build_opo(0.3, 0.2, 16))

    def test_interior_fraction_range(self, effective_model):
        with pytest.raises(ParameterError):
            commutator_residual(effective_model, interior_fraction=1.0)

    def test_adjoint_of_lambda(self, quadratic_model):
        model = quadratic_model
        for op in (model.c_op, model.d_op):
            assert op.hermiticity_residual() <= 1e-12 * max(1.0, op.max_abs)
        adjoint = (-1j * model.sqrt_gap()) * model.c_op - model.d_op
        assert_allclose(model.lambda_op.dag.matrix, adjoint.matrix, atol=1e-12 * max(1.0, adjoint.max_abs))

    @pytest.mark.parametrize("g", [0.3, 0.9])
    def test_quadratic_in_coupling(self, g):
        reference = build_qrm_effective(1.0, 0.5, 32)
        model = build_qrm_effective(1.0, g, 32)
        assert_allclose(model.hamiltonian.matrix, (reference.h0 + (g * g) * reference.h1).matrix, atol=1e-12)


class TestBuilders:
    def test_full_model_structure(self):
        model = build_qrm_full(1.0, 50.0, 0.6, 24)
        assert model.name is ModelName.QRM_FULL
        assert model.space.kind is SpaceKind.COMPOSITE
        assert model.space.dim == 50
        assert model.hamiltonian.is_hermitian()
        assert_allclose(model.hamiltonian_at(0.6).matrix, model.hamiltonian.matrix)

    def test_full_model_cutoff_too_small(self):
        with pytest.raises(TruncationError, match="too small") as info:
            build_qrm_full(1.0, 100.0, 0.5, 8)
        assert info.value.suggested_cutoff == suggest_cutoff(0.5, 100.0)

    def test_effective_model_warns_beyond_normal_phase(self, caplog):
        build_qrm_effective(1.0, 1.05, 16)
        assert "beyond the normal phase" in caplog.text

    def test_with_parameter_keeps_cutoff(self, effective_model):
        moved = effective_model.with_parameter(0.5)
        assert moved.parameter == 0.5
        assert moved.space == effective_model.space

    def test_with_cutoff(self, effective_model):
        assert effective_model.with_cutoff(40).space.cutoff == 40

    def test_linear_family(self):
        space = SpaceDescriptor.boson(8)
        number = ladder_ops(space).n
        model = build_linear(zero(space), number, 0.4)
        assert not model.has_gap
        assert_allclose(model.hamiltonian.matrix, 0.4 * number.matrix)
        assert model.with_parameter(0.9).lam == 0.9
        with pytest.raises(ParameterError):
            model.with_cutoff(12)

    def test_conditioned_blocks(self):
        model = build_qrm_conditioned(1.0, 0.7, 12)
        h_up, h_down = conditioned_hamiltonians(model)
        n = model.space.boson_dim
        h = model.hamiltonian.matrix
        assert_allclose(h[:n, :n], h_up.matrix, atol=1e-14)
        assert_allclose(h[n:, n:], h_down.matrix, atol=1e-14)
        assert_allclose(h[:n, n:], 0.0)

    def test_down_branch_is_effective_model(self):
        model = build_qrm_effective(1.0, 0.7, 12)
        _, h_down = conditioned_hamiltonians(model)
        assert_allclose(h_down.matrix, model.hamiltonian.matrix, atol=1e-14)

    def test_conditioned_needs_rabi_model(self):
        with pytest.raises(ParameterError, match="Rabi model"):
            conditioned_hamiltonians(build_opo(1.0, 0.2, 8))


class TestCutoffHelpers:
    def test_expected_excitation_normal_phase(self):
        assert qrm_expected_excitation(0.8) == pytest.approx(0.5 + 2.0 * 0.8**4 / (4.0 * 0.36))

    def test_expected_excitation_superradiant(self):
        assert qrm_expected_excitation(1.2, 100.0) == pytest.approx(100.0 * (1.44 - 1.0 / 1.44) / 4.0 + 1.0)

    def test_required_below_suggested(self):
        for g in (0.2, 0.8, 0.99):
            assert 8 <= required_cutoff(g, 1000.0) <= suggest_cutoff(g, 1000.0)


class TestRabiRatio:
    def test_ratio_round_trip(self):
        assert rabi_frequency_ratio(coupling_for_ratio(3.5)) == pytest.approx(3.5)

    def test_half_integer_fraction(self):
        assert fractional_ratio(coupling_for_ratio(2.5)) == pytest.approx(0.5)

    def test_first_working_point(self):
        assert coupling_for_ratio(1.5) == pytest.approx(math.sqrt(1.25 / 3.25))

    def test_ratio_domain(self):
        with pytest.raises(ParameterError):
            rabi_frequency_ratio(1.0)
        with pytest.raises(ParameterError):
            coupling_for_ratio(0.5)
