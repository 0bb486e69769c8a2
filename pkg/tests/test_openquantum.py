import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from critsense.errors import ParameterError, SpaceMismatchError, StepSizeError
from critsense.hilbert import (
    Propagator,
    SpaceDescriptor,
    Spin,
    coherent_state,
    expect_real,
    fock_state,
    ladder_ops,
    pauli_ops,
    product_state,
    zero,
)
from critsense.models import build_qrm_effective, build_qrm_full, required_cutoff
from critsense.openquantum import (
    NoiseSpec,
    jump_operators,
    lindblad_evolve,
    lindblad_rhs,
    noisy_inverted_variance,
    step_limit,
)
from critsense.protocols import canonical_initial_state


@pytest.fixture
def plus_state():
    space = SpaceDescriptor.composite(3)
    c = 1.0 / math.sqrt(2.0)
    return product_state(space, (c, c), fock_state(space.boson_factor(), 0).data)


class TestNoiseSpec:
    def test_from_dephasing(self):
        noise = NoiseSpec.from_dephasing(0.1)
        assert noise == NoiseSpec(0.1, 0.05, 0.05, 0.05)
        assert not noise.is_zero
        assert NoiseSpec().is_zero

    def test_negative_rate(self):
        with pytest.raises(ParameterError, match="boson_decay"):
            NoiseSpec(boson_decay=-0.1)

    def test_jump_operators_need_matching_factors(self, boson_space):
        with pytest.raises(SpaceMismatchError, match="qubit noise"):
            jump_operators(boson_space, NoiseSpec(dephasing=0.1))

    def test_zero_rates_skip_channels(self, composite_space):
        jumps = jump_operators(composite_space, NoiseSpec(dephasing=0.2, boson_heating=0.1))
        assert [rate for rate, _ in jumps] == [0.2, 0.1]


class TestGenerator:
    def test_rhs_is_traceless_and_hermitian(self, composite_space):
        h = 0.3 * ladder_ops(composite_space).x @ pauli_ops(composite_space).sx
        rho = product_state(
            composite_space, (0.6, 0.8), coherent_state(composite_space.boson_factor(), 0.4).data
        ).to_density()
        out = lindblad_rhs(h, NoiseSpec.from_dephasing(0.2), rho)
        assert abs(out.trace()) < 1e-12
        assert out.hermiticity_residual() < 1e-12

    def test_step_limit(self, composite_space):
        assert step_limit(zero(composite_space), NoiseSpec()) == math.inf
        limit = step_limit(zero(composite_space), NoiseSpec(dephasing=0.5))
        assert limit == pytest.approx(0.05 / (0.5 * 0.5))


class TestEvolution:
    def test_unitary_limit(self):
        model = build_qrm_effective(1.0, 0.5, 8)
        psi0 = fock_state(model.space, 1)
        steps = 4 * math.ceil(1.0 / step_limit(model.hamiltonian, NoiseSpec()))
        res = lindblad_evolve(model.hamiltonian, NoiseSpec(), psi0.to_density(), 1.0, steps=steps)
        exact = Propagator.from_hamiltonian(model.hamiltonian).evolve(psi0, 1.0).to_density()
        assert_allclose(res.rho.data, exact.data, atol=1e-8)
        assert res.trace_drift < 1e-7

    def test_step_halving_converges(self):
        g, eta, t = 0.5, 4.0, 2.0
        model = build_qrm_full(1.0, eta, g, required_cutoff(g, eta))
        rho0 = canonical_initial_state(model.space).to_density()
        noise = NoiseSpec.from_dephasing(0.1)
        steps = math.ceil(t / step_limit(model.hamiltonian, noise))
        coarse = lindblad_evolve(model.hamiltonian, noise, rho0, t, steps=steps)
        fine = lindblad_evolve(model.hamiltonian, noise, rho0, t, steps=2 * steps)
        assert fine.dt == pytest.approx(coarse.dt / 2.0)
        assert np.max(np.abs(coarse.rho.data - fine.rho.data)) < 1e-5

    def test_dephasing_decay(self, plus_state):
        rate, t = 0.3, 1.5
        res = lindblad_evolve(zero(plus_state.space), NoiseSpec(dephasing=rate), plus_state.to_density(), t, steps=200)
        sx = expect_real(pauli_ops(plus_state.space).sx, res.rho)
        assert sx == pytest.approx(math.exp(-2.0 * rate * t), rel=1e-5)

    def test_qubit_decay(self):
        space = SpaceDescriptor.composite(2)
        rate, t = 0.4, 2.0
        up = fock_state(space, 0, Spin.UP).to_density()
        res = lindblad_evolve(zero(space), NoiseSpec(qubit_decay=rate), up, t, steps=200)
        population_up = (1.0 + expect_real(pauli_ops(space).sz, res.rho)) / 2.0
        assert population_up == pytest.approx(math.exp(-rate * t), rel=1e-5)

    def test_amplitude_damping(self):
        space = SpaceDescriptor.boson(12)
        rate, t = 0.3, 1.5
        start = coherent_state(space, 1.0)
        res = lindblad_evolve(zero(space), NoiseSpec(boson_decay=rate), start.to_density(), t, steps=200)
        number = ladder_ops(space).n
        assert expect_real(number, res.rho) == pytest.approx(expect_real(number, start) * math.exp(-rate * t), rel=1e-5)

    def test_samples(self, plus_state):
        res = lindblad_evolve(
            zero(plus_state.space), NoiseSpec(dephasing=0.1), plus_state.to_density(), 1.0, steps=10, sample_every=5
        )
        assert res.times == pytest.approx((0.5, 1.0))
        assert len(res.samples) == 2
        assert res.rho is res.samples[-1]

    def test_step_too_large(self, plus_state):
        noise = NoiseSpec(dephasing=0.5)
        with pytest.raises(StepSizeError, match="step size too large") as info:
            lindblad_evolve(zero(plus_state.space), noise, plus_state.to_density(), 2.0, dt=1.0)
        assert info.value.suggested_dt == pytest.approx(step_limit(zero(plus_state.space), noise))

    def test_negative_time(self, plus_state):
        with pytest.raises(ParameterError):
            lindblad_evolve(zero(plus_state.space), NoiseSpec(), plus_state.to_density(), -1.0)

    def test_space_mismatch(self, plus_state, boson_space):
        with pytest.raises(SpaceMismatchError):
            lindblad_evolve(zero(boson_space), NoiseSpec(), plus_state.to_density(), 1.0)


class TestNoisyReadout:
    def test_noise_lowers_inverted_variance(self):
        g, eta, cutoff = 0.7, 20.0, 12
        clean = noisy_inverted_variance(g, 1.0, eta, NoiseSpec(), cutoff=cutoff)
        noisy = noisy_inverted_variance(g, 1.0, eta, NoiseSpec.from_dephasing(0.1), cutoff=cutoff)
        assert noisy.inverted_variance < clean.inverted_variance
        assert noisy.extras["dephasing"] == 0.1
        assert noisy.cutoff == cutoff
        for point in (clean, noisy):
            assert point.protocol == "noise"
            assert point.inverted_variance <= 1.02 * point.qfi_exact
            assert point.closed_form == pytest.approx(32.0 * math.pi**2 * g * g / (4.0 * (1.0 - g * g)) ** 3)

    @pytest.mark.slow
    def test_noise_free_run_close_to_closed_form(self):
        point = noisy_inverted_variance(0.6, 1.0, 1000.0, NoiseSpec())
        assert point.inverted_variance / point.closed_form == pytest.approx(1.0, abs=0.1)
        assert np.isfinite(point.qfi_exact)
