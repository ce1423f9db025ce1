import numpy as np
import pytest
from scipy.linalg import expm

from errors import TruncationError, ValidationError
from state_model import (CHAR_TOL, Coherent, DensityOperatorFock, FieldScale, FockProduct, Mixture, SingleModeSqueezed,
                         StateSpec, Thermal, Vacuum, build_state, characteristic_function,
                         characteristic_function_batch, characteristic_function_product, displacement_matrices,
                         mean_field)


def test_vacuum_is_normalized(vacuum):
    assert vacuum.elements.shape == (36, 36)
    assert np.trace(vacuum.elements).real == pytest.approx(1.0)
    assert vacuum.tensor.shape == (6, 6, 6, 6)
    assert vacuum.trace_deficit == 0.0


def test_truncation_error_names_mode_and_dimension():
    spec = StateSpec(n_modes=2, truncation_dim=4, kind=Coherent((0.0, 3.0)))
    with pytest.raises(TruncationError, match=r"mode 1 needs truncation_dim >= \d+"):
        build_state(spec)


def test_fock_occupation_beyond_truncation_is_rejected():
    with pytest.raises(TruncationError):
        build_state(StateSpec(n_modes=2, truncation_dim=3, kind=FockProduct((3, 0))))


def test_spec_validation():
    with pytest.raises(ValidationError):
        StateSpec(n_modes=2, truncation_dim=6, kind=Coherent((1.0,)))
    with pytest.raises(ValidationError):
        StateSpec(n_modes=2, truncation_dim=1, kind=Vacuum())
    with pytest.raises(ValidationError):
        StateSpec(n_modes=2, truncation_dim=6, kind=SingleModeSqueezed(mode=2, r=0.3))
    vacuum = StateSpec(n_modes=2, truncation_dim=6, kind=Vacuum())
    with pytest.raises(ValidationError, match="sum to 1"):
        StateSpec(n_modes=2, truncation_dim=6, kind=Mixture(((0.5, vacuum), (0.4, vacuum))))


def test_non_hermitian_operator_is_rejected():
    elements = np.zeros((4, 4), dtype=complex)
    elements[0, 0] = 1.0
    elements[0, 1] = 0.1
    with pytest.raises(ValidationError, match="Hermitian"):
        DensityOperatorFock(n_modes=2, dim_per_mode=2, elements=elements)


def test_mixture_of_fock_states():
    one = StateSpec(n_modes=1, truncation_dim=4, kind=FockProduct((1,)))
    zero = StateSpec(n_modes=1, truncation_dim=4, kind=Vacuum())
    state = build_state(StateSpec(n_modes=1, truncation_dim=4, kind=Mixture(((0.25, one), (0.75, zero)))))
    assert np.real(np.diag(state.elements)) == pytest.approx([0.75, 0.25, 0.0, 0.0])


def test_two_mode_squeezed_marginal_is_thermal(tmsv):
    expected = np.sinh(0.5) ** 2
    assert tmsv.mean_photon_numbers() == pytest.approx([expected, expected], abs=1e-6)
    reduced = tmsv.reduced(0)
    assert np.max(np.abs(reduced - np.diag(np.diag(reduced)))) < 1e-14


def test_thermal_populations():
    state = build_state(StateSpec(n_modes=2, truncation_dim=40, kind=Thermal(mode=1, mean_photons=0.5)))
    assert state.mean_photon_numbers() == pytest.approx([0.0, 0.5], abs=1e-6)


def test_displacement_matches_exponentiated_generator():
    beta = 0.4 - 0.3j
    big = 60
    a = np.diag(np.sqrt(np.arange(1, big)), 1)
    reference = expm(beta * a.conj().T - np.conj(beta) * a)[:8, :8]
    assert np.max(np.abs(displacement_matrices(np.array(beta), 8) - reference)) < 1e-10


def test_vacuum_characteristic_function(vacuum):
    assert characteristic_function(vacuum, [1.0, 1.0], [0.3, -1.2]) == pytest.approx(np.exp(-1.0), abs=1e-12)
    wide = FieldScale(2.0)
    assert characteristic_function(vacuum, [0.5, 0.0], [0.0, 0.0], wide) == pytest.approx(np.exp(-0.5), abs=1e-12)


def test_coherent_characteristic_function(coherent):
    assert mean_field(coherent, 0, 0.0) == pytest.approx(2.0, abs=1e-8)
    assert mean_field(coherent, 0, np.pi / 2) == pytest.approx(0.0, abs=1e-8)
    value = characteristic_function(coherent, [0.3, 0.2], [0.0, 0.0])
    assert value == pytest.approx(np.exp(0.6j) * np.exp(-(0.09 + 0.04) / 2), abs=1e-7)


def test_product_grid_agrees_with_batch(coherent):
    z_axes = [np.linspace(0, 2, 5), np.linspace(0, 1, 4)]
    psi_axes = [np.linspace(-1, 0, 5), np.linspace(0, 2, 4)]
    product = characteristic_function_product(coherent, z_axes, psi_axes, FieldScale())
    z = np.stack(np.meshgrid(*z_axes, indexing="ij"), axis=-1)
    psi = np.stack(np.meshgrid(*psi_axes, indexing="ij"), axis=-1)
    batch = characteristic_function_batch(coherent, z, psi, FieldScale())
    assert product.shape == (5, 4)
    assert np.max(np.abs(product - batch)) < 1e-12


def test_characteristic_function_rejects_non_finite(vacuum):
    with pytest.raises(ValidationError):
        characteristic_function(vacuum, [np.nan, 0.0], [0.0, 0.0])


@pytest.fixture
def squeezed_thermal():
    squeezed = StateSpec(n_modes=2, truncation_dim=16, kind=SingleModeSqueezed(mode=0, r=0.3, phase=0.4))
    thermal = StateSpec(n_modes=2, truncation_dim=16, kind=Thermal(mode=1, mean_photons=0.2))
    return build_state(StateSpec(n_modes=2, truncation_dim=16,
                                 kind=Mixture(((0.5, squeezed), (0.5, thermal)))))


def random_arguments(seed, count=20, z_max=3.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-z_max, z_max, size=(count, 2)), rng.uniform(-np.pi, np.pi, size=(count, 2))


STATES = ["vacuum", "coherent", "fock10", "tmsv", "squeezed_thermal"]


@pytest.mark.parametrize("name", STATES)
def test_characteristic_function_is_conjugate_symmetric(name, request):
    state = request.getfixturevalue(name)
    z, psi = random_arguments(1)
    forward = characteristic_function_batch(state, z, psi, FieldScale())
    backward = characteristic_function_batch(state, -z, psi, FieldScale())
    assert np.max(np.abs(backward - forward.conj())) < 1e-12


@pytest.mark.parametrize("name", STATES)
def test_characteristic_function_modulus_is_bounded(name, request):
    state = request.getfixturevalue(name)
    z, psi = random_arguments(2, count=200, z_max=6.0)
    values = characteristic_function_batch(state, z, psi, FieldScale())
    assert np.max(np.abs(values)) <= 1 + CHAR_TOL
    assert characteristic_function(state, [0.0, 0.0], psi[0]) == pytest.approx(1.0, abs=1e-12)


def test_product_state_factorizes():
    first = build_state(StateSpec(n_modes=1, truncation_dim=12, kind=Coherent((0.6 + 0.2j,))))
    second = build_state(StateSpec(n_modes=1, truncation_dim=12, kind=FockProduct((2,))))
    joint = DensityOperatorFock(n_modes=2, dim_per_mode=12, elements=np.kron(first.elements, second.elements))
    z, psi = random_arguments(3)
    for (z1, z2), (psi1, psi2) in zip(z, psi):
        product = characteristic_function(first, [z1], [psi1]) * characteristic_function(second, [z2], [psi2])
        assert characteristic_function(joint, [z1, z2], [psi1, psi2]) == pytest.approx(product, abs=1e-10)


@pytest.mark.parametrize("theta", [0.3, -1.9, np.pi])
def test_coherent_phase_covariance(theta):
    amplitudes = (0.8, 0.3j)
    rotated = tuple(a * np.exp(1j * theta) for a in amplitudes)
    state = build_state(StateSpec(n_modes=2, truncation_dim=14, kind=Coherent(amplitudes)))
    turned = build_state(StateSpec(n_modes=2, truncation_dim=14, kind=Coherent(rotated)))
    z, psi = random_arguments(4)
    values = characteristic_function_batch(state, z, psi, FieldScale())
    shifted = characteristic_function_batch(turned, z, psi + theta, FieldScale())
    assert np.max(np.abs(shifted - values)) < 1e-10
