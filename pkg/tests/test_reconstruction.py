import numpy as np
import pytest

from conftest import VACUUM_PEAK
from errors import AmplificationError, CoverageError, FilterRequiredError, ValidationError
from measurement import DetectorModel, build_dataset, default_control_grid
from quadrature_oracle import (DensityMatrixFS, FSMatrixPoint, OutputGrid, compare_matrices,
                               default_quadrature_grid, oracle_grid)
from reconstruction import (QuadratureSettings, RegularizationFilter, charfn_eval, phase_averaged_reconstruct,
                            reconstruct_element, reconstruct_from_joint, reconstruct_grid)
from sources.analytic_source import AnalyticCharFn
from sources.empirical_source import EmpiricalCharFn
from state_model import FieldScale, StateSpec, Vacuum, build_state

PHASES = (0.0, 0.0)


def empirical_source(state, eta=1.0, kind="absolute", n_alpha=8, n_psi=8, mode="analytic", samples=0, seed=0):
    control = default_control_grid(2, n_alpha, n_psi, PHASES, default_quadrature_grid(state), kind)
    return EmpiricalCharFn(build_dataset(state, control, samples, DetectorModel(eta), seed, mode=mode))


def test_charfn_eval_vacuum(vacuum):
    assert charfn_eval(AnalyticCharFn(vacuum), 1.0, [np.pi / 4], [0.0, 0.0]) == pytest.approx(np.exp(-0.5))
    with pytest.raises(ValidationError):
        charfn_eval(AnalyticCharFn(vacuum), -1.0, [0.3], [0.0, 0.0])


def test_vacuum_peak_element(vacuum):
    point = FSMatrixPoint((0.0, 0.0), (0.0, 0.0), PHASES)
    result = reconstruct_element(AnalyticCharFn(vacuum), point)
    assert result.value == pytest.approx(VACUUM_PEAK, abs=1e-6)
    assert result.amplification_exponent == 0.0
    assert result.amplification_bound == 1.0


@pytest.mark.parametrize("name, tol", [("vacuum", 1e-3), ("coherent", 1e-3), ("fock10", 5e-3), ("tmsv", 5e-3)])
def test_analytic_reconstruction_matches_oracle(name, tol, request, acceptance_grid):
    state = request.getfixturevalue(name)
    matrix = reconstruct_grid(AnalyticCharFn(state), acceptance_grid, PHASES)
    oracle = oracle_grid(state, acceptance_grid, PHASES)
    assert compare_matrices(matrix, oracle).linf <= tol
    assert matrix.provenance["transform_stages"] == 3
    assert matrix.provenance["hermiticity_filled_offsets"] > 0


def test_nonzero_reference_phases(coherent, symmetric_grid):
    phases = (0.7, -1.3)
    matrix = reconstruct_grid(AnalyticCharFn(coherent), symmetric_grid, phases)
    oracle = oracle_grid(coherent, symmetric_grid, phases)
    assert compare_matrices(matrix, oracle).linf <= 1e-3


@pytest.mark.slow
def test_three_mode_vacuum_matches_oracle():
    state = build_state(StateSpec(n_modes=3, truncation_dim=4, kind=Vacuum()))
    grid = OutputGrid.uniform(3, 2.0, 5)
    phases = (0.0, 0.0, 0.0)
    matrix = reconstruct_grid(AnalyticCharFn(state), grid, phases, quad=QuadratureSettings(nodes=64))
    assert matrix.elements.shape == (5, 5, 5, 1, 1, 1)
    assert compare_matrices(matrix, oracle_grid(state, grid, phases)).linf <= 5e-3
    assert matrix.provenance["transform_stages"] == 4
    assert matrix.elements[2, 2, 2, 0, 0, 0].real == pytest.approx((2 * np.pi) ** -1.5, abs=5e-3)


def test_field_scale_is_carried_through():
    wide = FieldScale(1.5)
    state = build_state(StateSpec(n_modes=2, truncation_dim=4, kind=Vacuum()))
    grid = OutputGrid.uniform(2, 3.0, 5, offset_max=1.0, n_offsets=3)
    matrix = reconstruct_grid(AnalyticCharFn(state, wide), grid, PHASES)
    assert compare_matrices(matrix, oracle_grid(state, grid, PHASES, wide)).linf <= 1e-3
    with pytest.raises(ValidationError, match="field scale"):
        reconstruct_grid(AnalyticCharFn(state, wide), grid, PHASES, scale=FieldScale())


def test_joint_baseline_agrees_with_sum_field(vacuum, coherent, small_grid):
    for state in (vacuum, coherent):
        direct = reconstruct_grid(AnalyticCharFn(state), small_grid, PHASES)
        joint = reconstruct_from_joint(state, small_grid, PHASES)
        assert compare_matrices(joint, direct).linf <= 2e-3
        assert joint.provenance["transform_stages"] == 4


def test_results_do_not_depend_on_thread_count(coherent, symmetric_grid):
    serial = reconstruct_grid(AnalyticCharFn(coherent), symmetric_grid, PHASES, quad=QuadratureSettings(threads=1))
    parallel = reconstruct_grid(AnalyticCharFn(coherent), symmetric_grid, PHASES,
                                quad=QuadratureSettings(threads=4))
    assert np.max(np.abs(serial.elements - parallel.elements)) < 1e-14


def test_efficiency_needs_a_filter(vacuum, small_grid):
    with pytest.raises(FilterRequiredError, match="filter"):
        reconstruct_grid(AnalyticCharFn(vacuum), small_grid, PHASES, DetectorModel(0.9))


def test_amplification_ceiling(vacuum, small_grid):
    with pytest.raises(AmplificationError, match="ceiling"):
        reconstruct_grid(AnalyticCharFn(vacuum), small_grid, PHASES, DetectorModel(0.5),
                         RegularizationFilter(y_cut=20.0))


def test_regularization_window():
    flat = RegularizationFilter(y_cut=3.0)
    assert flat.window(np.array([0.0, 3.0, 3.1])).tolist() == [1.0, 1.0, 0.0]
    tapered = RegularizationFilter(y_cut=3.0, taper="cosine", taper_width=1.0)
    assert tapered.window(np.array([1.9, 2.5, 3.0])) == pytest.approx([1.0, 0.5, 0.0], abs=1e-12)
    with pytest.raises(ValidationError):
        RegularizationFilter(y_cut=1.0, taper="cosine", taper_width=2.0)


def test_efficiency_round_trip(vacuum, small_grid):
    degraded = empirical_source(vacuum, eta=0.9)
    matrix = reconstruct_grid(degraded, small_grid, PHASES, DetectorModel(0.9), RegularizationFilter(y_cut=6.0))
    assert matrix.provenance["amplification_exponent"] == pytest.approx(2.0, abs=1e-12)
    assert matrix.provenance["amplification_bound"] == pytest.approx(np.exp(2.0), rel=1e-12)
    assert compare_matrices(matrix, oracle_grid(vacuum, small_grid, PHASES)).linf <= 1e-2


@pytest.mark.slow
@pytest.mark.parametrize("eta", [1.0, 0.9])
def test_coherent_efficiency_round_trip(eta, coherent, small_grid):
    source = empirical_source(coherent, eta=eta, n_psi=16)
    matrix = reconstruct_grid(source, small_grid, PHASES, DetectorModel(eta), RegularizationFilter(y_cut=6.0))
    assert compare_matrices(matrix, oracle_grid(coherent, small_grid, PHASES)).linf <= 1e-2


def test_empirical_mixed_sign_offsets_need_phase_coverage(vacuum):
    grid = OutputGrid.uniform(2, 1.0, 3, offset_max=0.5, n_offsets=2)
    with pytest.raises(CoverageError, match="offset"):
        reconstruct_grid(empirical_source(vacuum, n_alpha=4, n_psi=4), grid, PHASES)


def test_empirical_non_negative_offsets(vacuum, small_grid):
    matrix = reconstruct_grid(empirical_source(vacuum, n_alpha=4, n_psi=4), small_grid, PHASES)
    assert compare_matrices(matrix, oracle_grid(vacuum, small_grid, PHASES)).linf <= 1e-3
    assert matrix.provenance["method"] == "sum_field"


def test_sampled_vacuum_reconstruction(vacuum, small_grid):
    source = empirical_source(vacuum, n_alpha=4, n_psi=4, mode="samples", samples=20000, seed=3)
    matrix = reconstruct_grid(source, small_grid, PHASES, regularization=RegularizationFilter(y_cut=4.0))
    assert compare_matrices(matrix, oracle_grid(vacuum, small_grid, PHASES)).linf <= 5e-2
    assert matrix.provenance["seed"] == 3


@pytest.mark.slow
def test_sampled_error_shrinks_with_sample_count(vacuum):
    grid = OutputGrid.uniform(2, 4.0, 9, offset_max=1.0, n_offsets=3, offset_min=0.0)
    oracle = oracle_grid(vacuum, grid, PHASES)
    errors = []
    for samples in (100000, 400000):
        source = empirical_source(vacuum, mode="samples", samples=samples, seed=2024)
        errors.append(compare_matrices(reconstruct_grid(source, grid, PHASES), oracle).linf)
    assert errors[0] <= 5e-2
    assert 1.4 <= errors[0] / errors[1] <= 2.8


def test_phase_averaged_coherent_equals_averaged_oracle(coherent, symmetric_grid):
    averaged = phase_averaged_reconstruct(AnalyticCharFn(coherent), symmetric_grid, PHASES)
    shifts = 2 * np.pi * np.arange(16) / 16
    oracle = np.mean([oracle_grid(coherent, symmetric_grid, np.add(PHASES, t)).elements for t in shifts], axis=0)
    reference = DensityMatrixFS(2, PHASES, symmetric_grid, oracle)
    assert compare_matrices(averaged, reference).linf <= 1e-6
    assert averaged.provenance["phase_averaged"] is True


def test_averaging_orders_agree(coherent, small_grid):
    source = AnalyticCharFn(coherent)
    matrices = phase_averaged_reconstruct(source, small_grid, PHASES, order="matrices")
    distributions = phase_averaged_reconstruct(source, small_grid, PHASES, order="distributions")
    assert np.max(np.abs(matrices.elements - distributions.elements)) < 1e-10
    assert distributions.provenance["source"] == "analytic_phase_averaged"
    with pytest.raises(ValidationError):
        phase_averaged_reconstruct(source, small_grid, PHASES, order="samples")


def test_phase_averaged_vacuum_is_unchanged(vacuum, small_grid):
    source = AnalyticCharFn(vacuum)
    averaged = phase_averaged_reconstruct(source, small_grid, PHASES)
    plain = reconstruct_grid(source, small_grid, PHASES)
    assert np.max(np.abs(averaged.elements - plain.elements)) < 1e-6


def test_absolute_dataset_cannot_be_phase_averaged(vacuum, small_grid):
    with pytest.raises(CoverageError, match="insufficient psi_1 coverage"):
        phase_averaged_reconstruct(empirical_source(vacuum, n_alpha=4, n_psi=4), small_grid, PHASES)


def test_delta_dataset_reconstructs_phase_averaged_matrix(coherent, symmetric_grid):
    source = empirical_source(coherent, kind="delta")
    matrix = phase_averaged_reconstruct(source, symmetric_grid, PHASES)
    reference = phase_averaged_reconstruct(AnalyticCharFn(coherent), symmetric_grid, PHASES)
    assert compare_matrices(matrix, reference).linf <= 1e-2
    assert matrix.provenance["phase_averaged"] is True
