import hashlib

import numpy as np
import pytest
from scipy import stats

from errors import GridTooCoarseError, ValidationError
from measurement import (SAMPLING_REFINEMENT, ControlGrid, DetectorModel, apply_efficiency, build_dataset,
                         default_control_grid, histogram_counts, interferometer_params, sample_setting,
                         setting_distribution, setting_seed)
from quadrature_oracle import QuadratureGrid, default_quadrature_grid, sum_distribution_exact
from state_model import StateSpec, Vacuum, build_state


@pytest.fixture
def vacuum_grid(vacuum):
    return default_quadrature_grid(vacuum)


def test_detector_efficiency_range():
    with pytest.raises(ValidationError, match=r"\(0, 1\]"):
        DetectorModel(1.2)
    with pytest.raises(ValidationError):
        DetectorModel(0.0)
    assert DetectorModel(0.5).noise_variance() == pytest.approx(1.0)


def test_setting_seed_is_blake2b_of_little_endian_words():
    payload = (7).to_bytes(8, "little") + (3).to_bytes(8, "little") + (5).to_bytes(8, "little")
    expected = int.from_bytes(hashlib.blake2b(payload).digest()[:8], "little")
    assert setting_seed(7, (3, 5)) == expected
    assert setting_seed(7, (3, 5)) != setting_seed(7, (5, 3))
    assert setting_seed(2 ** 64 - 1, (0,)) == setting_seed(2 ** 64 - 1, (0,))


def test_default_control_grid(vacuum_grid):
    control = default_control_grid(2, 8, 8, (0.0, 0.0), vacuum_grid)
    assert control.shape == (8, 8, 8)
    assert control.n_settings == 512
    assert control.alpha_axes[0][0] == pytest.approx(np.pi / 32)
    assert control.psi_axes[0][0] == pytest.approx(-np.pi)
    assert control.psi_axes[1][-1] < 0
    alpha, psi = control.setting((1, 0, 7))
    assert alpha == pytest.approx([3 * np.pi / 32])
    assert psi == pytest.approx([-np.pi, -np.pi / 8])


def test_three_mode_control_grid(vacuum_grid):
    control = default_control_grid(3, 2, 2, (0.0, 0.0, 0.0), vacuum_grid)
    assert control.shape == (2, 2, 2, 2, 2)
    assert len(control.alpha_points()) == 4


def test_control_grid_rejects_phase_axis_outside_pi_interval(vacuum_grid):
    with pytest.raises(ValidationError, match="psi axis 1"):
        ControlGrid(alpha_axes=(np.array([0.5]),), psi_axes=(np.array([-1.0]), np.array([0.5])),
                    quadrature_grid=vacuum_grid, phases=(0.0, 0.0))


def test_delta_control_grid(vacuum_grid):
    control = default_control_grid(2, 4, 6, (0.0, 0.0), vacuum_grid, kind="delta")
    assert control.shape == (4, 6)
    alpha, psi = control.setting((0, 0))
    assert psi == pytest.approx([0.0, -np.pi])
    assert control.average_offsets().size == 16
    with pytest.raises(ValidationError, match="n_average"):
        default_control_grid(2, 4, 6, (0.0, 0.0), vacuum_grid, kind="delta", n_average=8)


def test_efficiency_adds_gaussian_noise(vacuum, scale):
    grid = QuadratureGrid.symmetric(12.0, 256)
    density = sum_distribution_exact(vacuum, 0.5, [0.0, 0.0], grid)
    degraded = apply_efficiency(density, DetectorModel(0.5), scale, grid)
    assert np.sum(degraded) * grid.width == pytest.approx(1.0)
    variance = np.sum(grid.centers ** 2 * degraded) * grid.width
    assert variance == pytest.approx(2.0, abs=1e-5)
    assert np.array_equal(apply_efficiency(density, DetectorModel(1.0), scale, grid), density)


@pytest.mark.parametrize("eta", [0.9, 0.6])
def test_efficiency_keeps_mean_and_adds_noise_variance(eta, coherent, scale):
    grid = QuadratureGrid.symmetric(12.0, 256)
    density = sum_distribution_exact(coherent, 0.7, [0.4, -1.0], grid)
    degraded = apply_efficiency(density, DetectorModel(eta), scale, grid)
    moments = lambda d: (np.sum(grid.centers * d) * grid.width, np.sum(grid.centers ** 2 * d) * grid.width)
    mean, second = moments(density)
    degraded_mean, degraded_second = moments(degraded)
    assert np.sum(degraded) * grid.width == pytest.approx(1.0, abs=1e-12)
    assert degraded_mean == pytest.approx(mean, abs=1e-6)
    assert degraded_second - degraded_mean ** 2 - (second - mean ** 2) == pytest.approx((1 - eta) / eta, abs=1e-6)


@pytest.mark.parametrize("n_modes, alpha, psi", [
    (2, 0.3, [0.0, 0.0]),
    (2, 1.2, [2.0, -0.5]),
    (3, [np.pi / 4, np.pi / 4], [0.0, 0.0, 0.0]),
    (3, [0.4, 1.1], [0.3, -2.0, 1.2]),
])
def test_efficiency_commutes_with_mixing(n_modes, alpha, psi, scale):
    vacuum = build_state(StateSpec(n_modes=n_modes, truncation_dim=4, kind=Vacuum()))
    grid = QuadratureGrid.symmetric(12.0, 256)
    eta = 0.7
    degraded = setting_distribution(vacuum, alpha, psi, DetectorModel(eta), grid, scale)
    variance = np.sum(grid.centers ** 2 * degraded) * grid.width
    assert variance == pytest.approx(1 / eta, abs=1e-8)
    expected = np.exp(-grid.centers ** 2 * eta / 2) * np.sqrt(eta / (2 * np.pi))
    assert np.max(np.abs(degraded - expected)) < 1e-10


def test_noise_that_leaves_the_grid_is_an_error(vacuum, scale):
    grid = default_quadrature_grid(vacuum)
    density = sum_distribution_exact(vacuum, 0.5, [0.0, 0.0], grid)
    with pytest.raises(GridTooCoarseError, match="suggested f_max") as info:
        apply_efficiency(density, DetectorModel(0.1), scale, grid)
    assert info.value.suggested_f_max > grid.f_max
    with pytest.raises(GridTooCoarseError):
        sample_setting(vacuum, 0.5, [0.0, 0.0], 1000, DetectorModel(0.1), 0, grid)


def test_default_grid_widens_with_detector_noise(vacuum, scale):
    model = DetectorModel(0.1)
    grid = default_quadrature_grid(vacuum, scale, noise_variance=model.noise_variance(scale))
    assert grid.f_max == pytest.approx(6.0 + 18.0)
    samples = sample_setting(vacuum, 0.5, [0.0, 0.0], 100000, model, 0, grid)
    assert samples.var() == pytest.approx(10.0, abs=0.3)


def test_phase_averaged_setting_distribution(coherent):
    grid = default_quadrature_grid(coherent)
    offsets = 2 * np.pi * np.arange(16) / 16
    averaged = setting_distribution(coherent, 0.6, [0.0, 0.4], DetectorModel(), grid, average_offsets=offsets)
    manual = np.mean([sum_distribution_exact(coherent, 0.6, [t, 0.4 + t], grid) for t in offsets], axis=0)
    assert np.max(np.abs(averaged - manual)) < 1e-14


def test_sampling_is_deterministic_and_inside_grid(coherent):
    grid = default_quadrature_grid(coherent)
    draw = lambda seed: sample_setting(coherent, 0.4, [0.0, 0.0], 20000, DetectorModel(), seed, grid)
    samples = draw(123)
    assert np.array_equal(samples, draw(123))
    assert not np.array_equal(samples, draw(124))
    assert samples.min() >= grid.f_min and samples.max() <= grid.f_max
    assert samples.mean() == pytest.approx(2 * np.cos(0.4), abs=0.05)
    assert samples.var() == pytest.approx(1.0, abs=0.05)


def test_samples_follow_the_exact_distribution(coherent):
    grid = default_quadrature_grid(coherent)
    n_samples = 20000
    alpha, psi = 0.9, [0.6, -0.2]
    samples = sample_setting(coherent, alpha, psi, n_samples, DetectorModel(), 17, grid)
    fine = QuadratureGrid(grid.f_min, grid.f_max, grid.n_bins * SAMPLING_REFINEMENT)
    density = sum_distribution_exact(coherent, alpha, psi, fine)
    cdf = np.concatenate([[0.0], np.cumsum(density) * fine.width])
    cdf /= cdf[-1]
    statistic = stats.kstest(samples, lambda x: np.interp(x, fine.edges, cdf)).statistic
    assert statistic <= 1.63 / np.sqrt(n_samples)


def test_sampling_reports_escaping_mass(coherent):
    with pytest.raises(GridTooCoarseError):
        sample_setting(coherent, 0.3, [0.0, 0.0], 10, DetectorModel(), 0, QuadratureGrid.symmetric(2.0, 16))


def test_histogram_counts_edge_handling():
    grid = QuadratureGrid.symmetric(1.0, 8)
    counts = histogram_counts(np.array([-1.0, 0.0, 1.0, 0.99]), grid)
    assert counts.sum() == 4
    assert counts[0] == 1 and counts[4] == 1 and counts[-1] == 2


def test_histogram_dataset_counts_sum_to_samples(vacuum, vacuum_grid):
    control = default_control_grid(2, 2, 2, (0.0, 0.0), vacuum_grid)
    dataset = build_dataset(vacuum, control, 500, DetectorModel(), 9, mode="histogram")
    assert len(dataset.records) == 8
    for record in dataset.records.values():
        assert record.counts.sum() == 500
        assert record.seed == setting_seed(9, record.index)


def test_dataset_independent_of_thread_count(coherent):
    control = default_control_grid(2, 2, 3, (0.0, 0.0), default_quadrature_grid(coherent))
    serial = build_dataset(coherent, control, 300, DetectorModel(0.8), 42, threads=1)
    parallel = build_dataset(coherent, control, 300, DetectorModel(0.8), 42, threads=4)
    for index, record in serial.records.items():
        assert np.array_equal(record.samples, parallel.records[index].samples)


def test_analytic_dataset(vacuum, vacuum_grid):
    control = default_control_grid(2, 2, 2, (0.0, 0.0), vacuum_grid)
    dataset = build_dataset(vacuum, control, 1000, DetectorModel(), 0, mode="analytic")
    assert dataset.samples_per_setting == 0
    for record in dataset.records.values():
        assert record.seed is None
        assert np.sum(record.density) * vacuum_grid.width == pytest.approx(1.0, abs=1e-8)


def test_generation_errors_name_the_setting(coherent):
    control = default_control_grid(2, 1, 1, (0.0, 0.0), QuadratureGrid.symmetric(2.0, 16))
    with pytest.raises(GridTooCoarseError, match="setting alpha="):
        build_dataset(coherent, control, 10, DetectorModel(), 0)


def test_interferometer_params():
    alpha, psi1, psi2 = interferometer_params(0.5, 0.1, -0.2)
    assert alpha == pytest.approx(np.pi / 4)
    assert (psi1, psi2) == (0.1, -0.2)
    with pytest.raises(ValidationError):
        interferometer_params(1.0, 0.0, 0.0)
