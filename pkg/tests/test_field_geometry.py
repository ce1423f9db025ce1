import numpy as np
import pytest

from errors import ValidationError
from field_geometry import coordinate_map, mode_arguments, nmode_weights, polar_angles
from quadrature_oracle import QuadratureGrid, sum_distribution_exact
from state_model import FieldScale, StateSpec, Vacuum, build_state


def test_two_mode_weights():
    assert nmode_weights([np.pi / 4]) == pytest.approx([np.sqrt(0.5), np.sqrt(0.5)])
    assert nmode_weights(0.3) == pytest.approx([np.cos(0.3), np.sin(0.3)])


def test_three_mode_weights_are_unit_norm():
    weights = nmode_weights([0.4, 1.1])
    assert weights == pytest.approx([np.cos(0.4), np.sin(0.4) * np.cos(1.1), np.sin(0.4) * np.sin(1.1)])
    assert np.sum(weights ** 2) == pytest.approx(1.0, abs=1e-15)


def test_three_mode_weights_at_quarter_angles():
    assert nmode_weights([np.pi / 4, np.pi / 4]) == pytest.approx([np.sqrt(2) / 2, 0.5, 0.5], abs=1e-15)


@pytest.mark.parametrize("angles, psi", [((np.pi / 4, np.pi / 4), (0.0, 0.0, 0.0)), ((0.4, 1.1), (0.3, -2.0, 1.2))])
def test_three_mode_vacuum_sum_variance(angles, psi):
    vacuum = build_state(StateSpec(n_modes=3, truncation_dim=4, kind=Vacuum()))
    grid = QuadratureGrid.symmetric(10.0, 256)
    density = sum_distribution_exact(vacuum, list(angles), list(psi), grid)
    assert np.sum(density) * grid.width == pytest.approx(1.0, abs=1e-10)
    assert np.sum(grid.centers ** 2 * density) * grid.width == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("angle", [0.0, np.pi / 2, -0.1])
def test_weights_reject_angles_outside_open_range(angle):
    with pytest.raises(ValidationError):
        nmode_weights([angle])


def test_polar_angles_invert_weights():
    angles = np.array([[0.2, 0.7], [1.3, 0.05]])
    components = 2.5 * np.stack([nmode_weights(a) for a in angles])
    assert polar_angles(components) == pytest.approx(angles)


def test_mode_arguments_on_the_diagonal():
    z, psi = mode_arguments(np.array([-2.0, 3.0]), 0.0, 0.5, FieldScale())
    assert z == pytest.approx([2.0, 3.0])
    assert psi == pytest.approx([0.5 - np.pi, 0.5])


def test_mode_arguments_at_zero_y():
    scale = FieldScale(2.0)
    z, psi = mode_arguments(np.array([0.0]), 1.0, 0.0, scale)
    assert z == pytest.approx([0.25])
    assert psi == pytest.approx([-np.pi / 2])


def test_coordinate_map_radius_and_angles():
    mapped = coordinate_map(np.array([[1.0, 2.0]]), [0.0, 0.5], [0.0, 0.0])
    z2 = np.sqrt(4.0 + 0.25)
    assert mapped.z[0] == pytest.approx([1.0, z2])
    assert mapped.y_radial[0] == pytest.approx(np.sqrt(1.0 + z2 ** 2))
    assert mapped.beta[0, 0] == pytest.approx(np.arctan2(z2, 1.0))
    assert mapped.psi[0, 1] == pytest.approx(-np.arctan2(0.5, 2.0))


def test_coordinate_map_rejects_negative_offsets():
    with pytest.raises(ValidationError, match="non-negative"):
        coordinate_map(np.zeros((1, 2)), [0.5, -0.5], [0.0, 0.0])
