"""Mixing weights and the change of variables used by the sum-field reconstruction."""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from errors import ValidationError
from state_model import FieldScale


def hyperspherical_weights(angles: np.ndarray) -> np.ndarray:
    """
    Vectorised mixing weights for angles of shape (..., N-1).

    w_1 = cos a_1, w_2 = sin a_1 cos a_2, ..., w_N = sin a_1 ... sin a_{N-1}.
    The last weight is taken as sqrt(1 - sum of the others squared) so the
    weights are unit-norm to rounding. Angles in the closed range [0, pi/2]
    are accepted.
    """
    angles = np.asarray(angles, dtype=float)
    n_angles = angles.shape[-1]
    weights = np.empty(angles.shape[:-1] + (n_angles + 1,))
    sine_product = np.ones(angles.shape[:-1])
    for k in range(n_angles):
        weights[..., k] = sine_product * np.cos(angles[..., k])
        sine_product = sine_product * np.sin(angles[..., k])
    partial = np.sum(weights[..., :n_angles] ** 2, axis=-1)
    weights[..., n_angles] = np.sqrt(np.clip(1.0 - partial, 0.0, None))
    return weights


def nmode_weights(angles: Sequence[float]) -> np.ndarray:
    """
    Mixing weights of the N-mode sum field for N-1 hyperspherical angles.

    For N = 2 this is (cos alpha, sin alpha).

    :param angles: N-1 angles, each in (0, pi/2).
    :return: Weight vector of length N with unit norm.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.ndim != 1 or angles.size < 1:
        raise ValidationError("need at least one mixing angle")
    if np.any(angles <= 0) or np.any(angles >= np.pi / 2):
        raise ValidationError(f"mixing angles must lie in (0, pi/2), got {angles.tolist()}")
    return hyperspherical_weights(angles)


def polar_angles(components: np.ndarray) -> np.ndarray:
    """
    Inverse of ``hyperspherical_weights`` for non-negative components (..., N).

    beta_j = arctan(sqrt(sum_{k>j} z_k^2) / z_j), each in [0, pi/2].
    """
    components = np.asarray(components, dtype=float)
    n_modes = components.shape[-1]
    tails = np.sqrt(np.cumsum((components ** 2)[..., ::-1], axis=-1)[..., ::-1])
    angles = np.empty(components.shape[:-1] + (n_modes - 1,))
    for j in range(n_modes - 1):
        angles[..., j] = np.arctan2(tails[..., j + 1], components[..., j])
    return angles


@dataclass(frozen=True)
class CoordinateMap:
    """Outer integration variables mapped onto characteristic-function arguments."""

    y: np.ndarray
    f_offset: np.ndarray
    phases: np.ndarray
    scale: FieldScale
    z: np.ndarray
    psi: np.ndarray
    y_radial: np.ndarray
    beta: np.ndarray


def mode_arguments(y: np.ndarray, f_offset: float, phase: float, scale: FieldScale):
    """
    Per-mode z_k and psi_k for outer variables y (any shape) and offset F'_k >= 0.

    z_k = sqrt(y^2 + F'^2/|F|^4), psi_k = phi_k - arccot(y |F|^2 / F'_k) with
    arccot in (0, pi). The arccot is evaluated as arctan2(F'_k, y |F|^2), which
    also covers F'_k = 0 without dividing.
    """
    f2 = scale.f_abs ** 2
    y = np.asarray(y, dtype=float)
    z = np.sqrt(y ** 2 + (f_offset / f2) ** 2)
    psi = phase - np.arctan2(f_offset, y * f2)
    return z, psi


def coordinate_map(y: Sequence[float], f_offset: Sequence[float], phases: Sequence[float],
                   scale: FieldScale = FieldScale()) -> CoordinateMap:
    """
    Maps outer variables y_k onto (z_k, psi_k), the radius y and the angles beta.

    :param y: Outer variables, shape (..., N).
    :param f_offset: Offsets F'_k >= 0, length N.
    :param phases: Reference phases phi_k, length N.
    :param scale: Mode amplitude |F|.
    :return: The mapped coordinates.
    """
    y = np.asarray(y, dtype=float)
    f_offset = np.asarray(f_offset, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if np.any(f_offset < 0):
        raise ValidationError("coordinate map needs non-negative offsets; resolve negative ones by Hermiticity")
    n_modes = y.shape[-1]
    if f_offset.shape != (n_modes,) or phases.shape != (n_modes,):
        raise ValidationError("offsets and phases must have one entry per mode")
    z = np.empty_like(y)
    psi = np.empty_like(y)
    for k in range(n_modes):
        z[..., k], psi[..., k] = mode_arguments(y[..., k], f_offset[k], phases[k], scale)
    y_radial = np.sqrt(np.sum(z ** 2, axis=-1))
    return CoordinateMap(y=y, f_offset=f_offset, phases=phases, scale=scale,
                         z=z, psi=psi, y_radial=y_radial, beta=polar_angles(z))
