import abc
from typing import Any, Dict, Optional, Sequence

import numpy as np

from field_geometry import polar_angles
from state_model import FieldScale


class CharFnSource(abc.ABC):
    """Abstract base class for everything that can supply the joint characteristic function."""

    # True when Psi already averages over a common shift of all phases.
    phase_averaged = False

    def __init__(self, n_modes: int, scale: FieldScale):
        self.n_modes = n_modes
        self.scale = scale

    @property
    @abc.abstractmethod
    def name(self) -> str:
        """Return the name of the source."""
        pass

    @abc.abstractmethod
    def evaluate(self, z: np.ndarray, angles: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """
        Psi(z w_1, ..., z w_N, psi) for many queries.

        :param z: Radial arguments, shape (Q,), non-negative.
        :param angles: Hyperspherical angles, shape (Q, N-1), each in [0, pi/2].
        :param psi: Phases, shape (Q, N).
        :return: Complex array of shape (Q,).
        """
        pass

    def evaluate_modes(self, z_modes: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """Psi at per-mode arguments z_k >= 0, shape (Q, N)."""
        z_modes = np.asarray(z_modes, dtype=float)
        radius = np.sqrt(np.sum(z_modes ** 2, axis=-1))
        return self.evaluate(radius, polar_angles(z_modes), psi)

    def evaluate_product(self, z_axes: Sequence[np.ndarray],
                         psi_axes: Sequence[np.ndarray]) -> Optional[np.ndarray]:
        """Psi on a tensor grid where z_k, psi_k vary along axis k only; None when unsupported."""
        return None

    def prepare(self, z_max: float) -> None:
        """Called before a batch of queries whose radial argument stays below z_max."""

    def supports_phase_shifts(self) -> bool:
        """Whether phases may be shifted over a full period (needed to average reconstructions)."""
        return True

    @property
    def transform_stages(self) -> int:
        """Fourier stages per reconstructed element: one for Psi plus N outer transforms."""
        return self.n_modes + 1

    def describe(self) -> Dict[str, Any]:
        return {"source": self.name, "f_abs": self.scale.f_abs, "phase_averaged": self.phase_averaged}

    @classmethod
    def for_benchmark(cls, state, scale: FieldScale, control) -> Optional["CharFnSource"]:
        """
        Builds this source for a benchmark run, or returns None when the
        source is not a reconstruction method of its own.
        """
        return None
