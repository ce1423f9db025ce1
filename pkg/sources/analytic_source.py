from typing import Optional, Sequence

import numpy as np

from field_geometry import hyperspherical_weights
from sources.base_source import CharFnSource
from state_model import (DensityOperatorFock, FieldScale, characteristic_function_batch,
                         characteristic_function_product)


class AnalyticCharFn(CharFnSource):
    """Exact Psi of a known state (the ideal, noiseless experiment)."""

    def __init__(self, state: DensityOperatorFock, scale: FieldScale = FieldScale()):
        super().__init__(state.n_modes, scale)
        self.state = state

    @property
    def name(self) -> str:
        return "analytic"

    def evaluate(self, z: np.ndarray, angles: np.ndarray, psi: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        weights = hyperspherical_weights(np.asarray(angles, dtype=float).reshape(z.size, self.n_modes - 1))
        return characteristic_function_batch(self.state, z[:, None] * weights, psi, self.scale)

    def evaluate_modes(self, z_modes: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return characteristic_function_batch(self.state, z_modes, psi, self.scale)

    def evaluate_product(self, z_axes: Sequence[np.ndarray],
                         psi_axes: Sequence[np.ndarray]) -> Optional[np.ndarray]:
        return characteristic_function_product(self.state, z_axes, psi_axes, self.scale)

    def describe(self):
        out = super().describe()
        out["trace_deficit"] = self.state.trace_deficit
        return out
