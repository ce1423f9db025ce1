from typing import Optional, Sequence

import numpy as np

from field_geometry import hyperspherical_weights
from quadrature_oracle import QuadratureGrid, default_quadrature_grid, wavefunction_table
from sources.base_source import CharFnSource
from state_model import DensityOperatorFock, FieldScale, trace_product_batch, trace_product_grid

# Field-strength bins per mode for the explicit Fourier sums.
JOINT_BINS = 256


class JointCharFn(CharFnSource):
    """
    Psi obtained from the joint field-strength distribution by N explicit Fourier sums.

    Psi(z, psi) = sum_F dF^N exp(i z.F) p_j(F, psi). The joint distribution is
    expanded in number states, so each mode's Fourier sum becomes the kernel
    K[m, n](z, psi) = e^{i (m - n) psi} sum_F dF e^{i z F} u_m(F) u_n(F).
    Together with the N outer transforms this is the 2N-transform baseline.
    """

    def __init__(self, state: DensityOperatorFock, scale: FieldScale = FieldScale(),
                 grid: Optional[QuadratureGrid] = None):
        super().__init__(state.n_modes, scale)
        self.state = state
        self.grid = grid or default_quadrature_grid(state, scale, n_bins=JOINT_BINS)
        self._table = wavefunction_table(state.dim_per_mode - 1, self.grid.centers, scale)

    @property
    def name(self) -> str:
        return "joint"

    @property
    def transform_stages(self) -> int:
        return 2 * self.n_modes

    def _kernels(self, z: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """K[q, m, n] for per-mode arguments z (Q,) and psi (Q,)."""
        fourier = self.grid.width * np.exp(1j * np.outer(z, self.grid.centers))
        overlap = np.einsum("qf,fm,fn->qmn", fourier, self._table, self._table)
        index = np.arange(self.state.dim_per_mode)
        rotation = np.exp(1j * (index[:, None] - index[None, :]) * psi[:, None, None])
        return overlap * rotation

    def evaluate(self, z: np.ndarray, angles: np.ndarray, psi: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        weights = hyperspherical_weights(np.asarray(angles, dtype=float).reshape(z.size, self.n_modes - 1))
        return self.evaluate_modes(z[:, None] * weights, psi)

    def evaluate_modes(self, z_modes: np.ndarray, psi: np.ndarray) -> np.ndarray:
        z_modes = np.asarray(z_modes, dtype=float)
        psi = np.broadcast_to(np.asarray(psi, dtype=float), z_modes.shape)
        kernels = [self._kernels(z_modes[:, k], psi[:, k]) for k in range(self.n_modes)]
        return trace_product_batch(self.state, kernels)

    def evaluate_product(self, z_axes: Sequence[np.ndarray],
                         psi_axes: Sequence[np.ndarray]) -> Optional[np.ndarray]:
        kernels = [self._kernels(np.asarray(z, dtype=float), np.asarray(p, dtype=float))
                   for z, p in zip(z_axes, psi_axes)]
        return trace_product_grid(self.state, kernels)

    def describe(self):
        out = super().describe()
        out.update({"joint_f_max": self.grid.f_max, "joint_bins": self.grid.n_bins})
        return out

    @classmethod
    def for_benchmark(cls, state, scale, control) -> Optional["JointCharFn"]:
        return cls(state, scale)
