from typing import Optional, Sequence

import numpy as np

from errors import ValidationError
from measurement import MIN_PHASE_AVERAGE
from sources.base_source import CharFnSource


class PhaseAveragedCharFn(CharFnSource):
    """Psi averaged over common shifts theta_j = 2 pi j / n of all phases."""

    phase_averaged = True

    def __init__(self, base: CharFnSource, n_average: int = MIN_PHASE_AVERAGE):
        if n_average < MIN_PHASE_AVERAGE:
            raise ValidationError(f"phase averaging needs at least {MIN_PHASE_AVERAGE} shifts, got {n_average}")
        if base.phase_averaged:
            raise ValidationError(f"source {base.name!r} is already phase averaged")
        if not base.supports_phase_shifts():
            raise ValidationError(f"source {base.name!r} does not cover shifted phases")
        super().__init__(base.n_modes, base.scale)
        self.base = base
        self.shifts = 2 * np.pi * np.arange(n_average) / n_average

    @property
    def name(self) -> str:
        return f"{self.base.name}_phase_averaged"

    @property
    def transform_stages(self) -> int:
        return self.base.transform_stages

    def prepare(self, z_max: float) -> None:
        self.base.prepare(z_max)

    def evaluate(self, z: np.ndarray, angles: np.ndarray, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        return np.mean([self.base.evaluate(z, angles, psi + theta) for theta in self.shifts], axis=0)

    def evaluate_modes(self, z_modes: np.ndarray, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        return np.mean([self.base.evaluate_modes(z_modes, psi + theta) for theta in self.shifts], axis=0)

    def evaluate_product(self, z_axes: Sequence[np.ndarray],
                         psi_axes: Sequence[np.ndarray]) -> Optional[np.ndarray]:
        total = None
        for theta in self.shifts:
            value = self.base.evaluate_product(z_axes, [np.asarray(p, dtype=float) + theta for p in psi_axes])
            if value is None:
                return None
            total = value if total is None else total + value
        return total / self.shifts.size

    def describe(self):
        out = self.base.describe()
        out.update({"source": self.name, "phase_averaged": True, "n_average": int(self.shifts.size)})
        return out
