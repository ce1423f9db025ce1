"""Simulated sum-field homodyne measurements over a grid of control settings."""
import hashlib
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from errors import GridTooCoarseError, TomographyError, ValidationError
from quadrature_oracle import GRID_MASS_TOL, QuadratureGrid, sum_distribution_exact
from state_model import DensityOperatorFock, FieldScale

logger = logging.getLogger(__name__)

# Inverse-CDF sampling works on bins this many times finer than the dataset grid.
SAMPLING_REFINEMENT = 8
MIN_PHASE_AVERAGE = 16
DATASET_MODES = ("samples", "histogram", "analytic")
CONTROL_KINDS = ("absolute", "delta")


@dataclass(frozen=True)
class DetectorModel:
    """Quantum efficiency of the balanced detector."""

    eta: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.eta) and 0 < self.eta <= 1):
            raise ValidationError(f"eta must lie in (0, 1], got {self.eta}")

    def noise_variance(self, scale: FieldScale = FieldScale()) -> float:
        """Variance |F|^2 (1 - eta) / eta of the added Gaussian noise."""
        return scale.f_abs ** 2 * (1 - self.eta) / self.eta

    def noise_exponent(self, y, scale: FieldScale = FieldScale()):
        """y^2 |F|^2 (1 - eta) / (2 eta); the compensation factor is its exponential."""
        return np.square(y) * self.noise_variance(scale) / 2


def _check_axis(values: np.ndarray, name: str):
    if values.ndim != 1 or values.size == 0:
        raise ValidationError(f"{name} must be a non-empty list")
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{name} must be finite")
    if np.any(np.diff(values) <= 0):
        raise ValidationError(f"{name} must be strictly increasing")


@dataclass(frozen=True)
class ControlGrid:
    """
    Mixing angles and local-oscillator phases at which the sum field is recorded.

    ``alpha_axes`` holds N-1 angle axes whose Cartesian product gives the
    hyperspherical angle tuples. For ``kind == "absolute"`` there is one phase
    axis per mode, each inside [phi_k - pi, phi_k]. For ``kind == "delta"``
    there are N-1 axes of phase differences psi_k - psi_1 (k = 2..N) in
    [-pi, pi), and every record is averaged over ``n_average`` uniform psi_1
    values starting at phi_1.
    """

    alpha_axes: Tuple[np.ndarray, ...]
    psi_axes: Tuple[np.ndarray, ...]
    quadrature_grid: QuadratureGrid
    phases: Tuple[float, ...]
    kind: str = "absolute"
    n_average: int = MIN_PHASE_AVERAGE

    def __post_init__(self):
        object.__setattr__(self, "alpha_axes", tuple(np.asarray(a, dtype=float) for a in self.alpha_axes))
        object.__setattr__(self, "psi_axes", tuple(np.asarray(p, dtype=float) for p in self.psi_axes))
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))
        if self.kind not in CONTROL_KINDS:
            raise ValidationError(f"control grid kind must be one of {CONTROL_KINDS}, got {self.kind!r}")
        if not self.alpha_axes:
            raise ValidationError("control grid needs at least one mixing-angle axis")
        n_modes = len(self.alpha_axes) + 1
        if len(self.phases) != n_modes:
            raise ValidationError(f"control grid needs {n_modes} reference phases, got {len(self.phases)}")
        for i, axis in enumerate(self.alpha_axes):
            _check_axis(axis, f"alpha axis {i}")
            if np.any(axis <= 0) or np.any(axis >= np.pi / 2):
                raise ValidationError(f"alpha axis {i} must lie in (0, pi/2)")
        expected = n_modes if self.kind == "absolute" else n_modes - 1
        if len(self.psi_axes) != expected:
            raise ValidationError(f"{self.kind} control grid needs {expected} phase axes, got {len(self.psi_axes)}")
        for k, axis in enumerate(self.psi_axes):
            _check_axis(axis, f"psi axis {k}")
            if self.kind == "absolute":
                phi = self.phases[k]
                if axis[-1] - axis[0] > np.pi + 1e-12:
                    raise ValidationError(f"psi axis {k} spans more than pi")
                if axis[0] < phi - np.pi - 1e-12 or axis[-1] > phi + 1e-12:
                    raise ValidationError(f"psi axis {k} must lie in [phi_{k} - pi, phi_{k}]")
            elif axis[0] < -np.pi - 1e-12 or axis[-1] >= np.pi:
                raise ValidationError(f"phase-difference axis {k} must lie in [-pi, pi)")
        if self.kind == "delta" and self.n_average < MIN_PHASE_AVERAGE:
            raise ValidationError(f"phase averaging needs n_average >= {MIN_PHASE_AVERAGE}, got {self.n_average}")

    @property
    def n_modes(self) -> int:
        return len(self.alpha_axes) + 1

    @property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return self.alpha_axes + self.psi_axes

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n_settings(self) -> int:
        return int(np.prod(self.shape))

    def alpha_points(self) -> List[Tuple[float, ...]]:
        return [tuple(float(a) for a in point) for point in itertools.product(*self.alpha_axes)]

    def indices(self) -> Iterator[Tuple[int, ...]]:
        """Setting multi-indices (alpha indices, then phase indices) in row-major order."""
        return np.ndindex(*self.shape)

    def split_index(self, index: Sequence[int]) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        n_alpha = len(self.alpha_axes)
        return tuple(index[:n_alpha]), tuple(index[n_alpha:])

    def average_offsets(self) -> np.ndarray:
        """The psi_1 values a delta-kind record is averaged over."""
        return self.phases[0] + 2 * np.pi * np.arange(self.n_average) / self.n_average

    def setting(self, index: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Angles and phases of one setting.

        For delta grids the phases are returned with psi_1 = 0 and
        psi_k = delta psi_k; the record averages over a common shift.
        """
        alpha_index, psi_index = self.split_index(index)
        alpha = np.array([axis[i] for axis, i in zip(self.alpha_axes, alpha_index)])
        values = np.array([axis[i] for axis, i in zip(self.psi_axes, psi_index)])
        if self.kind == "delta":
            values = np.concatenate([[0.0], values])
        return alpha, values


def default_control_grid(n_modes: int, n_alpha: int, n_psi: int, phases: Sequence[float],
                         grid: QuadratureGrid, kind: str = "absolute",
                         n_average: int = MIN_PHASE_AVERAGE) -> ControlGrid:
    """Cell-centred angles (j + 1/2) pi / (2 n) and uniform phases on [phi - pi, phi)."""
    if n_modes < 2:
        raise ValidationError("sum-field measurements need at least two modes")
    alpha = (np.arange(n_alpha) + 0.5) * np.pi / (2 * n_alpha)
    if kind == "absolute":
        psi_axes = tuple(phi - np.pi + np.pi * np.arange(n_psi) / n_psi for phi in phases)
    else:
        psi_axes = (-np.pi + 2 * np.pi * np.arange(n_psi) / n_psi,) * (n_modes - 1)
    return ControlGrid(alpha_axes=(alpha,) * (n_modes - 1), psi_axes=psi_axes, quadrature_grid=grid,
                       phases=tuple(phases), kind=kind, n_average=n_average)


@dataclass(frozen=True)
class SettingRecord:
    """Data of one control setting: raw samples, histogram counts or exact densities."""

    index: Tuple[int, ...]
    seed: Optional[int] = None
    samples: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    density: Optional[np.ndarray] = None

    def __post_init__(self):
        present = [x is not None for x in (self.samples, self.counts, self.density)]
        if sum(present) != 1:
            raise ValidationError(f"setting {self.index} must hold exactly one of samples, counts or density")
        if self.samples is not None and not np.all(np.isfinite(self.samples)):
            raise ValidationError(f"setting {self.index} has non-finite samples")

    @property
    def kind(self) -> str:
        if self.samples is not None:
            return "samples"
        if self.counts is not None:
            return "histogram"
        return "analytic"


@dataclass
class SumFieldDataset:
    n_modes: int
    scale: FieldScale
    detector: DetectorModel
    seed: int
    samples_per_setting: int
    mode: str
    control: ControlGrid
    records: Dict[Tuple[int, ...], SettingRecord]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in DATASET_MODES:
            raise ValidationError(f"dataset mode must be one of {DATASET_MODES}, got {self.mode!r}")
        if self.control.n_modes != self.n_modes:
            raise ValidationError("control grid and dataset disagree on the number of modes")
        missing = [index for index in self.control.indices() if tuple(index) not in self.records]
        if missing:
            raise ValidationError(f"dataset is missing {len(missing)} settings, first {missing[0]}")
        n_bins = self.control.quadrature_grid.n_bins
        for index, record in self.records.items():
            if record.kind != self.mode:
                raise ValidationError(f"setting {index} holds {record.kind} data in a {self.mode} dataset")
            if record.samples is not None and record.samples.size != self.samples_per_setting:
                raise ValidationError(f"setting {index} has {record.samples.size} samples, "
                                      f"expected {self.samples_per_setting}")
            if record.counts is not None:
                if record.counts.shape != (n_bins,):
                    raise ValidationError(f"setting {index} histogram has {record.counts.size} bins")
                if int(record.counts.sum()) != self.samples_per_setting:
                    raise ValidationError(f"setting {index} counts sum to {int(record.counts.sum())}, "
                                          f"expected {self.samples_per_setting}")
            if record.density is not None and record.density.shape != (n_bins,):
                raise ValidationError(f"setting {index} density has {record.density.size} bins")

    @property
    def phase_averaged(self) -> bool:
        return self.control.kind == "delta"


# --- distributions ---

def apply_efficiency(dist: np.ndarray, model: DetectorModel, scale: FieldScale,
                     grid: QuadratureGrid) -> np.ndarray:
    """
    Convolves a sum-field density with the detector's Gaussian noise.

    The density's discrete transform is multiplied by the noise characteristic
    function exp(-k^2 sigma^2 / 2), sigma^2 = |F|^2 (1 - eta)/eta, on a
    zero-padded grid so the convolution does not wrap around.

    :param dist: Density at the grid's bin centres.
    :return: The degraded density, renormalized on the grid.
    :raises GridTooCoarseError: The noise pushes more than GRID_MASS_TOL of
        the distribution past the grid edges.
    """
    dist = np.asarray(dist, dtype=float)
    if model.eta == 1:
        return dist.copy()
    width = grid.width
    sigma = np.sqrt(model.noise_variance(scale))
    pad = int(np.ceil(10 * sigma / width))
    size = fft.next_fast_len(dist.size + 2 * pad)
    padded = np.zeros(size)
    padded[pad:pad + dist.size] = dist
    k = 2 * np.pi * fft.rfftfreq(size, d=width)
    spectrum = fft.rfft(padded) * np.exp(-(k * sigma) ** 2 / 2)
    out = fft.irfft(spectrum, n=size)[pad:pad + dist.size]
    out = np.clip(out, 0.0, None)
    mass = float(np.sum(out) * width)
    escaped = float(np.sum(dist) * width) - mass
    if escaped > GRID_MASS_TOL:
        raise GridTooCoarseError(f"detector noise (eta={model.eta}) pushes {escaped:.3g} of the distribution "
                                 f"past |F| = {grid.f_max:.4g}", suggested_f_max=grid.f_max + 6 * sigma)
    return out / mass


def setting_distribution(state: DensityOperatorFock, alpha, psi, model: DetectorModel, grid: QuadratureGrid,
                         scale: FieldScale = FieldScale(), route: str = "fourier",
                         average_offsets: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Detected sum-field density for one setting.

    With ``average_offsets`` the density is averaged over a common shift of
    all phases by each offset (the phase-averaged distribution).
    """
    psi = np.asarray(psi, dtype=float)
    if average_offsets is None:
        density = sum_distribution_exact(state, alpha, psi, grid, scale, route)
    else:
        density = np.mean([sum_distribution_exact(state, alpha, psi + theta, grid, scale, route)
                           for theta in average_offsets], axis=0)
    return apply_efficiency(density, model, scale, grid)


def setting_seed(master_seed: int, index: Sequence[int]) -> int:
    """
    Per-setting random seed.

    The first 8 bytes (little endian) of BLAKE2b over the master seed and the
    setting multi-index, each packed as an unsigned 64-bit little-endian word.
    """
    payload = b"".join(int(v).to_bytes(8, "little", signed=False) for v in (master_seed, *index))
    return int.from_bytes(hashlib.blake2b(payload).digest()[:8], "little")


def sample_setting(state: DensityOperatorFock, alpha, psi, n_samples: int, model: DetectorModel, seed: int,
                   grid: QuadratureGrid, scale: FieldScale = FieldScale(), route: str = "fourier",
                   average_offsets: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Draws sum-field samples for one setting by inverse-CDF sampling.

    The detected density is evaluated on a grid SAMPLING_REFINEMENT times
    finer than ``grid``; its CDF is interpolated linearly between bin edges.

    :param n_samples: Number of samples, at least 1.
    :param seed: Seed of this setting's generator.
    :return: Array of ``n_samples`` field strengths inside the grid.
    """
    if n_samples < 1:
        raise ValidationError(f"need at least one sample per setting, got {n_samples}")
    fine = QuadratureGrid(grid.f_min, grid.f_max, grid.n_bins * SAMPLING_REFINEMENT)
    density = setting_distribution(state, alpha, psi, model, fine, scale, route, average_offsets)
    cdf = np.concatenate([[0.0], np.cumsum(np.clip(density, 0.0, None) * fine.width)])
    if 1.0 - cdf[-1] > GRID_MASS_TOL:
        raise GridTooCoarseError(f"{1.0 - cdf[-1]:.3g} of the detected distribution escapes the grid",
                                 suggested_f_max=1.5 * grid.f_max)
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    return np.interp(rng.random(n_samples), cdf, fine.edges)


def histogram_counts(samples: np.ndarray, grid: QuadratureGrid) -> np.ndarray:
    """Left-closed bins; a sample at exactly f_max lands in the last bin."""
    counts, _ = np.histogram(samples, bins=grid.edges)
    return counts.astype(np.int64)


def _record_for_setting(state, control: ControlGrid, index, n_samples, model, master_seed, scale, mode, route):
    alpha, psi = control.setting(index)
    grid = control.quadrature_grid
    average = None if control.kind == "absolute" else control.average_offsets()
    if mode == "analytic":
        density = setting_distribution(state, alpha, psi, model, grid, scale, route, average)
        return SettingRecord(index=tuple(index), density=density)
    seed = setting_seed(master_seed, index)
    samples = sample_setting(state, alpha, psi, n_samples, model, seed, grid, scale, route, average)
    if mode == "samples":
        return SettingRecord(index=tuple(index), seed=seed, samples=samples)
    return SettingRecord(index=tuple(index), seed=seed, counts=histogram_counts(samples, grid))


def build_dataset(state: DensityOperatorFock, control: ControlGrid, n_samples: int, model: DetectorModel,
                  seed: int, scale: FieldScale = FieldScale(), mode: str = "samples", threads: int = 1,
                  route: str = "fourier") -> SumFieldDataset:
    """
    Simulates the sum-field measurement at every control setting.

    Every setting draws from its own generator seeded by ``setting_seed``, so
    any subset of the grid regenerates identically regardless of ``threads``.

    :param n_samples: Samples per setting (ignored, and recorded as 0, for mode=analytic).
    :param mode: ``samples`` keeps raw samples, ``histogram`` keeps bin counts,
        ``analytic`` stores the exact detected densities.
    :return: The dataset.
    """
    if mode not in DATASET_MODES:
        raise ValidationError(f"dataset mode must be one of {DATASET_MODES}, got {mode!r}")
    if control.n_modes != state.n_modes:
        raise ValidationError(f"control grid has {control.n_modes} modes, state has {state.n_modes}")
    if mode == "analytic":
        n_samples = 0
    indices = [tuple(index) for index in control.indices()]
    logger.info("simulating %d settings (%s mode, M=%d, eta=%g)", len(indices), mode, n_samples, model.eta)

    def run(index):
        try:
            return _record_for_setting(state, control, index, n_samples, model, seed, scale, mode, route)
        except TomographyError as e:
            alpha, psi = control.setting(index)
            raise type(e)(f"setting alpha={alpha.tolist()} psi={psi.tolist()}: {e}") from e

    records = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for done, record in enumerate(pool.map(run, indices), start=1):
            records[record.index] = record
            if done % max(1, len(indices) // 8) == 0 or done == len(indices):
                logger.info("simulated %d/%d settings", done, len(indices))
    return SumFieldDataset(n_modes=state.n_modes, scale=scale, detector=model, seed=int(seed),
                           samples_per_setting=int(n_samples), mode=mode, control=control, records=records,
                           metadata={"route": route, "trace_deficit": state.trace_deficit})


def interferometer_params(transmittance: float, theta1: float, theta2: float) -> Tuple[float, float, float]:
    """
    Control parameters realised by a lossless beam splitter of transmittance T.

    The detected mode is b = sqrt(T) e^{-i theta1} a_1 + sqrt(1 - T) e^{-i theta2} a_2,
    homodyned with a local oscillator of phase 0, so its field strength is
    cos(alpha) F_1(theta1) + sin(alpha) F_2(theta2) with alpha = arccos(sqrt(T)).

    :return: (alpha, psi_1, psi_2).
    """
    if not (np.isfinite(transmittance) and 0 < transmittance < 1):
        raise ValidationError(f"transmittance must lie strictly between 0 and 1, got {transmittance}")
    return float(np.arccos(np.sqrt(transmittance))), float(theta1), float(theta2)
