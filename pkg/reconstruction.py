"""
Field-strength-basis density matrices from the joint characteristic function.

rho(F - F', F + F') = (2 pi)^{-N} integral dy e^{-i y.F} Psi(z(y), psi(y)),
with z_k, psi_k from ``field_geometry.mode_arguments``. For sum-field sources
Psi comes from one Fourier transform of the measured distributions, so every
element costs N + 1 transforms; the joint-distribution baseline needs 2N.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import (AmplificationError, CoverageError, FilterRequiredError, TomographyError,
                    ValidationError)
from field_geometry import coordinate_map, mode_arguments
from measurement import MIN_PHASE_AVERAGE, DetectorModel
from quadrature_oracle import DensityMatrixFS, FSMatrixPoint, OutputGrid, QuadratureGrid, invariant_residuals
from sources.base_source import CharFnSource
from sources.joint_source import JointCharFn
from sources.phase_averaged_source import PhaseAveragedCharFn
from state_model import DensityOperatorFock, FieldScale

logger = logging.getLogger(__name__)

DEFAULT_NODES = 128
# Outer integration box half-width in units of 1/|F|.
DEFAULT_Y_MAX = 8.0
DEFAULT_AMPLIFICATION_CEILING = float(np.exp(20.0))
AVERAGE_ORDERS = ("matrices", "distributions")


@dataclass(frozen=True)
class RegularizationFilter:
    """
    Radial cutoff for the outer integral, optionally with a cosine taper.

    The taper multiplies by (1 + cos(pi (y - y_cut + w) / w)) / 2 on
    [y_cut - w, y_cut]; nodes with y > y_cut are dropped.
    """

    y_cut: float = np.inf
    taper: str = "none"
    taper_width: float = 1.0
    amplification_ceiling: float = DEFAULT_AMPLIFICATION_CEILING

    def __post_init__(self):
        if not self.y_cut > 0:
            raise ValidationError(f"filter y_cut must be positive, got {self.y_cut}")
        if self.taper not in ("none", "cosine"):
            raise ValidationError(f"filter taper must be 'none' or 'cosine', got {self.taper!r}")
        if self.taper == "cosine" and not 0 < self.taper_width < self.y_cut:
            raise ValidationError(f"cosine taper width must lie in (0, y_cut), got {self.taper_width}")
        if not self.amplification_ceiling > 1:
            raise ValidationError("amplification ceiling must exceed 1")

    def window(self, y_radial: np.ndarray) -> np.ndarray:
        y_radial = np.asarray(y_radial, dtype=float)
        weights = (y_radial <= self.y_cut).astype(float)
        if self.taper == "cosine":
            start = self.y_cut - self.taper_width
            ramp = (y_radial > start) & (y_radial <= self.y_cut)
            weights[ramp] = 0.5 * (1 + np.cos(np.pi * (y_radial[ramp] - start) / self.taper_width))
        return weights

    def amplification_exponent(self, model: DetectorModel, scale: FieldScale) -> float:
        """y_cut^2 |F|^2 (1 - eta) / (2 eta)."""
        if model.eta == 1:
            return 0.0
        return float(model.noise_exponent(self.y_cut, scale))

    def as_dict(self) -> Dict[str, Any]:
        return {"y_cut": None if np.isinf(self.y_cut) else self.y_cut, "taper": self.taper,
                "taper_width": self.taper_width, "amplification_ceiling": self.amplification_ceiling}


@dataclass(frozen=True)
class QuadratureSettings:
    """Tensor-product trapezoid rule on [-b, b]^N, b = min(y_max/|F|, y_cut)."""

    nodes: int = DEFAULT_NODES
    y_max: float = DEFAULT_Y_MAX
    threads: int = 1

    def __post_init__(self):
        if self.nodes < 8:
            raise ValidationError(f"outer quadrature needs at least 8 nodes, got {self.nodes}")
        if not self.y_max > 0:
            raise ValidationError(f"y_max must be positive, got {self.y_max}")
        if self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")

    def as_dict(self) -> Dict[str, Any]:
        return {"nodes": self.nodes, "y_max": self.y_max}


@dataclass(frozen=True)
class ElementResult:
    value: complex
    amplification_bound: float
    amplification_exponent: float


def charfn_eval(source: CharFnSource, z: float, beta_angles: Sequence[float], psi: Sequence[float]) -> complex:
    """
    Psi(z w_1, ..., z w_N, psi) from a source, w the hyperspherical weights of the angles.

    :param source: Analytic, empirical, joint or phase-averaged source.
    :param z: Radial argument, z >= 0.
    :param beta_angles: N-1 angles in [0, pi/2].
    :param psi: N phases.
    :return: The complex value; empirical sources raise CoverageError outside their control ranges.
    """
    if not z >= 0:
        raise ValidationError(f"radial argument must be non-negative, got {z}")
    angles = np.asarray(beta_angles, dtype=float).reshape(1, source.n_modes - 1)
    psi = np.asarray(psi, dtype=float).reshape(1, source.n_modes)
    source.prepare(float(z))
    return complex(source.evaluate(np.array([float(z)]), angles, psi)[0])


def _resolve_filter(model: DetectorModel, regularization: Optional[RegularizationFilter],
                    scale: FieldScale) -> Tuple[RegularizationFilter, float]:
    if model.eta < 1 and (regularization is None or np.isinf(regularization.y_cut)):
        raise FilterRequiredError(f"eta={model.eta} < 1 amplifies noise as exp(y^2 |F|^2 (1-eta)/(2 eta)); "
                                  "give a regularization filter with a finite y_cut (--filter-ycut)")
    regularization = regularization or RegularizationFilter()
    exponent = regularization.amplification_exponent(model, scale)
    ceiling = np.log(regularization.amplification_ceiling)
    if exponent > ceiling:
        raise AmplificationError(f"amplification bound e^{exponent:.4g} exceeds the ceiling e^{ceiling:.4g}; "
                                 "use a smaller y_cut or a larger eta")
    if model.eta < 1:
        logger.info("efficiency compensation eta=%g, y_cut=%g: amplification bound e^%.4g = %.4g",
                    model.eta, regularization.y_cut, exponent, np.exp(exponent))
    return regularization, exponent


def _outer_axis(regularization: RegularizationFilter, quad: QuadratureSettings,
                scale: FieldScale) -> Tuple[np.ndarray, np.ndarray]:
    half = min(quad.y_max / scale.f_abs, regularization.y_cut)
    y = np.linspace(-half, half, quad.nodes)
    weights = np.full(quad.nodes, y[1] - y[0])
    weights[[0, -1]] /= 2
    return y, weights


@dataclass(frozen=True)
class _OffsetJob:
    """Non-negative offsets plus the modes that were reflected to get there."""

    offset: Tuple[float, ...]
    flipped: Tuple[bool, ...]


def _plan_offsets(grid: OutputGrid) -> Tuple[Dict[Tuple[int, ...], Any], List[_OffsetJob]]:
    """
    Decides how each offset multi-index is obtained.

    All-non-negative offsets are evaluated directly. All-non-positive offsets
    whose negation is on the grid are filled by Hermiticity. Anything else is
    evaluated directly after reflecting its negative modes, using
    <F, phi| = <-F, phi + pi|.
    """
    mirrors = []
    for axis in grid.offsets:
        mirror = {}
        for i, value in enumerate(axis):
            hits = np.flatnonzero(np.abs(axis + value) <= 1e-12 * max(1.0, abs(value)))
            if hits.size:
                mirror[i] = int(hits[0])
        mirrors.append(mirror)
    plan = {}
    jobs = {}
    for index in np.ndindex(*(len(axis) for axis in grid.offsets)):
        offset = np.array([axis[i] for axis, i in zip(grid.offsets, index)])
        if np.all(offset <= 0) and np.any(offset < 0) and all(i in m for i, m in zip(index, mirrors)):
            plan[index] = ("conj", tuple(m[i] for i, m in zip(index, mirrors)))
            continue
        job = _OffsetJob(offset=tuple(float(abs(v)) for v in offset), flipped=tuple(bool(v < 0) for v in offset))
        jobs.setdefault(job, len(jobs))
        plan[index] = ("direct", jobs[job])
    return plan, sorted(jobs, key=jobs.get)


def _radial_mesh(z_axes: Sequence[np.ndarray]) -> np.ndarray:
    n_modes = len(z_axes)
    total = 0.0
    for k, z in enumerate(z_axes):
        shape = [1] * n_modes
        shape[k] = z.size
        total = total + z.reshape(shape) ** 2
    return np.sqrt(total)


def _evaluate_job(source: CharFnSource, job: _OffsetJob, centers: Sequence[np.ndarray], phases: np.ndarray,
                  y: np.ndarray, y_weights: np.ndarray, model: DetectorModel,
                  regularization: RegularizationFilter, scale: FieldScale) -> Tuple[np.ndarray, float, float]:
    """Elements at one offset vector for every centre; returns (values, Psi time, outer time)."""
    flipped = np.array(job.flipped)
    offset = np.array(job.offset)
    job_phases = phases + np.pi * flipped
    job_centers = [-c if flip else c for c, flip in zip(centers, flipped)]
    n_modes = len(centers)

    started = time.perf_counter()
    z_axes, psi_axes = zip(*(mode_arguments(y, offset[k], job_phases[k], scale) for k in range(n_modes)))
    radial = _radial_mesh(z_axes)
    factor = regularization.window(radial)
    if model.eta < 1:
        factor = factor * np.exp(model.noise_exponent(radial, scale))
    values = source.evaluate_product(z_axes, psi_axes)
    if values is None:
        keep = factor > 0
        mesh = np.stack(np.meshgrid(*([y] * n_modes), indexing="ij"), axis=-1)
        mapped = coordinate_map(mesh[keep], offset, job_phases, scale)
        values = np.zeros(radial.shape, dtype=complex)
        values[keep] = source.evaluate(mapped.y_radial, mapped.beta, mapped.psi)
    integrand = values * factor
    evaluated = time.perf_counter()

    out = integrand
    for k in range(n_modes):
        kernel = y_weights[None, :] * np.exp(-1j * np.outer(job_centers[k], y)) / (2 * np.pi)
        out = np.tensordot(out, kernel, axes=([0], [1]))
    return out, evaluated - started, time.perf_counter() - evaluated


def _job_z_max(job: _OffsetJob, y: np.ndarray, regularization: RegularizationFilter, scale: FieldScale) -> float:
    box = np.sqrt(np.sum(y[-1] ** 2 + (np.array(job.offset) / scale.f_abs ** 2) ** 2))
    return float(min(box, regularization.y_cut))


def reconstruct_grid(source: CharFnSource, grid: OutputGrid, phases: Sequence[float],
                     model: DetectorModel = DetectorModel(), regularization: Optional[RegularizationFilter] = None,
                     quad: QuadratureSettings = QuadratureSettings(),
                     scale: Optional[FieldScale] = None) -> DensityMatrixFS:
    """
    Reconstructs the field-strength density matrix on an output grid.

    Psi is evaluated once per distinct offset vector on the outer y grid and
    the N outer transforms are applied to all centres at once. Offset vectors
    run on ``quad.threads`` workers and are assembled by index.

    :param source: Where Psi comes from.
    :param grid: Output centres and offsets per mode.
    :param phases: Reference phases phi_k.
    :param model: Detector efficiency to compensate.
    :param regularization: Required when eta < 1.
    :param quad: Outer quadrature settings.
    :param scale: Mode amplitude |F|; defaults to the source's.
    :return: The density matrix with provenance and invariant residuals.
    """
    scale = scale or source.scale
    if scale != source.scale:
        raise ValidationError(f"field scale {scale.f_abs} differs from the source's {source.scale.f_abs}")
    if grid.n_modes != source.n_modes:
        raise ValidationError(f"output grid has {grid.n_modes} modes, source has {source.n_modes}")
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (source.n_modes,):
        raise ValidationError(f"need {source.n_modes} reference phases, got {phases.size}")
    regularization, exponent = _resolve_filter(model, regularization, scale)
    y, y_weights = _outer_axis(regularization, quad, scale)
    plan, jobs = _plan_offsets(grid)
    source.prepare(max(_job_z_max(job, y, regularization, scale) for job in jobs))
    logger.info("reconstructing %d offset vectors x %d centres from %s (%d nodes per axis)",
                len(jobs), int(np.prod([len(c) for c in grid.centers])), source.name, quad.nodes)
    logger.debug("outer box [-%g, %g], %d threads", y[-1], y[-1], quad.threads)

    def run(job):
        try:
            return _evaluate_job(source, job, grid.centers, phases, y, y_weights, model, regularization, scale)
        except TomographyError as e:
            raise type(e)(f"offset {list(job.offset)} (reflected modes {list(job.flipped)}): {e}") from e

    with ThreadPoolExecutor(max_workers=quad.threads) as pool:
        results = list(pool.map(run, jobs))

    n = grid.n_modes
    elements = np.empty(grid.shape, dtype=complex)
    filled = 0
    for index, (how, ref) in plan.items():
        if how == "direct":
            elements[(Ellipsis,) + index] = results[ref][0]
    for index, (how, ref) in plan.items():
        if how == "conj":
            elements[(Ellipsis,) + index] = np.conj(elements[(Ellipsis,) + ref])
            filled += 1

    provenance = source.describe()
    provenance.update({
        "method": source.name,
        "eta": model.eta,
        "filter": regularization.as_dict(),
        "quadrature": quad.as_dict(),
        "transform_stages": source.transform_stages,
        "amplification_exponent": exponent,
        "amplification_bound": float(np.exp(exponent)),
        "hermiticity_filled_offsets": filled,
        "charfn_time_s": float(sum(r[1] for r in results)),
        "outer_time_s": float(sum(r[2] for r in results)),
    })
    matrix = DensityMatrixFS(n_modes=n, phases=tuple(float(p) for p in phases), grid=grid,
                             elements=elements, provenance=provenance)
    matrix.provenance["residuals"] = invariant_residuals(matrix)
    logger.info("residuals: %s", matrix.provenance["residuals"])
    return matrix


def reconstruct_element(source: CharFnSource, point: FSMatrixPoint, model: DetectorModel = DetectorModel(),
                        regularization: Optional[RegularizationFilter] = None,
                        quad: QuadratureSettings = QuadratureSettings(),
                        scale: Optional[FieldScale] = None) -> ElementResult:
    """One element <F - F', phi| rho |F + F', phi> with its amplification diagnostic."""
    grid = OutputGrid(centers=tuple(np.array([c], dtype=float) for c in point.f_center),
                      offsets=tuple(np.array([o], dtype=float) for o in point.f_offset))
    matrix = reconstruct_grid(source, grid, point.phases, model, regularization, quad, scale)
    return ElementResult(value=complex(matrix.elements.reshape(-1)[0]),
                         amplification_bound=matrix.provenance["amplification_bound"],
                         amplification_exponent=matrix.provenance["amplification_exponent"])


def reconstruct_from_joint(state: DensityOperatorFock, grid: OutputGrid, phases: Sequence[float],
                           quad: QuadratureSettings = QuadratureSettings(), scale: FieldScale = FieldScale(),
                           joint_grid: Optional[QuadratureGrid] = None) -> DensityMatrixFS:
    """The 2N-transform baseline: Psi by Fourier sums over joint distributions, then the outer transforms."""
    return reconstruct_grid(JointCharFn(state, scale, joint_grid), grid, phases, DetectorModel(), None, quad, scale)


def phase_averaged_reconstruct(source: CharFnSource, grid: OutputGrid, phases: Sequence[float],
                               model: DetectorModel = DetectorModel(),
                               regularization: Optional[RegularizationFilter] = None,
                               quad: QuadratureSettings = QuadratureSettings(), scale: Optional[FieldScale] = None,
                               n_average: int = MIN_PHASE_AVERAGE, order: str = "matrices") -> DensityMatrixFS:
    """
    Density matrix averaged over common shifts theta_j = 2 pi j / n of all phases.

    ``matrices`` averages n reconstructions at phases phi + theta_j;
    ``distributions`` reconstructs once from a phase-averaged Psi. Sources
    built from phase-difference data are already averaged and are
    reconstructed once.
    """
    if order not in AVERAGE_ORDERS:
        raise ValidationError(f"averaging order must be one of {AVERAGE_ORDERS}, got {order!r}")
    if n_average < MIN_PHASE_AVERAGE:
        raise ValidationError(f"phase averaging needs at least {MIN_PHASE_AVERAGE} shifts, got {n_average}")
    if source.phase_averaged:
        matrix = reconstruct_grid(source, grid, phases, model, regularization, quad, scale)
        matrix.provenance.update({"phase_averaged": True, "average_order": "distributions"})
        return matrix
    if not source.supports_phase_shifts():
        raise CoverageError(f"insufficient psi_1 coverage: source {source.name!r} records phases within a pi "
                            "interval, averaging needs a full 2 pi period (record phase differences instead)")
    if order == "distributions":
        matrix = reconstruct_grid(PhaseAveragedCharFn(source, n_average), grid, phases, model, regularization,
                                  quad, scale)
        matrix.provenance.update({"phase_averaged": True, "average_order": order, "n_average": n_average})
        return matrix

    phases = np.asarray(phases, dtype=float)
    shifts = 2 * np.pi * np.arange(n_average) / n_average
    total = None
    provenance = None
    for theta in shifts:
        matrix = reconstruct_grid(source, grid, phases + theta, model, regularization, quad, scale)
        total = matrix.elements if total is None else total + matrix.elements
        provenance = provenance or dict(matrix.provenance)
    provenance.update({"phase_averaged": True, "average_order": order, "n_average": n_average})
    averaged = DensityMatrixFS(n_modes=grid.n_modes, phases=tuple(float(p) for p in phases), grid=grid,
                               elements=total / n_average, provenance=provenance)
    averaged.provenance["residuals"] = invariant_residuals(averaged)
    return averaged
