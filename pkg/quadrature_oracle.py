"""Exact field-strength-basis quantities computed directly from a known state.

The density-matrix elements evaluated here by double Fock expansion are the
ground truth every reconstruction is compared with.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import null_space

from errors import GridTooCoarseError, ValidationError
from field_geometry import hyperspherical_weights
from state_model import DensityOperatorFock, FieldScale, characteristic_function_batch, trace_product_grid

logger = logging.getLogger(__name__)

# Beyond this Fock index the upward recurrence is not validated.
WAVEFUNCTION_MAX_N = 200
# Probability allowed to fall outside a field-strength grid.
GRID_MASS_TOL = 1e-4
# Fourier route: |z| <= FOURIER_Z_MAX / |F| sampled by FOURIER_Z_NODES trapezoid nodes.
FOURIER_Z_MAX = 10.0
FOURIER_Z_NODES = 512
POINT_CHUNK = 8192


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform, zero-centred field-strength bins."""

    f_min: float
    f_max: float
    n_bins: int

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise ValidationError(f"grid needs f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if self.n_bins < 8:
            raise ValidationError(f"grid needs at least 8 bins, got {self.n_bins}")
        if abs(self.f_min + self.f_max) > 1e-12 * self.f_max:
            raise ValidationError("grid must be symmetric about 0 (f_min = -f_max)")

    @classmethod
    def symmetric(cls, f_max: float, n_bins: int = 64) -> "QuadratureGrid":
        return cls(-float(f_max), float(f_max), int(n_bins))

    @property
    def width(self) -> float:
        return (self.f_max - self.f_min) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.f_min + (np.arange(self.n_bins) + 0.5) * self.width


@dataclass(frozen=True)
class FSMatrixPoint:
    """One element <F - F', phi| rho |F + F', phi> of the field-strength density matrix."""

    f_center: Tuple[float, ...]
    f_offset: Tuple[float, ...]
    phases: Tuple[float, ...]

    def __post_init__(self):
        values = np.concatenate([np.ravel(self.f_center), np.ravel(self.f_offset), np.ravel(self.phases)])
        if not np.all(np.isfinite(values)):
            raise ValidationError("matrix point coordinates must be finite")
        if not len(self.f_center) == len(self.f_offset) == len(self.phases):
            raise ValidationError("matrix point needs one centre, offset and phase per mode")


@dataclass(frozen=True)
class OutputGrid:
    """Per-mode centre and offset axes of a field-strength density matrix."""

    centers: Tuple[np.ndarray, ...]
    offsets: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.centers) != len(self.offsets) or not self.centers:
            raise ValidationError("output grid needs centre and offset axes for every mode")
        for axis in tuple(self.centers) + tuple(self.offsets):
            if np.ndim(axis) != 1 or len(axis) == 0 or not np.all(np.isfinite(axis)):
                raise ValidationError("output grid axes must be non-empty finite 1-d arrays")

    @classmethod
    def uniform(cls, n_modes: int, f_max: float, n_centers: int, offset_max: float = 0.0,
                n_offsets: int = 1, offset_min: Optional[float] = None) -> "OutputGrid":
        """Centres on [-f_max, f_max]; offsets on [offset_min, offset_max] (offset_min defaults to -offset_max)."""
        if offset_min is None:
            offset_min = -offset_max
        centers = np.linspace(-f_max, f_max, n_centers) if n_centers > 1 else np.zeros(1)
        offsets = np.linspace(offset_min, offset_max, n_offsets) if n_offsets > 1 else np.zeros(1)
        return cls(centers=(centers,) * n_modes, offsets=(offsets,) * n_modes)

    @property
    def n_modes(self) -> int:
        return len(self.centers)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(c) for c in self.centers) + tuple(len(o) for o in self.offsets)

    def matches(self, other: "OutputGrid") -> bool:
        return (self.n_modes == other.n_modes
                and all(np.array_equal(a, b) for a, b in zip(self.centers, other.centers))
                and all(np.array_equal(a, b) for a, b in zip(self.offsets, other.offsets)))


@dataclass
class DensityMatrixFS:
    """
    Field-strength-basis density matrix on an output grid.

    ``elements`` has shape (n_c1, ..., n_cN, n_o1, ..., n_oN): centre indices
    first, then offset indices, row-major.
    """

    n_modes: int
    phases: Tuple[float, ...]
    grid: OutputGrid
    elements: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.elements.shape != self.grid.shape:
            raise ValidationError(f"elements shape {self.elements.shape} does not match grid {self.grid.shape}")
        if len(self.phases) != self.n_modes:
            raise ValidationError("need one reference phase per mode")

    def zero_offset_index(self) -> Optional[Tuple[int, ...]]:
        index = []
        for axis in self.grid.offsets:
            hits = np.flatnonzero(np.abs(axis) <= 1e-12)
            if hits.size == 0:
                return None
            index.append(int(hits[0]))
        return tuple(index)

    def diagonal(self) -> Optional[np.ndarray]:
        """Elements at F' = 0 (the joint field-strength distribution)."""
        index = self.zero_offset_index()
        if index is None:
            return None
        return self.elements[(Ellipsis,) + index]

    def mirrored_offset_indices(self) -> List[Optional[np.ndarray]]:
        """For each mode, the index of -F' on the offset axis (or -1 when absent)."""
        mirrors = []
        for axis in self.grid.offsets:
            mirror = np.full(len(axis), -1)
            for i, value in enumerate(axis):
                hits = np.flatnonzero(np.abs(axis + value) <= 1e-12 * max(1.0, abs(value)))
                if hits.size:
                    mirror[i] = hits[0]
            mirrors.append(mirror)
        return mirrors

    def hermiticity_residual(self) -> float:
        """max |rho(F, F') - conj(rho(F, -F'))| over offsets whose mirror is on the grid."""
        mirrors = self.mirrored_offset_indices()
        residual = 0.0
        n = self.n_modes
        for offset_index in np.ndindex(*self.elements.shape[n:]):
            mirror = tuple(int(mirrors[k][i]) for k, i in enumerate(offset_index))
            if min(mirror) < 0:
                continue
            a = self.elements[(Ellipsis,) + offset_index]
            b = self.elements[(Ellipsis,) + mirror]
            residual = max(residual, float(np.max(np.abs(a - np.conj(b)))))
        return residual


def default_quadrature_grid(state: DensityOperatorFock, scale: FieldScale = FieldScale(),
                            n_bins: int = 64, noise_variance: float = 0.0) -> QuadratureGrid:
    """
    f_max = 6|F|(1 + sqrt(n_max)) + 6 sigma with n_max the largest mean photon
    number and sigma^2 the variance of the detector noise (0 for eta = 1).
    """
    n_max = float(np.max(state.mean_photon_numbers()))
    f_max = 6 * scale.f_abs * (1 + np.sqrt(max(n_max, 0.0))) + 6 * np.sqrt(max(noise_variance, 0.0))
    return QuadratureGrid.symmetric(f_max, n_bins)


# --- wavefunctions ---

def wavefunction_table(n_max: int, f: np.ndarray, scale: FieldScale = FieldScale()) -> np.ndarray:
    """
    u_0 .. u_{n_max} at field strengths f; shape f.shape + (n_max + 1,).

    u_n(F) = (2 pi |F|^2)^{-1/4} (2^n n!)^{-1/2} H_n(x) e^{-x^2/2}, x = F / (|F| sqrt 2),
    by the normalized upward recurrence
    u_{n+1} = sqrt(2/(n+1)) x u_n - sqrt(n/(n+1)) u_{n-1}.
    """
    if n_max < 0:
        raise ValidationError(f"Fock index must be non-negative, got {n_max}")
    if n_max > WAVEFUNCTION_MAX_N:
        raise ValidationError(f"Fock index {n_max} exceeds the recurrence ceiling {WAVEFUNCTION_MAX_N}")
    x = np.asarray(f, dtype=float) / (scale.f_abs * np.sqrt(2))
    table = np.empty(x.shape + (n_max + 1,))
    table[..., 0] = (2 * np.pi * scale.f_abs ** 2) ** -0.25 * np.exp(-x ** 2 / 2)
    if n_max >= 1:
        table[..., 1] = np.sqrt(2) * x * table[..., 0]
    for n in range(1, n_max):
        table[..., n + 1] = np.sqrt(2 / (n + 1)) * x * table[..., n] - np.sqrt(n / (n + 1)) * table[..., n - 1]
    return table


def quadrature_wavefunction(n: int, f, scale: FieldScale = FieldScale()):
    """
    Field-strength wavefunction <F|n> of the n-th number state.

    :param n: Fock index, 0 <= n <= WAVEFUNCTION_MAX_N.
    :param f: Field strength (scalar or array).
    :param scale: Mode amplitude |F|; the vacuum distribution has variance |F|^2.
    :return: u_n(f), real.
    """
    value = wavefunction_table(n, f, scale)[..., n]
    return float(value) if np.ndim(value) == 0 else value


def bra_vectors(f: np.ndarray, phase: np.ndarray, dim: int, scale: FieldScale) -> np.ndarray:
    """
    <F, phase|n> = u_n(F) e^{-i n phase}; the ket coefficients <n|F, phase> are the conjugates.

    The kets are rotated by U(phase) = exp(i phase n), so the ket carries
    e^{+i n phase} and the bra e^{-i n phase}; this is the sign under which
    joint_distribution agrees with the Fourier inversion of Psi.
    """
    f = np.asarray(f, dtype=float)
    phase = np.broadcast_to(np.asarray(phase, dtype=float), f.shape)
    return wavefunction_table(dim - 1, f, scale) * np.exp(-1j * np.arange(dim) * phase[..., None])


def _row_kron(vectors: Sequence[np.ndarray]) -> np.ndarray:
    out = vectors[0]
    for v in vectors[1:]:
        out = np.einsum("qa,qb->qab", out, v).reshape(out.shape[0], -1)
    return out


def _sandwich(state: DensityOperatorFock, bras: Sequence[np.ndarray], kets: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise (x_bra) rho (x_ket) for per-mode bra and ket coefficient rows."""
    left = _row_kron(bras)
    right = _row_kron(kets)
    return np.einsum("qa,qa->q", left @ state.elements, right)


def joint_distribution_batch(state: DensityOperatorFock, f: np.ndarray, psi: np.ndarray,
                             scale: FieldScale = FieldScale()) -> np.ndarray:
    """p_j at many points; f and psi have shape (..., N)."""
    f = np.asarray(f, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), f.shape)
    flat_f = f.reshape(-1, state.n_modes)
    flat_psi = psi.reshape(-1, state.n_modes)
    out = np.empty(flat_f.shape[0])
    for start in range(0, flat_f.shape[0], POINT_CHUNK):
        stop = start + POINT_CHUNK
        bras = [bra_vectors(flat_f[start:stop, k], flat_psi[start:stop, k], state.dim_per_mode, scale)
                for k in range(state.n_modes)]
        out[start:stop] = _sandwich(state, bras, [b.conj() for b in bras]).real
    return out.reshape(f.shape[:-1])


def joint_distribution(state: DensityOperatorFock, f: Sequence[float], psi: Sequence[float],
                       scale: FieldScale = FieldScale()) -> float:
    """
    Joint field-strength distribution p_j(F_1..F_N, psi_1..psi_N) = <F, psi| rho |F, psi>.

    :param state: The N-mode state.
    :param f: Field strengths, length N.
    :param psi: Phases, length N.
    :param scale: Mode amplitude |F|.
    :return: The probability density.
    """
    f = np.asarray(f, dtype=float).reshape(1, -1)
    psi = np.asarray(psi, dtype=float).reshape(1, -1)
    return float(joint_distribution_batch(state, f, psi, scale)[0])


# --- sum-field distributions ---

def _mixing_weights(alpha, n_modes: int) -> np.ndarray:
    angles = np.atleast_1d(np.asarray(alpha, dtype=float))
    if angles.shape != (n_modes - 1,):
        raise ValidationError(f"{n_modes} modes need {n_modes - 1} mixing angles, got {angles.size}")
    if np.any(angles <= 0) or np.any(angles >= np.pi / 2):
        raise ValidationError(f"mixing angles must lie in (0, pi/2), got {angles.tolist()}")
    return hyperspherical_weights(angles)


def _sum_distribution_fourier(state, weights, psi, grid, scale) -> np.ndarray:
    z_max = FOURIER_Z_MAX / scale.f_abs
    z = np.linspace(-z_max, z_max, FOURIER_Z_NODES)
    step = z[1] - z[0]
    nodes = np.full(FOURIER_Z_NODES, step)
    nodes[[0, -1]] = step / 2
    psi_values = characteristic_function_batch(state, z[:, None] * weights[None, :], psi, scale)
    kernel = np.exp(-1j * np.outer(grid.centers, z))
    return (kernel @ (nodes * psi_values)).real / (2 * np.pi)


def _sum_distribution_projection(state, weights, psi, grid, scale) -> np.ndarray:
    # p_s(F) = integral of p_j over the hyperplane F = w . F_vec
    n_modes = state.n_modes
    step = grid.width / 2
    n_side = int(np.ceil(grid.f_max / step))
    t = np.arange(-n_side, n_side + 1) * step
    trapezoid_weights = np.full(t.size, step)
    trapezoid_weights[[0, -1]] = step / 2
    complement = null_space(weights[None, :])
    t_mesh = np.stack(np.meshgrid(*([t] * (n_modes - 1)), indexing="ij"), axis=-1).reshape(-1, n_modes - 1)
    w_mesh = np.ones(1)
    for _ in range(n_modes - 1):
        w_mesh = np.multiply.outer(w_mesh, trapezoid_weights).ravel()
    plane = t_mesh @ complement.T
    out = np.empty(grid.n_bins)
    for i, f in enumerate(grid.centers):
        points = f * weights[None, :] + plane
        out[i] = joint_distribution_batch(state, points, psi, scale) @ w_mesh
    return out


def sum_distribution_exact(state: DensityOperatorFock, alpha, psi: Sequence[float], grid: QuadratureGrid,
                           scale: FieldScale = FieldScale(), route: str = "fourier") -> np.ndarray:
    """
    Distribution of the sum field sum_k w_k F_k(psi_k) at the grid's bin centres.

    :param alpha: Mixing angle(s): one for two modes, N-1 hyperspherical angles otherwise.
    :param psi: Phases, length N.
    :param grid: Field-strength grid.
    :param route: ``projection`` integrates p_j over the hyperplane F = w . F_vec with
        trapezoid steps of half a bin; ``fourier`` inverts Psi(z w, psi) with
        FOURIER_Z_NODES trapezoid nodes on |z| <= FOURIER_Z_MAX/|F|.
    :return: Probability densities, one per bin.
    """
    weights = _mixing_weights(alpha, state.n_modes)
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (state.n_modes,):
        raise ValidationError(f"need {state.n_modes} phases, got {psi.size}")
    if route == "fourier":
        density = _sum_distribution_fourier(state, weights, psi, grid, scale)
    elif route == "projection":
        density = _sum_distribution_projection(state, weights, psi, grid, scale)
    else:
        raise ValidationError(f"unknown route {route!r}; use 'projection' or 'fourier'")
    outside = 1.0 - float(np.sum(density) * grid.width)
    if outside > GRID_MASS_TOL:
        suggested = max(1.5 * grid.f_max, default_quadrature_grid(state, scale).f_max)
        raise GridTooCoarseError(f"{outside:.3g} of the sum-field distribution lies outside "
                                 f"[{grid.f_min:.4g}, {grid.f_max:.4g}]", suggested_f_max=suggested)
    return density


# --- density-matrix oracle ---

def oracle_matrix_element(state: DensityOperatorFock, point: FSMatrixPoint,
                          scale: FieldScale = FieldScale()) -> complex:
    """
    <F - F', phi| rho |F + F', phi> by double Fock expansion (no Fourier inversion).

    Offsets of either sign are evaluated directly.
    """
    center = np.asarray(point.f_center, dtype=float)
    offset = np.asarray(point.f_offset, dtype=float)
    phases = np.asarray(point.phases, dtype=float)
    if center.shape != (state.n_modes,):
        raise ValidationError(f"matrix point has {center.size} modes, state has {state.n_modes}")
    dim = state.dim_per_mode
    bras = [bra_vectors(center[k:k + 1] - offset[k], phases[k], dim, scale) for k in range(state.n_modes)]
    kets = [bra_vectors(center[k:k + 1] + offset[k], phases[k], dim, scale).conj() for k in range(state.n_modes)]
    return complex(_sandwich(state, bras, kets)[0])


def _pair_kernels(grid: OutputGrid, phases: Sequence[float], dim: int, scale: FieldScale) -> List[np.ndarray]:
    """Per-mode K[(c, o), m, n] = <m|c + o, phi> <c - o, phi|n>."""
    kernels = []
    for centers, offsets, phase in zip(grid.centers, grid.offsets, phases):
        bra = bra_vectors(centers[:, None] - offsets[None, :], phase, dim, scale)
        ket = bra_vectors(centers[:, None] + offsets[None, :], phase, dim, scale).conj()
        kernel = ket[..., :, None] * bra[..., None, :]
        kernels.append(kernel.reshape(len(centers) * len(offsets), dim, dim))
    return kernels


def oracle_grid(state: DensityOperatorFock, grid: OutputGrid, phases: Sequence[float],
                scale: FieldScale = FieldScale()) -> DensityMatrixFS:
    """Oracle elements over a whole output grid."""
    if grid.n_modes != state.n_modes:
        raise ValidationError(f"output grid has {grid.n_modes} modes, state has {state.n_modes}")
    values = trace_product_grid(state, _pair_kernels(grid, phases, state.dim_per_mode, scale))
    n = state.n_modes
    shape = []
    for centers, offsets in zip(grid.centers, grid.offsets):
        shape += [len(centers), len(offsets)]
    values = values.reshape(shape)
    # (c1, o1, c2, o2, ...) -> (c1..cN, o1..oN)
    values = values.transpose(list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)))
    matrix = DensityMatrixFS(n_modes=n, phases=tuple(float(p) for p in phases), grid=grid,
                             elements=np.ascontiguousarray(values),
                             provenance={"source": "oracle", "transform_stages": 0,
                                         "trace_deficit": state.trace_deficit})
    matrix.provenance["residuals"] = invariant_residuals(matrix)
    return matrix


# --- comparison ---

@dataclass(frozen=True)
class ComparisonMetrics:
    linf: float
    l2: float
    hermiticity_residual: float
    diagonal_negativity: float
    diagonal_normalization: float
    fock_populations: Optional[np.ndarray] = None

    def as_dict(self) -> Dict[str, Any]:
        out = {"linf": self.linf, "l2": self.l2, "hermiticity_residual": self.hermiticity_residual,
               "diagonal_negativity": self.diagonal_negativity,
               "diagonal_normalization": self.diagonal_normalization}
        if self.fock_populations is not None:
            out["fock_populations"] = self.fock_populations.tolist()
        return out


def diagonal_normalization(matrix: DensityMatrixFS) -> float:
    """Trapezoid integral of Re rho(F; 0) over the centre axes (NaN without F' = 0)."""
    diagonal = matrix.diagonal()
    if diagonal is None:
        return float("nan")
    value = diagonal.real
    for axis in reversed(matrix.grid.centers):
        value = trapezoid(value, axis, axis=-1) if len(axis) > 1 else value[..., 0]
    return float(value)


def invariant_residuals(matrix: DensityMatrixFS) -> Dict[str, float]:
    diagonal = matrix.diagonal()
    return {
        "hermiticity": matrix.hermiticity_residual(),
        "diagonal_imag": float(np.max(np.abs(diagonal.imag))) if diagonal is not None else float("nan"),
        "diagonal_min_real": float(np.min(diagonal.real)) if diagonal is not None else float("nan"),
        "normalization": diagonal_normalization(matrix),
    }


def fock_projection(matrix: DensityMatrixFS, dim: int, scale: FieldScale = FieldScale()) -> np.ndarray:
    """
    Projects a field-strength matrix onto number states (diagnostic only).

    <n|rho|m> = integral 2 dF dF' <n|F-F'> rho(F, F') <F+F'|m> per mode, by
    trapezoid quadrature over the output grid.

    :return: Fock-basis matrix of size dim**N.
    """
    n = matrix.n_modes
    values = matrix.elements
    kernels = []
    for centers, offsets, phase in zip(matrix.grid.centers, matrix.grid.offsets, matrix.phases):
        ket_n = bra_vectors(centers[:, None] - offsets[None, :], phase, dim, scale).conj()
        bra_m = bra_vectors(centers[:, None] + offsets[None, :], phase, dim, scale)
        weight = 2 * _trapezoid_weights(centers)[:, None] * _trapezoid_weights(offsets)[None, :]
        kernels.append(weight[..., None, None] * ket_n[..., :, None] * bra_m[..., None, :])
    # values (c1..cN, o1..oN) -> (c1, o1, c2, o2, ...)
    order = [axis for k in range(n) for axis in (k, n + k)]
    out = values.transpose(order)
    for k in range(n):
        out = np.tensordot(out, kernels[k], axes=([0, 1], [0, 1]))
    # axes now n1, m1, n2, m2, ...
    out = out.transpose(list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)))
    return out.reshape(dim ** n, dim ** n)


def _trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    if len(axis) == 1:
        return np.ones(1)
    gaps = np.diff(axis)
    weights = np.zeros(len(axis))
    weights[:-1] += gaps / 2
    weights[1:] += gaps / 2
    return weights


def compare_matrices(a: DensityMatrixFS, b: DensityMatrixFS, fock_dim: Optional[int] = None) -> ComparisonMetrics:
    """
    Distance and invariant diagnostics between two matrices on identical grids.

    :param a: The matrix under test.
    :param b: The reference matrix.
    :param fock_dim: When given, also report a's Fock-basis populations.
    :return: The comparison metrics.
    """
    if not a.grid.matches(b.grid):
        raise ValidationError("cannot compare density matrices on different grids")
    if not np.allclose(a.phases, b.phases, rtol=0, atol=1e-12):
        raise ValidationError(f"cannot compare matrices with phases {a.phases} and {b.phases}")
    diff = np.abs(a.elements - b.elements)
    residuals = invariant_residuals(a)
    populations = None
    if fock_dim is not None:
        populations = np.real(np.diag(fock_projection(a, fock_dim)))
    return ComparisonMetrics(
        linf=float(np.max(diff)),
        l2=float(np.sqrt(np.mean(diff ** 2))),
        hermiticity_residual=residuals["hermiticity"],
        diagonal_negativity=residuals["diagonal_min_real"],
        diagonal_normalization=residuals["normalization"],
        fock_populations=populations,
    )
