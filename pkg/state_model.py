"""N-mode quantum states in a truncated Fock basis.

Builds test states from a ``StateSpec`` and evaluates the joint characteristic
function ``Psi(z, psi) = <exp(i sum_k z_k F_k(psi_k))>`` from per-mode
displacement-operator matrix elements.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln

from errors import TruncationError, ValidationError

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-6
CHAR_TOL = 1e-8
HERMITICITY_TOL = 1e-12
# Largest truncation dimension tried when suggesting a fix for a trace deficit.
MAX_SUGGESTED_DIM = 2048
# Query chunk size for batched contractions.
BATCH_CHUNK = 4096


@dataclass(frozen=True)
class FieldScale:
    """Mode amplitude |F|; the vacuum field-strength variance is |F|**2."""

    f_abs: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.f_abs) and self.f_abs > 0):
            raise ValidationError(f"field scale |F| must be positive, got {self.f_abs}")


# --- StateSpec kinds ---

@dataclass(frozen=True)
class Vacuum:
    pass


@dataclass(frozen=True)
class Coherent:
    amplitudes: Tuple[complex, ...]


@dataclass(frozen=True)
class FockProduct:
    occupations: Tuple[int, ...]


@dataclass(frozen=True)
class SingleModeSqueezed:
    mode: int
    r: float
    phase: float = 0.0


@dataclass(frozen=True)
class TwoModeSqueezedVacuum:
    modes: Tuple[int, int]
    r: float


@dataclass(frozen=True)
class Thermal:
    mode: int
    mean_photons: float


@dataclass(frozen=True)
class Mixture:
    components: Tuple[Tuple[float, "StateSpec"], ...]


StateKind = Union[Vacuum, Coherent, FockProduct, SingleModeSqueezed,
                  TwoModeSqueezedVacuum, Thermal, Mixture]


@dataclass(frozen=True)
class StateSpec:
    n_modes: int
    truncation_dim: int
    kind: StateKind

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValidationError(f"n_modes must be >= 1, got {self.n_modes}")
        if self.truncation_dim < 2:
            raise ValidationError(f"truncation_dim must be >= 2, got {self.truncation_dim}")
        kind = self.kind
        if isinstance(kind, Coherent) and len(kind.amplitudes) != self.n_modes:
            raise ValidationError("coherent state needs one amplitude per mode")
        if isinstance(kind, FockProduct):
            if len(kind.occupations) != self.n_modes:
                raise ValidationError("Fock product state needs one occupation per mode")
            if any(n < 0 for n in kind.occupations):
                raise ValidationError("Fock occupations must be non-negative")
        if isinstance(kind, (SingleModeSqueezed, Thermal)):
            self._check_mode(kind.mode)
        if isinstance(kind, Thermal) and kind.mean_photons < 0:
            raise ValidationError("thermal mean photon number must be non-negative")
        if isinstance(kind, TwoModeSqueezedVacuum):
            if len(kind.modes) != 2 or kind.modes[0] == kind.modes[1]:
                raise ValidationError("two-mode squeezing needs two distinct modes")
            for mode in kind.modes:
                self._check_mode(mode)
        if isinstance(kind, Mixture):
            weights = np.array([w for w, _ in kind.components], dtype=float)
            if len(weights) == 0 or np.any(weights < 0):
                raise ValidationError("mixture weights must be non-negative")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ValidationError(f"mixture weights must sum to 1, got {weights.sum()!r}")
            for _, component in kind.components:
                if (component.n_modes, component.truncation_dim) != (self.n_modes, self.truncation_dim):
                    raise ValidationError("mixture components must share n_modes and truncation_dim")

    def _check_mode(self, mode: int):
        if not 0 <= mode < self.n_modes:
            raise ValidationError(f"mode index {mode} out of range for {self.n_modes} modes")


@dataclass(frozen=True)
class DensityOperatorFock:
    """Density matrix <n_1..n_N| rho |m_1..m_N> in row-major multi-index order."""

    n_modes: int
    dim_per_mode: int
    elements: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        size = self.dim_per_mode ** self.n_modes
        if self.elements.shape != (size, size):
            raise ValidationError(f"density matrix must be {size}x{size}, got {self.elements.shape}")
        herm = np.max(np.abs(self.elements - self.elements.conj().T))
        if herm > HERMITICITY_TOL:
            raise ValidationError(f"density matrix is not Hermitian (residual {herm:.3g})")
        trace = np.trace(self.elements)
        if abs(trace.imag) > HERMITICITY_TOL or not (1 - TRACE_TOL <= trace.real <= 1 + 1e-12):
            raise ValidationError(f"density matrix trace {trace} outside [1 - {TRACE_TOL}, 1]")
        if np.min(np.diag(self.elements).real) < -1e-12:
            raise ValidationError("density matrix has negative diagonal entries")
        self.elements.setflags(write=False)

    @property
    def tensor(self) -> np.ndarray:
        """Elements reshaped to (n_1..n_N, m_1..m_N)."""
        return self.elements.reshape((self.dim_per_mode,) * (2 * self.n_modes))

    @property
    def trace_deficit(self) -> float:
        return float(self.metadata.get("trace_deficit", 0.0))

    def reduced(self, mode: int) -> np.ndarray:
        """Single-mode reduced density matrix."""
        n = self.n_modes
        letters = "abcdefghijklmnopqrstuvwxyz"
        rows = list(letters[:n])
        cols = list(letters[:n])
        cols[mode] = letters[n]
        subscripts = "".join(rows) + "".join(cols) + "->" + rows[mode] + cols[mode]
        return np.einsum(subscripts, self.tensor)

    def mean_photon_numbers(self) -> np.ndarray:
        numbers = np.arange(self.dim_per_mode)
        return np.array([np.real(np.diag(self.reduced(k))) @ numbers for k in range(self.n_modes)])


# --- state construction ---

def _coherent_ket(gamma: complex, dim: int) -> np.ndarray:
    ket = np.zeros(dim, dtype=complex)
    ket[0] = np.exp(-abs(gamma) ** 2 / 2)
    for n in range(1, dim):
        ket[n] = ket[n - 1] * gamma / np.sqrt(n)
    return ket


def _squeezed_ket(r: float, phase: float, dim: int) -> np.ndarray:
    """S(r e^{i phase})|0> with S(xi) = exp((xi* a^2 - xi a^dagger^2)/2)."""
    ket = np.zeros(dim, dtype=complex)
    ket[0] = 1 / np.sqrt(np.cosh(r))
    ratio = -np.exp(1j * phase) * np.tanh(r)
    for n in range(2, dim, 2):
        ket[n] = ket[n - 2] * ratio * np.sqrt((n - 1) / n)
    return ket


def _two_mode_squeezed_amplitudes(r: float, dim: int) -> np.ndarray:
    """Amplitudes c_n of sqrt(1 - lambda^2) sum_n lambda^n |n, n>, lambda = tanh r."""
    lam = np.tanh(r)
    return np.sqrt(1 - lam ** 2) * lam ** np.arange(dim)


def _thermal_populations(mean_photons: float, dim: int) -> np.ndarray:
    n = np.arange(dim)
    if mean_photons == 0:
        return (n == 0).astype(float)
    return mean_photons ** n / (mean_photons + 1) ** (n + 1)


def _mode_deficit(spec: StateSpec, dim: int) -> List[float]:
    """Per-mode probability lost by truncating at ``dim``."""
    kind = spec.kind
    deficits = [0.0] * spec.n_modes
    if isinstance(kind, Coherent):
        for k, gamma in enumerate(kind.amplitudes):
            deficits[k] = 1 - np.sum(np.abs(_coherent_ket(complex(gamma), dim)) ** 2)
    elif isinstance(kind, FockProduct):
        for k, n in enumerate(kind.occupations):
            deficits[k] = 0.0 if n < dim else 1.0
    elif isinstance(kind, SingleModeSqueezed):
        deficits[kind.mode] = 1 - np.sum(np.abs(_squeezed_ket(kind.r, kind.phase, dim)) ** 2)
    elif isinstance(kind, TwoModeSqueezedVacuum):
        deficits[kind.modes[0]] = 1 - np.sum(_two_mode_squeezed_amplitudes(kind.r, dim) ** 2)
    elif isinstance(kind, Thermal):
        deficits[kind.mode] = 1 - np.sum(_thermal_populations(kind.mean_photons, dim))
    return [max(float(d), 0.0) for d in deficits]


def _required_dim(spec: StateSpec, mode: int) -> int:
    dim = spec.truncation_dim
    while dim < MAX_SUGGESTED_DIM:
        dim *= 2
        if _mode_deficit(spec, dim)[mode] <= TRACE_TOL:
            break
    # bisect down to the smallest sufficient dimension
    low, high = dim // 2, dim
    while high - low > 1:
        mid = (low + high) // 2
        if _mode_deficit(spec, mid)[mode] <= TRACE_TOL:
            high = mid
        else:
            low = mid
    return high


def _embed_pure(spec: StateSpec) -> np.ndarray:
    """Full ket tensor of shape (dim,)*N for the pure kinds."""
    n, dim = spec.n_modes, spec.truncation_dim
    kind = spec.kind
    vacuum = np.zeros(dim, dtype=complex)
    vacuum[0] = 1.0
    if isinstance(kind, TwoModeSqueezedVacuum):
        ket = np.zeros((dim,) * n, dtype=complex)
        amplitudes = _two_mode_squeezed_amplitudes(kind.r, dim)
        index = [0] * n
        for k, c in enumerate(amplitudes):
            index[kind.modes[0]] = k
            index[kind.modes[1]] = k
            ket[tuple(index)] = c
        return ket
    factors = [vacuum] * n
    if isinstance(kind, Coherent):
        factors = [_coherent_ket(complex(g), dim) for g in kind.amplitudes]
    elif isinstance(kind, FockProduct):
        factors = []
        for occupation in kind.occupations:
            ket = np.zeros(dim, dtype=complex)
            ket[occupation] = 1.0
            factors.append(ket)
    elif isinstance(kind, SingleModeSqueezed):
        factors = list(factors)
        factors[kind.mode] = _squeezed_ket(kind.r, kind.phase, dim)
    ket = factors[0]
    for factor in factors[1:]:
        ket = np.multiply.outer(ket, factor)
    return ket


def _unnormalized_density(spec: StateSpec) -> np.ndarray:
    n, dim = spec.n_modes, spec.truncation_dim
    size = dim ** n
    kind = spec.kind
    if isinstance(kind, Mixture):
        rho = np.zeros((size, size), dtype=complex)
        for weight, component in kind.components:
            rho += weight * build_state(component).elements
        return rho
    if isinstance(kind, Thermal):
        populations = _thermal_populations(kind.mean_photons, dim)
        diagonal = np.ones(1)
        for k in range(n):
            factor = populations if k == kind.mode else (np.arange(dim) == 0).astype(float)
            diagonal = np.kron(diagonal, factor)
        return np.diag(diagonal).astype(complex)
    ket = _embed_pure(spec).reshape(size)
    return np.outer(ket, ket.conj())


def build_state(spec: StateSpec) -> DensityOperatorFock:
    """
    Builds the normalized truncated density operator for a state spec.

    :param spec: The state description.
    :return: The density operator; ``metadata['trace_deficit']`` holds the
        probability lost to truncation before renormalization.
    """
    if not isinstance(spec.kind, Mixture):
        for mode, deficit in enumerate(_mode_deficit(spec, spec.truncation_dim)):
            if deficit > TRACE_TOL:
                raise TruncationError(
                    f"truncation_dim={spec.truncation_dim} loses {deficit:.3g} of the trace in mode {mode}; "
                    f"mode {mode} needs truncation_dim >= {_required_dim(spec, mode)}")
    rho = _unnormalized_density(spec)
    rho = (rho + rho.conj().T) / 2
    trace = float(np.trace(rho).real)
    deficit = 1.0 - trace
    if isinstance(spec.kind, Mixture):
        # components arrive normalized; carry their deficits forward
        deficit = sum(w * build_state(c).trace_deficit for w, c in spec.kind.components)
    if deficit > TRACE_TOL:
        raise TruncationError(f"truncated state keeps only {1 - deficit:.8f} of the trace")
    if abs(deficit) > 1e-15:
        logger.debug("renormalizing truncated state, trace deficit %.3g", deficit)
    return DensityOperatorFock(
        n_modes=spec.n_modes,
        dim_per_mode=spec.truncation_dim,
        elements=rho / trace,
        metadata={"trace_deficit": max(deficit, 0.0), "kind": type(spec.kind).__name__},
    )


# --- characteristic function ---

def displacement_matrices(beta: np.ndarray, dim: int) -> np.ndarray:
    """
    Matrix elements <m|D(beta)|n> for m, n < dim.

    Built column by column from D_{m,0} = e^{-|beta|^2/2} beta^m / sqrt(m!)
    and D_{m,n+1} = (sqrt(m) D_{m-1,n} - conj(beta) D_{m,n}) / sqrt(n+1),
    which follows from D a^dagger = (a^dagger - conj(beta)) D. The elements are
    those of the untruncated operator; no truncated generator is exponentiated.

    :param beta: Complex displacements, any shape.
    :param dim: Truncation dimension.
    :return: Array of shape beta.shape + (dim, dim) indexed [..., m, n].
    """
    beta = np.asarray(beta, dtype=complex)
    flat = beta.reshape(-1)
    out = np.zeros((flat.size, dim, dim), dtype=complex)
    out[:, 0, 0] = np.exp(-np.abs(flat) ** 2 / 2)
    for m in range(1, dim):
        out[:, m, 0] = out[:, m - 1, 0] * flat / np.sqrt(m)
    sqrt_m = np.sqrt(np.arange(1, dim))
    conj = flat.conj()[:, None]
    for n in range(dim - 1):
        column = -conj[:, 0] * out[:, 0, n]
        out[:, 0, n + 1] = column / np.sqrt(n + 1)
        out[:, 1:, n + 1] = (sqrt_m * out[:, :-1, n] - conj * out[:, 1:, n]) / np.sqrt(n + 1)
    return out.reshape(beta.shape + (dim, dim))


def _displacement_arguments(z: np.ndarray, psi: np.ndarray, scale: FieldScale) -> np.ndarray:
    # exp(i z F(psi)) = D(beta) with beta = i z |F| e^{i psi}
    return 1j * z * scale.f_abs * np.exp(1j * psi)


def trace_product_batch(state: DensityOperatorFock, kernels: Sequence[np.ndarray]) -> np.ndarray:
    """
    Evaluates sum_{n,m} rho[n, m] prod_k K_k[q, m_k, n_k] for every query q.

    :param kernels: One array per mode of shape (Q, dim, dim), indexed [q, m, n].
    :return: Complex array of shape (Q,).
    """
    n_modes, dim = state.n_modes, state.dim_per_mode
    n_queries = kernels[0].shape[0]
    result = np.empty(n_queries, dtype=complex)
    rho = state.tensor
    for start in range(0, n_queries, BATCH_CHUNK):
        stop = min(start + BATCH_CHUNK, n_queries)
        # first mode: (n_2..n_N, m_2..m_N, q)
        partial = np.tensordot(rho, kernels[0][start:stop], axes=([0, n_modes], [2, 1]))
        partial = np.moveaxis(partial, -1, 0)
        for k in range(1, n_modes):
            rest = dim ** (n_modes - k - 1)
            partial = partial.reshape(stop - start, dim, rest, dim, rest)
            partial = np.einsum("qaxby,qba->qxy", partial, kernels[k][start:stop])
        result[start:stop] = partial.reshape(stop - start)
    return result


def trace_product_grid(state: DensityOperatorFock, kernels: Sequence[np.ndarray]) -> np.ndarray:
    """
    Evaluates sum_{n,m} rho[n, m] prod_k K_k[a_k, m_k, n_k] on a tensor grid.

    :param kernels: One array per mode of shape (L_k, dim, dim), indexed [a, m, n].
    :return: Complex array of shape (L_1, ..., L_N).
    """
    n_modes = state.n_modes
    out = state.tensor
    for k in range(n_modes):
        # axes: a_1..a_k, n_{k+1}..n_N, m_{k+1}..m_N
        out = np.tensordot(out, kernels[k], axes=([k, n_modes], [2, 1]))
        out = np.moveaxis(out, -1, k)
    return out


def characteristic_function_batch(state: DensityOperatorFock, z: np.ndarray, psi: np.ndarray,
                                  scale: FieldScale) -> np.ndarray:
    """Psi at many points; z and psi have shape (..., N)."""
    z = np.asarray(z, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), z.shape)
    if z.shape[-1] != state.n_modes:
        raise ValidationError(f"expected {state.n_modes} field arguments, got {z.shape[-1]}")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(psi))):
        raise ValidationError("characteristic function arguments must be finite")
    batch_shape = z.shape[:-1]
    beta = _displacement_arguments(z, psi, scale).reshape(-1, state.n_modes)
    kernels = [displacement_matrices(beta[:, k], state.dim_per_mode) for k in range(state.n_modes)]
    return trace_product_batch(state, kernels).reshape(batch_shape)


def characteristic_function_product(state: DensityOperatorFock, z_axes: Sequence[np.ndarray],
                                    psi_axes: Sequence[np.ndarray], scale: FieldScale) -> np.ndarray:
    """Psi on a tensor grid where z_k and psi_k vary along axis k only."""
    kernels = []
    for z_k, psi_k in zip(z_axes, psi_axes):
        beta = _displacement_arguments(np.asarray(z_k, dtype=float), np.asarray(psi_k, dtype=float), scale)
        kernels.append(displacement_matrices(beta, state.dim_per_mode))
    return trace_product_grid(state, kernels)


def characteristic_function(state: DensityOperatorFock, z: Sequence[float], psi: Sequence[float],
                            scale: FieldScale = FieldScale()) -> complex:
    """
    Joint characteristic function Psi(z, psi) = Tr[rho prod_k D_k(i z_k |F| e^{i psi_k})].

    Truncation error is bounded by the state's recorded trace deficit.

    :param state: The N-mode state.
    :param z: Field arguments, length N.
    :param psi: Phases in radians, length N.
    :param scale: Mode amplitude |F|.
    :return: The complex value of Psi.
    """
    z = np.asarray(z, dtype=float).reshape(1, -1)
    psi = np.asarray(psi, dtype=float).reshape(1, -1)
    return complex(characteristic_function_batch(state, z, psi, scale)[0])


def mean_field(state: DensityOperatorFock, mode_index: int, psi: float,
               scale: FieldScale = FieldScale()) -> float:
    """
    Expectation of the field strength F_k(psi) = |F|(a_k e^{-i psi} + h.c.).

    :return: 2 |F| Re(<a_k> e^{-i psi}).
    """
    if not 0 <= mode_index < state.n_modes:
        raise ValidationError(f"mode index {mode_index} out of range")
    reduced = state.reduced(mode_index)
    n = np.arange(1, state.dim_per_mode)
    # <a> = sum_n sqrt(n) rho[n, n-1]
    annihilation = np.sum(np.sqrt(n) * reduced[n, n - 1])
    return float(2 * scale.f_abs * np.real(annihilation * np.exp(-1j * psi)))
