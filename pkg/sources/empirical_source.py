"""Empirical characteristic function estimated from sum-field data."""
import itertools
import logging
import threading
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln

from errors import CoverageError, ValidationError
from measurement import DetectorModel, SumFieldDataset, build_dataset
from sources.base_source import CharFnSource

logger = logging.getLogger(__name__)

# Bound on the truncated Taylor remainder of exp(i z dF) inside a bin.
MOMENT_TOL = 1e-13
MAX_MOMENT_ORDER = 64
# Radial argument, in units of 1/|F|, assumed before the first prepare().
DEFAULT_Z_MAX = 16.0
QUERY_CHUNK = 1024
AXIS_TOL = 1e-12


class ControlAxis:
    """
    One control axis of the dataset with its covered interval.

    A non-periodic axis covers [first node, last node]. When the gap between an
    edge node and the natural boundary of the control domain is at most one
    node spacing, coverage extends to the boundary and queries in the gap are
    extrapolated linearly from the two outermost nodes (the upper-node weight
    leaves [0, 1]).
    """

    def __init__(self, name: str, nodes: np.ndarray, lower: float, upper: float,
                 periodic: bool = False, wrap_from: Optional[float] = None):
        self.name = name
        self.nodes = np.asarray(nodes, dtype=float)
        self.periodic = periodic
        # phases are 2 pi periodic; queries are wrapped into [wrap_from, wrap_from + 2 pi)
        self.wrap_from = wrap_from
        spacing = float(np.max(np.diff(self.nodes))) if self.nodes.size > 1 else 0.0
        self.low = lower if self.nodes[0] - lower <= spacing + AXIS_TOL else float(self.nodes[0])
        self.high = upper if upper - self.nodes[-1] <= spacing + AXIS_TOL else float(self.nodes[-1])
        self._extrapolated = False
        self._lock = threading.Lock()

    def _wrap(self, values: np.ndarray, start: float) -> np.ndarray:
        return start + np.mod(values - start + AXIS_TOL, 2 * np.pi) - AXIS_TOL

    def locate(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Lower and upper node indices and the linear weight of the upper node."""
        values = np.asarray(values, dtype=float)
        n = self.nodes.size
        if self.periodic:
            wrapped = self._wrap(values, self.nodes[0])
            lower = np.clip(np.searchsorted(self.nodes, wrapped, side="right") - 1, 0, n - 1)
            upper = (lower + 1) % n
            right = np.where(upper == 0, self.nodes[0] + 2 * np.pi, self.nodes[upper])
            span = right - self.nodes[lower]
            return lower, upper, (wrapped - self.nodes[lower]) / span
        if self.wrap_from is not None:
            values = self._wrap(values, self.wrap_from)
        outside = (values < self.low - AXIS_TOL) | (values > self.high + AXIS_TOL)
        if np.any(outside):
            bad = values[outside]
            raise CoverageError(f"{self.name} queries in [{bad.min():.6g}, {bad.max():.6g}] lie outside the "
                                f"covered range [{self.low:.6g}, {self.high:.6g}]")
        if not self._extrapolated and np.any((values < self.nodes[0]) | (values > self.nodes[-1])):
            with self._lock:
                if not self._extrapolated:
                    self._extrapolated = True
                    logger.info("%s: extrapolating from the edge nodes for queries between the outermost node "
                                "and the domain boundary", self.name)
        if n == 1:
            zeros = np.zeros(values.shape, dtype=int)
            return zeros, zeros, np.zeros(values.shape)
        lower = np.clip(np.searchsorted(self.nodes, values, side="right") - 1, 0, n - 2)
        t = (values - self.nodes[lower]) / (self.nodes[lower + 1] - self.nodes[lower])
        return lower, lower + 1, t


def moment_order(z_max: float, half_width: float) -> int:
    """Smallest P with (z h)^{P+1}/(P+1)! e^{z h} <= MOMENT_TOL."""
    x = z_max * half_width
    if x <= 0:
        return 0
    for order in range(MAX_MOMENT_ORDER + 1):
        log_remainder = (order + 1) * np.log(x) - gammaln(order + 2) + x
        if log_remainder <= np.log(MOMENT_TOL):
            return order
    logger.warning("z_max*h = %.3g needs more than %d moments; Psi-hat is truncated", x, MAX_MOMENT_ORDER)
    return MAX_MOMENT_ORDER


class EmpiricalCharFn(CharFnSource):
    """
    Psi-hat = (1/M) sum_j exp(i z F_j), interpolated multilinearly across the control grid.

    Raw samples are compressed per setting into binned Taylor moments
    m_{b,p} = sum_{j in b} (F_j - c_b)^p / p!, giving
    Psi-hat(z) = (1/M) sum_b e^{i z c_b} sum_p (i z)^p m_{b,p}, exact in z up
    to MOMENT_TOL. Histogram and analytic records use the bin centres (P = 0).
    """

    def __init__(self, dataset: SumFieldDataset):
        super().__init__(dataset.n_modes, dataset.scale)
        self.dataset = dataset
        self.phase_averaged = dataset.phase_averaged
        control = dataset.control
        grid = control.quadrature_grid
        self.centers = grid.centers
        self.half_width = grid.width / 2
        self._shape = control.shape
        self._records = [dataset.records[tuple(index)] for index in control.indices()]
        axes = [ControlAxis(f"alpha_{i + 1}", axis, 0.0, np.pi / 2) for i, axis in enumerate(control.alpha_axes)]
        if control.kind == "absolute":
            axes += [ControlAxis(f"psi_{k + 1}", axis, phi - np.pi, phi, wrap_from=phi - np.pi)
                     for k, (axis, phi) in enumerate(zip(control.psi_axes, control.phases))]
        else:
            axes += [ControlAxis(f"delta_psi_{k + 2}", axis, -np.pi, np.pi, periodic=True)
                     for k, axis in enumerate(control.psi_axes)]
        self._axes = axes
        self._order = -1
        self._moments = None
        self.prepare(DEFAULT_Z_MAX / self.scale.f_abs)

    @property
    def name(self) -> str:
        return "sum_field"

    def supports_phase_shifts(self) -> bool:
        return self.phase_averaged

    def _compute_moments(self, order: int) -> np.ndarray:
        n_bins = self.centers.size
        grid = self.dataset.control.quadrature_grid
        moments = np.zeros((len(self._records), n_bins, order + 1))
        for r, record in enumerate(self._records):
            if record.samples is not None:
                bins = np.clip(np.floor((record.samples - grid.f_min) / grid.width).astype(int), 0, n_bins - 1)
                delta = record.samples - self.centers[bins]
                term = np.ones_like(delta)
                for p in range(order + 1):
                    if p:
                        term = term * delta / p
                    moments[r, :, p] = np.bincount(bins, weights=term, minlength=n_bins)
                moments[r] /= record.samples.size
            elif record.counts is not None:
                moments[r, :, 0] = record.counts / record.counts.sum()
            else:
                weights = np.clip(record.density, 0.0, None)
                moments[r, :, 0] = weights / weights.sum()
        return moments

    def prepare(self, z_max: float) -> None:
        order = moment_order(z_max, self.half_width) if self.dataset.mode == "samples" else 0
        if order > self._order:
            logger.debug("recomputing binned moments up to order %d for z_max=%.4g", order, z_max)
            self._moments = self._compute_moments(order)
            self._order = order

    def _control_coordinates(self, angles: np.ndarray, psi: np.ndarray):
        coords = [angles[:, i] for i in range(self.n_modes - 1)]
        if self.phase_averaged:
            coords += [psi[:, k] - psi[:, 0] for k in range(1, self.n_modes)]
        else:
            coords += [psi[:, k] for k in range(self.n_modes)]
        return coords

    def evaluate(self, z: np.ndarray, angles: np.ndarray, psi: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        angles = np.asarray(angles, dtype=float).reshape(z.size, self.n_modes - 1)
        psi = np.asarray(psi, dtype=float).reshape(z.size, self.n_modes)
        if np.any(z < 0):
            raise ValidationError("empirical Psi needs non-negative radial arguments")
        located = [axis.locate(c) for axis, c in zip(self._axes, self._control_coordinates(angles, psi))]
        moments = self._moments
        powers = np.arange(moments.shape[-1])
        out = np.empty(z.size, dtype=complex)
        for start in range(0, z.size, QUERY_CHUNK):
            s = slice(start, start + QUERY_CHUNK)
            zs = z[s]
            blended = np.zeros((zs.size,) + moments.shape[1:])
            for corner in itertools.product((0, 1), repeat=len(located)):
                weight = np.ones(zs.size)
                index = []
                for (lower, upper, t), bit in zip(located, corner):
                    index.append(upper[s] if bit else lower[s])
                    weight = weight * (t[s] if bit else 1 - t[s])
                blended += weight[:, None, None] * moments[np.ravel_multi_index(index, self._shape)]
            phase = np.exp(1j * zs[:, None] * self.centers[None, :])
            series = (1j * zs[:, None]) ** powers[None, :]
            out[s] = np.einsum("qb,qbp,qp->q", phase, blended, series)
        # edge extrapolation can leave the unit disc
        out /= np.maximum(1.0, np.abs(out))
        out[z == 0] = 1.0
        return out

    def describe(self):
        out = super().describe()
        out.update({"dataset_mode": self.dataset.mode, "samples_per_setting": self.dataset.samples_per_setting,
                    "seed": self.dataset.seed, "eta": self.dataset.detector.eta,
                    "control_shape": list(self._shape), "moment_order": self._order})
        return out

    @classmethod
    def for_benchmark(cls, state, scale, control) -> Optional["EmpiricalCharFn"]:
        dataset = build_dataset(state, control, 0, DetectorModel(), 0, scale, mode="analytic")
        return cls(dataset)
