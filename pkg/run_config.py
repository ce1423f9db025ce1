"""Run configuration: JSON documents validated into frozen dataclasses."""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from errors import ValidationError
from measurement import CONTROL_KINDS, DATASET_MODES, MIN_PHASE_AVERAGE, DetectorModel
from reconstruction import (AVERAGE_ORDERS, DEFAULT_AMPLIFICATION_CEILING, DEFAULT_NODES, DEFAULT_Y_MAX,
                            QuadratureSettings, RegularizationFilter)
from state_model import (Coherent, FieldScale, FockProduct, Mixture, SingleModeSqueezed, StateSpec, Thermal,
                         TwoModeSqueezedVacuum, Vacuum)

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
THREADS_ENV = "HOMODYNE_THREADS"
STATE_KINDS = ("vacuum", "coherent", "fock", "squeezed", "tmsv", "thermal", "mixture")


def _check_keys(section: Dict[str, Any], allowed, path: str, required=()):
    if not isinstance(section, dict):
        raise ValidationError("expected an object", key_path=path)
    for key in section:
        if key not in allowed:
            raise ValidationError(f"unknown key {key!r} (allowed: {', '.join(sorted(allowed))})",
                                  key_path=f"{path}.{key}")
    for key in required:
        if key not in section:
            raise ValidationError("required key missing", key_path=f"{path}.{key}")


def _number(section, key, path, default=None, kind=float, low=None, high=None,
            low_open=False, high_open=False):
    value = section.get(key, default)
    if value is None:
        return None
    key_path = f"{path}.{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", key_path=key_path)
    if kind is int and int(value) != value:
        raise ValidationError(f"expected an integer, got {value!r}", key_path=key_path)
    value = kind(value)
    if not np.isfinite(value):
        raise ValidationError("must be finite", key_path=key_path)
    if low is not None and (value <= low if low_open else value < low):
        raise ValidationError(f"must be {'>' if low_open else '>='} {low}, got {value}", key_path=key_path)
    if high is not None and (value >= high if high_open else value > high):
        raise ValidationError(f"must be {'<' if high_open else '<='} {high}, got {value}", key_path=key_path)
    return value


def _choice(section, key, path, choices, default):
    value = section.get(key, default)
    if value not in choices:
        raise ValidationError(f"must be one of {list(choices)}, got {value!r}", key_path=f"{path}.{key}")
    return value


def _complex(value, key_path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1])
    raise ValidationError(f"expected a number or [re, im] pair, got {value!r}", key_path=key_path)


def parse_state(section: Dict[str, Any], path: str = "config.state",
                inherit: Optional[Tuple[int, int]] = None) -> StateSpec:
    """
    Builds a StateSpec from its JSON form.

    Mixture components may omit n_modes and truncation_dim; they inherit the
    mixture's values.
    """
    allowed = {"n_modes", "truncation_dim", "kind", "amplitudes", "occupations", "mode", "modes", "r", "phase",
               "mean_photons", "components"}
    _check_keys(section, allowed, path, required=("kind",))
    n_default, dim_default = inherit or (None, None)
    n_modes = _number(section, "n_modes", path, n_default, int, low=1)
    dim = _number(section, "truncation_dim", path, dim_default, int, low=2)
    if n_modes is None or dim is None:
        raise ValidationError("n_modes and truncation_dim are required", key_path=path)
    kind_name = _choice(section, "kind", path, STATE_KINDS, None)
    if kind_name == "vacuum":
        kind = Vacuum()
    elif kind_name == "coherent":
        amplitudes = section.get("amplitudes")
        if not isinstance(amplitudes, list):
            raise ValidationError("expected a list", key_path=f"{path}.amplitudes")
        kind = Coherent(tuple(_complex(a, f"{path}.amplitudes[{i}]") for i, a in enumerate(amplitudes)))
    elif kind_name == "fock":
        occupations = section.get("occupations")
        if not isinstance(occupations, list) or not all(isinstance(n, int) for n in occupations):
            raise ValidationError("expected a list of integers", key_path=f"{path}.occupations")
        kind = FockProduct(tuple(occupations))
    elif kind_name == "squeezed":
        kind = SingleModeSqueezed(mode=_number(section, "mode", path, 0, int, low=0),
                                  r=_number(section, "r", path, None, float, low=0),
                                  phase=_number(section, "phase", path, 0.0))
    elif kind_name == "tmsv":
        modes = section.get("modes", [0, 1])
        if not isinstance(modes, list) or len(modes) != 2:
            raise ValidationError("expected two mode indices", key_path=f"{path}.modes")
        kind = TwoModeSqueezedVacuum(modes=(int(modes[0]), int(modes[1])),
                                     r=_number(section, "r", path, None, float, low=0))
    elif kind_name == "thermal":
        kind = Thermal(mode=_number(section, "mode", path, 0, int, low=0),
                       mean_photons=_number(section, "mean_photons", path, None, float, low=0))
    else:
        components = section.get("components")
        if not isinstance(components, list) or not components:
            raise ValidationError("expected a non-empty list", key_path=f"{path}.components")
        parsed = []
        for i, item in enumerate(components):
            item_path = f"{path}.components[{i}]"
            _check_keys(item, {"weight", "state"}, item_path, required=("weight", "state"))
            weight = _number(item, "weight", item_path, low=0)
            parsed.append((weight, parse_state(item["state"], f"{item_path}.state", (n_modes, dim))))
        kind = Mixture(tuple(parsed))
    if kind_name in ("squeezed", "tmsv") and section.get("r") is None:
        raise ValidationError("required key missing", key_path=f"{path}.r")
    if kind_name == "thermal" and section.get("mean_photons") is None:
        raise ValidationError("required key missing", key_path=f"{path}.mean_photons")
    try:
        return StateSpec(n_modes=n_modes, truncation_dim=dim, kind=kind)
    except ValidationError as e:
        raise ValidationError(str(e), key_path=path) from e


@dataclass(frozen=True)
class ControlGridConfig:
    n_alpha: int = 8
    n_psi: int = 8
    kind: str = "absolute"
    n_average: int = MIN_PHASE_AVERAGE
    f_max: Optional[float] = None
    n_bins: int = 64
    route: str = "fourier"


@dataclass(frozen=True)
class OutputGridConfig:
    f_max: float = 4.0
    n_centers: int = 9
    offset_max: float = 1.0
    offset_min: Optional[float] = None
    n_offsets: int = 5
    phases: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class BenchConfig:
    n_centers: Tuple[int, ...] = (5, 9)
    nodes: Tuple[int, ...] = (64, 128)
    n_offsets: int = 3
    offset_max: float = 1.0


@dataclass(frozen=True)
class OutputPaths:
    dataset: str = "dataset"
    matrix: str = "matrix.json"
    bench: str = "bench.csv"


@dataclass(frozen=True)
class RunConfig:
    """A validated run configuration; ``raw`` is the document it was parsed from."""

    state: Optional[StateSpec] = None
    scale: FieldScale = FieldScale()
    control: ControlGridConfig = ControlGridConfig()
    samples: int = 100000
    seed: int = 0
    mode: str = "samples"
    detector: DetectorModel = DetectorModel()
    filter: Optional[RegularizationFilter] = None
    quadrature: QuadratureSettings = QuadratureSettings()
    output_grid: OutputGridConfig = OutputGridConfig()
    phase_averaged: bool = False
    average_order: str = "matrices"
    bench: BenchConfig = BenchConfig()
    output: OutputPaths = OutputPaths()
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                document = json.load(handle)
        except OSError as e:
            raise ValidationError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ValidationError(f"config {path} is not valid JSON: {e}") from e
        return cls.from_dict(document)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "RunConfig":
        path = "config"
        _check_keys(document, {"state", "f_abs", "control", "samples", "seed", "mode", "eta", "filter",
                               "quadrature", "output_grid", "phase_averaged", "average_order", "bench",
                               "output"}, path)
        state = parse_state(document["state"]) if "state" in document else None
        scale = FieldScale(_number(document, "f_abs", path, 1.0, low=0, low_open=True))
        eta = _number(document, "eta", path, 1.0)
        try:
            detector = DetectorModel(eta)
        except ValidationError as e:
            raise ValidationError(str(e), key_path=f"{path}.eta") from e

        section = document.get("control", {})
        section_path = f"{path}.control"
        _check_keys(section, {"n_alpha", "n_psi", "kind", "n_average", "f_max", "n_bins", "route"}, section_path)
        control = ControlGridConfig(
            n_alpha=_number(section, "n_alpha", section_path, 8, int, low=1),
            n_psi=_number(section, "n_psi", section_path, 8, int, low=1),
            kind=_choice(section, "kind", section_path, CONTROL_KINDS, "absolute"),
            n_average=_number(section, "n_average", section_path, MIN_PHASE_AVERAGE, int, low=MIN_PHASE_AVERAGE),
            f_max=_number(section, "f_max", section_path, None, low=0, low_open=True),
            n_bins=_number(section, "n_bins", section_path, 64, int, low=8),
            route=_choice(section, "route", section_path, ("fourier", "projection"), "fourier"))

        regularization = None
        if "filter" in document:
            section = document["filter"]
            section_path = f"{path}.filter"
            _check_keys(section, {"y_cut", "taper", "taper_width", "amplification_ceiling"}, section_path,
                        required=("y_cut",))
            try:
                regularization = RegularizationFilter(
                    y_cut=_number(section, "y_cut", section_path, low=0, low_open=True),
                    taper=_choice(section, "taper", section_path, ("none", "cosine"), "none"),
                    taper_width=_number(section, "taper_width", section_path, 1.0, low=0, low_open=True),
                    amplification_ceiling=_number(section, "amplification_ceiling", section_path,
                                                  DEFAULT_AMPLIFICATION_CEILING, low=1, low_open=True))
            except ValidationError as e:
                raise ValidationError(str(e), key_path=section_path) from e

        section = document.get("quadrature", {})
        section_path = f"{path}.quadrature"
        _check_keys(section, {"nodes", "y_max"}, section_path)
        quadrature = QuadratureSettings(nodes=_number(section, "nodes", section_path, DEFAULT_NODES, int, low=8),
                                        y_max=_number(section, "y_max", section_path, DEFAULT_Y_MAX,
                                                      low=0, low_open=True))

        section = document.get("output_grid", {})
        section_path = f"{path}.output_grid"
        _check_keys(section, {"f_max", "n_centers", "offset_max", "offset_min", "n_offsets", "phases"},
                    section_path)
        phases = section.get("phases")
        if phases is not None:
            if not isinstance(phases, list):
                raise ValidationError("expected a list of radians", key_path=f"{section_path}.phases")
            phases = tuple(_number({"p": p}, "p", f"{section_path}.phases[{i}]") for i, p in enumerate(phases))
        output_grid = OutputGridConfig(
            f_max=_number(section, "f_max", section_path, 4.0, low=0, low_open=True),
            n_centers=_number(section, "n_centers", section_path, 9, int, low=1),
            offset_max=_number(section, "offset_max", section_path, 1.0, low=0),
            offset_min=_number(section, "offset_min", section_path, None),
            n_offsets=_number(section, "n_offsets", section_path, 5, int, low=1),
            phases=phases)

        section = document.get("bench", {})
        section_path = f"{path}.bench"
        _check_keys(section, {"n_centers", "nodes", "n_offsets", "offset_max"}, section_path)
        bench = BenchConfig(
            n_centers=_int_list(section, "n_centers", section_path, (5, 9), low=1),
            nodes=_int_list(section, "nodes", section_path, (64, 128), low=8),
            n_offsets=_number(section, "n_offsets", section_path, 3, int, low=1),
            offset_max=_number(section, "offset_max", section_path, 1.0, low=0))

        section = document.get("output", {})
        section_path = f"{path}.output"
        _check_keys(section, {"dataset", "matrix", "bench"}, section_path)
        for key, value in section.items():
            if not isinstance(value, str) or not value:
                raise ValidationError("expected a path", key_path=f"{section_path}.{key}")
        output = OutputPaths(**section)

        phase_averaged = document.get("phase_averaged", False)
        if not isinstance(phase_averaged, bool):
            raise ValidationError("expected true or false", key_path=f"{path}.phase_averaged")
        config = cls(state=state, scale=scale, control=control,
                     samples=_number(document, "samples", path, 100000, int, low=0),
                     seed=_number(document, "seed", path, 0, int, low=0, high=2 ** 64 - 1),
                     mode=_choice(document, "mode", path, DATASET_MODES, "samples"),
                     detector=detector, filter=regularization, quadrature=quadrature, output_grid=output_grid,
                     phase_averaged=phase_averaged,
                     average_order=_choice(document, "average_order", path, AVERAGE_ORDERS, "matrices"),
                     bench=bench, output=output, raw=document)
        if state is not None and output_grid.phases is not None and len(output_grid.phases) != state.n_modes:
            raise ValidationError(f"expected {state.n_modes} phases", key_path="config.output_grid.phases")
        return config

    def with_overrides(self, **overrides) -> "RunConfig":
        """Re-validates the document with command-line values applied (None means not given)."""
        document = json.loads(json.dumps(self.raw))
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "filter_ycut":
                document.setdefault("filter", {})["y_cut"] = value
            else:
                document[key] = value
        return RunConfig.from_dict(document)

    def require_state(self, command: str) -> StateSpec:
        if self.state is None:
            raise ValidationError(f"required for {command}", key_path="config.state")
        return self.state

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def _int_list(section, key, path, default, low):
    values = section.get(key, list(default))
    if not isinstance(values, list) or not values:
        raise ValidationError("expected a non-empty list of integers", key_path=f"{path}.{key}")
    return tuple(_number({"v": v}, "v", f"{path}.{key}[{i}]", kind=int, low=low) for i, v in enumerate(values))


def config_hash(document: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_threads(cli_threads: Optional[int]) -> int:
    """--threads wins over HOMODYNE_THREADS; the default is 1."""
    if cli_threads is not None:
        value, source = cli_threads, "--threads"
    elif os.environ.get(THREADS_ENV):
        value, source = os.environ[THREADS_ENV], THREADS_ENV
    else:
        return 1
    try:
        threads = int(value)
    except ValueError as e:
        raise ValidationError(f"{source} must be an integer, got {value!r}") from e
    if threads < 1:
        raise ValidationError(f"{source} must be >= 1, got {threads}")
    logger.debug("using %d worker threads (%s)", threads, source)
    return threads
