"""
Persistence for sum-field datasets and field-strength density matrices.

A dataset is a directory holding ``manifest.json`` and ``data.csv``; a density
matrix is one JSON file. Floats are written so that reading them back gives
the identical doubles, and every file is written to ``<path>.tmp`` first and
then renamed into place.
"""
import json
import logging
import os
from typing import Any, Callable, Dict, Optional

import numpy as np
import pandas as pd

from errors import ValidationError
from measurement import ControlGrid, DetectorModel, SettingRecord, SumFieldDataset
from quadrature_oracle import DensityMatrixFS, OutputGrid, QuadratureGrid
from run_config import TOOL_VERSION
from state_model import FieldScale

logger = logging.getLogger(__name__)

DATASET_FORMAT = "sum-field-dataset"
MATRIX_FORMAT = "field-strength-density-matrix"
MANIFEST_NAME = "manifest.json"
DATA_NAME = "data.csv"
FLOAT_FORMAT = "%.17g"


def _jsonable(value):
    """Converts numpy scalars and arrays (recursively) into plain JSON types; NaN and inf become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _atomic_write(path: str, write: Callable[[str], None]):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    temporary = f"{path}.tmp"
    try:
        write(temporary)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise


def _write_json(path: str, document: Dict[str, Any]):
    def write(target):
        with open(target, "w", encoding="utf-8") as handle:
            json.dump(_jsonable(document), handle, indent=2, sort_keys=True, allow_nan=False)
            handle.write("\n")

    _atomic_write(path, write)


def _write_csv(path: str, frame: pd.DataFrame):
    _atomic_write(path, lambda target: frame.to_csv(target, index=False, float_format=FLOAT_FORMAT))


def _read_json(path: str, expected_format: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ValidationError(f"{path} is not a {expected_format} file (top level is {type(document).__name__})")
    if document.get("format") != expected_format:
        raise ValidationError(f"{path} is not a {expected_format} file (format={document.get('format')!r})")
    return document


# --- datasets ---

def _index_columns(control: ControlGrid):
    n_alpha = len(control.alpha_axes)
    return ([f"alpha_idx_{i + 1}" for i in range(n_alpha)]
            + [f"psi_idx_{k + 1}" for k in range(len(control.psi_axes))])


def _control_document(control: ControlGrid) -> Dict[str, Any]:
    grid = control.quadrature_grid
    return {"kind": control.kind, "phases": list(control.phases), "n_average": control.n_average,
            "alpha_axes": [axis.tolist() for axis in control.alpha_axes],
            "psi_axes": [axis.tolist() for axis in control.psi_axes],
            "quadrature_grid": {"f_min": grid.f_min, "f_max": grid.f_max, "n_bins": grid.n_bins}}


def _control_from_document(document: Dict[str, Any]) -> ControlGrid:
    grid = document["quadrature_grid"]
    return ControlGrid(alpha_axes=tuple(np.array(a, dtype=float) for a in document["alpha_axes"]),
                       psi_axes=tuple(np.array(p, dtype=float) for p in document["psi_axes"]),
                       quadrature_grid=QuadratureGrid(float(grid["f_min"]), float(grid["f_max"]),
                                                      int(grid["n_bins"])),
                       phases=tuple(document["phases"]), kind=document["kind"],
                       n_average=int(document["n_average"]))


def dataset_frame(dataset: SumFieldDataset) -> pd.DataFrame:
    """Long-format table: one row per sample (samples) or per bin (histogram, analytic)."""
    control = dataset.control
    columns = _index_columns(control)
    centers = control.quadrature_grid.centers
    blocks = []
    for index in control.indices():
        record = dataset.records[tuple(index)]
        if record.samples is not None:
            block = {"value": record.samples}
        elif record.counts is not None:
            block = {"bin_center": centers, "count": record.counts}
        else:
            block = {"bin_center": centers, "density": record.density}
        length = len(next(iter(block.values())))
        frame = pd.DataFrame({name: np.full(length, i, dtype=np.int64) for name, i in zip(columns, index)})
        for name, values in block.items():
            frame[name] = values
        blocks.append(frame)
    return pd.concat(blocks, ignore_index=True)


def save_dataset(dataset: SumFieldDataset, out_dir: str, provenance: Optional[Dict[str, Any]] = None) -> str:
    """
    Writes ``<out_dir>/data.csv`` and then ``<out_dir>/manifest.json``.

    :param provenance: Extra manifest entries (config hash, ...).
    :return: The manifest path.
    """
    control = dataset.control
    seeds = [dataset.records[tuple(index)].seed for index in control.indices()]
    manifest = {
        "format": DATASET_FORMAT,
        "version": TOOL_VERSION,
        "n_modes": dataset.n_modes,
        "f_abs": dataset.scale.f_abs,
        "eta": dataset.detector.eta,
        "seed": dataset.seed,
        "samples_per_setting": dataset.samples_per_setting,
        "mode": dataset.mode,
        "control": _control_document(control),
        "setting_seeds": seeds if dataset.mode != "analytic" else [],
        "metadata": dict(dataset.metadata, **(provenance or {})),
    }
    _write_csv(os.path.join(out_dir, DATA_NAME), dataset_frame(dataset))
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    _write_json(manifest_path, manifest)
    logger.info("wrote %d settings to %s", len(dataset.records), out_dir)
    return manifest_path


def load_dataset(path: str) -> SumFieldDataset:
    """Reads a dataset directory (or its manifest path)."""
    directory = path if os.path.isdir(path) else os.path.dirname(path)
    manifest = _read_json(os.path.join(directory, MANIFEST_NAME), DATASET_FORMAT)
    try:
        control = _control_from_document(manifest["control"])
        mode = manifest["mode"]
        frame = pd.read_csv(os.path.join(directory, DATA_NAME), float_precision="round_trip")
    except KeyError as e:
        raise ValidationError(f"dataset manifest is missing {e}") from e
    except (OSError, pd.errors.ParserError) as e:
        raise ValidationError(f"cannot read dataset data: {e}") from e
    columns = _index_columns(control)
    value_column = {"samples": "value", "histogram": "count", "analytic": "density"}.get(mode)
    missing = [c for c in columns + [value_column] if c not in frame.columns]
    if missing:
        raise ValidationError(f"dataset data lacks columns {missing}")
    seeds = manifest.get("setting_seeds") or []
    seed_of = {tuple(index): seeds[i] for i, index in enumerate(control.indices())} if seeds else {}
    records = {}
    for key, group in frame.groupby(columns, sort=False):
        index = tuple(int(i) for i in np.atleast_1d(key))
        values = group[value_column].to_numpy()
        seed = seed_of.get(index)
        if mode == "samples":
            records[index] = SettingRecord(index=index, seed=seed, samples=values.astype(float))
        elif mode == "histogram":
            records[index] = SettingRecord(index=index, seed=seed, counts=values.astype(np.int64))
        else:
            records[index] = SettingRecord(index=index, density=values.astype(float))
    return SumFieldDataset(n_modes=int(manifest["n_modes"]), scale=FieldScale(float(manifest["f_abs"])),
                           detector=DetectorModel(float(manifest["eta"])), seed=int(manifest["seed"]),
                           samples_per_setting=int(manifest["samples_per_setting"]), mode=mode, control=control,
                           records=records, metadata=manifest.get("metadata", {}))


def export_dataset_csv(dataset: SumFieldDataset, path: str):
    """Tidy p_s slices: setting angles and phases, bin centre and density."""
    control = dataset.control
    grid = control.quadrature_grid
    rows = []
    for index in control.indices():
        record = dataset.records[tuple(index)]
        alpha, psi = control.setting(index)
        if record.density is not None:
            density = record.density
        else:
            counts = record.counts if record.counts is not None else np.histogram(record.samples, grid.edges)[0]
            density = counts / (counts.sum() * grid.width)
        frame = pd.DataFrame({"bin_center": grid.centers, "density": density})
        for i, a in enumerate(alpha):
            frame.insert(i, f"alpha_{i + 1}", a)
        for k, p in enumerate(psi):
            frame.insert(len(alpha) + k, f"psi_{k + 1}", p)
        rows.append(frame)
    _write_csv(path, pd.concat(rows, ignore_index=True))


# --- density matrices ---

def save_matrix(matrix: DensityMatrixFS, path: str, provenance: Optional[Dict[str, Any]] = None) -> str:
    """Elements are [re, im] pairs in row-major order over centre then offset indices."""
    flat = matrix.elements.reshape(-1)
    document = {
        "format": MATRIX_FORMAT,
        "version": TOOL_VERSION,
        "n_modes": matrix.n_modes,
        "phases": list(matrix.phases),
        "centers": [axis.tolist() for axis in matrix.grid.centers],
        "offsets": [axis.tolist() for axis in matrix.grid.offsets],
        "elements": np.stack([flat.real, flat.imag], axis=-1).tolist(),
        "provenance": dict(matrix.provenance, **(provenance or {})),
    }
    _write_json(path, document)
    logger.info("wrote density matrix %s to %s", matrix.elements.shape, path)
    return path


def load_matrix(path: str) -> DensityMatrixFS:
    document = _read_json(path, MATRIX_FORMAT)
    try:
        grid = OutputGrid(centers=tuple(np.array(c, dtype=float) for c in document["centers"]),
                          offsets=tuple(np.array(o, dtype=float) for o in document["offsets"]))
        pairs = np.array(document["elements"], dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValidationError(f"{path}: elements must be [re, im] pairs")
        elements = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(grid.shape)
        return DensityMatrixFS(n_modes=int(document["n_modes"]), phases=tuple(document["phases"]), grid=grid,
                               elements=elements, provenance=document.get("provenance", {}))
    except KeyError as e:
        raise ValidationError(f"{path} is missing {e}") from e
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e


def export_matrix_csv(matrix: DensityMatrixFS, path: str):
    """Heat-map table: centre and offset per mode, then re and im."""
    n = matrix.n_modes
    axes = list(matrix.grid.centers) + list(matrix.grid.offsets)
    mesh = np.meshgrid(*axes, indexing="ij")
    names = [f"center_{k + 1}" for k in range(n)] + [f"offset_{k + 1}" for k in range(n)]
    frame = pd.DataFrame({name: values.reshape(-1) for name, values in zip(names, mesh)})
    frame["re"] = matrix.elements.real.reshape(-1)
    frame["im"] = matrix.elements.imag.reshape(-1)
    _write_csv(path, frame)


def save_table(frame: pd.DataFrame, path: str) -> str:
    _write_csv(path, frame)
    return path


def save_report(report: Dict[str, Any], path: str) -> str:
    """Comparison report as standard JSON (non-finite values become null)."""
    _write_json(path, report)
    return path
