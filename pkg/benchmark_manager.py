import importlib
import inspect
import logging
import os
import time
from typing import List, Sequence

import numpy as np
import pandas as pd

from errors import TomographyError
from measurement import ControlGrid
from quadrature_oracle import OutputGrid, compare_matrices, oracle_grid
from reconstruction import QuadratureSettings, reconstruct_grid
from sources.base_source import CharFnSource
from state_model import DensityOperatorFock, FieldScale

logger = logging.getLogger(__name__)

SOURCE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "sources")
BENCH_COLUMNS = ["method", "n_modes", "n_centers", "n_offsets", "quadrature_nodes", "transform_stages",
                 "wall_time_s", "outer_time_s", "linf_vs_oracle", "error"]


class BenchmarkManager:
    """Discovers the reconstruction methods among the sources and times them side by side."""

    def __init__(self, state: DensityOperatorFock, scale: FieldScale, control: ControlGrid):
        self.state = state
        self.scale = scale
        self.control = control
        self.methods: List[CharFnSource] = self._discover_methods()

    def _discover_methods(self) -> List[CharFnSource]:
        """
        Imports every module in the 'sources' directory and keeps the source
        classes that build themselves for a benchmark.
        """
        methods = []
        for filename in sorted(os.listdir(SOURCE_DIR)):
            if not filename.endswith(".py") or filename.startswith("__") or filename == "base_source.py":
                continue
            module_name = f"sources.{filename[:-3]}"
            try:
                module = importlib.import_module(module_name)
            except ImportError as e:
                logger.error("cannot import source module %s: %s", module_name, e)
                continue
            for _, obj in inspect.getmembers(module, inspect.isclass):
                if issubclass(obj, CharFnSource) and obj is not CharFnSource and obj.__module__ == module_name:
                    source = obj.for_benchmark(self.state, self.scale, self.control)
                    if source is not None:
                        methods.append(source)
        logger.info("benchmarking methods: %s", ", ".join(m.name for m in methods))
        return methods

    def run_all_methods(self, n_centers: Sequence[int], nodes: Sequence[int], f_max: float,
                        offset_max: float, n_offsets: int, phases: Sequence[float],
                        threads: int = 1) -> pd.DataFrame:
        """
        Reconstructs the same output grids with every method and compares each with the oracle.

        Offsets run over [0, offset_max]. A failing method is recorded in the
        ``error`` column and the remaining methods still run.

        :return: One row per (method, grid size, node count), columns BENCH_COLUMNS.
        """
        rows = []
        n_modes = self.state.n_modes
        for centers in n_centers:
            grid = OutputGrid.uniform(n_modes, f_max, centers, offset_max, n_offsets, offset_min=0.0)
            oracle = oracle_grid(self.state, grid, phases, self.scale)
            for node_count in nodes:
                quad = QuadratureSettings(nodes=node_count, threads=threads)
                for method in self.methods:
                    row = {"method": method.name, "n_modes": n_modes, "n_centers": centers,
                           "n_offsets": n_offsets, "quadrature_nodes": node_count,
                           "transform_stages": method.transform_stages, "wall_time_s": np.nan,
                           "outer_time_s": np.nan, "linf_vs_oracle": np.nan, "error": ""}
                    try:
                        started = time.perf_counter()
                        matrix = reconstruct_grid(method, grid, phases, quad=quad, scale=self.scale)
                        row["wall_time_s"] = time.perf_counter() - started
                        row["outer_time_s"] = matrix.provenance["outer_time_s"]
                        row["linf_vs_oracle"] = compare_matrices(matrix, oracle).linf
                    except TomographyError as e:
                        logger.warning("method %s failed: %s", method.name, e)
                        row["error"] = str(e)
                    rows.append(row)
        return pd.DataFrame(rows, columns=BENCH_COLUMNS)

    def get_method_count(self) -> int:
        return len(self.methods)
