import dataclasses
import logging
import sys
from typing import Any, Dict

import numpy as np

from benchmark_manager import BenchmarkManager
from dataset_store import (export_dataset_csv, export_matrix_csv, load_dataset, load_matrix, save_dataset,
                           save_matrix, save_report, save_table)
from errors import TomographyError, ToleranceExceededError, ValidationError
from measurement import DetectorModel, build_dataset, default_control_grid
from quadrature_oracle import (OutputGrid, QuadratureGrid, compare_matrices, default_quadrature_grid,
                               oracle_grid)
from reconstruction import phase_averaged_reconstruct, reconstruct_grid
from run_config import TOOL_VERSION, RunConfig, resolve_threads
from sources.analytic_source import AnalyticCharFn
from sources.empirical_source import EmpiricalCharFn
from state_model import build_state

logger = logging.getLogger(__name__)


class TomographyOrchestrator:
    """
    Runs one subcommand of the tomography tool.

    Library code raises ``TomographyError`` subclasses; this class is the only
    place where they become exit codes.
    """

    def __init__(self):
        self.handlers = {
            "simulate": self._simulate,
            "reconstruct": self._reconstruct,
            "oracle": self._oracle,
            "compare": self._compare,
            "bench": self._bench,
        }

    def handle_command(self, args) -> int:
        """
        Dispatches parsed command-line arguments.

        :param args: Namespace from the launcher's parser; ``args.command`` names the subcommand.
        :return: 0 on success, 1 runtime failure, 2 input failure, 3 comparison above tolerance.
        """
        handler = self.handlers.get(args.command)
        if handler is None:
            print(f"error: unknown command {args.command!r}", file=sys.stderr)
            return ValidationError.exit_code
        try:
            handler(args)
            return 0
        except TomographyError as e:
            logger.debug("%s failed", args.command, exc_info=True)
            print(f"error: {e}", file=sys.stderr)
            return e.exit_code
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1

    # --- helpers ---

    def _config(self, args) -> RunConfig:
        path = getattr(args, "config", None)
        config = RunConfig.from_json(path) if path else RunConfig()
        return config.with_overrides(
            seed=getattr(args, "seed", None),
            eta=getattr(args, "eta", None),
            samples=getattr(args, "samples", None),
            mode=getattr(args, "mode", None),
            filter_ycut=getattr(args, "filter_ycut", None),
            phase_averaged=True if getattr(args, "phase_averaged", False) else None,
        )

    @staticmethod
    def _provenance(config: RunConfig) -> Dict[str, Any]:
        return {"config_hash": config.config_hash, "seed": config.seed, "version": TOOL_VERSION}

    @staticmethod
    def _output_grid(config: RunConfig, n_modes: int) -> OutputGrid:
        og = config.output_grid
        return OutputGrid.uniform(n_modes, og.f_max, og.n_centers, og.offset_max, og.n_offsets, og.offset_min)

    @staticmethod
    def _phases(config: RunConfig, n_modes: int):
        phases = config.output_grid.phases
        return tuple(phases) if phases is not None else (0.0,) * n_modes

    @staticmethod
    def _print_residuals(provenance: Dict[str, Any]):
        residuals = provenance.get("residuals", {})
        print(f"   Hermiticity residual: {residuals.get('hermiticity', float('nan')):.3e}")
        print(f"   Diagonal max |imag|: {residuals.get('diagonal_imag', float('nan')):.3e}")
        print(f"   Diagonal min real: {residuals.get('diagonal_min_real', float('nan')):.3e}")
        print(f"   Diagonal normalization: {residuals.get('normalization', float('nan')):.6f}")

    # --- commands ---

    def _simulate(self, args):
        config = self._config(args)
        spec = config.require_state("simulate")
        if config.mode != "analytic" and config.samples < 1:
            raise ValidationError(f"mode={config.mode} needs samples >= 1", key_path="config.samples")
        state = build_state(spec)
        scale = config.scale
        settings = config.control
        if settings.f_max is not None:
            grid = QuadratureGrid.symmetric(settings.f_max, settings.n_bins)
        else:
            grid = default_quadrature_grid(state, scale, settings.n_bins, config.detector.noise_variance(scale))
        control = default_control_grid(spec.n_modes, settings.n_alpha, settings.n_psi,
                                       self._phases(config, spec.n_modes), grid, settings.kind, settings.n_average)
        print(f"--- Simulating {control.n_settings} settings ({config.mode}, eta={config.detector.eta}) ---")
        dataset = build_dataset(state, control, config.samples, config.detector, config.seed, scale,
                                config.mode, resolve_threads(getattr(args, "threads", None)), settings.route)
        out = getattr(args, "out", None) or config.output.dataset
        save_dataset(dataset, out, provenance=self._provenance(config))
        if config.mode == "analytic":
            norms = [np.sum(r.density) * grid.width for r in dataset.records.values()]
            print(f"   Normalization: max |sum - 1| = {max(abs(n - 1) for n in norms):.3e}")
        else:
            print(f"   Samples per setting: {dataset.samples_per_setting}")
        if getattr(args, "export_csv", None):
            export_dataset_csv(dataset, args.export_csv)
        print(f"Dataset written to {out}")

    def _reconstruct(self, args):
        config = self._config(args)
        threads = resolve_threads(getattr(args, "threads", None))
        provenance = self._provenance(config)
        if getattr(args, "dataset", None):
            dataset = load_dataset(args.dataset)
            if "f_abs" in config.raw and config.scale != dataset.scale:
                raise ValidationError(f"config |F|={config.scale.f_abs} differs from the dataset's "
                                      f"{dataset.scale.f_abs}", key_path="config.f_abs")
            source = EmpiricalCharFn(dataset)
            model = config.detector if getattr(args, "eta", None) is not None else dataset.detector
            phases = (self._phases(config, dataset.n_modes) if config.output_grid.phases is not None
                      else dataset.control.phases)
            provenance.update({"dataset": args.dataset, "seed": dataset.seed,
                               "dataset_config_hash": dataset.metadata.get("config_hash")})
        elif getattr(args, "analytic", False):
            state = build_state(config.require_state("reconstruct --analytic"))
            source = AnalyticCharFn(state, config.scale)
            model = DetectorModel()
            if config.detector.eta < 1:
                logger.warning("the analytic source is noiseless; ignoring eta=%g", config.detector.eta)
            phases = self._phases(config, state.n_modes)
        else:
            raise ValidationError("reconstruct needs --dataset PATH or --analytic")
        grid = self._output_grid(config, source.n_modes)
        quad = dataclasses.replace(config.quadrature, threads=threads)
        print(f"--- Reconstructing {grid.shape} elements from {source.name} ---")
        if config.phase_averaged or source.phase_averaged:
            matrix = phase_averaged_reconstruct(source, grid, phases, model, config.filter, quad, source.scale,
                                                n_average=config.control.n_average, order=config.average_order)
        else:
            matrix = reconstruct_grid(source, grid, phases, model, config.filter, quad, source.scale)
        out = getattr(args, "out", None) or config.output.matrix
        save_matrix(matrix, out, provenance)
        self._print_residuals(matrix.provenance)
        if model.eta < 1:
            print(f"   Amplification bound: e^{matrix.provenance['amplification_exponent']:.4g} "
                  f"= {matrix.provenance['amplification_bound']:.4g}")
        if getattr(args, "export_csv", None):
            export_matrix_csv(matrix, args.export_csv)
        print(f"Density matrix written to {out}")

    def _oracle(self, args):
        config = self._config(args)
        state = build_state(config.require_state("oracle"))
        grid = self._output_grid(config, state.n_modes)
        print(f"--- Oracle for {grid.shape} elements ---")
        matrix = oracle_grid(state, grid, self._phases(config, state.n_modes), config.scale)
        out = getattr(args, "out", None) or config.output.matrix
        save_matrix(matrix, out, self._provenance(config))
        self._print_residuals(matrix.provenance)
        if getattr(args, "export_csv", None):
            export_matrix_csv(matrix, args.export_csv)
        print(f"Density matrix written to {out}")

    def _compare(self, args):
        a = load_matrix(args.first)
        b = load_matrix(args.second)
        metrics = compare_matrices(a, b, fock_dim=getattr(args, "fock_dim", None))
        report = metrics.as_dict()
        print(f"--- Comparing {args.first} with {args.second} ---")
        for key, value in report.items():
            print(f"   {key}: {value}")
        if getattr(args, "out", None):
            save_report(report, args.out)
        tol = getattr(args, "tol", None)
        if tol is not None and not metrics.linf <= tol:
            raise ToleranceExceededError(f"L-infinity distance {metrics.linf:.3e} exceeds --tol {tol:.3e}")

    def _bench(self, args):
        config = self._config(args)
        state = build_state(config.require_state("bench"))
        scale = config.scale
        phases = self._phases(config, state.n_modes)
        settings = config.control
        grid = (QuadratureGrid.symmetric(settings.f_max, settings.n_bins) if settings.f_max is not None
                else default_quadrature_grid(state, scale, settings.n_bins))
        control = default_control_grid(state.n_modes, settings.n_alpha, settings.n_psi, phases, grid)
        manager = BenchmarkManager(state, scale, control)
        print(f"--- Benchmarking {manager.get_method_count()} methods ---")
        bench = config.bench
        table = manager.run_all_methods(bench.n_centers, bench.nodes, config.output_grid.f_max, bench.offset_max,
                                        bench.n_offsets, phases, resolve_threads(getattr(args, "threads", None)))
        out = getattr(args, "out", None) or config.output.bench
        save_table(table, out)
        print(table.to_string(index=False))
        print(f"Timing table written to {out}")
