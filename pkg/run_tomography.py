import argparse
import logging
import sys

from measurement import DATASET_MODES
from tomography_orchestrator import TomographyOrchestrator


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_tomography",
        description="Sum-field homodyne tomography: simulate datasets, reconstruct field-strength "
                    "density matrices, compare them with the exact oracle and benchmark methods.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sub.add_argument("--out", metavar="PATH", help="output path (overrides config.output)")
        sub.add_argument("--threads", type=int, help="worker threads (overrides HOMODYNE_THREADS)")
        sub.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")

    simulate = commands.add_parser("simulate", help="generate a sum-field dataset")
    common(simulate)
    simulate.add_argument("--eta", type=float, help="detector efficiency in (0, 1]")
    simulate.add_argument("--samples", type=int, help="samples per setting")
    simulate.add_argument("--mode", choices=DATASET_MODES)
    simulate.add_argument("--export-csv", metavar="PATH", help="also write tidy p_s slices")

    reconstruct = commands.add_parser("reconstruct", help="reconstruct a density matrix")
    common(reconstruct)
    origin = reconstruct.add_mutually_exclusive_group(required=True)
    origin.add_argument("--dataset", metavar="PATH", help="dataset directory written by simulate")
    origin.add_argument("--analytic", action="store_true", help="use the exact Psi of config.state")
    reconstruct.add_argument("--eta", type=float, help="efficiency to compensate (default: the dataset's)")
    reconstruct.add_argument("--filter-ycut", type=float, help="radial cutoff of the outer integral")
    reconstruct.add_argument("--phase-averaged", action="store_true", help="average over common phase shifts")
    reconstruct.add_argument("--export-csv", metavar="PATH", help="also write element heat-map data")

    oracle = commands.add_parser("oracle", help="exact density matrix of config.state")
    common(oracle)
    oracle.add_argument("--export-csv", metavar="PATH", help="also write element heat-map data")

    compare = commands.add_parser("compare", help="compare two density-matrix files")
    compare.add_argument("first", metavar="A")
    compare.add_argument("second", metavar="B")
    compare.add_argument("--tol", type=float, help="exit 3 when the L-infinity distance exceeds this")
    compare.add_argument("--out", metavar="PATH", help="write the metrics report as JSON")
    compare.add_argument("--fock-dim", type=int, help="also compare photon-number populations")

    bench = commands.add_parser("bench", help="time the reconstruction methods")
    common(bench)
    return parser


def main(argv=None) -> int:
    """
    Command-line entry point for the tomography tool.

    Exit codes: 0 success, 1 runtime failure, 2 input failure, 3 comparison above tolerance.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return TomographyOrchestrator().handle_command(args)


if __name__ == "__main__":
    sys.exit(main())
