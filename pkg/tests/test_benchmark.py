import pandas as pd

from benchmark_manager import BENCH_COLUMNS, BenchmarkManager
from measurement import default_control_grid
from quadrature_oracle import default_quadrature_grid
from run_tomography import main


def test_methods_are_discovered(vacuum, scale):
    control = default_control_grid(2, 8, 8, (0.0, 0.0), default_quadrature_grid(vacuum))
    manager = BenchmarkManager(vacuum, scale, control)
    assert manager.get_method_count() == 2
    assert sorted(m.name for m in manager.methods) == ["joint", "sum_field"]


def test_every_method_reaches_the_oracle(vacuum, scale):
    control = default_control_grid(2, 8, 8, (0.0, 0.0), default_quadrature_grid(vacuum))
    table = BenchmarkManager(vacuum, scale, control).run_all_methods([5], [64], 2.0, 1.0, 3, (0.0, 0.0))
    assert list(table.columns) == BENCH_COLUMNS
    assert len(table) == 2
    assert (table["error"] == "").all()
    assert (table["linf_vs_oracle"] <= 1e-3).all()
    assert set(table["transform_stages"]) == {3, 4}
    assert (table["wall_time_s"] >= table["outer_time_s"]).all()


def test_bench_command_writes_table(write_config, tmp_path):
    config = write_config({"state": {"n_modes": 2, "truncation_dim": 6, "kind": "vacuum"},
                           "control": {"n_alpha": 4, "n_psi": 4},
                           "bench": {"n_centers": [3], "nodes": [32], "n_offsets": 2, "offset_max": 0.5}})
    out = str(tmp_path / "bench.csv")
    assert main(["bench", "--config", config, "--out", out]) == 0
    table = pd.read_csv(out, keep_default_na=False)
    assert len(table) == 2
    assert set(table["method"]) == {"joint", "sum_field"}
