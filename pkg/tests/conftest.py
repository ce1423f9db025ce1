import json

import numpy as np
import pytest

from quadrature_oracle import OutputGrid
from state_model import (Coherent, FieldScale, FockProduct, StateSpec, TwoModeSqueezedVacuum, Vacuum,
                         build_state)

# Vacuum element <0,0| rho |0,0> in the field-strength basis: (2 pi)^{-1} for two modes.
VACUUM_PEAK = 1 / (2 * np.pi)


@pytest.fixture
def scale():
    return FieldScale()


@pytest.fixture
def vacuum():
    return build_state(StateSpec(n_modes=2, truncation_dim=6, kind=Vacuum()))


@pytest.fixture
def coherent():
    return build_state(StateSpec(n_modes=2, truncation_dim=12, kind=Coherent((1.0, 0.0))))


@pytest.fixture
def fock10():
    return build_state(StateSpec(n_modes=2, truncation_dim=4, kind=FockProduct((1, 0))))


@pytest.fixture
def tmsv():
    return build_state(StateSpec(n_modes=2, truncation_dim=14, kind=TwoModeSqueezedVacuum((0, 1), 0.5)))


@pytest.fixture
def small_grid():
    """5 x 5 centres with non-negative offsets {0, 0.5, 1}."""
    return OutputGrid.uniform(2, 2.0, 5, offset_max=1.0, n_offsets=3, offset_min=0.0)


@pytest.fixture
def symmetric_grid():
    """5 x 5 centres with offsets {-1, 0, 1}, so every sign pattern occurs."""
    return OutputGrid.uniform(2, 2.0, 5, offset_max=1.0, n_offsets=3)


@pytest.fixture
def acceptance_grid():
    """9 x 9 centres on [-4, 4] and 5 x 5 offsets on [-1, 1]."""
    return OutputGrid.uniform(2, 4.0, 9, offset_max=1.0, n_offsets=5)


@pytest.fixture
def write_config(tmp_path):
    """Writes a run configuration document and returns its path."""

    def write(document, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return str(path)

    return write
