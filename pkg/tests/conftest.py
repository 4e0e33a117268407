import numpy as np
import pytest

from helpers import make_panel
from src.schema_config import MINUTES_PER_DAY
from src.synth import SynthSpec, synth_panels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_panel(rng):
    values = 5e-4 + 1e-4 * rng.random((MINUTES_PER_DAY, 30))
    return make_panel(values)


@pytest.fixture(scope="session")
def coupled_panels():
    spec = SynthSpec(
        "multi_pair_coupled",
        {"loadings": [1.0, 0.8], "pairs": ["AAA", "BBB"], "phi": 0.5, "psi": 0.3, "scale": 5e-5, "level": 5e-4},
        seed=3,
        days=30,
    )
    return {p.pair: p for p in synth_panels(spec)}


@pytest.fixture(scope="session")
def long_memory_panels():
    # deviations depend on the value 20 minutes back and on nothing in between
    spec = SynthSpec(
        "multi_pair_coupled",
        {
            "loadings": [1.0, 0.8],
            "pairs": ["AAA", "BBB"],
            "phi": 0.85,
            "psi": 0.05,
            "intraday_lag": 20,
            "noise": 0.5,
            "scale": 5e-5,
            "level": 5e-4,
        },
        seed=11,
        days=60,
    )
    return {p.pair: p for p in synth_panels(spec)}
