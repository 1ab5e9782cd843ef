import pytest

from fadingq.sim import SimConfig, run_continuous, run_discrete

SEED = 20240601
BLOCKS = 1_000_000


@pytest.fixture(scope="session")
def cont_runs():
    """Continuous-engine runs at the three reference loads, 1e6 blocks each."""
    return {th: run_continuous(SimConfig(theta=th, num_blocks=BLOCKS, seed=SEED)) for th in (0.2, 0.5, 0.8)}


@pytest.fixture(scope="session")
def disc_runs():
    return {th: run_discrete(SimConfig(theta=th, engine="discrete", num_blocks=BLOCKS, seed=SEED + 1))
            for th in (0.2, 0.5, 0.8)}
