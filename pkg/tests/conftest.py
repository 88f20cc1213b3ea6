"""Shared fixtures: the expensive Monte Carlo campaigns run once per session.

Every ensemble here is fully determined by its spec (species, grid, trial
count, seed), so the fixtures are plain caches, not state. Acceptance tests
and module tests share them to keep the suite inside a desk-scale runtime.
"""

import numpy as np
import pytest

from sympcool.constants import MASS_AL_U, MASS_CA_U
from sympcool.dynamics import IonSpec
from sympcool.ensemble import (
    EnsembleSpec,
    equal_mass_exchange_probe,
    run_ensemble,
)

AL = IonSpec(MASS_AL_U)
CA = IonSpec(MASS_CA_U)

GRID_POINTS = (10.0, 20.0, 40.0, 60.0)
TRIALS = 40
PROBE_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def grid_ensemble():
    """Unequal-mass Ca+ cooling Al+ over the four-point energy grid."""
    spec = EnsembleSpec(
        hot=AL, cold=CA, e0_grid=GRID_POINTS, trials_per_point=TRIALS, seed=0
    )
    return run_ensemble(spec)


@pytest.fixture(scope="session")
def unequal_30():
    """Single-point unequal-mass ensemble at E0/E_d = 30."""
    spec = EnsembleSpec(
        hot=AL, cold=CA, e0_grid=(30.0,), trials_per_point=TRIALS, seed=0
    )
    return run_ensemble(spec)


@pytest.fixture(scope="session")
def equal_30():
    """Equal-mass Al+ on Al+ ensemble at E0/E_d = 30."""
    spec = EnsembleSpec(
        hot=AL, cold=AL, e0_grid=(30.0,), trials_per_point=TRIALS, seed=0
    )
    return run_ensemble(spec)


@pytest.fixture(scope="session")
def ncold_ensembles(unequal_30):
    """Cooling at E0/E_d = 30 with one, two and three refrigerant ions."""
    out = {1: unequal_30}
    for n_cold in (2, 3):
        spec = EnsembleSpec(
            hot=AL,
            cold=CA,
            e0_grid=(30.0,),
            n_cold=n_cold,
            trials_per_point=TRIALS,
            seed=0,
        )
        out[n_cold] = run_ensemble(spec)
    return out


@pytest.fixture(scope="session")
def probe_results():
    """Undamped equal-mass exchange probes at E/E_d = 100, three seeds."""
    out = []
    for s in PROBE_SEEDS:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=999, spawn_key=(0, s)))
        out.append(equal_mass_exchange_probe(rng=rng))
    return tuple(out)
