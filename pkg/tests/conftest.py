"""Shared testbed fixtures.

The standard efficacy testbed is a 4-atom harmonic chain (stiff springs,
weak Lennard-Jones between non-bonded pairs) whose denoiser targets a
stretched copy of the chain, so unguided samples carry substantial forces
and guidance has a well-defined direction to improve them.
"""

import numpy as np
import pytest

from ogd.denoiser import GaussianDenoiser
from ogd.geomstate import project_zero_cog
from ogd.sampler import RunConfig
from ogd.schedule import build_schedule
from ogd.toyoracle import LennardJones, harmonic_chain

TESTBED_ATOMS = 4
TESTBED_K = 8.0
TESTBED_R0 = 1.0
TESTBED_STRETCH = 1.4
TESTBED_DEN_SCALE = 0.3
TESTBED_LJ = LennardJones(epsilon=0.1, sigma=0.9, cutoff=4.0)


def chain_positions(n, spacing):
    pos = np.zeros((n, 3))
    pos[:, 0] = (np.arange(n) - (n - 1) / 2.0) * spacing
    return pos


@pytest.fixture(scope="session")
def testbed_potential():
    return harmonic_chain(TESTBED_ATOMS, k=TESTBED_K, r0=TESTBED_R0, lj=TESTBED_LJ)


@pytest.fixture(scope="session")
def testbed_denoiser():
    mean = chain_positions(TESTBED_ATOMS, TESTBED_STRETCH)
    return GaussianDenoiser(mean=mean, scale=TESTBED_DEN_SCALE)


@pytest.fixture(scope="session")
def short_schedule():
    return build_schedule("linear", 200)


@pytest.fixture(scope="session")
def full_schedule():
    return build_schedule("linear", 1000)


def make_run(schedule, denoiser, oracle=None, **kw):
    defaults = dict(
        n_samples=10,
        n_atoms=TESTBED_ATOMS,
        seed=1234,
        schedule=schedule,
        denoiser=denoiser,
        oracle=oracle,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


def random_state(rng, n, min_dist=0.4, spread=1.0):
    """Centered random positions with no near-collisions."""
    while True:
        pos = project_zero_cog(spread * rng.standard_normal((n, 3)))
        d = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
        if n == 1 or d[np.triu_indices(n, 1)].min() > min_dist:
            return pos
