import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ifsthermo import (  # noqa: E402
    AffinePotential,
    PotentialFamily,
    RuelleEngine,
    beta_critical,
    preset,
    rpf,
)

E = math.e


@pytest.fixture(scope="session")
def tent_e():
    return RuelleEngine(preset("tent"), PotentialFamily.constant(E, E))


@pytest.fixture(scope="session")
def tent_small():
    return RuelleEngine(preset("tent"), PotentialFamily.constant(E, E), depth=8)


@pytest.fixture(scope="session")
def cantor_24():
    return RuelleEngine(preset("cantor3"), PotentialFamily.constant(2.0, 4.0))


@pytest.fixture(scope="session")
def sierpinski_e():
    return RuelleEngine(preset("sierpinski"), PotentialFamily.constant(E, E, E))


@pytest.fixture(scope="session")
def tent_affine():
    H = PotentialFamily([AffinePotential([1.0], 2.0), AffinePotential([2.0], 1.5)])
    return RuelleEngine(preset("tent"), H)


@pytest.fixture(scope="session")
def tent_critical(tent_e):
    crit = beta_critical(tent_e)
    return crit, rpf(tent_e, crit.beta_c)
