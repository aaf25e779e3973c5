import os
import math

import pytest

from hypothesis import HealthCheck, settings
from models.walks.jump_model import JumpDistribution
from models.geometry.dual_geometry import DualGeometry

settings.register_profile("ci", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", deadline=None, max_examples=20)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))

# nearest-neighbour walk drifting up and to the right
M1_ENTRIES = {(1, 0): 0.3, (-1, 0): 0.2, (0, 1): 0.3, (0, -1): 0.2}
# same horizontal part with a two-step drop
M2_ENTRIES = {(1, 0): 0.3, (-1, 0): 0.2, (0, 1): 0.3, (0, -1): 0.15, (0, -2): 0.05}
# strong drift, used where truncated sums must converge quickly
STRONG_ENTRIES = {(1, 0): 0.4, (-1, 0): 0.1, (0, 1): 0.4, (0, -1): 0.1}

M1_TEXT = """# test walk
dim 2
jump 1 0 0.3
jump -1 0 0.2
jump 0 1 0.3   # up
jump 0 -1 0.2
"""

# tangent point of M1 in the horizontal direction q = (1, 0)
M1_BETA_STAR = 0.5 * math.log(2.0 / 3.0)
_B = 1.0 - 2.0 * math.sqrt(0.06)
M1_ALPHA_STAR = math.log((_B + math.sqrt(_B * _B - 4.0 * 0.3 * 0.2)) / (2.0 * 0.3))
M1_LAMBDA_PLUS_0 = math.log(0.5 + 2.0 * math.sqrt(0.06))
M1_MIN_LOG_PHI = math.log(4.0 * math.sqrt(0.06))


@pytest.fixture
def m1() -> JumpDistribution:
    return JumpDistribution(dim=2, entries=M1_ENTRIES)


@pytest.fixture
def m2() -> JumpDistribution:
    return JumpDistribution(dim=2, entries=M2_ENTRIES)


@pytest.fixture
def strong() -> JumpDistribution:
    return JumpDistribution(dim=2, entries=STRONG_ENTRIES)


@pytest.fixture
def m1_geometry(m1) -> DualGeometry:
    return DualGeometry(m1)


@pytest.fixture
def m2_geometry(m2) -> DualGeometry:
    return DualGeometry(m2)


@pytest.fixture
def m1_file(tmp_path):
    path = tmp_path / "m1.model"
    path.write_text(M1_TEXT, encoding="utf-8")
    return path
