from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from capa_kit.geometry import Aperture, build_quadrature

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

LAMBDA = 0.125  # 2.4 GHz


@pytest.fixture
def lam():
    return LAMBDA


@pytest.fixture
def planar():
    return Aperture.planar(0.2, 0.2, LAMBDA)


@pytest.fixture
def planar_grid(planar):
    return build_quadrature(planar)


@pytest.fixture
def users4():
    return [(1.0, 0.5, 2.0), (-1.2, 0.3, 2.5), (0.4, -1.0, 1.5), (-0.5, -0.6, 3.0)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
