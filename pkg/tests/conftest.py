"""Shared fixtures for the kmr test suite."""

import numpy as np
import pytest

from kmr.instance import Clustering, build_balls, generate, layout_centers
from kmr.measures import MeasureSpec, PointMassLaw, uniform_ball


@pytest.fixture
def collinear_points():
    return np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])


@pytest.fixture
def collinear_clustering():
    return Clustering((1, 4), np.array([0, 0, 0, 1, 1, 1]))


@pytest.fixture
def pair_instance():
    """Two well separated uniform discs, 40 points each."""
    balls = build_balls(layout_centers("pair", 2, 3.5), uniform_ball(2))
    return generate(balls, 40, seed=1)


@pytest.fixture
def small_pair_instance():
    """Two uniform discs at distance 4 with 6 points each (LP sized)."""
    balls = build_balls(layout_centers("pair", 2, 4.0), uniform_ball(2))
    return generate(balls, 6, seed=3)


@pytest.fixture
def point_mass_instance():
    measure = MeasureSpec(m=2, radius=1.0, law=PointMassLaw())
    balls = build_balls(layout_centers("pair", 2, 3.0), measure)
    return generate(balls, 5, seed=0)
