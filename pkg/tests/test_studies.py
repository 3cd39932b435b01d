from __future__ import annotations

import numpy as np
import pytest

from crossdiff.grid import Grid1D
from crossdiff.initial import PROFILES, barycenter, profile, smooth_bump, step
from crossdiff.model import maxwell_stefan, simplex_violation
from crossdiff.solver import SolverConfig
from crossdiff.studies import grid_study, ito_strat_study, time_step_study, wong_zakai_study

MS = maxwell_stefan(1, 2, 3)


@pytest.mark.parametrize("name", PROFILES)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_profiles_lie_in_simplex(name, n):
    u = profile(name, n, Grid1D(20))
    assert u.shape == (n, 20) and np.max(simplex_violation(u)) == 0.0


def test_profile_values():
    g = Grid1D(4)
    np.testing.assert_allclose(barycenter(2, g), 1 / 3)
    u = step(2, g)
    np.testing.assert_allclose(u[:, 0], [0.9, 0.05])
    np.testing.assert_allclose(u[:, -1], [0.05, 0.9])
    np.testing.assert_allclose(smooth_bump(2, g, 0.0), 1 / 3)
    with pytest.raises(ValueError):
        profile("ramp", 2, g)


def test_time_step_study_first_order():
    g = Grid1D(16)
    st = time_step_study(MS, g, step(2, g), [3, 4, 5, 6], SolverConfig(T=0.25, epsilon=0.0))
    assert st.strictly_decreasing and st.fit.slope >= 0.9


def test_grid_study_second_order():
    st = grid_study(MS, lambda g: smooth_bump(2, g), [3, 4, 5], SolverConfig(tau=2.0**-6, T=2.0**-3))
    assert st.strictly_decreasing and st.fit.slope >= 1.8


def test_ito_strat_study_decreases():
    g = Grid1D(8)
    st = ito_strat_study(MS, g, smooth_bump(2, g), [7, 8, 9], 4, 0, SolverConfig(tau=2.0**-7, noise_scale=0.1))
    assert st.strictly_decreasing
    assert st.to_dict()["parameter"] == "tau"


@pytest.mark.parametrize("levels", [[4], [4, 6], [6, 4, 8]])
def test_ladders_are_validated(levels):
    g = Grid1D(8)
    with pytest.raises(ValueError):
        time_step_study(MS, g, step(2, g), levels, SolverConfig())


def test_wong_zakai_reference_level_checked():
    g = Grid1D(8)
    with pytest.raises(ValueError):
        wong_zakai_study(MS, g, smooth_bump(2, g), [4, 6, 8], 2, 0, SolverConfig(tau=2.0**-4), reference_level=6)
