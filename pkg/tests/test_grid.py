from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import identity_model
from crossdiff.grid import (
    Grid1D,
    divergence_form_flux,
    dissipation_seminorm,
    face_diffusion,
    integrate,
    l2_norm,
    read_field_csv,
    write_snapshots_csv,
)
from crossdiff.model import biofilm, maxwell_stefan


def random_field(n, n_x, seed):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(n + 1), size=n_x)[:, :n].T.copy()


def test_grid_geometry():
    g = Grid1D(5, 2.0)
    assert g.dx == 0.5
    np.testing.assert_allclose(g.x, [0, 0.5, 1, 1.5, 2])
    np.testing.assert_allclose(g.weights, [0.25, 0.5, 0.5, 0.5, 0.25])
    assert g.weights.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("args", [(1,), (4, 0.0), (4, -1.0)])
def test_grid_validation(args):
    with pytest.raises(ValueError):
        Grid1D(*args)


@pytest.mark.parametrize("model", [maxwell_stefan(), biofilm(2)], ids=["ms", "bf"])
def test_constant_field_has_zero_flux(model):
    g = Grid1D(17)
    u = np.array([[0.2], [0.3]]) * np.ones(17)
    np.testing.assert_array_equal(divergence_form_flux(model, u, g), np.zeros((2, 17)))


def test_manufactured_cosine_second_order():
    model = identity_model(2)
    errs = []
    for n_x in (17, 33, 65, 129):
        g = Grid1D(n_x, 2.0)
        k = math.pi / g.length
        u = np.vstack([0.25 + 0.1 * np.cos(k * g.x), 0.25 * np.ones(n_x)])
        out = divergence_form_flux(model, u, g)
        errs.append(np.max(np.abs(out[0] - (-k * k * 0.1 * np.cos(k * g.x)))))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios >= 3.5)


@pytest.mark.parametrize("model", [maxwell_stefan(), biofilm(3)], ids=["ms", "bf3"])
def test_discrete_mass_of_flux_vanishes(model):
    g = Grid1D(33)
    u = random_field(model.n, 33, 1)
    total = integrate(divergence_form_flux(model, u, g), g)
    assert np.max(np.abs(total)) <= 1e-12


@pytest.mark.parametrize("averaging", ["arithmetic", "midpoint"])
def test_summation_by_parts(averaging):
    model = maxwell_stefan()
    g = Grid1D(21, 1.5)
    u = random_field(2, 21, 3)
    phi = np.random.default_rng(4).standard_normal((2, 21))
    lhs = np.sum(integrate(divergence_form_flux(model, u, g, averaging) * phi, g))
    Abar = face_diffusion(model, u, averaging)
    rhs = -np.sum(np.einsum("ijf,jf->if", Abar, np.diff(u, axis=-1)) * np.diff(phi, axis=-1)) / g.dx
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_unknown_averaging():
    with pytest.raises(ValueError):
        face_diffusion(maxwell_stefan(), np.full((2, 4), 0.2), "harmonic")


def test_shape_mismatch():
    with pytest.raises(ValueError):
        divergence_form_flux(maxwell_stefan(), np.full((2, 5), 0.2), Grid1D(6))


def test_integrate_examples():
    g = Grid1D(11)
    assert integrate(np.ones(11), g) == pytest.approx(1.0, abs=1e-15)
    g101 = Grid1D(101)
    assert abs(integrate(g101.x**2, g101) - 1 / 3) <= 1e-4


@given(st.integers(2, 200), st.floats(-5, 5), st.floats(-5, 5))
def test_integrate_exact_for_affine(n_x, a, b):
    g = Grid1D(n_x)
    assert integrate(a + b * g.x, g) == pytest.approx(a + b / 2, abs=1e-12)


def test_integrate_rejects_wrong_length():
    with pytest.raises(ValueError):
        integrate(np.ones(5), Grid1D(6))


def test_l2_norm_of_constant():
    g = Grid1D(9, 4.0)
    assert l2_norm(np.full((2, 9), 0.3), g) == pytest.approx(0.3 * math.sqrt(2 * 4.0))


def test_dissipation_examples():
    g = Grid1D(9)
    assert dissipation_seminorm(np.full((2, 9), 0.3), g, 0.5) == 0.0
    u = random_field(2, 9, 5)
    h1 = np.sum(np.diff(u, axis=-1) ** 2) / g.dx
    assert dissipation_seminorm(u, g, 0.0) == pytest.approx(h1, rel=1e-14)
    ramp = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert dissipation_seminorm(ramp, Grid1D(2), 0.5) == pytest.approx(1.0)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0, 0.9))
def test_dissipation_nonnegative(seed, m):
    g = Grid1D(12)
    assert dissipation_seminorm(random_field(3, 12, seed), g, m) >= 0.0


def test_dissipation_rejects_bad_m():
    with pytest.raises(ValueError):
        dissipation_seminorm(np.full((2, 4), 0.2), Grid1D(4), 1.0)


def test_snapshot_csv_round_trip(tmp_path):
    g = Grid1D(7)
    u = random_field(2, 7, 6)
    f = tmp_path / "snap.csv"
    write_snapshots_csv(f, g, [0.0], u[None], "stamp")
    text = f.read_text().splitlines()
    assert text[0] == "# stamp" and text[1] == "t,x,u_1,u_2"
    np.testing.assert_array_equal(read_field_csv(f, g, 2), u)
    with pytest.raises(ValueError):
        read_field_csv(f, Grid1D(8), 2)
