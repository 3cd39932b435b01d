from __future__ import annotations

import json
import math

import numpy as np
import pytest

from _models import identity_model
from crossdiff.assumptions import (
    certify,
    check_coercivity,
    check_lipschitz_diffusion,
    check_noise_entropy_interaction,
    check_noise_lipschitz,
    check_regularization_decay,
    correction_matrix_or_generic,
    interaction_terms,
    sample_simplex,
)
from crossdiff.model import biofilm, correction_matrix_R, make_model, maxwell_stefan, negate_diffusion

MS = maxwell_stefan(1, 2, 3)


def test_samples_are_interior_and_reach_strata():
    u = sample_simplex(3, 4000, 0)
    full = np.vstack([u, 1 - u.sum(axis=0)])
    assert np.all(full > 0)
    assert np.min(full) <= 1e-6 * (1 + 1e-9)
    np.testing.assert_array_equal(u, sample_simplex(3, 4000, 0))


def test_lipschitz_of_constant_matrix_is_zero():
    assert check_lipschitz_diffusion(identity_model(2), 2000, 0).estimate == 0.0


@pytest.mark.parametrize("n", [2, 3])
def test_lipschitz_of_affine_biofilm(n):
    a = check_lipschitz_diffusion(biofilm(n), 5000, 1).estimate
    b = check_lipschitz_diffusion(biofilm(n), 10_000, 1).estimate
    assert abs(a - math.sqrt(n)) <= 0.05 * math.sqrt(n)
    assert abs(b - a) <= 0.05 * a


def test_lipschitz_maxwell_stefan_stable_across_seeds():
    vals = [check_lipschitz_diffusion(MS, 10_000, s).estimate for s in (0, 1, 2)]
    assert all(math.isfinite(v) for v in vals)
    assert (max(vals) - min(vals)) <= 0.1 * min(vals)


def test_biofilm_coercivity_is_one():
    res = check_coercivity(biofilm(2), 10_000, 0)
    assert abs(res.c_h_empirical - 1.0) <= 1e-9
    assert res.passed


def test_equal_coefficient_maxwell_stefan_coercivity():
    c = check_coercivity(maxwell_stefan(1, 1, 1), 10_000, 0).c_h_empirical
    assert 1.0 - 1e-9 <= c <= 1.01


def test_maxwell_stefan_coercivity_near_one_third():
    c = check_coercivity(MS, 10_000, 0).c_h_empirical
    assert MS.known_constants["c_h"] <= c <= 1.05 * MS.known_constants["c_h"]


def test_negated_model_is_rejected_with_witness():
    res = check_coercivity(negate_diffusion(biofilm(2)), 2000, 0)
    assert res.c_h_empirical < 0 and not res.passed
    u, z = res.worst_point
    assert u.shape == (2,) and z.shape == (2,)
    m = negate_diffusion(biofilm(2))
    q = z @ m.entropy_hess(u) @ m.diffusion(u) @ z
    assert q < 0


def test_interaction_term_one_at_quarter_point():
    t = interaction_terms(MS, np.array([[0.25], [0.25]]))
    assert t[0, 0] == pytest.approx(abs(0.125 * math.log(0.5)), abs=1e-15)
    assert t[0, 0] == pytest.approx(0.086643, abs=1e-6)


def test_interaction_terms_vanish_at_symmetric_point():
    t = interaction_terms(MS, np.array([[1 / 3], [1 / 3]]))
    assert t[0, 0] == pytest.approx(0.0, abs=1e-15) and t[1, 0] == pytest.approx(0.0, abs=1e-15)
    assert t[2, 0] > 0


@pytest.mark.parametrize("model", [MS, biofilm(2), biofilm(3)], ids=["ms", "bf2", "bf3"])
def test_interaction_bounded_on_shrinking_interiors(model):
    res = check_noise_entropy_interaction(model, 10_000, 0)
    assert res.passed
    assert all(s < 3 * model.n for _, s in res.level_sups)


def test_interaction_growth_detected():
    def blowup_noise(u):
        out = np.zeros((2, 2) + u.shape[1:])
        out[0, 0] = 1.0 / u[0]
        out[1, 1] = 1.0 / u[1]
        return out

    model = make_model(2, diffusion=biofilm(2).diffusion, noise=blowup_noise)
    assert not check_noise_entropy_interaction(model, 4000, 0).passed


def test_noise_lipschitz_bounded():
    res = check_noise_lipschitz(MS, 10_000, 0)
    assert res.passed and res.C_sigma_empirical <= 1.0 + 1e-12


@pytest.mark.parametrize("model", [MS, biofilm(2), biofilm(3)], ids=["ms", "bf2", "bf3"])
def test_regularization_decay(model):
    res = check_regularization_decay(model, (1e-1, 1e-2, 1e-3), 10_000, 0)
    vals = [s for _, s in res.table]
    assert res.passed and vals[0] > vals[1] > vals[2]
    assert res.method == "closed-form"


def test_biofilm_decay_is_linear_once_delta_is_below_the_interior_margin():
    vals = [s for _, s in check_regularization_decay(biofilm(2), (1e-3, 1e-4, 1e-5), 10_000, 0).table]
    assert 8 <= vals[0] / vals[1] <= 12 and 8 <= vals[1] / vals[2] <= 12


def test_equal_coefficients_give_zero_correction():
    res = check_regularization_decay(maxwell_stefan(1, 1, 1), (1e-1, 1e-2, 1e-3), 2000, 0)
    assert res.passed and all(s <= 1e-14 for _, s in res.table)


def test_generic_correction_matches_closed_form_quadratic_form():
    m = biofilm(2)
    generic = make_model(2, diffusion=m.diffusion, noise=m.noise)
    u = sample_simplex(2, 500, 3, strata=())
    z = np.random.default_rng(3).standard_normal((2, 500))
    a = np.einsum("iK,ijK,jK->K", z, correction_matrix_or_generic(generic, u, 0.1), z)
    b = np.einsum("iK,ijK,jK->K", z, correction_matrix_R(m, u, 0.1), z)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)
    assert check_regularization_decay(generic, (1e-1, 1e-2, 1e-3), 2000, 0).method == "generic"


@pytest.mark.parametrize("deltas", [(), (1e-2, 1e-1), (1e-1, 0.0)])
def test_decay_rejects_bad_delta_lists(deltas):
    with pytest.raises(ValueError):
        check_regularization_decay(MS, deltas, 100, 0)


@pytest.mark.parametrize("model", [MS, biofilm(2)], ids=["ms", "bf2"])
def test_certify_builtin_models(model, tmp_path):
    rep = certify(model, 10_000, 0)
    assert rep.passed, rep.pass_flags
    rep.write_json(tmp_path / "a.json")
    data = json.loads((tmp_path / "a.json").read_text())
    assert data["passed"] is True and data["sample_count"] == 10_000
    rep.write_decay_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "delta,sup_R_delta,sup_R_delta_all_samples"


def test_certification_is_deterministic():
    a, b = certify(MS, 3000, 5).to_dict(), certify(MS, 3000, 5).to_dict()
    assert json.dumps(a, default=str) == json.dumps(b, default=str)


def test_certify_rejects_negated_model():
    rep = certify(negate_diffusion(biofilm(2)), 2000, 0)
    assert not rep.passed and not rep.pass_flags["A5_coercivity"]
