"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import math
import time

import numpy as np
from click.testing import CliRunner

from _models import identity_model
from crossdiff.assumptions import certify, check_coercivity, sample_simplex
from crossdiff.cli import cli
from crossdiff.diagnostics import coercivity_to_C1, constants_agree, entropy_inequality_check
from crossdiff.grid import Grid1D, divergence_form_flux
from crossdiff.initial import barycenter, smooth_bump, step
from crossdiff.model import (
    biofilm,
    entropy_grad,
    fd_jacobian,
    inv_entropy_grad,
    ito_correction,
    ito_correction_generic,
    maxwell_stefan,
    quadratic_form,
)
from crossdiff.solver import SolverConfig, run_monte_carlo, run_trajectory, simulate_ensemble
from crossdiff.studies import ito_strat_study, wong_zakai_study

RESULTS: list[str] = []
MS = maxwell_stefan(1, 2, 3)
BF3 = biofilm(3)


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} | {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_simplex_preservation():
    g = Grid1D(64)
    cfg = SolverConfig(scheme="entropy_implicit", tau=2.0**-8, T=1.0, eta=2.0**-8)
    start = time.perf_counter()
    worst, failed, halvings = 0.0, 0, 0
    for model in (MS, BF3):
        trajs = simulate_ensemble(model, g, cfg, step(model.n, g), 100, 1, chunk_size=50)
        failed += sum(t.failed for t in trajs)
        worst = max(worst, max(float(np.max(t.violation)) for t in trajs))
        halvings = max(halvings, max(int(t.halvings.max()) for t in trajs))
    elapsed = time.perf_counter() - start
    ok = failed == 0 and worst == 0.0 and elapsed < 120.0
    report(1, "simplex preservation", ok,
           f"max violation {worst!r} over 2x100 paths, failed {failed}, max halvings {halvings}, "
           f"runtime {elapsed:.1f}s (< 120s)")


def test_criterion_2_deterministic_entropy_dissipation():
    g = Grid1D(64)
    cfg = SolverConfig(tau=2.0**-8, T=1.0, epsilon=0.0, noise_scale=0.0)
    rise, drift = -math.inf, 0.0
    for model in (MS, BF3):
        tr = run_trajectory(model, g, cfg, step(model.n, g))
        rise = max(rise, float(np.max(np.diff(tr.entropy))))
        drift = max(drift, float(np.max(np.abs(tr.mass - tr.mass[:, :1]))))
    ok = rise <= 1e-8 and drift <= 1e-10
    report(2, "deterministic entropy dissipation", ok,
           f"max per-step entropy increase {rise:.3e} (<= 1e-8), max mass drift {drift:.3e} (<= 1e-10)")


def test_criterion_3_entropy_inequality():
    c_h = check_coercivity(MS, 10_000, 0).c_h_empirical
    C1 = coercivity_to_C1(c_h, MS.m)
    cfg = SolverConfig(tau=2.0**-8, T=1.0)
    fitted = {}
    for n_x in (32, 64):
        g = Grid1D(n_x)
        for seed in (1, 2):
            rep = run_monte_carlo(MS, g, cfg, barycenter(2, g), 100, seed, C1=C1, chunk_size=50)
            C, finite = entropy_inequality_check(rep, rep.h0)
            fitted[(n_x, seed)] = C if finite else math.inf
    vals = list(fitted.values())
    ok = constants_agree(vals, rel=0.2)
    detail = ", ".join(f"N_x={k[0]} seed={k[1]}: {v:.4f}" for k, v in fitted.items())
    report(3, "entropy inequality", ok, f"C1={C1:.4f}; C_hat {detail}; all within 20% of mean {np.mean(vals):.4f}")


def test_criterion_4_wong_zakai_convergence():
    g = Grid1D(8)
    base = SolverConfig(tau=2.0**-4, T=1.0)
    start = time.perf_counter()
    study = wong_zakai_study(MS, g, smooth_bump(2, g), [4, 6, 8], 50, 1, base, reference_level=12)
    elapsed = time.perf_counter() - start
    ok = study.strictly_decreasing and elapsed < 300.0
    errs = ", ".join(f"{e:.4e}" for e in study.errors)
    report(4, "Wong-Zakai convergence", ok,
           f"errors [{errs}] at eta=2^-4,2^-6,2^-8, fitted order {study.fit.slope:.3f}, "
           f"runtime {elapsed:.1f}s (< 300s)")


def test_criterion_5_ito_stratonovich_consistency():
    g = Grid1D(8)
    base = SolverConfig(tau=2.0**-7, T=1.0, noise_scale=0.1)
    study = ito_strat_study(MS, g, smooth_bump(2, g), [7, 8, 9], 20, 1, base)
    errs = ", ".join(f"{e:.4e}" for e in study.errors)
    report(5, "Ito/Stratonovich consistency", study.strictly_decreasing,
           f"EM-Ito vs Heun L2 differences [{errs}] at tau=2^-7,2^-8,2^-9, order {study.fit.slope:.3f}")


def test_criterion_6_assumption_certification():
    reports = {m.name + str(m.n): certify(m, 10_000, 0) for m in (MS, biofilm(2), BF3)}
    all_pass = all(r.passed for r in reports.values())
    bf = reports["biofilm-n2"]
    c_ok = abs(bf.c_h_empirical - 1.0) <= 1e-6
    u = sample_simplex(2, 10_000, 3, strata=())
    z = np.random.default_rng(3).standard_normal((2, 10_000))
    exact = np.sum(z * z / u, axis=0)
    ident = float(np.max(np.abs(quadratic_form(biofilm(2), u, z) - exact) / exact))
    ident_ok = ident <= 1e-12
    decay_ok = all(all(b[1] < a[1] for a, b in zip(r.r_delta_decay, r.r_delta_decay[1:]))
                   for r in reports.values())
    ok = all_pass and c_ok and ident_ok and decay_ok
    tables = "; ".join(f"{k}: " + "/".join(f"{s:.3g}" for _, s in r.r_delta_decay) for k, r in reports.items())
    report(6, "assumption certification", ok,
           f"all flags pass {all_pass}; biofilm c_h {bf.c_h_empirical:.12f}; "
           f"biofilm identity max relative error {ident:.2e} (<= 1e-12); R_delta sups {tables}")


def test_criterion_7_oracle_equivalences():
    details, ok = [], True
    pts = {m.name: sample_simplex(m.n, 100, 1, strata=()) for m in (MS, BF3)}
    ito = max(float(np.max(np.abs(ito_correction(m, pts[m.name]) - ito_correction_generic(m, pts[m.name]))))
              for m in (MS, BF3))
    ok &= ito <= 1e-12
    details.append(f"Ito closed form vs triple sum {ito:.2e}")

    fd_err = 0.0
    for m in (MS, BF3):
        u = 0.02 + (1 - 0.02 * (m.n + 1)) * np.vstack([pts[m.name], 1 - pts[m.name].sum(axis=0)])[:m.n]
        grad = m.entropy_grad(u)
        h = 1e-6
        fd_grad = np.stack([(m.entropy(u + h * e[:, None]) - m.entropy(u - h * e[:, None])) / (2 * h)
                            for e in np.eye(m.n)])
        for exact, approx in ((grad, fd_grad),
                              (m.entropy_hess(u), fd_jacobian(m.entropy_grad)(u)),
                              (m.noise_jacobian(u), fd_jacobian(m.noise)(u))):
            flat_e = exact.reshape(-1, u.shape[1])
            flat_a = approx.reshape(-1, u.shape[1])
            rel = np.linalg.norm(flat_e - flat_a, axis=0) / np.maximum(np.linalg.norm(flat_e, axis=0), 1e-300)
            fd_err = max(fd_err, float(np.max(rel)))
    ok &= fd_err <= 1e-5
    details.append(f"finite-difference relative error {fd_err:.2e}")

    rt = 0.0
    for m in (MS, BF3):
        u = sample_simplex(m.n, 10_000, 2)
        full = np.vstack([u, 1 - u.sum(axis=0)])
        u = u[:, np.min(full, axis=0) >= 1e-6]
        rt = max(rt, float(np.max(np.abs(inv_entropy_grad(m, entropy_grad(m, u)) - u) / u)))
    ok &= rt <= 1e-10
    details.append(f"inverse round trip relative error {rt:.2e}")

    model = identity_model(2)
    errs = []
    for n_x in (17, 33, 65, 129):
        g = Grid1D(n_x)
        k = math.pi / g.length
        u = np.vstack([0.25 + 0.1 * np.cos(k * g.x), np.full(n_x, 0.25)])
        errs.append(float(np.max(np.abs(divergence_form_flux(model, u, g)[0] + 0.1 * k * k * np.cos(k * g.x)))))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok &= min(ratios) >= 3.5
    details.append("divergence error ratios " + "/".join(f"{r:.3f}" for r in ratios))
    report(7, "oracle equivalences", bool(ok), "; ".join(details))


def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        '[model]\nname = "maxwell-stefan-3"\n'
        "[grid]\nn_x = 32\n"
        "[solver]\ntau = 0.015625\nT = 0.5\n"
        "[monte_carlo]\npath_count = 8\nmaster_seed = 123\nchunk_size = 3\n"
        '[initial]\nprofile = "step"\n'
        "[output]\ntrajectory_files = 8\n"
        "[assumptions]\nsample_count = 2000\n", encoding="utf-8")
    runner = CliRunner()
    for d in ("a", "b"):
        for cmd in ("simulate", "check-assumptions"):
            res = runner.invoke(cli, [cmd, "--config", str(cfg), "--out", str(tmp_path / d), "--quiet"])
            assert res.exit_code == 0, res.output
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = names == sorted(p.name for p in (tmp_path / "b").iterdir()) and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    report(8, "determinism", same, f"{len(names)} CSV/JSON artifacts compared byte for byte")
