"""Acceptance criteria at full size and at their stated tolerances.

Each test calls ``acceptance(k, detail)`` before asserting, so the terminal
summary shows one PASS/FAIL line per criterion with the measured numbers.
"""
import json

import numpy as np
import pytest

from gradplast.cli import main
from gradplast.curl import CurlOperator
from gradplast.diagnostics import convergence_study, energy_ledger, korn_probe, uniqueness_test
from gradplast.elasticity import ElasticSolver, ElasticTensor, HardeningMap
from gradplast.flow_rules import (GrowthCertificate, NonAssociative, NortonHoff, check_growth,
                                  check_monotonicity)
from gradplast.grid import BT, Grid, inner_product, lq_norm, sym
from gradplast.rothe import Model, RotheConfig, elastic_run, run
from gradplast.scenario import default_scenario


def _masked(rng, grid, mask):
    return mask.apply(rng.standard_normal((grid.n_nodes, 3, 3)))


def test_1_operator_identity(acceptance):
    rng = np.random.default_rng(0)
    g = Grid.box(6)
    op = CurlOperator(g)
    worst_id = worst_sym = 0.0
    for _ in range(50):
        f, h = _masked(rng, g, op.mask), _masked(rng, g, op.mask)
        cf, ch = op.apply(f), op.apply(h)
        a = inner_product(g, op.curl_curl(f), h)
        b = inner_product(g, cf, ch)
        c = inner_product(g, f, op.curl_curl(h))
        scale = np.sqrt(inner_product(g, cf, cf) * inner_product(g, ch, ch))
        worst_id = max(worst_id, abs(a - b) / scale)
        worst_sym = max(worst_sym, abs(a - c) / scale)
    g3 = Grid.box(3)
    A = CurlOperator(g3).curl_curl_matrix().toarray()
    w = np.sqrt(np.repeat(g3.weights, 9))
    S = (w[:, None] * A) / w[None, :]
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    acceptance(1, f"identity {worst_id:.1e}, symmetry {worst_sym:.1e}, "
                  f"lambda_min/lambda_max {ev[0] / ev[-1]:.1e}")
    assert worst_id <= 1e-12 and worst_sym <= 1e-12
    assert ev[0] >= -1e-12 * ev[-1]


def _rand_sym(rng, n):
    return sym(rng.standard_normal((n, 3, 3)))


def test_2_projector_laws(acceptance):
    rng = np.random.default_rng(0)
    g = Grid.box(8)
    tol = 1e-10
    es = ElasticSolver(g, ElasticTensor(g, 1.0, 1.0), tol_cg=tol)
    worst_p = worst_c = 0.0
    for _ in range(20):
        x, y = _rand_sym(rng, g.n_nodes), _rand_sym(rng, g.n_nodes)
        nx, ny = lq_norm(g, x), lq_norm(g, y)
        Px = es.project_P(x)
        worst_p = max(worst_p, lq_norm(g, es.project_P(Px) - Px) / nx)
        cross = inner_product(g, es.tensor.apply(es.project_Q(x)), es.project_P(y))
        worst_c = max(worst_c, abs(cross) / (nx * ny))
    acceptance(2, f"idempotence {worst_p:.1e} (<= {2 * tol:.0e}), "
                  f"orthogonality {worst_c:.1e} (<= {10 * tol:.0e})")
    assert worst_p <= 2 * tol and worst_c <= 10 * tol


def test_3_positivity_of_M_plus_L(acceptance):
    rng = np.random.default_rng(0)
    g = Grid.box(8)
    es = ElasticSolver(g, ElasticTensor(g, 1.0, 1.0), tol_cg=1e-12)
    L = HardeningMap.isotropic(0.1)
    worst_pos, worst_sym = np.inf, 0.0
    prev = None
    for _ in range(100):
        z = rng.standard_normal((g.n_nodes, 10))
        Mz = es.apply_M(L, z)
        nz2 = lq_norm(g, z) ** 2
        worst_pos = min(worst_pos, inner_product(g, Mz, z) / nz2)
        if prev is not None:
            z0, Mz0 = prev
            a, b = inner_product(g, Mz, z0), inner_product(g, z, Mz0)
            worst_sym = max(worst_sym, abs(a - b) / max(abs(a), abs(b)))
        prev = (z, Mz)
    acceptance(3, f"min (Mz,z)/|z|^2 {worst_pos:.2e}, symmetry defect {worst_sym:.1e}")
    assert worst_pos >= -1e-9 and worst_sym <= 1e-9


def test_4_monotonicity_and_growth(acceptance):
    rules = {"norton_hoff": NortonHoff(), "non_associative": NonAssociative()}
    slack = {}
    for name, rule in rules.items():
        rep = check_monotonicity(rule, 10_000, seed=0)
        slack[name] = rep.worst_slack
        assert rep.passed and rep.worst_slack >= -1e-12, rep.summary()
        assert not np.any(rule(np.zeros(10)))
    nh = rules["norton_hoff"]
    growth = check_growth(nh, GrowthCertificate.for_norton_hoff(nh))
    violations = sum(d["violations"] for d in growth.details.values())
    acceptance(4, f"worst relative monotone slack {min(slack.values()):.1e}; "
                  f"growth violations {violations} of {growth.n_samples} samples")
    assert growth.passed and violations == 0, growth.summary()


def test_5_potential_consistency(acceptance):
    rng = np.random.default_rng(0)
    rule = NortonHoff()
    h, worst, n = 1e-5, 0.0, 0
    while n < 100:
        S = rng.standard_normal(10)
        S[:9] *= rng.uniform(0.15, 3.0) / np.linalg.norm(S[:9])
        if rule.potential(S) == 0:
            continue
        fd = np.array([(rule.potential(S + h * e) - rule.potential(S - h * e)) / (2 * h)
                       for e in np.eye(10)])
        g = rule(S)
        worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
        n += 1
    acceptance(5, f"worst relative gradient error {worst:.1e} over {n} points")
    assert worst <= 1e-6


def test_6_energy_ledger(acceptance):
    sc = default_scenario(8, amplitude=2.0)
    cfg = RotheConfig(level=6)
    model = Model(sc, cfg.eps_reg, cfg.inner_tol)
    traj = run(cfg, sc, model=model)
    led = energy_ledger(model, traj)
    keys = ["eq54_slack", "eq56_slack", "eq51_slack", "eq3_slack", "eq69_slack", "eq78_slack"]
    worst = min(r[k] for r in led.rows for k in keys)
    cum = [r["eq9_cum_dissipation"] for r in led.rows]
    pts = min(r["eq9_min_pointwise"] for r in led.rows)
    acceptance(6, f"{traj.n_steps} steps, min slack {worst:.2e} (tol {led.tol:.1e}), "
                  f"min pointwise dissipation {pts:.1e}, |z(T)| {model.norm(traj.z[-1]):.3e}")
    assert traj.n_steps == 64 and np.abs(traj.z[-1]).max() > 0
    assert worst >= -led.tol
    assert all(b >= a for a, b in zip(cum, cum[1:]))
    assert pts >= 0.0


def test_7_uniqueness(acceptance):
    sc = default_scenario(8, amplitude=2.0)
    rep = uniqueness_test(RotheConfig(level=5, eps_reg=1e-6), sc)
    acceptance(7, f"relative differences: stress {rep.max_stress:.1e}, "
                  f"hardening {rep.max_hardening:.1e}, curl {rep.max_curl:.1e}")
    assert len(rep.per_step) == 32
    assert max(rep.max_stress, rep.max_hardening, rep.max_curl) <= 1e-8


def test_8_rothe_convergence(acceptance):
    sc = default_scenario(8, amplitude=2.0)
    tab = convergence_study(RotheConfig(level=5), sc, levels=3,
                            eps_values=(1e-2, 1e-4, 1e-6))
    acceptance(8, f"differences {', '.join(f'{d:.3e}' for d in tab.differences)}, "
                  f"final ratio {tab.ratios[-1]:.3f}; eps sweep "
                  f"{', '.join(f'{d:.2e}' for d in tab.eps_differences)}")
    assert tab.levels == [5, 6, 7] and len(tab.differences) == 2
    assert tab.non_increasing and tab.ratios[-1] <= 0.9
    assert tab.eps_monotone and tab.eps_differences[-1] < tab.eps_differences[0]


def test_9_korn_probe(acceptance):
    reps = [korn_probe(Grid.box(n), samples=500, ascent=50, seed=0) for n in (8, 16)]
    maxima = [r.max_ratio for r in reps]
    spread = max(maxima) / min(maxima)
    acceptance(9, f"maxima {maxima[0]:.4f} (8^3), {maxima[1]:.4f} (16^3), spread {spread:.3f}, "
                  f"degenerate {sum(r.degenerate for r in reps)}")
    assert all(np.isfinite(maxima)) and spread <= 2.0
    assert all(r.degenerate == 0 for r in reps)


def test_10_elastic_consistency(acceptance):
    sc = default_scenario(8, amplitude=0.2)
    cfg = RotheConfig(level=5)
    traj, ref = run(cfg, sc), elastic_run(cfg, sc)
    zmax = max(np.abs(z).max() for z in traj.z)
    ds = max(np.abs(a - b).max() for a, b in zip(traj.sigma, ref.sigma))
    du = max(np.abs(a - b).max() for a, b in zip(traj.u, ref.u))
    acceptance(10, f"max|z| {zmax:.1e}, max stress difference {ds:.1e}, "
                   f"max displacement difference {du:.1e}")
    assert zmax == 0.0 and ds <= 1e-10 and du <= 1e-10


def test_11_determinism(acceptance, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[load]\namplitude = 2\n[run]\nseed = 5\n")
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in files]
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    acceptance(11, f"{sum(same)}/{len(files)} CSV files byte-identical "
                   f"({summary['steps']} steps, plastic: {not summary['z_identically_zero']})")
    assert files and all(same)
