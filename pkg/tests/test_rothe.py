import numpy as np
import pytest

from gradplast.elasticity import ConvergenceError
from gradplast.flow_rules import NonAssociative, NortonHoff
from gradplast.grid import B, BT, Grid, lq_norm, tr
from gradplast.rothe import (IncompatibleInitialState, Model, RotheConfig, assemble_sigma_lin,
                             elastic_run, incremental_solve, interpolant_norms, interpolants, run)
from gradplast.scenario import default_scenario


@pytest.fixture(scope="module")
def plastic():
    sc = default_scenario(6, amplitude=2.0)
    cfg = RotheConfig(level=4)
    model = Model(sc, cfg.eps_reg, cfg.inner_tol)
    return sc, cfg, model, run(cfg, sc, model=model)


class TestConfig:
    def test_step_size(self):
        cfg = RotheConfig(t_end=2.0, level=3)
        assert cfg.h == 0.25 and cfg.n_steps == 8
        assert cfg.refined().h == 0.125

    @pytest.mark.parametrize("bad", [dict(t_end=0.0), dict(level=-1), dict(level=1.5),
                                     dict(eps_reg=-1.0), dict(newton_tol=1.0),
                                     dict(damping=0.0), dict(min_damping=2.0)])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            RotheConfig(**bad)

    def test_inner_tolerance_follows_outer(self):
        assert RotheConfig(newton_tol=1e-9).inner_tol == pytest.approx(1e-10)
        assert RotheConfig(tol_cg=1e-7).inner_tol == 1e-7


class _ScalarModel:
    """Single-node stand-in: K = k I, identity projection."""

    def __init__(self, k):
        self.k = k

    def apply_K(self, z):
        return self.k * z

    def project(self, S):
        return S

    def norm(self, z):
        return float(np.linalg.norm(z))


class TestIncrement:
    def test_scalar_closed_form(self):
        rule = NortonHoff(sigma_y=0.0, r=1.0, eta=1.0)
        cfg = RotheConfig(level=2, eps_reg=0.0)
        ell = np.zeros((1, 10))
        ell[0, :9] = np.array([[1, 2, 0], [0, -3, 1], [0, 0, 2]], float).ravel()
        z_prev = np.zeros((1, 10))
        z_prev[0, 1] = 0.5
        z, _, info = incremental_solve(_ScalarModel(0.0), cfg, rule, z_prev, ell)
        assert np.allclose(z, z_prev + cfg.h * ell, atol=1e-13)
        # K = k I: (1 + h k) z = z_prev + h l for deviatoric data
        z, _, _ = incremental_solve(_ScalarModel(3.0), cfg, rule, z_prev, ell)
        assert np.allclose(z, (z_prev + cfg.h * ell) / (1 + cfg.h * 3.0), atol=1e-12)

    def test_sub_yield_step_is_exactly_elastic(self, plastic):
        sc, cfg, model, _ = plastic
        load = 1e-3 * BT(model.unit_response()[1])
        z_prev = sc.grid.zeros_state()
        z, _, info = incremental_solve(model, cfg, sc.rule, z_prev, load)
        assert not z.any() and info.iterations == 0

    def test_unique_from_random_guess(self, plastic, rng):
        sc, cfg, model, traj = plastic
        z_prev, load = traj.z[8], traj.load[9]
        a, _, _ = incremental_solve(model, cfg, sc.rule, z_prev, load)
        guess = z_prev + 0.1 * model.project(rng.standard_normal(z_prev.shape))
        b, _, _ = incremental_solve(model, cfg, sc.rule, z_prev, load, z0=guess, anderson=0)
        assert lq_norm(sc.grid, a - b) <= 1e-8 * lq_norm(sc.grid, a)

    def test_residual_meets_target_and_decreases(self, plastic):
        _, _, _, traj = plastic
        for info in traj.info[1:]:
            assert info.residual <= info.target
            h = info.history
            assert all(b < a for a, b in zip(h, h[1:]))

    def test_nonconvergence_raises(self, plastic):
        sc, cfg, model, traj = plastic
        tight = RotheConfig(level=4, newton_max=1, anderson=0)
        with pytest.raises(ConvergenceError):
            incremental_solve(model, tight, sc.rule, traj.z[8], traj.load[9])


class TestSigmaLin:
    def test_zero_state_returns_load(self, plastic, rng):
        sc, _, model, _ = plastic
        load = rng.standard_normal((sc.grid.n_nodes, 10))
        assert np.array_equal(assemble_sigma_lin(model, sc.grid.zeros_state(), load), load)

    def test_affine(self, plastic, rng):
        sc, _, model, _ = plastic
        n = sc.grid.n_nodes
        load = rng.standard_normal((n, 10))
        z1 = model.project(rng.standard_normal((n, 10)))
        z2 = model.project(rng.standard_normal((n, 10)))
        s0 = assemble_sigma_lin(model, 0 * z1, load)
        d1 = assemble_sigma_lin(model, z1, load) - s0
        d2 = assemble_sigma_lin(model, z2, load) - s0
        d12 = assemble_sigma_lin(model, z1 + z2, load) - s0
        assert np.abs(d12 - d1 - d2).max() <= 1e-8 * np.abs(d12).max()

    def test_compatible_plastic_strain_is_stress_free(self):
        sc = default_scenario(6, c1=0.0, k_iso=0.0)
        model = Model(sc, eps_reg=0.0, tol_cg=1e-12)
        x = sc.grid.coords
        bubble = np.prod(np.sin(np.pi * x), axis=1)
        u0 = np.stack([bubble, -bubble, 0 * bubble], axis=1)
        z = BT(model.es.strain(u0))
        load = np.ones((sc.grid.n_nodes, 10))
        assert np.abs(assemble_sigma_lin(model, z, load) - load).max() < 1e-9


class TestRun:
    def test_zero_load(self):
        sc = default_scenario(6, preset="zero")
        traj = run(RotheConfig(level=2), sc)
        assert traj.n_steps == 4
        assert not any(z.any() for z in traj.z) and not any(s.any() for s in traj.sigma)

    def test_sub_yield_matches_elastic_run(self):
        sc = default_scenario(6, amplitude=0.2)
        cfg = RotheConfig(level=3)
        traj = run(cfg, sc)
        ref = elastic_run(cfg, sc)
        assert not any(z.any() for z in traj.z)
        for a, b in zip(traj.sigma, ref.sigma):
            assert np.abs(a - b).max() <= 1e-10 * max(1.0, np.abs(b).max())
        for a, b in zip(traj.u, ref.u):
            assert np.abs(a - b).max() <= 1e-10

    def test_plastic_state_is_admissible(self, plastic):
        sc, _, model, traj = plastic
        assert np.abs(traj.z[-1]).max() > 0
        for z in traj.z:
            assert np.abs(tr(B(z))).max() <= 1e-12
            assert model.mask.violation(B(z)) == 0.0
        assert np.all(np.diff(traj.times) > 0) and traj.times[0] == 0.0

    def test_elastic_unloading_freezes_state(self):
        sc = default_scenario(6, amplitude=2.0, preset="load_unload")
        traj = run(RotheConfig(level=4), sc)
        frozen = [n for n in range(1, 17) if traj.info[n].iterations == 0]
        # elastic at first loading and right after the peak; reverse yield may follow
        assert frozen[:2] == [1, 2] and any(n > 8 for n in frozen)
        for n in frozen:
            assert np.array_equal(traj.z[n], traj.z[n - 1])

    def test_incompatible_start_refused(self):
        sc = default_scenario(6, amplitude=2.0, preset="hold")
        with pytest.raises(IncompatibleInitialState):
            run(RotheConfig(level=1), sc)
        traj = run(RotheConfig(level=1), sc, allow_incompatible=True)
        assert traj.n_steps == 2

    def test_non_associative_rule_runs(self):
        sc = default_scenario(6, amplitude=1.0, rule=NonAssociative())
        traj = run(RotheConfig(level=3), sc)
        assert np.abs(traj.z[-1]).max() > 0
        assert np.abs(tr(B(traj.z[-1]))).max() <= 1e-12

    def test_rerun_is_bitwise_identical(self):
        sc = default_scenario(6, amplitude=2.0)
        a = run(RotheConfig(level=3), sc)
        b = run(RotheConfig(level=3), sc)
        assert all(np.array_equal(x, y) for x, y in zip(a.z, b.z))

    def test_mismatched_end_time(self):
        with pytest.raises(ValueError):
            run(RotheConfig(t_end=2.0, level=1), default_scenario(6))

    def test_refinement_differences_shrink(self):
        sc = default_scenario(6, amplitude=2.0)
        finals = [run(RotheConfig(level=m), sc).z[-1] for m in (2, 3, 4)]
        d1 = lq_norm(sc.grid, finals[0] - finals[1])
        d2 = lq_norm(sc.grid, finals[1] - finals[2])
        assert d2 <= 0.9 * d1


class TestInterpolants:
    def test_nodes_and_midpoints(self, plastic):
        _, cfg, _, traj = plastic
        h = cfg.h
        aff, const = interpolants(traj, 5 * h)
        assert np.allclose(aff, traj.z[5]) and np.array_equal(const, traj.z[5])
        aff, const = interpolants(traj, 4.5 * h)
        assert np.allclose(aff, 0.5 * (traj.z[4] + traj.z[5]))
        assert np.array_equal(const, traj.z[5])
        aff, const = interpolants(traj, 0.0)
        assert not aff.any() and not const.any()

    def test_outside_interval(self, plastic):
        _, _, _, traj = plastic
        with pytest.raises(ValueError):
            interpolants(traj, -0.1)
        with pytest.raises(ValueError):
            interpolants(traj, 1.5)

    def test_norm_chain(self, plastic):
        sc, _, _, traj = plastic
        aff, const, bound = interpolant_norms(traj, sc.grid)
        assert aff <= const <= bound + 1e-15
        # quadrature check of the affine norm
        ts = np.linspace(0, traj.t_end, 2001)
        vals = [lq_norm(sc.grid, interpolants(traj, t)[0]) ** 2 for t in ts]
        assert aff ** 2 == pytest.approx(np.trapezoid(vals, ts), rel=1e-4)
