import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradplast import kernels
from gradplast.elasticity import HardeningMap
from gradplast.flow_rules import (GrowthCertificate, NoPotentialError, NonAssociative, NortonHoff,
                                  check_growth, check_initial_compatibility, check_monotonicity,
                                  check_self_controlling, eval_g, eval_potential)
from gradplast.grid import Grid

vec10 = arrays(float, (10,), elements=st.floats(-50, 50, allow_nan=False))


def dev_norm(S):
    P = S[..., :9].reshape(*S.shape[:-1], 3, 3)
    d = P - np.trace(P, axis1=-2, axis2=-1)[..., None, None] / 3 * np.eye(3)
    return np.linalg.norm(d.reshape(*S.shape[:-1], 9), axis=-1), d


class TestNortonHoff:
    def test_zero_at_origin_exactly(self):
        for rule in (NortonHoff(), NortonHoff(sigma_y=0.0), NortonHoff(r=0.5, sigma_y=0.0),
                     NonAssociative(), NonAssociative(sigma_y=0.2, beta=2.0)):
            assert not np.any(eval_g(rule, np.zeros(10)))

    def test_inside_yield_surface_vanishes(self, rng):
        rule = NortonHoff(sigma_y=1.0)
        S = rng.standard_normal((100, 10))
        S[:, :9] *= 0.5 / np.linalg.norm(S[:, :9], axis=1, keepdims=True)
        assert not np.any(rule(S))
        assert not np.any(rule.potential(S))

    def test_linear_viscous_limit(self, rng):
        rule = NortonHoff(sigma_y=0.0, r=1.0, eta=1.0)
        S = rng.standard_normal((20, 10))
        _, d = dev_norm(S)
        out = rule(S)
        assert np.allclose(out[:, :9], d.reshape(-1, 9), atol=1e-14)
        assert not out[:, 9].any()

    def test_closed_form(self, rng):
        rule = NortonHoff(sigma_y=0.3, r=2.5, eta=1.7)
        S = 2.0 * rng.standard_normal((50, 10))
        n, d = dev_norm(S)
        amp = 1.7 * np.maximum(n - 0.3, 0.0) ** 2.5
        assert np.allclose(rule(S)[:, :9], (amp / n)[:, None] * d.reshape(-1, 9))

    def test_traceless_output(self, rng):
        out = NortonHoff()(rng.standard_normal((200, 10)) * 10)
        assert np.abs(out[:, 0] + out[:, 4] + out[:, 8]).max() <= 1e-15 * max(1, np.abs(out).max())

    def test_hardening_row(self, rng):
        rule = NortonHoff(kappa=0.7)
        out = rule(rng.standard_normal((30, 10)) * 3)
        assert np.allclose(out[:, 9], -0.7 * np.linalg.norm(out[:, :9], axis=1))

    def test_parameter_validation(self):
        for bad in (dict(sigma_y=-1), dict(r=0), dict(eta=0), dict(kappa=-0.1)):
            with pytest.raises(ValueError):
                NortonHoff(**bad)
            with pytest.raises(ValueError):
                NonAssociative(**bad)

    @settings(max_examples=200, deadline=None)
    @given(vec10, vec10, st.sampled_from([0.0, 0.1, 1.0]), st.sampled_from([0.5, 1.0, 3.0]),
           st.sampled_from([0.0, 0.5]))
    def test_monotone_pairs(self, a, b, sy, r, kappa):
        rule = NortonHoff(sigma_y=sy, r=r, kappa=kappa)
        dg = rule(a) - rule(b)
        assert dg @ (a - b) >= -1e-12 * np.linalg.norm(dg) * np.linalg.norm(a - b)

    @settings(max_examples=100, deadline=None)
    @given(vec10)
    def test_positive_dissipation(self, v):
        for rule in (NortonHoff(), NortonHoff(kappa=0.5), NonAssociative()):
            assert rule(v) @ v >= -1e-12 * np.linalg.norm(v) ** 2


class TestPotential:
    def test_finite_difference_gradient(self, rng):
        rule = NortonHoff(sigma_y=0.2, r=1.5, kappa=0.3)
        h = 1e-5
        worst = 0.0
        for _ in range(100):
            S = rng.standard_normal(10)
            S[:9] *= (0.5 + rng.uniform()) / np.linalg.norm(S[:9]) + 0.4
            if rule.potential(S) == 0:
                continue
            fd = np.array([(rule.potential(S + h * e) - rule.potential(S - h * e)) / (2 * h)
                           for e in np.eye(10)])
            g = rule(S)
            worst = max(worst, np.linalg.norm(fd - g) / np.linalg.norm(g))
        assert worst <= 1e-6

    def test_shift(self, rng):
        rule = NortonHoff()
        S = rng.standard_normal((5, 10))
        assert np.allclose(eval_potential(rule, S, shift_at=S), 0.0)
        assert (eval_potential(rule, S) >= 0).all()

    def test_non_associative_has_none(self):
        with pytest.raises(NoPotentialError):
            eval_potential(NonAssociative(), np.zeros(10))


class TestGrowth:
    def test_default_certificate_constants(self):
        cert = GrowthCertificate.for_norton_hoff(NortonHoff())
        assert (cert.q, cert.q_star) == (2.0, 2.0)
        assert 1 / cert.q + 1 / cert.q_star == 1.0
        assert cert.alpha == pytest.approx(2.0 / 3.0)
        assert cert.m == pytest.approx(0.04 / 3.0)
        assert (cert.alpha2, cert.m2) == (0.5, pytest.approx(-0.02))

    @pytest.mark.parametrize("rule", [NortonHoff(), NortonHoff(sigma_y=0.0, r=2.0, eta=0.5),
                                      NortonHoff(sigma_y=1.0, r=0.5, eta=3.0)])
    def test_certificate_m_dominates_scalar_oracle(self, rule):
        # everything depends on s = |dev v| only; brute-force the smallest admissible m
        cert = GrowthCertificate.for_norton_hoff(rule)
        s = np.linspace(0.0, 50.0, 200001)
        phi = np.maximum(s - rule.sigma_y, 0.0)
        gs = rule.eta * phi ** rule.r
        need = cert.alpha * (s ** cert.q / cert.q + gs ** cert.q_star / cert.q_star) - s * gs
        assert np.all(need <= cert.m + 1e-13 * (s * gs + 1.0))

    def test_check_passes_and_handles_origin(self):
        rule = NortonHoff()
        rep = check_growth(rule, GrowthCertificate.for_norton_hoff(rule), samples=500)
        assert rep.passed and rep.n_samples == 500 and not rep.witnesses
        rep1 = check_growth(rule, GrowthCertificate.for_norton_hoff(rule), samples=1)
        assert rep1.passed and rep1.n_samples == 1

    def test_wrong_certificate_flagged_with_witness(self):
        rule = NortonHoff()
        good = GrowthCertificate.for_norton_hoff(rule)
        bad = GrowthCertificate(q=2.0, alpha=4.0 * good.alpha, m=good.m, alpha1=good.alpha1,
                                m1=good.m1, alpha2=good.alpha2, m2=good.m2)
        rep = check_growth(rule, bad, samples=500)
        assert not rep.passed
        w = rep.witnesses[0]
        v, g = np.array(w["v"]), np.array(w["g"])
        assert np.allclose(rule(v), g)
        a, b = np.linalg.norm(v), np.linalg.norm(g)
        assert bad.alpha * (a ** 2 / 2 + b ** 2 / 2) > v @ g + bad.m

    def test_certificate_validation(self):
        with pytest.raises(ValueError):
            GrowthCertificate(q=1.0, alpha=1.0)
        with pytest.raises(ValueError):
            GrowthCertificate(q=2.0, alpha=0.0)
        with pytest.raises(ValueError):
            GrowthCertificate.for_norton_hoff(NortonHoff(kappa=1.0))
        with pytest.raises(ValueError):
            check_growth(NortonHoff(), GrowthCertificate(q=2.0, alpha=0.1), samples=0)


class TestMonotonicitySampler:
    def test_shipped_rules_pass(self):
        for rule in (NortonHoff(), NonAssociative()):
            rep = check_monotonicity(rule, 3000)
            assert rep.passed, rep.summary()

    def test_broken_rule_gives_witness(self):
        rep = check_monotonicity(NonAssociative(beta=-3.0), 3000)
        assert not rep.passed
        w = rep.witnesses[0]
        v1, v2 = np.array(w["v1"]), np.array(w["v2"])
        rule = NonAssociative(beta=-3.0)
        assert (rule(v1) - rule(v2)) @ (v1 - v2) < 0

    def test_yield_offset_nonassociative_is_caught(self):
        # with sigma_y > 0 the plastic-spin term breaks monotonicity near yield
        rep = check_monotonicity(NonAssociative(sigma_y=0.5, beta=1.0), 20000)
        assert not rep.passed


class TestSelfControl:
    def test_zero_field_margin(self):
        g = Grid.box(4)
        rep = check_self_controlling(NortonHoff(), HardeningMap.isotropic(0.1), g, samples=4)
        assert rep.details["margin_at_zero"] >= 0.0

    def test_linear_viscous_closed_form(self):
        # sigma_y = 0, r = 1: B g(y) = dev(y_p), so ||B g(y)|| <= ||y|| with F(a, b) = b
        g = Grid.box(4)
        rule = NortonHoff(sigma_y=0.0)
        rep = check_self_controlling(rule, HardeningMap.isotropic(0.1), g, samples=5,
                                     bound=lambda a, b: b)
        assert rep.passed and rep.worst_slack > 0
        assert set(rep.details["per_amplitude"]) == {1.0, 10.0, 100.0}

    def test_fitted_default(self):
        g = Grid.box(4)
        rep = check_self_controlling(NortonHoff(kappa=0.5), HardeningMap.isotropic(0.1), g,
                                     samples=6)
        assert rep.passed
        assert all(c >= 0 for c in rep.details["fitted"])


def test_initial_compatibility():
    rule = NortonHoff(sigma_y=0.1)
    s = np.zeros((8, 3, 3))
    assert check_initial_compatibility(rule, s)
    s[3] = np.diag([0.05, -0.05, 0.0])
    assert check_initial_compatibility(rule, s)
    s[3] = np.diag([1.0, -1.0, 0.0])
    assert not check_initial_compatibility(rule, s)


def test_backends_agree(rng):
    S = rng.standard_normal((500, 10)) * 3
    out, pot = kernels.norton_hoff(S, 0.2, 1.5, 1.3, 0.4)
    ref, rpot = kernels.numpy_impl["norton_hoff"](S, 0.2, 1.5, 1.3, 0.4)
    assert np.allclose(out, ref, rtol=1e-13, atol=1e-14) and np.allclose(pot, rpot, rtol=1e-13)
    na = kernels.non_associative(S, 0.1, 1.0, 1.0, 0.5, 0.2)
    nref = kernels.numpy_impl["non_associative"](S, 0.1, 1.0, 1.0, 0.5, 0.2)
    assert np.allclose(na, nref, rtol=1e-13, atol=1e-14)
