"""Implicit Euler (Rothe) time stepping for the reduced internal-variable problem.

With ``K = M + eps_reg I + C₁ Bᵀ A_h B`` and the load term ``ℓ_n = Bᵀ σ̂_n``
(``σ̂_n`` the slab-averaged elastic response to the body force), one step solves

    z_n = z_{n-1} + h Π g(Π Σ^lin(z_n)),     Σ^lin(z) = ℓ_n - K z,

where ``Π`` projects the ``p`` block onto masked traceless matrices. ``Π g Π``
is monotone whenever ``g`` is, so the step has exactly one solution for
``eps_reg > 0``. The nonlinear solve is a damped fixed-point iteration with
optional Anderson mixing; an iterate is accepted only if the residual drops.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .curl import CurlOperator
from .elasticity import ConvergenceError, ElasticSolver
from .flow_rules import check_initial_compatibility
from .grid import B, BT, lq_norm, sym


class IncompatibleInitialState(RuntimeError):
    """The initial elastic stress lies outside the elastic domain of ``g``."""


@dataclass(frozen=True)
class RotheConfig:
    t_end: float = 1.0
    level: int = 6
    eps_reg: float = 1e-6
    newton_tol: float = 1e-12
    newton_max: int = 500
    damping: float = 1.0
    min_damping: float = 1.0 / 1024
    anderson: int = 5
    tol_cg: float = None
    cg_max: int = 5000

    def __post_init__(self):
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if int(self.level) != self.level or self.level < 0:
            raise ValueError("level must be a nonnegative integer")
        if self.eps_reg < 0:
            raise ValueError("eps_reg must be >= 0")
        if not 0 < self.newton_tol < 1:
            raise ValueError("newton_tol must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not 0 < self.min_damping <= self.damping:
            raise ValueError("min_damping must lie in (0, damping]")
        if self.anderson < 0 or self.newton_max < 1:
            raise ValueError("anderson must be >= 0 and newton_max >= 1")

    @property
    def h(self):
        return self.t_end / 2 ** self.level

    @property
    def n_steps(self):
        return 2 ** self.level

    @property
    def inner_tol(self):
        return self.newton_tol / 10.0 if self.tol_cg is None else self.tol_cg

    def refined(self, dlevel=1):
        return replace(self, level=self.level + dlevel)


class Model:
    """Operators of one scenario: elasticity, curl, mask, hardening, ``C₁``, ``eps_reg``."""

    def __init__(self, scenario, eps_reg=0.0, tol_cg=1e-11, cg_max=5000):
        self.scenario = scenario
        self.grid = scenario.grid
        self.L = scenario.hardening
        self.c1 = float(scenario.c1)
        self.eps_reg = float(eps_reg)
        self.es = ElasticSolver(scenario.grid, scenario.tensor, tol_cg, cg_max)
        self.curl = CurlOperator(scenario.grid)
        self.mask = self.curl.mask
        self._unit = None

    def apply_K(self, z):
        out = self.es.apply_M(self.L, z)
        if self.eps_reg:
            out += self.eps_reg * z
        if self.c1:
            out += self.c1 * BT(self.curl.curl_curl(B(z)))
        return out

    def project(self, S):
        return self.mask.project_state(S)

    def unit_response(self):
        """``(u, σ)`` for the unit-amplitude load shape."""
        if self._unit is None:
            self._unit = self.es.solve_dirichlet(b=self.scenario.load_shape)
        return self._unit

    def recover(self, z, b):
        """Displacement and stress for plastic strain ``sym Bz`` and body force ``b``."""
        return self.es.solve_dirichlet(sym(B(z)), b)

    def norm(self, z):
        return lq_norm(self.grid, z)


def assemble_sigma_lin(model, z, load_term):
    """``Σ^lin(z) = load_term - K z``."""
    return load_term - model.apply_K(z)


@dataclass
class StepInfo:
    iterations: int
    residual: float
    target: float
    damping: float
    rejections: int
    history: list = field(default_factory=list)


def incremental_solve(model, cfg, rule, z_prev, load_term, z0=None, anderson=None):
    """Solve one implicit step; returns ``(z_n, Π Σ^lin(z_n), StepInfo)``."""
    h = cfg.h
    depth = cfg.anderson if anderson is None else anderson
    shape = z_prev.shape

    def fixed_point(z):
        S = model.project(assemble_sigma_lin(model, z, load_term))
        return z_prev + h * model.project(rule(S)), S

    z = np.array(z_prev if z0 is None else z0, dtype=float, copy=True)
    Tz, S = fixed_point(z)
    R = z - Tz
    r = model.norm(R)
    target = cfg.newton_tol * (model.norm(z_prev) + h)
    omega = cfg.damping
    X, F = [], []
    it = rejections = 0
    history = [r]
    while r > target:
        if it >= cfg.newton_max:
            raise ConvergenceError(
                f"increment not converged after {it} iterations (residual {r:.3e} > {target:.3e})")
        it += 1
        f = -R.reshape(-1)
        cand = z.reshape(-1) + omega * f
        mixed = depth > 0 and len(F) > 0
        if mixed:
            dF = np.column_stack([f - Fk for Fk in F])
            dX = np.column_stack([z.reshape(-1) - Xk for Xk in X])
            gam = np.linalg.lstsq(dF, f, rcond=None)[0]
            cand = cand - (dX + omega * dF) @ gam
        cand = cand.reshape(shape)
        Tc, Sc = fixed_point(cand)
        Rc = cand - Tc
        rc = model.norm(Rc)
        if rc < r:
            X.append(z.reshape(-1).copy())
            F.append(f.copy())
            if len(X) > depth:
                X.pop(0)
                F.pop(0)
            z, R, r, S = cand, Rc, rc, Sc
            history.append(r)
            omega = min(cfg.damping, 2.0 * omega)
            continue
        rejections += 1
        if mixed:
            X.clear()
            F.clear()
            continue
        omega *= 0.5
        if omega < cfg.min_damping:
            raise ConvergenceError(
                f"residual stalled at {r:.3e} (target {target:.3e}) with damping below "
                f"{cfg.min_damping:g}; step too large or flow rule not monotone")
    return z, S, StepInfo(it, r, target, omega, rejections, history)


@dataclass
class Trajectory:
    """Append-only record of a run; index 0 is the initial state."""
    h: float
    times: list = field(default_factory=list)
    z: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    u: list = field(default_factory=list)
    sigma_lin: list = field(default_factory=list)
    sigma_hat: list = field(default_factory=list)
    load: list = field(default_factory=list)
    body_force: list = field(default_factory=list)
    info: list = field(default_factory=list)

    def append(self, t, z, sigma, u, sigma_lin, sigma_hat, load, b, info=None):
        if self.times and not t > self.times[-1]:
            raise ValueError("times must increase strictly")
        self.times.append(float(t))
        self.z.append(z)
        self.sigma.append(sigma)
        self.u.append(u)
        self.sigma_lin.append(sigma_lin)
        self.sigma_hat.append(sigma_hat)
        self.load.append(load)
        self.body_force.append(b)
        self.info.append(info)

    @property
    def n_steps(self):
        return len(self.times) - 1

    @property
    def t_end(self):
        return self.times[-1]

    def rate(self, n):
        return (self.z[n] - self.z[n - 1]) / self.h

    def interpolants(self, t):
        return interpolants(self, t)


def interpolants(traj, t, key="z"):
    """Piecewise affine and piecewise constant interpolants at time ``t``.

    The constant interpolant takes the value of step ``n`` on ``((n-1)h, nh]``.
    """
    if not 0.0 <= t <= traj.t_end * (1 + 1e-14):
        raise ValueError(f"t = {t} outside [0, {traj.t_end}]")
    seq = getattr(traj, key)
    s = t / traj.h
    n = min(max(int(math.ceil(s - 1e-12)), 1), traj.n_steps) if t > 0 else 0
    if n == 0:
        return seq[0].copy(), seq[0].copy()
    lam = s - (n - 1)
    return lam * seq[n] + (1.0 - lam) * seq[n - 1], seq[n].copy()


def interpolant_norms(traj, grid, key="z"):
    """``L²(0,T; L²)`` norms of the affine and the extended constant interpolant.

    Returns ``(affine, constant_extended, bound)`` with ``bound`` the right
    end of the chain: ``(h‖ξ⁰‖² + ‖ξ̄‖²_{L²(0,T)})^{1/2}``.
    """
    seq = getattr(traj, key)
    h = traj.h
    w = grid.weights

    def ip(a, b):
        return float(w @ np.einsum("ij,ij->i", a.reshape(len(w), -1), b.reshape(len(w), -1)))

    aff = 0.0
    const = 0.0
    for n in range(1, len(seq)):
        a, b = seq[n - 1], seq[n]
        aff += h * (ip(a, a) + ip(a, b) + ip(b, b)) / 3.0
        const += h * ip(b, b)
    ext = const + h * ip(seq[0], seq[0])
    return math.sqrt(aff), math.sqrt(ext), math.sqrt(ext)


def run(cfg, scenario, model=None, perturb=None, on_step=None, allow_incompatible=False):
    """Run the scheme over ``2**level`` steps and return the :class:`Trajectory`.

    ``perturb`` optionally changes solver internals without changing the
    problem: ``{"guess_scale": s, "seed": k}`` starts each increment from a
    random admissible perturbation of the warm start, ``{"anderson": d}``
    overrides the mixing depth. ``on_step(traj, n)`` is called after every
    completed step and may raise to abort.
    """
    if abs(cfg.t_end - scenario.t_end) > 1e-14 * scenario.t_end:
        raise ValueError("RotheConfig.t_end and Scenario.t_end disagree")
    if model is None:
        model = Model(scenario, cfg.eps_reg, cfg.inner_tol, cfg.cg_max)
    rule = scenario.rule
    perturb = dict(perturb or {})
    rng = np.random.default_rng(perturb.get("seed", 0))
    scale = float(perturb.get("guess_scale", 0.0))
    depth = perturb.get("anderson")

    u1, s1 = model.unit_response()
    shape = scenario.load_shape
    f0 = float(scenario.load_factor(0.0))
    sig0 = f0 * s1
    if not allow_incompatible and not check_initial_compatibility(rule, sig0):
        raise IncompatibleInitialState(
            "g(Bᵀσ⁽⁰⁾) ≠ 0 at t = 0; reduce the initial load or pass allow_incompatible")

    traj = Trajectory(h=cfg.h)
    z = model.grid.zeros_state()
    traj.append(0.0, z, sig0, f0 * u1, model.project(BT(sig0)), sig0, BT(sig0), f0 * shape)
    for n in range(1, cfg.n_steps + 1):
        t0, t1 = (n - 1) * cfg.h, n * cfg.h
        fac = scenario.slab_factor(t0, t1)
        sig_hat = fac * s1
        load = BT(sig_hat)
        z0 = None
        if scale > 0:
            z0 = z + scale * model.project(rng.standard_normal(z.shape))
        z, S, info = incremental_solve(model, cfg, rule, z, load, z0=z0, anderson=depth)
        b = fac * shape
        u, sigma = model.recover(z, b)
        traj.append(t1, z, sigma, u, S, sig_hat, load, b, info)
        if on_step is not None:
            on_step(traj, n)
    return traj


def elastic_run(cfg, scenario, model=None):
    """Same load history without plastic flow: ``σ_n = σ̂_n``."""
    if model is None:
        model = Model(scenario, cfg.eps_reg, cfg.inner_tol, cfg.cg_max)
    traj = Trajectory(h=cfg.h)
    z = model.grid.zeros_state()
    for n in range(0, cfg.n_steps + 1):
        if n == 0:
            fac = float(scenario.load_factor(0.0))
        else:
            fac = scenario.slab_factor((n - 1) * cfg.h, n * cfg.h)
        b = fac * scenario.load_shape
        u, sigma = model.es.solve_dirichlet(b=b)
        traj.append(n * cfg.h, z, sigma, u, model.project(BT(sigma)), sigma, BT(sigma), b)
    return traj
