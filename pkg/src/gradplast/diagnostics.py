"""A-priori energy estimates, dissipation, Korn probe, uniqueness and refinement studies.

All checks read a finished (or growing) :class:`~gradplast.rothe.Trajectory`
and report; none of them changes solver state. Column names of the energy
ledger carry the tag of the estimate they belong to.

Notation per step ``n``: ``w_n = (z_n - z_{n-1})/h``, ``S_n = Π Σ^lin(z_n)``,
``ℓ_n = Bᵀ σ̂_n``, ``K`` the operator of :mod:`gradplast.rothe`. The scheme
satisfies exactly

    E_l + h Σ (w_n, S_n) + ½ Σ (K Δz_n, Δz_n) = ½‖𝔹^{1/2} σ̂_l‖² + Σ (ℓ_n, Δz_n)

with ``E = ½(‖𝔹^{1/2}σ‖² + ‖L^{1/2}z‖² + eps‖z‖² + C₁‖Curl Bz‖²)``, from which
the growth, time-average, potential and time-difference bounds follow.
"""
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import LinearOperator, lobpcg

from .flow_rules import GrowthCertificate, NortonHoff
from .grid import B, BT, lq_norm, skew, sym
from .rothe import Model, run

LEDGER_COLUMNS = [
    "step", "time",
    "eq51_elastic", "eq51_hardening", "eq51_regularizer", "eq51_curl",
    "eq51_cum_stress_q", "eq51_cum_rate_qstar", "eq51_load_work", "eq51_elastic_load",
    "eq51_lhs", "eq51_rhs", "eq51_slack",
    "eq54_eps", "eq54_c_eps", "eq54_cum_load_q", "eq54_lhs", "eq54_rhs", "eq54_slack",
    "eq56_lhs_elastic", "eq56_lhs", "eq56_rhs", "eq56_slack",
    "eq9_dissipation", "eq9_cum_dissipation", "eq9_min_pointwise",
    "eq3_free_energy", "eq3_stress_power", "eq3_slack",
    "eq69_potential", "eq69_lhs", "eq69_rhs", "eq69_slack",
    "eq78_lhs", "eq78_rhs", "eq78_slack",
    "eq80_stress_rate", "eq80_hardening_rate", "eq80_curl_rate",
]


def _ip(grid, a, b):
    n = grid.n_nodes
    return float(grid.weights @ np.einsum("ij,ij->i", a.reshape(n, -1), b.reshape(n, -1)))


def _lq(grid, f, q):
    n = grid.n_nodes
    ff = f.reshape(n, -1)
    return float(grid.weights @ np.sqrt(np.einsum("ij,ij->i", ff, ff)) ** q)


class EnergyLedger:
    """Incremental ledger; call :meth:`step` for ``n = 1, 2, ...`` in order.

    ``certificate`` defaults to the Norton-Hoff certificate when the rule
    admits one (``κ = 0``); the growth-based rows are NaN otherwise.
    """

    def __init__(self, model, traj, certificate=None, tol=None):
        self.model = model
        self.traj = traj
        sc = model.scenario
        self.grid = model.grid
        self.rule = sc.rule
        if certificate is None and isinstance(self.rule, NortonHoff) and self.rule.kappa == 0:
            certificate = GrowthCertificate.for_norton_hoff(self.rule)
        self.cert = certificate
        e0 = 0.5 * model.es.elastic_energy_form(traj.sigma[0])
        self.tol = 1e-8 * (e0 + 1.0) if tol is None else tol
        if self.cert is not None:
            q, qs, a = self.cert.q, self.cert.q_star, self.cert.alpha
            alpha_b = sc.tensor.compliance_lower_bound
            # Young split of (ℓ, w); keep α/q* - ε > 0
            self.eps = min(min(1.0, alpha_b) / 4.0, a / (2.0 * qs))
            self.c_eps = (self.eps * qs) ** (-q / qs) / q
        else:
            self.eps = self.c_eps = float("nan")
        self.rows = []
        self._acc = dict(stress_q=0.0, rate_qs=0.0, load_work=0.0, load_q=0.0, diss=0.0,
                         avg_el=0.0, pot_work=0.0, kww_sum=0.0, w_work=0.0, max_rhs54=-np.inf)
        self._w_prev = model.project(self.rule(traj.sigma_lin[0]))
        self._kw0 = None

    def _pot(self, S):
        if not self.rule.has_potential:
            return float("nan")
        S0 = self.traj.sigma_lin[0]
        return float(self.grid.weights @ (self.rule.potential(S) - self.rule.potential(S0)))

    def step(self, n):
        m, tr, g = self.model, self.traj, self.grid
        h = tr.h
        acc = self._acc
        z, zp = tr.z[n], tr.z[n - 1]
        dz = z - zp
        w = dz / h
        S = tr.sigma_lin[n]
        ell, ell_p = tr.load[n], tr.load[n - 1]
        sig, sig_hat = tr.sigma[n], tr.sigma_hat[n]

        el = m.es.elastic_energy_form(sig)
        Lz = _ip(g, m.L.apply(z), z)
        reg = m.eps_reg * _ip(g, z, z)
        cz = m.curl.apply(B(z))
        cu = m.c1 * _ip(g, cz, cz)
        E = 0.5 * (el + Lz + reg + cu)
        el_hat = m.es.elastic_energy_form(sig_hat)

        d_pt = np.einsum("ij,ij->i", self.rule(S), S)
        acc["diss"] += h * _ip(g, w, S)
        acc["load_work"] += _ip(g, ell, dz)
        acc["avg_el"] += h * 0.5 * el
        row = {"step": n, "time": tr.times[n],
               "eq51_elastic": el, "eq51_hardening": Lz, "eq51_regularizer": reg,
               "eq51_curl": cu, "eq51_load_work": acc["load_work"],
               "eq51_elastic_load": 0.5 * el_hat,
               "eq9_dissipation": h * _ip(g, w, S), "eq9_cum_dissipation": acc["diss"],
               "eq9_min_pointwise": float(d_pt.min())}

        if self.cert is not None:
            q, qs, a, mm = self.cert.q, self.cert.q_star, self.cert.alpha, self.cert.m
            acc["stress_q"] += h * _lq(g, B(S), q)
            acc["rate_qs"] += h * _lq(g, w, qs)
            acc["load_q"] += h * _lq(g, sig_hat, q)
            vol = n * h * mm * g.volume
            lhs51 = E + a / q * acc["stress_q"] + a / qs * acc["rate_qs"]
            rhs51 = 0.5 * el_hat + acc["load_work"] + vol
            lhs54 = E + a / q * acc["stress_q"] + (a / qs - self.eps) * acc["rate_qs"]
            rhs54 = 0.5 * el_hat + self.c_eps * acc["load_q"] + vol
            acc["max_rhs54"] = max(acc["max_rhs54"], rhs54)
            lhs56 = acc["avg_el"] / self._t_end() + lhs54
            rhs56 = 2.0 * acc["max_rhs54"]
        else:
            lhs51 = rhs51 = lhs54 = rhs54 = lhs56 = rhs56 = float("nan")
        row.update({"eq51_cum_stress_q": acc["stress_q"], "eq51_cum_rate_qstar": acc["rate_qs"],
                    "eq51_lhs": lhs51, "eq51_rhs": rhs51, "eq51_slack": rhs51 - lhs51,
                    "eq54_eps": self.eps, "eq54_c_eps": self.c_eps,
                    "eq54_cum_load_q": acc["load_q"], "eq54_lhs": lhs54, "eq54_rhs": rhs54,
                    "eq54_slack": rhs54 - lhs54,
                    "eq56_lhs_elastic": acc["avg_el"] / self._t_end(), "eq56_lhs": lhs56,
                    "eq56_rhs": rhs56, "eq56_slack": rhs56 - lhs56})

        # free-energy imbalance over the slab
        psi = E
        psi_p = self.rows[-1]["eq3_free_energy"] if self.rows else self._psi0()
        du = tr.u[n] - tr.u[n - 1]
        power = _ip(g, sig, m.es.strain(du))
        row.update({"eq3_free_energy": psi, "eq3_stress_power": power,
                    "eq3_slack": power - (psi - psi_p)})

        # time-difference ledgers
        Kw = m.apply_K(w)
        kww = h * _ip(g, Kw, w)
        dl = ell - ell_p
        if self._kw0 is None:
            self._kw0 = h * _ip(g, m.apply_K(self._w_prev), self._w_prev)
        acc["w_work"] += 2.0 * _ip(g, w - self._w_prev, dl)
        self._w_prev = w
        row.update({"eq78_lhs": kww, "eq78_rhs": self._kw0 + acc["w_work"],
                    "eq78_slack": self._kw0 + acc["w_work"] - kww})
        acc["pot_work"] += _ip(g, w, dl)
        acc["kww_sum"] += kww
        if self.rule.has_potential:
            F = self._pot(S)
            lhs69 = F + acc["kww_sum"]
            row.update({"eq69_potential": F, "eq69_lhs": lhs69, "eq69_rhs": acc["pot_work"],
                        "eq69_slack": acc["pot_work"] - lhs69})
        else:
            row.update({k: float("nan") for k in ("eq69_potential", "eq69_lhs", "eq69_rhs",
                                                   "eq69_slack")})
        dsig = (sig - tr.sigma[n - 1]) / h
        dc = m.curl.apply(B(w))
        row.update({"eq80_stress_rate": m.es.elastic_energy_form(dsig),
                    "eq80_hardening_rate": _ip(g, m.L.apply(w), w),
                    "eq80_curl_rate": _ip(g, dc, dc)})
        row["pass"] = self.passed(row)
        self.rows.append(row)
        return row

    def _t_end(self):
        return self.model.scenario.t_end

    def _psi0(self):
        return 0.5 * self.model.es.elastic_energy_form(self.traj.sigma[0])

    def passed(self, row):
        keys = ["eq51_slack", "eq54_slack", "eq56_slack", "eq3_slack", "eq69_slack",
                "eq78_slack"]
        ok = all(not (row[k] < -self.tol) for k in keys)
        return bool(ok and row["eq9_min_pointwise"] >= -self.tol)

    def failures(self):
        return [r["step"] for r in self.rows if not r["pass"]]


def energy_ledger(model, traj, certificate=None, tol=None):
    """Ledger rows for every step of a finished trajectory."""
    led = EnergyLedger(model, traj, certificate, tol)
    for n in range(1, traj.n_steps + 1):
        led.step(n)
    return led


def ledger_step(ledger, n):
    """One ledger row and its pass flag."""
    row = ledger.step(n)
    return row, row["pass"]


@dataclass
class DissipationReport:
    passed: bool
    min_step_dissipation: float
    min_pointwise: float
    cumulative: list
    free_energy_slack: float
    witnesses: list = field(default_factory=list)


def dissipation_check(model, traj, tol=None):
    """Pointwise and integrated dissipation plus the discrete free-energy imbalance."""
    led = energy_ledger(model, traj, tol=tol)
    cum = [r["eq9_cum_dissipation"] for r in led.rows]
    step = [r["eq9_dissipation"] for r in led.rows]
    pts = [r["eq9_min_pointwise"] for r in led.rows]
    fe = [r["eq3_slack"] for r in led.rows]
    nondecreasing = all(b >= a for a, b in zip(cum, cum[1:]))
    witnesses = [r["step"] for r in led.rows
                 if r["eq9_min_pointwise"] < -led.tol or r["eq3_slack"] < -led.tol]
    ok = (nondecreasing and min(step, default=0.0) >= -led.tol
          and min(pts, default=0.0) >= -led.tol and min(fe, default=0.0) >= -led.tol)
    return DissipationReport(bool(ok), min(step, default=0.0), min(pts, default=0.0), cum,
                             min(fe, default=0.0), witnesses)


# ---------------------------------------------------------------------------
# Korn probe
# ---------------------------------------------------------------------------

@dataclass
class KornReport:
    grid_dims: tuple
    n_random: int
    n_ascent: int
    max_ratio: float
    mean_ratio: float
    max_by_family: dict
    degenerate: int
    ascent_rayleigh_min: float

    @property
    def passed(self):
        return self.degenerate == 0 and math.isfinite(self.max_ratio)


class _KornForms:
    def __init__(self, grid, curl=None):
        from .curl import CurlOperator

        self.grid = grid
        self.curl = CurlOperator(grid) if curl is None else curl
        self.mask = self.curl.mask
        self.free = np.flatnonzero(self.mask.free.reshape(-1))
        self.w9 = np.repeat(grid.weights, 9)

    def embed(self, x):
        p = np.zeros(9 * self.grid.n_nodes)
        p[self.free] = x
        return p.reshape(-1, 3, 3)

    def norms(self, p):
        g = self.grid
        return lq_norm(g, p), lq_norm(g, sym(p)), lq_norm(g, self.curl.apply(p))

    def ratio(self, p):
        a, s, c = self.norms(p)
        return a, s + c

    def A(self, x):
        # (Ap, p) = ‖sym p‖² + ‖Curl p‖² in the weighted product
        x = np.asarray(x)
        cols = x.reshape(self.free.size, -1)
        out = np.empty_like(cols)
        for k in range(cols.shape[1]):
            p = self.embed(cols[:, k])
            v = self.w9 * sym(p).reshape(-1)
            sp_ = self.curl.apply(p).reshape(-1)
            v = v + self.curl.matrix_T @ (self.w9 * sp_)
            out[:, k] = v[self.free]
        return out.reshape(x.shape)


def _families(rng, grid, mask, n):
    """Adversarial masked samples: skew, gradient, smooth curl-free, rotation-like."""
    from .curl import gradient_matrices

    G = gradient_matrices(grid)
    X = grid.coords / np.asarray(grid.lengths)
    bubble = np.prod(np.sin(np.pi * X), axis=1)
    out = []
    for k in range(n):
        fam = ("skew", "gradient", "curl_free", "skew_smooth")[k % 4]
        if fam == "skew":
            p = skew(rng.standard_normal((grid.n_nodes, 3, 3)))
        elif fam == "gradient":
            v = rng.standard_normal((grid.n_nodes, 3))
            v[grid.boundary] = 0.0
            p = np.stack([np.stack([G[j] @ v[:, i] for j in range(3)], 1) for i in range(3)], 1)
        else:
            kk = rng.integers(1, 3, size=(3, 3))
            ph = rng.uniform(0, 2 * np.pi, size=3)
            v = np.stack([bubble * np.cos(np.pi * X @ kk[i] + ph[i]) for i in range(3)], 1)
            if fam == "curl_free":
                p = np.stack([np.stack([G[j] @ v[:, i] for j in range(3)], 1) for i in range(3)], 1)
            else:
                # skew field built from a smooth axial vector
                p = np.zeros((grid.n_nodes, 3, 3))
                p[:, 0, 1], p[:, 1, 0] = -v[:, 2], v[:, 2]
                p[:, 0, 2], p[:, 2, 0] = v[:, 1], -v[:, 1]
                p[:, 1, 2], p[:, 2, 1] = -v[:, 0], v[:, 0]
        out.append((fam, mask.apply(p)))
    return out


def korn_probe(grid, samples=500, ascent=50, ascent_iters=40, seed=0, curl=None):
    """Largest observed ``‖p‖₂ / (‖sym p‖₂ + ‖Curl p‖₂)`` over admissible fields.

    Random draws mix i.i.d. nodal fields with the adversarial families; the
    ascent samples minimise the Rayleigh quotient
    ``(‖sym p‖² + ‖Curl p‖²)/‖p‖²`` from random starts by LOBPCG.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    forms = _KornForms(grid, curl)
    mask = forms.mask
    ratios, fam_max, degenerate = [], {}, 0

    def record(fam, p):
        nonlocal degenerate
        a, den = forms.ratio(p)
        if a == 0.0:
            return
        if den <= 1e-14 * a:
            degenerate += 1
            return
        r = a / den
        ratios.append(r)
        fam_max[fam] = max(fam_max.get(fam, 0.0), r)

    n_fam = samples // 2
    for _ in range(samples - n_fam):
        record("random", mask.apply(rng.standard_normal((grid.n_nodes, 3, 3))))
    for fam, p in _families(rng, grid, mask, n_fam):
        record(fam, p)

    nf = forms.free.size
    Aop = LinearOperator((nf, nf), matvec=forms.A, matmat=forms.A, dtype=float)
    wfree = forms.w9[forms.free]
    Bmat = diags(wfree)
    # diagonal preconditioner from the mass weights and the curl scale
    Mmat = diags(1.0 / (wfree * (1.0 + 4.0 * sum(1.0 / h ** 2 for h in grid.spacing))))
    rq_min = np.inf
    for _ in range(ascent):
        x0 = rng.standard_normal((nf, 1))
        with warnings.catch_warnings():
            # a capped iteration count is intended; partial ascent is still a sample
            warnings.simplefilter("ignore", UserWarning)
            lam, vec = lobpcg(Aop, x0, B=Bmat, M=Mmat, largest=False, maxiter=ascent_iters,
                              tol=1e-8)
        rq_min = min(rq_min, float(lam[0]))
        record("ascent", forms.embed(vec[:, 0]))
    r = np.asarray(ratios)
    return KornReport(grid.dims, samples, ascent, float(r.max()), float(r.mean()),
                      fam_max, degenerate, rq_min)


# ---------------------------------------------------------------------------
# uniqueness and refinement
# ---------------------------------------------------------------------------

@dataclass
class UniquenessReport:
    passed: bool
    tol: float
    max_stress: float
    max_hardening: float
    max_curl: float
    max_gamma: float
    bit_identical: bool
    per_step: list


def uniqueness_test(cfg, scenario, perturbation=None, tol=1e-8):
    """Run twice, once with perturbed solver internals, and compare.

    Differences are relative to the size of the reference solution in the
    same norm (falling back to absolute when that size is zero).
    """
    perturbation = {"guess_scale": 1e-2, "seed": 1, "anderson": 0} if perturbation is None \
        else perturbation
    model = Model(scenario, cfg.eps_reg, cfg.inner_tol, cfg.cg_max)
    a = run(cfg, scenario, model=model)
    b = run(cfg, scenario, model=model, perturb=perturbation)
    g, L = scenario.grid, scenario.hardening

    def bnorm(s):
        return math.sqrt(max(model.es.elastic_energy_form(s), 0.0))

    def lnorm(z):
        return lq_norm(g, L.sqrt_apply(z))

    def cnorm(z):
        return lq_norm(g, model.curl.apply(B(z)))

    def rel(d, ref):
        return d / ref if ref > 0 else d

    rows, worst = [], [0.0, 0.0, 0.0, 0.0]
    identical = True
    for n in range(1, cfg.n_steps + 1):
        dz = a.z[n] - b.z[n]
        ds = a.sigma[n] - b.sigma[n]
        identical &= not np.any(dz) and not np.any(ds)
        vals = [rel(bnorm(ds), bnorm(a.sigma[n])), rel(lnorm(dz), lnorm(a.z[n])),
                rel(cnorm(dz), cnorm(a.z[n])),
                rel(lq_norm(g, dz[:, 9]), lq_norm(g, a.z[n][:, 9]))]
        worst = [max(u, v) for u, v in zip(worst, vals)]
        rows.append(vals)
    ok = max(worst[:3]) <= tol
    return UniquenessReport(bool(ok), tol, *worst, bool(identical), rows)


def _final_state(args):
    cfg, scenario = args
    return run(cfg, scenario).z[-1]


def _workers():
    try:
        return max(1, int(os.environ.get("GRADPLAST_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


@dataclass
class ConvergenceTable:
    levels: list
    differences: list
    ratios: list
    eps_values: list
    eps_differences: list
    non_increasing: bool
    eps_monotone: bool

    @property
    def passed(self):
        return self.non_increasing and self.eps_monotone


def convergence_study(cfg, scenario, levels=3, eps_values=(1e-2, 1e-4, 1e-6), workers=None):
    """Rothe refinement over ``levels`` runs (``cfg.level``, ``+1``, ...) and an ``eps_reg`` sweep.

    Reports ``‖z_h(T) - z_{h/2}(T)‖₂`` between successive levels and the
    differences between successive ``eps_reg`` values at the base level. Runs
    are independent and may execute in parallel; results merge in level order.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    workers = _workers() if workers is None else workers
    g = scenario.grid
    cfgs = [cfg.refined(k) for k in range(levels)]
    eps_cfgs = [replace(cfg, eps_reg=e) for e in eps_values]
    finals = _map(_final_state, [(c, scenario) for c in cfgs + eps_cfgs], workers)
    zl, ze = finals[:len(cfgs)], finals[len(cfgs):]
    diffs = [lq_norm(g, zl[k] - zl[k + 1]) for k in range(levels - 1)]
    ratios = [diffs[k + 1] / diffs[k] if diffs[k] > 0 else 0.0 for k in range(len(diffs) - 1)]
    ediffs = [lq_norm(g, ze[k] - ze[k + 1]) for k in range(len(ze) - 1)]
    non_inc = all(b <= a for a, b in zip(diffs, diffs[1:]))
    eps_mono = all(b <= a for a, b in zip(ediffs, ediffs[1:]))
    return ConvergenceTable([c.level for c in cfgs], diffs, ratios, list(eps_values), ediffs,
                            bool(non_inc), bool(eps_mono))
