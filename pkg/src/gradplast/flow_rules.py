"""Monotone flow maps ``g`` on generalized stresses ``Σ = (vec Σ_p, Σ_γ) ∈ R^10``.

Two rule families ship:

* :class:`NortonHoff` - ``g = ∂f`` with
  ``f(Σ) = η/(r+1) [|dev Σ_p| - κ Σ_γ - σ_y]_+^{r+1}``. The rate of the
  plastic block is ``η [·]_+^r dev Σ_p / |dev Σ_p|`` and the hardening rate is
  ``-κ |g_p|``.
* :class:`NonAssociative` - ``g = F₁(Σ) ∂F₂(Σ)`` with
  ``F₁ = η [|dev Σ_p| - κ Σ_γ - σ_y]_+^r`` and
  ``F₂ = ½|dev Σ_p|² + ½β|skew Σ_p|²``. It has no potential; monotonicity
  depends on the parameters and is checked by sampling.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .grid import B


def _as_rows(S):
    S = np.asarray(S, dtype=float)
    single = S.ndim == 1
    S = S.reshape(-1, 10)
    return S, single


class NoPotentialError(TypeError):
    """The rule is not of subdifferential type."""


@dataclass(frozen=True)
class NortonHoff:
    sigma_y: float = 0.1
    r: float = 1.0
    eta: float = 1.0
    kappa: float = 0.0

    has_potential = True
    name = "norton_hoff"

    def __post_init__(self):
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be >= 0")
        if self.r <= 0:
            raise ValueError("r must be > 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")

    def __call__(self, S):
        S, single = _as_rows(S)
        out, _ = kernels.norton_hoff(S, self.sigma_y, self.r, self.eta, self.kappa)
        return out[0] if single else out

    def potential(self, S):
        S, single = _as_rows(S)
        _, pot = kernels.norton_hoff(S, self.sigma_y, self.r, self.eta, self.kappa)
        return pot[0] if single else pot

    def params(self):
        return {"sigma_y": self.sigma_y, "r": self.r, "eta": self.eta, "kappa": self.kappa}


@dataclass(frozen=True)
class NonAssociative:
    sigma_y: float = 0.0
    r: float = 1.0
    eta: float = 1.0
    beta: float = 0.5
    kappa: float = 0.0

    has_potential = False
    name = "non_associative"

    def __post_init__(self):
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be >= 0")
        if self.r <= 0:
            raise ValueError("r must be > 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")

    def __call__(self, S):
        S, single = _as_rows(S)
        out = kernels.non_associative(S, self.sigma_y, self.r, self.eta, self.beta, self.kappa)
        return out[0] if single else out

    def potential(self, S):
        raise NoPotentialError("non-associative rules have no potential")

    def params(self):
        return {"sigma_y": self.sigma_y, "r": self.r, "eta": self.eta,
                "beta": self.beta, "kappa": self.kappa}


RULES = {"norton_hoff": NortonHoff, "non_associative": NonAssociative}


def eval_g(rule, Sigma):
    return rule(Sigma)


def eval_potential(rule, Sigma, shift_at=None):
    """Potential ``f``, optionally shifted so that ``f(shift_at) = 0`` nodewise."""
    if not rule.has_potential:
        raise NoPotentialError(f"{rule.name} has no potential")
    f = rule.potential(Sigma)
    if shift_at is not None:
        f = f - rule.potential(shift_at)
    return f


# ---------------------------------------------------------------------------
# growth class
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthCertificate:
    """Constants of the two-sided growth condition.

    ``alpha, m`` belong to the combined inequality
    ``α(|v|^q/q + |v*|^{q*}/q*) ≤ v·v* + m``; ``alpha1, m1`` to the bound
    ``|v*|^{q*} ≤ m1 + α1 |v|^q`` and ``alpha2, m2`` to the coercivity
    ``v·v* ≥ m2 + α2 |v|^q``.
    """
    q: float
    alpha: float
    m: float = 0.0
    alpha1: float = 1.0
    m1: float = 0.0
    alpha2: float = 1.0
    m2: float = 0.0

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError("q must exceed 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.m < 0:
            raise ValueError("m must be nonnegative")

    @property
    def q_star(self):
        return self.q / (self.q - 1.0)

    @classmethod
    def for_norton_hoff(cls, rule):
        """Certificate for a Norton-Hoff rule with ``κ = 0`` and ``q = r + 1``.

        With ``s = |dev v|`` and ``φ = [s - σ_y]_+``: ``|g|^{q*} = η^{q*} φ^q``,
        ``v·g = η φ^r s`` and ``φ ≥ s/c`` once ``s ≥ c σ_y / (c-1)`` (``c = 2``,
        or ``c = 1`` when ``σ_y = 0``).
        """
        if rule.kappa != 0:
            raise ValueError("certificate derivation assumes kappa = 0")
        q = rule.r + 1.0
        qs = q / (q - 1.0)
        eta, r, sy = rule.eta, rule.r, rule.sigma_y
        c = 1.0 if sy == 0 else 2.0
        knee = 0.0 if sy == 0 else c * sy / (c - 1.0)
        alpha2 = eta * c ** (-r)
        m2 = -alpha2 * knee ** q
        alpha = 1.0 / (c ** r / (eta * q) + eta ** (qs - 1.0) / qs)
        m = alpha * knee ** q / q
        return cls(q=q, alpha=alpha, m=m, alpha1=eta ** qs, m1=0.0, alpha2=alpha2, m2=m2)


@dataclass
class CheckReport:
    name: str
    passed: bool
    n_samples: int
    worst_slack: float
    details: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)

    def summary(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {flag} (samples={self.n_samples}, worst slack={self.worst_slack:.3e})"


def _deviatoric_directions(rng, n):
    """Unit vectors in sl(3) x {0}."""
    V = rng.standard_normal((n, 10))
    V[:, 9] = 0.0
    t3 = (V[:, 0] + V[:, 4] + V[:, 8]) / 3.0
    for c in (0, 4, 8):
        V[:, c] -= t3
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def growth_samples(rng, samples, radii):
    """The origin plus points spread over balls of growing radius."""
    pts = [np.zeros((1, 10))]
    counts = [len(c) for c in np.array_split(np.arange(max(samples - 1, 0)), len(radii))]
    for R, k in zip(radii, counts):
        d = _deviatoric_directions(rng, k)
        rad = R * rng.uniform(0.0, 1.0, k) ** (1.0 / 8.0)
        pts.append(d * rad[:, None])
    return np.concatenate(pts)


def check_growth(rule, cert, samples=2000, seed=0, radii=(1e-2, 1e-1, 1.0, 10.0, 100.0),
                 rtol=1e-12, max_witnesses=5):
    """Sample the growth inequalities with the certificate's constants.

    Stresses are drawn from the admissible subspace ``sl(3) × {0}``, where the
    rule acts; trace and hardening directions carry no coercivity by design.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    v = growth_samples(rng, samples, radii)
    vs = rule(v)
    a = np.linalg.norm(v, axis=1)
    b = np.linalg.norm(vs, axis=1)
    q, qs = cert.q, cert.q_star
    dot = np.einsum("ij,ij->i", v, vs)
    checks = {
        "combined": (dot + cert.m - cert.alpha * (a ** q / q + b ** qs / qs),
                     np.abs(dot) + cert.m + cert.alpha * (a ** q / q + b ** qs / qs)),
        "upper": (cert.m1 + cert.alpha1 * a ** q - b ** qs,
                  abs(cert.m1) + cert.alpha1 * a ** q + b ** qs),
        "coercive": (dot - cert.m2 - cert.alpha2 * a ** q,
                     np.abs(dot) + abs(cert.m2) + cert.alpha2 * a ** q),
    }
    details, witnesses, worst, ok = {}, [], np.inf, True
    for key, (slack, scale) in checks.items():
        rel = slack / np.maximum(scale, 1e-300)
        bad = np.flatnonzero(slack < -rtol * np.maximum(scale, 1.0))
        details[key] = {"worst_slack": float(slack.min()), "worst_rel": float(rel.min()),
                        "violations": int(bad.size)}
        worst = min(worst, float(rel.min()))
        ok &= bad.size == 0
        for i in bad[:max_witnesses]:
            witnesses.append({"inequality": key, "v": v[i].tolist(), "g": vs[i].tolist(),
                              "slack": float(slack[i])})
    return CheckReport("growth", bool(ok), int(v.shape[0]), worst, details, witnesses)


def monotonicity_pairs(rng, n_pairs, sigma_y=0.0):
    """Random pairs in R^10: far pairs over several scales, close pairs, near-yield pairs."""
    k = n_pairs // 3
    scales = 10.0 ** rng.uniform(-2, 2, n_pairs)
    v1 = rng.standard_normal((n_pairs, 10)) * scales[:, None]
    v2 = rng.standard_normal((n_pairs, 10)) * scales[:, None]
    # close pairs probe the local Jacobian
    v2[k:2 * k] = v1[k:2 * k] + 1e-3 * scales[k:2 * k, None] * rng.standard_normal((k, 10))
    # pairs straddling the yield surface
    if sigma_y > 0:
        d = _deviatoric_directions(rng, n_pairs - 2 * k)
        rad = sigma_y * (1.0 + 0.05 * rng.standard_normal(n_pairs - 2 * k))
        v1[2 * k:] = d * rad[:, None]
        v2[2 * k:] = v1[2 * k:] + 0.05 * sigma_y * rng.standard_normal((n_pairs - 2 * k, 10))
    return v1, v2


def check_monotonicity(rule, n_pairs=10_000, seed=0, rtol=1e-12, max_witnesses=5):
    """Sampled ``(g(v1) - g(v2))·(v1 - v2) ≥ -rtol |Δv||Δg|``."""
    rng = np.random.default_rng(seed)
    v1, v2 = monotonicity_pairs(rng, n_pairs, getattr(rule, "sigma_y", 0.0))
    dv = v1 - v2
    dg = rule(v1) - rule(v2)
    dot = np.einsum("ij,ij->i", dv, dg)
    scale = np.linalg.norm(dv, axis=1) * np.linalg.norm(dg, axis=1)
    rel = np.where(scale > 0, dot / np.where(scale > 0, scale, 1.0), 0.0)
    bad = np.flatnonzero(dot < -rtol * scale)
    witnesses = [{"v1": v1[i].tolist(), "v2": v2[i].tolist(), "product": float(dot[i])}
                 for i in bad[:max_witnesses]]
    g0 = rule(np.zeros(10))
    details = {"violations": int(bad.size), "g_at_zero_max": float(np.abs(g0).max())}
    passed = bad.size == 0 and not np.any(g0)
    return CheckReport("monotonicity", bool(passed), n_pairs, float(rel.min()), details, witnesses)


def _fit_affine_envelope(a, b, t):
    """Smallest (in total) nonnegative ``c0 + c1 a + c2 b`` lying above ``t``."""
    A_ub = -np.column_stack([np.ones_like(a), a, b])
    cost = np.array([a.size, a.sum(), b.sum()])
    res = linprog(cost, A_ub=A_ub, b_ub=-t, bounds=[(0, None)] * 3, method="highs")
    if not res.success:
        return np.array([t.max(), 0.0, 0.0])
    return res.x


def check_self_controlling(rule, L, grid, samples=20, amplitudes=(1.0, 10.0, 100.0),
                           bound=None, seed=0, safety=1.1):
    """Compare ``‖B g(y)‖₂`` against ``F(‖L g(y)‖₂, ‖y‖₂)`` on random fields.

    ``bound`` is a callable ``F(a, b)``; by default an affine envelope is fitted
    on an independent calibration draw, scaled by ``safety`` and evaluated on
    fresh samples.
    """
    rng = np.random.default_rng(seed)
    w = grid.weights

    def norms(y):
        gy = rule(y)
        nb = np.sqrt(w @ np.einsum("ij,ij->i", gy[:, :9], gy[:, :9]))
        Lg = L.apply(gy)
        nl = np.sqrt(w @ np.einsum("ij,ij->i", Lg, Lg))
        ny = np.sqrt(w @ np.einsum("ij,ij->i", y, y))
        return nb, nl, ny

    def draw(amp):
        y = amp * rng.standard_normal((grid.n_nodes, 10))
        return norms(y)

    fitted = None
    if bound is None:
        cal = np.array([draw(a) for a in amplitudes for _ in range(max(2, samples // 2))])
        cal = np.vstack([cal, norms(np.zeros((grid.n_nodes, 10)))])
        fitted = safety * _fit_affine_envelope(cal[:, 1], cal[:, 2], cal[:, 0])
        c0, c1, c2 = fitted
        bound = lambda a, b: c0 + c1 * a + c2 * b  # noqa: E731

    per_amp = {}
    worst = np.inf
    for amp in amplitudes:
        rows = np.array([draw(amp) for _ in range(samples)])
        margin = bound(rows[:, 1], rows[:, 2]) - rows[:, 0]
        per_amp[float(amp)] = {"min_margin": float(margin.min()),
                               "mean_margin": float(margin.mean())}
        worst = min(worst, float(margin.min()))
    zero = norms(np.zeros((grid.n_nodes, 10)))
    mins = [per_amp[float(a)]["min_margin"] for a in amplitudes]
    trend = np.sign(np.diff(mins))
    details = {"per_amplitude": per_amp, "margin_at_zero": float(bound(zero[1], zero[2]) - zero[0]),
               "monotone_in_amplitude": bool(np.all(trend >= 0) or np.all(trend <= 0)),
               "fitted": None if fitted is None else [float(c) for c in fitted]}
    return CheckReport("self_controlling", bool(worst >= 0), samples * len(amplitudes),
                       worst, details)


def check_initial_compatibility(rule, sigma0):
    """``g(Bᵀσ⁽⁰⁾) = 0`` at every node."""
    S = np.zeros((np.shape(sigma0)[0], 10))
    S[:, :9] = np.asarray(sigma0).reshape(-1, 9)
    return bool(not np.any(rule(S)))


def rate_block(rule, Sigma):
    """Plastic-distortion block of ``g(Σ)`` as a matrix field."""
    return B(rule(Sigma))
