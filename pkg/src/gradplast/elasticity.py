"""Linear elasticity with homogeneous Dirichlet data, Helmholtz-type projectors.

The discrete problem is the Galerkin form of ``-div σ = b``,
``σ = ℂ(sym ∇u - ε_p)``, ``u = 0`` on the boundary, over nodal displacements:

    Dᵀ W ℂ D u = Dᵀ W ℂ ε_p + W b        (interior nodes only)

with ``D`` the collocated symmetric gradient and ``W`` the trapezoidal weights.
``P ε_p = D u`` (for ``b = 0``) is then the ℂ-orthogonal projection onto
compatible strains in the weighted inner product, and ``Q = I - P``.
"""
import numpy as np
import scipy.sparse as sp

from . import kernels
from .curl import gradient_matrices
from .grid import B, BT, sym, tr


class ConvergenceError(RuntimeError):
    """An iterative solver missed its residual target."""


class ElasticTensor:
    """Isotropic, possibly heterogeneous ``ℂ`` from nodal Lamé parameters."""

    def __init__(self, grid, lam, mu):
        self.grid = grid
        self.lam = np.broadcast_to(np.asarray(lam, dtype=float), (grid.n_nodes,)).copy()
        self.mu = np.broadcast_to(np.asarray(mu, dtype=float), (grid.n_nodes,)).copy()
        if np.any(self.mu <= 0) or np.any(3 * self.lam + 2 * self.mu <= 0):
            raise ValueError("ℂ must be positive definite: need mu > 0 and 3 lam + 2 mu > 0")

    def apply(self, eps):
        return (2.0 * self.mu[:, None, None] * eps
                + (self.lam * tr(eps))[:, None, None] * np.eye(3))

    def compliance(self, sig):
        """``𝔹 σ = ℂ⁻¹ σ``."""
        mu, lam = self.mu, self.lam
        k = lam / (2.0 * mu * (3.0 * lam + 2.0 * mu))
        return sig / (2.0 * mu[:, None, None]) - (k * tr(sig))[:, None, None] * np.eye(3)

    @property
    def eig_bounds(self):
        """Smallest and largest eigenvalue of ℂ over all nodes."""
        e1, e2 = 2.0 * self.mu, 3.0 * self.lam + 2.0 * self.mu
        return float(min(e1.min(), e2.min())), float(max(e1.max(), e2.max()))

    @property
    def compliance_lower_bound(self):
        """``α_𝔹``: smallest nodal eigenvalue of 𝔹."""
        return 1.0 / self.eig_bounds[1]

    def block_matrix(self):
        """Per-node 9x9 matrices of ℂ acting on ``vec`` (as a sparse block diagonal)."""
        e = np.eye(3).reshape(9)
        blocks = (2.0 * self.mu[:, None, None] * np.eye(9)
                  + self.lam[:, None, None] * np.outer(e, e))
        return sp.block_diag(list(blocks), format="csr")


class HardeningMap:
    """Symmetric PSD map ``L`` on ``R^10`` applied node by node."""

    def __init__(self, matrix):
        L = np.asarray(matrix, dtype=float)
        if L.shape != (10, 10):
            raise ValueError(f"hardening matrix must be 10x10, got {L.shape}")
        if not np.allclose(L, L.T, rtol=0, atol=1e-14 * max(1.0, np.abs(L).max())):
            raise ValueError("hardening matrix must be symmetric")
        ev = np.linalg.eigvalsh(L)
        if ev[0] < -1e-12 * max(1.0, ev[-1]):
            raise ValueError(f"hardening matrix must be PSD, smallest eigenvalue {ev[0]}")
        self.matrix = L
        # (Lz, z) >= alpha |gamma|^2: Schur complement of the p-block
        Lpp, Lpg, Lgg = L[:9, :9], L[:9, 9], L[9, 9]
        self.alpha = float(Lgg - Lpg @ np.linalg.pinv(Lpp) @ Lpg)
        w, V = np.linalg.eigh(L)
        self._sqrt = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T

    @classmethod
    def isotropic(cls, k_iso):
        L = np.zeros((10, 10))
        L[9, 9] = k_iso
        return cls(L)

    def apply(self, z):
        return np.asarray(z) @ self.matrix.T

    def sqrt_apply(self, z):
        return np.asarray(z) @ self._sqrt.T


def _sym_grad_matrix(grid):
    G = gradient_matrices(grid)
    n = grid.n_nodes
    D = sp.csr_matrix((9 * n, 3 * n))
    for i in range(3):
        for j in range(3):
            Ej = np.zeros((9, 3))
            Ej[3 * i + j, i] = 0.5
            Ei = np.zeros((9, 3))
            Ei[3 * i + j, j] = 0.5
            D = D + sp.kron(G[j], sp.csr_matrix(Ej)) + sp.kron(G[i], sp.csr_matrix(Ei))
    return D.tocsr()


class ElasticSolver:
    """Dirichlet solver bundle: grid, ℂ, CG tolerance and iteration cap."""

    def __init__(self, grid, tensor, tol_cg=1e-10, max_iter=5000):
        if not 0.0 < tol_cg < 1.0:
            raise ValueError(f"tol_cg must lie in (0, 1), got {tol_cg}")
        self.grid = grid
        self.tensor = tensor
        self.tol_cg = float(tol_cg)
        self.max_iter = int(max_iter)
        self.last_info = {}
        n = grid.n_nodes
        self._free = np.flatnonzero(np.repeat(grid.interior, 3))
        D_full = _sym_grad_matrix(grid)
        self.D_full = D_full
        self.D = D_full[:, self._free].tocsr()
        w9 = sp.diags(np.repeat(grid.weights, 9))
        self._WC = (w9 @ tensor.block_matrix()).tocsr()
        self._DtWC = (self.D.T @ self._WC).tocsr()
        self.K = (self._DtWC @ self.D).tocsr()
        self._dinv = 1.0 / self.K.diagonal()
        self._mass = np.repeat(grid.weights, 3)[self._free]
        self._n = n
        self._stability = None

    # -- core solve ---------------------------------------------------------

    def _check_sym(self, eps_p):
        self.grid.check(eps_p, "eps_p")
        scale = max(1.0, float(np.abs(eps_p).max(initial=0.0)))
        asym = float(np.abs(eps_p - np.swapaxes(eps_p, 1, 2)).max(initial=0.0))
        if asym > 1e-12 * scale:
            raise ValueError(f"eps_p must be symmetric (asymmetric part {asym:.3e})")

    def rhs(self, eps_p=None, b=None):
        f = np.zeros(self._free.size)
        if eps_p is not None:
            f += self._DtWC @ np.asarray(eps_p, dtype=float).reshape(-1)
        if b is not None:
            self.grid.check(b, "b")
            f += self._mass * np.asarray(b, dtype=float).reshape(-1)[self._free]
        return f

    def solve_dirichlet(self, eps_p=None, b=None, tol=None):
        """Return ``(u, σ)`` for plastic strain ``eps_p`` and body force ``b``."""
        if eps_p is not None:
            self._check_sym(eps_p)
        tol = self.tol_cg if tol is None else tol
        f = self.rhs(eps_p, b)
        x, it, res = kernels.pcg(self.K, f, tol=tol, maxiter=self.max_iter, dinv=self._dinv)
        self.last_info = {"iterations": it, "residual": res}
        if res > tol:
            raise ConvergenceError(
                f"CG stopped at relative residual {res:.3e} > {tol:.1e} after {it} iterations")
        u = np.zeros(3 * self._n)
        u[self._free] = x
        u = u.reshape(-1, 3)
        strain = self.strain(u)
        eps = 0.0 if eps_p is None else eps_p
        sigma = self.tensor.apply(strain - eps)
        return u, sigma

    def strain(self, u):
        """Discrete ``sym ∇u``."""
        return (self.D_full @ np.asarray(u, dtype=float).reshape(-1)).reshape(-1, 3, 3)

    def stability_constant(self):
        """``C`` with ``‖sym∇u‖ ≤ C (‖ε_p‖ + ‖b‖)`` on this grid.

        ``sqrt(c_max/c_min)`` bounds the projector part; the load part uses
        the discrete Korn-Poincaré constant from the smallest generalized
        eigenvalue of ``DᵀWD`` against the nodal mass.
        """
        if self._stability is None:
            from scipy.sparse.linalg import eigsh

            DtWD = (self.D.T @ sp.diags(np.repeat(self.grid.weights, 9)) @ self.D).tocsc()
            s = 1.0 / np.sqrt(self._mass)
            Ahat = (sp.diags(s) @ DtWD @ sp.diags(s)).tocsc()
            if Ahat.shape[0] <= 600:
                lam_min = float(np.linalg.eigvalsh(Ahat.toarray())[0])
            else:
                lam_min = float(eigsh(Ahat, k=1, sigma=0.0, which="LM",
                                      return_eigenvectors=False)[0])
            cmin, cmax = self.tensor.eig_bounds
            self._stability = max(np.sqrt(cmax / cmin), 1.0 / (np.sqrt(lam_min) * cmin))
        return self._stability

    # -- projectors ---------------------------------------------------------

    def project_P(self, eps_p, tol=None):
        u, _ = self.solve_dirichlet(eps_p, tol=tol)
        return self.strain(u)

    def project_Q(self, eps_p, tol=None):
        return np.asarray(eps_p) - self.project_P(eps_p, tol=tol)

    def apply_M(self, L, z, tol=None):
        """``(Bᵀ sym ℂ Q sym B + L) z``; the regularizer is added by the caller."""
        self.grid.check(z, "z")
        x = sym(B(z))
        out = BT(self.tensor.apply(self.project_Q(x, tol=tol)))
        if L is not None:
            out += L.apply(z)
        return out

    def elastic_energy_form(self, sigma):
        """``‖𝔹^{1/2} σ‖²`` in the grid inner product."""
        w = self.grid.weights
        return float(w @ np.einsum("nij,nij->n", self.tensor.compliance(sigma), sigma))


def solve_dirichlet(es, eps_p, b=None):
    return es.solve_dirichlet(eps_p, b)


def project_P(es, eps_p):
    return es.project_P(eps_p)


def project_Q(es, eps_p):
    return es.project_Q(eps_p)


def apply_M(es, L, z):
    return es.apply_M(L, z)
