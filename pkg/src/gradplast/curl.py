"""Row-wise discrete Curl with the micro-hard mask, and ``Curl Curl`` as ``S* S``.

The 1-D derivative is the second-order central difference at interior nodes
and the second-order one-sided difference at the two end nodes. The 3-D
operator ``S = Curl ∘ mask`` is stored as an explicit CSR matrix acting on
node-major ``vec`` fields (9 entries per node).

Its adjoint is taken in the trapezoidal inner product ``(f, g) = fᵀ W g``,
so ``A_h = W⁻¹ Sᵀ W S`` and ``(A_h f, g) = (S f, S g)`` for all ``f, g``.
``apply_transpose`` is the literal sparse transpose ``Sᵀ``.
"""
import itertools

import numpy as np
import scipy.sparse as sp

from .grid import TangentialMask

LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in itertools.permutations(range(3)):
    LEVI_CIVITA[_i, _j, _k] = np.linalg.det(np.eye(3)[[_i, _j, _k]])


def derivative_1d(n, h):
    """Second-order derivative matrix on ``n`` equispaced nodes."""
    if n < 3:
        raise ValueError("need at least 3 nodes for a second-order stencil")
    rows = [0, 0, 0, n - 1, n - 1, n - 1]
    cols = [0, 1, 2, n - 3, n - 2, n - 1]
    vals = [-3.0, 4.0, -1.0, 1.0, -4.0, 3.0]
    inner = np.arange(1, n - 1)
    rows += list(inner) * 2
    cols += list(inner - 1) + list(inner + 1)
    vals += [-1.0] * (n - 2) + [1.0] * (n - 2)
    D = sp.coo_matrix((np.array(vals) / (2.0 * h), (rows, cols)), shape=(n, n))
    return D.tocsr()


def gradient_matrices(grid):
    """Partial-derivative matrices ``(∂x, ∂y, ∂z)`` acting on nodal scalars."""
    nx, ny, nz = grid.dims
    hx, hy, hz = grid.spacing
    Ix, Iy, Iz = (sp.identity(n, format="csr") for n in grid.dims)
    return (
        sp.kron(sp.kron(derivative_1d(nx, hx), Iy), Iz, format="csr"),
        sp.kron(sp.kron(Ix, derivative_1d(ny, hy)), Iz, format="csr"),
        sp.kron(sp.kron(Ix, Iy), derivative_1d(nz, hz), format="csr"),
    )


def _curl_matrix(grid):
    # (Curl p)_ij = eps_jkl d_k p_il  (row i of p is a vector field)
    G = gradient_matrices(grid)
    S = sp.csr_matrix((9 * grid.n_nodes, 9 * grid.n_nodes))
    for k in range(3):
        E = np.zeros((9, 9))
        for i, j, l in itertools.product(range(3), repeat=3):
            E[3 * i + j, 3 * i + l] += LEVI_CIVITA[j, k, l]
        S = S + sp.kron(G[k], sp.csr_matrix(E), format="csr")
    S.eliminate_zeros()
    return S


class CurlOperator:
    def __init__(self, grid, mask=None):
        self.grid = grid
        self.mask = TangentialMask(grid) if mask is None else mask
        if self.mask.grid != grid:
            raise ValueError("mask and operator live on different grids")
        self.raw = _curl_matrix(grid)
        keep = sp.diags(self.mask.free.reshape(-1).astype(float))
        self.matrix = (self.raw @ keep).tocsr()
        self.matrix.eliminate_zeros()
        self.matrix_T = self.matrix.T.tocsr()
        self._w9 = np.repeat(grid.weights, 9)

    def _vec(self, f):
        self.grid.check(f)
        return np.asarray(f, dtype=float).reshape(-1)

    def apply(self, f):
        """Masked row-wise Curl of a matrix field."""
        return (self.matrix @ self._vec(f)).reshape(-1, 3, 3)

    def apply_unmasked(self, f):
        return (self.raw @ self._vec(f)).reshape(-1, 3, 3)

    def apply_transpose(self, f):
        return (self.matrix_T @ self._vec(f)).reshape(-1, 3, 3)

    def curl_curl(self, f):
        """``A_h f = W⁻¹ Sᵀ W S f``; symmetric and PSD in the grid inner product."""
        s = self.matrix @ self._vec(f)
        return (self.matrix_T @ (self._w9 * s) / self._w9).reshape(-1, 3, 3)

    def curl_curl_matrix(self):
        """Assembled ``A_h`` (sparse); mainly for small-grid checks."""
        W = sp.diags(self._w9)
        Winv = sp.diags(1.0 / self._w9)
        return (Winv @ self.matrix_T @ W @ self.matrix).tocsr()

    def norm_estimate(self, iters=60, seed=0):
        """Power-iteration estimate of the largest eigenvalue of ``A_h``."""
        rng = np.random.default_rng(seed)
        v = self.mask.apply(rng.standard_normal((self.grid.n_nodes, 3, 3)))
        lam = 0.0
        w = self._w9.reshape(-1, 3, 3)
        for _ in range(iters):
            nv = np.sqrt(np.sum(w * v * v))
            if nv == 0.0:
                return 0.0
            v = v / nv
            Av = self.curl_curl(v)
            lam = float(np.sum(w * v * Av))
            v = Av
        return lam


def curl_apply(op, f):
    return op.apply(f)


def curl_curl_apply(op, f):
    return op.curl_curl(f)
