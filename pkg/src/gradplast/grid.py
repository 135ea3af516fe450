"""Structured node grids on an axis-aligned box and pointwise tensor algebra.

Fields are plain numpy arrays with the node axis first, flattened in C order
over ``(nx, ny, nz)``:

* matrix fields: ``(n_nodes, 3, 3)``
* vector fields: ``(n_nodes, 3)``
* internal-state fields ``z = (vec p, gamma)``: ``(n_nodes, 10)``, with ``vec``
  the row-major flattening of ``p``.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridMismatchError(ValueError):
    """A field does not live on the grid it was combined with."""


@dataclass(frozen=True)
class Grid:
    dims: tuple
    spacing: tuple
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("dims, spacing and origin need three entries each")
        if min(dims) < 3:
            raise ValueError(f"every axis needs at least 3 nodes, got {dims}")
        if min(spacing) <= 0.0:
            raise ValueError(f"spacings must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def box(cls, n, lengths=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        """Grid with ``n`` nodes per axis (or a triple) spanning ``lengths``."""
        dims = (n, n, n) if np.isscalar(n) else tuple(n)
        spacing = tuple(L / (d - 1) for L, d in zip(lengths, dims))
        return cls(dims, spacing, origin)

    @property
    def n_nodes(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def lengths(self):
        return tuple(h * (n - 1) for h, n in zip(self.spacing, self.dims))

    @property
    def volume(self):
        lx, ly, lz = self.lengths
        return lx * ly * lz

    @cached_property
    def index(self):
        """``(n_nodes, 3)`` integer node indices."""
        nx, ny, nz = self.dims
        ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        return np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)

    @cached_property
    def coords(self):
        return np.asarray(self.origin) + self.index * np.asarray(self.spacing)

    @cached_property
    def weights(self):
        """Trapezoidal quadrature weight of every node."""
        w = []
        for n, h in zip(self.dims, self.spacing):
            wa = np.full(n, h)
            wa[0] = wa[-1] = 0.5 * h
            w.append(wa)
        return np.einsum("i,j,k->ijk", *w).ravel()

    @cached_property
    def on_face(self):
        """``(n_nodes, 3)`` bool: node lies on a face with normal ``e_a``."""
        idx = self.index
        dims = np.asarray(self.dims)
        return (idx == 0) | (idx == dims - 1)

    @cached_property
    def boundary(self):
        return self.on_face.any(axis=1)

    @cached_property
    def interior(self):
        return ~self.boundary

    def distance_to_boundary(self):
        """Node distance (in index steps) to the nearest face."""
        idx = self.index
        dims = np.asarray(self.dims)
        return np.minimum(idx, dims - 1 - idx).min(axis=1)

    def check(self, field, what="field"):
        if np.shape(field)[0] != self.n_nodes:
            raise GridMismatchError(
                f"{what} has {np.shape(field)[0]} nodes, grid has {self.n_nodes}")
        return field

    def zeros_matrix(self):
        return np.zeros((self.n_nodes, 3, 3))

    def zeros_state(self):
        return np.zeros((self.n_nodes, 10))


# ---------------------------------------------------------------------------
# pointwise algebra
# ---------------------------------------------------------------------------

def sym(f):
    return 0.5 * (f + np.swapaxes(f, -1, -2))


def skew(f):
    return 0.5 * (f - np.swapaxes(f, -1, -2))


def tr(f):
    return np.trace(f, axis1=-2, axis2=-1)


def dev(f):
    return f - tr(f)[..., None, None] / 3.0 * np.eye(3)


def sym_dev_tr(f):
    """``(sym f, dev f, tr f)`` per node."""
    return sym(f), dev(f), tr(f)


def B(z):
    """Plastic-distortion block of an internal state: ``(n, 10) -> (n, 3, 3)``."""
    return np.asarray(z)[:, :9].reshape(-1, 3, 3)


def BT(tau):
    """Adjoint of :func:`B`: embed a matrix field as ``(vec tau, 0)``."""
    tau = np.asarray(tau)
    out = np.zeros((tau.shape[0], 10))
    out[:, :9] = tau.reshape(-1, 9)
    return out


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------

def _flat(f, n):
    return np.asarray(f, dtype=float).reshape(n, -1)


def inner_product(grid, f, g):
    """Trapezoidal ``∫ f·g`` with the Frobenius product per node."""
    grid.check(f)
    grid.check(g, "second field")
    n = grid.n_nodes
    ff, gg = _flat(f, n), _flat(g, n)
    if ff.shape != gg.shape:
        raise GridMismatchError(f"component mismatch {ff.shape} vs {gg.shape}")
    return float(grid.weights @ np.einsum("ij,ij->i", ff, gg))


def lq_norm(grid, f, q=2.0):
    """Discrete ``L^q`` norm of the pointwise Frobenius magnitude."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    grid.check(f)
    ff = _flat(f, grid.n_nodes)
    mag = np.sqrt(np.einsum("ij,ij->i", ff, ff))
    if q == 2:
        return float(np.sqrt(grid.weights @ mag**2))
    return float((grid.weights @ mag**q) ** (1.0 / q))


# ---------------------------------------------------------------------------
# micro-hard boundary condition
# ---------------------------------------------------------------------------

class TangentialMask:
    """Componentwise form of ``p × n = 0`` on the faces of the box.

    On a face with normal ``e_a`` the tangential part of every row of ``p``
    vanishes, i.e. ``p[i, j] = 0`` for ``j != a``. Edge and corner nodes carry
    the union of their faces' constraints.
    """

    def __init__(self, grid):
        self.grid = grid
        constrained = np.zeros((grid.n_nodes, 3, 3), dtype=bool)
        for a in range(3):
            face = grid.on_face[:, a]
            cols = [j for j in range(3) if j != a]
            constrained[np.ix_(face, [0, 1, 2], cols)] = True
        self.constrained = constrained
        self.free = ~constrained
        # traceless-admissible projection: free diagonal entries share the trace
        diag_free = np.stack([self.free[:, i, i] for i in range(3)], axis=1)
        self._diag_free = diag_free
        self._n_diag_free = diag_free.sum(axis=1)

    def apply(self, f):
        """Zero every constrained component (idempotent)."""
        self.grid.check(f)
        return np.where(self.constrained, 0.0, f)

    def violation(self, f):
        return float(np.abs(np.where(self.constrained, f, 0.0)).max(initial=0.0))

    def project_admissible(self, f):
        """Orthogonal projection onto masked, traceless matrices, node by node."""
        g = self.apply(f)
        d = np.stack([g[:, i, i] for i in range(3)], axis=1)
        cnt = np.maximum(self._n_diag_free, 1)
        mean = np.where(self._n_diag_free > 0, d.sum(axis=1) / cnt, 0.0)
        for i in range(3):
            g[:, i, i] -= np.where(self._diag_free[:, i], mean, 0.0)
        return g

    def project_state(self, z):
        """Admissible projection of the ``p`` block; ``gamma`` passes through."""
        out = np.array(z, dtype=float, copy=True)
        out[:, :9] = self.project_admissible(B(z)).reshape(-1, 9)
        return out
