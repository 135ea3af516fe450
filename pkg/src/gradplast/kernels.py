"""Hot loops: Jacobi-preconditioned CG on CSR matrices and the pointwise flow maps.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy/scipy version. ``GRADPLAST_NUMBA=0`` selects the latter; the
public wrappers at the bottom dispatch on :data:`gradplast._accel.USE_NUMBA`.
Both paths implement the same arithmetic, so results agree to rounding.
"""
import numpy as np
import scipy.sparse as sp

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# preconditioned conjugate gradients
# ---------------------------------------------------------------------------


@njit
def _csr_matvec_nb(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc


@njit
def _pcg_nb(indptr, indices, data, dinv, b, x, tol, maxiter):
    n = b.shape[0]
    bnorm = 0.0
    for i in range(n):
        bnorm += b[i] * b[i]
    bnorm = np.sqrt(bnorm)
    if bnorm == 0.0:
        for i in range(n):
            x[i] = 0.0
        return 0, 0.0
    r = np.empty(n)
    z = np.empty(n)
    p = np.empty(n)
    q = np.empty(n)
    _csr_matvec_nb(indptr, indices, data, x, q)
    rr = 0.0
    rz = 0.0
    for i in range(n):
        r[i] = b[i] - q[i]
        z[i] = dinv[i] * r[i]
        p[i] = z[i]
        rr += r[i] * r[i]
        rz += r[i] * z[i]
    res = np.sqrt(rr) / bnorm
    it = 0
    while res > tol and it < maxiter:
        _csr_matvec_nb(indptr, indices, data, p, q)
        pq = 0.0
        for i in range(n):
            pq += p[i] * q[i]
        alpha = rz / pq
        rr = 0.0
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * q[i]
            rr += r[i] * r[i]
        res = np.sqrt(rr) / bnorm
        it += 1
        if res <= tol:
            break
        rz_new = 0.0
        for i in range(n):
            z[i] = dinv[i] * r[i]
            rz_new += r[i] * z[i]
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]
    return it, res


def _pcg_np(A, dinv, b, x, tol, maxiter):
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol and it < maxiter:
        q = A @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        res = np.linalg.norm(r) / bnorm
        it += 1
        if res <= tol:
            break
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return it, res


def pcg(A, b, x0=None, tol=1e-10, maxiter=10000, dinv=None):
    """Solve ``A x = b`` for SPD CSR ``A`` with a Jacobi preconditioner.

    Returns ``(x, iterations, relative_residual)``; the caller decides what
    to do when the residual target was missed.
    """
    A = sp.csr_matrix(A)
    b = np.ascontiguousarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if dinv is None:
        dinv = 1.0 / A.diagonal()
    if USE_NUMBA:
        it, res = _pcg_nb(A.indptr, A.indices, A.data, dinv, b, x, float(tol), int(maxiter))
    else:
        it, res = _pcg_np(A, dinv, b, x, tol, maxiter)
    return x, int(it), float(res)


# ---------------------------------------------------------------------------
# pointwise flow maps on generalized stresses in R^10 = (vec p, gamma)
# ---------------------------------------------------------------------------


@njit
def _norton_hoff_nb(S, sigma_y, r, eta, kappa, out, pot):
    n = S.shape[0]
    for k in range(n):
        t3 = (S[k, 0] + S[k, 4] + S[k, 8]) / 3.0
        nd2 = 0.0
        for c in range(9):
            v = S[k, c]
            if c == 0 or c == 4 or c == 8:
                v -= t3
            nd2 += v * v
        nd = np.sqrt(nd2)
        phi = nd - kappa * S[k, 9] - sigma_y
        for c in range(10):
            out[k, c] = 0.0
        pot[k] = 0.0
        if phi <= 0.0:
            continue
        amp = eta * phi ** r
        pot[k] = eta * phi ** (r + 1.0) / (r + 1.0)
        if nd > 0.0:
            s = amp / nd
            for c in range(9):
                v = S[k, c]
                if c == 0 or c == 4 or c == 8:
                    v -= t3
                out[k, c] = s * v
        out[k, 9] = -kappa * amp


def _dev9(P):
    d = P.copy()
    t3 = (P[:, 0] + P[:, 4] + P[:, 8]) / 3.0
    d[:, 0] -= t3
    d[:, 4] -= t3
    d[:, 8] -= t3
    return d


def _norton_hoff_np(S, sigma_y, r, eta, kappa):
    d = _dev9(S[:, :9])
    nd = np.sqrt(np.einsum("ij,ij->i", d, d))
    phi = nd - kappa * S[:, 9] - sigma_y
    active = phi > 0.0
    phi_a = phi[active]
    amp = eta * phi_a ** r
    out = np.zeros_like(S)
    pot = np.zeros(S.shape[0])
    pot[active] = eta * phi_a ** (r + 1.0) / (r + 1.0)
    nd_a = nd[active]
    scale = np.where(nd_a > 0.0, amp / np.where(nd_a > 0.0, nd_a, 1.0), 0.0)
    out[active, :9] = scale[:, None] * d[active]
    out[active, 9] = -kappa * amp
    return out, pot


@njit
def _non_associative_nb(S, sigma_y, r, eta, beta, kappa, out):
    n = S.shape[0]
    for k in range(n):
        t3 = (S[k, 0] + S[k, 4] + S[k, 8]) / 3.0
        nd2 = 0.0
        for c in range(9):
            v = S[k, c]
            if c == 0 or c == 4 or c == 8:
                v -= t3
            nd2 += v * v
        nd = np.sqrt(nd2)
        phi = nd - kappa * S[k, 9] - sigma_y
        for c in range(10):
            out[k, c] = 0.0
        if phi <= 0.0:
            continue
        f1 = eta * phi ** r
        gn2 = 0.0
        for i in range(3):
            for j in range(3):
                c = 3 * i + j
                v = S[k, c]
                if i == j:
                    v -= t3
                skew = 0.5 * (S[k, c] - S[k, 3 * j + i])
                g = f1 * (v + beta * skew)
                out[k, c] = g
                gn2 += g * g
        out[k, 9] = -kappa * np.sqrt(gn2)


def _non_associative_np(S, sigma_y, r, eta, beta, kappa):
    P = S[:, :9]
    d = _dev9(P)
    skew = 0.5 * (P - P.reshape(-1, 3, 3).transpose(0, 2, 1).reshape(-1, 9))
    nd = np.sqrt(np.einsum("ij,ij->i", d, d))
    phi = nd - kappa * S[:, 9] - sigma_y
    f1 = np.where(phi > 0.0, eta * np.maximum(phi, 0.0) ** r, 0.0)
    out = np.zeros_like(S)
    out[:, :9] = f1[:, None] * (d + beta * skew)
    out[:, 9] = -kappa * np.sqrt(np.einsum("ij,ij->i", out[:, :9], out[:, :9]))
    return out


def norton_hoff(S, sigma_y, r, eta, kappa=0.0):
    """Rates and potential values of the Norton-Hoff map; ``S`` is ``(n, 10)``."""
    S = np.ascontiguousarray(S, dtype=np.float64)
    if USE_NUMBA:
        out = np.empty_like(S)
        pot = np.empty(S.shape[0])
        _norton_hoff_nb(S, float(sigma_y), float(r), float(eta), float(kappa), out, pot)
        return out, pot
    return _norton_hoff_np(S, sigma_y, r, eta, kappa)


def non_associative(S, sigma_y, r, eta, beta, kappa=0.0):
    S = np.ascontiguousarray(S, dtype=np.float64)
    if USE_NUMBA:
        out = np.empty_like(S)
        _non_associative_nb(S, float(sigma_y), float(r), float(eta), float(beta),
                            float(kappa), out)
        return out
    return _non_associative_np(S, sigma_y, r, eta, beta, kappa)


# The numpy variants stay importable for the backend comparison benchmark.
numpy_impl = {
    "pcg": _pcg_np,
    "norton_hoff": _norton_hoff_np,
    "non_associative": _non_associative_np,
}
