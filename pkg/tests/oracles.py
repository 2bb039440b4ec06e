"""Independent reference computations kept separate from the library paths.

Everything here is dense (small instances only) or conforming (different
discretization), so agreements with the library are genuine cross-checks.
"""

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from almor.grid import oversampling_domain
from almor.training import apply_transfer


def dense_transfer_matrix(disc, sub, mu, layers=1):
    """Columns = transfer operator applied to unit artificial boundary data."""
    patch = oversampling_domain(disc.grid, sub, layers)
    n_src = len(patch.artificial_trace_dofs)
    cols = []
    for i in range(n_src):
        e = np.zeros(n_src)
        e[i] = 1.0
        cols.append(apply_transfer(disc, sub, mu, e, patch))
    return np.column_stack(cols), patch


def range_gram_factor(disc, sub):
    """Cholesky factor L (G = L L^T) of the local energy Gram on a subdomain."""
    G = np.asarray(disc.components.local_gram(sub).todense())
    return la.cholesky(G, lower=True), G


def transfer_svd(disc, sub, P):
    """SVD of the transfer matrix between Euclidean data and the local
    energy inner product; returns (G-orthonormal left vectors, singular values)."""
    L, G = range_gram_factor(disc, sub)
    U, s, _ = la.svd(L.T @ P, full_matrices=False)
    return la.solve_triangular(L, U, lower=True, trans="T"), s, G, L


def projection_error_norm(P, basis, G, L):
    """Operator norm of P minus its G-orthogonal projection onto ``basis``."""
    if basis is None or (hasattr(basis, "shape") and basis.shape[1] == 0) or \
            (isinstance(basis, list) and not basis):
        E = P
    else:
        B = np.column_stack(basis) if isinstance(basis, list) else basis
        E = P - B @ (B.T @ (G @ P))
    return la.svd(L.T @ E, compute_uv=False)[0]


def conforming_poisson_reaction(n, kappa=1.0, reaction=1.0, f=None):
    """Conforming Q1 solve of -div(kappa grad u) + r u = f on the unit square,
    homogeneous Dirichlet, n x n cells; returns nodal values on the
    (n+1)**2 lattice (row-major by y)."""
    h = 1.0 / n
    m1 = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    k1 = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    mass = np.kron(m1, m1)
    stiff = np.kron(m1, k1) + np.kron(k1, m1)
    cell = kappa * stiff + reaction * mass
    npts = n + 1
    cx, cy = np.meshgrid(np.arange(n), np.arange(n))
    base = (cy * npts + cx).ravel()
    nodes = np.column_stack([base, base + 1, base + npts, base + npts + 1])
    rows = np.repeat(nodes, 4, axis=1).ravel()
    cols = np.tile(nodes, (1, 4)).ravel()
    vals = np.tile(cell.ravel(), n * n)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(npts ** 2, npts ** 2)).tocsr()
    xs = np.linspace(0, 1, npts)
    X, Y = np.meshgrid(xs, xs)
    b = np.zeros(npts ** 2)
    if f is not None:
        # 3x3 Gauss per cell for a smooth source
        gp = np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)])
        gw = np.array([5.0, 8.0, 5.0]) / 18.0
        for a, (gx, wx) in enumerate(zip(gp, gw)):
            for c, (gy, wy) in enumerate(zip(gp, gw)):
                shapes = np.array([(1 - gx) * (1 - gy), gx * (1 - gy),
                                   (1 - gx) * gy, gx * gy])
                px = (cx.ravel() + gx) * h
                py = (cy.ravel() + gy) * h
                fv = f(px, py) * wx * wy * h * h
                for slot in range(4):
                    np.add.at(b, nodes[:, slot], fv * shapes[slot])
    interior = ((X.ravel() > 0) & (X.ravel() < 1) & (Y.ravel() > 0) & (Y.ravel() < 1))
    u = np.zeros(npts ** 2)
    idx = np.where(interior)[0]
    Ai = A[idx][:, idx]
    u[idx] = spla.spsolve(Ai.tocsc(), b[idx])
    return u.reshape(npts, npts)


def dense_generalized_eigs(A, G):
    A = np.asarray(A.todense()) if sp.issparse(A) else np.asarray(A)
    G = np.asarray(G.todense()) if sp.issparse(G) else np.asarray(G)
    return la.eigh(0.5 * (A + A.T), 0.5 * (G + G.T), eigvals_only=True)
