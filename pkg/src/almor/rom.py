"""Online reduced model: Galerkin projection onto the local reduced bases.

The reduced operator is dense and blocked by subdomain, with couplings only
between face-adjacent subdomains.  All parameter-independent projections are
precomputed once per basis state, so assembling and solving the reduced
system for a new parameter touches no fine-dimensional arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .assembly import BlockVector
from .fom import Discretization
from .training import ReducedBasis

__all__ = ["ReducedSystem", "ReducedModel", "project_system", "solve_rom"]


@dataclass
class ReducedSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    offsets: np.ndarray  # per-subdomain offsets into the reduced coordinates
    dims: np.ndarray

    def split(self, coeffs: np.ndarray) -> list[np.ndarray]:
        return [coeffs[o:o + d] for o, d in zip(self.offsets, self.dims)]


class ReducedModel:
    """Precomputed affine reduced components for one basis state.

    ``extend`` updates the projections after new vectors were appended to
    some subdomains, touching only blocks that involve those subdomains.
    """

    def __init__(self, disc: Discretization, rb: ReducedBasis):
        self.disc = disc
        self.rb = rb
        comps = disc.components
        self._comp_keys = ["pen", "mass"] + list(range(comps.n_kappa))
        self._pairs = comps.block_pairs()
        self._red: dict = {k: {} for k in self._comp_keys}
        self._rhs_red: dict = {}
        self._dims = np.zeros(disc.grid.n_sub, dtype=int)
        self.extend()

    # projection ----------------------------------------------------------------

    def _project_pair(self, key, S, T, Bs, Bt, row_slice=None, col_slice=None):
        blk = self.disc.components.component_block(key, (S, T))
        if blk is None:
            return None
        Brow = Bs if row_slice is None else Bs[:, row_slice]
        Bcol = Bt if col_slice is None else Bt[:, col_slice]
        if Brow.shape[1] == 0 or Bcol.shape[1] == 0:
            return np.zeros((Brow.shape[1], Bcol.shape[1]))
        return Brow.T @ (blk @ Bcol)

    def _rhs_vectors(self, sub):
        comps = self.disc.components
        out = {"src": comps.rhs_source_unit}
        if sub in comps.rhs_dir_pen:
            out["dir_pen"] = comps.rhs_dir_pen[sub]
        for k in range(comps.n_kappa):
            if sub in comps.rhs_dir_cons[k]:
                out[("dir_cons", k)] = comps.rhs_dir_cons[k][sub]
        return out

    def extend(self) -> None:
        """Refresh projections for subdomains whose basis has grown."""
        rb = self.rb
        grown = [s for s in range(self.disc.grid.n_sub) if rb.dim(s) > self._dims[s]]
        if not grown and self._rhs_red:
            return
        grown_set = set(grown)
        mats = {s: rb.matrix(s) for s in range(self.disc.grid.n_sub)}
        for key in self._comp_keys:
            red = self._red[key]
            for S, T in self._pairs:
                if S not in grown_set and T not in grown_set and (S, T) in red:
                    continue
                old = red.get((S, T))
                if old is None or old.shape != (self._dims[S], self._dims[T]):
                    old = None
                if old is None:
                    blk = self._project_pair(key, S, T, mats[S], mats[T])
                    if blk is not None:
                        red[(S, T)] = blk
                    continue
                oS, oT = self._dims[S], self._dims[T]
                nS, nT = rb.dim(S), rb.dim(T)
                right = self._project_pair(key, S, T, mats[S], mats[T],
                                           row_slice=slice(0, oS),
                                           col_slice=slice(oT, nT))
                below = self._project_pair(key, S, T, mats[S], mats[T],
                                           row_slice=slice(oS, nS),
                                           col_slice=slice(0, nT))
                new = np.zeros((nS, nT))
                new[:oS, :oT] = old
                if right is not None:
                    new[:oS, oT:] = right
                if below is not None:
                    new[oS:, :] = below
                red[(S, T)] = new
        for s in range(self.disc.grid.n_sub):
            if s in grown_set or s not in self._rhs_red:
                B = mats[s]
                self._rhs_red[s] = {k: B.T @ v for k, v in self._rhs_vectors(s).items()}
        self._dims = rb.dims.copy()

    # reduced system ------------------------------------------------------------

    def system(self, mu) -> ReducedSystem:
        """Assemble the dense reduced system at ``mu`` from projected parts."""
        tk, tr, tf = self.disc.components.thetas(mu)
        dims = self._dims
        offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
        N = int(dims.sum())
        A = np.zeros((N, N))
        for (S, T), blk in self._red["pen"].items():
            A[offsets[S]:offsets[S] + dims[S], offsets[T]:offsets[T] + dims[T]] += blk
        for (S, T), blk in self._red["mass"].items():
            A[offsets[S]:offsets[S] + dims[S], offsets[T]:offsets[T] + dims[T]] += tr * blk
        for k in range(self.disc.components.n_kappa):
            if tk[k] == 0.0:
                continue
            for (S, T), blk in self._red[k].items():
                A[offsets[S]:offsets[S] + dims[S],
                  offsets[T]:offsets[T] + dims[T]] += tk[k] * blk
        b = np.zeros(N)
        for s, parts in self._rhs_red.items():
            seg = slice(offsets[s], offsets[s] + dims[s])
            if tf != 0.0:
                b[seg] += tf * parts["src"]
            if "dir_pen" in parts:
                b[seg] += parts["dir_pen"]
            for k in range(self.disc.components.n_kappa):
                if tk[k] != 0.0 and ("dir_cons", k) in parts:
                    b[seg] += tk[k] * parts[("dir_cons", k)]
        return ReducedSystem(A, b, offsets, dims.copy())

    def solve_coefficients(self, mu) -> tuple[np.ndarray, ReducedSystem]:
        """Reduced solve only; no fine-dimensional arrays are touched."""
        sys = self.system(mu)
        try:
            cf = la.cho_factor(sys.matrix, check_finite=False)
            coeffs = la.cho_solve(cf, sys.rhs, check_finite=False)
        except la.LinAlgError:
            try:
                coeffs = la.solve(sys.matrix, sys.rhs, assume_a="sym")
            except la.LinAlgError as err:
                raise RuntimeError(
                    "singular reduced system (dependent basis?)") from err
        return coeffs, sys

    def solve(self, mu) -> tuple[np.ndarray, BlockVector]:
        coeffs, sys = self.solve_coefficients(mu)
        return coeffs, self.rb.reconstruct(sys.split(coeffs))


def project_system(disc: Discretization, rb: ReducedBasis, mu,
                   affine=True) -> ReducedSystem:
    """Galerkin projection of the full system onto the reduced space.

    With ``affine=False`` the reduced operator is recomputed from the
    assembled global matrix at ``mu`` (reference path for testing the
    precomputed affine components).
    """
    if affine:
        return ReducedModel(disc, rb).system(mu)
    g = disc.grid
    A = disc.components.global_matrix(mu)
    b = disc.components.global_rhs(mu)
    dims = rb.dims
    offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
    B = np.zeros((g.n_dofs, int(dims.sum())))
    for s in range(g.n_sub):
        B[g.dof_offset(s):g.dof_offset(s) + g.n_loc,
          offsets[s]:offsets[s] + dims[s]] = rb.matrix(s)
    return ReducedSystem(B.T @ (A @ B), B.T @ b, offsets, dims.copy())


def solve_rom(disc: Discretization, rb: ReducedBasis, mu):
    """Reduced solve with fine-grid reconstruction: ``(coefficients, u_rb)``."""
    return ReducedModel(disc, rb).solve(mu)
