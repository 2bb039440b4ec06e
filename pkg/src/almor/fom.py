"""Full-order solves: global reference solutions and localized patch problems.

The global solve exists for validation and for true-error studies; the patch
solve is the shared kernel behind offline training, residual-driven
enrichment and the localized estimator.  Patch operators are factorized once
per (patch, parameter) and reused for many right-hand sides.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DEFAULT_PENALTY, BlockVector, OperatorComponents
from .grid import DomainPatch, GridHierarchy, build_grids
from .problem import ProblemDef

__all__ = ["SolverError", "Discretization", "solve_fom", "solve_patch"]

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solver breakdown; carries the offending parameter."""


def _mu_key(mu):
    return tuple(np.asarray(mu, dtype=float))


class Discretization:
    """Grid, problem and assembled operator components with solver caches."""

    def __init__(self, problem: ProblemDef, sigma=DEFAULT_PENALTY):
        self.problem = problem
        self.grid = build_grids(problem.nx, problem.ny, problem.m, problem.domain)
        self.components = OperatorComponents(self.grid, problem, sigma)
        self._patch_lu: dict = {}
        self._global_lu: dict = {}
        self.fom_solve_count = 0

    @property
    def sigma(self) -> float:
        return self.components.sigma

    # factorizations ----------------------------------------------------------

    def global_factor(self, mu):
        key = _mu_key(mu)
        if key not in self._global_lu:
            A = self.components.global_matrix(mu).tocsc()
            self._global_lu[key] = (spla.splu(A), A)
        return self._global_lu[key]

    def patch_factor(self, patch: DomainPatch, mu):
        key = (patch.key, _mu_key(mu))
        if key not in self._patch_lu:
            A = self.components.patch_matrix(patch, mu).tocsc()
            self._patch_lu[key] = (spla.splu(A), A)
        return self._patch_lu[key]

    def h_norm(self, vec) -> float:
        v = vec.flat if isinstance(vec, BlockVector) else np.asarray(vec)
        return self.components.h_norm(v)

    def energy_norm(self, vec, mu) -> float:
        v = vec.flat if isinstance(vec, BlockVector) else np.asarray(vec)
        A = self.components.global_matrix(mu)
        return float(np.sqrt(max(0.0, v @ (A @ v))))


def _block_jacobi_prec(disc, A):
    g = disc.grid
    lus = []
    for s in range(g.n_sub):
        o = g.dof_offset(s)
        lus.append(spla.splu(A[o:o + g.n_loc, o:o + g.n_loc].tocsc()))

    def apply(x):
        y = np.empty_like(x)
        for s, lu in enumerate(lus):
            o = g.dof_offset(s)
            y[o:o + g.n_loc] = lu.solve(x[o:o + g.n_loc])
        return y

    return spla.LinearOperator(A.shape, matvec=apply)


def solve_fom(disc: Discretization, mu, method="direct") -> BlockVector:
    """Solve the full broken-space system at ``mu``.

    ``method`` is "direct" (sparse LU, default) or "cg" (conjugate gradients
    with a per-subdomain block-Jacobi preconditioner).
    """
    mu = disc.problem.validate_mu(mu)
    b = disc.components.global_rhs(mu)
    if method == "direct":
        lu, A = disc.global_factor(mu)
        x = lu.solve(b)
    elif method == "cg":
        A = disc.components.global_matrix(mu)
        M = _block_jacobi_prec(disc, A)
        x, info = spla.cg(A, b, rtol=1e-12, atol=0.0, M=M, maxiter=20000)
        if info != 0:
            raise SolverError(f"CG did not converge (info={info}) at mu={list(mu)}")
    else:
        raise ValueError(f"unknown method {method!r}")
    disc.fom_solve_count += 1
    nb = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if nb > 0 and res > RESIDUAL_TOL * nb:
        raise SolverError(f"solver residual {res / nb:.2e} at mu={list(mu)}")
    return BlockVector.from_flat(disc.grid, x)


def patch_rhs(disc: Discretization, patch: DomainPatch, mu, artificial_values=None,
              rhs="zero", global_dirichlet="problem") -> np.ndarray:
    """Right-hand side of a patch problem.

    ``rhs``: "source" for the problem source term, "zero", or an explicit
    vector over the patch DOFs (e.g. a restricted residual).
    ``artificial_values``: Dirichlet data on the artificial-boundary trace
    DOFs, in the order of ``patch.artificial_trace_dofs`` (zero if omitted).
    ``global_dirichlet``: "problem" keeps the problem's boundary data on
    domain-boundary segments, "zero" imposes homogeneous data there.
    """
    comps = disc.components
    g = disc.grid
    tk, _, tf = comps.thetas(mu)
    b = np.zeros(patch.n_dofs)
    if isinstance(rhs, np.ndarray):
        if rhs.shape != (patch.n_dofs,):
            raise ValueError(f"explicit rhs must have {patch.n_dofs} entries")
        b += rhs
    elif rhs == "source":
        if tf != 0.0:
            for s in patch.subdomains:
                o = patch.offset(s)
                b[o:o + g.n_loc] += tf * comps.rhs_source_unit
    elif rhs != "zero":
        raise ValueError(f"unknown rhs mode {rhs!r}")

    if global_dirichlet == "problem":
        for s in patch.subdomains:
            o = patch.offset(s)
            if s in comps.rhs_dir_pen:
                b[o:o + g.n_loc] += comps.rhs_dir_pen[s]
            for k in range(comps.n_kappa):
                if tk[k] != 0.0 and s in comps.rhs_dir_cons[k]:
                    b[o:o + g.n_loc] += tk[k] * comps.rhs_dir_cons[k][s]
    elif global_dirichlet != "zero":
        raise ValueError(f"unknown global_dirichlet mode {global_dirichlet!r}")

    if artificial_values is not None:
        art = patch.artificial_trace_dofs
        vals = np.asarray(artificial_values, dtype=float)
        if vals.shape != art.shape:
            raise ValueError(
                f"artificial data has {vals.shape} entries, patch expects {art.shape}")
        full = np.zeros(patch.n_dofs)
        full[art] = vals
        for seg in patch.boundary:
            if seg.on_domain_boundary:
                continue
            face = g.faces[seg.face_index]
            sub = face.subdomain(seg.inside)
            o = patch.offset(sub)
            gvals = full[o + face.trace(seg.inside)]
            if not np.any(gvals):
                continue
            B_pen, B_cons = comps.data_rhs_ops(seg.face_index, seg.inside)
            b[o:o + g.n_loc] += B_pen @ gvals
            for k in range(comps.n_kappa):
                if tk[k] != 0.0 and B_cons[k] is not None:
                    b[o:o + g.n_loc] += tk[k] * (B_cons[k] @ gvals)
    return b


def solve_patch(disc: Discretization, patch: DomainPatch, mu, artificial_values=None,
                rhs="zero", global_dirichlet="problem") -> np.ndarray:
    """Solve the localized problem on a patch; returns patch-ordered DOFs.

    Domain-boundary segments of the patch keep the global boundary
    conditions, artificial segments impose ``artificial_values`` weakly with
    the same Nitsche terms as the global assembly.
    """
    mu = disc.problem.validate_mu(mu)
    lu, A = disc.patch_factor(patch, mu)
    b = patch_rhs(disc, patch, mu, artificial_values, rhs, global_dirichlet)
    x = lu.solve(b)
    nb = np.linalg.norm(b)
    if nb > 0:
        res = np.linalg.norm(A @ x - b)
        if res > RESIDUAL_TOL * nb:
            raise SolverError(f"patch solver residual {res / nb:.2e} at mu={list(mu)}")
    return x


def restrict_to_sub(disc: Discretization, patch: DomainPatch, x: np.ndarray,
                    sub: int) -> np.ndarray:
    """Restriction of a patch solution to one member subdomain."""
    o = patch.offset(sub)
    return x[o:o + disc.grid.n_loc].copy()
