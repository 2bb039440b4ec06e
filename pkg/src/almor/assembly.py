"""Assembly of volume, face-coupling and boundary terms for the broken Q1 space.

The bilinear form is a symmetric weighted interior penalty DG coupling of
per-subdomain Q1 spaces across coarse faces:

    a(v, w; mu) = sum_T int_T kappa_mu grad v . grad w + r_mu v w
                + sum_faces  -int <kappa_mu grad v . n>[w] - int <kappa_mu grad w . n>[v]
                             + int (sigma {kappa_*} / h_face) [v][w]

with jump [v] = v|minus - v|plus, weighted average <v> = w- v|minus + w+ v|plus,
weights w-+ = kappa_*|-+ / (kappa_*|- + kappa_*|+), and {kappa_*} half the
harmonic average of the reference diffusion (one-sided values on boundary
faces).  Dirichlet data is imposed weakly with the matching Nitsche terms.
The reference energy norm uses the volume terms at the reference parameter
plus the jump penalty; both share the assembly routines below.

Coefficients are sampled at fine-cell centers; volume terms use exact
tensor-product integration for Q1 with cellwise-constant coefficients and
face terms use 2-point Gauss per fine face segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import DomainPatch, GridHierarchy
from .problem import ProblemDef, affine_decomposition

__all__ = [
    "SparseBlock",
    "BlockVector",
    "DEFAULT_PENALTY",
    "assemble_volume",
    "assemble_face",
    "assemble_rhs",
    "assemble_h_gram",
    "OperatorComponents",
    "face_weights",
]

DEFAULT_PENALTY = 16.0

# 2-point Gauss on (0, 1)
_GP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GW = np.array([0.5, 0.5])
# P1 trace shape functions at the Gauss points, (gauss, shape)
_N = np.column_stack([1.0 - _GP, _GP])


@dataclass
class SparseBlock:
    """Sparse coupling between the fine DOFs of two subdomains."""

    row: int
    col: int
    mat: sp.csr_matrix


class BlockVector:
    """Function in the broken space: one coefficient vector per subdomain."""

    def __init__(self, blocks: np.ndarray):
        self.blocks = np.asarray(blocks, dtype=float)
        if self.blocks.ndim != 2:
            raise ValueError("expected a (n_subdomains, n_local_dofs) array")

    @classmethod
    def zeros(cls, grid: GridHierarchy) -> "BlockVector":
        return cls(np.zeros((grid.n_sub, grid.n_loc)))

    @classmethod
    def from_flat(cls, grid: GridHierarchy, flat: np.ndarray) -> "BlockVector":
        return cls(np.asarray(flat, dtype=float).reshape(grid.n_sub, grid.n_loc))

    @property
    def flat(self) -> np.ndarray:
        return self.blocks.reshape(-1)

    def copy(self) -> "BlockVector":
        return BlockVector(self.blocks.copy())

    def __getitem__(self, sub: int) -> np.ndarray:
        return self.blocks[sub]


# -- Q1 element matrices ------------------------------------------------------

def _mass_1d(h):
    return h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])


def _stiff_1d(h):
    return 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])


def cell_matrices(hx, hy):
    """Exact Q1 mass and stiffness on one cell, slot order (00, 10, 01, 11)."""
    mass = np.kron(_mass_1d(hy), _mass_1d(hx))
    stiff = np.kron(_mass_1d(hy), _stiff_1d(hx)) + np.kron(_stiff_1d(hy), _mass_1d(hx))
    return mass, stiff


def _cell_node_indices(m):
    """(m*m, 4) array of local node indices per cell, slot order (00,10,01,11)."""
    cx, cy = np.meshgrid(np.arange(m), np.arange(m))
    base = (cy * (m + 1) + cx).ravel()
    return np.column_stack([base, base + 1, base + m + 1, base + m + 2])


def assemble_volume_fields(grid: GridHierarchy, kappa_cells, r_cells) -> sp.csr_matrix:
    """Volume matrix of one subdomain from per-cell coefficient values."""
    m = grid.m
    mass, stiff = cell_matrices(grid.hx, grid.hy)
    nodes = _cell_node_indices(m)
    kappa_cells = np.asarray(kappa_cells, dtype=float)
    r_cells = np.asarray(r_cells, dtype=float)
    vals = (kappa_cells[:, None, None] * stiff[None] + r_cells[:, None, None] * mass[None])
    rows = np.repeat(nodes, 4, axis=1).ravel()
    cols = np.tile(nodes, (1, 4)).ravel()
    return sp.coo_matrix((vals.ravel(), (rows, cols)),
                         shape=(grid.n_loc, grid.n_loc)).tocsr()


def assemble_volume(grid: GridHierarchy, problem: ProblemDef, sub: int, mu) -> SparseBlock:
    """int_T kappa_mu grad v . grad w + r_mu v w for one subdomain."""
    mu = problem.validate_mu(mu)
    centers = grid.cell_centers(sub)
    kappa = problem.kappa(mu, centers[:, 0], centers[:, 1])
    r = np.full(len(centers), problem.reaction)
    return SparseBlock(sub, sub, assemble_volume_fields(grid, kappa, r))


# -- face kernels --------------------------------------------------------------

def face_weights(kstar_minus, kstar_plus=None):
    """Per-segment DG weights and penalty diffusion from reference values.

    Inner faces: (w-, w+, half harmonic average) with the weight of each side
    proportional to the opposite side's diffusion, so the flux weight
    w-+ kappa|-+ equals the penalty scale {kappa} on both sides; this keeps
    the consistency terms controlled by the penalty under arbitrary cross-face
    contrast.  Boundary/one-sided faces use the adjacent value directly.
    """
    km = np.asarray(kstar_minus, dtype=float)
    if kstar_plus is None:
        return np.ones_like(km), None, km
    kp = np.asarray(kstar_plus, dtype=float)
    s = km + kp
    return kp / s, km / s, km * kp / s


def _side_rows(face, side):
    """Per-segment slot index array (m, 4): trace pair then inward pair."""
    tr, inn = face.trace(side), face.inner(side)
    return np.column_stack([tr[:-1], tr[1:], inn[:-1], inn[1:]])


def _jump_rows(sign):
    # (gauss, slot): trace shape functions, zero on the inward slots
    return sign * np.column_stack([_N, np.zeros_like(_N)])


def _dn_rows(sign, h_perp):
    # normal derivative sign*(v_trace - v_inner)/h_perp
    return sign / h_perp * np.column_stack([_N, -_N])


def _face_pair_entries(face, sides, wkappa, pen, seg_len):
    """Dense per-segment 4x4 contributions for every ordered side pair.

    ``sides``: list of (side-name, sign); ``wkappa``: dict side -> per-segment
    weighted diffusion for the consistency term (None to skip); ``pen``:
    per-segment penalty coefficient (None to skip).  Returns a dict
    (row_sub, col_sub) -> (rows, cols, vals).
    """
    J = {s: _jump_rows(sg) for s, sg in sides}
    D = {s: _dn_rows(sg, face.h_perp) for s, sg in sides}
    slots = {s: _side_rows(face, s) for s, _ in sides}
    w = seg_len * _GW
    out = {}
    for sa, _ in sides:
        for sb, _ in sides:
            DJ = np.einsum("g,ga,gb->ab", w, D[sa], J[sb])
            JD = np.einsum("g,ga,gb->ab", w, J[sa], D[sb])
            JJ = np.einsum("g,ga,gb->ab", w, J[sa], J[sb])
            m = slots[sa].shape[0]
            vals = np.zeros((m, 4, 4))
            if wkappa is not None:
                vals -= wkappa[sa][:, None, None] * DJ[None]
                vals -= wkappa[sb][:, None, None] * JD[None]
            if pen is not None:
                vals += pen[:, None, None] * JJ[None]
            rows = np.repeat(slots[sa], 4, axis=1).ravel()
            cols = np.tile(slots[sb], (1, 4)).ravel()
            key = (face.subdomain(sa), face.subdomain(sb))
            if key in out:
                r0, c0, v0 = out[key]
                out[key] = (np.concatenate([r0, rows]), np.concatenate([c0, cols]),
                            np.concatenate([v0, vals.ravel()]))
            else:
                out[key] = (rows, cols, vals.ravel())
    return out


def _entries_to_blocks(entries, n_loc):
    blocks = []
    for (r, c), (rows, cols, vals) in sorted(entries.items()):
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(n_loc, n_loc)).tocsr()
        blocks.append(SparseBlock(r, c, mat))
    return blocks


def _face_sides(face, one_sided=None):
    """Side list with signs; ``one_sided`` forces boundary-type treatment."""
    if one_sided is not None or face.is_boundary:
        return [(one_sided or "minus", 1.0)]
    return [("minus", 1.0), ("plus", -1.0)]


def face_term_entries(face, kappa_vals, kstar_vals, sigma, one_sided=None,
                      consistency=True, penalty=True):
    """COO entries of the DG face terms for one face.

    ``kappa_vals``/``kstar_vals``: dict side -> per-segment cell values of the
    consistency diffusion field and of the reference diffusion.  With
    ``one_sided`` set (artificial patch boundaries) or for boundary faces,
    averages and jumps degenerate to one-sided traces.
    """
    sides = _face_sides(face, one_sided)
    if len(sides) == 1:
        s = sides[0][0]
        wm, _, kpen = face_weights(kstar_vals[s])
        wkappa = {s: wm * kappa_vals[s]} if consistency else None
    else:
        wm, wp, kpen = face_weights(kstar_vals["minus"], kstar_vals["plus"])
        wkappa = ({"minus": wm * kappa_vals["minus"], "plus": wp * kappa_vals["plus"]}
                  if consistency else None)
    pen = sigma * kpen / face.h_perp if penalty else None
    return _face_pair_entries(face, sides, wkappa, pen, face.h_seg)


def assemble_face(grid: GridHierarchy, problem: ProblemDef, face_index: int, mu,
                  mu_star=None, sigma=DEFAULT_PENALTY) -> list[SparseBlock]:
    """All coupling blocks of one coarse face at parameter ``mu``.

    Inner faces yield four blocks (minus/plus pairs), boundary faces one;
    Neumann boundary faces carry no terms and yield an empty list.
    """
    mu = problem.validate_mu(mu)
    mu_star = problem.mu_star if mu_star is None else problem.validate_mu(mu_star)
    face = grid.faces[face_index]
    if face.is_boundary and problem.boundary[face.side].kind != "dirichlet":
        return []
    kappa_vals, kstar_vals = {}, {}
    for side in (["minus"] if face.is_boundary else ["minus", "plus"]):
        c = face.cell_centers(side)
        kappa_vals[side] = problem.kappa(mu, c[:, 0], c[:, 1])
        kstar_vals[side] = problem.kappa(mu_star, c[:, 0], c[:, 1])
    entries = face_term_entries(face, kappa_vals, kstar_vals, sigma)
    return _entries_to_blocks(entries, grid.n_loc)


def _face_data_rhs_ops(face, side, kappa_cells, kstar_cells, sigma, n_loc):
    """Operators mapping nodal trace data to Nitsche right-hand sides.

    Returns ``(B_pen, B_cons)`` with shapes (n_loc, m+1): penalty part
    ``int pen g v`` and consistency part ``-int kappa (dn v) g`` for data
    interpolated on the face trace.
    """
    _, _, kpen = face_weights(kstar_cells)
    pen = sigma * kpen / face.h_perp
    J = _jump_rows(1.0)
    D = _dn_rows(1.0, face.h_perp)
    w = face.h_seg * _GW
    # per segment: (slot, endpoint) matrices
    pen_loc = np.einsum("g,ga,ge,m->mae", w, J, _N, pen)
    cons_loc = -np.einsum("g,ga,ge,m->mae", w, D, _N, kappa_cells)
    slots = _side_rows(face, side)
    m = slots.shape[0]
    ends = np.column_stack([np.arange(m), np.arange(m) + 1])
    rows = np.repeat(slots, 2, axis=1).ravel()
    cols = np.tile(ends, (1, 4)).ravel()
    shape = (n_loc, m + 1)
    B_pen = sp.coo_matrix((pen_loc.ravel(), (rows, cols)), shape=shape).tocsr()
    B_cons = sp.coo_matrix((cons_loc.ravel(), (rows, cols)), shape=shape).tocsr()
    return B_pen, B_cons


def assemble_rhs(grid: GridHierarchy, problem: ProblemDef, sub: int, mu,
                 sigma=DEFAULT_PENALTY) -> np.ndarray:
    """Source plus weak-Dirichlet contributions for one subdomain."""
    mu = problem.validate_mu(mu)
    out = np.zeros(grid.n_loc)
    # cellwise-constant source: int_cell f N_a = f * hx*hy/4 per corner
    mass, _ = cell_matrices(grid.hx, grid.hy)
    cell_rhs = problem.source * mass.sum(axis=1)
    nodes = _cell_node_indices(grid.m)
    np.add.at(out, nodes.ravel(), np.tile(cell_rhs, grid.m * grid.m))
    for fi in grid.faces_of(sub):
        face = grid.faces[fi]
        if not face.is_boundary:
            continue
        bc = problem.boundary[face.side]
        if bc.kind != "dirichlet":
            continue
        c = face.cell_centers("minus")
        kappa = problem.kappa(mu, c[:, 0], c[:, 1])
        kstar = problem.kappa(problem.mu_star, c[:, 0], c[:, 1])
        B_pen, B_cons = _face_data_rhs_ops(face, "minus", kappa, kstar, sigma, grid.n_loc)
        xy = grid.fine_nodes(sub)[face.trace("minus")]
        g = bc.value(xy[:, 0], xy[:, 1])
        out += (B_pen + B_cons) @ g
    return out


# -- precomputed affine operator components ------------------------------------

class OperatorComponents:
    """Parameter-independent assembled pieces of the DG operator.

    The operator splits as ``A(mu) = sum_k theta_k(mu) A_k  +  theta_r(mu) M
    + P`` where the ``A_k`` collect stiffness and face consistency of one
    diffusion component, ``M`` is the reaction mass and ``P`` the jump
    penalty (built from the reference diffusion only).  The right-hand side
    splits accordingly.  Everything is stored block-wise so that global
    systems, patch systems and Gram matrices are scattered from the same
    pieces.
    """

    def __init__(self, grid: GridHierarchy, problem: ProblemDef, sigma=DEFAULT_PENALTY):
        self.grid = grid
        self.problem = problem
        self.sigma = float(sigma)
        self.affine = affine_decomposition(problem)
        self.n_kappa = self.affine.n_kappa
        self._build_volume()
        self._build_faces()
        self._build_dirichlet_rhs()
        self._one_sided_cache: dict = {}
        self._rhs_ops_cache: dict = {}
        self._global_cache: dict = {}

    # construction ----------------------------------------------------------

    def _kappa_fields_at(self, x, y):
        return [f(x, y) for f in self.affine.kappa_fields]

    def _build_volume(self):
        g = self.grid
        self.vol_stiff = [dict() for _ in range(self.n_kappa)]
        self.vol_mass = {}
        mass, stiff = cell_matrices(g.hx, g.hy)
        nodes = _cell_node_indices(g.m)
        rows = np.repeat(nodes, 4, axis=1).ravel()
        cols = np.tile(nodes, (1, 4)).ravel()
        ones = np.ones(g.m * g.m)
        for sub in range(g.n_sub):
            c = g.cell_centers(sub)
            for k, vals in enumerate(self._kappa_fields_at(c[:, 0], c[:, 1])):
                if not np.any(vals):
                    continue
                data = (vals[:, None, None] * stiff[None]).ravel()
                self.vol_stiff[k][sub] = sp.coo_matrix(
                    (data, (rows, cols)), shape=(g.n_loc, g.n_loc)).tocsr()
            data = (ones[:, None, None] * mass[None]).ravel()
            self.vol_mass[sub] = sp.coo_matrix(
                (data, (rows, cols)), shape=(g.n_loc, g.n_loc)).tocsr()
        unit_src = mass.sum(axis=1)
        v = np.zeros(g.n_loc)
        np.add.at(v, nodes.ravel(), np.tile(unit_src, g.m * g.m))
        self.rhs_source_unit = v  # identical on every subdomain

    def _face_fields(self, face, sides):
        kstar, comps = {}, {}
        mu_star = self.problem.mu_star
        for s in sides:
            c = face.cell_centers(s)
            kstar[s] = self.problem.kappa(mu_star, c[:, 0], c[:, 1])
            comps[s] = self._kappa_fields_at(c[:, 0], c[:, 1])
        return kstar, comps

    def _build_faces(self):
        self.face_pen: dict[int, list[SparseBlock]] = {}
        self.face_cons: dict[int, list[list[SparseBlock]]] = {}
        for face in self.grid.faces:
            if face.is_boundary and self.problem.boundary[face.side].kind != "dirichlet":
                continue
            sides = ["minus"] if face.is_boundary else ["minus", "plus"]
            kstar, comps = self._face_fields(face, sides)
            e = face_term_entries(face, {s: None for s in sides}, kstar, self.sigma,
                                  consistency=False)
            self.face_pen[face.index] = _entries_to_blocks(e, self.grid.n_loc)
            per_comp = []
            for k in range(self.n_kappa):
                kv = {s: comps[s][k] for s in sides}
                if not any(np.any(kv[s]) for s in sides):
                    per_comp.append([])
                    continue
                e = face_term_entries(face, kv, kstar, self.sigma, penalty=False)
                per_comp.append(_entries_to_blocks(e, self.grid.n_loc))
            self.face_cons[face.index] = per_comp

    def _build_dirichlet_rhs(self):
        g, p = self.grid, self.problem
        self.rhs_dir_pen = {}
        self.rhs_dir_cons = [dict() for _ in range(self.n_kappa)]
        for face in g.boundary_faces:
            bc = p.boundary[face.side]
            if bc.kind != "dirichlet":
                continue
            sub = face.minus
            c = face.cell_centers("minus")
            kstar = p.kappa(p.mu_star, c[:, 0], c[:, 1])
            comps = self._kappa_fields_at(c[:, 0], c[:, 1])
            xy = g.fine_nodes(sub)[face.trace("minus")]
            gvals = bc.value(xy[:, 0], xy[:, 1])
            B_pen, _ = _face_data_rhs_ops(face, "minus", np.zeros(g.m), kstar,
                                          self.sigma, g.n_loc)
            self.rhs_dir_pen[sub] = self.rhs_dir_pen.get(
                sub, np.zeros(g.n_loc)) + B_pen @ gvals
            for k in range(self.n_kappa):
                if not np.any(comps[k]):
                    continue
                _, B_cons = _face_data_rhs_ops(face, "minus", comps[k], kstar,
                                               self.sigma, g.n_loc)
                self.rhs_dir_cons[k][sub] = self.rhs_dir_cons[k].get(
                    sub, np.zeros(g.n_loc)) + B_cons @ gvals

    # cached one-sided pieces for artificial patch boundaries ----------------

    def one_sided_blocks(self, face_index, side):
        """(penalty block, per-component consistency blocks) for one face side."""
        key = (face_index, side)
        if key not in self._one_sided_cache:
            face = self.grid.faces[face_index]
            kstar, comps = self._face_fields(face, [side])
            e = face_term_entries(face, {side: None}, kstar, self.sigma,
                                  one_sided=side, consistency=False)
            pen = _entries_to_blocks(e, self.grid.n_loc)[0]
            cons = []
            for k in range(self.n_kappa):
                if not np.any(comps[side][k]):
                    cons.append(None)
                    continue
                e = face_term_entries(face, {side: comps[side][k]}, kstar, self.sigma,
                                      one_sided=side, penalty=False)
                cons.append(_entries_to_blocks(e, self.grid.n_loc)[0])
            self._one_sided_cache[key] = (pen, cons)
        return self._one_sided_cache[key]

    def data_rhs_ops(self, face_index, side):
        """(B_pen, per-component B_cons) mapping face trace data to rhs."""
        key = (face_index, side)
        if key not in self._rhs_ops_cache:
            face = self.grid.faces[face_index]
            n_loc = self.grid.n_loc
            kstar, comps = self._face_fields(face, [side])
            zeros = np.zeros(self.grid.m)
            B_pen, _ = _face_data_rhs_ops(face, side, zeros, kstar[side],
                                          self.sigma, n_loc)
            cons = []
            for k in range(self.n_kappa):
                if not np.any(comps[side][k]):
                    cons.append(None)
                    continue
                _, B = _face_data_rhs_ops(face, side, comps[side][k], kstar[side],
                                          self.sigma, n_loc)
                cons.append(B)
            self._rhs_ops_cache[key] = (B_pen, cons)
        return self._rhs_ops_cache[key]

    # parameter handling ------------------------------------------------------

    def thetas(self, mu):
        mu = self.problem.validate_mu(mu)
        return np.array([t(mu) for t in self.affine.kappa_thetas]), \
            self.affine.reaction_theta(mu), self.affine.source_theta(mu)

    # assembly from blocks ----------------------------------------------------

    def _scatter(self, collect, n_dofs, offset_of):
        rows, cols, vals = [], [], []
        for (rs, cs), mat, coef in collect:
            if mat is None or coef == 0.0:
                continue
            coo = mat.tocoo()
            rows.append(coo.row + offset_of(rs))
            cols.append(coo.col + offset_of(cs))
            vals.append(coef * coo.data)
        if not rows:
            return sp.csr_matrix((n_dofs, n_dofs))
        return sp.coo_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n_dofs, n_dofs)).tocsr()

    def _component_collect(self, k):
        """Blocks of affine component k: None=penalty, -1=mass, else kappa k."""
        out = []
        if k == "pen":
            for blocks in self.face_pen.values():
                out.extend(((b.row, b.col), b.mat, 1.0) for b in blocks)
        elif k == "mass":
            out.extend(((s, s), m, 1.0) for s, m in self.vol_mass.items())
        else:
            out.extend(((s, s), m, 1.0) for s, m in self.vol_stiff[k].items())
            for per_comp in self.face_cons.values():
                out.extend(((b.row, b.col), b.mat, 1.0) for b in per_comp[k])
        return out

    def component_global(self, k) -> sp.csr_matrix:
        """Global broken-space matrix of one affine component (cached)."""
        if k not in self._global_cache:
            self._global_cache[k] = self._scatter(
                self._component_collect(k), self.grid.n_dofs,
                lambda s: self.grid.dof_offset(s))
        return self._global_cache[k]

    def global_matrix(self, mu) -> sp.csr_matrix:
        tk, tr, _ = self.thetas(mu)
        A = self.component_global("pen") + tr * self.component_global("mass")
        for k in range(self.n_kappa):
            if tk[k] != 0.0:
                A = A + tk[k] * self.component_global(k)
        return A

    def global_rhs(self, mu) -> np.ndarray:
        tk, _, tf = self.thetas(mu)
        g = self.grid
        b = np.zeros(g.n_dofs)
        if tf != 0.0:
            b += tf * np.tile(self.rhs_source_unit, g.n_sub)
        for sub, vec in self.rhs_dir_pen.items():
            b[g.dof_offset(sub):g.dof_offset(sub) + g.n_loc] += vec
        for k in range(self.n_kappa):
            if tk[k] == 0.0:
                continue
            for sub, vec in self.rhs_dir_cons[k].items():
                b[g.dof_offset(sub):g.dof_offset(sub) + g.n_loc] += tk[k] * vec
        return b

    def block_pairs(self):
        """All (S, T) pairs with a nonzero operator block, diagonal included."""
        pairs = {(s, s) for s in range(self.grid.n_sub)}
        pairs.update(self.grid.adjacent_pairs())
        pairs.update((t, s) for s, t in self.grid.adjacent_pairs())
        return sorted(pairs)

    def component_block(self, k, pair) -> sp.csr_matrix | None:
        """Block (S, T) of one affine component, or None if structurally zero."""
        S, T = pair
        out = None

        def add(mat, c=1.0):
            nonlocal out
            if mat is None:
                return
            out = c * mat if out is None else out + c * mat

        if k == "mass":
            if S == T:
                add(self.vol_mass[S])
            return out
        if k == "pen":
            sources = [self.face_pen.get(f.index, []) for f in _faces_touching(self.grid, S, T)]
        else:
            if S == T and S in self.vol_stiff[k]:
                add(self.vol_stiff[k][S])
            sources = [self.face_cons[f.index][k] if f.index in self.face_cons else []
                       for f in _faces_touching(self.grid, S, T)]
        for blocks in sources:
            for b in blocks:
                if (b.row, b.col) == (S, T):
                    add(b.mat)
        return out

    # patch-level systems -------------------------------------------------------

    def patch_collect(self, patch: DomainPatch, mu):
        """Block list with coefficients for the patch operator at ``mu``.

        Faces internal to the patch keep the full coupling, the patch's pieces
        of the domain boundary keep the global boundary treatment, and
        artificial boundary segments get one-sided Nitsche terms (Dirichlet
        data enters through the right-hand side only).
        """
        tk, tr, _ = self.thetas(mu)
        collect = []
        for s in patch.subdomains:
            collect.append(((s, s), self.vol_mass[s], tr))
            for k in range(self.n_kappa):
                if s in self.vol_stiff[k]:
                    collect.append(((s, s), self.vol_stiff[k][s], tk[k]))
        for fi in patch.internal_faces:
            self._collect_face(collect, fi, tk)
        for seg in patch.boundary:
            if seg.on_domain_boundary:
                self._collect_face(collect, seg.face_index, tk)
            else:
                pen, cons = self.one_sided_blocks(seg.face_index, seg.inside)
                collect.append(((pen.row, pen.col), pen.mat, 1.0))
                for k in range(self.n_kappa):
                    if cons[k] is not None:
                        collect.append(((cons[k].row, cons[k].col), cons[k].mat, tk[k]))
        return collect

    def _collect_face(self, collect, face_index, tk):
        for b in self.face_pen.get(face_index, []):
            collect.append(((b.row, b.col), b.mat, 1.0))
        if face_index in self.face_cons:
            for k in range(self.n_kappa):
                for b in self.face_cons[face_index][k]:
                    collect.append(((b.row, b.col), b.mat, tk[k]))

    def patch_matrix(self, patch: DomainPatch, mu) -> sp.csr_matrix:
        return self._scatter(self.patch_collect(patch, mu), patch.n_dofs, patch.offset)

    def patch_gram_collect(self, patch: DomainPatch, artificial="zero-extension"):
        """Reference energy Gram blocks of the patch-restricted broken space.

        Volume terms at the reference parameter on every member subdomain,
        jump penalties on patch-internal faces and on Dirichlet domain
        boundary faces; with ``artificial="zero-extension"`` the one-sided
        penalty on artificial boundary faces is included (the norm of the
        zero-extended function), with ``"exclude"`` it is dropped.
        """
        mu_star = self.problem.mu_star
        tk = np.array([t(mu_star) for t in self.affine.kappa_thetas])
        tr = self.affine.reaction_theta(mu_star)
        collect = []
        for s in patch.subdomains:
            collect.append(((s, s), self.vol_mass[s], tr))
            for k in range(self.n_kappa):
                if s in self.vol_stiff[k]:
                    collect.append(((s, s), self.vol_stiff[k][s], tk[k]))
        for fi in patch.internal_faces:
            for b in self.face_pen.get(fi, []):
                collect.append(((b.row, b.col), b.mat, 1.0))
        for seg in patch.boundary:
            if seg.on_domain_boundary:
                for b in self.face_pen.get(seg.face_index, []):
                    collect.append(((b.row, b.col), b.mat, 1.0))
            elif artificial == "zero-extension":
                pen, _ = self.one_sided_blocks(seg.face_index, seg.inside)
                collect.append(((pen.row, pen.col), pen.mat, 1.0))
        return collect

    def patch_gram(self, patch: DomainPatch, artificial="zero-extension") -> sp.csr_matrix:
        return self._scatter(self.patch_gram_collect(patch, artificial),
                             patch.n_dofs, patch.offset)

    def global_gram(self) -> sp.csr_matrix:
        if "gram" not in self._global_cache:
            patch = self.grid.whole_domain_patch()
            self._global_cache["gram"] = self._scatter(
                self.patch_gram_collect(patch), self.grid.n_dofs,
                lambda s: self.grid.dof_offset(s))
        return self._global_cache["gram"]

    def local_gram(self, sub: int) -> sp.csr_matrix:
        """Subdomain-interior part of the energy Gram (no jump terms)."""
        mu_star = self.problem.mu_star
        tk = np.array([t(mu_star) for t in self.affine.kappa_thetas])
        G = self.affine.reaction_theta(mu_star) * self.vol_mass[sub]
        for k in range(self.n_kappa):
            if sub in self.vol_stiff[k]:
                G = G + tk[k] * self.vol_stiff[k][sub]
        return G.tocsr()

    def h_norm(self, vec: np.ndarray) -> float:
        G = self.global_gram()
        return float(np.sqrt(max(0.0, vec @ (G @ vec))))


def _faces_touching(grid, S, T):
    if S == T:
        return [grid.faces[i] for i in grid.faces_of(S)]
    return [grid.faces[i] for i in grid.faces_of(S)
            if not grid.faces[i].is_boundary
            and {grid.faces[i].minus, grid.faces[i].plus} == {S, T}]


def assemble_h_gram(grid: GridHierarchy, problem: ProblemDef, patch=None,
                    sigma=DEFAULT_PENALTY, artificial="zero-extension") -> sp.csr_matrix:
    """Reference energy Gram of a patch (or the whole domain)."""
    comps = OperatorComponents(grid, problem, sigma)
    if patch is None:
        return comps.global_gram()
    return comps.patch_gram(patch, artificial)
