"""Coarse domain decomposition with matching per-subdomain fine quad meshes.

The computational domain is split into ``nx x ny`` rectangular subdomains,
each carrying a uniform ``m x m`` mesh of bilinear (Q1) cells.  Functions of
the broken space are one coefficient vector of length ``(m+1)**2`` per
subdomain; traces on the two sides of an inner coarse face refer to the same
physical points (matching meshes, no hanging nodes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CoarseFace",
    "DomainPatch",
    "GridHierarchy",
    "build_grids",
    "oversampling_domain",
    "indicator_domain",
    "estimator_domain",
    "hat_values",
]


@dataclass(frozen=True)
class CoarseFace:
    """One coarse face with its fine trace index arrays.

    ``axis`` is "v" for faces with normal along +x and "h" for normal along
    +y; for boundary faces the normal points out of the domain.  The sign
    convention used everywhere downstream: jump [v] = v|minus - v|plus and
    the normal derivative on either side is ``sign * (v[trace] - v[inner]) /
    h_perp`` with sign +1 on the minus side and -1 on the plus side.
    """

    index: int
    axis: str
    minus: int
    plus: int | None
    side: str | None
    length: float
    h_perp: float
    h_seg: float
    minus_trace: np.ndarray
    minus_inner: np.ndarray
    plus_trace: np.ndarray | None
    plus_inner: np.ndarray | None
    minus_cell_centers: np.ndarray
    plus_cell_centers: np.ndarray | None

    @property
    def is_boundary(self) -> bool:
        return self.plus is None

    def trace(self, side: str) -> np.ndarray:
        return self.minus_trace if side == "minus" else self.plus_trace

    def inner(self, side: str) -> np.ndarray:
        return self.minus_inner if side == "minus" else self.plus_inner

    def cell_centers(self, side: str) -> np.ndarray:
        return self.minus_cell_centers if side == "minus" else self.plus_cell_centers

    def subdomain(self, side: str) -> int:
        return self.minus if side == "minus" else self.plus


@dataclass(frozen=True)
class PatchBoundarySegment:
    """Patch-boundary piece of a coarse face; ``inside`` names the patch side."""

    face_index: int
    inside: str
    on_domain_boundary: bool


@dataclass(frozen=True)
class DomainPatch:
    """Connected set of subdomains with its own contiguous DOF numbering."""

    kind: str
    subdomains: tuple[int, ...]
    internal_faces: tuple[int, ...]
    boundary: tuple[PatchBoundarySegment, ...]
    n_loc: int
    artificial_trace_dofs: np.ndarray = field(repr=False)

    @property
    def key(self) -> tuple:
        return (self.kind, self.subdomains)

    @property
    def n_dofs(self) -> int:
        return len(self.subdomains) * self.n_loc

    def offset(self, sub: int) -> int:
        return self.subdomains.index(sub) * self.n_loc

    def contains(self, sub: int) -> bool:
        return sub in self.subdomains

    def global_dofs(self, grid: "GridHierarchy") -> np.ndarray:
        """Patch DOF -> broken global DOF, in patch order."""
        return np.concatenate(
            [grid.dof_offset(s) + np.arange(self.n_loc) for s in self.subdomains]
        )


class GridHierarchy:
    """Coarse grid, faces, coarse nodes and per-subdomain fine meshes."""

    def __init__(self, nx, ny, m, extents=(0.0, 1.0, 0.0, 1.0)):
        if nx < 1 or ny < 1 or m < 1:
            raise ValueError("subdomain and cell counts must be >= 1")
        self.nx, self.ny, self.m = int(nx), int(ny), int(m)
        self.extents = tuple(float(e) for e in extents)
        x0, x1, y0, y1 = self.extents
        if not (x1 > x0 and y1 > y0):
            raise ValueError("degenerate domain extents")
        self.Hx = (x1 - x0) / nx
        self.Hy = (y1 - y0) / ny
        self.hx = self.Hx / m
        self.hy = self.Hy / m
        self.n_sub = nx * ny
        self.n_loc = (m + 1) ** 2
        self.n_nodes = (nx + 1) * (ny + 1)
        self.faces: list[CoarseFace] = []
        self._build_faces()
        self.inner_faces = [f for f in self.faces if not f.is_boundary]
        self.boundary_faces = [f for f in self.faces if f.is_boundary]
        self._faces_of_sub: list[list[int]] = [[] for _ in range(self.n_sub)]
        for f in self.faces:
            self._faces_of_sub[f.minus].append(f.index)
            if f.plus is not None:
                self._faces_of_sub[f.plus].append(f.index)

    # -- indexing helpers ---------------------------------------------------

    def sub_index(self, ix, iy) -> int:
        return iy * self.nx + ix

    def sub_coords(self, sub) -> tuple[int, int]:
        return sub % self.nx, sub // self.nx

    def node_index(self, ix, iy) -> int:
        return iy * (self.nx + 1) + ix

    def node_coords(self, node) -> tuple[int, int]:
        return node % (self.nx + 1), node // (self.nx + 1)

    def node_position(self, node) -> tuple[float, float]:
        ix, iy = self.node_coords(node)
        return self.extents[0] + ix * self.Hx, self.extents[2] + iy * self.Hy

    def dof_offset(self, sub) -> int:
        return sub * self.n_loc

    @property
    def n_dofs(self) -> int:
        return self.n_sub * self.n_loc

    def sub_origin(self, sub) -> tuple[float, float]:
        ix, iy = self.sub_coords(sub)
        return self.extents[0] + ix * self.Hx, self.extents[2] + iy * self.Hy

    def fine_nodes(self, sub) -> np.ndarray:
        """Physical coordinates of the (m+1)**2 fine nodes, local ordering."""
        ox, oy = self.sub_origin(sub)
        i = np.arange(self.m + 1)
        X, Y = np.meshgrid(ox + i * self.hx, oy + i * self.hy)
        return np.column_stack([X.ravel(), Y.ravel()])

    def cell_centers(self, sub) -> np.ndarray:
        """Physical coordinates of the m*m fine cell centers, row-major."""
        ox, oy = self.sub_origin(sub)
        c = (np.arange(self.m) + 0.5)
        X, Y = np.meshgrid(ox + c * self.hx, oy + c * self.hy)
        return np.column_stack([X.ravel(), Y.ravel()])

    def faces_of(self, sub) -> list[int]:
        return self._faces_of_sub[sub]

    def neighbors(self, sub) -> list[int]:
        """Face neighbors (4-neighborhood), ascending."""
        ix, iy = self.sub_coords(sub)
        out = []
        for jx, jy in ((ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)):
            if 0 <= jx < self.nx and 0 <= jy < self.ny:
                out.append(self.sub_index(jx, jy))
        return sorted(out)

    def adjacent_pairs(self) -> list[tuple[int, int]]:
        """All (minus, plus) subdomain pairs sharing an inner face."""
        return [(f.minus, f.plus) for f in self.inner_faces]

    # -- face construction --------------------------------------------------

    def _line_idx(self, axis, k):
        m = self.m
        if axis == "v":  # vertical line of nodes at column k, ordered by y
            return np.arange(m + 1) * (m + 1) + k
        return np.arange(m + 1) + k * (m + 1)  # horizontal, ordered by x

    def _build_faces(self):
        nx, ny, m = self.nx, self.ny, self.m
        idx = 0

        def add(axis, minus, plus, side, length, h_perp, h_seg, mt, mi, pt, pi, mc, pc):
            nonlocal idx
            self.faces.append(CoarseFace(idx, axis, minus, plus, side, length,
                                         h_perp, h_seg, mt, mi, pt, pi, mc, pc))
            idx += 1

        def centers(sub, axis, col_or_row):
            ox, oy = self.sub_origin(sub)
            c = (np.arange(m) + 0.5)
            if axis == "v":
                x = ox + (col_or_row + 0.5) * self.hx
                return np.column_stack([np.full(m, x), oy + c * self.hy])
            y = oy + (col_or_row + 0.5) * self.hy
            return np.column_stack([ox + c * self.hx, np.full(m, y)])

        # inner vertical faces (normal +x), minus = left subdomain
        for iy in range(ny):
            for ix in range(nx - 1):
                sm, sp = self.sub_index(ix, iy), self.sub_index(ix + 1, iy)
                add("v", sm, sp, None, self.Hy, self.hx, self.hy,
                    self._line_idx("v", m), self._line_idx("v", m - 1),
                    self._line_idx("v", 0), self._line_idx("v", 1),
                    centers(sm, "v", m - 1), centers(sp, "v", 0))
        # inner horizontal faces (normal +y), minus = bottom subdomain
        for iy in range(ny - 1):
            for ix in range(nx):
                sm, sp = self.sub_index(ix, iy), self.sub_index(ix, iy + 1)
                add("h", sm, sp, None, self.Hx, self.hy, self.hx,
                    self._line_idx("h", m), self._line_idx("h", m - 1),
                    self._line_idx("h", 0), self._line_idx("h", 1),
                    centers(sm, "h", m - 1), centers(sp, "h", 0))
        # boundary faces, normal outward
        for iy in range(ny):  # left / right
            s = self.sub_index(0, iy)
            add("v", s, None, "left", self.Hy, self.hx, self.hy,
                self._line_idx("v", 0), self._line_idx("v", 1), None, None,
                centers(s, "v", 0), None)
            s = self.sub_index(nx - 1, iy)
            add("v", s, None, "right", self.Hy, self.hx, self.hy,
                self._line_idx("v", m), self._line_idx("v", m - 1), None, None,
                centers(s, "v", m - 1), None)
        for ix in range(nx):  # bottom / top
            s = self.sub_index(ix, 0)
            add("h", s, None, "bottom", self.Hx, self.hy, self.hx,
                self._line_idx("h", 0), self._line_idx("h", 1), None, None,
                centers(s, "h", 0), None)
            s = self.sub_index(ix, ny - 1)
            add("h", s, None, "top", self.Hx, self.hy, self.hx,
                self._line_idx("h", m), self._line_idx("h", m - 1), None, None,
                centers(s, "h", m - 1), None)

    # -- patches ------------------------------------------------------------

    def make_patch(self, kind, subdomains) -> DomainPatch:
        subs = tuple(sorted(set(int(s) for s in subdomains)))
        for s in subs:
            if not 0 <= s < self.n_sub:
                raise ValueError(f"subdomain index {s} out of range")
        inside = set(subs)
        internal, boundary = [], []
        seen = set()
        for s in subs:
            for fi in self._faces_of_sub[s]:
                if fi in seen:
                    continue
                seen.add(fi)
                f = self.faces[fi]
                if f.is_boundary:
                    boundary.append(PatchBoundarySegment(fi, "minus", True))
                elif f.minus in inside and f.plus in inside:
                    internal.append(fi)
                else:
                    side = "minus" if f.minus in inside else "plus"
                    boundary.append(PatchBoundarySegment(fi, side, False))
        internal.sort()
        boundary.sort(key=lambda b: b.face_index)
        art = set()
        offsets = {s: i * self.n_loc for i, s in enumerate(subs)}
        for seg in boundary:
            if seg.on_domain_boundary:
                continue
            f = self.faces[seg.face_index]
            off = offsets[f.subdomain(seg.inside)]
            art.update(off + t for t in f.trace(seg.inside))
        return DomainPatch(kind, subs, tuple(internal), tuple(boundary),
                           self.n_loc, np.array(sorted(art), dtype=int))

    def whole_domain_patch(self) -> DomainPatch:
        return self.make_patch("global", range(self.n_sub))


def build_grids(nx, ny, m, extents=(0.0, 1.0, 0.0, 1.0)) -> GridHierarchy:
    """Build the coarse decomposition with per-subdomain fine meshes."""
    return GridHierarchy(nx, ny, m, extents)


def oversampling_domain(grid: GridHierarchy, sub: int, layers: int = 1) -> DomainPatch:
    """Subdomain ``sub`` plus ``layers`` rings of coarse neighbors.

    Rings are taken in Chebyshev distance on the coarse index grid, so one
    layer around an interior subdomain is the full 3x3 block including
    diagonal neighbors, clipped at the domain boundary.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    ix, iy = grid.sub_coords(sub)
    subs = [grid.sub_index(jx, jy)
            for jy in range(max(0, iy - layers), min(grid.ny, iy + layers + 1))
            for jx in range(max(0, ix - layers), min(grid.nx, ix + layers + 1))]
    return grid.make_patch("oversampling", subs)


def indicator_domain(grid: GridHierarchy, node: int) -> DomainPatch:
    """Subdomains having the coarse node as a corner (support of its hat)."""
    ix, iy = grid.node_coords(node)
    subs = [grid.sub_index(jx, jy)
            for jx, jy in ((ix - 1, iy - 1), (ix, iy - 1), (ix - 1, iy), (ix, iy))
            if 0 <= jx < grid.nx and 0 <= jy < grid.ny]
    return grid.make_patch("indicator", subs)


def estimator_domain(grid: GridHierarchy, node: int) -> DomainPatch:
    """Indicator domain plus its face neighbors.

    The extra layer holds exactly the subdomains whose values enter the
    coupling terms when testing against functions supported on the indicator
    domain.
    """
    core = indicator_domain(grid, node).subdomains
    subs = set(core)
    for s in core:
        subs.update(grid.neighbors(s))
    return grid.make_patch("estimator", subs)


def hat_values(grid: GridHierarchy, node: int, sub: int) -> np.ndarray:
    """Coarse bilinear hat of ``node`` sampled at the fine nodes of ``sub``."""
    px, py = grid.node_position(node)
    xy = grid.fine_nodes(sub)
    vx = np.maximum(0.0, 1.0 - np.abs(xy[:, 0] - px) / grid.Hx)
    vy = np.maximum(0.0, 1.0 - np.abs(xy[:, 1] - py) / grid.Hy)
    return vx * vy
