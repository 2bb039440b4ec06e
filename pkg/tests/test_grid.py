import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from almor.grid import (build_grids, estimator_domain, hat_values,
                        indicator_domain, oversampling_domain)


@pytest.mark.parametrize("nx,ny,m,subs,nodes,inner,bnd,dofs", [
    (8, 8, 32, 64, 81, 112, 32, 1089),
    (1, 1, 4, 1, 4, 0, 4, 25),
    (2, 1, 2, 2, 6, 1, 6, 9),
])
def test_counts(nx, ny, m, subs, nodes, inner, bnd, dofs):
    g = build_grids(nx, ny, m)
    assert g.n_sub == subs
    assert g.n_nodes == nodes
    assert len(g.inner_faces) == inner
    assert len(g.boundary_faces) == bnd
    assert g.n_loc == dofs
    assert g.n_sub == nx * ny
    assert len(g.inner_faces) == nx * (ny - 1) + (nx - 1) * ny
    assert len(g.boundary_faces) == 2 * (nx + ny)


def test_rejects_zero_counts():
    for bad in [(0, 1, 1), (1, 0, 1), (1, 1, 0)]:
        with pytest.raises(ValueError):
            build_grids(*bad)


def test_traces_match_physically():
    g = build_grids(3, 2, 5)
    for f in g.inner_faces:
        xm = g.fine_nodes(f.minus)[f.minus_trace]
        xp = g.fine_nodes(f.plus)[f.plus_trace]
        assert np.abs(xm - xp).max() == 0.0
        # bijection: distinct DOFs on each side
        assert len(set(f.minus_trace)) == len(f.minus_trace) == g.m + 1
        assert len(set(f.plus_trace)) == len(f.plus_trace) == g.m + 1


def test_face_orientation_unique():
    g = build_grids(4, 3, 2)
    for f in g.inner_faces:
        assert f.minus != f.plus
    # each inner face appears exactly once
    pairs = [(f.minus, f.plus) for f in g.inner_faces]
    assert len(pairs) == len(set(pairs))


@pytest.mark.parametrize("pos,expected", [
    ((4, 4), 9),   # interior
    ((0, 0), 4),   # corner
    ((1, 0), 6),   # edge
])
def test_oversampling_counts(pos, expected):
    g = build_grids(8, 8, 2)
    patch = oversampling_domain(g, g.sub_index(*pos))
    assert len(patch.subdomains) == expected
    assert patch.contains(g.sub_index(*pos))


def test_oversampling_clipped_pattern_everywhere():
    g = build_grids(5, 4, 2)
    for sub in range(g.n_sub):
        ix, iy = g.sub_coords(sub)
        expected = ((min(ix, 1) + 1 + min(g.nx - 1 - ix, 1))
                    * (min(iy, 1) + 1 + min(g.ny - 1 - iy, 1)))
        assert len(oversampling_domain(g, sub).subdomains) == expected


def test_oversampling_layers_two():
    g = build_grids(8, 8, 2)
    patch = oversampling_domain(g, g.sub_index(4, 4), layers=2)
    assert len(patch.subdomains) == 25


@pytest.mark.parametrize("pos,expected", [
    ((4, 4), 4),
    ((4, 0), 2),
    ((0, 0), 1),
])
def test_indicator_counts(pos, expected):
    g = build_grids(8, 8, 2)
    assert len(indicator_domain(g, g.node_index(*pos)).subdomains) == expected


@pytest.mark.parametrize("pos,expected", [
    ((4, 4), 12),  # 2x2 core + 4 face neighbors per core member
    ((0, 0), 3),
    ((4, 0), 6),   # 2 core + 4 in-domain face neighbors (clipping at the boundary)
])
def test_estimator_counts(pos, expected):
    g = build_grids(8, 8, 2)
    assert len(estimator_domain(g, g.node_index(*pos)).subdomains) == expected


def test_estimator_contains_indicator():
    g = build_grids(5, 3, 2)
    for node in range(g.n_nodes):
        ind = set(indicator_domain(g, node).subdomains)
        est = set(estimator_domain(g, node).subdomains)
        assert ind <= est


def test_indicator_domains_cover_grid_four_times():
    g = build_grids(6, 5, 2)
    counts = np.zeros(g.n_sub, dtype=int)
    for node in range(g.n_nodes):
        for s in indicator_domain(g, node).subdomains:
            counts[s] += 1
    assert (counts == 4).all()


def test_patch_boundary_classification():
    g = build_grids(4, 4, 3)
    patch = oversampling_domain(g, g.sub_index(1, 1))  # 3x3 corner block
    art = [b for b in patch.boundary if not b.on_domain_boundary]
    dom = [b for b in patch.boundary if b.on_domain_boundary]
    assert len(art) == 6  # two exposed sides, three faces each
    assert len(dom) == 6
    assert len(patch.internal_faces) == 12
    assert len(patch.artificial_trace_dofs) == 6 * (g.m + 1) - 1  # shared corner


def test_patch_dof_maps():
    g = build_grids(3, 3, 2)
    patch = indicator_domain(g, g.node_index(1, 1))
    gd = patch.global_dofs(g)
    assert len(gd) == patch.n_dofs == 4 * g.n_loc
    assert len(set(gd.tolist())) == len(gd)
    for s in patch.subdomains:
        o = patch.offset(s)
        assert gd[o] == g.dof_offset(s)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4))
def test_hats_partition_of_unity(nx, ny, m):
    g = build_grids(nx, ny, m)
    for sub in range(g.n_sub):
        total = np.zeros(g.n_loc)
        for node in range(g.n_nodes):
            total += hat_values(g, node, sub)
        assert np.abs(total - 1.0).max() < 1e-12
