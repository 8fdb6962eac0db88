from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphtr import groups
from sphtr.sampling import (ConfigurationError, build_cube_grid, build_erp_grid,
                            build_grid, build_icosa_grid, cartesian_to_spherical,
                            grid_from_csv, grid_to_csv, icosahedron, patch_view,
                            spherical_to_cartesian)


def test_erp_point_count_and_order():
    g = build_erp_grid(25, 50, 5, 5)
    assert (g.num_points, g.num_patches, g.patch_size) == (1250, 50, 25)
    assert np.allclose(np.linalg.norm(g.points, axis=1), 1.0, atol=1e-15)


def test_erp_pixel_centres():
    # H=2, W=4, one patch: rows at theta = pi/4, 3pi/4; columns at phi = (j+0.5) pi/2
    g = build_erp_grid(2, 4, 2, 4)
    theta, phi = cartesian_to_spherical(g.points)
    assert np.allclose(theta, np.repeat([np.pi / 4, 3 * np.pi / 4], 4), atol=1e-14)
    assert np.allclose(phi, np.tile((np.arange(4) + 0.5) * np.pi / 2, 2), atol=1e-14)


def test_erp_row_spacing_is_two_pi_over_w():
    W = 50
    g = build_erp_grid(25, W, 25, W)  # one patch, points in raster order
    _, phi = cartesian_to_spherical(g.points.reshape(25, W, 3)[10])
    assert np.allclose(np.diff(phi), 2 * np.pi / W, atol=1e-12)


@pytest.mark.parametrize("args", [(25, 40, 5, 5), (25, 50, 4, 5), (25, 50, 5, 3), (0, 0, 1, 1)])
def test_erp_rejects_bad_shapes(args):
    with pytest.raises(ConfigurationError):
        build_erp_grid(*args)


@pytest.mark.parametrize("e,count", [(15, 1350), (29, 5046), (1, 6)])
def test_cube_point_counts(e, count):
    g = build_cube_grid(e)
    assert g.num_points == count and g.num_patches == 6 and g.patch_size == e * e


def test_cube_e1_face_centres():
    pts = build_cube_grid(1).points
    expected = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    assert np.array_equal(pts, expected)


@pytest.mark.parametrize("div,k,N,D", [(3, 0, 20, 64), (0, 0, 20, 1), (4, 2, 320, 16),
                                        (1, 0, 20, 4), (1, 1, 80, 1), (4, 3, 1280, 4)])
def test_icosa_shapes(div, k, N, D):
    g = build_icosa_grid(div, k)
    assert (g.num_patches, g.patch_size, g.num_points) == (N, D, 20 * 4 ** div)


def test_icosa_div4_k2_model_input_with_three_channels():
    g = build_icosa_grid(4, 2)
    assert (g.num_patches, g.patch_size * 3) == (320, 48)


def test_icosa_div0_is_face_centroids():
    verts, faces = icosahedron()
    cent = verts[faces].mean(axis=1)
    cent /= np.linalg.norm(cent, axis=1, keepdims=True)
    assert np.allclose(build_icosa_grid(0).points, cent, atol=1e-15)


def test_icosahedron_is_regular():
    verts, faces = icosahedron()
    assert verts.shape == (12, 3) and faces.shape == (20, 3)
    edges = np.linalg.norm(verts[faces] - verts[np.roll(faces, 1, axis=1)], axis=2)
    assert np.allclose(edges, edges[0, 0], atol=1e-14)
    # outward winding: normal points the same way as the centroid
    a, b, c = (verts[faces[:, i]] for i in range(3))
    assert np.all(np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) > 0)


def test_icosa_k_only_regroups():
    base = build_icosa_grid(3, 0).points
    for k in (1, 2, 3):
        assert np.array_equal(build_icosa_grid(3, k).points, base)


def test_icosa_patches_are_descendants_of_one_triangle():
    # each depth-1 patch of div=2 lies in the cone of a single div-1 centroid
    coarse = build_icosa_grid(1).points
    fine = patch_view(build_icosa_grid(2, 1))
    for j in range(80):
        nearest = np.argmax(fine[j] @ coarse.T, axis=1)
        assert np.all(nearest == j)


def test_icosa_rejects_k_above_div():
    with pytest.raises(ConfigurationError):
        build_icosa_grid(2, 3)
    with pytest.raises(ConfigurationError):
        build_icosa_grid(-1)


def test_patch_view_examples():
    assert patch_view(build_icosa_grid(1, 0)).shape == (20, 4, 3)
    assert patch_view(build_icosa_grid(1, 1)).shape == (80, 1, 3)
    g = build_erp_grid(2, 4, 2, 4)
    assert patch_view(g).shape == (1, 8, 3)
    assert np.array_equal(patch_view(g).reshape(-1, 3), g.points)


def test_points_are_read_only():
    g = build_icosa_grid(1)
    with pytest.raises(ValueError):
        g.points[0, 0] = 0.0


@pytest.mark.parametrize("method,params", [("icosa", {"div": 2, "k": 1}), ("cube", {"e": 4}),
                                           ("erp", {"H": 4, "W": 8, "P_h": 2, "P_w": 4})])
def test_determinism_and_csv_roundtrip(method, params):
    a, b = build_grid(method, **params), build_grid(method, **params)
    assert np.array_equal(a.points, b.points)
    text = grid_to_csv(a)
    assert text == grid_to_csv(b)
    assert text.splitlines()[0].startswith(f"# sphtr-grid v1 method={method}")
    back = grid_from_csv(text)
    assert np.array_equal(back.points, a.points)
    assert (back.num_patches, back.patch_size) == (a.num_patches, a.patch_size)


@pytest.mark.parametrize("solid,grid", [("icosa", build_icosa_grid(2, 1)),
                                        ("cube", build_cube_grid(6))])
def test_grids_are_symmetric_under_their_group(solid, grid):
    tree_pts = grid.points
    for R in groups.enumerate_group(solid):
        rotated = tree_pts @ R.matrix.T
        d = np.sqrt(((rotated[:, None, :] - tree_pts[None]) ** 2).sum(-1)).min(axis=1)
        assert d.max() < 1e-9


def test_paper_lattice_variant_is_edge_inclusive():
    g = build_cube_grid(3, lattice="paper")
    assert g.symmetry is None
    # the face +X then holds its corner directions
    corner = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    assert np.min(np.linalg.norm(g.points - corner, axis=1)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(theta=st.floats(0.01, np.pi - 0.01), phi=st.floats(0.0, 2 * np.pi - 1e-6))
def test_spherical_roundtrip(theta, phi):
    p = spherical_to_cartesian(np.array(theta), np.array(phi))
    t2, p2 = cartesian_to_spherical(p)
    assert abs(t2 - theta) < 1e-9 and abs(np.angle(np.exp(1j * (p2 - phi)))) < 1e-9


@settings(max_examples=20, deadline=None)
@given(div=st.integers(0, 3), data=st.data())
def test_icosa_count_identity(div, data):
    k = data.draw(st.integers(0, div))
    g = build_icosa_grid(div, k)
    assert g.num_points == g.num_patches * g.patch_size == 20 * 4 ** div
    assert np.allclose(np.linalg.norm(g.points, axis=1), 1.0, atol=1e-14)
