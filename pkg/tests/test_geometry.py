import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bielab.errors import GeometryError, UnsupportedGeometryError
from bielab.geometry import (
    TangentialCalculus,
    build_graph_patch,
    build_grid_box,
    build_polygon_boundary,
    build_triangulated_boundary,
    cone_samples,
    cube_surface,
    distance_to_boundary,
    dyadic_cubes,
    icosahedron,
    load_mesh,
    octahedron,
    refine_mesh,
    save_mesh,
    sphere_mesh,
    surface_ball,
)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


# ---------------------------------------------------------------------------
# polygons
# ---------------------------------------------------------------------------


def test_unit_square_perimeter_and_gauss():
    mesh = build_polygon_boundary(SQUARE, panels_per_edge=4)
    assert mesh.n_nodes == 16
    assert_allclose(mesh.area, 4.0, atol=1e-12)
    # edge symmetry makes the weighted normal sum vanish exactly
    assert mesh.gauss_defect() < 1e-14


def test_square_normals_point_outward():
    mesh = build_polygon_boundary(SQUARE, panels_per_edge=1)
    center = np.array([0.5, 0.5])
    assert ((mesh.nodes - center) * mesh.normals).sum(axis=1).min() > 0


def test_polygon_validation():
    with pytest.raises(GeometryError):
        build_polygon_boundary(SQUARE[::-1])  # clockwise
    with pytest.raises(GeometryError):
        build_polygon_boundary([[0, 0], [1, 0], [2, 0]])  # collinear
    with pytest.raises(GeometryError):
        build_polygon_boundary([[0, 0], [0, 0], [1, 0], [0, 1]])  # duplicate
    bow = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(GeometryError):
        build_polygon_boundary(bow)  # self-intersecting


def test_lshape_lipschitz_above_one():
    # Hexagon with one re-entrant corner sharper than 270 degrees: the local
    # graph slope there, found by brute force over chart angles, exceeds 1.
    # (A 300-degree interior corner has slope tan(60 deg) ~ 1.73.)
    lshape = np.array(
        [
            [0.0, 0.0],
            [2.0, 0.0],
            [2.0, 0.8],
            [0.9, 0.5],   # re-entrant corner
            [0.9, 2.0],
            [0.0, 2.0],
        ]
    )
    mesh = build_polygon_boundary(lshape, panels_per_edge=2)
    assert mesh.lipschitz > 1.0


def test_square_lipschitz_is_one():
    mesh = build_polygon_boundary(SQUARE)
    assert_allclose(mesh.lipschitz, 1.0, atol=5e-3)


# ---------------------------------------------------------------------------
# triangulated surfaces
# ---------------------------------------------------------------------------


def test_octa_sphere_level3():
    mesh = sphere_mesh(3, base="octa")
    assert len(mesh.panels) == 512
    assert abs(mesh.area - 4 * math.pi) < 0.02 * 4 * math.pi
    assert mesh.gauss_defect() < 1e-10 * mesh.area


def test_icosa_sphere_panel_count():
    mesh = sphere_mesh(2, base="icosa")
    assert len(mesh.panels) == 320


def test_unit_cube_area():
    v, f = cube_surface()
    mesh = build_triangulated_boundary(v, f, 0)
    assert_allclose(mesh.area, 6.0, rtol=1e-14)
    assert mesh.gauss_defect() < 1e-10 * mesh.area


def test_gauss_defect_any_closed_mesh():
    v, f = icosahedron()
    mesh = build_triangulated_boundary(v, f, 2)
    assert mesh.gauss_defect() < 1e-10 * mesh.area


def test_watertight_and_orientation_errors():
    v, f = octahedron()
    with pytest.raises(GeometryError):
        build_triangulated_boundary(v, f[:-1], 0)  # missing face
    flipped = f.copy()
    flipped[:, [1, 2]] = flipped[:, [2, 1]]
    with pytest.raises(GeometryError):
        build_triangulated_boundary(v, flipped, 0)


def test_refine_mesh_quadruples_panels():
    mesh = sphere_mesh(1)
    fine = refine_mesh(mesh)
    assert len(fine.panels) == 4 * len(mesh.panels)
    # projection tag keeps refined vertices on the sphere
    assert_allclose(np.linalg.norm(fine.vertices, axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# graph patches
# ---------------------------------------------------------------------------


def test_flat_patch():
    n = 64
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    assert_allclose(mesh.area, 4.0, atol=1e-12)
    assert_allclose(mesh.normals, np.tile([0.0, 0.0, -1.0], (mesh.n_nodes, 1)), atol=1e-14)
    assert mesh.lipschitz == 0.0


def test_cone_patch_lipschitz():
    n = 64
    x = np.linspace(-1, 1, n)
    psi = np.abs(x)[:, None] * np.ones((1, n))
    mesh = build_graph_patch(psi, [(-1, 1), (-1, 1)])
    assert abs(mesh.lipschitz - 1.0) < 0.05


def test_sloped_patch_area():
    n = 96
    x = np.linspace(-1, 1, n)
    psi = 0.5 * x[:, None] * np.ones((1, n))
    mesh = build_graph_patch(psi, [(-1, 1), (-1, 1)])
    # graph-area formula: area = 4 * sqrt(1 + 0.25)
    assert_allclose(mesh.area, 4.0 * math.sqrt(1.25), rtol=1e-6)


def test_graph_patch_rejects_nonfinite():
    with pytest.raises(GeometryError):
        build_graph_patch(np.array([[0.0, np.nan], [0.0, 0.0]]), [(-1, 1), (-1, 1)])


# ---------------------------------------------------------------------------
# surface balls
# ---------------------------------------------------------------------------


def test_surface_ball_monotone_and_extremes():
    mesh = sphere_mesh(2, base="octa")
    ball_small = surface_ball(mesh, 0, 1e-9)
    assert list(ball_small) == [0]
    ball_all = surface_ball(mesh, 0, 10.0)
    assert len(ball_all) == mesh.n_nodes
    r = np.linspace(0.1, 2.0, 8)
    prev = set()
    for rr in r:
        cur = set(surface_ball(mesh, 0, rr).tolist())
        assert prev <= cur
        prev = cur


def test_surface_ball_cap_fraction():
    mesh = sphere_mesh(3, base="icosa")
    pole = int(np.argmax(mesh.nodes[:, 2]))
    ball = surface_ball(mesh, pole, 0.5)
    frac = mesh.weights[ball].sum() / mesh.area
    # Exact spherical cap for chord radius c about a point on the unit
    # sphere: cos t = 1 - c^2/2, fraction (1 - cos t)/2 = c^2/4 = 0.0625.
    expected = 0.5**2 / 4.0
    assert abs(frac - expected) / expected < 0.10


# ---------------------------------------------------------------------------
# dyadic cubes
# ---------------------------------------------------------------------------


def test_dyadic_tree_partition():
    n = 64
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    tree = dyadic_cubes(mesh, 3)
    assert len(tree.levels[0]) == 1
    leaves = tree.leaves()
    assert len(leaves) == 64  # 4^3
    counts = np.zeros(mesh.n_nodes, dtype=int)
    for leaf in leaves:
        counts[leaf.node_ids] += 1
    assert (counts == 1).all()
    # siblings on a regular grid differ by at most one grid row of nodes
    for depth in (1, 2, 3):
        sizes = [len(tree.cubes[i].node_ids) for i in tree.levels[depth]]
        row = n // 2 ** (depth - 1)
        assert max(sizes) - min(sizes) <= row + 1


def test_dyadic_every_depth_partitions():
    n = 32
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    tree = dyadic_cubes(mesh, 4)
    for depth in range(5):
        counts = np.zeros(mesh.n_nodes, dtype=int)
        for ci in tree.levels[depth]:
            counts[tree.cubes[ci].node_ids] += 1
        assert (counts == 1).all()


def test_dyadic_dilation_and_clipping():
    n = 32
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    tree = dyadic_cubes(mesh, 2)
    inner = tree.cubes[tree.levels[2][0]]
    box, nodes, clipped = tree.dilate(inner, 2.0)
    assert len(nodes) >= len(inner.node_ids)
    root_box, _, clipped_root = tree.dilate(tree.cubes[0], 2.0)
    assert clipped_root
    assert_allclose(root_box, tree.box)


def test_dyadic_on_chart_and_unsupported():
    box_mesh = build_grid_box(cells=(8, 8, 4))
    tree = dyadic_cubes(box_mesh, 2)
    total = sum(len(tree.cubes[i].node_ids) for i in tree.levels[2])
    assert total == len(box_mesh.chart.node_ids)
    sphere = sphere_mesh(1)
    with pytest.raises(UnsupportedGeometryError):
        dyadic_cubes(sphere, 2)


# ---------------------------------------------------------------------------
# distances and cones
# ---------------------------------------------------------------------------


def test_distance_to_sphere():
    mesh = sphere_mesh(3, base="icosa")
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0], [0.3, 0.0, 0.0]])
    d, panel, proj, side = distance_to_boundary(mesh, pts)
    assert abs(d[0] - 1.0) < 0.01
    assert abs(d[1] - 1.0) < 0.01
    assert side[0] == -1 and side[2] == -1 and side[1] == 1


def test_distance_to_flat_patch():
    n = 33
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    pts = np.array([[0.1, -0.2, 0.5], [0.0, 0.0, -0.25]])
    d, panel, proj, side = distance_to_boundary(mesh, pts)
    assert_allclose(d, [0.5, 0.25], atol=1e-12)
    # above the graph is the interior (outward normal points down)
    assert side[0] == -1 and side[1] == 1


def test_cone_samples_flat_patch_all_accepted():
    n = 33
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    node = (n * n) // 2  # center node
    sampler = cone_samples(mesh, truncation=0.5, samples_per_node=4, jitter=0, nodes=[node])
    # pure normal-ray samples on a flat patch are always inside the cone
    assert sampler.rejected[0] == 0
    P = mesh.nodes[node]
    for side_pts in (sampler.interior[0], sampler.exterior[0]):
        assert len(side_pts) == 4
        gaps = np.linalg.norm(side_pts - P, axis=1)
        assert_allclose(np.sort(gaps), 0.5 * 2.0 ** -np.arange(4)[::-1], atol=1e-12)


def test_cone_samples_aperture_enforced():
    mesh = sphere_mesh(2, base="icosa")
    sampler = cone_samples(mesh, truncation=0.4, samples_per_node=3, jitter=2, seed=1)
    for i in range(mesh.n_nodes):
        P = mesh.nodes[i]
        for side_pts in (sampler.interior[i], sampler.exterior[i]):
            if len(side_pts) == 0:
                continue
            d, _, _, _ = distance_to_boundary(mesh, side_pts)
            gap = np.linalg.norm(side_pts - P, axis=1)
            assert (gap < 2.0 * d + 1e-12).all()
            assert (gap <= 0.4 * (1 + 1e-12)).all()


def test_cone_samples_nested_in_truncation():
    n = 17
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    node = (n * n) // 2
    small = cone_samples(mesh, 0.2, samples_per_node=12, jitter=0, nodes=[node])
    large = cone_samples(mesh, 0.4, samples_per_node=12, jitter=0, nodes=[node])
    small_set = {tuple(np.round(p, 12)) for p in small.interior[0]}
    large_set = {tuple(np.round(p, 12)) for p in large.interior[0]}
    assert small_set <= large_set


# ---------------------------------------------------------------------------
# tangential calculus
# ---------------------------------------------------------------------------


def test_tangential_gradient_flat_patch():
    n = 48
    mesh = build_graph_patch(np.zeros((n, n)), [(-1, 1), (-1, 1)])
    f = mesh.nodes[:, 0] ** 2 + 2.0 * mesh.nodes[:, 1]
    g = TangentialCalculus(mesh).gradient(f)
    expected = np.stack([2 * mesh.nodes[:, 0], np.full(mesh.n_nodes, 2.0), np.zeros(mesh.n_nodes)], axis=1)
    assert np.abs(g - expected).max() < 1e-9


def test_tangential_gradient_sloped_patch():
    # psi = 0.5 x: for f = x restricted to the graph, the tangential gradient
    # is the projection of e_x onto the tangent plane.
    n = 40
    x = np.linspace(-1, 1, n)
    psi = 0.5 * x[:, None] * np.ones((1, n))
    mesh = build_graph_patch(psi, [(-1, 1), (-1, 1)])
    f = mesh.nodes[:, 0]
    g = TangentialCalculus(mesh).gradient(f)
    N = mesh.normals
    ex = np.zeros((mesh.n_nodes, 3))
    ex[:, 0] = 1.0
    expected = ex - (ex * N).sum(axis=1)[:, None] * N
    assert np.abs(g - expected).max() < 1e-9


def test_tangential_gradient_circle():
    mesh = build_polygon_boundary(
        np.stack([np.cos(np.linspace(0, 2 * math.pi, 200, endpoint=False)),
                  np.sin(np.linspace(0, 2 * math.pi, 200, endpoint=False))], axis=1)
    )
    f = mesh.nodes[:, 0]
    g = TangentialCalculus(mesh).gradient(f)
    N = mesh.normals
    ex = np.zeros((mesh.n_nodes, 2))
    ex[:, 0] = 1.0
    expected = ex - (ex * N).sum(axis=1)[:, None] * N
    assert np.abs(g - expected).max() < 2e-3


def test_tangential_gradient_sphere_fits():
    mesh = sphere_mesh(3, base="icosa")
    f = mesh.nodes[:, 2]
    g = TangentialCalculus(mesh).gradient(f)
    N = mesh.normals
    ez = np.zeros((mesh.n_nodes, 3))
    ez[:, 2] = 1.0
    expected = ez - (ez * N).sum(axis=1)[:, None] * N
    assert np.abs(g - expected).max() < 0.03


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def test_mesh_file_roundtrip_triangles(tmp_path):
    v, f = icosahedron()
    mesh = build_triangulated_boundary(v, f, 1)
    path = tmp_path / "icosa.txt"
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert back.dim == 3 and back.closed
    assert_allclose(back.area, mesh.area, rtol=1e-12)
    assert_allclose(np.sort(back.weights), np.sort(mesh.weights), rtol=1e-12)


def test_mesh_file_roundtrip_polygon(tmp_path):
    mesh = build_polygon_boundary(SQUARE, panels_per_edge=3)
    path = tmp_path / "square.txt"
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert back.dim == 2 and back.closed
    assert_allclose(back.area, 4.0, atol=1e-12)


def test_mesh_file_roundtrip_graph(tmp_path):
    n = 9
    x = np.linspace(-1, 1, n)
    psi = 0.3 * x[:, None] ** 2 * np.ones((1, n))
    mesh = build_graph_patch(psi, [(-1, 1), (-1, 1)])
    path = tmp_path / "patch.txt"
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert not back.closed
    assert back.graph is not None
    assert_allclose(back.graph.heights, mesh.graph.heights, rtol=1e-15)
    assert_allclose(back.area, mesh.area, rtol=1e-12)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("dim 3 closed 1\nv 0 0 0\nq 1 2 3\n")
    with pytest.raises(GeometryError):
        load_mesh(path)
