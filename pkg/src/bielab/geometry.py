"""Discretized Lipschitz boundaries and their query machinery.

Meshes come in three flavors:

* closed polygons in the plane (segment panels, nodes at midpoints),
* closed triangulated surfaces (triangle panels, nodes at centroids),
* open graph patches ``{(x', psi(x'))}`` over a parameter box (nodes at the
  grid points, panels triangulating the grid cells).

Nodes carry positive quadrature weights for the surface measure and unit
normals pointing into the exterior.  All values are immutable after
construction; every operation here is pure.

Text format (``load_mesh`` / ``save_mesh``): a header line
``dim n closed {0|1}``, then either ``v x y [z]`` vertex lines followed by
``f i j [k]`` panel lines (0-based indices), or a graph block
``g nx [ny] x0 x1 [y0 y1]`` followed by the heights in row-major order,
whitespace separated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, UnsupportedGeometryError

__all__ = [
    "SMALL_C",
    "BoundaryMesh",
    "GraphPatch",
    "SurfaceChart",
    "SurfaceCube",
    "SurfaceCubeTree",
    "ConeSampler",
    "build_polygon_boundary",
    "build_triangulated_boundary",
    "sphere_mesh",
    "build_graph_patch",
    "build_grid_box",
    "octahedron",
    "icosahedron",
    "cube_surface",
    "refine_mesh",
    "surface_ball",
    "dyadic_cubes",
    "cone_samples",
    "distance_to_boundary",
    "load_mesh",
    "save_mesh",
    "TangentialCalculus",
]

# The paper leaves the small constant in truncated cones and local boxes
# unspecified; we fix it once so tests are deterministic.
SMALL_C = 0.25


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphPatch:
    """Parameterization of an open graph patch (nodes are the grid points)."""

    shape: tuple
    box: np.ndarray        # (d, 2) parameter extents, d = dim - 1
    heights: np.ndarray    # psi on the grid, shape == shape
    params: np.ndarray     # (N, d) parameter coordinates per node
    slopes: np.ndarray     # (N, d) discrete grad psi per node

    @property
    def steps(self) -> np.ndarray:
        return np.array(
            [(hi - lo) / (n - 1) for (lo, hi), n in zip(self.box, self.shape)]
        )


@dataclass(frozen=True)
class SurfaceChart:
    """Graph-style parameter coordinates for a subset of a closed mesh."""

    node_ids: np.ndarray   # (Nc,) node indices
    params: np.ndarray     # (Nc, d)
    box: np.ndarray        # (d, 2)


@dataclass(frozen=True)
class BoundaryMesh:
    """Discretized boundary with quadrature nodes, weights and normals."""

    dim: int
    vertices: np.ndarray       # (V, dim)
    panels: np.ndarray         # (P, dim) vertex indices (segments or triangles)
    panel_normals: np.ndarray  # (P, dim)
    panel_areas: np.ndarray    # (P,)
    nodes: np.ndarray          # (N, dim) quadrature points
    weights: np.ndarray        # (N,)
    normals: np.ndarray        # (N, dim) node normals
    closed: bool
    lipschitz: float
    graph: GraphPatch | None = None
    chart: SurfaceChart | None = None
    projection: str | None = None  # refinement rule, e.g. "unit_sphere"

    def __post_init__(self):
        norms = np.linalg.norm(self.normals, axis=1)
        if np.abs(norms - 1.0).max() > 1e-12:
            raise GeometryError("node normals must have unit length")
        if not (self.weights > 0).all():
            raise GeometryError("node weights must be positive")
        if self.weights.sum() <= 0:
            raise GeometryError("total surface measure must be positive")

    # -- bookkeeping ----------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @property
    def h(self) -> float:
        """Largest panel diameter."""
        pts = self.vertices[self.panels]
        if self.dim == 2:
            return float(np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1).max())
        e = [np.linalg.norm(pts[:, a] - pts[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(e))

    @property
    def diameter(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def gauss_defect(self) -> float:
        """|sum_i w_i N(x_i)| — zero for closed flat-panel meshes."""
        return float(np.linalg.norm(self.weights @ self.normals))

    def interior_point(self) -> np.ndarray:
        if not self.closed:
            raise UnsupportedGeometryError("open patches have no canonical interior point")
        return self.vertices.mean(axis=0)

    def local_h(self) -> np.ndarray:
        """Per-node length scale (sqrt of weight in 3-D, weight in 2-D)."""
        if self.dim == 2:
            return self.weights.copy()
        return np.sqrt(self.weights)


# ---------------------------------------------------------------------------
# Polygon boundaries (n = 2)
# ---------------------------------------------------------------------------


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection test for open segments (shared endpoints excluded)."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-14 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _polygon_lipschitz(vertices: np.ndarray) -> float:
    """Brute-force corner charts: minimal graph slope per vertex, max over vertices."""
    nv = len(vertices)
    worst = 0.0
    angles = np.linspace(0.0, math.pi, 721)[:-1]
    for k in range(nv):
        v = vertices[k]
        d_prev = vertices[(k - 1) % nv] - v
        d_next = vertices[(k + 1) % nv] - v
        d_prev = d_prev / np.linalg.norm(d_prev)
        d_next = d_next / np.linalg.norm(d_next)
        best = math.inf
        for a in angles:
            u = np.array([math.cos(a), math.sin(a)])
            up = np.array([-u[1], u[0]])
            cp, cn = d_prev @ u, d_next @ u
            if cp * cn >= -1e-12:
                continue  # both rays on one side: not a graph over this axis
            slope = max(abs(d_prev @ up) / abs(cp), abs(d_next @ up) / abs(cn))
            best = min(best, slope)
        worst = max(worst, best)
    return worst


def _polygon_from_loop(vertices: np.ndarray) -> BoundaryMesh:
    nv = len(vertices)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    tangents = b - a
    lengths = np.linalg.norm(tangents, axis=1)
    if (lengths < 1e-14).any():
        raise GeometryError("duplicate consecutive vertices")
    t = tangents / lengths[:, None]
    normals = np.stack([t[:, 1], -t[:, 0]], axis=1)
    mids = 0.5 * (a + b)
    # signed area > 0 for counterclockwise order
    area2 = float(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))
    if area2 <= 0:
        raise GeometryError("polygon vertices must be in counterclockwise order")
    # simple polygon: no two non-adjacent edges intersect
    for i in range(nv):
        for j in range(i + 1, nv):
            if j in (i, (i + 1) % nv, (i - 1) % nv) or (i == 0 and j == nv - 1):
                continue
            if _segments_intersect(a[i], b[i], a[j], b[j]):
                raise GeometryError("self-intersecting polygon")
    panels = np.stack([np.arange(nv), (np.arange(nv) + 1) % nv], axis=1)
    return BoundaryMesh(
        dim=2,
        vertices=vertices.astype(float),
        panels=panels,
        panel_normals=normals,
        panel_areas=lengths,
        nodes=mids,
        weights=lengths.copy(),
        normals=normals.copy(),
        closed=True,
        lipschitz=_polygon_lipschitz(vertices),
    )


def build_polygon_boundary(vertices, panels_per_edge: int = 1) -> BoundaryMesh:
    """Closed polygon boundary with panels_per_edge midpoint panels on each edge.

    Vertices must form a simple closed polygon in counterclockwise order.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 3:
        raise GeometryError("need at least 3 planar vertices")
    # overall non-collinearity
    e1 = vertices[1] - vertices[0]
    collinear = True
    for v in vertices[2:]:
        w = v - vertices[0]
        if abs(e1[0] * w[1] - e1[1] * w[0]) > 1e-12:
            collinear = False
            break
    if collinear:
        raise GeometryError("polygon vertices are collinear")
    if panels_per_edge < 1:
        raise GeometryError("panels_per_edge must be >= 1")
    refined = []
    nv = len(vertices)
    for k in range(nv):
        a, b = vertices[k], vertices[(k + 1) % nv]
        if np.linalg.norm(b - a) < 1e-14:
            raise GeometryError("duplicate consecutive vertices")
        for s in range(panels_per_edge):
            refined.append(a + (b - a) * s / panels_per_edge)
    return _polygon_from_loop(np.asarray(refined))


# ---------------------------------------------------------------------------
# Triangulated boundaries (n = 3)
# ---------------------------------------------------------------------------


def octahedron():
    v = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=float,
    )
    f = np.array(
        [
            [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
            [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
        ]
    )
    return v, f


def icosahedron():
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v, f


def cube_surface(half_width: float = 0.5):
    """Unit cube (side 1 by default) as 12 outward-oriented triangles."""
    hw = half_width
    corners = np.array(
        [
            [-hw, -hw, -hw], [hw, -hw, -hw], [hw, hw, -hw], [-hw, hw, -hw],
            [-hw, -hw, hw], [hw, -hw, hw], [hw, hw, hw], [-hw, hw, hw],
        ]
    )
    quads = [
        (0, 3, 2, 1),  # bottom, outward -z
        (4, 5, 6, 7),  # top, outward +z
        (0, 1, 5, 4),  # front, outward -y
        (2, 3, 7, 6),  # back, outward +y
        (1, 2, 6, 5),  # right, outward +x
        (3, 0, 4, 7),  # left, outward -x
    ]
    faces = []
    for (a, b, c, d) in quads:
        faces.append([a, b, c])
        faces.append([a, c, d])
    return corners, np.asarray(faces)


def _subdivide_triangles(vertices, faces, project_unit=False):
    verts = [tuple(v) for v in vertices]
    index = {v: i for i, v in enumerate(verts)}
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key in cache:
            return cache[key]
        m = 0.5 * (np.asarray(verts[i]) + np.asarray(verts[j]))
        if project_unit:
            m = m / np.linalg.norm(m)
        t = tuple(m)
        if t not in index:
            index[t] = len(verts)
            verts.append(t)
        cache[key] = index[t]
        return cache[key]

    out = []
    for (a, b, c) in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])
    return np.asarray(verts, dtype=float), np.asarray(out)


def _triangle_geometry(vertices, faces):
    p = vertices[faces]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    areas2 = np.linalg.norm(cross, axis=1)
    if (areas2 < 1e-16).any():
        raise GeometryError("degenerate triangle in mesh")
    normals = cross / areas2[:, None]
    return normals, 0.5 * areas2, p.mean(axis=1)


def _check_watertight_oriented(faces):
    directed = {}
    for fi, (a, b, c) in enumerate(faces):
        for e in ((a, b), (b, c), (c, a)):
            if e in directed:
                raise GeometryError("non-watertight mesh: directed edge repeated")
            directed[e] = fi
    for (a, b) in directed:
        if (b, a) not in directed:
            raise GeometryError("non-watertight mesh: edge not shared by two faces")


def _dihedral_lipschitz(vertices, faces, normals):
    edge_faces = {}
    for fi, (a, b, c) in enumerate(faces):
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            edge_faces.setdefault(key, []).append(fi)
    worst = 0.0
    for fs in edge_faces.values():
        if len(fs) == 2:
            c = float(np.clip(normals[fs[0]] @ normals[fs[1]], -1.0, 1.0))
            deviation = math.acos(c)  # 0 for coplanar neighbors
            worst = max(worst, math.tan(min(deviation, math.pi * 0.999) / 2.0))
    return worst


def build_triangulated_boundary(vertices, faces, refinement_level: int = 0) -> BoundaryMesh:
    """Closed triangulated boundary; each refinement level splits panels 4:1.

    The triangulation must be watertight and oriented with outward normals
    (positive enclosed volume).
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    _check_watertight_oriented(faces)
    for _ in range(refinement_level):
        vertices, faces = _subdivide_triangles(vertices, faces)
    normals, areas, centroids = _triangle_geometry(vertices, faces)
    volume = float(np.sum(areas * np.einsum("ij,ij->i", centroids, normals))) / 3.0
    if volume <= 0:
        raise GeometryError("inverted orientation: enclosed volume is negative")
    return BoundaryMesh(
        dim=3,
        vertices=vertices,
        panels=faces,
        panel_normals=normals,
        panel_areas=areas,
        nodes=centroids,
        weights=areas.copy(),
        normals=normals.copy(),
        closed=True,
        lipschitz=_dihedral_lipschitz(vertices, faces, normals),
    )


def _spherical_triangle_areas(vertices, faces):
    """Exact unit-sphere triangle areas (l'Huilier); the panels partition 4 pi."""
    v = vertices[faces]
    v = v / np.linalg.norm(v, axis=2, keepdims=True)
    a = np.arccos(np.clip(np.einsum("pd,pd->p", v[:, 1], v[:, 2]), -1.0, 1.0))
    b = np.arccos(np.clip(np.einsum("pd,pd->p", v[:, 0], v[:, 2]), -1.0, 1.0))
    c = np.arccos(np.clip(np.einsum("pd,pd->p", v[:, 0], v[:, 1]), -1.0, 1.0))
    s = 0.5 * (a + b + c)
    t = np.tan(s / 2) * np.tan((s - a) / 2) * np.tan((s - b) / 2) * np.tan((s - c) / 2)
    return 4.0 * np.arctan(np.sqrt(np.clip(t, 0.0, None)))


def sphere_mesh(level: int, base: str = "icosa") -> BoundaryMesh:
    """Partition of the unit sphere into spherical triangles over a refined base.

    base 'octa' gives 8 * 4^level panels, 'icosa' 20 * 4^level.  New vertices
    are projected onto the sphere at every subdivision and refine_mesh keeps
    doing so.  Quadrature nodes are the radially projected panel centroids
    with exact sphere normals and exact spherical-triangle weights, so the
    total measure is 4 pi to rounding; the flat panels stay around for
    distance queries.
    """
    v, f = octahedron() if base == "octa" else icosahedron()
    for _ in range(level):
        v, f = _subdivide_triangles(v, f, project_unit=True)
    mesh = build_triangulated_boundary(v, f, 0)
    return _spherify(mesh)


def _spherify(mesh: BoundaryMesh) -> BoundaryMesh:
    nodes = mesh.nodes / np.linalg.norm(mesh.nodes, axis=1, keepdims=True)
    areas = _spherical_triangle_areas(mesh.vertices, mesh.panels)
    return _with(
        mesh,
        nodes=nodes,
        normals=nodes.copy(),
        weights=areas,
        projection="unit_sphere",
    )


def _with(mesh: BoundaryMesh, **kwargs) -> BoundaryMesh:
    data = {k: getattr(mesh, k) for k in mesh.__dataclass_fields__}
    data.update(kwargs)
    return BoundaryMesh(**data)


def refine_mesh(mesh: BoundaryMesh) -> BoundaryMesh:
    """One uniform refinement level (splits panels; graph patches unsupported)."""
    if mesh.graph is not None:
        raise UnsupportedGeometryError("rebuild graph patches at higher resolution instead")
    if mesh.dim == 2:
        verts = []
        for a, b in mesh.panels:
            verts.append(mesh.vertices[a])
            verts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        return _polygon_from_loop(np.asarray(verts))
    v, f = _subdivide_triangles(
        mesh.vertices, mesh.panels, project_unit=(mesh.projection == "unit_sphere")
    )
    out = build_triangulated_boundary(v, f, 0)
    if mesh.projection == "unit_sphere":
        return _spherify(out)
    return _with(out, projection=mesh.projection)


# ---------------------------------------------------------------------------
# Graph patches
# ---------------------------------------------------------------------------


def _grid_weights_1d(n, step):
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


def build_graph_patch(heights, box) -> BoundaryMesh:
    """Open mesh {(x', psi(x'))} from grid samples of psi over a parameter box.

    ``heights`` has shape (nx,) in the plane or (nx, ny) in space;
    ``box`` is ((x0, x1),) or ((x0, x1), (y0, y1)).  Nodes sit at the grid
    points with trapezoidal cell weights scaled by the area element
    sqrt(1 + |grad psi|^2); the Lipschitz constant estimate is the largest
    discrete slope.
    """
    heights = np.asarray(heights, dtype=float)
    if not np.isfinite(heights).all():
        raise GeometryError("graph heights must be finite")
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    d = heights.ndim
    if d not in (1, 2) or len(box) != d:
        raise GeometryError("heights must be a 1-D or 2-D grid matching the box")
    shape = heights.shape
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, shape)]
    steps = [(hi - lo) / (n - 1) for (lo, hi), n in zip(box, shape)]

    grads = np.stack(np.gradient(heights, *axes), axis=-1).reshape(-1, d)
    if d == 1:
        params = axes[0][:, None]
        surf = np.stack([axes[0], heights], axis=1)
        w1 = _grid_weights_1d(shape[0], steps[0])
        metric = np.sqrt(1.0 + grads[:, 0] ** 2)
        weights = w1 * metric
        normals = np.stack([grads[:, 0], -np.ones(len(grads))], axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        panels = np.stack([np.arange(shape[0] - 1), np.arange(1, shape[0])], axis=1)
        pn = surf[panels[:, 1]] - surf[panels[:, 0]]
        pl = np.linalg.norm(pn, axis=1)
        panel_normals = np.stack([pn[:, 1], -pn[:, 0]], axis=1) / pl[:, None]
        # orientation: x_n > psi side is the interior, normal points down
        flip = panel_normals[:, 1] > 0
        panel_normals[flip] *= -1.0
        mesh = BoundaryMesh(
            dim=2,
            vertices=surf,
            panels=panels,
            panel_normals=panel_normals,
            panel_areas=pl,
            nodes=surf,
            weights=weights,
            normals=normals,
            closed=False,
            lipschitz=float(np.abs(grads).max()),
            graph=GraphPatch(shape, box, heights, params, grads),
        )
        return mesh

    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    params = np.stack([X.ravel(), Y.ravel()], axis=1)
    surf = np.stack([X.ravel(), Y.ravel(), heights.ravel()], axis=1)
    wx = _grid_weights_1d(shape[0], steps[0])
    wy = _grid_weights_1d(shape[1], steps[1])
    cellw = (wx[:, None] * wy[None, :]).ravel()
    metric = np.sqrt(1.0 + (grads**2).sum(axis=1))
    weights = cellw * metric
    normals = np.concatenate([grads, -np.ones((len(grads), 1))], axis=1)
    normals /= np.linalg.norm(normals, axis=1)[:, None]

    nx, ny = shape

    def nid(ix, iy):
        return ix * ny + iy

    tris = []
    for ix in range(nx - 1):
        for iy in range(ny - 1):
            a, b = nid(ix, iy), nid(ix + 1, iy)
            c, dd = nid(ix + 1, iy + 1), nid(ix, iy + 1)
            tris.append([a, b, c])
            tris.append([a, c, dd])
    tris = np.asarray(tris)
    pnormals, pareas, _ = _triangle_geometry(surf, tris)
    flip = pnormals[:, 2] > 0
    pnormals[flip] *= -1.0

    return BoundaryMesh(
        dim=3,
        vertices=surf,
        panels=tris,
        panel_normals=pnormals,
        panel_areas=pareas,
        nodes=surf,
        weights=weights,
        normals=normals,
        closed=False,
        lipschitz=float(np.linalg.norm(grads, axis=1).max()),
        graph=GraphPatch(shape, box, heights, params, grads),
    )


def build_grid_box(bounds=((-1.0, 1.0), (-1.0, 1.0), (0.0, 2.0)), cells=(8, 8, 8)) -> BoundaryMesh:
    """Closed triangulated box with a graph chart on its bottom face.

    The bottom face (z = z0, outward normal -e_z) is meshed on a regular
    cells[0] x cells[1] grid; chart parameters are the (x, y) coordinates of
    the bottom-face triangle centroids, which supports dyadic surface cubes
    on a genuinely non-smooth (cornered) Lipschitz boundary.
    """
    (x0, x1), (y0, y1), (z0, z1) = bounds
    nx, ny, nz = cells
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    zs = np.linspace(z0, z1, nz + 1)

    index = {}
    verts = []

    def vid(p):
        key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    faces = []

    def add_quad(p00, p10, p11, p01):
        a, b, c, d = vid(p00), vid(p10), vid(p11), vid(p01)
        faces.append([a, b, c])
        faces.append([a, c, d])

    # bottom z = z0 (outward -z): orientation so the normal points down
    for i in range(nx):
        for j in range(ny):
            add_quad(
                (xs[i], ys[j], z0), (xs[i], ys[j + 1], z0),
                (xs[i + 1], ys[j + 1], z0), (xs[i + 1], ys[j], z0),
            )
    # top z = z1 (outward +z)
    for i in range(nx):
        for j in range(ny):
            add_quad(
                (xs[i], ys[j], z1), (xs[i + 1], ys[j], z1),
                (xs[i + 1], ys[j + 1], z1), (xs[i], ys[j + 1], z1),
            )
    # y = y0 (outward -y)
    for i in range(nx):
        for k in range(nz):
            add_quad(
                (xs[i], y0, zs[k]), (xs[i + 1], y0, zs[k]),
                (xs[i + 1], y0, zs[k + 1]), (xs[i], y0, zs[k + 1]),
            )
    # y = y1 (outward +y)
    for i in range(nx):
        for k in range(nz):
            add_quad(
                (xs[i], y1, zs[k]), (xs[i], y1, zs[k + 1]),
                (xs[i + 1], y1, zs[k + 1]), (xs[i + 1], y1, zs[k]),
            )
    # x = x0 (outward -x)
    for j in range(ny):
        for k in range(nz):
            add_quad(
                (x0, ys[j], zs[k]), (x0, ys[j], zs[k + 1]),
                (x0, ys[j + 1], zs[k + 1]), (x0, ys[j + 1], zs[k]),
            )
    # x = x1 (outward +x)
    for j in range(ny):
        for k in range(nz):
            add_quad(
                (x1, ys[j], zs[k]), (x1, ys[j + 1], zs[k]),
                (x1, ys[j + 1], zs[k + 1]), (x1, ys[j], zs[k + 1]),
            )

    mesh = build_triangulated_boundary(np.asarray(verts), np.asarray(faces), 0)
    bottom = np.where(np.abs(mesh.nodes[:, 2] - z0) < 1e-12)[0]
    chart = SurfaceChart(
        node_ids=bottom,
        params=mesh.nodes[bottom][:, :2].copy(),
        box=np.array([[x0, x1], [y0, y1]]),
    )
    return _with(mesh, chart=chart)


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def surface_ball(mesh: BoundaryMesh, node: int, r: float) -> np.ndarray:
    """Indices of nodes within Euclidean distance r of node (I(P, r) discretized)."""
    if r <= 0:
        raise GeometryError("surface ball radius must be positive")
    d = np.linalg.norm(mesh.nodes - mesh.nodes[node], axis=1)
    return np.where(d <= r)[0]


def _point_segment_distance(points, a, b):
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    t = np.einsum("pkd,kd->pk", points[:, None, :] - a[None, :, :], ab) / denom
    t = np.clip(t, 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    d = np.linalg.norm(points[:, None, :] - proj, axis=2)
    return d, proj


def _point_triangle_distance(points, tri):
    """Distances from points (P, 3) to triangles tri (K, 3, 3); returns (P, K), proj.

    Vectorized closest-point-on-triangle with the Voronoi-region conditions
    applied in reverse priority order (last write wins), matching the usual
    sequential early-return formulation.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    p = points[:, None, :]
    ap = p - a[None]
    d1 = np.einsum("pkd,kd->pk", ap, ab)
    d2 = np.einsum("pkd,kd->pk", ap, ac)
    bp = p - b[None]
    d3 = np.einsum("pkd,kd->pk", bp, ab)
    d4 = np.einsum("pkd,kd->pk", bp, ac)
    cp = p - c[None]
    d5 = np.einsum("pkd,kd->pk", cp, ab)
    d6 = np.einsum("pkd,kd->pk", cp, ac)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    safe = np.where(denom == 0.0, 1.0, denom)
    v = vb / safe
    w = vc / safe

    # interior (lowest priority)
    proj = a[None] + v[..., None] * ab[None] + w[..., None] * ac[None]
    # edge BC
    mask = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    t = (d4 - d3) / ((d4 - d3) + (d5 - d6) + 1e-300)
    proj = np.where(mask[..., None], b[None] + t[..., None] * (c - b)[None], proj)
    # edge AC
    mask = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t = d2 / (d2 - d6 + 1e-300)
    proj = np.where(mask[..., None], a[None] + t[..., None] * ac[None], proj)
    # edge AB
    mask = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t = d1 / (d1 - d3 + 1e-300)
    proj = np.where(mask[..., None], a[None] + t[..., None] * ab[None], proj)
    # vertex regions (highest priority)
    mask = (d6 >= 0) & (d5 <= d6)
    proj = np.where(mask[..., None], c[None], proj)
    mask = (d3 >= 0) & (d4 <= d3)
    proj = np.where(mask[..., None], b[None], proj)
    mask = (d1 <= 0) & (d2 <= 0)
    proj = np.where(mask[..., None], a[None], proj)

    d = np.linalg.norm(points[:, None, :] - proj, axis=2)
    return d, proj


def distance_to_boundary(mesh: BoundaryMesh, points) -> tuple:
    """Exact distance to the paneled surface: (dist, panel index, projection, side).

    ``side`` is +1 on the exterior side of the nearest panel, -1 on the
    interior side (sign of the offset against the panel normal).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts = len(points)
    best = np.full(npts, np.inf)
    best_panel = np.zeros(npts, dtype=int)
    best_proj = np.zeros_like(points)
    chunk = max(1, int(4e6 // max(npts, 1)))
    for start in range(0, len(mesh.panels), chunk):
        sl = slice(start, start + chunk)
        if mesh.dim == 2:
            a = mesh.vertices[mesh.panels[sl, 0]]
            b = mesh.vertices[mesh.panels[sl, 1]]
            d, proj = _point_segment_distance(points, a, b)
        else:
            tri = mesh.vertices[mesh.panels[sl]]
            d, proj = _point_triangle_distance(points, tri)
        k = np.argmin(d, axis=1)
        dmin = d[np.arange(npts), k]
        upd = dmin < best
        best[upd] = dmin[upd]
        best_panel[upd] = k[upd] + start
        best_proj[upd] = proj[np.arange(npts), k][upd]
    offset = points - best_proj
    side = np.sign(np.einsum("pd,pd->p", offset, mesh.panel_normals[best_panel]))
    side[side == 0] = 1.0
    return best, best_panel, best_proj, side


# ---------------------------------------------------------------------------
# Dyadic surface cubes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceCube:
    """One surface cube: an axis-aligned parameter box and its node set."""

    index: int
    depth: int
    box: np.ndarray           # (d, 2)
    node_ids: np.ndarray      # mesh-level node indices
    parent: int | None
    children: tuple = ()

    @property
    def center(self) -> np.ndarray:
        return self.box.mean(axis=1)

    @property
    def side(self) -> float:
        return float((self.box[:, 1] - self.box[:, 0]).max())


class SurfaceCubeTree:
    """Dyadic decomposition of a graph patch or chart into surface cubes."""

    def __init__(self, mesh: BoundaryMesh, max_depth: int):
        if mesh.graph is not None:
            node_ids = np.arange(mesh.n_nodes)
            params = mesh.graph.params
            box = np.asarray(mesh.graph.box, dtype=float)
        elif mesh.chart is not None:
            node_ids = mesh.chart.node_ids
            params = mesh.chart.params
            box = np.asarray(mesh.chart.box, dtype=float)
        else:
            raise UnsupportedGeometryError("dyadic cubes need a graph parameterization")
        self.mesh = mesh
        self.params = params
        self.node_ids = node_ids
        self.box = box
        self.max_depth = max_depth
        self.cubes: list[SurfaceCube] = []
        self.levels: list[list[int]] = [[] for _ in range(max_depth + 1)]
        root = SurfaceCube(0, 0, box.copy(), node_ids.copy(), None)
        self.cubes.append(root)
        self.levels[0].append(0)
        self._split(0)

    def _split(self, idx: int):
        cube = self.cubes[idx]
        if cube.depth >= self.max_depth or len(cube.node_ids) == 0:
            return
        d = len(self.box)
        mids = cube.box.mean(axis=1)
        local = np.searchsorted(self.node_ids, cube.node_ids)
        pts = self.params[local]
        kids = []
        for code in range(2**d):
            sel = np.ones(len(cube.node_ids), dtype=bool)
            child_box = cube.box.copy()
            for a in range(d):
                hi = (code >> a) & 1
                if hi:
                    sel &= pts[:, a] >= mids[a]
                    child_box[a, 0] = mids[a]
                else:
                    sel &= pts[:, a] < mids[a]
                    child_box[a, 1] = mids[a]
            child = SurfaceCube(
                len(self.cubes), cube.depth + 1, child_box, cube.node_ids[sel], idx
            )
            kids.append(child.index)
            self.cubes.append(child)
            self.levels[child.depth].append(child.index)
        object.__setattr__(cube, "children", tuple(kids))
        for k in kids:
            self._split(k)

    def leaves(self) -> list:
        return [self.cubes[i] for i in self.levels[self.max_depth]]

    def nodes_in_box(self, box) -> np.ndarray:
        box = np.asarray(box, dtype=float)
        sel = np.ones(len(self.node_ids), dtype=bool)
        for a in range(len(self.box)):
            sel &= (self.params[:, a] >= box[a, 0]) & (self.params[:, a] <= box[a, 1])
        return self.node_ids[sel]

    def dilate(self, cube: SurfaceCube, alpha: float):
        """alpha-dilation about the cube center, clipped to the root box.

        Returns (box, node indices, clipped flag).
        """
        c = cube.center
        half = 0.5 * alpha * (cube.box[:, 1] - cube.box[:, 0])
        box = np.stack([c - half, c + half], axis=1)
        clipped = bool((box[:, 0] < self.box[:, 0] - 1e-12).any() or
                       (box[:, 1] > self.box[:, 1] + 1e-12).any())
        box[:, 0] = np.maximum(box[:, 0], self.box[:, 0])
        box[:, 1] = np.minimum(box[:, 1], self.box[:, 1])
        return box, self.nodes_in_box(box), clipped

    def weights_of(self, node_ids) -> np.ndarray:
        return self.mesh.weights[node_ids]


def dyadic_cubes(mesh: BoundaryMesh, max_depth: int) -> SurfaceCubeTree:
    """Dyadic surface-cube tree over a graph patch (or chart of a closed mesh)."""
    return SurfaceCubeTree(mesh, max_depth)


# ---------------------------------------------------------------------------
# Nontangential cone samples
# ---------------------------------------------------------------------------


@dataclass
class ConeSampler:
    """Accepted approach-region samples per node, both sides of the boundary.

    Every sample x satisfies the aperture-2 condition
    |x - P| < 2 dist(x, boundary) against the exact panel distance, and
    |x - P| < truncation.  interior[i] / exterior[i] are (k, dim) arrays.
    """

    mesh: BoundaryMesh
    truncation: float
    interior: list
    exterior: list
    rejected: np.ndarray
    aperture: float = 2.0

    def for_side(self, side: str) -> list:
        if side == "+":
            return self.interior
        if side == "-":
            return self.exterior
        raise ValueError("side must be '+' or '-'")


def cone_samples(
    mesh: BoundaryMesh,
    truncation: float,
    samples_per_node: int = 6,
    jitter: int = 2,
    seed: int = 0,
    nodes=None,
) -> ConeSampler:
    """Geometrically graded, aperture-verified cone samples at each node.

    Distances run down from the truncation by halving (at most
    samples_per_node rungs, never below an h/8 floor, so enlarging the
    truncation only adds samples).  ``jitter`` extra tilted directions per
    rung are drawn from a per-node deterministic stream; every candidate is
    checked against the exact discrete distance function and sorted into the
    interior or exterior list by the side test.
    """
    if truncation <= 0:
        raise GeometryError("cone truncation must be positive")
    node_ids = np.arange(mesh.n_nodes) if nodes is None else np.asarray(nodes)
    floor = mesh.h / 8.0
    interior: list = []
    exterior: list = []
    rejected = np.zeros(len(node_ids), dtype=int)

    all_candidates = []
    cand_owner = []
    for row, i in enumerate(node_ids):
        P = mesh.nodes[i]
        N = mesh.normals[i]
        # tangent frame for jitter
        t1 = np.zeros(mesh.dim)
        t1[np.argmin(np.abs(N))] = 1.0
        t1 = t1 - (t1 @ N) * N
        t1 /= np.linalg.norm(t1)
        if mesh.dim == 3:
            t2 = np.cross(N, t1)
        rng = np.random.default_rng(seed * 1_000_003 + int(i))
        t = truncation
        rungs = 0
        while rungs < samples_per_node and t >= floor:
            for sgn in (-1.0, 1.0):  # -N is the interior side
                all_candidates.append(P + sgn * t * N)
                cand_owner.append(row)
                for _ in range(jitter):
                    tau = rng.uniform(-0.8, 0.8)
                    if mesh.dim == 3:
                        tau2 = rng.uniform(-0.8, 0.8)
                        direction = sgn * N + tau * t1 + tau2 * t2
                    else:
                        direction = sgn * N + tau * t1
                    direction /= np.linalg.norm(direction)
                    all_candidates.append(P + t * direction)
                    cand_owner.append(row)
            t *= 0.5
            rungs += 1
        interior.append([])
        exterior.append([])

    if all_candidates:
        pts = np.asarray(all_candidates)
        owner = np.asarray(cand_owner)
        dist, _, _, side = distance_to_boundary(mesh, pts)
        anchor = mesh.nodes[node_ids][owner]
        gap = np.linalg.norm(pts - anchor, axis=1)
        ok = (gap < 2.0 * dist) & (gap <= truncation * (1.0 + 1e-12))
        for row in range(len(node_ids)):
            mine = owner == row
            acc = mine & ok
            rejected[row] = int(np.sum(mine & ~ok))
            inside = acc & (side < 0)
            outside = acc & (side > 0)
            interior[row] = pts[inside]
            exterior[row] = pts[outside]

    interior = [np.asarray(a).reshape(-1, mesh.dim) for a in interior]
    exterior = [np.asarray(a).reshape(-1, mesh.dim) for a in exterior]
    return ConeSampler(mesh, truncation, interior, exterior, rejected)


# ---------------------------------------------------------------------------
# Tangential calculus
# ---------------------------------------------------------------------------


class TangentialCalculus:
    """Discrete tangential gradients on a mesh.

    Graph patches use centered parameter-grid stencils mapped through the
    first fundamental form; closed polygons use arc-length stencils along the
    loop; closed triangulated surfaces use per-node weighted quadratic fits
    over nearby nodes.  ``gradient`` returns the ambient-coordinate
    tangential gradient, from which dT_ij f = N_i g_j - N_j g_i.
    """

    def __init__(self, mesh: BoundaryMesh, neighbors: int = 12):
        self.mesh = mesh
        self._mats = self._build(neighbors)

    def _build(self, neighbors: int):
        mesh = self.mesh
        if mesh.graph is not None:
            return self._build_graph()
        if mesh.dim == 2 and mesh.closed:
            return self._build_loop()
        if mesh.dim == 3 and mesh.closed:
            return self._build_fits(neighbors)
        raise UnsupportedGeometryError("no tangential stencil for this mesh")

    def _build_graph(self):
        g = self.mesh.graph
        d = len(g.shape)
        nodes = self.mesh.n_nodes
        # parameter-derivative matrices (centered interior, one-sided edges)
        derivs = []
        for axis in range(d):
            D = np.zeros((nodes, nodes))
            step = g.steps[axis]
            shape = g.shape

            def nid(idx):
                if d == 1:
                    return idx[0]
                return idx[0] * shape[1] + idx[1]

            it = np.ndindex(*shape)
            for idx in it:
                i = nid(idx)
                lo = list(idx)
                hi = list(idx)
                if idx[axis] == 0:
                    hi[axis] += 1
                    # second-order one-sided
                    hi2 = list(idx)
                    hi2[axis] += 2
                    D[i, nid(idx)] = -1.5 / step
                    D[i, nid(tuple(hi))] = 2.0 / step
                    D[i, nid(tuple(hi2))] = -0.5 / step
                elif idx[axis] == shape[axis] - 1:
                    lo[axis] -= 1
                    lo2 = list(idx)
                    lo2[axis] -= 2
                    D[i, nid(idx)] = 1.5 / step
                    D[i, nid(tuple(lo))] = -2.0 / step
                    D[i, nid(tuple(lo2))] = 0.5 / step
                else:
                    lo[axis] -= 1
                    hi[axis] += 1
                    D[i, nid(tuple(hi))] = 0.5 / step
                    D[i, nid(tuple(lo))] = -0.5 / step
            derivs.append(D)
        # first fundamental form: g_ab = d_ab + psi_a psi_b
        slopes = g.slopes
        mats = [np.zeros((nodes, nodes)) for _ in range(self.mesh.dim)]
        for i in range(nodes):
            s = slopes[i]
            gram = np.eye(d) + np.outer(s, s)
            ginv = np.linalg.inv(gram)
            # tangent vectors tau_a = (e_a, psi_a)
            tau = np.zeros((d, self.mesh.dim))
            for a in range(d):
                tau[a, a] = 1.0
                tau[a, -1] = s[a]
            coeff = ginv @ tau  # (d, dim): row b gives vector multiplying D_b f
            for b in range(d):
                for c in range(self.mesh.dim):
                    if coeff[b, c] != 0.0:
                        mats[c][i] += coeff[b, c] * derivs[b][i]
        return mats

    def _build_loop(self):
        mesh = self.mesh
        n = mesh.n_nodes
        seg = np.linalg.norm(np.roll(mesh.nodes, -1, axis=0) - mesh.nodes, axis=1)
        mats = [np.zeros((n, n)) for _ in range(2)]
        tangents = np.stack([-mesh.normals[:, 1], mesh.normals[:, 0]], axis=1)
        for i in range(n):
            dp = seg[i - 1]
            dn = seg[i]
            cm = -dn / (dp * (dp + dn))
            c0 = (dn - dp) / (dn * dp)
            cp = dp / (dn * (dp + dn))
            for c in range(2):
                t = tangents[i, c]
                mats[c][i, (i - 1) % n] += t * cm
                mats[c][i, i] += t * c0
                mats[c][i, (i + 1) % n] += t * cp
        return mats

    def _build_fits(self, neighbors: int):
        mesh = self.mesh
        n = mesh.n_nodes
        k = min(neighbors, n - 1)
        mats = [np.zeros((n, n)) for _ in range(3)]
        nodes = mesh.nodes
        for i in range(n):
            d = np.linalg.norm(nodes - nodes[i], axis=1)
            idx = np.argpartition(d, k)[: k + 1]
            idx = idx[np.argsort(d[idx])]
            N = mesh.normals[i]
            t1 = np.zeros(3)
            t1[np.argmin(np.abs(N))] = 1.0
            t1 -= (t1 @ N) * N
            t1 /= np.linalg.norm(t1)
            t2 = np.cross(N, t1)
            rel = nodes[idx] - nodes[i]
            xi = np.stack([rel @ t1, rel @ t2], axis=1)
            scale = max(np.abs(xi).max(), 1e-30)
            u = xi / scale
            V = np.stack(
                [np.ones(len(idx)), u[:, 0], u[:, 1],
                 u[:, 0] ** 2, u[:, 0] * u[:, 1], u[:, 1] ** 2],
                axis=1,
            )
            wts = np.exp(-0.5 * np.linalg.norm(u, axis=1) ** 2)
            W = np.sqrt(wts)
            A = V * W[:, None]
            # rows 1, 2 of the pseudo-inverse give the gradient weights
            pinv = np.linalg.pinv(A, rcond=1e-10)
            row1 = (pinv[1] * W) / scale
            row2 = (pinv[2] * W) / scale
            for c in range(3):
                mats[c][i, idx] += t1[c] * row1 + t2[c] * row2
        return mats

    def gradient_matrices(self) -> list:
        return self._mats

    def gradient(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.stack([m @ values for m in self._mats], axis=1)

    def t_derivative(self, values, i: int, j: int) -> np.ndarray:
        g = self.gradient(values)
        N = self.mesh.normals
        return N[:, i] * g[:, j] - N[:, j] * g[:, i]


# ---------------------------------------------------------------------------
# Mesh file format
# ---------------------------------------------------------------------------


def save_mesh(mesh: BoundaryMesh, path):
    """Write the text format.  Only geometry is stored: a reloaded mesh uses
    flat-panel quadrature regardless of any projection tag."""
    lines = [f"dim {mesh.dim} closed {1 if mesh.closed else 0}"]
    if mesh.graph is not None:
        g = mesh.graph
        if len(g.shape) == 1:
            lines.append(f"g {g.shape[0]} {g.box[0][0]:.17g} {g.box[0][1]:.17g}")
        else:
            lines.append(
                "g {} {} {:.17g} {:.17g} {:.17g} {:.17g}".format(
                    g.shape[0], g.shape[1], *g.box.ravel()
                )
            )
        flat = g.heights.ravel()
        for start in range(0, len(flat), 8):
            lines.append(" ".join(f"{v:.17g}" for v in flat[start : start + 8]))
    else:
        for v in mesh.vertices:
            lines.append("v " + " ".join(f"{x:.17g}" for x in v))
        for f in mesh.panels:
            lines.append("f " + " ".join(str(int(i)) for i in f))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> BoundaryMesh:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 4 or tokens[0] != "dim" or tokens[2] != "closed":
        raise GeometryError(f"bad mesh header in {path}")
    dim = int(tokens[1])
    closed = bool(int(tokens[3]))
    rest = tokens[4:]
    if rest and rest[0] == "g":
        if dim == 2:
            nx = int(rest[1])
            box = [(float(rest[2]), float(rest[3]))]
            heights = np.array([float(t) for t in rest[4 : 4 + nx]])
        else:
            nx, ny = int(rest[1]), int(rest[2])
            box = [(float(rest[3]), float(rest[4])), (float(rest[5]), float(rest[6]))]
            vals = [float(t) for t in rest[7 : 7 + nx * ny]]
            heights = np.array(vals).reshape(nx, ny)
        return build_graph_patch(heights, box)
    verts = []
    faces = []
    i = 0
    while i < len(rest):
        if rest[i] == "v":
            verts.append([float(x) for x in rest[i + 1 : i + 1 + dim]])
            i += 1 + dim
        elif rest[i] == "f":
            faces.append([int(x) for x in rest[i + 1 : i + 1 + dim]])
            i += 1 + dim
        else:
            raise GeometryError(f"unexpected token {rest[i]!r} in {path}")
    verts = np.asarray(verts, dtype=float)
    faces = np.asarray(faces, dtype=int)
    if dim == 2:
        order = _order_loop(faces, len(verts))
        return _polygon_from_loop(verts[order])
    return build_triangulated_boundary(verts, faces, 0)


def _order_loop(segments, nv) -> list:
    nxt = {}
    for a, b in segments:
        if a in nxt:
            raise GeometryError("polygon segments do not form a single loop")
        nxt[a] = b
    order = [int(segments[0][0])]
    while True:
        b = nxt.get(order[-1])
        if b is None:
            raise GeometryError("polygon segments do not close up")
        if b == order[0]:
            break
        order.append(int(b))
        if len(order) > nv:
            raise GeometryError("polygon segments contain a sub-loop")
    return order
