"""Structured triangulations of axis-aligned rectangles.

Every mesh in this package comes from :func:`build_structured`: an ``nx`` by
``ny`` grid of squares, each cut by its lower-left to upper-right diagonal.
The construction is deterministic, so cell indices, dof numbering and point
location tie-breaks are reproducible across runs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, OutOfDomainError

BARY_TOL = 1e-12

# local edge k is opposite local vertex k
LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    edge_cells: np.ndarray
    cell_edges: np.ndarray
    boundary_vertices: np.ndarray
    boundary_edges: np.ndarray
    h_max: float
    h_min: float
    nx: int
    ny: int
    rect: tuple
    areas: np.ndarray = field(repr=False)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def domain_area(self):
        x0, y0, x1, y1 = self.rect
        return (x1 - x0) * (y1 - y0)

    def centroids(self):
        return self.vertices[self.cells].mean(axis=1)

    def jacobians(self):
        """Affine maps of the reference triangle, shape (ncell, 2, 2).

        Column 0 is ``v1 - v0`` and column 1 is ``v2 - v0``.
        """
        v = self.vertices[self.cells]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (self.nx, self.ny, tuple(self.rect)) == (other.nx, other.ny, tuple(other.rect)) and \
            np.array_equal(self.vertices, other.vertices) and np.array_equal(self.cells, other.cells)

    __hash__ = object.__hash__


@dataclass(frozen=True)
class PointLocation:
    cell_index: int
    barycentric: tuple


def _signed_areas(vertices, cells):
    v = vertices[cells]
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_structured(nx, ny, rect=(0.0, 0.0, 1.0, 1.0)):
    """Diagonal-split structured mesh of the rectangle ``(x0, y0, x1, y1)``.

    Vertices are numbered row by row from the bottom edge; cells are ordered
    square by square in the same order, lower triangle first.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InputError(f"nx and ny must be positive integers, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    x0, y0, x1, y1 = (float(c) for c in rect)
    if not (x1 > x0 and y1 > y0):
        raise InputError(f"degenerate rectangle {rect}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.divmod(np.arange(nx * ny), nx)
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    local = np.array(LOCAL_EDGES)
    all_edges = np.sort(cells[:, local].reshape(-1, 2), axis=1)
    uniq, first, inverse = np.unique(all_edges, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    edges = uniq[order]
    cell_edges = rank[inverse.ravel()].reshape(-1, 3)

    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    flat_cells = np.repeat(np.arange(len(cells)), 3)
    for e, c in zip(cell_edges.ravel(), flat_cells):
        slot = 0 if edge_cells[e, 0] < 0 else 1
        edge_cells[e, slot] = c

    eps = 1e-12 * max(x1 - x0, y1 - y0)
    vx, vy = vertices[:, 0], vertices[:, 1]
    boundary_vertices = (np.abs(vx - x0) < eps) | (np.abs(vx - x1) < eps) | \
        (np.abs(vy - y0) < eps) | (np.abs(vy - y1) < eps)
    boundary_edges = edge_cells[:, 1] < 0

    areas = _signed_areas(vertices, cells)
    diam = np.max(np.linalg.norm(vertices[edges[cell_edges]][:, :, 0] -
                                 vertices[edges[cell_edges]][:, :, 1], axis=2), axis=1)

    return Mesh(vertices=vertices, cells=cells, edges=edges, edge_cells=edge_cells,
                cell_edges=cell_edges, boundary_vertices=boundary_vertices,
                boundary_edges=boundary_edges, h_max=float(diam.max()), h_min=float(diam.min()),
                nx=nx, ny=ny, rect=(x0, y0, x1, y1), areas=areas)


def refine_uniform(m):
    """Uniform red refinement; for this mesh family it is the 2nx by 2ny mesh."""
    return build_structured(2 * m.nx, 2 * m.ny, m.rect)


def barycentric(m, cell_ids, points):
    """Barycentric coordinates of ``points[k]`` with respect to ``cell_ids[k]``."""
    v = m.vertices[m.cells[cell_ids]]
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    r = points - v[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def locate_points(m, points, tol=BARY_TOL):
    """Vectorized point location.

    Returns ``(cell_ids, bary)``. Points on shared edges or vertices go to the
    containing cell with the smallest index.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x0, y0, x1, y1 = m.rect
    hx = (x1 - x0) / m.nx
    hy = (y1 - y0) / m.ny
    slack = tol * max(x1 - x0, y1 - y0)
    outside = (pts[:, 0] < x0 - slack) | (pts[:, 0] > x1 + slack) | \
        (pts[:, 1] < y0 - slack) | (pts[:, 1] > y1 + slack)
    if np.any(outside):
        raise OutOfDomainError(f"point(s) outside the domain: {pts[outside].tolist()}")

    fi = np.floor((pts[:, 0] - x0) / hx).astype(np.int64)
    fj = np.floor((pts[:, 1] - y0) / hy).astype(np.int64)
    best = np.full(len(pts), np.iinfo(np.int64).max)
    best_bary = np.zeros((len(pts), 3))
    # a point on a grid line can belong to the squares on either side of it
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            i = np.clip(fi + di, 0, m.nx - 1)
            j = np.clip(fj + dj, 0, m.ny - 1)
            sq = j * m.nx + i
            for half in (0, 1):
                cid = 2 * sq + half
                lam = barycentric(m, cid, pts)
                inside = np.all(lam >= -tol, axis=1) & (cid < best)
                best = np.where(inside, cid, best)
                best_bary[inside] = lam[inside]
    if np.any(best == np.iinfo(np.int64).max):
        raise OutOfDomainError("point location failed")
    return best, best_bary


def locate_point(m, p):
    cells, bary = locate_points(m, np.asarray(p, dtype=float)[None, :])
    return PointLocation(int(cells[0]), tuple(float(b) for b in bary[0]))


def is_interior(m, p):
    x0, y0, x1, y1 = m.rect
    eps = 1e-12 * max(x1 - x0, y1 - y0)
    return x0 + eps < p[0] < x1 - eps and y0 + eps < p[1] < y1 - eps


def write_vtk(path, m, point_data=None, cell_data=None, title="nstrack mesh"):
    """Write a legacy ASCII VTK unstructured grid.

    ``point_data`` / ``cell_data`` map names to arrays of shape (n,) or (n, 2);
    two-component fields are padded to 3D vectors.
    """
    fmt = "{:.17g}"
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {m.num_vertices} double"]
    lines += [f"{fmt.format(x)} {fmt.format(y)} 0" for x, y in m.vertices]
    lines.append(f"CELLS {m.num_cells} {4 * m.num_cells}")
    lines += [f"3 {a} {b} {c}" for a, b, c in m.cells]
    lines.append(f"CELL_TYPES {m.num_cells}")
    lines += ["5"] * m.num_cells

    def block(kind, count, data):
        if not data:
            return
        lines.append(f"{kind} {count}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(fmt.format(v) for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{fmt.format(a)} {fmt.format(b)} 0" for a, b in arr[:, :2])

    block("POINT_DATA", m.num_vertices, point_data)
    block("CELL_DATA", m.num_cells, cell_data)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
