"""Icosahedral triangular grids on the sphere.

A grid named ``RnBk`` starts from the regular icosahedron with a vertex at
each pole, splits every icosahedron edge into ``n`` equal great-circle arcs
(dividing each face into ``n**2`` triangles), and then bisects every
triangle ``k`` times through the projected edge midpoints.  No node
relaxation or optimisation is applied afterwards, so the construction is
fully deterministic.

Cell counts follow ``n_cells = 20 * n**2 * 4**k`` with ``n_edges = 3/2 *
n_cells`` and ``n_verts = n_cells / 2 + 2``.

All positions are stored as unit vectors; dimensional quantities (areas,
lengths) carry the sphere radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS = 6_371_229.0  # metres


def expected_counts(n_r: int, n_b: int) -> tuple[int, int, int]:
    """Return (n_cells, n_edges, n_verts) for the RnB family."""
    c = 20 * n_r * n_r * 4**n_b
    return c, 3 * c // 2, c // 2 + 2


@dataclass(frozen=True)
class SphereGrid:
    """Topology and geometry of one icosahedral triangular grid.

    Index conventions:

    * ``faces[c]`` lists the three vertex ids of cell ``c`` counterclockwise
      as seen from outside the sphere.
    * ``edge_cells[e] = (owner, neighbour)`` with ``owner < neighbour``; the
      unit normal ``edge_normal[e]`` is tangent to the sphere at the edge
      midpoint, perpendicular to the edge, and points from owner to
      neighbour.
    * ``cell_edges[c]`` holds the three edge ids of cell ``c`` and
      ``cell_edge_signs[c]`` is +1 where the cell owns the edge (normal
      points outward) and -1 otherwise.
    """

    n_r: int
    n_b: int
    radius: float
    verts: np.ndarray            # (V, 3) unit vectors
    faces: np.ndarray            # (C, 3) vertex ids, CCW
    edge_verts: np.ndarray       # (E, 2) vertex ids, sorted
    edge_cells: np.ndarray       # (E, 2) cell ids (owner, neighbour)
    cell_edges: np.ndarray       # (C, 3) edge ids
    cell_edge_signs: np.ndarray  # (C, 3) +/-1.0
    cell_center: np.ndarray      # (C, 3) unit vectors (normalised barycenter)
    cell_area: np.ndarray        # (C,) spherical areas, radius included
    cell_inradius: np.ndarray    # (C,) incircle radius estimate
    edge_mid: np.ndarray         # (E, 3) unit vectors
    edge_normal: np.ndarray      # (E, 3) unit, tangent at midpoint
    edge_tangent: np.ndarray     # (E, 3) unit, along the edge
    edge_length: np.ndarray      # (E,) arc lengths

    @property
    def n_cells(self) -> int:
        return self.faces.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_verts.shape[0]

    @property
    def n_verts(self) -> int:
        return self.verts.shape[0]

    @property
    def name(self) -> str:
        return f"R{self.n_r}B{self.n_b}"

    def cell_lonlat(self) -> tuple[np.ndarray, np.ndarray]:
        """Longitude in [0, 2*pi) and latitude of the cell centers."""
        return _lonlat(self.cell_center)

    def cell_neighbors(self) -> np.ndarray:
        """(C, 3) cell ids across each cell edge."""
        own = self.edge_cells[self.cell_edges, 0]
        nbr = self.edge_cells[self.cell_edges, 1]
        mine = np.arange(self.n_cells)[:, None]
        return np.where(own == mine, nbr, own)


@dataclass(frozen=True)
class GridMetrics:
    n_cells: int
    n_edges: int
    n_verts: int
    euler_characteristic: int
    total_area: float
    min_cell_area: float
    max_cell_area: float
    min_edge_length: float
    max_edge_length: float
    edge_ratio_global: float      # longest edge / shortest edge, whole grid
    edge_ratio_cell_max: float    # worst per-triangle max:min side ratio
    min_inradius: float


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _lonlat(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lon = np.mod(np.arctan2(p[..., 1], p[..., 0]), 2.0 * np.pi)
    lat = np.arcsin(np.clip(p[..., 2], -1.0, 1.0))
    return lon, lat


def _arc_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Great-circle angle between unit vectors, stable for small separations."""
    cr = np.linalg.norm(np.cross(a, b), axis=-1)
    dt = np.einsum("...i,...i->...", a, b)
    return np.arctan2(cr, dt)


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Vertices and faces of the pole-aligned regular icosahedron.

    One vertex at each pole; the remaining ten sit on two latitude rings at
    +/- atan(1/2), the southern ring rotated by 36 degrees.
    """
    lat = math.atan(0.5)
    verts = [(0.0, 0.0, 1.0)]
    for k in range(5):
        lon = 2.0 * math.pi * k / 5.0
        verts.append((math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)))
    for k in range(5):
        lon = 2.0 * math.pi * k / 5.0 + math.pi / 5.0
        verts.append((math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), -math.sin(lat)))
    verts.append((0.0, 0.0, -1.0))

    faces = []
    for k in range(5):
        kn = (k + 1) % 5
        faces.append((0, 1 + k, 1 + kn))        # north cap
        faces.append((1 + k, 6 + k, 1 + kn))    # upper band
        faces.append((1 + kn, 6 + k, 6 + kn))   # lower band
        faces.append((11, 6 + kn, 6 + k))       # south cap
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def _slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Point at arc fraction t between unit vectors a and b."""
    ang = math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b)))
    return (math.sin((1.0 - t) * ang) * a + math.sin(t * ang) * b) / math.sin(ang)


def _root_divide(verts: np.ndarray, faces: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Split each face into n**2 triangles with edges cut into n equal arcs.

    Points shared between faces are deduplicated through integer keys
    (never by coordinate rounding), and edge points are always generated
    walking from the lower vertex id so shared points are bitwise equal.
    """
    if n == 1:
        return verts.copy(), faces.copy()

    points: list[np.ndarray] = [v for v in verts]
    cache: dict[tuple, int] = {}

    def edge_point(a: int, b: int, step: int) -> int:
        if a > b:
            a, b, step = b, a, n - step
        key = (a, b, step)
        idx = cache.get(key)
        if idx is None:
            idx = len(points)
            points.append(_slerp(points[a], points[b], step / n))
            cache[key] = idx
        return idx

    new_faces: list[tuple[int, int, int]] = []
    for va, vb, vc in faces:
        va, vb, vc = int(va), int(vb), int(vc)
        lattice: dict[tuple[int, int], int] = {}
        for i in range(n + 1):
            for j in range(i + 1):
                if i == 0:
                    idx = va
                elif i == n and j == 0:
                    idx = vb
                elif i == n and j == n:
                    idx = vc
                elif j == 0:
                    idx = edge_point(va, vb, i)
                elif j == i:
                    idx = edge_point(va, vc, i)
                elif i == n:
                    idx = edge_point(vb, vc, j)
                else:
                    # interior lattice point, never shared between faces
                    w = np.array([n - i, i - j, j], dtype=np.float64) / n
                    p = w[0] * points[va] + w[1] * points[vb] + w[2] * points[vc]
                    idx = len(points)
                    points.append(p / np.linalg.norm(p))
                lattice[(i, j)] = idx
        for i in range(n):
            for j in range(i + 1):
                new_faces.append((lattice[(i, j)], lattice[(i + 1, j)], lattice[(i + 1, j + 1)]))
                if j < i:
                    new_faces.append((lattice[(i, j)], lattice[(i + 1, j + 1)], lattice[(i, j + 1)]))

    return np.asarray(points), np.asarray(new_faces, dtype=np.int64)


def _bisect(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One 4-way subdivision: new vertices at projected edge midpoints."""
    c = faces.shape[0]
    half = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    uniq, inv = np.unique(np.sort(half, axis=1), axis=0, return_inverse=True)
    mids = _normalize_rows(verts[uniq[:, 0]] + verts[uniq[:, 1]])
    mid_id = len(verts) + np.arange(len(uniq))
    m01 = mid_id[inv[:c]]
    m12 = mid_id[inv[c:2 * c]]
    m20 = mid_id[inv[2 * c:]]
    new_faces = np.concatenate([
        np.stack([faces[:, 0], m01, m20], axis=1),
        np.stack([m01, faces[:, 1], m12], axis=1),
        np.stack([m20, m12, faces[:, 2]], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    return np.concatenate([verts, mids]), new_faces


def _orient_ccw(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    det = np.einsum("ij,ij->i", verts[faces[:, 0]],
                    np.cross(verts[faces[:, 1]], verts[faces[:, 2]]))
    flip = det < 0.0
    out = faces.copy()
    out[flip, 1], out[flip, 2] = faces[flip, 2], faces[flip, 1]
    return out


def _spherical_areas(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Triangle areas on the unit sphere (spherical excess)."""
    a = _arc_angle(verts[faces[:, 1]], verts[faces[:, 2]])
    b = _arc_angle(verts[faces[:, 0]], verts[faces[:, 2]])
    c = _arc_angle(verts[faces[:, 0]], verts[faces[:, 1]])
    s = 0.5 * (a + b + c)
    t = np.tan(0.5 * s) * np.tan(0.5 * (s - a)) * np.tan(0.5 * (s - b)) * np.tan(0.5 * (s - c))
    return 4.0 * np.arctan(np.sqrt(np.maximum(t, 0.0)))


def _derive(verts: np.ndarray, faces: np.ndarray, n_r: int, n_b: int,
            radius: float) -> SphereGrid:
    """Build the full grid record from vertices and face topology."""
    faces = _orient_ccw(verts, faces)
    c = faces.shape[0]

    half = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    half_cell = np.tile(np.arange(c, dtype=np.int64), 3)
    edge_verts, inv = np.unique(np.sort(half, axis=1), axis=0, return_inverse=True)
    e = edge_verts.shape[0]

    # every edge of the closed surface appears in exactly two cells
    order = np.argsort(inv, kind="stable")
    paired = half_cell[order].reshape(e, 2)
    owner = paired.min(axis=1)
    neighbor = paired.max(axis=1)
    edge_cells = np.stack([owner, neighbor], axis=1)

    cell_edges = np.ascontiguousarray(inv.reshape(3, c).T, dtype=np.int64)
    signs = np.where(owner[cell_edges] == np.arange(c)[:, None], 1.0, -1.0)

    center = _normalize_rows(verts[faces].sum(axis=1))
    area = _spherical_areas(verts, faces) * radius**2

    va = verts[edge_verts[:, 0]]
    vb = verts[edge_verts[:, 1]]
    length = _arc_angle(va, vb) * radius
    mid = _normalize_rows(va + vb)
    normal = _normalize_rows(np.cross(va, vb))
    outward = center[neighbor] - center[owner]
    flip = np.einsum("ij,ij->i", normal, outward) < 0.0
    normal[flip] *= -1.0
    tangent = np.cross(mid, normal)

    # incircle radius of the flattened triangle: area / semi-perimeter
    perim = length[cell_edges].sum(axis=1)
    inradius = area / (0.5 * perim)

    return SphereGrid(
        n_r=n_r, n_b=n_b, radius=float(radius),
        verts=verts, faces=faces,
        edge_verts=edge_verts, edge_cells=edge_cells,
        cell_edges=cell_edges, cell_edge_signs=signs,
        cell_center=center, cell_area=area, cell_inradius=inradius,
        edge_mid=mid, edge_normal=normal, edge_tangent=tangent,
        edge_length=length,
    )


def build_grid(n_r: int = 2, n_b: int = 4, radius: float = EARTH_RADIUS) -> SphereGrid:
    """Construct the RnB grid with all derived topology and geometry."""
    if n_r < 1 or n_b < 0:
        raise ValueError("need n_r >= 1 and n_b >= 0")
    verts, faces = _icosahedron()
    verts, faces = _root_divide(verts, faces, n_r)
    for _ in range(n_b):
        verts, faces = _bisect(verts, faces)
    return _derive(verts, faces, n_r, n_b, radius)


def grid_metrics(grid: SphereGrid) -> GridMetrics:
    el = grid.edge_length
    per_cell = el[grid.cell_edges]
    return GridMetrics(
        n_cells=grid.n_cells,
        n_edges=grid.n_edges,
        n_verts=grid.n_verts,
        euler_characteristic=grid.n_verts - grid.n_edges + grid.n_cells,
        total_area=float(grid.cell_area.sum()),
        min_cell_area=float(grid.cell_area.min()),
        max_cell_area=float(grid.cell_area.max()),
        min_edge_length=float(el.min()),
        max_edge_length=float(el.max()),
        edge_ratio_global=float(el.max() / el.min()),
        edge_ratio_cell_max=float((per_cell.max(axis=1) / per_cell.min(axis=1)).max()),
        min_inradius=float(grid.cell_inradius.min()),
    )


def format_report(grid: SphereGrid) -> str:
    m = grid_metrics(grid)
    sphere = 4.0 * math.pi * grid.radius**2
    lines = [
        f"grid {grid.name}: {m.n_cells} cells, {m.n_edges} edges, {m.n_verts} vertices",
        f"euler characteristic {m.euler_characteristic}",
        f"total area {m.total_area:.6e} m^2"
        f" (sphere {sphere:.6e}, rel. defect {abs(m.total_area - sphere) / sphere:.3e})",
        f"cell area min/max {m.min_cell_area:.6e} / {m.max_cell_area:.6e}"
        f" (ratio {m.max_cell_area / m.min_cell_area:.4f})",
        f"edge length min/max {m.min_edge_length:.3f} / {m.max_edge_length:.3f} m"
        f" (ratio {m.edge_ratio_global:.4f})",
        f"worst in-cell edge ratio {m.edge_ratio_cell_max:.4f}",
        f"smallest inradius {m.min_inradius:.3f} m",
    ]
    return "\n".join(lines)


def save_grid(grid: SphereGrid, path: str) -> None:
    """Plain-text dump: header, vertices (lon lat), cells, edges.

    Floats are written with repr precision, so the dump is reproducible bit
    for bit and parses back to the exact stored values.
    """
    lon, lat = _lonlat(grid.verts)
    east = _normalize_rows(np.cross([0.0, 0.0, 1.0], grid.edge_mid))
    north = np.cross(grid.edge_mid, east)
    nlon = np.einsum("ij,ij->i", grid.edge_normal, east)
    nlat = np.einsum("ij,ij->i", grid.edge_normal, north)

    lon, lat = lon.tolist(), lat.tolist()
    area, length = grid.cell_area.tolist(), grid.edge_length.tolist()
    nlon, nlat = nlon.tolist(), nlat.tolist()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"GRID {grid.n_r} {grid.n_b} {grid.radius!r}\n")
        fh.write(f"VERTICES {grid.n_verts}\n")
        for i in range(grid.n_verts):
            fh.write(f"{i} {lon[i]!r} {lat[i]!r}\n")
        fh.write(f"CELLS {grid.n_cells}\n")
        for i, (f0, f1, f2) in enumerate(grid.faces):
            fh.write(f"{i} {f0} {f1} {f2} {area[i]!r}\n")
        fh.write(f"EDGES {grid.n_edges}\n")
        for i in range(grid.n_edges):
            v0, v1 = grid.edge_verts[i]
            cl, cr = grid.edge_cells[i]
            fh.write(f"{i} {v0} {v1} {cl} {cr}"
                     f" {length[i]!r} {nlon[i]!r} {nlat[i]!r}\n")


def load_grid(path: str) -> SphereGrid:
    """Rebuild a grid from a dump written by save_grid.

    Vertex positions and face topology are read back; derived geometry is
    recomputed (it is deterministic given vertices and faces), and the
    stored edge table is checked for consistency.
    """
    with open(path, encoding="ascii") as fh:
        tag, n_r, n_b, radius = fh.readline().split()
        if tag != "GRID":
            raise ValueError(f"not a grid dump: {path}")

        kind, nv = fh.readline().split()
        if kind != "VERTICES":
            raise ValueError("expected VERTICES section")
        lon = np.empty(int(nv))
        lat = np.empty(int(nv))
        for k in range(int(nv)):
            parts = fh.readline().split()
            lon[k], lat[k] = float(parts[1]), float(parts[2])

        kind, nc = fh.readline().split()
        if kind != "CELLS":
            raise ValueError("expected CELLS section")
        faces = np.empty((int(nc), 3), dtype=np.int64)
        for k in range(int(nc)):
            parts = fh.readline().split()
            faces[k] = [int(parts[1]), int(parts[2]), int(parts[3])]

        kind, ne = fh.readline().split()
        if kind != "EDGES":
            raise ValueError("expected EDGES section")
        edge_tab = np.empty((int(ne), 4), dtype=np.int64)
        for k in range(int(ne)):
            parts = fh.readline().split()
            edge_tab[k] = [int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4])]

    verts = np.stack([np.cos(lat) * np.cos(lon),
                      np.cos(lat) * np.sin(lon),
                      np.sin(lat)], axis=1)
    grid = _derive(verts, faces, int(n_r), int(n_b), float(radius))
    if not (np.array_equal(grid.edge_verts, edge_tab[:, :2])
            and np.array_equal(grid.edge_cells, edge_tab[:, 2:])):
        raise ValueError(f"edge table in {path} is inconsistent with its cells")
    return grid
