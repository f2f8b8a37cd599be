"""Two-dimensional polytopal meshes of the unit square.

A mesh is described by its vertices and, for every cell, the counterclockwise
list of its vertex ids.  Faces are the edges between consecutive vertices of a
cell, deduplicated by vertex pair.  A straight side of a cell may be split by
hanging nodes into several faces, which is how non-conforming (locally
refined) meshes are represented.

All derived geometry is computed once in :func:`build_mesh` and stored as flat
numpy arrays; :class:`PolytopalMesh` is treated as immutable afterwards.
"""
from __future__ import annotations

import enum
import io
import os
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO, Union

import numpy as np
from scipy.spatial import Voronoi

from .errors import (
    DegenerateCell,
    InconsistentOrientation,
    MeshValidationError,
    NonManifoldFace,
    ParseError,
    UnsupportedLevel,
)

AREA_TOL = 1e-14
MAX_CELLS = 10**6


@dataclass(frozen=True)
class Cell:
    vertex_ids: tuple
    face_ids: tuple
    barycenter: np.ndarray
    area: float
    diameter: float


@dataclass(frozen=True)
class Face:
    vertex_ids: tuple
    measure: float
    midpoint: np.ndarray
    owner: int
    neighbor: int | None
    normal: np.ndarray
    is_boundary: bool


class PolytopalMesh:
    """Cells, faces and vertices of a 2D polytopal mesh with derived geometry.

    Per-cell connectivity is stored in CSR form: the local entities of cell
    ``K`` live in ``cell_ptr[K]:cell_ptr[K+1]`` of ``cell_vertex_flat``,
    ``cell_face_flat`` and ``cell_face_sign``.  Local face ``i`` joins local
    vertices ``i`` and ``i+1``.  ``cell_face_sign`` is +1 when the cell owns
    the face (the stored face normal points out of it) and -1 otherwise.
    """

    def __init__(self, vertices, cell_ptr, cell_vertex_flat, cell_face_flat,
                 cell_face_sign, areas, barycenters, diameters, face_vertices,
                 face_cells, face_measures, face_midpoints, face_normals):
        self.vertices = vertices
        self.cell_ptr = cell_ptr
        self.cell_vertex_flat = cell_vertex_flat
        self.cell_face_flat = cell_face_flat
        self.cell_face_sign = cell_face_sign
        self.areas = areas
        self.barycenters = barycenters
        self.diameters = diameters
        self.face_vertices = face_vertices
        self.face_cells = face_cells
        self.face_measures = face_measures
        self.face_midpoints = face_midpoints
        self.face_normals = face_normals
        self.is_boundary = face_cells[:, 1] < 0
        self.h = float(diameters.max())
        for arr in self.__dict__.values():
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False

    @property
    def n_cells(self) -> int:
        return len(self.areas)

    @property
    def n_faces(self) -> int:
        return len(self.face_measures)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.is_boundary)

    @property
    def cell_sizes(self) -> np.ndarray:
        return np.diff(self.cell_ptr)

    def cell_vertices(self, k: int) -> np.ndarray:
        return self.cell_vertex_flat[self.cell_ptr[k]:self.cell_ptr[k + 1]]

    def cell_faces(self, k: int) -> np.ndarray:
        return self.cell_face_flat[self.cell_ptr[k]:self.cell_ptr[k + 1]]

    def cell_vertex_lists(self) -> list[list[int]]:
        return [self.cell_vertices(k).tolist() for k in range(self.n_cells)]

    def outward_normals(self, k: int) -> np.ndarray:
        """Unit normals of the faces of cell ``k``, pointing out of ``k``."""
        sl = slice(self.cell_ptr[k], self.cell_ptr[k + 1])
        return self.face_normals[self.cell_face_flat[sl]] * self.cell_face_sign[sl, None]

    def cell(self, k: int) -> Cell:
        return Cell(
            vertex_ids=tuple(self.cell_vertices(k).tolist()),
            face_ids=tuple(self.cell_faces(k).tolist()),
            barycenter=self.barycenters[k],
            area=float(self.areas[k]),
            diameter=float(self.diameters[k]),
        )

    def face(self, j: int) -> Face:
        nb = int(self.face_cells[j, 1])
        return Face(
            vertex_ids=tuple(self.face_vertices[j].tolist()),
            measure=float(self.face_measures[j]),
            midpoint=self.face_midpoints[j],
            owner=int(self.face_cells[j, 0]),
            neighbor=None if nb < 0 else nb,
            normal=self.face_normals[j],
            is_boundary=nb < 0,
        )

    def groups(self) -> dict[int, np.ndarray]:
        """Cell ids grouped by number of faces, for batched per-cell work."""
        sizes = self.cell_sizes
        return {int(n): np.flatnonzero(sizes == n) for n in np.unique(sizes)}

    def __repr__(self):
        return (f"PolytopalMesh(n_cells={self.n_cells}, n_faces={self.n_faces}, "
                f"n_vertices={self.n_vertices}, h={self.h:.7g})")


def build_mesh(vertices, cell_vertex_lists: Iterable[Sequence[int]]) -> PolytopalMesh:
    """Build a mesh from vertex coordinates and CCW cell vertex lists.

    Raises NonManifoldFace, DegenerateCell or InconsistentOrientation (all
    subclasses of MeshValidationError) when the input is not a valid mesh.
    """
    verts = np.array(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise MeshValidationError("vertices must be an (n, 2) array")
    if not np.all(np.isfinite(verts)):
        raise MeshValidationError("vertex coordinates must be finite")
    cells = [np.asarray(c, dtype=np.int64).ravel() for c in cell_vertex_lists]
    if not cells:
        raise MeshValidationError("mesh has no cells")
    nv = len(verts)
    for k, c in enumerate(cells):
        if len(c) < 3:
            raise DegenerateCell(f"cell {k} has fewer than 3 vertices")
        if c.min() < 0 or c.max() >= nv:
            raise MeshValidationError(f"cell {k} references a missing vertex")
        if np.any(c == np.roll(c, -1)) or len(np.unique(c)) != len(c):
            raise DegenerateCell(f"cell {k} repeats a vertex")

    sizes = np.array([len(c) for c in cells])
    cell_ptr = np.concatenate([[0], np.cumsum(sizes)])
    ea = np.concatenate(cells)
    eb = np.concatenate([np.roll(c, -1) for c in cells])
    ecell = np.repeat(np.arange(len(cells)), sizes)

    # shoelace relative to each cell's first vertex
    ref = verts[ea[cell_ptr[:-1]]]
    pa = verts[ea] - ref[ecell]
    pb = verts[eb] - ref[ecell]
    cross = pa[:, 0] * pb[:, 1] - pa[:, 1] * pb[:, 0]
    signed = 0.5 * np.bincount(ecell, cross, minlength=len(cells))
    scale = np.array([np.ptp(verts[c], axis=0).max() for c in cells])
    for k in np.flatnonzero(np.abs(signed) <= AREA_TOL * np.maximum(scale, 1.0) ** 2):
        raise DegenerateCell(f"cell {k} has (near) zero area {signed[k]:.3e}")
    for k in np.flatnonzero(signed < 0):
        raise InconsistentOrientation(f"cell {k} is listed clockwise")
    areas = signed
    cx = np.bincount(ecell, (pa[:, 0] + pb[:, 0]) * cross, minlength=len(cells))
    cy = np.bincount(ecell, (pa[:, 1] + pb[:, 1]) * cross, minlength=len(cells))
    barycenters = ref + np.column_stack([cx, cy]) / (6.0 * areas[:, None])

    _check_simple(verts, cells)

    # faces, deduplicated by unordered vertex pair
    lo = np.minimum(ea, eb)
    hi = np.maximum(ea, eb)
    keys = lo * nv + hi
    uniq, first, inverse, counts = np.unique(keys, return_index=True,
                                             return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        j = int(np.flatnonzero(counts > 2)[0])
        raise NonManifoldFace(f"face {tuple(divmod(int(uniq[j]), nv))} is shared by "
                              f"{counts[j]} cells")
    nf = len(uniq)
    inverse = inverse.ravel()
    # owner: first occurrence in edge order (lowest cell id)
    owner_edge = first
    is_owner = np.zeros(len(ea), dtype=bool)
    is_owner[owner_edge] = True
    other = np.flatnonzero(~is_owner)
    face_cells = np.full((nf, 2), -1, dtype=np.int64)
    face_cells[:, 0] = ecell[owner_edge]
    face_cells[inverse[other], 1] = ecell[other]
    # a shared face must be traversed in opposite directions by its two cells
    same_dir = ea[other] == ea[owner_edge[inverse[other]]]
    if np.any(same_dir):
        j = int(inverse[other][same_dir][0])
        raise NonManifoldFace(f"face {j} is bounded on the same side by cells "
                              f"{tuple(face_cells[j])} (overlapping cells)")

    fa = ea[owner_edge]
    fb = eb[owner_edge]
    d = verts[fb] - verts[fa]
    measures = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / measures[:, None]
    midpoints = 0.5 * (verts[fa] + verts[fb])
    sign = np.where(is_owner, 1, -1).astype(np.int64)

    diameters = np.empty(len(cells))
    for n in np.unique(sizes):
        ids = np.flatnonzero(sizes == n)
        idx = ea[cell_ptr[ids][:, None] + np.arange(n)]
        p = verts[idx]
        diff = p[:, :, None, :] - p[:, None, :, :]
        diameters[ids] = np.sqrt((diff ** 2).sum(-1)).max(axis=(1, 2))

    return PolytopalMesh(
        vertices=verts,
        cell_ptr=cell_ptr,
        cell_vertex_flat=ea,
        cell_face_flat=inverse.astype(np.int64),
        cell_face_sign=sign,
        areas=areas,
        barycenters=barycenters,
        diameters=diameters,
        face_vertices=np.column_stack([fa, fb]),
        face_cells=face_cells,
        face_measures=measures,
        face_midpoints=midpoints,
        face_normals=normals,
    )


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - \
        (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _check_simple(verts, cells):
    """Reject cells whose boundary crosses or touches itself."""
    sizes = np.array([len(c) for c in cells])
    for n in np.unique(sizes):
        if n < 4:
            continue
        ids = np.flatnonzero(sizes == n)
        p = verts[np.stack([cells[k] for k in ids])]
        q = np.roll(p, -1, axis=1)
        pairs = [(i, j) for i in range(n) for j in range(i + 2, n)
                 if not (i == 0 and j == n - 1)]
        ii, jj = np.array(pairs).T
        a, b, c, d = p[:, ii], q[:, ii], p[:, jj], q[:, jj]
        scale = np.ptp(p, axis=1).max(axis=1)[:, None] ** 2
        tol = 1e-13 * scale
        o1, o2 = _orient(a, b, c), _orient(a, b, d)
        o3, o4 = _orient(c, d, a), _orient(c, d, b)
        s1 = np.where(np.abs(o1) < tol, 0, np.sign(o1))
        s2 = np.where(np.abs(o2) < tol, 0, np.sign(o2))
        s3 = np.where(np.abs(o3) < tol, 0, np.sign(o3))
        s4 = np.where(np.abs(o4) < tol, 0, np.sign(o4))
        proper = (s1 * s2 < 0) & (s3 * s4 < 0)

        def on_seg(s, a_, b_, c_):
            lo = np.minimum(a_, b_) - 1e-13
            hi = np.maximum(a_, b_) + 1e-13
            inside = np.all((c_ >= lo) & (c_ <= hi), axis=-1)
            return (s == 0) & inside

        touch = on_seg(s1, a, b, c) | on_seg(s2, a, b, d) | \
            on_seg(s3, c, d, a) | on_seg(s4, c, d, b)
        bad = np.any(proper | touch, axis=1)
        if np.any(bad):
            raise DegenerateCell(f"cell {int(ids[np.argmax(bad)])} is not a simple polygon")


def mesh_size(mesh: PolytopalMesh) -> float:
    """Maximum cell diameter."""
    return float(mesh.diameters.max())


# -- generators ---------------------------------------------------------------

class FamilyTag(str, enum.Enum):
    TRIANGULAR = "triangular"
    HEXAGONAL = "hexagonal"
    DISTORTED_QUAD = "distorted"
    LOCALLY_REFINED = "nonconforming"


@dataclass(frozen=True)
class MeshFamily:
    tag: FamilyTag
    level: int

    def __post_init__(self):
        object.__setattr__(self, "tag", FamilyTag(self.tag))
        if int(self.level) != self.level or self.level < 1:
            raise UnsupportedLevel(f"level must be a positive integer, got {self.level!r}")


def _triangular(level):
    # criss-cross: every square of an n x n grid cut into four triangles at
    # its centre, so the longest edge is the grid spacing
    n = 8 * 2 ** (level - 1)
    _guard(4 * n * n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    c = (np.arange(n) + 0.5) / n
    CX, CY = np.meshgrid(c, c, indexing="ij")
    centres = np.column_stack([CX.ravel(), CY.ravel()])
    verts = np.vstack([grid, centres])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    p00 = i * (n + 1) + j
    p10 = (i + 1) * (n + 1) + j
    p11 = (i + 1) * (n + 1) + j + 1
    p01 = i * (n + 1) + j + 1
    ctr = (n + 1) ** 2 + i * n + j
    tris = np.stack([
        np.column_stack([p00, p10, ctr]),
        np.column_stack([p10, p11, ctr]),
        np.column_stack([p11, p01, ctr]),
        np.column_stack([p01, p00, ctr]),
    ], axis=1).reshape(-1, 3)
    return verts, tris.tolist()


def _hexagonal(level):
    # Voronoi cells of a staggered lattice clipped to the square.  The walls
    # pass through generator rows/columns (or along hexagon sides), so the
    # wall cells are halves and quarters of hexagons and no slivers appear.
    n = 9 * 2 ** (level - 1)
    m = int(round(2.0 * n / np.sqrt(3.0)))
    m += m % 2
    _guard((n + 1) * (m + 1))
    pts = []
    for r in range(-2, m + 3):
        if r % 2 == 0:
            xs = np.arange(-2, n + 3) / n
        else:
            xs = (np.arange(-2, n + 2) + 0.5) / n
        pts.append(np.column_stack([xs, np.full(len(xs), r / m)]))
    pts = np.vstack(pts)
    inside = np.all((pts >= -1e-12) & (pts <= 1 + 1e-12), axis=1)
    vor = Voronoi(pts)
    polys = []
    for i in np.flatnonzero(inside):
        region = vor.regions[vor.point_region[i]]
        poly = _clip_to_unit_square(vor.vertices[region])
        if len(poly) >= 3:
            polys.append(poly)
    return _merge_polygons(polys)


def _clip_to_unit_square(poly):
    """Sutherland-Hodgman clipping of a convex polygon against [0,1]^2."""
    pts = [np.asarray(p, dtype=float) for p in poly]
    for axis, bound, keep_below in ((0, 0.0, False), (0, 1.0, True),
                                    (1, 0.0, False), (1, 1.0, True)):
        if not pts:
            break

        def inside(p):
            return p[axis] <= bound if keep_below else p[axis] >= bound

        out = []
        for k, cur in enumerate(pts):
            prev = pts[k - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(_cut(prev, cur, axis, bound))
                out.append(cur)
            elif inside(prev):
                out.append(_cut(prev, cur, axis, bound))
        pts = out
    return pts


def _cut(a, b, axis, bound):
    t = (bound - a[axis]) / (b[axis] - a[axis])
    p = a + t * (b - a)
    p[axis] = bound
    return p


def _merge_polygons(polys, decimals=10):
    """Merge coincident vertices and orient every polygon counterclockwise."""
    allpts = np.vstack([np.asarray(p) for p in polys])
    key = np.round(allpts, decimals) + 0.0
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    out = []
    start = 0
    for p in polys:
        ids = inv[start:start + len(p)]
        start += len(p)
        ids = ids[ids != np.roll(ids, 1)]
        if len(ids) < 3:
            continue
        q = uniq[ids]
        r = np.roll(q, -1, axis=0)
        area = np.sum(q[:, 0] * r[:, 1] - q[:, 1] * r[:, 0])
        if abs(area) < 1e-14:
            continue
        if area < 0:
            ids = ids[::-1]
        out.append(ids.tolist())
    return uniq, out


def distorted_resolution(level: int) -> int:
    """Grid size of the distorted family.

    Grows linearly rather than doubling, so successive h ratios are about
    3/2, 4/3, 5/4 (h = 0.174, 0.120, 0.092, 0.074 for levels 1-4).  Always
    odd, which keeps every interior vertex off the zero lines of the map.
    """
    return 6 * level + 7


def distortion_map(x, y, amplitude=0.1):
    s = amplitude * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    return x + s, y + s


def _distorted(level):
    n = distorted_resolution(level)
    _guard(n * n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    x, y = X.ravel(), Y.ravel()
    interior = (x > 0) & (x < 1) & (y > 0) & (y < 1)
    dx, dy = distortion_map(x, y)
    x = np.where(interior, dx, x)
    y = np.where(interior, dy, y)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    quads = np.column_stack([i * (n + 1) + j, (i + 1) * (n + 1) + j,
                             (i + 1) * (n + 1) + j + 1, i * (n + 1) + j + 1])
    return np.column_stack([x, y]), quads.tolist()


def _locally_refined(level):
    # n x n squares; the lower-left quadrant is refined once more into 2x2,
    # producing hanging nodes on the coarse cells along x = 1/2 and y = 1/2
    n = 8 * 2 ** (level - 1)
    half = n // 2
    _guard(n * n + 3 * half * half)
    N = 2 * n  # fine lattice resolution
    vid = {}
    verts = []

    def v(I, J):
        if (I, J) not in vid:
            vid[(I, J)] = len(verts)
            verts.append((I / N, J / N))
        return vid[(I, J)]

    fine_pts = set()
    cells = []
    for i in range(2 * half):
        for j in range(2 * half):
            corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            fine_pts.update(corners)
            cells.append([v(*c) for c in corners])
    for i in range(n):
        for j in range(n):
            if i < half and j < half:
                continue
            I, J = 2 * i, 2 * j
            ring = [(I, J), (I + 1, J), (I + 2, J), (I + 2, J + 1),
                    (I + 2, J + 2), (I + 1, J + 2), (I, J + 2), (I, J + 1)]
            cells.append([v(*p) for k, p in enumerate(ring)
                          if k % 2 == 0 or p in fine_pts])
    return np.array(verts), cells


def _guard(ncells):
    if ncells > MAX_CELLS:
        raise UnsupportedLevel(f"level would produce {ncells} cells (> {MAX_CELLS})")


_GENERATORS = {
    FamilyTag.TRIANGULAR: _triangular,
    FamilyTag.HEXAGONAL: _hexagonal,
    FamilyTag.DISTORTED_QUAD: _distorted,
    FamilyTag.LOCALLY_REFINED: _locally_refined,
}


def generate(family: MeshFamily | str, level: int | None = None) -> PolytopalMesh:
    """Generate a mesh of the unit square.

    ``generate(MeshFamily("hexagonal", 2))`` and ``generate("hexagonal", 2)``
    are equivalent.  Generators are deterministic.
    """
    if not isinstance(family, MeshFamily):
        family = MeshFamily(FamilyTag(family), 1 if level is None else level)
    verts, cells = _GENERATORS[family.tag](family.level)
    return build_mesh(verts, cells)


# -- text format --------------------------------------------------------------

PathOrStream = Union[str, os.PathLike, TextIO]


def write_mesh(mesh: PolytopalMesh, sink: PathOrStream) -> None:
    """Write VERTICES/CELLS sections (0-based ids, full float precision)."""
    buf = io.StringIO()
    buf.write(f"# hmmgdm mesh: {mesh.n_cells} cells, {mesh.n_faces} faces, h={float(mesh.h)!r}\n")
    buf.write(f"VERTICES\n{mesh.n_vertices}\n")
    for x, y in mesh.vertices:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    buf.write(f"CELLS\n{mesh.n_cells}\n")
    for k in range(mesh.n_cells):
        buf.write(" ".join(map(str, mesh.cell_vertices(k).tolist())) + "\n")
    text = buf.getvalue()
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w") as fh:
            fh.write(text)


def read_mesh(source: PathOrStream) -> PolytopalMesh:
    """Parse a mesh file and rebuild all derived geometry."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source) as fh:
            text = fh.read()
    verts, cells = parse_mesh_text(text)
    return build_mesh(verts, cells)


def parse_mesh_text(text: str):
    """Tokenise mesh text into ``(vertices, cell vertex lists)`` without validation."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped))
    if not lines:
        raise ParseError("empty mesh file")
    pos = 0

    def expect_header(name):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"missing {name} section")
        lineno, s = lines[pos]
        if s.upper() != name:
            raise ParseError(f"expected {name!r}, found {s!r}", lineno)
        pos += 1
        if pos >= len(lines):
            raise ParseError(f"missing {name} count")
        lineno, s = lines[pos]
        try:
            count = int(s)
        except ValueError:
            raise ParseError(f"invalid {name} count {s!r}", lineno) from None
        if count < 0:
            raise ParseError(f"negative {name} count", lineno)
        pos += 1
        if pos + count > len(lines):
            raise ParseError(f"{name} section truncated: expected {count} entries")
        return count

    nv = expect_header("VERTICES")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, s = lines[pos + i]
        parts = s.split()
        try:
            if len(parts) != 2:
                raise ValueError
            verts[i] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise ParseError(f"expected 'x y', found {s!r}", lineno) from None
    pos += nv
    nc = expect_header("CELLS")
    cells = []
    for i in range(nc):
        lineno, s = lines[pos + i]
        try:
            ids = [int(t) for t in s.split()]
        except ValueError:
            raise ParseError(f"invalid vertex id in {s!r}", lineno) from None
        if len(ids) < 3:
            raise ParseError("a cell needs at least 3 vertices", lineno)
        bad = [t for t in ids if t < 0 or t >= nv]
        if bad:
            raise ParseError(f"cell references missing vertex {bad[0]}", lineno)
        cells.append(ids)
    pos += nc
    if pos != len(lines):
        lineno, s = lines[pos]
        raise ParseError(f"unexpected trailing content {s!r}", lineno)
    if nc == 0:
        raise ParseError("mesh has no cells")
    return verts, cells
