"""Conforming simplicial meshes on axis-aligned boxes.

Only two families are supported, both shape-regular and quasi-uniform by
construction:

* 2D: the regular diagonal split of an n-by-n grid of rectangles into two
  triangles each (all cells congruent);
* 3D: the Kuhn subdivision of an n-by-n-by-n grid of boxes into six
  tetrahedra each (cells fall into a fixed set of congruence classes).

Uniform (red) refinement splits every cell into 2^dim similar children, so
cell shapes -- and hence all quality ratios -- are preserved under
refinement, and the mesh size h halves exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvariantViolation

__all__ = [
    "Mesh",
    "QualityReport",
    "build_structured",
    "refine_uniform",
    "mesh_quality",
    "extract_edges",
]


# ---------------------------------------------------------------------------
# geometry helpers (shared with the FE layer)
# ---------------------------------------------------------------------------

def signed_volumes(vertices, cells):
    """Signed volume of every cell, using the stored vertex order.

    For a d-simplex with vertices x_0..x_d this is det[x_1-x_0, ..
    x_d-x_0] / d!.  Positive for correctly oriented cells.
    """
    x = vertices[cells]                      # (nc, d+1, d)
    edges = x[:, 1:, :] - x[:, :1, :]        # (nc, d, d)
    d = vertices.shape[1]
    fact = {1: 1.0, 2: 2.0, 3: 6.0}[d]
    return np.linalg.det(edges) / fact


def cell_diameters(vertices, cells):
    """Diameter (longest edge) of every cell."""
    x = vertices[cells]                      # (nc, d+1, d)
    nloc = cells.shape[1]
    diam = np.zeros(cells.shape[0])
    for a in range(nloc):
        for b in range(a + 1, nloc):
            e = np.linalg.norm(x[:, a, :] - x[:, b, :], axis=1)
            diam = np.maximum(diam, e)
    return diam


def _facet_count(cells):
    """Count occurrences of every facet (codimension-1 sub-simplex).

    Returns a dict mapping the sorted vertex tuple of the facet to the
    number of cells containing it.  Conformity means every count is 1
    (boundary) or 2 (interior).
    """
    nloc = cells.shape[1]
    counts = {}
    for cell in cells:
        for drop in range(nloc):
            facet = tuple(sorted(np.delete(cell, drop)))
            counts[facet] = counts.get(facet, 0) + 1
    return counts


def extract_edges(cells):
    """Global edge numbering from cell connectivity.

    Returns
    -------
    edges : ndarray, shape (n_edges, 2)
        Unique vertex pairs, each sorted ascending, in first-seen order.
    cell_edges : ndarray, shape (n_cells, n_local_edges)
        For each cell, the global edge index of its local edges.  Local
        edges are the vertex pairs (i, j), i < j, in lexicographic order --
        (0,1), (0,2), (1,2) on triangles and (0,1), (0,2), (0,3), (1,2),
        (1,3), (2,3) on tetrahedra.
    """
    nloc = cells.shape[1]
    pairs = [(i, j) for i in range(nloc) for j in range(i + 1, nloc)]
    index = {}
    edges = []
    cell_edges = np.empty((cells.shape[0], len(pairs)), dtype=np.int64)
    for c, cell in enumerate(cells):
        for e, (i, j) in enumerate(pairs):
            key = (int(cell[i]), int(cell[j]))
            if key[0] > key[1]:
                key = (key[1], key[0])
            g = index.get(key)
            if g is None:
                g = len(edges)
                index[key] = g
                edges.append(key)
            cell_edges[c, e] = g
    return np.asarray(edges, dtype=np.int64), cell_edges


# ---------------------------------------------------------------------------
# mesh container
# ---------------------------------------------------------------------------

@dataclass
class Mesh:
    """A conforming simplicial mesh.

    Attributes
    ----------
    dim : int
        Geometric dimension, 2 or 3.
    vertices : ndarray, shape (n_vertices, dim)
    cells : ndarray, shape (n_cells, dim + 1)
        Vertex indices of each simplex, positively oriented.
    boundary_facets : ndarray, shape (n_bfacets, dim)
        Vertex indices of each boundary facet (edges in 2D, triangles in
        3D), sorted ascending within a row.
    boundary_tags : ndarray, shape (n_bfacets,)
        Integer tag per boundary facet; the structured builder tags box
        sides 0..2*dim-1 in (xmin, xmax, ymin, ymax, zmin, zmax) order.
    h_max, h_min : float
        Largest / smallest cell diameter.
    """

    dim: int
    vertices: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    boundary_facets: np.ndarray = field(repr=False)
    boundary_tags: np.ndarray = field(repr=False)
    h_max: float = 0.0
    h_min: float = 0.0

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    def validate(self):
        """Check orientation and conformity; raise InvariantViolation."""
        vols = signed_volumes(self.vertices, self.cells)
        scale = self.h_max ** self.dim if self.h_max > 0 else 1.0
        if np.any(vols <= 1e-14 * scale):
            bad = int(np.argmin(vols))
            raise InvariantViolation(
                f"cell {bad} has non-positive volume {vols[bad]:.3e}"
            )
        counts = _facet_count(self.cells)
        if any(c > 2 for c in counts.values()):
            raise InvariantViolation("a facet is shared by more than two cells")
        boundary = {tuple(sorted(f)) for f, c in counts.items() if c == 1}
        stored = {tuple(sorted(f)) for f in self.boundary_facets}
        if boundary != stored:
            raise InvariantViolation(
                "stored boundary facets disagree with cell connectivity "
                f"({len(stored)} stored, {len(boundary)} derived)"
            )
        return self


def _finish(dim, vertices, cells, boundary_facets, boundary_tags):
    diam = cell_diameters(vertices, cells)
    m = Mesh(
        dim=dim,
        vertices=np.ascontiguousarray(vertices, dtype=float),
        cells=np.ascontiguousarray(cells, dtype=np.int64),
        boundary_facets=np.ascontiguousarray(boundary_facets, dtype=np.int64),
        boundary_tags=np.ascontiguousarray(boundary_tags, dtype=np.int64),
        h_max=float(diam.max()),
        h_min=float(diam.min()),
    )
    return m.validate()


# ---------------------------------------------------------------------------
# structured builders
# ---------------------------------------------------------------------------

def _boundary_from_cells(vertices, cells, box):
    """Derive boundary facets by facet counting and tag them by box side."""
    counts = _facet_count(cells)
    facets = sorted(f for f, c in counts.items() if c == 1)
    dim = vertices.shape[1]
    tags = []
    tol = 1e-12 * max(hi - lo for lo, hi in box)
    for f in facets:
        xs = vertices[list(f)]
        tag = -1
        for axis in range(dim):
            lo, hi = box[axis]
            if np.all(np.abs(xs[:, axis] - lo) <= tol):
                tag = 2 * axis
                break
            if np.all(np.abs(xs[:, axis] - hi) <= tol):
                tag = 2 * axis + 1
                break
        if tag < 0:
            raise InvariantViolation("boundary facet not on any box side")
        tags.append(tag)
    return np.asarray(facets, dtype=np.int64), np.asarray(tags, dtype=np.int64)


def build_structured(dim, n, domain=None):
    """Regular simplicial subdivision of an axis-aligned box.

    Parameters
    ----------
    dim : {2, 3}
    n : int
        Cells per side of the underlying grid (n >= 1).  The simplicial
        mesh has 2 n^2 triangles (2D) or 6 n^3 tetrahedra (3D).
    domain : sequence of (lo, hi) pairs, optional
        One pair per axis; defaults to the unit box.

    Returns
    -------
    Mesh
    """
    if dim not in (2, 3):
        raise ConfigurationError(f"mesh dimension must be 2 or 3, got {dim}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"cells-per-side must be a positive integer, got {n!r}")
    if domain is None:
        domain = [(0.0, 1.0)] * dim
    box = [(float(lo), float(hi)) for lo, hi in domain]
    if len(box) != dim:
        raise ConfigurationError(f"domain must give {dim} (lo, hi) pairs")
    if any(hi <= lo for lo, hi in box):
        raise ConfigurationError("domain box has a non-positive side length")

    axes = [np.linspace(lo, hi, n + 1) for lo, hi in box]

    if dim == 2:
        X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
        vertices = np.column_stack([X.ravel(), Y.ravel()])
        v = lambda i, j: j * (n + 1) + i
        cells = []
        for j in range(n):
            for i in range(n):
                a, b = v(i, j), v(i + 1, j)
                c, d = v(i + 1, j + 1), v(i, j + 1)
                # split along the a--c diagonal, same direction everywhere
                cells.append((a, b, c))
                cells.append((a, c, d))
        cells = np.asarray(cells, dtype=np.int64)
    else:
        X, Y, Z = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
        # index (i, j, k) -> flat with k fastest is awkward; use explicit map
        vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        v = lambda i, j, k: (i * (n + 1) + j) * (n + 1) + k
        # Kuhn subdivision: one tet per permutation of the axes, walking
        # from the low corner to the high corner of each grid cube.
        from itertools import permutations

        steps = {0: (1, 0, 0), 1: (0, 1, 0), 2: (0, 0, 1)}
        cells = []
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for perm in permutations((0, 1, 2)):
                        p = [(i, j, k)]
                        for axis in perm:
                            s = steps[axis]
                            p.append(tuple(p[-1][q] + s[q] for q in range(3)))
                        cells.append(tuple(v(*q) for q in p))
        cells = np.asarray(cells, dtype=np.int64)
        # half the permutations are odd; flip those to positive orientation
        vols = signed_volumes(vertices, cells)
        flip = vols < 0
        cells[np.ix_(flip, [2, 3])] = cells[np.ix_(flip, [3, 2])]

    facets, tags = _boundary_from_cells(vertices, cells, box)
    return _finish(dim, vertices, cells, facets, tags)


# ---------------------------------------------------------------------------
# uniform refinement
# ---------------------------------------------------------------------------

def refine_uniform(m):
    """Red refinement: split every cell into 2^dim similar children.

    Edge midpoints become new vertices; boundary facets are split in place
    and keep their tags.  Child ordering is deterministic, so refining the
    same mesh twice yields identical results.
    """
    verts = [m.vertices]
    midpoint = {}
    next_index = m.n_vertices

    def mid(a, b):
        nonlocal next_index
        key = (a, b) if a < b else (b, a)
        g = midpoint.get(key)
        if g is None:
            g = next_index
            midpoint[key] = g
            verts.append((m.vertices[a] + m.vertices[b])[None, :] / 2.0)
            next_index += 1
        return g

    children = []
    if m.dim == 2:
        for v0, v1, v2 in m.cells:
            m01, m02, m12 = mid(v0, v1), mid(v0, v2), mid(v1, v2)
            children += [
                (v0, m01, m02),
                (m01, v1, m12),
                (m02, m12, v2),
                (m01, m12, m02),
            ]
    else:
        for v0, v1, v2, v3 in m.cells:
            m01, m02, m03 = mid(v0, v1), mid(v0, v2), mid(v0, v3)
            m12, m13, m23 = mid(v1, v2), mid(v1, v3), mid(v2, v3)
            # 4 corner children + 4 interior children around the m02--m13
            # diagonal; this choice keeps every child similar to a cell of
            # the original Kuhn family, so h halves exactly.
            children += [
                (v0, m01, m02, m03),
                (m01, v1, m12, m13),
                (m02, m12, v2, m23),
                (m03, m13, m23, v3),
                (m01, m02, m03, m13),
                (m01, m02, m12, m13),
                (m02, m03, m13, m23),
                (m02, m12, m13, m23),
            ]
    cells = np.asarray(children, dtype=np.int64)
    vertices = np.concatenate(verts, axis=0)

    # restore positive orientation where a child came out flipped
    vols = signed_volumes(vertices, cells)
    flip = vols < 0
    last = cells.shape[1] - 1
    cells[np.ix_(flip, [last - 1, last])] = cells[np.ix_(flip, [last, last - 1])]

    bfacets = []
    btags = []
    for f, tag in zip(m.boundary_facets, m.boundary_tags):
        if m.dim == 2:
            a, b = f
            mab = mid(a, b)
            bfacets += [(a, mab), (mab, b)]
            btags += [tag, tag]
        else:
            a, b, c = f
            mab, mac, mbc = mid(a, b), mid(a, c), mid(b, c)
            bfacets += [(a, mab, mac), (mab, b, mbc), (mac, mbc, c), (mab, mbc, mac)]
            btags += [tag] * 4
    bfacets = np.sort(np.asarray(bfacets, dtype=np.int64), axis=1)
    return _finish(m.dim, vertices, cells, bfacets, np.asarray(btags, dtype=np.int64))


# ---------------------------------------------------------------------------
# quality report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QualityReport:
    """Shape and uniformity summary of a mesh.

    ``min_inradius_ratio`` is min over cells of (inradius / diameter) --
    the shape-regularity measure; ``uniformity_ratio`` is h_max / h_min.
    """

    h_max: float
    h_min: float
    min_inradius_ratio: float
    uniformity_ratio: float


def _facet_measures(x):
    """Measures of the d+1 facets of each simplex in the batch ``x``.

    x has shape (nc, d+1, d).  Returns (nc, d+1) facet lengths (2D) or
    areas (3D).
    """
    nc, nloc, d = x.shape
    out = np.zeros((nc, nloc))
    for drop in range(nloc):
        keep = [q for q in range(nloc) if q != drop]
        f = x[:, keep, :]
        if d == 2:                       # opposite edge length
            out[:, drop] = np.linalg.norm(f[:, 1, :] - f[:, 0, :], axis=1)
        else:                            # opposite triangle area
            u = f[:, 1, :] - f[:, 0, :]
            v = f[:, 2, :] - f[:, 0, :]
            out[:, drop] = 0.5 * np.linalg.norm(np.cross(u, v), axis=1)
    return out


def mesh_quality(m, uniformity_bound=4.0):
    """Recompute shape and size ratios from scratch.

    Raises
    ------
    InvariantViolation
        If any cell has non-positive volume (degenerate mesh) or the
        quasi-uniformity ratio exceeds ``uniformity_bound``.
    """
    vols = signed_volumes(m.vertices, m.cells)
    diam = cell_diameters(m.vertices, m.cells)
    scale = float(np.max(diam)) ** m.dim
    if np.any(vols <= 1e-14 * scale):
        bad = int(np.argmin(vols))
        raise InvariantViolation(
            f"cell {bad} is degenerate (signed volume {vols[bad]:.3e})"
        )
    x = m.vertices[m.cells]
    surf = _facet_measures(x).sum(axis=1)
    inradius = m.dim * vols / surf           # rho = d |K| / |boundary of K|
    ratio = float(diam.max() / diam.min())
    report = QualityReport(
        h_max=float(diam.max()),
        h_min=float(diam.min()),
        min_inradius_ratio=float(np.min(inradius / diam)),
        uniformity_ratio=ratio,
    )
    if ratio > uniformity_bound:
        raise InvariantViolation(
            f"quasi-uniformity ratio {ratio:.3f} exceeds bound {uniformity_bound}"
        )
    return report
