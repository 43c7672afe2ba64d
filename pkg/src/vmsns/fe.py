"""Continuous Lagrange spaces and operator assembly.

Everything is tabulated once per space: basis values and physical
gradients at the quadrature points of every cell.  Assemblers contract
these tables with quadrature weights (vectorized over cells) and scatter
into scipy sparse matrices.  Vector spaces use interleaved component
ordering -- global dof = scalar_dof * components + component -- so
component-diagonal operators are Kronecker products of their scalar
counterparts with a small identity.

Dirichlet (zero-trace) constraints are imposed by eliminating boundary
nodes from the dof numbering.  Zero-mean pressure spaces keep all nodes;
the mean constraint is enforced downstream by a scalar multiplier, and
projections subtract the mean explicitly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, InternalError
from .mesh import extract_edges, signed_volumes
from .quadrature import simplex_quadrature

__all__ = [
    "FeSpace",
    "SparseOperator",
    "build_space",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_gradient_coupling",
    "assemble_convection",
    "assemble_load",
    "l2_project",
    "linf_norm",
]


# ---------------------------------------------------------------------------
# reference elements
# ---------------------------------------------------------------------------

def _p1_basis(bary):
    """P1 values and barycentric derivatives at barycentric points."""
    lam = np.asarray(bary)            # (nq, d+1)
    nq, nb = lam.shape
    phi = lam.copy()                  # (nq, d+1)
    dphi = np.broadcast_to(np.eye(nb), (nq, nb, nb)).copy()
    return phi, dphi


def _p2_basis(bary):
    """P2 values and barycentric derivatives.

    Local node order: the d+1 vertices, then one midpoint per vertex pair
    (i, j), i < j, lexicographically -- matching mesh.extract_edges.
    """
    lam = np.asarray(bary)
    nq, nb = lam.shape
    pairs = [(i, j) for i in range(nb) for j in range(i + 1, nb)]
    nloc = nb + len(pairs)
    phi = np.zeros((nq, nloc))
    dphi = np.zeros((nq, nloc, nb))
    for i in range(nb):
        phi[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        dphi[:, i, i] = 4.0 * lam[:, i] - 1.0
    for e, (a, b) in enumerate(pairs):
        k = nb + e
        phi[:, k] = 4.0 * lam[:, a] * lam[:, b]
        dphi[:, k, a] = 4.0 * lam[:, b]
        dphi[:, k, b] = 4.0 * lam[:, a]
    return phi, dphi


_BASIS = {1: _p1_basis, 2: _p2_basis}


# ---------------------------------------------------------------------------
# operator container
# ---------------------------------------------------------------------------

@dataclass
class SparseOperator:
    """A sparse matrix with its logical shape and symmetry promise.

    ``entries`` is scipy CSR.  ``symmetric`` records whether the assembly
    guarantees symmetry (mass, stiffness); it is asserted at build time.
    """

    rows: int
    cols: int
    entries: sp.csr_matrix = field(repr=False)
    symmetric: bool = False

    def matvec(self, x):
        return self.entries.dot(x)

    def rmatvec(self, x):
        return self.entries.T.dot(x)

    def toarray(self):
        return self.entries.toarray()


def _wrap(mat, symmetric=False):
    mat = mat.tocsr()
    if symmetric:
        gap = abs(mat - mat.T)
        scale = max(abs(mat).max(), 1e-300)
        if gap.nnz and gap.max() > 1e-13 * scale:
            raise InternalError("operator expected symmetric is not")
        # symmetrize the last few ulps so eigensolvers see an exact pair
        mat = (mat + mat.T) * 0.5
    return SparseOperator(rows=mat.shape[0], cols=mat.shape[1],
                          entries=mat, symmetric=symmetric)


# ---------------------------------------------------------------------------
# the space
# ---------------------------------------------------------------------------

class FeSpace:
    """A (possibly vector-valued) continuous Lagrange space on a mesh.

    Parameters are normally supplied through :func:`build_space`.  The
    heavy per-cell tables are computed lazily and cached per quadrature
    order, keyed so error norms can use a finer rule than assembly.

    Attributes
    ----------
    mesh : Mesh
    degree : int
        Polynomial order (1 or 2).
    components : int
        1 for scalar spaces, mesh.dim for velocities.
    constraint : str
        'none', 'zero_trace', or 'zero_mean'.
    n_scalar : int
        Number of unconstrained scalar nodes.
    n_dofs : int
        n_scalar * components.
    nodes : ndarray (n_nodes, dim)
        Coordinates of ALL scalar nodes (including eliminated ones).
    node_dof : ndarray (n_nodes,)
        Global scalar dof of each node, -1 if eliminated.
    cell_nodes : ndarray (n_cells, n_loc)
        Scalar node indices per cell.
    """

    def __init__(self, mesh, degree, components, constraint):
        if degree not in _BASIS:
            raise ConfigurationError(
                f"unsupported polynomial degree {degree} (supported: 1, 2)")
        if components not in (1, mesh.dim):
            raise ConfigurationError(
                f"components must be 1 or mesh.dim={mesh.dim}, got {components}")
        if constraint not in ("none", "zero_trace", "zero_mean"):
            raise ConfigurationError(f"unknown constraint {constraint!r}")
        self.mesh = mesh
        self.degree = degree
        self.components = components
        self.constraint = constraint

        nv = mesh.n_vertices
        if degree == 1:
            self.nodes = mesh.vertices
            self.cell_nodes = mesh.cells
            boundary_nodes = np.unique(mesh.boundary_facets)
        else:
            edges, cell_edges = extract_edges(mesh.cells)
            self.nodes = np.concatenate(
                [mesh.vertices,
                 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])],
                axis=0)
            self.cell_nodes = np.concatenate(
                [mesh.cells, nv + cell_edges], axis=1)
            edge_index = {tuple(e): i for i, e in enumerate(map(tuple, edges))}
            bset = set(np.unique(mesh.boundary_facets).tolist())
            bedges = set()
            for f in mesh.boundary_facets:
                f = sorted(int(q) for q in f)
                if mesh.dim == 2:
                    bedges.add((f[0], f[1]))
                else:
                    bedges.update(((f[0], f[1]), (f[0], f[2]), (f[1], f[2])))
            boundary_nodes = np.asarray(
                sorted(bset) + sorted(nv + edge_index[e] for e in bedges),
                dtype=np.int64)

        n_nodes = self.nodes.shape[0]
        keep = np.ones(n_nodes, dtype=bool)
        if constraint == "zero_trace":
            keep[boundary_nodes] = False
        self.node_dof = -np.ones(n_nodes, dtype=np.int64)
        self.node_dof[keep] = np.arange(int(keep.sum()))
        self.n_scalar = int(keep.sum())
        self.n_dofs = self.n_scalar * components

        # scalar dof per cell-local node (-1 where eliminated)
        self.cell_dofs = self.node_dof[self.cell_nodes]

        self._tabs = {}
        self._mass = None
        self._stiffness = None
        self._mass_lu = None
        self._mean = None

    # -- dof map -----------------------------------------------------------

    def dof_map(self, cell):
        """Global (vector) dof indices of one cell, -1 where eliminated."""
        sdofs = self.cell_dofs[cell]
        out = np.empty(sdofs.shape[0] * self.components, dtype=np.int64)
        for k in range(self.components):
            col = sdofs * self.components + k
            col[sdofs < 0] = -1
            out[k::self.components] = col
        return out

    # -- tabulation --------------------------------------------------------

    @property
    def quad_order(self):
        return 2 * self.degree + 1

    def tabulation(self, order=None):
        """Per-cell tables (rule, phi, grad, qp coords, physical weights).

        Cached per quadrature order.  ``grad`` has shape
        (n_cells, n_qp, n_loc, dim); ``weights`` (n_cells, n_qp) already
        include the cell measure, so plain contractions integrate.
        """
        if order is None:
            order = self.quad_order
        tab = self._tabs.get(order)
        if tab is not None:
            return tab
        mesh = self.mesh
        rule = simplex_quadrature(mesh.dim, order)
        phi, dphi = _BASIS[self.degree](rule.points)

        x = mesh.vertices[mesh.cells]                    # (nc, d+1, d)
        t = x[:, 1:, :] - x[:, :1, :]                    # rows: edge vectors
        tinv = np.linalg.inv(np.transpose(t, (0, 2, 1)))  # (nc, d, d)
        # gradients of barycentric coordinates: lambda_0 = 1 - sum others
        grad_lam = np.zeros((mesh.n_cells, mesh.dim + 1, mesh.dim))
        grad_lam[:, 1:, :] = tinv
        grad_lam[:, 0, :] = -tinv.sum(axis=1)

        grad = np.einsum("qlm,cmd->cqld", dphi, grad_lam)
        qp_x = np.einsum("qm,cmd->cqd", rule.points, x)
        vols = signed_volumes(mesh.vertices, mesh.cells)
        weights = np.multiply.outer(vols, rule.weights)  # (nc, nq)
        tab = {"rule": rule, "phi": phi, "grad": grad,
               "points": qp_x, "weights": weights}
        self._tabs[order] = tab
        return tab

    # -- evaluation / pairing ----------------------------------------------

    def _cellwise(self, coeffs):
        """Coefficients gathered per cell: (nc, n_loc, components)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_dofs,):
            raise ConfigurationError(
                f"coefficient vector has shape {coeffs.shape}, expected ({self.n_dofs},)")
        c = coeffs.reshape(self.n_scalar, self.components)
        full = np.zeros((self.nodes.shape[0], self.components))
        full[self.node_dof >= 0] = c
        return full[self.cell_nodes]

    def eval_at_qp(self, coeffs, order=None):
        """Field values at quadrature points: (nc, nq, components)."""
        tab = self.tabulation(order)
        return np.einsum("qi,cik->cqk", tab["phi"], self._cellwise(coeffs))

    def eval_grad_at_qp(self, coeffs, order=None):
        """Gradients at quadrature points: (nc, nq, components, dim)."""
        tab = self.tabulation(order)
        return np.einsum("cqid,cik->cqkd", tab["grad"], self._cellwise(coeffs))

    def load_from_qp(self, qp_field, order=None):
        """Adjoint of eval_at_qp with quadrature weights: the load vector.

        Entry (i, k) is the quadrature approximation of
        ∫ field_k phi_i, assembled over cells.
        """
        tab = self.tabulation(order)
        qp_field = np.asarray(qp_field, dtype=float)
        loc = np.einsum("cq,qi,cqk->cik", tab["weights"], tab["phi"], qp_field)
        out = np.zeros((self.n_scalar, self.components))
        sdofs = self.cell_dofs
        valid = sdofs >= 0
        for k in range(self.components):
            np.add.at(out[:, k], sdofs[valid], loc[:, :, k][valid])
        return out.ravel()

    def evaluate_callable(self, f, order=None):
        """Evaluate a callable field x -> (components,) at quadrature points."""
        tab = self.tabulation(order)
        vals = np.asarray(f(tab["points"].reshape(-1, self.mesh.dim)), dtype=float)
        vals = vals.reshape(self.mesh.n_cells, tab["weights"].shape[1], self.components)
        return vals

    # -- cached operators ----------------------------------------------------

    @property
    def mass(self):
        if self._mass is None:
            self._mass = assemble_mass(self)
        return self._mass

    @property
    def stiffness(self):
        if self._stiffness is None:
            self._stiffness = assemble_stiffness(self)
        return self._stiffness

    def mass_solve(self, rhs):
        """Solve M x = rhs with a cached sparse LU factorization."""
        if self._mass_lu is None:
            try:
                self._mass_lu = spla.factorized(self.mass.entries.tocsc())
            except RuntimeError as exc:  # pragma: no cover - SPD by construction
                raise InternalError(f"mass factorization failed: {exc}")
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == 1:
            return self._mass_lu(rhs)
        return np.column_stack([self._mass_lu(rhs[:, j]) for j in range(rhs.shape[1])])

    @property
    def mean_vector(self):
        """Integrals of the basis functions (scalar spaces)."""
        if self._mean is None:
            ones = np.ones((self.mesh.n_cells,
                            self.tabulation()["weights"].shape[1],
                            self.components))
            self._mean = self.load_from_qp(ones)
        return self._mean

    @property
    def volume(self):
        return float(self.mean_vector.sum()) / self.components


def build_space(m, degree=1, components=1, constraint="none"):
    """Build a Lagrange space; see FeSpace for the field descriptions."""
    return FeSpace(m, degree, components, constraint)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def scatter_cell_blocks(space_rows, space_cols, local):
    """Scatter per-cell scalar blocks (nc, nr_loc, nc_loc) into CSR.

    Row dofs come from ``space_rows``'s scalar numbering, columns from
    ``space_cols``'s.  Eliminated dofs (-1) are dropped.
    """
    r = space_rows.cell_dofs[:, :, None]
    c = space_cols.cell_dofs[:, None, :]
    r, c = np.broadcast_arrays(r, c)
    keep = (r >= 0) & (c >= 0)
    mat = sp.coo_matrix(
        (local[keep], (r[keep], c[keep])),
        shape=(space_rows.n_scalar, space_cols.n_scalar),
    )
    return mat.tocsr()


def _expand_components(scalar_csr, components):
    if components == 1:
        return scalar_csr
    return sp.kron(scalar_csr, sp.eye(components, format="csr"), format="csr")


def assemble_mass(V):
    """L² mass operator; SPD on the constrained space."""
    tab = V.tabulation()
    local = np.einsum("cq,qi,qj->cij", tab["weights"], tab["phi"], tab["phi"])
    mat = _expand_components(scatter_cell_blocks(V, V, local), V.components)
    return _wrap(mat, symmetric=True)


def assemble_stiffness(V):
    """Dirichlet form (∇·, ∇·); PSD, and PD under zero_trace."""
    tab = V.tabulation()
    local = np.einsum("cq,cqid,cqjd->cij", tab["weights"], tab["grad"], tab["grad"])
    mat = _expand_components(scatter_cell_blocks(V, V, local), V.components)
    return _wrap(mat, symmetric=True)


def assemble_gradient_coupling(V, Q):
    """Velocity/pressure-gradient pairing G with entries (phi_i, ∇psi_j).

    Rows are vector velocity dofs, columns scalar pressure dofs.  The same
    operator serves the incompressibility equation (transposed) and the
    pressure-gradient term of the subscale equation.
    """
    if V.mesh is not Q.mesh:
        raise ConfigurationError("velocity and pressure spaces live on different meshes")
    if V.components != V.mesh.dim:
        raise ConfigurationError("gradient coupling expects a vector velocity space")
    order = max(V.quad_order, Q.quad_order)
    tabv = V.tabulation(order)
    tabq = Q.tabulation(order)
    mat = None
    for k in range(V.components):
        local = np.einsum("cq,qi,cqj->cij",
                          tabv["weights"], tabv["phi"], tabq["grad"][:, :, :, k])
        d_k = scatter_cell_blocks(V, Q, local)
        # kron with the k-th unit column interleaves: row = scalar*comp + k
        e_k = sp.csr_matrix((np.ones(1), ([k], [0])), shape=(V.components, 1))
        term = sp.kron(d_k, e_k, format="csr")
        mat = term if mat is None else mat + term
    return _wrap(mat)


def advection_factor(V, a, order=None):
    """Scalar advection factors n_i = a·∇phi_i + ½(∇·a) phi_i at quadrature.

    These are the scalar building blocks of the skew-symmetrized transport
    form: applied to a vector basis function phi_i e_k, the transport term
    is n_i e_k.  Shape (n_cells, n_qp, n_loc).
    """
    tab = V.tabulation(order)
    a_qp = V.eval_at_qp(a, order)                    # (nc, nq, dim)
    grad_a = V.eval_grad_at_qp(a, order)             # (nc, nq, dim, dim)
    div_a = np.einsum("cqdd->cq", grad_a)
    return (np.einsum("cqd,cqid->cqi", a_qp, tab["grad"])
            + 0.5 * div_a[:, :, None] * tab["phi"][None, :, :])


def assemble_convection(V, a):
    """Skew-symmetrized transport operator C(a), entries b(a, phi_j, phi_i).

    The ½(∇·a) v term makes vᵀC(a)v vanish identically for zero-trace v
    (up to quadrature roundoff), which is what the energy balance of the
    time stepper relies on.
    """
    if V.components != V.mesh.dim:
        raise ConfigurationError("convection expects a vector velocity space")
    tab = V.tabulation()
    n_fac = advection_factor(V, a)
    local = np.einsum("cq,qi,cqj->cij", tab["weights"], tab["phi"], n_fac)
    mat = _expand_components(scatter_cell_blocks(V, V, local), V.components)
    return _wrap(mat)


def as_qp_field(V, f, order=None):
    """Coerce a field spec (callable, qp array, or coefficients) to qp values."""
    if callable(f):
        return V.evaluate_callable(f, order)
    f = np.asarray(f, dtype=float)
    if f.shape == (V.n_dofs,):
        return V.eval_at_qp(f, order)
    tab = V.tabulation(order)
    want = (V.mesh.n_cells, tab["weights"].shape[1], V.components)
    if f.shape == want:
        return f
    if f.shape == want[:2] and V.components == 1:
        return f[:, :, None]
    raise ConfigurationError(
        f"cannot interpret field of shape {f.shape} for this space")


def assemble_load(V, f):
    """Load vector with entries ∫ f · phi_i (quadrature realization of the
    duality pairing).  ``f`` may be a callable, a quadrature-point array,
    or a coefficient vector of V."""
    if isinstance(f, np.ndarray) and f.shape == (V.n_dofs,):
        return V.mass.matvec(f)
    return V.load_from_qp(as_qp_field(V, f))


def l2_project(field, V):
    """L² projection onto V: solve M c = load(field).

    For zero-mean spaces the projection is followed by subtraction of the
    mean, which keeps the result in the constrained subspace (Lagrange
    bases reproduce constants node-by-node).
    """
    rhs = V.load_from_qp(as_qp_field(V, field))
    c = V.mass_solve(rhs)
    if V.constraint == "zero_mean":
        m = V.mean_vector
        c = c - (m @ c) / V.volume
    return c


def quad_norm(V, qp_field, order=None):
    """L² norm of a quadrature-point field via the space's quadrature."""
    tab = V.tabulation(order)
    f = np.asarray(qp_field, dtype=float)
    return float(np.sqrt(np.einsum("cq,cqk->", tab["weights"], f * f)))


def linf_norm(V, u):
    """Max-norm of a finite element function.

    Degree 1: exact -- the max over nodes of |value| (scalar) or the
    Euclidean magnitude (vector); piecewise-linear fields attain their
    maximum at nodes.  Degree 2: approximated by a fixed barycentric
    sampling lattice per cell (resolution 4), documented behaviour.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (V.n_dofs,):
        raise ConfigurationError(
            f"coefficient vector has shape {u.shape}, expected ({V.n_dofs},)")
    if V.degree == 1:
        vals = u.reshape(V.n_scalar, V.components)
        if V.components == 1:
            return float(np.max(np.abs(vals), initial=0.0))
        return float(np.max(np.linalg.norm(vals, axis=1), initial=0.0))
    # sampling lattice: all barycentric multi-indices alpha/4, |alpha| = 4
    d = V.mesh.dim
    from itertools import product
    lattice = np.asarray([
        (*a, 4 - sum(a)) for a in product(range(5), repeat=d) if sum(a) <= 4
    ], dtype=float) / 4.0
    # reorder so the dependent coordinate comes first (barycentric layout)
    lattice = np.roll(lattice, 1, axis=1)
    phi, _ = _BASIS[V.degree](lattice)
    vals = np.einsum("qi,cik->cqk", phi, V._cellwise(u))
    return float(np.max(np.linalg.norm(vals, axis=2), initial=0.0))

