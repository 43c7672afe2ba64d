"""Desk-scale spectral verification of the stability structure behind the
scheme: composite velocity space, fractional norms, norm equivalence on
the discretely divergence-free subspace, inf-sup constants with and
without the subgrid complement, and stability of the constrained
(Leray-type) projection.

The unresolved-scale complement is represented concretely: on each mesh
the resolved space W_h is vector zero-trace degree-1, embedded in the
degree-2 space on the same mesh, and the complement is the L²-orthogonal
complement of the embedding.  This surrogate keeps every operator finite
and dense-solvable while reproducing the structural features the estimates
rely on: exact L²-orthogonality, an h-uniform complement scaling, and a
gradient pairing that sees both components.

Composite ("star") coordinates stack the resolved coefficients (n1 of
them) and orthonormal complement coordinates (m of them); the fractional
scale of index s weighs the complement block by h^(-2s) and the resolved
block through the spectral calculus of the Dirichlet Laplacian pencil
(K1, M1).  All eigensolves are dense and guarded by a size cap.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, InternalError, InvariantViolation
from .fe import assemble_gradient_coupling, build_space
from .mesh import extract_edges

__all__ = [
    "MAX_DENSE_DOFS",
    "Spectrum",
    "spectral_decompose",
    "StarSpace",
    "build_star_space",
    "fractional_norm",
    "star_norm",
    "composite_norm",
    "wv_equivalence",
    "infsup_constant",
    "leray_project",
    "leray_star_stability",
    "grad_probe",
    "ritz_project",
    "inverse_inequality_constant",
    "ReportRow",
    "EquivalenceReport",
    "run_equivalence_suite",
    "S_GRID_NORM",
    "S_GRID_WV",
    "S_GRID_INFSUP",
    "S_GRID_LERAY",
]

#: dense-eigensolve size guard
MAX_DENSE_DOFS = 3000

#: orthonormality / positivity tolerance for spectra
SPECTRUM_TOL = 1e-10

# s-grids used by the reporting suite (interior of the admissible ranges)
S_GRID_NORM = (-1.0, -0.5, 0.0, 0.5, 1.0, 2.0)
S_GRID_WV = (-0.25, 0.0, 0.25, 0.5, 0.75, 1.0, 1.5)
S_GRID_INFSUP = (0.0, 0.25, 0.5, 0.75, 1.0)
S_GRID_LERAY = (0.0, 0.25)


def _sym(a):
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class Spectrum:
    """Generalized eigenpairs A z = lambda M z with M-orthonormal modes.

    eigenvalues ascend and are strictly positive (null modes must be
    dropped at decomposition time); modes are stored columnwise.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    metric: np.ndarray

    def check(self):
        lam = self.eigenvalues
        if lam.size and lam.min() <= 0.0:
            raise InvariantViolation(
                f"spectrum has nonpositive eigenvalue {lam.min():.3e}")
        if np.any(np.diff(lam) < -SPECTRUM_TOL * max(1.0, abs(lam[-1]))):
            raise InvariantViolation("spectrum is not ascending")
        gram = self.modes.T @ self.metric @ self.modes
        defect = np.abs(gram - np.eye(gram.shape[0])).max(initial=0.0)
        if defect > SPECTRUM_TOL:
            raise InvariantViolation(
                f"modes fail metric orthonormality by {defect:.3e}")
        return self

    def fractional_coeffs(self, w, s):
        """Coefficients Λ^{s/2} Zᵀ M w of the fractional calculus."""
        c = self.modes.T @ (self.metric @ w)
        return self.eigenvalues ** (0.5 * s) * c


def spectral_decompose(A, M, drop_null=0):
    """Dense generalized symmetric eigendecomposition with invariants.

    ``drop_null`` removes that many leading (null) modes after verifying
    they are negligible against the first retained eigenvalue.
    """
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    n = A.shape[0]
    if n > MAX_DENSE_DOFS:
        raise ConfigurationError(
            f"dense spectral decomposition capped at {MAX_DENSE_DOFS} DOFs, got {n}")
    try:
        lam, modes = sla.eigh(_sym(A), _sym(M))
    except sla.LinAlgError as exc:
        raise ConfigurationError(
            f"metric matrix is not positive definite: {exc}") from None
    if drop_null:
        if drop_null >= n:
            raise ConfigurationError("cannot drop all modes as null")
        scale = abs(lam[drop_null])
        if np.abs(lam[:drop_null]).max(initial=0.0) > 1e-8 * max(scale, 1.0):
            raise InternalError(
                f"modes declared null are not: {lam[:drop_null + 1]}")
        lam, modes = lam[drop_null:], modes[:, drop_null:]
    return Spectrum(eigenvalues=lam, modes=modes, metric=M).check()


def fractional_norm(w, s, spectrum):
    """Fractional operator norm (Σ_i λ_i^s (z_iᵀ M w)²)^{1/2}."""
    c = spectrum.fractional_coeffs(w, s)
    return float(np.sqrt(c @ c))


def star_norm(w_fe, w_perp, s, h, spectrum):
    """Composite fractional norm of index s:

        ‖(w_fe, w_perp)‖² = ‖w_fe‖²_{s} + h^(-2s) ‖w_perp‖²,

    the block-diagonal evaluation over the resolved spectrum plus the
    rescaled plain norm of the complement coordinates (which are
    L²-orthonormal, so their Euclidean norm is their L² norm).
    """
    w_perp = np.asarray(w_perp, dtype=float)
    fe = fractional_norm(w_fe, s, spectrum)
    return float(np.sqrt(fe * fe + h ** (-2.0 * s) * (w_perp @ w_perp)))


# ---------------------------------------------------------------------------
# star space construction
# ---------------------------------------------------------------------------

@dataclass
class StarSpace:
    """Composite space data on one mesh: resolved block (vector zero-trace
    degree 1, n1 coefficients), complement block (m L²-orthonormal
    coordinates inside the enriched space), and the pressure pairing.

    The enriched space is the continuous degree-2 vector space joined with
    the span of the discrete pressure gradients; coefficient vectors over
    it are stored as (degree-2 coefficients, pressure coefficients) stacks
    of length n2 + np, with the exact linear dependencies (constant
    fields) removed by a rank-revealing orthonormalization.
    """

    mesh: object
    V1: object
    V2: object
    Q: object
    J: np.ndarray          # (n2, n1) embedding of W_h into the degree-2 space
    B: np.ndarray          # (n2 + np, m) complement basis, mixed coefficients
    M1: np.ndarray
    K1: np.ndarray
    M2: np.ndarray
    M_E: np.ndarray        # Gram matrix of the enriched mixed basis
    G_E: np.ndarray        # (n2 + np, np) enriched-basis pressure pairing
    G1: np.ndarray         # (n1, np) resolved gradient pairing
    T_pp: np.ndarray       # (m, np) complement gradient pairing BᵀG_E
    m_p: np.ndarray        # pressure mean vector (zero-mean multiplier)
    h: float
    velocity: Spectrum     # pencil (K1, M1)
    pressure: Spectrum     # pencil (K_p, M_p), constant mode dropped
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n1(self):
        return self.V1.n_dofs

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def n_star(self):
        return self.n1 + self.m

    def split(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_star,):
            raise ConfigurationError(
                f"star vector must have {self.n_star} entries, got {v.shape}")
        return v[:self.n1], v[self.n1:]

    def apply_mass(self, X):
        out = np.array(X, dtype=float, copy=True)
        out[:self.n1] = self.M1 @ X[:self.n1]
        return out

    def apply_form(self, X):
        out = np.empty_like(np.asarray(X, dtype=float))
        out[:self.n1] = self.K1 @ X[:self.n1]
        out[self.n1:] = np.asarray(X[self.n1:]) / self.h ** 2
        return out


def _embedding(mesh, V1, V2):
    """Nodal interpolation of the degree-1 space into the degree-2 space:
    vertex values carry over, edge nodes average the endpoints.  Columns
    are zero-trace consistent because both spaces eliminate the same
    boundary vertices."""
    edges, _ = extract_edges(mesh.cells)
    comp = V1.components
    J = np.zeros((V2.n_dofs, V1.n_dofs))
    for v in range(mesh.n_vertices):
        s2, s1 = V2.node_dof[v], V1.node_dof[v]
        if s2 >= 0 and s1 >= 0:
            for k in range(comp):
                J[s2 * comp + k, s1 * comp + k] = 1.0
    offset = mesh.n_vertices
    for e in range(edges.shape[0]):
        s2 = V2.node_dof[offset + e]
        if s2 < 0:
            continue
        for vtx in edges[e]:
            s1 = V1.node_dof[vtx]
            if s1 >= 0:
                for k in range(comp):
                    J[s2 * comp + k, s1 * comp + k] = 0.5
    return J


def build_star_space(mesh):
    """Assemble all composite-space operators on one mesh.

    The complement is the L²-orthogonal complement of the embedded
    resolved space inside the enriched space spanned jointly by the
    continuous degree-2 vector fields (no trace constraint — subgrid
    fields do not vanish on the boundary) and the discrete pressure
    gradients.  Including the pressure-gradient directions makes the
    complement contain the orthogonal part of every ∇q_h exactly, which
    is what the fractional inf-sup bound leans on.
    """
    dim = mesh.dim
    V1 = build_space(mesh, degree=1, components=dim, constraint="zero_trace")
    V2 = build_space(mesh, degree=2, components=dim, constraint="none")
    Q = build_space(mesh, degree=1, components=1, constraint="zero_mean")
    n1, n2 = V1.n_dofs, V2.n_dofs
    npres = Q.n_dofs
    if n1 == 0:
        raise ConfigurationError(
            "complement construction needs interior velocity freedom (n >= 2)")
    if n2 + npres > MAX_DENSE_DOFS:
        raise ConfigurationError(
            f"star space has {n2 + npres} enriched DOFs, above the dense cap "
            f"{MAX_DENSE_DOFS}")

    M1 = V1.mass.toarray()
    K1 = V1.stiffness.toarray()
    M2 = V2.mass.toarray()
    K_p = Q.stiffness.toarray()
    G1 = assemble_gradient_coupling(V1, Q).toarray()
    G2 = assemble_gradient_coupling(V2, Q).toarray()
    J = _embedding(mesh, V1, V2)

    # Gram matrix of the mixed generating set {degree-2 basis, ∇ψ_k}:
    # (∇ψ_k, ∇ψ_l) is the pressure stiffness and (φ_i, ∇ψ_k) the degree-2
    # gradient pairing, so no new assembly is needed.  The set is exactly
    # rank-deficient (constant fields appear in both halves): strip the
    # null directions with a rank-revealing eigendecomposition into
    # L²-orthonormal coordinates Y.
    M_E = np.block([[M2, G2], [G2.T, K_p]])
    G_E = np.vstack([G2, K_p])
    lam_E, Y_E = sla.eigh(_sym(M_E))
    keep = lam_E > 1e-10 * lam_E[-1]
    n_null = int(np.sum(~keep))
    if n_null and lam_E[n_null - 1] > 1e-5 * lam_E[n_null]:
        raise InternalError(
            f"enriched Gram rank cutoff is ambiguous: "
            f"{lam_E[n_null - 1]:.3e} vs {lam_E[n_null]:.3e}")
    Y = Y_E[:, keep] / np.sqrt(lam_E[keep])

    # complement of the embedded resolved space: in Y-coordinates the L²
    # geometry is Euclidean, so a complete QR of the embedded block hands
    # over an exactly orthonormal complement basis
    J_mix = np.vstack([J, np.zeros((npres, n1))])
    Jc = Y.T @ (M_E @ J_mix)
    Qfull, _ = sla.qr(Jc, mode="full")
    B = Y @ Qfull[:, n1:]

    velocity = spectral_decompose(K1, M1)
    pressure = spectral_decompose(K_p, Q.mass.toarray(), drop_null=1)
    return StarSpace(mesh=mesh, V1=V1, V2=V2, Q=Q, J=J, B=B,
                     M1=M1, K1=K1, M2=M2, M_E=M_E, G_E=G_E, G1=G1,
                     T_pp=B.T @ G_E, m_p=Q.mean_vector, h=mesh.h_max,
                     velocity=velocity, pressure=pressure)


# ---------------------------------------------------------------------------
# fractional norms
# ---------------------------------------------------------------------------

def composite_norm(space, v, s):
    """``star_norm`` over a stacked composite vector of a StarSpace."""
    v_fe, v_perp = space.split(v)
    return star_norm(v_fe, v_perp, s, space.h, space.velocity)


def _w_gram(space, s):
    """Dense Gram matrix of the composite norm (resolved block only;
    callers add the diagonal complement block)."""
    MZ = space.M1 @ space.velocity.modes
    lam = space.velocity.eigenvalues
    return _sym((MZ * lam ** s) @ MZ.T)


# ---------------------------------------------------------------------------
# divergence-free subspace and norm equivalence
# ---------------------------------------------------------------------------

def _vstar_basis(space):
    """M_star-orthonormal basis of the discretely divergence-free subspace
    {v : (v_fe, ∇q) + (v_perp, ∇q) = 0 for all pressures q}."""
    if "vstar" in space._cache:
        return space._cache["vstar"]
    Ct = np.hstack([space.G1.T, space.T_pp.T])           # (np, n1 + m)
    _, sig, Vh = sla.svd(Ct, full_matrices=True)
    tol = 1e-10 * sig[0]
    rank = int(np.sum(sig > tol))
    N = Vh[rank:].T
    if N.shape[1] == 0:
        raise InternalError("divergence constraint left no free directions")
    C = _sym(N.T @ space.apply_mass(N))
    Lc = sla.cholesky(C, lower=True)
    N = sla.solve_triangular(Lc, N.T, lower=True).T
    lamV, U = sla.eigh(_sym(N.T @ space.apply_form(N)))
    space._cache["vstar"] = (N, lamV, U)
    return space._cache["vstar"]


def wv_equivalence(space, s):
    """Extremal ratios between the composite fractional norm restricted to
    the divergence-free subspace and the subspace's intrinsic fractional
    norm (spectral calculus of the constrained form).

    Returns (ratio_min, ratio_max) of the squared-norm quotient; the
    equivalence lemma asserts both stay within level-independent bounds
    for s in the admissible range.
    """
    N, lamV, U = _vstar_basis(space)
    if lamV.min() <= 0:
        raise InvariantViolation(
            f"constrained form is not positive: min eigenvalue {lamV.min():.3e}")
    n1 = space.n1
    amb = N[:n1].T @ _w_gram(space, s) @ N[:n1]
    amb += space.h ** (-2.0 * s) * N[n1:].T @ N[n1:]
    intrinsic = _sym((U * lamV ** s) @ U.T)
    vals = sla.eigh(_sym(amb), intrinsic, eigvals_only=True)
    return float(vals[0]), float(vals[-1])


# ---------------------------------------------------------------------------
# inf-sup constants
# ---------------------------------------------------------------------------

def infsup_constant(space, s, include_complement=True):
    """Fractional-scale inf-sup constant

        beta(s) = inf_q sup_v (v, ∇q) / (‖v‖_{1-s} ‖q‖_{s}),

    realized as the square root of the smallest generalized eigenvalue of
    the dual-norm Schur form against the pressure fractional metric.  With
    the complement included the constant is bounded below uniformly in h;
    restricted to the resolved block alone it degenerates (the classical
    equal-order failure).
    """
    lam1 = space.velocity.eigenvalues
    Zp = space.pressure.modes
    lamp = space.pressure.eigenvalues
    W = space.velocity.modes.T @ (space.G1 @ Zp)          # (n1, np - 1)
    A = W.T @ (W * lam1[:, None] ** (s - 1.0))
    if include_complement:
        TZ = space.T_pp @ Zp
        A += space.h ** (2.0 * (1.0 - s)) * TZ.T @ TZ
    vals = sla.eigh(_sym(A), np.diag(lamp ** s), eigvals_only=True)
    return float(np.sqrt(max(vals[0], 0.0)))


# ---------------------------------------------------------------------------
# constrained projection (Leray-type) and its stability
# ---------------------------------------------------------------------------

def _saddle_solve(space, top_apply, rhs_top):
    """Solve the constrained projection system with the given top-left
    block action and right-hand side, pinning the pressure multiplier's
    mean through the zero-mean constraint row."""
    n_t = space.n_star
    npres = space.Q.n_dofs
    n = n_t + npres + 1
    A = np.zeros((n, n))
    A[:n_t, :n_t] = top_apply(np.eye(n_t))
    A[:space.n1, n_t:n_t + npres] = space.G1
    A[space.n1:n_t, n_t:n_t + npres] = space.T_pp
    A[n_t:n_t + npres, :space.n1] = space.G1.T
    A[n_t:n_t + npres, space.n1:n_t] = space.T_pp.T
    A[n_t:n_t + npres, -1] = space.m_p
    A[-1, n_t:n_t + npres] = space.m_p
    rhs = np.zeros(n)
    rhs[:n_t] = rhs_top
    sol = sla.solve(A, rhs, assume_a="sym")
    if not np.all(np.isfinite(sol)):
        raise InternalError("constrained projection solve produced non-finite values")
    return sol[:n_t], sol[n_t:n_t + npres], float(sol[-1])


def leray_project(space, v):
    """M_star-orthogonal projection of a composite vector onto the
    divergence-free subspace; returns (projection, multiplier)."""
    v = np.asarray(v, dtype=float)
    u, r, _ = _saddle_solve(space, space.apply_mass, space.apply_mass(v))
    return u, r


def leray_star_stability(space, v, s):
    """Ratio ‖P v‖_s / ‖v‖_s of the constrained projection in the
    composite fractional norm (exact contraction at s = 0)."""
    u, _ = leray_project(space, v)
    denom = composite_norm(space, v, s)
    if denom == 0.0:
        raise ConfigurationError("stability probe is identically zero")
    return composite_norm(space, u, s) / denom


def grad_probe(space, q):
    """Composite representation of a discrete pressure gradient: the
    resolved Riesz lift M1⁻¹ G1 q stacked with the complement pairing
    coordinates.  The worst-case probe family for projection stability."""
    q = np.asarray(q, dtype=float)
    v = np.empty(space.n_star)
    v[:space.n1] = sla.solve(_sym(space.M1), space.G1 @ q, assume_a="pos")
    v[space.n1:] = space.T_pp @ q
    return v


def ritz_project(space, v):
    """Form-orthogonal (Stokes-like) constrained projection; smoke-level
    companion of the mass projection, fixed on divergence-free inputs."""
    v = np.asarray(v, dtype=float)
    u, r, _ = _saddle_solve(space, space.apply_form, space.apply_form(v))
    return u, r


# ---------------------------------------------------------------------------
# inverse inequality
# ---------------------------------------------------------------------------

def inverse_inequality_constant(space, s):
    """Best constant in ‖w‖_{H¹-scale} <= C h^(s-1) ‖w‖_{s-scale} over the
    resolved block, reported as C(h, s) = h^(1-s) max_i sqrt(1 + λᵢ) / λᵢ^(s/2);
    quasi-uniformity of the mesh family keeps it level-independent."""
    lam = space.velocity.eigenvalues
    return float(space.h ** (1.0 - s)
                 * np.max(np.sqrt(1.0 + lam) / lam ** (0.5 * s)))


# ---------------------------------------------------------------------------
# reporting suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    lemma: str
    s: float
    level: int
    h: float
    value: float
    ratio_min: float = float("nan")
    ratio_max: float = float("nan")


@dataclass(frozen=True)
class EquivalenceReport:
    rows: tuple

    HEADER = ("lemma", "s", "level", "h", "value", "ratio_min", "ratio_max")

    def by_lemma(self, lemma):
        return [r for r in self.rows if r.lemma == lemma]


def _level_rows(dim, n, level, seed, n_probes):
    from .mesh import build_structured

    space = build_star_space(build_structured(dim, n))
    rng = np.random.default_rng(seed + 7919 * level)
    rows = []
    for s in S_GRID_WV:
        lo, hi = wv_equivalence(space, s)
        rows.append(ReportRow("wv_equivalence", s, level, space.h,
                              hi / lo, lo, hi))
    for s in S_GRID_INFSUP:
        rows.append(ReportRow("infsup_star", s, level, space.h,
                              infsup_constant(space, s, include_complement=True)))
        rows.append(ReportRow("infsup_plain", s, level, space.h,
                              infsup_constant(space, s, include_complement=False)))
    probes = [grad_probe(space, rng.standard_normal(space.Q.n_dofs))]
    probes += [rng.standard_normal(space.n_star) for _ in range(n_probes)]
    for s in S_GRID_LERAY:
        ratios = [leray_star_stability(space, v, s) for v in probes]
        rows.append(ReportRow("leray_stability", s, level, space.h,
                              max(ratios), min(ratios), max(ratios)))
    for s in S_GRID_INFSUP:
        rows.append(ReportRow("inverse_inequality", s, level, space.h,
                              inverse_inequality_constant(space, s)))
    return rows


def run_equivalence_suite(levels=(4, 8, 16), dim=2, seed=0, n_probes=5,
                          workers=1):
    """Evaluate every lemma quantity on a refinement family and collect
    the rows of the equivalence report (one row per lemma, s, level)."""
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(
                lambda args: _level_rows(dim, args[1], args[0], seed, n_probes),
                enumerate(levels)))
    else:
        chunks = [_level_rows(dim, n, level, seed, n_probes)
                  for level, n in enumerate(levels)]
    rows = [row for chunk in chunks for row in chunk]
    return EquivalenceReport(rows=tuple(rows))
