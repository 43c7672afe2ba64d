"""Dynamic orthogonal subgrid scales.

The subscale velocity lives in the L²-orthogonal complement of the
resolved velocity space and is driven by the resolved residual
N(u_h, u_h) + ∇p_h.  It is stored pointwise at the quadrature nodes of the
velocity space -- the standard dynamic-subscale representation -- with the
complement constraint enforced by explicit orthogonal projection after
every update.  All invariants tested downstream (orthogonality defect,
closed-form relaxation, energy bookkeeping) are independent of this
storage choice.

The relaxation time tau is a single global scalar per time step,

    tau = h² / (C_s nu + C_c h ‖u_h‖_inf),

evaluated with the previous step's velocity, which keeps each linearized
solve genuinely linear.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fe import as_qp_field, l2_project, quad_norm

__all__ = [
    "StabParams",
    "SubscaleField",
    "compute_tau",
    "residual_field",
    "project_orthogonal",
    "advance_subscale",
    "cross_terms",
    "orthogonality_defect",
]

#: guard against 0/0 in the orthogonality ratio on an identically zero field
EPS_NORM = 1e-300


@dataclass(frozen=True)
class StabParams:
    """Stabilization constants.

    nu is the kinematic viscosity; C_s and C_c are the dimensionless
    algorithmic constants multiplying the viscous and convective parts of
    the relaxation-time denominator.  Defaults C_s=4, C_c=2 are package
    choices, configurable per run.
    """

    nu: float
    C_s: float = 4.0
    C_c: float = 2.0
    tau_floor: float = 0.0

    def __post_init__(self):
        problems = []
        if not (self.nu > 0):
            problems.append(f"nu must be positive, got {self.nu}")
        if not (self.C_s > 0):
            problems.append(f"C_s must be positive, got {self.C_s}")
        if self.C_c < 0:
            problems.append(f"C_c must be nonnegative, got {self.C_c}")
        if self.tau_floor < 0:
            problems.append(f"tau_floor must be nonnegative, got {self.tau_floor}")
        if problems:
            raise ConfigurationError(problems)


@dataclass
class SubscaleField:
    """Subscale velocity sampled at the quadrature points of ``space``.

    values has shape (n_cells, n_qp, dim).
    """

    values: np.ndarray = field(repr=False)
    space: object = None

    def copy(self):
        return SubscaleField(values=self.values.copy(), space=self.space)

    def norm_l2(self):
        return quad_norm(self.space, self.values)

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            from .errors import InvariantViolation
            raise InvariantViolation("subscale field contains non-finite values")
        return self


def zero_subscale(V):
    tab = V.tabulation()
    shape = (V.mesh.n_cells, tab["weights"].shape[1], V.components)
    return SubscaleField(values=np.zeros(shape), space=V)


def compute_tau(params, h, u_linf):
    """Global subscale relaxation time.

    Parameters
    ----------
    params : StabParams
    h : float
        Mesh size (largest cell diameter), > 0.
    u_linf : float
        Max-norm of the lagged resolved velocity, >= 0.
    """
    if not (h > 0):
        raise ConfigurationError(f"mesh size must be positive, got {h}")
    if u_linf < 0:
        raise ConfigurationError(f"u_linf must be nonnegative, got {u_linf}")
    tau = h * h / (params.C_s * params.nu + params.C_c * h * u_linf)
    return max(tau, params.tau_floor) if params.tau_floor > 0 else tau


def residual_field(V, Q, u, p, order=None, advection=None):
    """Resolved residual N(a, u_h) + ∇p_h at quadrature points.

    N is the skew-symmetrized transport term (a·∇)u + ½(∇·a)u.  By
    default the advection velocity a is u itself (the self-advected
    residual of the scheme); the solver passes its frozen Picard iterate
    instead so the subscale update matches the system it eliminated.
    Returns an array of shape (n_cells, n_qp, dim).
    """
    if order is None:
        order = V.quad_order
    a = u if advection is None else advection
    a_qp = V.eval_at_qp(a, order)                    # (nc, nq, d)
    grad_a = V.eval_grad_at_qp(a, order)
    div_a = np.einsum("cqdd->cq", grad_a)
    u_qp = V.eval_at_qp(u, order)
    grad_u = V.eval_grad_at_qp(u, order)             # (nc, nq, d, d)
    conv = np.einsum("cqd,cqkd->cqk", a_qp, grad_u) + 0.5 * div_a[:, :, None] * u_qp
    grad_p = Q.eval_grad_at_qp(p, order)             # (nc, nq, 1, d)
    return conv + grad_p[:, :, 0, :]


def project_orthogonal(f, V):
    """Orthogonal-complement part of a quadrature-point field.

    Computes f - (L² projection of f onto V, evaluated back at the
    quadrature points).  The result pairs to zero with every basis
    function of V up to the mass-solve tolerance.
    """
    f = as_qp_field(V, f)
    coarse = l2_project(f, V)
    return f - V.eval_at_qp(coarse)


def orthogonality_defect(tilde):
    """‖π_V ũ‖ / max(‖ũ‖, eps): must stay at solver-roundoff level."""
    V = tilde.space
    coarse = l2_project(tilde.values, V)
    num = quad_norm(V, V.eval_at_qp(coarse))
    den = max(tilde.norm_l2(), EPS_NORM)
    return num / den


def advance_subscale(tilde_old, res, tau, dt, scheme="backward_euler"):
    """One subscale update with the resolved residual frozen.

    backward_euler:  ũ⁺ = (ũ/dt − π⊥res) / (1/dt + 1/τ)
    quasi_static:    ũ⁺ = −τ · π⊥res   (the dt → ∞ limit)

    Both are followed by re-projection onto the complement, which removes
    the resolved component that floating-point drift (and a non-orthogonal
    residual argument) would otherwise let accumulate.
    """
    if not (tau > 0):
        raise ConfigurationError(f"tau must be positive, got {tau}")
    V = tilde_old.space
    res_perp = project_orthogonal(res, V)
    if scheme == "backward_euler":
        if not (dt > 0):
            raise ConfigurationError(f"dt must be positive, got {dt}")
        new = (tilde_old.values / dt - res_perp) / (1.0 / dt + 1.0 / tau)
    elif scheme == "quasi_static":
        new = -tau * res_perp
    else:
        raise ConfigurationError(f"unknown subscale scheme {scheme!r}")
    new = project_orthogonal(new, V)
    return SubscaleField(values=new, space=V).check_finite()


def cross_terms(V, Q, u, tilde, order=None):
    """Couplings of the subscale with the resolved equations.

    Returns (momentum, continuity):
      momentum[i]   = b(u_h, phi_i, ũ)   -- the transport of phi_i against ũ
      continuity[j] = (ũ, ∇psi_j)
    assembled by quadrature.
    """
    from .fe import advection_factor

    if order is None:
        order = V.quad_order
    tab = V.tabulation(order)
    vals = tilde.values
    n_fac = advection_factor(V, u, order)            # (nc, nq, nloc)
    loc = np.einsum("cq,cqi,cqk->cik", tab["weights"], n_fac, vals)
    momentum = np.zeros((V.n_scalar, V.components))
    sdofs = V.cell_dofs
    valid = sdofs >= 0
    for k in range(V.components):
        np.add.at(momentum[:, k], sdofs[valid], loc[:, :, k][valid])

    tabq = Q.tabulation(order)
    locq = np.einsum("cq,cqjd,cqd->cj", tabq["weights"], tabq["grad"], vals)
    continuity = np.zeros(Q.n_scalar)
    sq = Q.cell_dofs
    vq = sq >= 0
    np.add.at(continuity, sq[vq], locq[vq])
    return momentum.ravel(), continuity
