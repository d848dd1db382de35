"""Galerkin assembly and the frozen-coefficient fixed-point solver.

The discrete problem is: find u_h matching the interpolated boundary data with

    integral( a(x,u_h,grad u_h) grad u_h . grad v
              + b(x,u_h,grad u_h) . grad u_h  v
              + c(x,u_h) u_h v ) = integral( f v )

for every test function v vanishing on the boundary.  The solver freezes the
coefficients at the previous iterate and repeats linear solves until the
nodal update stalls; for coefficients independent of the state this reaches
the fixed point after a single update.

Coefficient callables follow a vectorized convention: `a(x, eta, p)` and
`b(x, eta, p)` receive coordinate arrays of shape (..., dim), state values of
shape (...) and state gradients of shape (..., dim); `c(x, eta)`, `f(x)` and
`g(x)` analogously.  Results must broadcast against the leading shape
(`b` against the full (..., dim) shape).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .errors import (
    CoefficientBoundsViolation,
    InvalidParameters,
    LinearSolveDiverged,
    MissingBoundaryValue,
    PicardDiverged,
    QuadratureDegreeTooLow,
)
from .mesh import Mesh
from .p1 import P1Field, QuadratureRule, gradient_table, physical_points, quadrature_rule
from .rng import SplitMix64

DENSE_SOLVE_MAX_NODES = 500
GMRES_RESTART = 30

C_MODES = ("nonnegative", "identically-zero", "general")


def as_point_callable(value):
    """Wrap a constant as a coordinate callable; pass callables through."""
    if callable(value):
        return value
    v = float(value)
    return lambda x: np.full(np.shape(x)[:-1], v)


@dataclass(frozen=True)
class CoefficientSet:
    """Problem data and its declared bounds.

    `lam` and `Lam` bound the diffusion coefficient from below/above, `nu`
    bounds lam**-2 * (|b|^2 + c^2).  `c_mode` records the sign structure of the
    zeroth-order coefficient, which the maximum-principle machinery needs.
    `div_b` optionally supplies the divergence of b for the zeroth-order
    condition check.  `constant_coefficients` declares that a, b, c do not
    vary in x or the state, enabling exact low-degree quadrature.
    """

    a: object
    b: object
    c: object
    f: object
    g: object
    lam: float
    Lam: float
    nu: float
    c_mode: str = "general"
    div_b: object | None = None
    constant_coefficients: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise InvalidParameters("ellipticity bound lam must be positive")
        if self.Lam < self.lam:
            raise InvalidParameters("upper bound Lam must be >= lam")
        if self.nu < 0:
            raise InvalidParameters("nu must be >= 0")
        if self.c_mode not in C_MODES:
            raise InvalidParameters(f"c_mode must be one of {C_MODES}")
        object.__setattr__(self, "f", as_point_callable(self.f))
        object.__setattr__(self, "g", as_point_callable(self.g))

    def with_data(self, f=None, g=None) -> "CoefficientSet":
        updates = {}
        if f is not None:
            updates["f"] = f
        if g is not None:
            updates["g"] = g
        return replace(self, **updates)


def poisson(f=-1.0, g=0.0) -> CoefficientSet:
    """Unit Laplacian: a=1, b=0, c=0."""
    return CoefficientSet(
        a=lambda x, eta, p: np.ones(np.shape(eta)),
        b=lambda x, eta, p: np.zeros(np.shape(x)),
        c=lambda x, eta: np.zeros(np.shape(eta)),
        f=f, g=g, lam=1.0, Lam=1.0, nu=0.0,
        c_mode="identically-zero",
        div_b=lambda x, eta, p: np.zeros(np.shape(eta)),
        constant_coefficients=True,
    )


def advection_diffusion(b_vector, f=-1.0, g=0.0, c0: float = 0.0) -> CoefficientSet:
    """Unit diffusion plus a constant drift and constant reaction c0 >= 0."""
    b_vector = np.asarray(b_vector, dtype=float)
    if c0 < 0:
        raise InvalidParameters("constant reaction c0 must be >= 0")
    nu = float(np.sqrt((b_vector ** 2).sum() + c0 ** 2))
    return CoefficientSet(
        a=lambda x, eta, p: np.ones(np.shape(eta)),
        b=lambda x, eta, p: np.broadcast_to(b_vector, np.shape(x)),
        c=lambda x, eta: np.full(np.shape(eta), c0),
        f=f, g=g, lam=1.0, Lam=1.0, nu=nu,
        c_mode="identically-zero" if c0 == 0.0 else "nonnegative",
        div_b=lambda x, eta, p: np.zeros(np.shape(eta)),
        constant_coefficients=True,
    )


def quasilinear_a(f=-1.0, g=0.0) -> CoefficientSet:
    """Diffusion a = 1 + eta^2/(1+eta^2), saturating between 1 and 2."""
    return CoefficientSet(
        a=lambda x, eta, p: 1.0 + eta ** 2 / (1.0 + eta ** 2),
        b=lambda x, eta, p: np.zeros(np.shape(x)),
        c=lambda x, eta: np.zeros(np.shape(eta)),
        f=f, g=g, lam=1.0, Lam=2.0, nu=0.0,
        c_mode="identically-zero",
        div_b=lambda x, eta, p: np.zeros(np.shape(eta)),
        constant_coefficients=False,
    )


def validate_coefficients(coeffs: CoefficientSet, mesh: Mesh, n_samples: int = 1000,
                          seed: int = 0, state_range: float = 10.0) -> dict:
    """Spot-check the declared bounds at random (x, eta, p) samples.

    Raises `CoefficientBoundsViolation` on the first broken bound; returns the
    observed extrema otherwise.
    """
    rng = SplitMix64(seed)
    cells = rng.integers(0, mesh.num_cells, size=n_samples)
    bary = rng.simplex_barycentric(mesh.dim + 1, n_samples)
    x = np.einsum("nm,nmd->nd", bary, mesh.vertices[mesh.cells[cells]])
    eta = rng.uniform(-state_range, state_range, size=n_samples)
    p = rng.uniform(-state_range, state_range, size=(n_samples, mesh.dim))

    a = np.broadcast_to(np.asarray(coeffs.a(x, eta, p), float), eta.shape)
    b = np.broadcast_to(np.asarray(coeffs.b(x, eta, p), float), x.shape)
    c = np.broadcast_to(np.asarray(coeffs.c(x, eta), float), eta.shape)

    slack = 1e-12 * max(1.0, coeffs.Lam)
    if a.min() < coeffs.lam - slack:
        raise CoefficientBoundsViolation(
            f"a dips to {a.min():.6g} below declared lam={coeffs.lam}")
    if np.abs(a).max() > coeffs.Lam + slack:
        raise CoefficientBoundsViolation(
            f"|a| reaches {np.abs(a).max():.6g} above declared Lam={coeffs.Lam}")
    lower_order = ((b ** 2).sum(axis=-1) + c ** 2) / coeffs.lam ** 2
    if lower_order.max() > coeffs.nu ** 2 + slack:
        raise CoefficientBoundsViolation(
            f"lam^-2(|b|^2+c^2) reaches {lower_order.max():.6g} above nu^2={coeffs.nu ** 2}")
    if coeffs.c_mode == "identically-zero" and np.abs(c).max() > 1e-14:
        raise CoefficientBoundsViolation("c_mode=identically-zero but c is not zero")
    if coeffs.c_mode == "nonnegative" and c.min() < -1e-14:
        raise CoefficientBoundsViolation(
            f"c_mode=nonnegative but c dips to {c.min():.6g}")
    return {
        "a_min": float(a.min()), "a_max": float(a.max()),
        "lower_order_max": float(lower_order.max()),
        "c_min": float(c.min()), "samples": n_samples,
    }


@dataclass(frozen=True)
class SparseSystem:
    """Assembled linear system with optional Dirichlet constraint record."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray

    @property
    def size(self) -> int:
        return self.rhs.shape[0]


@dataclass(frozen=True)
class SolveOptions:
    picard_max_iter: int = 100
    picard_tol: float = 1e-10
    linear_max_iter: int = 300  # restart cycles of the Krylov solver
    linear_tol: float = 1e-12
    damping: float = 1.0

    def __post_init__(self):
        if self.picard_tol <= 0 or self.linear_tol <= 0:
            raise InvalidParameters("tolerances must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise InvalidParameters("damping must lie in (0, 1]")


@dataclass(frozen=True)
class SolveResult:
    u_h: P1Field
    picard_iterations: int
    final_update_norm: float
    final_linear_residual: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "picard_iterations": self.picard_iterations,
            "final_update_norm": self.final_update_norm,
            "final_linear_residual": self.final_linear_residual,
            "converged": self.converged,
        }


def interpolate_boundary(mesh: Mesh, g) -> dict:
    """Nodal values of the boundary datum at every boundary vertex."""
    g = as_point_callable(g)
    nodes = sorted(mesh.boundary_nodes)
    coords = mesh.vertices[nodes]
    vals = np.broadcast_to(np.asarray(g(coords), dtype=float), (len(nodes),))
    return {int(j): float(v) for j, v in zip(nodes, vals)}


def coefficient_samples(mesh: Mesh, w: P1Field, coeffs: CoefficientSet,
                        rule: QuadratureRule):
    """Evaluate (a, b, c) at all quadrature points with state frozen at w.

    The state is w interpolated at the quadrature points; its gradient is the
    constant per-cell gradient.  Returns arrays of shapes (C, Q), (C, Q, D)
    and (C, Q) plus the quadrature coordinates.
    """
    xq = physical_points(mesh, rule)
    wc = w.nodal_values[mesh.cells]
    eta = np.einsum("qm,cm->cq", rule.points, wc)
    grad = np.einsum("cmd,cm->cd", gradient_table(mesh), wc)
    p = np.broadcast_to(grad[:, None, :], xq.shape)
    a = np.broadcast_to(np.asarray(coeffs.a(xq, eta, p), float), eta.shape)
    b = np.broadcast_to(np.asarray(coeffs.b(xq, eta, p), float), xq.shape)
    c = np.broadcast_to(np.asarray(coeffs.c(xq, eta), float), eta.shape)
    return xq, a, b, c


def local_form_parts(mesh: Mesh, w: P1Field, coeffs: CoefficientSet,
                     rule: QuadratureRule):
    """Per-cell local matrices of the three form terms, frozen at state w.

    Returns (diffusion, advection, reaction), each (C, M, M) with entry
    [cell, m, n] = integral over the cell of the term with trial shape
    function n and test shape function m.
    """
    _, a, b, c = coefficient_samples(mesh, w, coeffs, rule)
    grads = gradient_table(mesh)
    bar = rule.points
    wq = rule.weights
    meas = mesh.cell_measures

    a_cell = np.einsum("cq,q->c", a, wq) * meas
    diffusion = np.einsum("c,cmd,cnd->cmn", a_cell, grads, grads)
    advection = np.einsum("cqd,cnd,qm,q->cmn", b, grads, bar, wq) * meas[:, None, None]
    reaction = np.einsum("cq,qm,qn,q->cmn", c, bar, bar, wq) * meas[:, None, None]
    return diffusion, advection, reaction


def assemble_q(mesh: Mesh, w: P1Field, coeffs: CoefficientSet,
               rule: QuadratureRule | None = None) -> SparseSystem:
    """Assemble matrix and load vector of the form with coefficients frozen at w."""
    if rule is None:
        rule = quadrature_rule(mesh.dim, 2 if coeffs.constant_coefficients else 4)
    if not coeffs.constant_coefficients and rule.degree < 4:
        warnings.warn("quadrature degree < 4 with non-constant coefficients",
                      QuadratureDegreeTooLow)

    diffusion, advection, reaction = local_form_parts(mesh, w, coeffs, rule)
    local = diffusion + advection + reaction

    m = mesh.dim + 1
    n = mesh.num_vertices
    rows = np.repeat(mesh.cells[:, :, None], m, axis=2)
    cols = np.repeat(mesh.cells[:, None, :], m, axis=1)
    matrix = sparse.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()

    xq = physical_points(mesh, rule)
    fvals = np.broadcast_to(np.asarray(coeffs.f(xq), float), xq.shape[:2])
    local_rhs = np.einsum("cq,qm,q->cm", fvals, rule.points, rule.weights)
    local_rhs = local_rhs * mesh.cell_measures[:, None]
    rhs = np.zeros(n)
    np.add.at(rhs, mesh.cells.ravel(), local_rhs.ravel())

    return SparseSystem(matrix=matrix, rhs=rhs,
                        dirichlet_mask=np.zeros(n, dtype=bool),
                        dirichlet_values=np.zeros(n))


def q_apply(mesh: Mesh, w: P1Field, u: P1Field, v: P1Field,
            coeffs: CoefficientSet, rule: QuadratureRule | None = None) -> float:
    """Value of the form at (u, v) with coefficients frozen at w."""
    system = assemble_q(mesh, w, coeffs, rule)
    return float(v.nodal_values @ (system.matrix @ u.nodal_values))


def apply_dirichlet(system: SparseSystem, assignment: dict, mesh: Mesh) -> SparseSystem:
    """Constrain nodes to prescribed values by row replacement and symmetric
    column elimination; the assignment must cover every boundary node."""
    missing = mesh.boundary_nodes - set(assignment)
    if missing:
        raise MissingBoundaryValue(
            f"{len(missing)} boundary nodes lack values, e.g. {sorted(missing)[:5]}")
    n = system.size
    mask = np.zeros(n, dtype=bool)
    values = np.zeros(n)
    for j, v in assignment.items():
        mask[int(j)] = True
        values[int(j)] = float(v)

    a = system.matrix.tocsr()
    lifted = np.where(mask, values, 0.0)
    rhs = system.rhs - a @ lifted
    rhs[mask] = values[mask]
    free = sparse.diags((~mask).astype(float))
    pinned = sparse.diags(mask.astype(float))
    constrained = (free @ a @ free + pinned).tocsr()
    return SparseSystem(matrix=constrained, rhs=rhs,
                        dirichlet_mask=mask, dirichlet_values=np.where(mask, values, 0.0))


def _relative_residual(matrix, rhs, x) -> float:
    denom = np.linalg.norm(rhs)
    if denom == 0.0:
        denom = 1.0
    return float(np.linalg.norm(rhs - matrix @ x) / denom)


def linear_solve(system: SparseSystem, opts: SolveOptions | None = None) -> np.ndarray:
    """Solve the constrained system: dense LU at small size, otherwise
    restarted GMRES with diagonal preconditioning (the drift term makes the
    matrix nonsymmetric)."""
    opts = opts or SolveOptions()
    a, b = system.matrix, system.rhs
    n = system.size
    if n <= DENSE_SOLVE_MAX_NODES:
        x = scipy.linalg.solve(a.toarray(), b)
    else:
        diag = a.diagonal()
        safe = np.where(diag == 0.0, 1.0, diag)
        inv_diag = 1.0 / safe
        precond = spla.LinearOperator((n, n), matvec=lambda r: inv_diag * r)
        x, _ = spla.gmres(a, b, rtol=opts.linear_tol, atol=0.0,
                          restart=GMRES_RESTART, maxiter=opts.linear_max_iter,
                          M=precond)
    residual = _relative_residual(a, b, x)
    if not np.isfinite(residual) or residual > 10.0 * opts.linear_tol:
        raise LinearSolveDiverged(
            f"relative residual {residual:.3e} above tolerance {opts.linear_tol:.1e}",
            residual=residual)
    return x


def picard_solve(mesh: Mesh, coeffs: CoefficientSet, opts: SolveOptions | None = None,
                 initial_guess: P1Field | None = None,
                 rule: QuadratureRule | None = None) -> SolveResult:
    """Frozen-coefficient fixed-point iteration for the Galerkin system.

    Each pass assembles the form at the current iterate, solves the linear
    system, and applies a damped update; iteration stops once the relative
    nodal update falls below `picard_tol`.  `picard_iterations` counts the
    updates actually applied, so a state-independent problem converges after
    exactly one.
    """
    opts = opts or SolveOptions()
    assignment = interpolate_boundary(mesh, coeffs.g)
    if initial_guess is None:
        u = np.zeros(mesh.num_vertices)
        for j, v in assignment.items():
            u[j] = v
    else:
        u = initial_guess.nodal_values.copy()

    applied = 0
    while True:
        system = apply_dirichlet(assemble_q(mesh, P1Field(mesh, u), coeffs, rule),
                                 assignment, mesh)
        sol = linear_solve(system, opts)
        lin_res = _relative_residual(system.matrix, system.rhs, sol)
        diff = sol - u
        denom = max(float(np.linalg.norm(sol)), 1e-30)
        update = opts.damping * float(np.linalg.norm(diff)) / denom
        if update <= opts.picard_tol:
            u = u + opts.damping * diff
            return SolveResult(u_h=P1Field(mesh, u), picard_iterations=applied,
                               final_update_norm=update,
                               final_linear_residual=lin_res, converged=True)
        if applied >= opts.picard_max_iter:
            raise PicardDiverged(
                f"no convergence after {applied} updates (last update {update:.3e})",
                last_update=update)
        u = u + opts.damping * diff
        applied += 1


def galerkin_residual(mesh: Mesh, u_h: P1Field, coeffs: CoefficientSet,
                      rule: QuadratureRule | None = None) -> float:
    """Relative residual of the nonlinear Galerkin identity at u_h, measured
    on the unconstrained (interior) nodes."""
    system = assemble_q(mesh, u_h, coeffs, rule)
    free = np.ones(mesh.num_vertices, dtype=bool)
    free[list(mesh.boundary_nodes)] = False
    r = (system.rhs - system.matrix @ u_h.nodal_values)[free]
    denom = max(float(np.linalg.norm(system.rhs[free])), 1.0)
    return float(np.linalg.norm(r) / denom)


@dataclass(frozen=True)
class ZerothOrderReport:
    """Minimum over quadrature points of c - div(b)/2 and the resulting flag.

    Only the smooth per-cell part of the composite divergence is probed: the
    state is piecewise linear, so its gradient is frozen per cell and facet
    jump contributions are not seen.
    """

    min_value: float
    condition_holds: bool
    used_supplied_divergence: bool

    def to_dict(self) -> dict:
        return {
            "min_value": self.min_value,
            "condition_holds": self.condition_holds,
            "used_supplied_divergence": self.used_supplied_divergence,
        }


def check_zeroth_order_condition(mesh: Mesh, u_h: P1Field, coeffs: CoefficientSet,
                                 rule: QuadratureRule | None = None) -> ZerothOrderReport:
    """Probe c(x,u) - div b(x,u,grad u)/2 >= 0 at all quadrature points.

    Uses the supplied divergence callback when present, otherwise central
    finite differences of the composite map x -> b(x, u_h(x), grad u_h) with
    step 1e-6 * h inside each cell.
    """
    if rule is None:
        rule = quadrature_rule(mesh.dim, 2 if coeffs.constant_coefficients else 4)
    xq = physical_points(mesh, rule)
    wc = u_h.nodal_values[mesh.cells]
    eta = np.einsum("qm,cm->cq", rule.points, wc)
    grad = np.einsum("cmd,cm->cd", gradient_table(mesh), wc)
    p = np.broadcast_to(grad[:, None, :], xq.shape)

    c = np.broadcast_to(np.asarray(coeffs.c(xq, eta), float), eta.shape)
    if coeffs.div_b is not None:
        div = np.broadcast_to(np.asarray(coeffs.div_b(xq, eta, p), float), eta.shape)
        supplied = True
    else:
        supplied = False
        step = 1e-6 * mesh.h
        div = np.zeros(eta.shape)
        for axis in range(mesh.dim):
            shift = np.zeros(mesh.dim)
            shift[axis] = step
            eta_shift = grad[:, None, axis] * step
            b_plus = np.broadcast_to(
                np.asarray(coeffs.b(xq + shift, eta + eta_shift, p), float), xq.shape)
            b_minus = np.broadcast_to(
                np.asarray(coeffs.b(xq - shift, eta - eta_shift, p), float), xq.shape)
            div = div + (b_plus[..., axis] - b_minus[..., axis]) / (2.0 * step)

    values = c - 0.5 * div
    min_value = float(values.min())
    return ZerothOrderReport(min_value=min_value,
                             condition_holds=min_value >= -1e-10,
                             used_supplied_divergence=supplied)
