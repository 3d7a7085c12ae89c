"""Orthogonal splittings of symmetric 2x2 fields and discrete negative-order
Sobolev norms.

Two complementary projections drive the optimality diagnostics:

* ``project_out_hessian``: split F = hess(v) + cof(symgrad(phi)) with phi
  vanishing on the outermost ring.  The distance reported is the exact
  least-squares distance of F to the span of discrete Hessians, which is
  equivalent (grid-stably) to the H^-1 norm of curl2(F).

* ``project_out_symgrad``: split F = symgrad(w) + cof(hess(r)) with r
  vanishing on the two outermost rings (clamped-plate boundary).  The
  distance ||hess r|| reproduces the H^-2 norm of curlTcurl(F) exactly in
  this discretization: the two linear systems share the Galerkin matrix and
  adjoint-consistent right-hand sides.

All systems are assembled from the StencilPlan operators with quadrature
restricted to interior nodes, solved by unpreconditioned conjugate gradients
(relative tolerance 1e-10, iteration cap 50 n) unless a diagonal
preconditioner is requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .diffops import plan_for, quad_weights
from .fields import Grid2, ScalarGridField, SymGridField2, VectorGridField2

__all__ = [
    "HessianSplit",
    "SymgradSplit",
    "project_out_hessian",
    "project_out_symgrad",
    "h_minus1_norm",
    "h_minus2_norm",
    "cg",
    "hessian_stack",
    "symgrad_stack",
]


def cg(A, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None,
       x0: np.ndarray | None = None, diag_precond: bool = False) -> np.ndarray:
    """Conjugate gradients on SPD/consistent-PSD systems.

    Deterministic, relative-residual stopping ||r|| <= tol * ||b||, default
    iteration cap 50 * n.  `A` is a sparse matrix or any object with dot().
    """
    n = b.size
    if maxiter is None:
        maxiter = 50 * n
    x = np.zeros_like(b) if x0 is None else x0.astype(float).copy()
    r = b - A.dot(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    Minv = None
    if diag_precond:
        d = A.diagonal()
        d = np.where(d > 0, d, 1.0)
        Minv = 1.0 / d
    z = Minv * r if Minv is not None else r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            break
        Ap = A.dot(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break  # null-space direction on a consistent PSD system
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = Minv * r if Minv is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


# ---------------------------------------------------------------- assembly


def hessian_stack(grid: Grid2) -> sp.csr_matrix:
    """(3N, N) operator v -> (d11 v, d12 v, d22 v) stacked."""
    p = plan_for(grid)
    return sp.vstack([p.Dxx, p.Dxy, p.Dyy], format="csr")


def symgrad_stack(grid: Grid2) -> sp.csr_matrix:
    """(3N, 2N) operator (w1, w2) -> (d1 w1, (d2 w1 + d1 w2)/2, d2 w2)."""
    p = plan_for(grid)
    Z = sp.csr_matrix(p.Dx.shape)
    return sp.bmat(
        [[p.Dx, Z], [0.5 * p.Dy, 0.5 * p.Dx], [Z, p.Dy]], format="csr"
    )


def _triple_weights(grid: Grid2) -> sp.dia_matrix:
    """Frobenius quadrature diag(w, 2w, w) on interior nodes."""
    w = quad_weights(grid, depth=1).ravel()
    return sp.diags(np.concatenate([w, 2.0 * w, w]))


class _GridSystems:
    """Per-grid cache of the Galerkin matrices used by all four operations."""

    def __init__(self, grid: Grid2):
        self.grid = grid
        n = grid.nx * grid.ny
        self.free1 = grid.interior_mask(1).ravel()
        self.free2 = grid.interior_mask(2).ravel()
        self.w = quad_weights(grid, depth=1).ravel()
        H = hessian_stack(grid)
        S = symgrad_stack(grid)
        Wt = _triple_weights(grid)
        self.H, self.S, self.Wt = H, S, Wt
        A_bih = (H.T @ Wt @ H).tocsr()
        self.A_bih_full = A_bih
        self.A_bih = A_bih[self.free2][:, self.free2]
        K = (S.T @ Wt @ S).tocsr()
        free_vec = np.concatenate([self.free1, self.free1])
        self.free_vec = free_vec
        self.K_clamped = K[free_vec][:, free_vec]
        self.K_full = K
        p = plan_for(grid)
        L = (-(p.Dxx + p.Dyy)).tocsr()
        # symmetric Dirichlet Laplacian: rows at interior nodes are central,
        # columns restricted to interior nodes; quadrature-scaled so that
        # z.b below equals the integral <g, z>
        W1 = sp.diags(self.w[self.free1])
        self.A_lap = (W1 @ L[self.free1][:, self.free1]).tocsr()


_SYSTEMS: dict[Grid2, _GridSystems] = {}


def _systems(grid: Grid2) -> _GridSystems:
    s = _SYSTEMS.get(grid)
    if s is None:
        s = _SYSTEMS.setdefault(grid, _GridSystems(grid))
    return s


def _cof_pair_triple(F: SymGridField2) -> np.ndarray:
    """Triple c with <F, cof(t)>_Frobenius = (t, c)_weighted for sym t."""
    f11, f12, f22 = (c.ravel() for c in F.comps)
    return np.concatenate([f22, -f12, f11])


def _triple(F: SymGridField2) -> np.ndarray:
    return np.concatenate([c.ravel() for c in F.comps])


# ---------------------------------------------------------------- results


@dataclass
class HessianSplit:
    """F ~ hess(v) + cof(symgrad(phi)); distance = ||F - hess v||_L2."""

    v: ScalarGridField
    phi: VectorGridField2
    distance: float


@dataclass
class SymgradSplit:
    """F ~ symgrad(w) + cof(hess(r)); distance = ||hess r||_L2."""

    w: VectorGridField2
    r: ScalarGridField
    distance: float


# ---------------------------------------------------------------- operations


def project_out_hessian(F: SymGridField2, tol: float = 1e-10,
                        diag_precond: bool = False) -> HessianSplit:
    """Split F into a best-fit Hessian plus a clamped cofactor-symgrad part.

    The distance is the defining quantity of the decomposition lemma, the
    true least-squares distance of F to the span of discrete Hessians
    (normal equations, consistent; affine null space).  phi then solves the
    Korn-type Euler-Lagrange system on the Hessian-free remainder -- solving
    it on F directly would let the clamped-ring adjoint truncation (an O(h)
    boundary artifact of the discrete pairing) leak into the distance.
    """
    g = F.grid
    sys_ = _systems(g)
    f_triple = _triple(F)
    rhs_v = sys_.H.T @ (sys_.Wt @ f_triple)
    A_full = sys_.A_bih_full
    v = cg(A_full, rhs_v, tol=tol, diag_precond=diag_precond)
    v = _normalize_mean_affine(v, g)
    resid = f_triple - sys_.H @ v
    distance = float(np.sqrt(max(float(resid @ (sys_.Wt @ resid)), 0.0)))
    # Euler-Lagrange fit of the remainder in the cof(symgrad) space
    n = g.nx * g.ny
    G = SymGridField2(g, resid.reshape(3, g.nx, g.ny))
    rhs_full = sys_.S.T @ (sys_.Wt @ _cof_pair_triple(G))
    rhs = rhs_full[sys_.free_vec]
    phi_free = cg(sys_.K_clamped, rhs, tol=tol, diag_precond=diag_precond)
    phi = np.zeros(2 * n)
    phi[sys_.free_vec] = phi_free
    phi_field = VectorGridField2(g, phi.reshape(2, g.nx, g.ny))
    return HessianSplit(ScalarGridField(g, v.reshape(g.nx, g.ny)), phi_field, distance)


def project_out_symgrad(F: SymGridField2, tol: float = 1e-10,
                        diag_precond: bool = False) -> SymgradSplit:
    """Galerkin-project F onto cof(hess) along symmetric gradients."""
    g = F.grid
    sys_ = _systems(g)
    rhs_full = sys_.H.T @ (sys_.Wt @ _cof_pair_triple(F))
    rhs = rhs_full[sys_.free2]
    r_free = cg(sys_.A_bih, rhs, tol=tol, diag_precond=diag_precond)
    r = np.zeros(g.nx * g.ny)
    r[sys_.free2] = r_free
    distance = float(np.sqrt(max(float(r_free @ rhs), 0.0)))
    h_r = sys_.H @ r
    n = g.nx * g.ny
    cof_hr = np.concatenate([h_r[2 * n :], -h_r[n : 2 * n], h_r[:n]])
    g_triple = _triple(F) - cof_hr
    rhs_w = sys_.S.T @ (sys_.Wt @ g_triple)
    w = cg(sys_.K_full, rhs_w, tol=tol, diag_precond=diag_precond)
    w = _normalize_rigid(w, g)
    r_field = ScalarGridField(g, r.reshape(g.nx, g.ny))
    return SymgradSplit(VectorGridField2(g, w.reshape(2, g.nx, g.ny)), r_field, distance)


def h_minus1_norm(field, tol: float = 1e-10, diag_precond: bool = False) -> float:
    """Discrete H^-1 norm: -Lap z = g with one clamped ring, sqrt(<g, z>)."""
    comps = field.values[None] if isinstance(field, ScalarGridField) else field.values
    g = field.grid
    sys_ = _systems(g)
    total = 0.0
    for c in comps:
        b = (sys_.w * c.ravel())[sys_.free1]
        z = cg(sys_.A_lap, b, tol=tol, diag_precond=diag_precond)
        total += max(float(z @ b), 0.0)
    return float(np.sqrt(total))


def h_minus2_norm(field: ScalarGridField, tol: float = 1e-10,
                  diag_precond: bool = False) -> float:
    """Discrete H^-2 norm: <hess z, hess a> = <g, a> over two clamped rings.

    The pairing only samples g at doubly-interior nodes, so boundary-layer
    values of g (where one-sided stencils fed it) never enter.
    """
    g = field.grid
    sys_ = _systems(g)
    b = (sys_.w * field.values.ravel())[sys_.free2]
    z = cg(sys_.A_bih, b, tol=tol, diag_precond=diag_precond)
    return float(np.sqrt(max(float(z @ b), 0.0)))


# ---------------------------------------------------------------- gauges


def _normalize_mean_affine(v: np.ndarray, grid: Grid2) -> np.ndarray:
    """Remove the weighted best affine part (mean and mean gradient gauge)."""
    X1, X2 = grid.mesh()
    w = quad_weights(grid, depth=1).ravel()
    B = np.stack([np.ones(v.size), X1.ravel(), X2.ravel()], axis=1)
    Bw = B * w[:, None]
    coef = np.linalg.solve(B.T @ Bw, Bw.T @ v)
    return v - B @ coef


def _normalize_rigid(w_vec: np.ndarray, grid: Grid2) -> np.ndarray:
    """Remove the weighted best rigid motion (translations + rotation)."""
    X1, X2 = grid.mesh()
    n = grid.nx * grid.ny
    w = quad_weights(grid, depth=1).ravel()
    ww = np.concatenate([w, w])
    zeros = np.zeros(n)
    ones = np.ones(n)
    B = np.stack(
        [
            np.concatenate([ones, zeros]),
            np.concatenate([zeros, ones]),
            np.concatenate([-X2.ravel(), X1.ravel()]),
        ],
        axis=1,
    )
    Bw = B * ww[:, None]
    coef = np.linalg.solve(B.T @ Bw, Bw.T @ w_vec)
    return w_vec - B @ coef
