"""Second-order finite-difference calculus on tensor-product grids.

All operators are assembled once per grid as sparse matrices built from 1-D
stencils (central differences inside, one-sided second-order rows on the two
outermost lines) lifted to 2-D by Kronecker products.  Because every 2-D
operator is a Kronecker product of 1-D pieces, iterated first differences in
x1 and x2 commute *exactly*, which makes the row-curl of a discrete symmetric
gradient and the double curl of a discrete ansatz cancel to rounding on
polynomial data and at second order otherwise.

Conventions for a symmetric 2x2 field F (components F11, F12, F22):

    curl2(F)    = (d1 F12 - d2 F11,  d1 F22 - d2 F12)        row-wise curl
    curlTcurl(F)= d1 d1 F22 - 2 d1 d2 F12 + d2 d2 F11        (iterated d1/d2)
    cof(F)      = [[F22, -F12], [-F12, F11]]
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fields import (
    Grid2,
    ScalarGridField,
    SymGridField2,
    VectorGridField2,
)

__all__ = [
    "StencilPlan",
    "plan_for",
    "grad",
    "div",
    "curl_vec",
    "hessian",
    "symgrad",
    "curl2",
    "curlTcurl",
    "cof",
    "det2",
    "quad_weights",
    "integrate",
    "norm_l2",
    "frob2",
]


def _d1_matrix(n: int, h: float) -> sp.csr_matrix:
    """First derivative: central interior, one-sided 2nd order at the ends."""
    main = np.zeros(n)
    lower = np.full(n - 1, -1.0 / (2 * h))
    upper = np.full(n - 1, 1.0 / (2 * h))
    D = sp.diags([lower, main, upper], [-1, 0, 1], format="lil")
    D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[n - 1, n - 3 : n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _d2_matrix(n: int, h: float) -> sp.csr_matrix:
    """Second derivative: central (1,-2,1) interior, one-sided 2nd order ends."""
    one = np.ones(n - 1)
    D = sp.diags([one, -2.0 * np.ones(n), one], [-1, 0, 1], format="lil") / h**2
    D[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
    D[n - 1, n - 4 : n] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    return D.tocsr()


class StencilPlan:
    """Per-grid cache of sparse difference operators on flattened (nx*ny,) data.

    Attributes
    ----------
    Dx, Dy : first derivatives along x1 / x2.
    Dxx, Dyy : tight three-point second derivatives (used by the variational
        solvers; standard biharmonic conditioning).
    Dxy : mixed derivative d1 d2, the Kronecker product of the two first
        differences -- symmetric in the order of application by construction.
    """

    def __init__(self, grid: Grid2):
        self.grid = grid
        nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
        d1x, d1y = _d1_matrix(nx, hx), _d1_matrix(ny, hy)
        d2x, d2y = _d2_matrix(nx, hx), _d2_matrix(ny, hy)
        ix, iy = sp.identity(nx, format="csr"), sp.identity(ny, format="csr")
        self.Dx = sp.kron(d1x, iy, format="csr")
        self.Dy = sp.kron(ix, d1y, format="csr")
        self.Dxx = sp.kron(d2x, iy, format="csr")
        self.Dyy = sp.kron(ix, d2y, format="csr")
        self.Dxy = sp.kron(d1x, d1y, format="csr")

    def apply(self, M: sp.csr_matrix, arr: np.ndarray) -> np.ndarray:
        return (M @ arr.ravel()).reshape(arr.shape)


_PLANS: dict[Grid2, StencilPlan] = {}


def plan_for(grid: Grid2) -> StencilPlan:
    plan = _PLANS.get(grid)
    if plan is None:
        plan = _PLANS.setdefault(grid, StencilPlan(grid))
    return plan


# ---------------------------------------------------------------- operators


def grad(f: ScalarGridField) -> VectorGridField2:
    p = plan_for(f.grid)
    return VectorGridField2(
        f.grid, np.stack([p.apply(p.Dx, f.values), p.apply(p.Dy, f.values)])
    )


def div(v: VectorGridField2) -> ScalarGridField:
    p = plan_for(v.grid)
    return ScalarGridField(v.grid, p.apply(p.Dx, v.values[0]) + p.apply(p.Dy, v.values[1]))


def curl_vec(v: VectorGridField2) -> ScalarGridField:
    """Scalar curl d1 v2 - d2 v1 of an in-plane vector field."""
    p = plan_for(v.grid)
    return ScalarGridField(v.grid, p.apply(p.Dx, v.values[1]) - p.apply(p.Dy, v.values[0]))


def hessian(f: ScalarGridField) -> SymGridField2:
    p = plan_for(f.grid)
    return SymGridField2(
        f.grid,
        np.stack(
            [p.apply(p.Dxx, f.values), p.apply(p.Dxy, f.values), p.apply(p.Dyy, f.values)]
        ),
    )


def symgrad(v: VectorGridField2) -> SymGridField2:
    p = plan_for(v.grid)
    w1, w2 = v.values
    return SymGridField2(
        v.grid,
        np.stack(
            [
                p.apply(p.Dx, w1),
                0.5 * (p.apply(p.Dy, w1) + p.apply(p.Dx, w2)),
                p.apply(p.Dy, w2),
            ]
        ),
    )


def curl2(F: SymGridField2) -> VectorGridField2:
    p = plan_for(F.grid)
    f11, f12, f22 = F.comps
    return VectorGridField2(
        F.grid,
        np.stack(
            [
                p.apply(p.Dx, f12) - p.apply(p.Dy, f11),
                p.apply(p.Dx, f22) - p.apply(p.Dy, f12),
            ]
        ),
    )


def curlTcurl(F: SymGridField2) -> ScalarGridField:
    """Row curl followed by the scalar curl; equals the iterated-difference
    expansion d1 d1 F22 - 2 d1 d2 F12 + d2 d2 F11 identically."""
    return curl_vec(curl2(F))


def cof(F: SymGridField2) -> SymGridField2:
    f11, f12, f22 = F.comps
    return SymGridField2(F.grid, np.stack([f22, -f12, f11]))


def det2(F: SymGridField2) -> ScalarGridField:
    f11, f12, f22 = F.comps
    return ScalarGridField(F.grid, f11 * f22 - f12 * f12)


# ---------------------------------------------------------------- quadrature


def quad_weights(grid: Grid2, depth: int = 1, rule: str = "uniform") -> np.ndarray:
    """Quadrature weights supported on nodes at least `depth` rings inside.

    'uniform' gives each supported node hx*hy; 'trapezoid' applies the
    trapezoid rule on the interior subrectangle (half/quarter weights on its
    edge/corner nodes).
    """
    w = np.zeros((grid.nx, grid.ny))
    sl = (slice(depth, grid.nx - depth), slice(depth, grid.ny - depth))
    w[sl] = grid.hx * grid.hy
    if rule == "trapezoid":
        wx = np.ones(grid.nx - 2 * depth)
        wy = np.ones(grid.ny - 2 * depth)
        wx[[0, -1]] = 0.5
        wy[[0, -1]] = 0.5
        w[sl] *= np.outer(wx, wy)
    elif rule != "uniform":
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return w


def frob2(field) -> np.ndarray:
    """Pointwise squared magnitude (Frobenius for matrix-valued fields)."""
    if isinstance(field, ScalarGridField):
        return field.values**2
    if isinstance(field, VectorGridField2):
        return np.sum(field.values**2, axis=0)
    if isinstance(field, SymGridField2):
        f11, f12, f22 = field.comps
        return f11**2 + 2.0 * f12**2 + f22**2
    raise TypeError(f"unsupported field type {type(field).__name__}")


def integrate(values: np.ndarray, grid: Grid2, depth: int = 1, rule: str = "uniform") -> float:
    return float(np.sum(quad_weights(grid, depth, rule) * values))


def norm_l2(field, depth: int = 1, rule: str = "uniform") -> float:
    return float(np.sqrt(integrate(frob2(field), field.grid, depth, rule)))
