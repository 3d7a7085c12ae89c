"""Assembly, evaluation and minimization of the limiting plate functionals.

Each supported regime yields a two-field functional on the out-of-plane
displacement v and the in-plane displacement w:

    I(v, w) = 1/24 * int q2(hess v + M_b)
            + 1/2  * int q2(symgrad w [+ 1/2 grad(v) x grad(v)] - M_s)

where the offset fields M_b, M_s collect the prestrain blocks dictated by
the regime recipe.  I is quadratic in w for fixed v, and quartic in v
exactly when the recipe includes the (grad v)-outer-product term.

The w-problem is solved exactly (Korn-type SPD system in the anisotropic
q2 metric, conjugate gradients with warm starts); minimization over v uses
the reduced objective v -> min_w I(v, w) with an analytic envelope gradient
and limited-memory quasi-Newton steps with backtracking, multi-started for
the nonconvex (quartic) cases.

``minimize_plate_bound`` minimizes the reduced bound functional

    J(v) = ||hess v + B_2x2||_L2^2 + ||det hess v + ctc S_2x2||_{H^-2}^2

directly (plain L2 metric, gradient chained through the H^-2 solve), which
serves as the independent oracle for the constructive certificate bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .decompose import _normalize_rigid, _systems, cg
from .diffops import curlTcurl, plan_for, quad_weights, symgrad
from .elastic import Material, q2_matrix
from .fields import (
    Grid2,
    ScalarGridField,
    SymField3,
    SymGridField2,
    VectorGridField2,
)
from .regimes import RegimeSpec

__all__ = [
    "EnergyFunctional",
    "MinimizeResult",
    "PlateBoundResult",
    "assemble",
    "evaluate",
    "minimize",
    "reduced_energy",
    "minimize_plate_bound",
]


# ------------------------------------------------------------------- types


@dataclass
class EnergyFunctional:
    """Assembled discrete plate functional for one regime.

    ``M_b`` is added to hess(v) inside the bending integrand; ``M_s`` is
    subtracted inside the stretching integrand; ``include_gradv2`` switches
    the quartic coupling term on.
    """

    spec: RegimeSpec
    material: Material
    grid: Grid2
    M_b: SymGridField2
    M_s: SymGridField2
    include_gradv2: bool

    def __post_init__(self):
        g = self.grid
        self._w = quad_weights(g, depth=1, rule="trapezoid").ravel()
        m = q2_matrix(self.material)
        W = sp.diags(self._w)
        self._Wq = sp.bmat(
            [
                [m[0, 0] * W, None, m[0, 2] * W],
                [None, m[1, 1] * W, None],
                [m[2, 0] * W, None, m[2, 2] * W],
            ],
            format="csr",
        )
        p = plan_for(g)
        self._Dx, self._Dy = p.Dx, p.Dy
        sys_ = _systems(g)
        self._H, self._S = sys_.H, sys_.S
        self._Kw = (self._S.T @ self._Wq @ self._S).tocsr()
        self._Kv = (self._H.T @ self._Wq @ self._H).tocsr()
        self._mb_triple = _triple(self.M_b)
        self._ms_triple = _triple(self.M_s)

    @property
    def n_nodes(self) -> int:
        return self.grid.nx * self.grid.ny


@dataclass
class MinimizeResult:
    """Best minimizer found, with its term breakdown and solve diagnostics."""

    v: ScalarGridField
    w: VectorGridField2
    value: float
    bending: float
    stretching: float
    iterations: int
    converged: bool
    grad_norm: float
    distinct_values: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "bending": float(self.bending),
            "stretching": float(self.stretching),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "grad_norm": float(self.grad_norm),
            "distinct_values": [float(x) for x in self.distinct_values],
        }


@dataclass
class PlateBoundResult:
    """Direct minimization record of the reduced bound functional."""

    v: ScalarGridField
    value: float
    bending_misfit_sq: float
    det_misfit_sq: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "bending_misfit_sq": float(self.bending_misfit_sq),
            "det_misfit_sq": float(self.det_misfit_sq),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


# ----------------------------------------------------------------- helpers


def _triple(F: SymGridField2) -> np.ndarray:
    return np.concatenate([c.ravel() for c in F.comps])


def _zero_sym(grid: Grid2) -> SymGridField2:
    return SymGridField2(grid, np.zeros((3, grid.nx, grid.ny)))


def _minor(F, grid: Grid2) -> SymGridField2:
    if F is None:
        return _zero_sym(grid)
    if isinstance(F, SymGridField2):
        return F
    return F.minor2()


def _shear(F, grid: Grid2) -> VectorGridField2:
    if isinstance(F, SymField3):
        return F.shear_row()
    return VectorGridField2(grid, np.zeros((2, grid.nx, grid.ny)))


def _gradv_outer_triple(E: EnergyFunctional, v_flat: np.ndarray):
    """(vx, vy) and the triple of 1/2 grad(v) x grad(v)."""
    vx = E._Dx @ v_flat
    vy = E._Dy @ v_flat
    return vx, vy, np.concatenate([0.5 * vx * vx, 0.5 * vx * vy, 0.5 * vy * vy])


def _stretch_offset_triple(E: EnergyFunctional, v_flat: np.ndarray) -> np.ndarray:
    """Triple of the w-independent part of the stretching integrand."""
    if E.include_gradv2:
        _, _, quad = _gradv_outer_triple(E, v_flat)
        return quad - E._ms_triple
    return -E._ms_triple


def _solve_w(E: EnergyFunctional, g_triple: np.ndarray, tol: float,
             x0: np.ndarray | None = None) -> np.ndarray:
    """argmin_w int q2(symgrad w + g): consistent Korn system, rigid modes
    removed from the returned representative."""
    rhs = -(E._S.T @ (E._Wq @ g_triple))
    w = cg(E._Kw, rhs, tol=tol, x0=x0)
    return w


# -------------------------------------------------------------- operations


def assemble(spec: RegimeSpec, S, B, material: Material, grid: Grid2) -> EnergyFunctional:
    """Populate the offset fields M_b / M_s from the regime recipe."""
    if not spec.is_gamma_limit:
        raise ValueError(
            f"assemble: case {spec.theorem_case!r} has no limiting functional"
        )
    for name, F in (("S", S), ("B", B)):
        if F is not None and F.grid != grid:
            raise ValueError(f"assemble: field {name} not sampled on the target grid")
    s2 = _minor(S, grid)
    b2 = _minor(B, grid)
    srow = _shear(S, grid)
    if spec.s22_zero and float(np.abs(s2.comps).max()) > 1e-12:
        raise ValueError(
            "assemble: recipe assumes vanishing in-plane midplane prestrain "
            "but S_2x2 is nonzero"
        )
    rec = spec.recipe
    mb = np.zeros((3, grid.nx, grid.ny))
    if rec.bending_includes_B:
        mb += b2.comps
    if rec.bending_includes_symgrad_s:
        mb -= 2.0 * symgrad(srow).comps
    ms = np.zeros((3, grid.nx, grid.ny))
    if rec.stretching_includes_S22:
        ms += s2.comps
    if rec.stretching_includes_half_s_sq:
        s1, s2v = srow.values
        ms += 0.5 * np.stack([s1 * s1, s1 * s2v, s2v * s2v])
    return EnergyFunctional(
        spec=spec,
        material=material,
        grid=grid,
        M_b=SymGridField2(grid, mb),
        M_s=SymGridField2(grid, ms),
        include_gradv2=rec.stretching_includes_halfgradv2,
    )


def evaluate(E: EnergyFunctional, v: ScalarGridField,
             w: VectorGridField2) -> tuple[float, float, float]:
    """(value, bending_term, stretching_term) of the assembled functional."""
    v_flat = v.values.ravel()
    w_flat = w.values.reshape(2, -1).ravel()
    b = E._H @ v_flat + E._mb_triple
    bending = (b @ (E._Wq @ b)) / 24.0
    r = E._S @ w_flat + _stretch_offset_triple(E, v_flat)
    stretching = 0.5 * (r @ (E._Wq @ r))
    return float(bending + stretching), float(bending), float(stretching)


def reduced_energy(E: EnergyFunctional, v: ScalarGridField,
                   inner_tol: float = 1e-10) -> float:
    """min over w of evaluate(E, v, .), by the exact inner quadratic solve."""
    v_flat = v.values.ravel()
    value, _, _ = _reduced_value_grad(E, v_flat, inner_tol, None, want_grad=False)
    return value


def _reduced_value_grad(E: EnergyFunctional, v_flat: np.ndarray,
                        inner_tol: float, w_warm: np.ndarray | None,
                        want_grad: bool = True):
    """Value (and envelope gradient) of v -> min_w I(v, w)."""
    b = E._H @ v_flat + E._mb_triple
    Wq_b = E._Wq @ b
    bending = (b @ Wq_b) / 24.0
    g_triple = _stretch_offset_triple(E, v_flat)
    w = _solve_w(E, g_triple, inner_tol, x0=w_warm)
    r = E._S @ w + g_triple
    Wq_r = E._Wq @ r
    stretching = 0.5 * (r @ Wq_r)
    value = float(bending + stretching)
    if not want_grad:
        return value, None, w
    grad_v = (E._H.T @ Wq_b) / 12.0
    if E.include_gradv2:
        n = E.n_nodes
        vx = E._Dx @ v_flat
        vy = E._Dy @ v_flat
        t1, t2, t3 = Wq_r[:n], Wq_r[n : 2 * n], Wq_r[2 * n :]
        grad_v = grad_v + E._Dx.T @ (t1 * vx + 0.5 * t2 * vy)
        grad_v = grad_v + E._Dy.T @ (0.5 * t2 * vx + t3 * vy)
    return value, grad_v, w


def _lbfgs_minimize(value_grad, x0: np.ndarray, maxiter: int, gtol: float,
                    memory: int = 8, fatol: float = 1e-16):
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    value_grad(x) -> (f, g).  Returns (x, f, g_norm, iterations, converged).
    Stops on the gradient criterion, on reaching the value floor ``fatol``
    (certifies a vanishing minimum without polishing it), or on a sustained
    relative-decrease plateau (returns best iterate, converged only if the
    gradient criterion also holds).
    """
    x = x0.copy()
    f, g = value_grad(x)
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    iterations = 0
    g_norm = float(np.linalg.norm(g))
    g0_norm = max(g_norm, 1e-30)
    window = 30
    f_history = [f]
    for iterations in range(1, maxiter + 1):
        if g_norm <= gtol * max(1.0, g0_norm) or f <= fatol:
            return x, f, g_norm, iterations - 1, True
        # cumulative progress over the trailing window, so oscillating step
        # sizes in a narrow valley cannot keep resetting the test
        if (len(f_history) > window
                and f_history[-window - 1] - f <= 1e-5 * max(abs(f), fatol)):
            return x, f, g_norm, iterations - 1, g_norm <= gtol * max(1.0, g0_norm)
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s_i, y_i, rho_i in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
            a_i = rho_i * float(s_i @ q)
            alphas.append(a_i)
            q -= a_i * y_i
        if y_list:
            ys = float(y_list[-1] @ s_list[-1])
            yy = float(y_list[-1] @ y_list[-1])
            q *= ys / max(yy, 1e-300)
        for (s_i, y_i, rho_i), a_i in zip(
            zip(s_list, y_list, rho_list), reversed(alphas)
        ):
            b_i = rho_i * float(y_i @ q)
            q += (a_i - b_i) * s_i
        d = -q
        slope = float(g @ d)
        if slope >= 0.0:  # not a descent direction; reset memory
            d = -g
            slope = -float(g @ g)
            s_list.clear()
            y_list.clear()
            rho_list.clear()
        step = 1.0
        f_new, g_new, x_new = f, g, x
        for _bt in range(40):
            x_try = x + step * d
            f_try, g_try = value_grad(x_try)
            if f_try <= f + 1e-4 * step * slope:
                f_new, g_new, x_new = f_try, g_try, x_try
                break
            step *= 0.5
        else:
            return x, f, g_norm, iterations, False  # line search stalled
        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * float(np.linalg.norm(s_vec)) * float(np.linalg.norm(y_vec)):
            s_list.append(s_vec)
            y_list.append(y_vec)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        f_history.append(f_new)
        x, f, g = x_new, f_new, g_new
        g_norm = float(np.linalg.norm(g))
    return x, f, g_norm, iterations, g_norm <= gtol * max(1.0, g0_norm)


def _random_smooth_start(grid: Grid2, rng: np.random.Generator,
                         amplitude: float) -> np.ndarray:
    X, Y = grid.mesh()
    v = np.zeros_like(X)
    for _ in range(3):
        a, b = rng.uniform(-3.0, 3.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        v += rng.uniform(-1.0, 1.0) * np.sin(a * X + b * Y + phase)
    return (amplitude * v).ravel()


def _coerce_start(v0, grid: Grid2) -> np.ndarray:
    """Explicit start as a flat v vector on ``grid`` (zeros when absent)."""
    if v0 is None:
        return np.zeros(grid.nx * grid.ny)
    if isinstance(v0, ScalarGridField):
        if v0.grid == grid:
            return v0.values.ravel().copy()
        spl = RectBivariateSpline(v0.grid.x, v0.grid.y, v0.values, kx=5, ky=5, s=0)
        return spl(grid.x, grid.y).ravel()
    arr = np.asarray(v0, dtype=float).ravel()
    if arr.size != grid.nx * grid.ny:
        raise ValueError(
            f"minimize: v0 has {arr.size} values, grid needs {grid.nx * grid.ny}"
        )
    return arr.copy()


_DEFAULT_OPTIONS = {
    "maxiter": 500,
    "gtol": 1e-8,
    "fatol": 1e-16,
    "starts": 3,
    "seed": 0,
    "lbfgs_memory": 8,
    "inner_tol": 1e-10,
    # looser tolerance for inner solves during line search; the returned
    # value is always recomputed with the tight tolerance
    "inner_tol_loose": 1e-8,
    "amplitude": 0.5,
    # optional explicit start: ScalarGridField (any grid; resampled by
    # spline) or flat array of v values; replaces the zero start
    "v0": None,
}


def minimize(E: EnergyFunctional, options: dict | None = None) -> MinimizeResult:
    """Global search for min I(v, w); exact in the quadratic cases.

    Without the quartic coupling both fields solve linear SPD systems.  With
    it, the reduced objective is minimized from a deterministic bending-fit
    start, a zero start (or ``options["v0"]``, e.g. a coarse-grid minimizer
    to refine), and ``options["starts"]`` random initializations; the best
    minimizer is returned and all distinct local values found are reported.
    """
    opts = dict(_DEFAULT_OPTIONS)
    if options:
        opts.update(options)
    n = E.n_nodes
    inner_tol = opts["inner_tol"]

    if not E.include_gradv2:
        rhs = -(E._H.T @ (E._Wq @ E._mb_triple))
        v_flat = cg(E._Kv, rhs, tol=inner_tol)
        w_flat = _solve_w(E, _stretch_offset_triple(E, v_flat), inner_tol)
        v_fld, w_fld = _package(E, v_flat, w_flat)
        value, bending, stretching = evaluate(E, v_fld, w_fld)
        # stationarity residual of the two linear solves
        gres = np.linalg.norm(E._Kv @ v_flat - rhs)
        return MinimizeResult(
            v=v_fld, w=w_fld, value=value, bending=bending,
            stretching=stretching, iterations=1, converged=True,
            grad_norm=float(gres), distinct_values=(value,),
        )

    rng = np.random.default_rng(opts["seed"])
    warm: dict[str, np.ndarray | None] = {"w": None}

    def value_grad(x: np.ndarray):
        value, g, w = _reduced_value_grad(E, x, opts["inner_tol_loose"], warm["w"])
        warm["w"] = w
        return value, g

    # deterministic second start: minimizer of the bending term alone
    # (quadratic), which is exact whenever the stretching misfit can be
    # absorbed by w and otherwise lands close to the narrow valley the
    # quartic coupling creates
    rhs_bend = -(E._H.T @ (E._Wq @ E._mb_triple))
    v_bend = cg(E._Kv, rhs_bend, tol=inner_tol)
    starts = [v_bend, _coerce_start(opts["v0"], E.grid)]
    for _ in range(int(opts["starts"])):
        starts.append(_random_smooth_start(E.grid, rng, opts["amplitude"]))

    best = None
    values_found: list[float] = []
    total_iters = 0
    for x0 in starts:
        warm["w"] = None
        x, f, g_norm, iters, ok = _lbfgs_minimize(
            value_grad, x0, opts["maxiter"], opts["gtol"],
            opts["lbfgs_memory"], opts["fatol"],
        )
        total_iters += iters
        values_found.append(f)
        if best is None or f < best[1]:
            best = (x, f, g_norm, ok)
        if best[1] <= opts["fatol"]:
            break  # the global minimum is certified (I >= 0); stop searching
    v_flat, _f, g_norm, ok = best
    w_flat = _solve_w(E, _stretch_offset_triple(E, v_flat), inner_tol)
    v_fld, w_fld = _package(E, v_flat, w_flat)
    value, bending, stretching = evaluate(E, v_fld, w_fld)
    distinct: list[float] = []
    for val in sorted(values_found):
        if not distinct or val - distinct[-1] > 1e-6 * max(1.0, abs(val)):
            distinct.append(val)
    return MinimizeResult(
        v=v_fld, w=w_fld, value=value, bending=bending, stretching=stretching,
        iterations=total_iters, converged=ok, grad_norm=g_norm,
        distinct_values=tuple(distinct),
    )


def _package(E: EnergyFunctional, v_flat: np.ndarray, w_flat: np.ndarray):
    g = E.grid
    v_vals = v_flat.reshape(g.nx, g.ny)
    w_quad = quad_weights(g, depth=1).ravel()
    v_vals = v_vals - float(
        (w_quad * v_flat).sum() / w_quad.sum()
    )
    w_norm = _normalize_rigid(w_flat, g)
    return (
        ScalarGridField(g, v_vals),
        VectorGridField2(g, w_norm.reshape(2, g.nx, g.ny)),
    )


# ------------------------------------------------- reduced bound functional


def minimize_plate_bound(S, B, grid: Grid2, options: dict | None = None,
                         v0: ScalarGridField | None = None) -> PlateBoundResult:
    """Direct minimization of

        J(v) = ||hess v + B_2x2||_L2^2 + ||det hess v + ctc S_2x2||_{H^-2}^2

    with the exact gradient (the H^-2 term is chained through the clamped
    plate solve).  Multi-start: the least-squares Hessian fit of -B_2x2,
    v0 (if given), zero, and one random start.
    """
    opts = dict(_DEFAULT_OPTIONS)
    if options:
        opts.update(options)
    b2 = _minor(B, grid)
    s2 = _minor(S, grid) if S is not None else _zero_sym(grid)
    sys_ = _systems(grid)
    H = sys_.H
    Wt = sys_.Wt
    free2 = sys_.free2
    A_bih = sys_.A_bih
    w_quad = sys_.w
    n = grid.nx * grid.ny
    b_triple = _triple(b2)
    ctc_s = curlTcurl(s2).values.ravel()
    p = plan_for(grid)
    # the clamped-plate system is SPD and fixed: factor once for the
    # optimization loop (the reported value is re-derived with the
    # reference CG solve below)
    lu = spla.splu(A_bih.tocsc())

    def value_grad(v_flat: np.ndarray):
        b = H @ v_flat + b_triple
        Wb = Wt @ b
        term1 = float(b @ Wb)
        m11, m12, m22 = b[:n] - b_triple[:n], b[n : 2 * n] - b_triple[n : 2 * n], b[2 * n :] - b_triple[2 * n :]
        q = (m11 * m22 - m12 * m12) + ctc_s
        rhs = (w_quad * q)[free2]
        z = lu.solve(rhs)
        term2 = float(z @ rhs)
        grad1 = 2.0 * (H.T @ Wb)
        zw = np.zeros(n)
        zw[free2] = z
        lam = 2.0 * w_quad * zw
        grad2 = (
            p.Dxx.T @ (lam * m22)
            + p.Dyy.T @ (lam * m11)
            - 2.0 * (p.Dxy.T @ (lam * m12))
        )
        return term1 + term2, grad1 + grad2

    # deterministic first start: least-squares Hessian fit of -B_2x2
    # (minimizer of the quadratic term alone); the det term only perturbs
    # it, so descent from here stays in the right valley
    K_fit = (H.T @ (Wt @ H)).tocsr()
    v_fit = cg(K_fit, -(H.T @ (Wt @ b_triple)), tol=opts["inner_tol"])

    starts: list[np.ndarray] = [v_fit]
    if v0 is not None:
        starts.append(v0.values.ravel().copy())
    starts.append(np.zeros(n))
    rng = np.random.default_rng(opts["seed"])
    starts.append(_random_smooth_start(grid, rng, opts["amplitude"]))

    best = None
    total_iters = 0
    for x0 in starts:
        x, f, g_norm, iters, ok = _lbfgs_minimize(
            value_grad, x0, opts["maxiter"], opts["gtol"],
            opts["lbfgs_memory"], opts["fatol"],
        )
        total_iters += iters
        if best is None or f < best[1]:
            best = (x, f, g_norm, ok)
        if best[1] <= opts["fatol"]:
            break  # J >= 0: the floor certifies the global minimum
    v_flat, value, g_norm, ok = best
    b = H @ v_flat + b_triple
    term1 = float(b @ (Wt @ b))
    m11, m12, m22 = b[:n] - b_triple[:n], b[n : 2 * n] - b_triple[n : 2 * n], b[2 * n :] - b_triple[2 * n :]
    q = (m11 * m22 - m12 * m12) + ctc_s
    rhs = (w_quad * q)[free2]
    z = cg(A_bih, rhs, tol=opts["inner_tol"])
    term2 = float(z @ rhs)
    v_vals = v_flat.reshape(grid.nx, grid.ny)
    v_vals = v_vals - v_vals.mean()
    return PlateBoundResult(
        v=ScalarGridField(grid, v_vals),
        value=term1 + term2,
        bending_misfit_sq=term1,
        det_misfit_sq=term2,
        iterations=total_iters,
        converged=ok,
    )
