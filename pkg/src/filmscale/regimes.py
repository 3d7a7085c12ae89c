"""Scaling-regime classification and optimality diagnostics.

A shallow prestrain is parametrized by two exponents: ``alpha`` scales the
midplane (stretching-type) part of the prestrain, ``gamma`` the
through-thickness linear (bending-type) part.  The admissible quadrant
splits into finitely many regimes.  In each supported regime the thin-film
energy, rescaled by h^(2+delta), converges to a plate functional

    I(v, w) = 1/24 * int Q2(bending term) + 1/2 * int Q2(stretching term)

whose integrands pick up case-dependent prestrain blocks; ``classify``
returns the case tag together with delta and the term-inclusion recipe.
Ranges where only upper scaling bounds (no limit functional) are available
are tagged scaling-only; everything else is unsupported.

``optimality_indicators`` evaluates the differential expressions whose
non-vanishing is equivalent to the scaling h^(2+delta) being attained with
a matching lower bound: curl-type (vector) indicators are measured in the
discrete H^-1 norm, determinant-type (scalar) indicators in H^-2.

``infbound_constructive`` builds an explicit certificate displacement and
evaluates the reduced bound functional on it, giving a computable upper
bound on the infimum with no unknown domain constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffops
from .decompose import h_minus1_norm, h_minus2_norm, project_out_hessian
from .diffops import curl2, curlTcurl, curl_vec, det2, grad, hessian, quad_weights, symgrad
from .fields import (
    Grid2,
    ScalarGridField,
    SymField3,
    SymGridField2,
    VectorGridField2,
)

__all__ = [
    "TermRecipe",
    "RegimeSpec",
    "OptimalityReport",
    "ConstructiveBound",
    "classify",
    "optimality_indicators",
    "infbound_constructive",
    "GAMMA_LIMIT_CASES",
]

#: Case tags carrying a full limiting plate functional.
GAMMA_LIMIT_CASES = (
    "T1.1-i",
    "T1.1-ii",
    "T1.1-iii",
    "T1.4-i",
    "T1.4-ii",
    "T1.4-iii",
)

#: Relative zero-threshold for "indicator does not vanish" decisions.
ZERO_THRESHOLD_REL = 1e-8


@dataclass(frozen=True)
class TermRecipe:
    """Which prestrain blocks enter the two plate integrands.

    Signs are fixed by the limit functionals: the bending integrand is
    hess(v) [+ B_2x2] [- 2 sym grad (S31, S32)], the stretching integrand is
    symgrad(w) [+ 1/2 grad(v) x grad(v)] [- S_2x2] [- 1/2 (S31,S32) x (S31,S32)].
    """

    bending_includes_B: bool = False
    bending_includes_symgrad_s: bool = False
    stretching_includes_S22: bool = False
    stretching_includes_halfgradv2: bool = False
    stretching_includes_half_s_sq: bool = False


@dataclass(frozen=True)
class RegimeSpec:
    """Outcome of the (alpha, gamma, prestrain pattern) classification."""

    theorem_case: str
    alpha: float
    gamma: float
    s22_zero: bool
    delta: float | None
    predicted_exponent: float | None
    recipe: TermRecipe = field(default_factory=TermRecipe)
    notes: tuple[str, ...] = ()

    @property
    def is_gamma_limit(self) -> bool:
        return self.theorem_case in GAMMA_LIMIT_CASES

    def to_dict(self) -> dict:
        d = {
            "case": self.theorem_case,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "s22_zero": self.s22_zero,
            "delta": self.delta,
            "predicted_exponent": self.predicted_exponent,
            "recipe": asdict(self.recipe),
        }
        if self.notes:
            d["notes"] = list(self.notes)
        return d


@dataclass
class OptimalityReport:
    """Indicator fields, their negative-norm magnitudes and the verdict."""

    theorem_case: str
    indicators: dict
    formulas: dict
    magnitudes: dict
    threshold: float
    verdict: str
    annotations: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "case": self.theorem_case,
            "formulas": dict(self.formulas),
            "magnitudes": {k: float(v) for k, v in self.magnitudes.items()},
            "threshold": float(self.threshold),
            "verdict": self.verdict,
            "annotations": list(self.annotations),
        }


@dataclass
class ConstructiveBound:
    """Computable upper bound on the reduced functional

        J(v) = ||hess v + B_2x2||_L2^2 + ||det hess v + ctc S_2x2||_{H^-2}^2

    evaluated at the certificate v (least-squares fit of -B_2x2 by a
    Hessian), together with the two incompatibility magnitudes that bound
    inf J from both sides up to domain constants.
    """

    value: float
    v: ScalarGridField
    bending_misfit_sq: float
    det_misfit_sq: float
    curl_b_hm1_sq: float
    det_residual_hm2_sq: float

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "bending_misfit_sq": float(self.bending_misfit_sq),
            "det_misfit_sq": float(self.det_misfit_sq),
            "curl_b_hm1_sq": float(self.curl_b_hm1_sq),
            "det_residual_hm2_sq": float(self.det_residual_hm2_sq),
        }


# ------------------------------------------------------------------ helpers


def _minor(F) -> SymGridField2:
    """Upper-left 2x2 block of a 3x3 field (2x2 fields pass through)."""
    if isinstance(F, SymGridField2):
        return F
    return F.minor2()


def _shear(F) -> VectorGridField2 | None:
    if isinstance(F, SymField3):
        return F.shear_row()
    return None


def _max_abs(F) -> float:
    if F is None:
        return 0.0
    comps = F.comps if hasattr(F, "comps") else F.values
    return float(np.abs(comps).max())


def _field_l2(F) -> float:
    """L2 norm of a (possibly 3x3 symmetric) field, off-diagonals doubled."""
    if F is None:
        return 0.0
    g = F.grid
    w = quad_weights(g, depth=1)
    if isinstance(F, SymField3):
        sq = sum(
            (2.0 if i != j else 1.0) * F.entry(i, j) ** 2
            for i in range(3)
            for j in range(i, 3)
        )
    else:
        sq = diffops.frob2(F)
    return float(np.sqrt(np.sum(w * sq)))


def _is_zero_field(F, scale: float) -> bool:
    return _max_abs(F) <= max(1e-12, 1e-12 * scale)


# ------------------------------------------------------------------ classify


def classify(alpha: float, gamma: float, S=None, B=None,
             s22_zero: bool = False) -> RegimeSpec:
    """Match (alpha, gamma, prestrain pattern) to its scaling regime.

    ``s22_zero`` asserts that the in-plane midplane block of S vanishes
    identically; when S is supplied the assertion is verified (max-norm
    1e-12) and an inconsistent flag raises ValueError.  Boundary equalities
    (gamma = 2, alpha = 4, gamma = alpha - 2, alpha = gamma, ...) are honored
    exactly as closed or strict per the case tables.
    """
    alpha = float(alpha)
    gamma = float(gamma)
    if not (alpha > 0.0 and gamma > 0.0):
        raise ValueError("classify: require alpha > 0 and gamma > 0")
    if s22_zero and S is not None:
        m = _max_abs(_minor(S))
        if m > 1e-12:
            raise ValueError(
                f"classify: s22_zero asserted but max |S_2x2| = {m:.3e} > 1e-12"
            )

    if s22_zero and alpha >= 2.0 and gamma >= 2.0:
        return _classify_shear_only(alpha, gamma)
    if alpha >= 4.0 and gamma >= 2.0:
        return _classify_general(alpha, gamma, s22_zero)
    if 0.0 < alpha < 4.0:
        return _classify_scaling_only(alpha, gamma, B, s22_zero)
    return RegimeSpec(
        theorem_case="unsupported",
        alpha=alpha,
        gamma=gamma,
        s22_zero=s22_zero,
        delta=None,
        predicted_exponent=None,
        notes=(
            "no supported regime: alpha >= 4 requires gamma >= 2 for a limit "
            "functional, and the scaling-only range needs alpha < 4",
        ),
    )


def _classify_general(alpha: float, gamma: float, s22_zero: bool) -> RegimeSpec:
    """alpha >= 4, gamma >= 2, general in-plane prestrain."""
    if gamma == 2.0:
        recipe = TermRecipe(
            bending_includes_B=True,
            stretching_includes_halfgradv2=True,
            stretching_includes_S22=(alpha == 4.0),
        )
        return RegimeSpec("T1.1-i", alpha, gamma, s22_zero, 2.0, 4.0, recipe)
    if gamma <= alpha - 2.0:
        recipe = TermRecipe(
            bending_includes_B=True,
            stretching_includes_S22=(gamma == alpha - 2.0),
        )
        return RegimeSpec("T1.1-ii", alpha, gamma, s22_zero, gamma, 2.0 + gamma, recipe)
    recipe = TermRecipe(
        stretching_includes_S22=True,
        stretching_includes_halfgradv2=(alpha == 4.0),
    )
    return RegimeSpec("T1.1-iii", alpha, gamma, s22_zero, alpha - 2.0, alpha, recipe)


def _classify_shear_only(alpha: float, gamma: float) -> RegimeSpec:
    """S_2x2 = 0, alpha >= 2, gamma >= 2: shear/normal prestrain only."""
    if alpha == 2.0:
        recipe = TermRecipe(
            bending_includes_symgrad_s=True,
            bending_includes_B=(gamma == 2.0),
            stretching_includes_halfgradv2=True,
            stretching_includes_half_s_sq=True,
        )
        return RegimeSpec("T1.4-i", alpha, gamma, True, 2.0, 4.0, recipe)
    if gamma == 2.0:
        recipe = TermRecipe(
            bending_includes_B=True,
            stretching_includes_halfgradv2=True,
        )
        return RegimeSpec("T1.4-ii", alpha, gamma, True, 2.0, 4.0, recipe)
    delta = min(alpha, gamma)
    recipe = TermRecipe(
        bending_includes_symgrad_s=(alpha <= gamma),
        bending_includes_B=(gamma <= alpha),
    )
    return RegimeSpec("T1.4-iii", alpha, gamma, True, delta, 2.0 + delta, recipe)


def _classify_scaling_only(alpha: float, gamma: float, B,
                           s22_zero: bool) -> RegimeSpec:
    """0 < alpha < 4: upper scaling bounds only, no limit functional.

    The bounds rest on rough (convex-integration) in-plane constructions;
    the reported exponent is an upper-bound exponent, not a two-sided law.
    """
    notes = [
        "scaling-only regime: upper bound on the energy exponent, no limit "
        "functional and no optimality verdict",
    ]
    b_zero = B is not None and _is_zero_field(B, 1.0)
    smooth_cap = 5.0 * alpha / 6.0 + 2.0 / 3.0
    if alpha < 4.0 / 7.0:
        exponent = 2.0 * alpha
        notes.append("rough-construction bound 2*alpha (alpha < 4/7)")
    elif b_zero:
        exponent = smooth_cap
        notes.append(
            "B = 0: bound 5*alpha/6 + 2/3 holds without the bending cap "
            "(open-ended: any exponent strictly below it)"
        )
    elif smooth_cap > 2.0 + gamma:
        exponent = 2.0 + gamma
        notes.append("bending-capped bound 2 + gamma")
    else:
        exponent = smooth_cap
        notes.append(
            "bound 5*alpha/6 + 2/3 (open-ended: any exponent strictly below it)"
        )
    return RegimeSpec(
        theorem_case="T1.2-scaling-only",
        alpha=alpha,
        gamma=gamma,
        s22_zero=s22_zero,
        delta=exponent - 2.0,
        predicted_exponent=exponent,
        notes=tuple(notes),
    )


# ------------------------------------------------------- optimality verdicts


def _jacobian_det(s: VectorGridField2) -> ScalarGridField:
    """det of the (non-symmetric) Jacobian of an in-plane vector field."""
    g1 = grad(ScalarGridField(s.grid, s.values[0]))
    g2 = grad(ScalarGridField(s.grid, s.values[1]))
    vals = g1.values[0] * g2.values[1] - g2.values[0] * g1.values[1]
    return ScalarGridField(s.grid, vals)


def _grad_curl(s: VectorGridField2) -> VectorGridField2:
    return grad(curl_vec(s))


def _sub_vec(a: VectorGridField2, b: VectorGridField2) -> VectorGridField2:
    return VectorGridField2(a.grid, a.values - b.values)


def _sub_sym(a: SymGridField2, b: SymGridField2) -> SymGridField2:
    return SymGridField2(a.grid, a.comps - b.comps)


def _outer(s: VectorGridField2) -> SymGridField2:
    return SymGridField2(
        s.grid,
        np.stack([
            s.values[0] * s.values[0],
            s.values[0] * s.values[1],
            s.values[1] * s.values[1],
        ]),
    )


def optimality_indicators(S, B, spec: RegimeSpec) -> OptimalityReport:
    """Evaluate the case's sharp-scaling indicators and issue the verdict.

    ``optimal`` means the two-sided law c h^(2+delta) <= inf <= C h^(2+delta)
    holds with c > 0; ``suboptimal`` means every indicator vanishes and the
    true decay is strictly faster than the regime exponent.
    """
    if not spec.is_gamma_limit:
        raise ValueError(
            f"optimality_indicators: case {spec.theorem_case!r} carries no "
            "two-sided scaling criterion"
        )
    b2 = _minor(B)
    s2 = _minor(S)
    grid = b2.grid
    srow = _shear(S)
    if srow is None:
        srow = VectorGridField2(grid, np.zeros((2, grid.nx, grid.ny)))

    indicators: dict = {}
    formulas: dict = {}
    magnitudes: dict = {}
    annotations: list[str] = []
    case = spec.theorem_case
    alpha, gamma = spec.alpha, spec.gamma

    def vec_ind(name: str, formula: str, fld: VectorGridField2) -> None:
        indicators[name] = fld
        formulas[name] = formula
        magnitudes[name] = h_minus1_norm(fld)

    def scal_ind(name: str, formula: str, fld: ScalarGridField) -> None:
        indicators[name] = fld
        formulas[name] = formula
        magnitudes[name] = h_minus2_norm(fld)

    if case == "T1.1-i":
        vec_ind("bending_incompatibility", "curl(B_2x2)", curl2(b2))
        det_b = det2(b2)
        if alpha == 4.0:
            fld = ScalarGridField(grid, det_b.values + curlTcurl(s2).values)
            scal_ind("stretching_incompatibility",
                     "det(B_2x2) + curl_t_curl(S_2x2)", fld)
        else:
            scal_ind("stretching_incompatibility", "det(B_2x2)", det_b)
        annotations.append(
            "conjectured (not asserted) next viable scaling exponent: 6"
        )
    elif case == "T1.1-ii":
        vec_ind("bending_incompatibility", "curl(B_2x2)", curl2(b2))
        if gamma == alpha - 2.0:
            scal_ind("stretching_incompatibility", "curl_t_curl(S_2x2)",
                     curlTcurl(s2))
            nxt = min(4.0 + gamma, 2.0 * gamma)
        else:
            nxt = min(4.0 + gamma, 2.0 * gamma, alpha)
        annotations.append(
            f"conjectured (not asserted) next viable scaling exponent: {nxt:g}"
        )
    elif case == "T1.1-iii":
        scal_ind("stretching_incompatibility", "curl_t_curl(S_2x2)",
                 curlTcurl(s2))
        nxt = min(2.0 + gamma, 2.0 + alpha)
        annotations.append(
            f"conjectured (not asserted) next viable scaling exponent: {nxt:g}"
        )
    elif case == "T1.4-i":
        if gamma > 2.0:
            vec_ind("bending_incompatibility", "grad(curl(s))", _grad_curl(srow))
            scal_ind("stretching_incompatibility", "det(jacobian(s))",
                     _jacobian_det(srow))
        else:
            vec_ind(
                "bending_incompatibility",
                "curl(B_2x2) - grad(curl(s))",
                _sub_vec(curl2(b2), _grad_curl(srow)),
            )
            eff = _sub_sym(b2, _scale_sym(symgrad(srow), 2.0))
            fld = ScalarGridField(
                grid,
                det2(eff).values + 0.5 * curlTcurl(_outer(srow)).values,
            )
            scal_ind(
                "stretching_incompatibility",
                "det(B_2x2 - 2 sym_grad(s)) + 1/2 curl_t_curl(outer(s, s))",
                fld,
            )
        annotations.append(
            "next viable scaling guided by the higher-order curvature "
            "components (no proved exponent)"
        )
    elif case == "T1.4-ii":
        vec_ind("bending_incompatibility", "curl(B_2x2)", curl2(b2))
        scal_ind("stretching_incompatibility", "det(B_2x2)", det2(b2))
        annotations.append(
            "next viable scaling guided by the higher-order curvature "
            "components (no proved exponent)"
        )
    elif case == "T1.4-iii":
        if gamma < alpha:
            vec_ind("bending_incompatibility", "curl(B_2x2)", curl2(b2))
        elif gamma > alpha:
            vec_ind("bending_incompatibility", "grad(curl(s))", _grad_curl(srow))
        else:
            vec_ind(
                "bending_incompatibility",
                "curl(B_2x2) - grad(curl(s))",
                _sub_vec(curl2(b2), _grad_curl(srow)),
            )
        annotations.append(
            "next viable scaling guided by the higher-order curvature "
            "components (no proved exponent)"
        )
    else:  # pragma: no cover - guarded above
        raise AssertionError(case)

    scale = _field_l2(B) + _field_l2(S)
    threshold = ZERO_THRESHOLD_REL * scale
    verdict = "optimal" if any(m > threshold for m in magnitudes.values()) else "suboptimal"
    return OptimalityReport(
        theorem_case=case,
        indicators=indicators,
        formulas=formulas,
        magnitudes=magnitudes,
        threshold=threshold,
        verdict=verdict,
        annotations=tuple(annotations),
    )


def _scale_sym(F: SymGridField2, c: float) -> SymGridField2:
    return SymGridField2(F.grid, c * F.comps)


def theorem16i_scalar(B, S) -> ScalarGridField:
    """Equivalent single-scalar form of the alpha = gamma = 2 stretching
    indicator:

        3 det(jacobian(s)) - <grad(curl s), perp(s)> - 2 <cof(B_2x2) : jacobian(s)>
        + det(B_2x2),

    with perp(s) = (-s2, s1).  Used as a dual-route check against the primary
    determinant form.
    """
    b2 = _minor(B)
    srow = _shear(S)
    grid = b2.grid
    if srow is None:
        srow = VectorGridField2(grid, np.zeros((2, grid.nx, grid.ny)))
    gc = _grad_curl(srow)
    term1 = 3.0 * _jacobian_det(srow).values
    term2 = gc.values[0] * (-srow.values[1]) + gc.values[1] * srow.values[0]
    g1 = grad(ScalarGridField(grid, srow.values[0]))
    g2 = grad(ScalarGridField(grid, srow.values[1]))
    # cof(B) : jacobian(s) = B22 s1,1 - B12 (s1,2 + s2,1) + B11 s2,2
    b11, b12, b22 = b2.comps
    term3 = b22 * g1.values[0] - b12 * (g1.values[1] + g2.values[0]) + b11 * g2.values[1]
    term4 = det2(b2).values
    return ScalarGridField(grid, term1 - term2 - 2.0 * term3 + term4)


# ------------------------------------------------------- constructive bound


def infbound_constructive(S, B, material=None) -> ConstructiveBound:
    """Certificate upper bound on the reduced plate bound functional.

    Builds v* as the least-squares Hessian fit of -B_2x2, then evaluates

        J(v*) = ||hess v* + B_2x2||_L2^2 + ||det hess v* + ctc S_2x2||_{H^-2}^2.

    J(v*) >= inf J makes the value a rigorous upper bound; the returned
    incompatibility magnitudes ||curl B_2x2||_{H^-1}^2 and
    ||det B_2x2 + ctc S_2x2||_{H^-2}^2 bound inf J from both sides up to
    domain constants.  ``material`` is accepted for signature uniformity
    with the energy assemblers; the bound functional carries no moduli.
    """
    del material
    b2 = _minor(B)
    s2 = _minor(S) if S is not None else None
    grid = b2.grid
    neg_b = SymGridField2(grid, -b2.comps)
    split = project_out_hessian(neg_b)
    v = split.v
    bending_misfit_sq = split.distance ** 2
    det_v = det2(hessian(v))
    ctc_s = (
        curlTcurl(s2)
        if s2 is not None
        else ScalarGridField(grid, np.zeros((grid.nx, grid.ny)))
    )
    det_mis = ScalarGridField(grid, det_v.values + ctc_s.values)
    det_misfit_sq = h_minus2_norm(det_mis) ** 2
    curl_b_sq = h_minus1_norm(curl2(b2)) ** 2
    det_resid = ScalarGridField(grid, det2(b2).values + ctc_s.values)
    det_resid_sq = h_minus2_norm(det_resid) ** 2
    return ConstructiveBound(
        value=bending_misfit_sq + det_misfit_sq,
        v=v,
        bending_misfit_sq=bending_misfit_sq,
        det_misfit_sq=det_misfit_sq,
        curl_b_hm1_sq=curl_b_sq,
        det_residual_hm2_sq=det_resid_sq,
    )
