"""Riemann curvature of the prestrain metric, with leading-order fits.

The three-dimensional metric induced by the prestrain factor is

    G(x', x3) = I + 2*ta*S + ta^2*S^2
                + x3*(2*tg*B + 2*ta*tg*sym(S@B)) + x3^2*tg^2*B^2,

with ta = h^(alpha/2), tg = h^(gamma/2) and S, B symmetric 3x3 fields of
the in-plane variables.  Everything here is evaluated pointwise and
exactly: in-plane derivatives come from second-order automatic jets of the
entry expressions, the x3 dependence is polynomial and differentiated
analytically, and the inverse-metric derivative uses
d(G^-1) = -G^-1 (dG) G^-1.  No nested numerical differentiation occurs, so
curvature components can be resolved far below the size of the metric's
deviation from the identity.

Each lowered component R_{ab,cd} admits an expansion in the powers
h^(i*alpha/2 + j*gamma/2).  ``curvature_model`` tabulates the closed-form
leading terms of the six independent components (the stretching-related
R_{12,12}, the bending-related R_{12,13}, R_{12,23}, and the three
transverse components), with a refined R_{12,12} table when the in-plane
block of S vanishes identically.  ``leading_fit`` measures the exponent and
coefficient of a component over a geometric h-sweep and reports them next
to the tabulated prediction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fields import FieldExpr, eval_jet, eval_values, parse

__all__ = [
    "MetricJet",
    "RiemannTensor",
    "LeadingFit",
    "DEFAULT_H_SWEEP",
    "WORKED_EXAMPLES",
    "metric_jet",
    "christoffel",
    "riemann",
    "riemann_of_jet",
    "curvature_model",
    "leading_fit",
]


# ------------------------------------------------------------ input parsing

_SYM3_ORDER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def _as_entry(e) -> FieldExpr:
    if isinstance(e, FieldExpr):
        return e
    if isinstance(e, str):
        return parse(e)
    return parse(f"{float(e)!r}")


def _entries33(M) -> list[list[FieldExpr]]:
    """Normalize a symmetric 3x3 expression matrix.

    Accepts None (zero), a 6-sequence in the order
    (11, 12, 13, 22, 23, 33), or a 3x3 nested sequence (upper triangle
    used).  Entries may be expression strings, parsed expressions, or
    numbers.
    """
    zero = parse("0")
    out = [[zero] * 3 for _ in range(3)]
    if M is None:
        return out
    seq = list(M)
    if len(seq) == 6 and not any(
        isinstance(r, (list, tuple)) and len(r) == 3 for r in seq
    ):
        for (i, j), e in zip(_SYM3_ORDER, seq):
            out[i][j] = out[j][i] = _as_entry(e)
        return out
    if len(seq) == 3 and all(len(r) == 3 for r in seq):
        for i in range(3):
            for j in range(i, 3):
                out[i][j] = out[j][i] = _as_entry(seq[i][j])
        return out
    raise ValueError(
        "symmetric matrix must be None, 6 entries (11,12,13,22,23,33), or 3x3"
    )


def _norm_point(point) -> tuple[float, float, float]:
    p = list(point)
    if len(p) == 2:  # ((x1, x2), x3)
        xp, x3 = p
        x1, x2 = xp
        return float(x1), float(x2), float(x3)
    if len(p) == 3:
        return float(p[0]), float(p[1]), float(p[2])
    raise ValueError("point must be (x1, x2, x3) or ((x1, x2), x3)")


def _norm_component(component) -> tuple[tuple[int, int], tuple[int, int]]:
    c = list(component)
    if len(c) == 4:
        c = [(c[0], c[1]), (c[2], c[3])]
    (a, b), (cc, d) = c
    for k in (a, b, cc, d):
        if k not in (1, 2, 3):
            raise ValueError("component indices must be in {1,2,3}")
    return (int(a), int(b)), (int(cc), int(d))


# --------------------------------------------------- matrix jets (in-plane)


class _MJet:
    """3x3 matrix with exact in-plane derivatives.

    v: (3,3) value; d: (2,3,3) with d[a] the x_a-derivative; dd: (2,2,3,3).
    """

    __slots__ = ("v", "d", "dd")

    def __init__(self, v, d, dd):
        self.v, self.d, self.dd = v, d, dd

    @staticmethod
    def identity():
        return _MJet(np.eye(3), np.zeros((2, 3, 3)), np.zeros((2, 2, 3, 3)))

    @staticmethod
    def from_entries(entries: list[list[FieldExpr]], x1: float, x2: float):
        v = np.zeros((3, 3))
        d = np.zeros((2, 3, 3))
        dd = np.zeros((2, 2, 3, 3))
        for i in range(3):
            for j in range(i, 3):
                jet = eval_jet(entries[i][j], x1, x2, order=2)
                v[i, j] = v[j, i] = float(jet.value)
                for a in range(2):
                    d[a, i, j] = d[a, j, i] = float(jet.grad[a])
                    for b in range(2):
                        dd[a, b, i, j] = dd[a, b, j, i] = float(jet.hess[a, b])
        return _MJet(v, d, dd)

    def __add__(self, other):
        return _MJet(self.v + other.v, self.d + other.d, self.dd + other.dd)

    def scaled(self, c: float):
        return _MJet(c * self.v, c * self.d, c * self.dd)

    def __matmul__(self, other):
        v = self.v @ other.v
        d = np.einsum("aij,jk->aik", self.d, other.v) + np.einsum(
            "ij,ajk->aik", self.v, other.d
        )
        dd = (
            np.einsum("abij,jk->abik", self.dd, other.v)
            + np.einsum("aij,bjk->abik", self.d, other.d)
            + np.einsum("bij,ajk->abik", self.d, other.d)
            + np.einsum("ij,abjk->abik", self.v, other.dd)
        )
        return _MJet(v, d, dd)

    def sym(self):
        t = lambda m: np.swapaxes(m, -1, -2)
        return _MJet(
            0.5 * (self.v + t(self.v)),
            0.5 * (self.d + t(self.d)),
            0.5 * (self.dd + t(self.dd)),
        )


# ------------------------------------------------------------- domain types


@dataclass(frozen=True)
class MetricJet:
    """Metric and its derivatives at one point (x1, x2, x3).

    G: (3,3) symmetric positive definite; dG: (3,3,3) with dG[a] the
    derivative in x_{a+1}; d2G: (3,3,3,3) with d2G[a,b] symmetric in (a,b).
    """

    G: np.ndarray
    dG: np.ndarray
    d2G: np.ndarray
    point: tuple[float, float, float]


@dataclass(frozen=True)
class RiemannTensor:
    """Lowered curvature components R_{ab,cd}, 0-indexed in ``components``."""

    components: np.ndarray
    point: tuple[float, float, float]

    def component(self, ab, cd=None) -> float:
        if cd is None:
            (a, b), (c, d) = _norm_component(ab)
        else:
            (a, b), (c, d) = _norm_component((tuple(ab), tuple(cd)))
        return float(self.components[a - 1, b - 1, c - 1, d - 1])

    def symmetry_defects(self) -> dict[str, float]:
        """Max violation of each tensor symmetry, relative to max |R|."""
        R = self.components
        scale = max(float(np.max(np.abs(R))), 1e-300)
        bianchi = (
            R
            + np.einsum("acdb->abcd", R)
            + np.einsum("adbc->abcd", R)
        )
        return {
            "antisym_first_pair": float(
                np.max(np.abs(R + np.swapaxes(R, 0, 1))) / scale
            ),
            "antisym_second_pair": float(
                np.max(np.abs(R + np.swapaxes(R, 2, 3))) / scale
            ),
            "pair_symmetry": float(
                np.max(np.abs(R - R.transpose(2, 3, 0, 1))) / scale
            ),
            "first_bianchi": float(np.max(np.abs(bianchi)) / scale),
        }


# ------------------------------------------------------------------- metric


def metric_jet(S, B, alpha: float, gamma: float, h: float, point) -> MetricJet:
    """Exact metric jet G, dG, d2G of the prestrain metric at one point.

    S, B are symmetric 3x3 expression matrices in (x1, x2) — see
    ``_entries33`` for accepted forms.  Raises ValueError when the metric
    is not positive definite at the given h.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if alpha <= 0 or gamma <= 0:
        raise ValueError("alpha and gamma must be positive")
    x1, x2, x3 = _norm_point(point)
    ta = h ** (alpha / 2.0)
    tg = h ** (gamma / 2.0)
    Sj = _MJet.from_entries(_entries33(S), x1, x2)
    Bj = _MJet.from_entries(_entries33(B), x1, x2)
    # coefficients of the x3-polynomial G = M0 + x3*M1 + x3^2*M2
    M0 = _MJet.identity() + Sj.scaled(2 * ta) + (Sj @ Sj).scaled(ta * ta)
    M1 = Bj.scaled(2 * tg) + (Sj @ Bj).sym().scaled(2 * ta * tg)
    M2 = (Bj @ Bj).scaled(tg * tg)

    G = M0.v + x3 * M1.v + x3 * x3 * M2.v
    dG = np.zeros((3, 3, 3))
    d2G = np.zeros((3, 3, 3, 3))
    dG[:2] = M0.d + x3 * M1.d + x3 * x3 * M2.d
    dG[2] = M1.v + 2 * x3 * M2.v
    d2G[:2, :2] = M0.dd + x3 * M1.dd + x3 * x3 * M2.dd
    for a in range(2):
        d2G[a, 2] = d2G[2, a] = M1.d[a] + 2 * x3 * M2.d[a]
    d2G[2, 2] = 2 * M2.v

    evs = np.linalg.eigvalsh(G)
    # the metric factors as A^T A, so it is always positive semidefinite;
    # losing definiteness means A became singular (h not small enough)
    if evs[0] <= 1e-12 * evs[-1]:
        raise ValueError(
            f"metric not positive definite at h={h}: min eigenvalue {evs[0]:.3e}"
        )
    return MetricJet(G=G, dG=dG, d2G=d2G, point=(x1, x2, x3))


# --------------------------------------------------------------- christoffel


def _christoffel_derivs(jet: MetricJet):
    """Gam[a,b,c] = Gamma^b_{ac} and dGam[d,a,b,c] = d_d Gamma^b_{ac}."""
    G, dG, d2G = jet.G, jet.dG, jet.d2G
    Ginv = np.linalg.inv(G)
    # T[a,m,c] = d_a G_{mc} + d_c G_{ma} - d_m G_{ac}
    T = dG + np.einsum("cma->amc", dG) - np.einsum("mac->amc", dG)
    Gam = 0.5 * np.einsum("bm,amc->abc", Ginv, T)
    dT = (
        d2G
        + np.einsum("dcma->damc", d2G)
        - np.einsum("dmac->damc", d2G)
    )
    dGinv = -np.einsum("bm,dmn,nk->dbk", Ginv, dG, Ginv)
    dGam = 0.5 * (
        np.einsum("dbm,amc->dabc", dGinv, T)
        + np.einsum("bm,damc->dabc", Ginv, dT)
    )
    return Gam, dGam


def christoffel(jet: MetricJet) -> np.ndarray:
    """Christoffel symbols as three matrices: result[a][b, c] = Gamma^b_{ac}."""
    Gam, _ = _christoffel_derivs(jet)
    return Gam


# ------------------------------------------------------------------ riemann


def riemann_of_jet(jet: MetricJet) -> RiemannTensor:
    """Lowered curvature tensor of an arbitrary metric jet.

    R^b_{a,cd} = (d_c Gamma_d - d_d Gamma_c + Gamma_c Gamma_d
                  - Gamma_d Gamma_c)[b, a], then R_{ab,cd} lowers the first
    index with the metric.
    """
    Gam, dGam = _christoffel_derivs(jet)
    R = np.zeros((3, 3, 3, 3))
    for c in range(3):
        for d in range(3):
            if c == d:
                continue
            M = (
                dGam[c, d]
                - dGam[d, c]
                + Gam[c] @ Gam[d]
                - Gam[d] @ Gam[c]
            )  # M[b, a] = R^b_{a,cd}
            R[:, :, c, d] = jet.G @ M
    return RiemannTensor(components=R, point=jet.point)


def riemann(S, B, alpha: float, gamma: float, h: float, point) -> RiemannTensor:
    """Curvature of the prestrain metric at one point."""
    return riemann_of_jet(metric_jet(S, B, alpha, gamma, h, point))


# ----------------------------------------------------------- leading terms


def _s2x2_is_zero(entries: list[list[FieldExpr]]) -> bool:
    """True when the in-plane 2x2 block vanishes on the unit square."""
    xs = np.linspace(0.0, 1.0, 5)
    X1, X2 = np.meshgrid(xs, xs, indexing="ij")
    for i, j in ((0, 0), (0, 1), (1, 1)):
        if float(np.max(np.abs(eval_values(entries[i][j], X1, X2)))) > 1e-12:
            return False
    return True


def curvature_model(S, B, alpha: float, gamma: float, point) -> dict:
    """Closed-form leading terms of the six curvature components.

    Returns {component: ((exponent, coefficient, label), ...)} with the
    coefficients evaluated at the in-plane point (mid-plane, x3 = 0).  The
    stretching component R_{12,12} uses the refined table when the in-plane
    block of S vanishes identically; all terms of equal exponent are to be
    summed by the caller.
    """
    x1, x2, _ = _norm_point(point)
    Se = _entries33(S)
    Be = _entries33(B)
    J = {}
    for i in range(3):
        for j in range(i, 3):
            J[("S", i, j)] = eval_jet(Se[i][j], x1, x2, order=2)
            J[("B", i, j)] = eval_jet(Be[i][j], x1, x2, order=2)

    def val(which, i, j):
        i, j = min(i, j), max(i, j)
        return float(J[(which, i, j)].value)

    def d1(which, i, j, a):
        i, j = min(i, j), max(i, j)
        return float(J[(which, i, j)].grad[a])

    def d2(which, i, j, a, b):
        i, j = min(i, j), max(i, j)
        return float(J[(which, i, j)].hess[a, b])

    ha, hg = alpha / 2.0, gamma / 2.0
    det_b = val("B", 0, 0) * val("B", 1, 1) - val("B", 0, 1) ** 2
    curl_b = (
        d1("B", 0, 1, 0) - d1("B", 0, 0, 1),
        d1("B", 1, 1, 0) - d1("B", 0, 1, 1),
    )
    # s = (S13, S23); curl s = d1 s2 - d2 s1 and its gradient
    dcurl_s = (
        d2("S", 1, 2, 0, 0) - d2("S", 0, 2, 1, 0),
        d2("S", 1, 2, 0, 1) - d2("S", 0, 2, 1, 1),
    )

    model = {
        ((1, 2), (1, 3)): (
            (ha, -dcurl_s[0], "-d1 curl(S13,S23)"),
            (hg, curl_b[0], "(curl B2x2)_1"),
        ),
        ((1, 2), (2, 3)): (
            (ha, -dcurl_s[1], "-d2 curl(S13,S23)"),
            (hg, curl_b[1], "(curl B2x2)_2"),
        ),
        ((1, 3), (1, 3)): (
            (ha, -d2("S", 2, 2, 0, 0), "-d11 S33"),
            (hg, 2 * d1("B", 0, 2, 0), "2 d1 B13"),
        ),
        ((1, 3), (2, 3)): (
            (ha, -d2("S", 2, 2, 0, 1), "-d12 S33"),
            (hg, d1("B", 1, 2, 0) + d1("B", 0, 2, 1), "d1 B23 + d2 B13"),
        ),
        ((2, 3), (2, 3)): (
            (ha, -d2("S", 2, 2, 1, 1), "-d22 S33"),
            (hg, 2 * d1("B", 1, 2, 1), "2 d2 B23"),
        ),
    }
    if _s2x2_is_zero(Se):
        s1, s2 = val("S", 0, 2), val("S", 1, 2)
        g11, g12 = d1("S", 0, 2, 0), d1("S", 0, 2, 1)  # grad s1
        g21, g22 = d1("S", 1, 2, 0), d1("S", 1, 2, 1)  # grad s2
        det_grad_s = g11 * g22 - g12 * g21
        # <grad curl s, s_perp> with s_perp = (-s2, s1)
        cross = s1 * dcurl_s[1] - s2 * dcurl_s[0]
        b_cof = (
            val("B", 0, 0) * g22
            - val("B", 0, 1) * g21
            - val("B", 0, 1) * g12
            + val("B", 1, 1) * g11
        )
        model[((1, 2), (1, 2))] = (
            (
                float(alpha),
                -3 * det_grad_s + cross,
                "-3 det grad(s) + <grad curl s, s_perp>",
            ),
            (float(gamma), -det_b, "-det B2x2"),
            ((alpha + gamma) / 2.0, 2 * b_cof, "2 <B2x2 : cof grad s>"),
        )
    else:
        ctc_s = (
            d2("S", 1, 1, 0, 0)
            - 2 * d2("S", 0, 1, 0, 1)
            + d2("S", 0, 0, 1, 1)
        )
        model[((1, 2), (1, 2))] = (
            (ha, -ctc_s, "-curlTcurl S2x2"),
            (float(gamma), -det_b, "-det B2x2"),
        )
    return model


# ------------------------------------------------------------- leading fit

DEFAULT_H_SWEEP = tuple(np.geomspace(1e-1, 10.0 ** -3.5, 8))


@dataclass(frozen=True)
class LeadingFit:
    """Measured leading order of one curvature component over an h-sweep.

    ``exponent`` is the log-log least-squares slope; ``coefficient`` the
    Richardson-extrapolated value of R/h^predicted_exponent.  When the
    component is numerically zero across the sweep, ``vanishing`` is True
    and both fitted numbers are None.
    """

    component: tuple[tuple[int, int], tuple[int, int]]
    point: tuple[float, float, float]
    vanishing: bool
    exponent: float | None
    coefficient: float | None
    predicted_exponent: float | None
    predicted_coefficient: float | None
    terms: tuple[tuple[float, float, str], ...]
    h_values: tuple[float, ...]
    values: tuple[float, ...]
    model_values: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "component": [list(self.component[0]), list(self.component[1])],
            "point": list(self.point),
            "vanishing": self.vanishing,
            "exponent": self.exponent,
            "coefficient": self.coefficient,
            "predicted_exponent": self.predicted_exponent,
            "predicted_coefficient": self.predicted_coefficient,
            "terms": [[p, c, lab] for p, c, lab in self.terms],
            "h_values": list(self.h_values),
            "values": list(self.values),
            "model_values": list(self.model_values),
        }

    def save_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["h", "value", "model", "residual"])
            for h, v, m in zip(self.h_values, self.values, self.model_values):
                w.writerow([repr(h), repr(v), repr(m), repr(v - m)])


def _merged_terms(terms):
    """Sum coefficients of (numerically) equal exponents, sorted ascending."""
    out: list[list] = []
    for p, c, lab in sorted(terms, key=lambda t: t[0]):
        if out and abs(out[-1][0] - p) <= 1e-9:
            out[-1][1] += c
            out[-1][2] += " + " + lab
        else:
            out.append([p, c, lab])
    return [(p, c, lab) for p, c, lab in out]


def leading_fit(S, B, alpha: float, gamma: float, component, point,
                h_sweep=None) -> LeadingFit:
    """Fit the leading order of one curvature component over an h-sweep.

    The sweep must be geometric-like with at least 6 positive values (the
    default spans 1e-1 .. 10^-3.5; below ~1e-4 subleading terms drown in
    double-precision cancellation for order-one coefficients).
    """
    comp = _norm_component(component)
    (a, b), (c, d) = comp
    hs = np.asarray(DEFAULT_H_SWEEP if h_sweep is None else h_sweep, dtype=float)
    if hs.size < 6:
        raise ValueError("h_sweep needs at least 6 values")
    if np.any(hs <= 0):
        raise ValueError("h_sweep values must be positive")
    vals = np.array(
        [
            riemann(S, B, alpha, gamma, float(h), point).components[
                a - 1, b - 1, c - 1, d - 1
            ]
            for h in hs
        ]
    )
    terms = _merged_terms(curvature_model(S, B, alpha, gamma, point)[comp])
    coef_scale = max([abs(t[1]) for t in terms], default=0.0)
    active = [t for t in terms if abs(t[1]) > 1e-12 * max(coef_scale, 1.0)]
    p_pred = active[0][0] if active else None
    c_pred = active[0][1] if active else None
    model_vals = np.zeros_like(hs)
    for p, cc, _ in terms:
        model_vals += cc * hs ** p

    base = LeadingFit(
        component=comp,
        point=_norm_point(point),
        vanishing=False,
        exponent=None,
        coefficient=None,
        predicted_exponent=p_pred,
        predicted_coefficient=c_pred,
        terms=tuple(terms),
        h_values=tuple(float(h) for h in hs),
        values=tuple(float(v) for v in vals),
        model_values=tuple(float(m) for m in model_vals),
    )
    if float(np.max(np.abs(vals))) <= 1e-11 * (1.0 + coef_scale):
        return _replace(base, vanishing=True)

    mask = np.abs(vals) > 0
    slope = float(
        np.polyfit(np.log(hs[mask]), np.log(np.abs(vals[mask])), 1)[0]
    )
    coefficient = None
    if p_pred is not None:
        # Richardson in the correction powers of the expansion lattice
        # {i*alpha/2 + j*gamma/2}: subleading exponents are lattice points
        # above p_pred, so gaps can be as small as |alpha - gamma|/2
        q1, q2 = alpha / 2.0, gamma / 2.0
        lattice = sorted(
            {i * q1 + j * q2 for i in range(6) for j in range(6) if i + j >= 1}
        )
        gaps = [e - p_pred for e in lattice if e - p_pred > 1e-9]
        gaps = [g for i, g in enumerate(gaps) if i == 0 or g - gaps[i - 1] > 1e-9][:4]
        X = np.column_stack([np.ones_like(hs)] + [hs ** g for g in gaps])
        sol, *_ = np.linalg.lstsq(X, vals / hs ** p_pred, rcond=None)
        coefficient = float(sol[0])
    return _replace(base, exponent=slope, coefficient=coefficient)


def _replace(fit: LeadingFit, **kw) -> LeadingFit:
    from dataclasses import replace

    return replace(fit, **kw)


# ---------------------------------------------------------- worked examples

WORKED_EXAMPLES = (
    {
        "name": "constant-bending-det",
        "S": None,
        "B": ("1", "0", "0", "2", "0", "0"),
        "alpha": 4.0,
        "gamma": 2.0,
        "component": ((1, 2), (1, 2)),
        "point": (0.3, 0.4, 0.0),
        "expected_exponent": 2.0,
        "coefficient_formula": "-det B2x2",
    },
    {
        "name": "transverse-stretch",
        "S": ("0", "0", "0", "0", "0", "x1^2"),
        "B": None,
        "alpha": 3.0,
        "gamma": 2.0,
        "component": ((1, 3), (1, 3)),
        "point": (0.7, 0.2, 0.0),
        "expected_exponent": 1.5,
        "coefficient_formula": "-d11 S33",
    },
    {
        "name": "linear-shear-rows",
        "S": ("0", "0", "x2", "0", "0", "0"),
        "B": None,
        "alpha": 2.0,
        "gamma": 2.0,
        "component": ((1, 2), (1, 3)),
        "point": (0.3, 0.7, 0.0),
        "expected_exponent": None,  # gradient of curl(s) vanishes: flat
        "coefficient_formula": "vanishing",
    },
    {
        "name": "quadratic-shear-rows",
        "S": ("0", "0", "x2^2", "0", "0", "0"),
        "B": None,
        "alpha": 2.0,
        "gamma": 2.0,
        "component": ((1, 2), (2, 3)),
        "point": (0.3, 0.7, 0.0),
        "expected_exponent": 1.0,
        "coefficient_formula": "-d2 curl(S13,S23)",
    },
)
