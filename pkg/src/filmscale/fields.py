"""Closed-form scalar fields on rectangles: a tiny expression language with
exact derivative jets, plus grid-sampled field containers and CSV I/O.

Expressions are built from the plate variables ``x1``, ``x2``, numeric
literals, the operators ``+ - * / ^``, the functions ``sin cos exp log sqrt
abs``, and the lacunary-series builtin ``weier(a, b, N)``.  Evaluation is
vectorized over numpy arrays and returns value/gradient/Hessian (and, on
request, all third derivatives) computed by exact forward-mode rules -- no
finite differencing anywhere.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "ExprError",
    "FieldExpr",
    "Grid2",
    "Jet2",
    "ScalarGridField",
    "VectorGridField2",
    "SymGridField2",
    "SymField3",
    "parse",
    "format_expr",
    "print_expr",
    "eval_jet",
    "eval_values",
    "sample_scalar",
    "sample_vector2",
    "sample_sym2",
    "sample_sym3",
    "save_csv",
    "load_csv",
]


# ---------------------------------------------------------------- grid


@dataclass(frozen=True)
class Grid2:
    """Uniform tensor-product grid on [x_min,x_max] x [y_min,y_max].

    Nodal arrays are indexed ``[i, j]`` with ``i`` along x1 and ``j`` along
    x2 (numpy 'ij' convention).  At least 5 nodes per axis so that interior
    second-difference stencils exist.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("Grid2: empty rectangle")
        if self.nx < 5 or self.ny < 5:
            raise ValueError("Grid2: need at least 5 nodes per axis")

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def interior_mask(self, depth: int = 1) -> np.ndarray:
        """Boolean (nx, ny) mask of nodes at least `depth` rings from the edge."""
        m = np.zeros((self.nx, self.ny), dtype=bool)
        m[depth : self.nx - depth, depth : self.ny - depth] = True
        return m


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    val: float


@dataclass(frozen=True)
class Var:
    name: str  # "x1" or "x2"


@dataclass(frozen=True)
class Neg:
    arg: "FieldExpr"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    lhs: "FieldExpr"
    rhs: "FieldExpr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


FieldExpr = Union[Num, Var, Neg, BinOp, Call]

_FUNCS_1 = ("sin", "cos", "exp", "log", "sqrt", "abs")


class ExprError(ValueError):
    """Expression syntax/validation failure carrying a character offset."""

    def __init__(self, msg: str, pos: int):
        super().__init__(f"syntax error at offset {pos}: {msg}")
        self.pos = pos


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            # skip check: only whitespace left?
            rest = src[pos:]
            if rest.strip() == "":
                break
            raise ExprError(f"unexpected character {rest.strip()[0]!r}", pos + len(rest) - len(rest.lstrip()))
        if m.group("num") is not None:
            toks.append(("num", m.group("num"), m.start("num")))
        elif m.group("name") is not None:
            toks.append(("name", m.group("name"), m.start("name")))
        else:
            toks.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    toks.append(("end", "", len(src)))
    return toks


class _Parser:
    """Recursive descent over the grammar

        expr   := term (('+'|'-') term)*
        term   := unary (('*'|'/') unary)*
        unary  := '-' unary | power
        power  := atom ('^' unary)?          (right associative)
        atom   := number | 'x1' | 'x2' | name '(' expr (',' expr)* ')' | '(' expr ')'
    """

    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect_op(self, op: str):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            raise ExprError(f"expected {op!r}", pos)
        return self.take()

    def parse(self) -> FieldExpr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected {val!r}", pos)
        return e

    def expr(self) -> FieldExpr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.term()
                e = BinOp(val, e, rhs)
            else:
                return e

    def term(self) -> FieldExpr:
        e = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.unary()
                e = BinOp(val, e, rhs)
            else:
                return e

    def unary(self) -> FieldExpr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> FieldExpr:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> FieldExpr:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in ("x1", "x2"):
                return Var(val)
            if val in _FUNCS_1 or val == "weier":
                self.expect_op("(")
                args = [self.expr()]
                while True:
                    k2, v2, p2 = self.peek()
                    if k2 == "op" and v2 == ",":
                        self.take()
                        args.append(self.expr())
                    else:
                        break
                self.expect_op(")")
                return _validate_call(val, tuple(args), pos)
            raise ExprError(f"unknown name {val!r}", pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ExprError("expected a value", pos)


def _validate_call(fn: str, args: tuple, pos: int) -> Call:
    if fn in _FUNCS_1:
        if len(args) != 1:
            raise ExprError(f"{fn} takes one argument", pos)
        return Call(fn, args)
    # weier(a, b, N): numeric literals only
    if len(args) != 3 or not all(isinstance(a, Num) for a in args):
        raise ExprError("weier takes three numeric literals (a, b, N)", pos)
    a, b, n = (x.val for x in args)
    if not (a > 0 and b > 1 and n == int(n) and n >= 0):
        raise ExprError("weier needs a > 0, b > 1, integer N >= 0", pos)
    return Call("weier", args)


def parse(src: str) -> FieldExpr:
    """Parse an expression string; raises ExprError with a character offset."""
    return _Parser(src).parse()


# ---------------------------------------------------------------- printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def format_expr(e: FieldExpr, _parent: int = 0, _right: bool = False) -> str:
    """Canonical text form; `parse(format_expr(e))` reproduces `e`."""
    if isinstance(e, Num):
        return _fmt_num(e.val)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = format_expr(e.arg, _PREC["neg"])
        s = "-" + inner
        return f"({s})" if _parent > _PREC["neg"] or (_parent == _PREC["neg"] and _right) else s
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(format_expr(a) for a in e.args)})"
    p = _PREC[e.op]
    # left operand at same precedence stays bare; right operand needs parens
    # for the non-associative cases (-, /); ^ is right associative.
    if e.op == "^":
        lhs = format_expr(e.lhs, p + 1)
        rhs = format_expr(e.rhs, p)
    else:
        lhs = format_expr(e.lhs, p)
        rhs = format_expr(e.rhs, p, _right=True)
    s = f"{lhs}{e.op}{rhs}" if e.op == "^" else f"{lhs} {e.op} {rhs}"
    if _parent > p or (_parent == p and _right):
        return f"({s})"
    return s


print_expr = format_expr


# ---------------------------------------------------------------- jets

# multi-indices by order, sorted-tuple canonical form
_KEYS = {
    0: [()],
    1: [(1,), (2,)],
    2: [(1, 1), (1, 2), (2, 2)],
    3: [(1, 1, 1), (1, 1, 2), (1, 2, 2), (2, 2, 2)],
}


def _keys_up_to(order: int):
    for m in range(order + 1):
        yield from _KEYS[m]


def _splits(key: tuple) -> list[tuple[tuple, tuple]]:
    """All (A, key\\A) position-subset splits; repeats encode Leibniz weights."""
    n = len(key)
    out = []
    for mask in range(1 << n):
        a = tuple(sorted(key[p] for p in range(n) if mask >> p & 1))
        b = tuple(sorted(key[p] for p in range(n) if not mask >> p & 1))
        out.append((a, b))
    return out


_SPLITS = {k: _splits(k) for m in range(4) for k in _KEYS[m]}


class _JetVal:
    """Forward-mode jet of a scalar field: dict of multi-index -> ndarray."""

    __slots__ = ("order", "d")

    def __init__(self, order: int, d: dict):
        self.order = order
        self.d = d

    @staticmethod
    def const(c, order: int) -> "_JetVal":
        d = {k: (c if k == () else 0.0) for k in _keys_up_to(order)}
        return _JetVal(order, d)

    @staticmethod
    def var(which: int, vals: np.ndarray, order: int) -> "_JetVal":
        d = {k: 0.0 for k in _keys_up_to(order)}
        d[()] = vals
        if order >= 1:
            d[(which,)] = 1.0
        return _JetVal(order, d)

    def __add__(self, o: "_JetVal") -> "_JetVal":
        return _JetVal(self.order, {k: self.d[k] + o.d[k] for k in self.d})

    def __sub__(self, o: "_JetVal") -> "_JetVal":
        return _JetVal(self.order, {k: self.d[k] - o.d[k] for k in self.d})

    def __neg__(self) -> "_JetVal":
        return _JetVal(self.order, {k: -self.d[k] if not np.isscalar(self.d[k]) else -self.d[k] for k in self.d})

    def __mul__(self, o: "_JetVal") -> "_JetVal":
        out = {}
        for k in self.d:
            acc = None
            for a, b in _SPLITS[k]:
                term = self.d[a] * o.d[b]
                acc = term if acc is None else acc + term
            out[k] = acc
        return _JetVal(self.order, out)

    def compose(self, derivs: Sequence) -> "_JetVal":
        """Chain rule through a scalar function given [f, f', f'', f'''](u)."""
        u, order = self.d, self.order
        g: dict = {(): derivs[0]}
        if order >= 1:
            for i in (1, 2):
                g[(i,)] = derivs[1] * u[(i,)]
        if order >= 2:
            for k in _KEYS[2]:
                i, j = k
                g[k] = derivs[2] * u[(i,)] * u[(j,)] + derivs[1] * u[k]
        if order >= 3:
            for k in _KEYS[3]:
                i, j, l = k
                g[k] = (
                    derivs[3] * u[(i,)] * u[(j,)] * u[(l,)]
                    + derivs[2]
                    * (
                        u[tuple(sorted((i, j)))] * u[(l,)]
                        + u[tuple(sorted((i, l)))] * u[(j,)]
                        + u[tuple(sorted((j, l)))] * u[(i,)]
                    )
                    + derivs[1] * u[k]
                )
        return _JetVal(order, g)

    def recip(self) -> "_JetVal":
        v = self.d[()]
        return self.compose([1.0 / v, -1.0 / v**2, 2.0 / v**3, -6.0 / v**4][: self.order + 1])

    def __truediv__(self, o: "_JetVal") -> "_JetVal":
        return self * o.recip()

    def powc(self, c: float) -> "_JetVal":
        u = self.d[()]
        derivs = []
        coeff = 1.0
        for m in range(self.order + 1):
            if coeff == 0.0:
                derivs.append(0.0)
            else:
                derivs.append(coeff * np.power(u, c - m))
            coeff *= c - m
        return self.compose(derivs)


def _eval_node(e: FieldExpr, X1, X2, order: int) -> _JetVal:
    if isinstance(e, Num):
        return _JetVal.const(e.val, order)
    if isinstance(e, Var):
        return _JetVal.var(1 if e.name == "x1" else 2, X1 if e.name == "x1" else X2, order)
    if isinstance(e, Neg):
        z = _eval_node(e.arg, X1, X2, order)
        return _JetVal(order, {k: -z.d[k] for k in z.d})
    if isinstance(e, BinOp):
        if e.op == "^":
            if isinstance(e.rhs, Num):
                return _eval_node(e.lhs, X1, X2, order).powc(e.rhs.val)
            ln = _eval_node(e.lhs, X1, X2, order).compose_named("log")
            return (ln * _eval_node(e.rhs, X1, X2, order)).compose_named("exp")
        a = _eval_node(e.lhs, X1, X2, order)
        b = _eval_node(e.rhs, X1, X2, order)
        return {"+": a.__add__, "-": a.__sub__, "*": a.__mul__, "/": a.__truediv__}[e.op](b)
    # calls
    if e.fn == "weier":
        return _weier_jet(e.args, X1, X2, order)
    return _eval_node(e.args[0], X1, X2, order).compose_named(e.fn)


def _compose_named(self: _JetVal, fn: str) -> _JetVal:
    u = self.d[()]
    n = self.order + 1
    if fn == "sin":
        s, c = np.sin(u), np.cos(u)
        derivs = [s, c, -s, -c]
    elif fn == "cos":
        s, c = np.sin(u), np.cos(u)
        derivs = [c, -s, -c, s]
    elif fn == "exp":
        ex = np.exp(u)
        derivs = [ex, ex, ex, ex]
    elif fn == "log":
        derivs = [np.log(u), 1.0 / u, -1.0 / u**2, 2.0 / u**3]
    elif fn == "sqrt":
        r = np.sqrt(u)
        derivs = [r, 0.5 / r, -0.25 / (r * u), 0.375 / (r * u * u)]
    elif fn == "abs":
        derivs = [np.abs(u), np.sign(u), 0.0, 0.0]
    else:  # pragma: no cover
        raise ValueError(f"unknown function {fn}")
    return self.compose(derivs[:n])


_JetVal.compose_named = _compose_named


def _weier_jet(args: tuple, X1, X2, order: int) -> _JetVal:
    """Exact jet of sum_{k=0..N} b^(-a k) sin(b^k (x1 + x2)).

    Every m-th partial derivative equals sum_k b^((m-a)k) sin^(m)(b^k theta)
    with theta = x1 + x2, independent of which of x1/x2 the derivatives hit.
    """
    a, b, n = (x.val for x in args)
    theta = np.asarray(X1, dtype=float) + np.asarray(X2, dtype=float)
    per_order = []
    for m in range(order + 1):
        acc = np.zeros_like(theta)
        for k in range(int(n) + 1):
            scale = b ** ((m - a) * k)
            arg = (b**k) * theta
            trig = (np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t))[m % 4]
            acc = acc + scale * trig(arg)
        per_order.append(acc)
    d = {}
    for k in _keys_up_to(order):
        d[k] = per_order[len(k)]
    return _JetVal(order, d)


@dataclass
class Jet2:
    """Point jet: value, gradient (2, ...), symmetric Hessian (2, 2, ...).

    `third`, present when requested, stacks the four distinct third
    derivatives as axes (2, 2, 2, ...) in full symmetric form.
    """

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray | None = None


def eval_jet(expr: FieldExpr | str, x1, x2, order: int = 2) -> Jet2:
    """Evaluate `expr` and its derivatives at points (x1, x2), vectorized.

    >>> j = eval_jet("x1*x2", 2.0, 3.0)
    >>> float(j.value), j.grad.tolist(), j.hess.tolist()
    (6.0, [3.0, 2.0], [[0.0, 1.0], [1.0, 0.0]])
    """
    if isinstance(expr, str):
        expr = parse(expr)
    if not 0 <= order <= 3:
        raise ValueError("order must be 0..3")
    X1 = np.asarray(x1, dtype=float)
    X2 = np.asarray(x2, dtype=float)
    X1, X2 = np.broadcast_arrays(X1, X2)
    j = _eval_node(expr, X1, X2, order)
    shape = X1.shape

    def g(key):
        return np.broadcast_to(np.asarray(j.d[key], dtype=float), shape)

    value = g(())
    grad = hess = third = None
    if order >= 1:
        grad = np.stack([g((1,)), g((2,))])
    if order >= 2:
        hess = np.stack(
            [np.stack([g((1, 1)), g((1, 2))]), np.stack([g((1, 2)), g((2, 2))])]
        )
    if order >= 3:
        t = {k: g(k) for k in _KEYS[3]}

        def pick(i, j_, l):
            return t[tuple(sorted((i + 1, j_ + 1, l + 1)))]

        third = np.stack(
            [
                np.stack([np.stack([pick(i, j_, l) for l in (0, 1)]) for j_ in (0, 1)])
                for i in (0, 1)
            ]
        )
    return Jet2(value=value, grad=grad, hess=hess, third=third)


def eval_values(expr: FieldExpr | str, x1, x2) -> np.ndarray:
    return eval_jet(expr, x1, x2, order=0).value


# ---------------------------------------------------------------- grid fields

_SYM2 = ("s11", "s12", "s22")
_SYM3 = ("s11", "s12", "s13", "s22", "s23", "s33")


@dataclass
class ScalarGridField:
    grid: Grid2
    values: np.ndarray  # (nx, ny)
    band: int = 0  # rings of reflection-extended data near the edge (mollify)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError("ScalarGridField: values shape mismatch")


@dataclass
class VectorGridField2:
    grid: Grid2
    values: np.ndarray  # (2, nx, ny)
    band: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2, self.grid.nx, self.grid.ny):
            raise ValueError("VectorGridField2: values shape mismatch")


@dataclass
class SymGridField2:
    """Symmetric 2x2 field; components stored upper-triangle (11, 12, 22)."""

    grid: Grid2
    comps: np.ndarray  # (3, nx, ny)
    band: int = 0

    def __post_init__(self):
        self.comps = np.asarray(self.comps, dtype=float)
        if self.comps.shape != (3, self.grid.nx, self.grid.ny):
            raise ValueError("SymGridField2: comps shape mismatch")

    def entry(self, i: int, j: int) -> np.ndarray:
        return self.comps[{(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}[(i, j)]]


@dataclass
class SymField3:
    """Symmetric 3x3 field; components upper-triangle (11,12,13,22,23,33)."""

    grid: Grid2
    comps: np.ndarray  # (6, nx, ny)
    band: int = 0

    _IDX = {(0, 0): 0, (0, 1): 1, (0, 2): 2, (1, 1): 3, (1, 2): 4, (2, 2): 5}

    def __post_init__(self):
        self.comps = np.asarray(self.comps, dtype=float)
        if self.comps.shape != (6, self.grid.nx, self.grid.ny):
            raise ValueError("SymField3: comps shape mismatch")

    def entry(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        return self.comps[self._IDX[(i, j)]]

    def minor2(self) -> SymGridField2:
        """Upper-left 2x2 block."""
        return SymGridField2(self.grid, self.comps[[0, 1, 3]])

    def shear_row(self) -> VectorGridField2:
        """Out-of-plane couple (entries 13, 23) as an in-plane vector field."""
        return VectorGridField2(self.grid, self.comps[[2, 4]])


def _as_expr(e) -> FieldExpr:
    if isinstance(e, str):
        return parse(e)
    if isinstance(e, (int, float)):
        return Num(float(e))
    return e


def sample_scalar(expr, grid: Grid2) -> ScalarGridField:
    X1, X2 = grid.mesh()
    return ScalarGridField(grid, eval_values(_as_expr(expr), X1, X2))


def sample_vector2(exprs: Sequence, grid: Grid2) -> VectorGridField2:
    X1, X2 = grid.mesh()
    vals = np.stack([eval_values(_as_expr(e), X1, X2) for e in exprs])
    return VectorGridField2(grid, vals)


def sample_sym2(exprs: Sequence, grid: Grid2) -> SymGridField2:
    """exprs: upper-triangle (e11, e12, e22)."""
    X1, X2 = grid.mesh()
    return SymGridField2(grid, np.stack([eval_values(_as_expr(e), X1, X2) for e in exprs]))


def sample_sym3(exprs: Sequence, grid: Grid2) -> SymField3:
    """exprs: upper-triangle (e11, e12, e13, e22, e23, e33)."""
    X1, X2 = grid.mesh()
    return SymField3(grid, np.stack([eval_values(_as_expr(e), X1, X2) for e in exprs]))


# ---------------------------------------------------------------- CSV I/O

_COLS = {
    ScalarGridField: ("v",),
    VectorGridField2: ("v1", "v2"),
    SymGridField2: _SYM2,
    SymField3: _SYM3,
}


def _components(f) -> np.ndarray:
    if isinstance(f, ScalarGridField):
        return f.values[None]
    return f.values if isinstance(f, VectorGridField2) else f.comps


def save_csv(f, path: str) -> None:
    """Write a grid field as x1,x2,<components> rows (x1-major order)."""
    comps = _components(f)
    names = _COLS[type(f)]
    X1, X2 = f.grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("x1", "x2") + names)
        flat = [c.ravel() for c in comps]
        for row in zip(X1.ravel(), X2.ravel(), *flat):
            w.writerow([repr(float(v)) for v in row])


def load_csv(path: str):
    """Read a field written by save_csv; the header decides the field kind."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = np.array([[float(v) for v in row] for row in r])
    names = tuple(header[2:])
    kind = {v: k for k, v in _COLS.items()}.get(names)
    if header[:2] != ["x1", "x2"] or kind is None:
        raise ValueError(f"unrecognized field CSV header: {header}")
    order = np.lexsort((rows[:, 1], rows[:, 0]))
    rows = rows[order]
    x = np.unique(rows[:, 0])
    y = np.unique(rows[:, 1])
    nx, ny = len(x), len(y)
    if nx * ny != len(rows):
        raise ValueError("field CSV is not a tensor-product grid")
    for ax in (x, y):
        d = np.diff(ax)
        if not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
            raise ValueError("field CSV grid is not uniform")
    grid = Grid2(float(x[0]), float(x[-1]), float(y[0]), float(y[-1]), nx, ny)
    comps = rows[:, 2:].T.reshape(len(names), nx, ny)
    if kind is ScalarGridField:
        return ScalarGridField(grid, comps[0])
    if kind is VectorGridField2:
        return VectorGridField2(grid, comps)
    return kind(grid, comps)
