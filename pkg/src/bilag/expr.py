"""Exact scalar expressions over chart coordinates.

Expressions form an immutable DAG of small node objects.  Shared
subexpressions are never copied, and every traversal (evaluation,
differentiation, substitution) walks the DAG iteratively, so deep sums
coming out of frame inversions do not hit the recursion limit.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Number, Rational
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ScalarExpr", "Const", "Var", "Unary", "Binary", "Pow",
    "DomainError", "InconclusiveError", "ParseError", "UnknownVariableError",
    "Domain", "Comparison",
    "const", "var", "sin", "cos", "exp", "log", "esum",
    "parse", "diff", "evaluate", "evaluate_many", "substitute", "approx_equal",
    "free_variables",
]

class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""

    def __init__(self, message: str, node: "ScalarExpr | None" = None):
        super().__init__(message)
        self.node = node


class InconclusiveError(RuntimeError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at column {pos}: {text!r}")
        self.text = text
        self.pos = pos
        self.span = (pos, pos + 1)


class UnknownVariableError(KeyError):
    pass


# ---------------------------------------------------------------------------
# nodes


class ScalarExpr:
    __slots__ = ("_dcache", "_order", "__weakref__")
    prec = 100

    def __init__(self):
        self._dcache: dict[str, ScalarExpr] = {}
        self._order: list[ScalarExpr] | None = None

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, n):
        if isinstance(n, Const) and isinstance(n.value, Rational) and n.value.denominator == 1:
            n = int(n.value)
        if not isinstance(n, (int, np.integer)):
            raise TypeError("only integer powers are supported")
        return power(self, int(n))

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    # misc -------------------------------------------------------------------
    def children(self) -> tuple["ScalarExpr", ...]:
        return ()

    def __str__(self):
        return to_string(self)

    def __repr__(self):
        return f"ScalarExpr({to_string(self)!r})"

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0

    def is_one(self) -> bool:
        return isinstance(self, Const) and self.value == 1

    def diff(self, name: str) -> "ScalarExpr":
        return diff(self, name)

    def subs(self, mapping: Mapping[str, "ScalarExpr"]) -> "ScalarExpr":
        return substitute(self, mapping)

    def __call__(self, **point):
        return evaluate(self, point)


class Const(ScalarExpr):
    __slots__ = ("value",)

    def __init__(self, value):
        super().__init__()
        if isinstance(value, Fraction):
            pass
        elif isinstance(value, (int, np.integer)):
            value = Fraction(int(value))
        elif isinstance(value, (float, np.floating)):
            value = float(value)
            if not math.isfinite(value):
                raise DomainError(f"non-finite constant {value}")
        else:
            raise TypeError(f"bad constant {value!r}")
        self.value = value


class Var(ScalarExpr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        super().__init__()
        self.name = name


UNARY_FUNCS = ("neg", "sin", "cos", "exp", "log")


class Unary(ScalarExpr):
    __slots__ = ("op", "arg")

    def __init__(self, op: str, arg: ScalarExpr):
        super().__init__()
        if op not in UNARY_FUNCS:
            raise ValueError(op)
        self.op = op
        self.arg = arg

    def children(self):
        return (self.arg,)


class Binary(ScalarExpr):
    __slots__ = ("op", "left", "right")

    def __init__(self, op: str, left: ScalarExpr, right: ScalarExpr):
        super().__init__()
        if op not in "+-*/":
            raise ValueError(op)
        self.op = op
        self.left = left
        self.right = right

    def children(self):
        return (self.left, self.right)


class Pow(ScalarExpr):
    __slots__ = ("base", "n")

    def __init__(self, base: ScalarExpr, n: int):
        super().__init__()
        self.base = base
        self.n = n

    def children(self):
        return (self.base,)


# ---------------------------------------------------------------------------
# smart constructors: constant folding and 0/1 absorption only

ZERO = Const(0)
ONE = Const(1)


def _coerce(x) -> ScalarExpr:
    if isinstance(x, ScalarExpr):
        return x
    if isinstance(x, str):
        return parse(x)
    if isinstance(x, Number):
        return const(x)
    raise TypeError(f"cannot convert {type(x).__name__} to ScalarExpr")


def const(value) -> Const:
    if isinstance(value, (int, np.integer)):
        if value == 0:
            return ZERO
        if value == 1:
            return ONE
    return Const(value)


def var(name: str) -> Var:
    return Var(name)


def _fold(a, b, op):
    try:
        if op == "+":
            r = a + b
        elif op == "-":
            r = a - b
        elif op == "*":
            r = a * b
        else:
            r = a / b
    except ZeroDivisionError:
        raise DomainError("division by zero in constant folding") from None
    return Const(r)


def add(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(a.value, b.value, "+")
    return Binary("+", a, b)


def sub(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    if b.is_zero():
        return a
    if a.is_zero():
        return neg(b)
    if a is b:
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(a.value, b.value, "-")
    return Binary("-", a, b)


def mul(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    if a.is_zero() or b.is_zero():
        return ZERO
    if a.is_one():
        return b
    if b.is_one():
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(a.value, b.value, "*")
    if isinstance(a, Const) and a.value == -1:
        return neg(b)
    if isinstance(b, Const) and b.value == -1:
        return neg(a)
    return Binary("*", a, b)


def div(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    if b.is_zero():
        raise DomainError("division by the zero expression", b)
    if a.is_zero():
        return ZERO
    if b.is_one():
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(a.value, b.value, "/")
    return Binary("/", a, b)


def neg(a: ScalarExpr) -> ScalarExpr:
    if isinstance(a, Const):
        return Const(-a.value) if a.value != 0 else ZERO
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def power(a: ScalarExpr, n: int) -> ScalarExpr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        if a.value == 0 and n < 0:
            raise DomainError("zero to a negative power", a)
        if isinstance(a.value, Fraction):
            return Const(a.value ** n)
        return Const(float(a.value) ** n)
    return Pow(a, n)


_EXACT_FUNCS = {
    ("sin", 0): ZERO, ("cos", 0): ONE, ("exp", 0): ONE, ("log", 1): ZERO,
}
_NP_FUNCS: dict[str, Callable] = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log}


def _func(op: str, a: ScalarExpr) -> ScalarExpr:
    a = _coerce(a)
    if isinstance(a, Const):
        exact = _EXACT_FUNCS.get((op, a.value))
        if exact is not None:
            return exact
        if isinstance(a.value, float):
            if op == "log" and a.value <= 0:
                raise DomainError("log of non-positive constant", a)
            return Const(float(_NP_FUNCS[op](a.value)))
    return Unary(op, a)


def sin(a) -> ScalarExpr:
    return _func("sin", a)


def cos(a) -> ScalarExpr:
    return _func("cos", a)


def exp(a) -> ScalarExpr:
    return _func("exp", a)


def log(a) -> ScalarExpr:
    return _func("log", a)


def esum(terms: Iterable) -> ScalarExpr:
    """Sum as a balanced tree (keeps DAG depth logarithmic)."""
    items = [_coerce(t) for t in terms]
    items = [t for t in items if not t.is_zero()]
    if not items:
        return ZERO
    while len(items) > 1:
        nxt = [add(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


# ---------------------------------------------------------------------------
# traversal


def _topo(roots: Sequence[ScalarExpr], stop: Callable[[ScalarExpr], bool] | None = None):
    """Children-first order of all nodes reachable from ``roots``."""
    order: list[ScalarExpr] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if stop is not None and stop(node):
                continue
            for ch in node.children():
                if id(ch) not in seen:
                    stack.append((ch, False))
    return order


def free_variables(e: ScalarExpr | Sequence[ScalarExpr]) -> set[str]:
    roots = [e] if isinstance(e, ScalarExpr) else list(e)
    return {n.name for n in _topo(roots) if isinstance(n, Var)}


def diff(e: ScalarExpr, name: str, variables: Iterable[str] | None = None) -> ScalarExpr:
    """Exact partial derivative of ``e`` with respect to ``name``.

    If ``variables`` is given, ``name`` must be one of them.
    """
    if variables is not None and name not in set(variables):
        raise UnknownVariableError(name)
    if name in e._dcache:
        return e._dcache[name]
    for node in _topo([e], stop=lambda n: name in n._dcache):
        if name in node._dcache:
            continue
        node._dcache[name] = _diff_node(node, name)
    return e._dcache[name]


def _diff_node(node: ScalarExpr, name: str) -> ScalarExpr:
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == name else ZERO
    if isinstance(node, Unary):
        a = node.arg
        da = a._dcache[name]
        if da.is_zero():
            return ZERO
        if node.op == "neg":
            return neg(da)
        if node.op == "sin":
            return mul(cos(a), da)
        if node.op == "cos":
            return neg(mul(sin(a), da))
        if node.op == "exp":
            return mul(node, da)
        return div(da, a)
    if isinstance(node, Pow):
        db = node.base._dcache[name]
        if db.is_zero():
            return ZERO
        return mul(mul(const(node.n), power(node.base, node.n - 1)), db)
    assert isinstance(node, Binary)
    l, r = node.left, node.right
    dl, dr = l._dcache[name], r._dcache[name]
    if node.op == "+":
        return add(dl, dr)
    if node.op == "-":
        return sub(dl, dr)
    if node.op == "*":
        return add(mul(dl, r), mul(l, dr))
    # quotient rule written as dl/r - l*dr/r^2
    return sub(div(dl, r), div(mul(l, dr), power(r, 2)))


def substitute(e: ScalarExpr, mapping: Mapping[str, ScalarExpr | Number | str]) -> ScalarExpr:
    """Replace variables by expressions (simultaneously)."""
    return substitute_many([e], mapping)[0]


def substitute_many(exprs: Sequence[ScalarExpr], mapping) -> list[ScalarExpr]:
    repl = {k: _coerce(v) for k, v in mapping.items()}
    new: dict[int, ScalarExpr] = {}
    for node in _topo(list(exprs)):
        if isinstance(node, Var):
            new[id(node)] = repl.get(node.name, node)
        elif isinstance(node, Const):
            new[id(node)] = node
        elif isinstance(node, Unary):
            a = new[id(node.arg)]
            if a is node.arg:
                new[id(node)] = node
            else:
                new[id(node)] = neg(a) if node.op == "neg" else _func(node.op, a)
        elif isinstance(node, Pow):
            b = new[id(node.base)]
            new[id(node)] = node if b is node.base else power(b, node.n)
        else:
            l, r = new[id(node.left)], new[id(node.right)]
            if l is node.left and r is node.right:
                new[id(node)] = node
            else:
                new[id(node)] = {"+": add, "-": sub, "*": mul, "/": div}[node.op](l, r)
    return [new[id(e)] for e in exprs]


# ---------------------------------------------------------------------------
# evaluation


def evaluate_many(exprs: Sequence[ScalarExpr], point: Mapping[str, object],
                  strict: bool = True) -> list[np.ndarray | float]:
    """Evaluate several expressions sharing one pass over their DAG.

    Values in ``point`` may be scalars or equally shaped arrays.  With
    ``strict`` a :class:`DomainError` naming the offending subexpression is
    raised; otherwise invalid entries become NaN.
    """
    exprs = list(exprs)
    vals: dict[int, object] = {}
    for node in _topo(exprs):
        vals[id(node)] = _eval_node(node, vals, point, strict)
    out = []
    for e in exprs:
        v = vals[id(e)]
        out.append(float(v) if np.ndim(v) == 0 else v)
    return out


def compile_many(exprs: Sequence[ScalarExpr], strict: bool = True) -> Callable[[Mapping[str, object]], list]:
    """Freeze the evaluation order of ``exprs`` for repeated numeric calls."""
    exprs = list(exprs)
    order = list(_topo(exprs))

    def run(point):
        vals: dict[int, object] = {}
        for node in order:
            vals[id(node)] = _eval_node(node, vals, point, strict)
        return [vals[id(e)] for e in exprs]

    return run


def evaluate(e: ScalarExpr, point: Mapping[str, object], strict: bool = True):
    return evaluate_many([e], point, strict)[0]


def _eval_node(node, vals, point, strict):
    if isinstance(node, Const):
        return float(node.value)
    if isinstance(node, Var):
        try:
            return point[node.name]
        except KeyError:
            raise UnknownVariableError(f"no value supplied for {node.name!r}") from None
    if isinstance(node, Unary):
        a = vals[id(node.arg)]
        if node.op == "neg":
            return np.negative(a)
        if node.op == "log":
            bad = np.asarray(a) <= 0
            if np.any(bad):
                if strict:
                    raise DomainError(f"log of non-positive value in {to_string(node)}", node)
                a = np.where(bad, np.nan, a)
            with np.errstate(invalid="ignore"):
                return np.log(a)
        with np.errstate(over="ignore"):
            return _NP_FUNCS[node.op](a)
    if isinstance(node, Pow):
        b = vals[id(node.base)]
        if node.n < 0:
            bad = np.asarray(b) == 0
            if np.any(bad):
                if strict:
                    raise DomainError(f"division by zero in {to_string(node)}", node)
                b = np.where(bad, np.nan, b)
            return 1.0 / np.power(b, -node.n)
        return np.power(b, node.n)
    l, r = vals[id(node.left)], vals[id(node.right)]
    if node.op == "+":
        return np.add(l, r)
    if node.op == "-":
        return np.subtract(l, r)
    if node.op == "*":
        return np.multiply(l, r)
    bad = np.asarray(r) == 0
    if np.any(bad):
        if strict:
            raise DomainError(f"division by zero in {to_string(node)}", node)
        r = np.where(bad, np.nan, r)
    return np.divide(l, r)


# ---------------------------------------------------------------------------
# domains and the randomized identity oracle


@dataclass(frozen=True)
class Domain:
    """Box of sampling bounds; periodic variables have period 1."""

    bounds: Mapping[str, tuple[float, float]]
    periodic: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "bounds", {k: (float(lo), float(hi)) for k, (lo, hi) in self.bounds.items()})
        object.__setattr__(self, "periodic", frozenset(self.periodic))
        for k, (lo, hi) in self.bounds.items():
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
                raise ValueError(f"bad bounds for {k}: {(lo, hi)}")
        for k in self.periodic:
            if self.bounds.get(k) != (0.0, 1.0):
                raise ValueError(f"periodic variable {k} must have bounds [0, 1)")

    @classmethod
    def box(cls, names: Iterable[str], lo: float = -1.0, hi: float = 1.0, periodic=()):
        names = list(names)
        b = {n: ((0.0, 1.0) if n in periodic else (lo, hi)) for n in names}
        return cls(b, frozenset(periodic))

    def sample(self, n: int, rng: np.random.Generator | int | None = 0) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        return {k: rng.uniform(lo, hi, size=n) for k, (lo, hi) in self.bounds.items()}

    def reduce(self, point: Mapping[str, object]) -> dict[str, object]:
        return {k: (np.mod(v, 1.0) if k in self.periodic else v) for k, v in point.items()}


@dataclass
class Comparison:
    equal: bool
    max_error: float
    witness: dict[str, float] | None = None
    skipped: int = 0

    def __bool__(self):
        return self.equal


def approx_equal(e1, e2, dom: Domain, samples: int = 100, tol: float = 1e-9,
                 seed: int = 0) -> Comparison:
    """Randomized pointwise identity test with a fixed seed.

    Samples where either side leaves its domain are skipped; more than half
    skipped is reported as :class:`InconclusiveError`.
    """
    if samples < 1 or tol <= 0:
        raise ValueError("need samples >= 1 and tol > 0")
    e1, e2 = _coerce(e1), _coerce(e2)
    pts = dom.reduce(dom.sample(samples, seed))
    v1, v2 = (np.broadcast_to(np.asarray(v, float), (samples,))
              for v in evaluate_many([e1, e2], pts, strict=False))
    ok = np.isfinite(v1) & np.isfinite(v2)
    skipped = int(samples - ok.sum())
    if skipped * 2 > samples:
        raise InconclusiveError(f"{skipped}/{samples} samples outside the domain")
    err = np.abs(v1 - v2) / (1.0 + np.maximum(np.abs(v1), np.abs(v2)))
    err = np.where(ok, err, 0.0)
    worst = int(np.argmax(err))
    max_err = float(err[worst])
    if max_err <= tol:
        return Comparison(True, max_err, None, skipped)
    witness = {k: float(np.asarray(v)[worst]) for k, v in pts.items()}
    return Comparison(False, max_err, witness, skipped)


# ---------------------------------------------------------------------------
# printing and parsing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _const_str(v) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    return repr(float(v))


def to_string(e: ScalarExpr) -> str:
    out: dict[int, tuple[str, int]] = {}
    for node in _topo([e]):
        if isinstance(node, Const):
            s = _const_str(node.value)
            p = 4 if (isinstance(node.value, Fraction) and node.value.denominator == 1 and node.value >= 0) else (
                4 if isinstance(node.value, float) and node.value >= 0 and "e" not in s else 0)
            out[id(node)] = (s, p)
        elif isinstance(node, Var):
            out[id(node)] = (node.name, 4)
        elif isinstance(node, Unary):
            a, _ = out[id(node.arg)]
            if node.op == "neg":
                ap = out[id(node.arg)][1]
                out[id(node)] = (f"-{a}" if ap >= 3 else f"-({a})", 2)
            else:
                out[id(node)] = (f"{node.op}({a})", 4)
        elif isinstance(node, Pow):
            a, ap = out[id(node.base)]
            base = a if ap >= 4 else f"({a})"
            n = f"{node.n}" if node.n >= 0 else f"({node.n})"
            out[id(node)] = (f"{base}^{n}", 3)
        else:
            p = _PREC[node.op]
            l, lp = out[id(node.left)]
            r, rp = out[id(node.right)]
            if lp < p:
                l = f"({l})"
            if rp < p or (rp == p and node.op in "-/"):
                r = f"({r})"
            out[id(node)] = (f"{l} {node.op} {r}", p)
    return out[id(e)][0]


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+)|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^(),]))")
_NAMED_CONSTS = {"pi": math.pi}
_FUNCS = {"sin": sin, "cos": cos, "exp": exp, "log": log}


def parse(text: str, variables: Iterable[str] | None = None) -> ScalarExpr:
    """Parse infix text: ``+ - * / ^``, integer exponents, sin/cos/exp/log.

    Decimal literals are read exactly as rationals.  If ``variables`` is
    given, any other identifier is a parse error.
    """
    allowed = set(variables) if variables is not None else None
    toks: list[tuple[str, str, int]] = []
    pos = 0
    text = str(text)
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError("unexpected character", text, len(text) - len(text[pos:].lstrip()))
        start = m.start(m.lastindex)
        if m.group(1):
            toks.append(("num", m.group(1), start))
        elif m.group(2):
            toks.append(("id", m.group(2), start))
        else:
            op = m.group(3)
            toks.append(("op", "^" if op == "**" else op, start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    i = 0

    def peek():
        return toks[i]

    def take(kind=None, value=None):
        nonlocal i
        t = toks[i]
        if (kind and t[0] != kind) or (value and t[1] != value):
            raise ParseError(f"expected {value or kind}, found {t[1] or 'end of input'!r}", text, t[2])
        i += 1
        return t

    def expr_():
        node = term()
        while peek()[0] == "op" and peek()[1] in "+-":
            op = take()[1]
            rhs = term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term():
        node = unary()
        while peek()[0] == "op" and peek()[1] in "*/":
            op = take()[1]
            rhs = unary()
            if op == "*":
                node = mul(node, rhs)
            else:
                try:
                    node = div(node, rhs)
                except DomainError:
                    raise ParseError("division by zero", text, toks[i - 1][2]) from None
        return node

    def unary():
        if peek()[0] == "op" and peek()[1] in "+-":
            op = take()[1]
            node = unary()
            return neg(node) if op == "-" else node
        return pow_()

    def pow_():
        node = atom()
        if peek()[0] == "op" and peek()[1] == "^":
            take()
            t = peek()
            sign = 1
            paren = False
            if t[0] == "op" and t[1] == "(":
                take()
                paren = True
            if peek()[0] == "op" and peek()[1] == "-":
                take()
                sign = -1
            nt = take("num")
            if not re.fullmatch(r"\d+", nt[1]):
                raise ParseError("exponent must be an integer", text, nt[2])
            if paren:
                take("op", ")")
            node = power(node, sign * int(nt[1]))
        return node

    def atom():
        t = peek()
        if t[0] == "num":
            take()
            return const(Fraction(t[1])) if "e" not in t[1].lower() else Const(float(t[1]))
        if t[0] == "id":
            take()
            name = t[1]
            if name in _FUNCS:
                take("op", "(")
                arg = expr_()
                take("op", ")")
                return _FUNCS[name](arg)
            if name in _NAMED_CONSTS:
                return Const(_NAMED_CONSTS[name])
            if allowed is not None and name not in allowed:
                raise ParseError(f"unknown identifier {name!r}", text, t[2])
            return Var(name)
        if t[0] == "op" and t[1] == "(":
            take()
            node = expr_()
            take("op", ")")
            return node
        raise ParseError(f"unexpected token {t[1] or 'end of input'!r}", text, t[2])

    node = expr_()
    if peek()[0] != "end":
        raise ParseError(f"trailing input {peek()[1]!r}", text, peek()[2])
    return node
