"""Charts, fields, forms and foliation frames on a single coordinate chart.

Forms follow the convention ``(a^b)(X, Y) = a(X) b(Y) - a(Y) b(X)``, so on a
chart ``(p, q)`` the canonical form ``dq^dp`` gives ``w(d_p, d_q) = -1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import expr as E
from .expr import Domain, ScalarExpr, esum

SPAN_TOL = 1e-8
SYMBOLIC_TOL = 1e-9


class ChartMismatchError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


@dataclass(frozen=True, eq=False)
class Chart:
    name: str
    coords: tuple[str, ...]
    domain: Domain

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        if len(set(self.coords)) != len(self.coords):
            raise ValueError(f"duplicate coordinate names in {self.coords}")
        if not self.coords:
            raise ValueError("a chart needs at least one coordinate")
        missing = set(self.coords) - set(self.domain.bounds)
        if missing:
            raise ValueError(f"domain has no bounds for {sorted(missing)}")

    @classmethod
    def euclidean(cls, coords: Sequence[str], name: str | None = None, lo=-1.0, hi=1.0, periodic=()):
        return cls(name or "R%d" % len(coords), tuple(coords), Domain.box(coords, lo, hi, periodic))

    @property
    def dim(self) -> int:
        return len(self.coords)

    def index(self, name: str) -> int:
        return self.coords.index(name)

    def var(self, name: str) -> ScalarExpr:
        if name not in self.coords:
            raise E.UnknownVariableError(name)
        return E.var(name)

    def vars(self) -> list[ScalarExpr]:
        return [E.var(c) for c in self.coords]

    def parse(self, text) -> ScalarExpr:
        if isinstance(text, ScalarExpr):
            return text
        return E.parse(str(text), self.coords)

    def sample(self, n: int, seed: int | np.random.Generator = 0) -> dict[str, np.ndarray]:
        pts = self.domain.sample(n, seed)
        return {c: pts[c] for c in self.coords}

    def same_as(self, other: "Chart") -> bool:
        return self is other or (self.coords == other.coords and self.name == other.name)

    def coordinate_field(self, name: str) -> "VectorField":
        i = self.index(name)
        return VectorField(self, [E.ONE if j == i else E.ZERO for j in range(self.dim)])

    def differential(self, name: str) -> "DifferentialForm":
        return DifferentialForm(self, 1, {(self.index(name),): E.ONE})


def _check_same(a: Chart, b: Chart):
    if not a.same_as(b):
        raise ChartMismatchError(f"chart {a.name}{a.coords} differs from {b.name}{b.coords}")


def _points(chart: Chart, samples, seed) -> dict[str, np.ndarray]:
    if isinstance(samples, Mapping):
        pts = {k: np.atleast_1d(np.asarray(v, float)) for k, v in samples.items()}
    else:
        pts = chart.sample(int(samples), seed)
    return chart.domain.reduce(pts)


def _npoints(pts) -> int:
    return max(np.size(v) for v in pts.values())


def _eval_array(exprs: Sequence[ScalarExpr], pts, strict=True) -> np.ndarray:
    n = _npoints(pts)
    vals = E.evaluate_many(exprs, pts, strict=strict)
    return np.array([np.broadcast_to(np.asarray(v, float), (n,)) for v in vals])


# ---------------------------------------------------------------------------
# objects


@dataclass(frozen=True, eq=False)
class VectorField:
    chart: Chart
    comps: tuple[ScalarExpr, ...]

    def __post_init__(self):
        comps = tuple(self.chart.parse(c) if not isinstance(c, ScalarExpr) else c for c in self.comps)
        if len(comps) != self.chart.dim:
            raise ValueError(f"field has {len(comps)} components on a {self.chart.dim}-dimensional chart")
        object.__setattr__(self, "comps", comps)

    @classmethod
    def parse(cls, chart: Chart, comps: Sequence[str]):
        return cls(chart, tuple(chart.parse(c) for c in comps))

    def apply(self, f: ScalarExpr) -> ScalarExpr:
        """Directional derivative X(f)."""
        return esum(E.mul(c, E.diff(f, x)) for c, x in zip(self.comps, self.chart.coords) if not c.is_zero())

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same(self.chart, other.chart)
        return VectorField(self.chart, tuple(a + b for a, b in zip(self.comps, other.comps)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same(self.chart, other.chart)
        return VectorField(self.chart, tuple(a - b for a, b in zip(self.comps, other.comps)))

    def scale(self, f) -> "VectorField":
        f = E._coerce(f)
        return VectorField(self.chart, tuple(E.mul(f, c) for c in self.comps))

    __rmul__ = scale

    def __neg__(self):
        return VectorField(self.chart, tuple(E.neg(c) for c in self.comps))

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.comps)

    def evaluate(self, pts) -> np.ndarray:
        """Component array of shape ``(m, N)``."""
        return _eval_array(self.comps, pts)

    def subs(self, mapping) -> "VectorField":
        return VectorField(self.chart, tuple(E.substitute_many(self.comps, mapping)))

    def __str__(self):
        terms = [f"({c})*d_{x}" for c, x in zip(self.comps, self.chart.coords) if not c.is_zero()]
        return " + ".join(terms) or "0"


def _sort_indices(idx: Sequence[int]) -> tuple[int, tuple[int, ...]] | None:
    """Sign of the permutation sorting ``idx``; None if an index repeats."""
    if len(set(idx)) != len(idx):
        return None
    sign = 1
    lst = list(idx)
    for i in range(len(lst)):
        for j in range(len(lst) - 1 - i):
            if lst[j] > lst[j + 1]:
                lst[j], lst[j + 1] = lst[j + 1], lst[j]
                sign = -sign
    return sign, tuple(lst)


@dataclass(frozen=True, eq=False)
class DifferentialForm:
    """A k-form stored on strictly increasing index tuples."""

    chart: Chart
    degree: int
    coeffs: Mapping[tuple[int, ...], ScalarExpr]

    def __post_init__(self):
        if not 0 <= self.degree <= self.chart.dim:
            raise ValueError(f"degree {self.degree} exceeds chart dimension {self.chart.dim}")
        clean: dict[tuple[int, ...], ScalarExpr] = {}
        for idx, c in self.coeffs.items():
            idx = tuple(idx)
            c = self.chart.parse(c) if not isinstance(c, ScalarExpr) else c
            if len(idx) != self.degree or any(not 0 <= i < self.chart.dim for i in idx):
                raise ValueError(f"bad index tuple {idx} for a {self.degree}-form")
            s = _sort_indices(idx)
            if s is None:
                continue
            sign, key = s
            term = c if sign > 0 else E.neg(c)
            clean[key] = E.add(clean[key], term) if key in clean else term
        object.__setattr__(self, "coeffs", {k: v for k, v in sorted(clean.items()) if not v.is_zero()})

    @classmethod
    def from_terms(cls, chart: Chart, terms: Iterable[tuple[object, Sequence[str]]]):
        """Build from ``(coefficient, [coordinate names])`` wedge terms."""
        terms = list(terms)
        if not terms:
            raise ValueError("degree of an empty term list is ambiguous; use the constructor")
        degree = len(terms[0][1])
        acc: dict[tuple[int, ...], ScalarExpr] = {}
        for coeff, names in terms:
            if len(names) != degree:
                raise ValueError("mixed degrees")
            s = _sort_indices([chart.index(n) for n in names])
            if s is None:
                continue
            sign, key = s
            c = chart.parse(coeff) if not isinstance(coeff, ScalarExpr) else coeff
            c = c if sign > 0 else E.neg(c)
            acc[key] = E.add(acc[key], c) if key in acc else c
        return cls(chart, degree, acc)

    @classmethod
    def zero(cls, chart: Chart, degree: int):
        return cls(chart, degree, {})

    def __getitem__(self, idx) -> ScalarExpr:
        s = _sort_indices(tuple(idx))
        if s is None:
            return E.ZERO
        sign, key = s
        c = self.coeffs.get(key, E.ZERO)
        return c if sign > 0 else E.neg(c)

    def __add__(self, other: "DifferentialForm") -> "DifferentialForm":
        _check_same(self.chart, other.chart)
        if self.degree != other.degree:
            raise ValueError("degree mismatch")
        keys = set(self.coeffs) | set(other.coeffs)
        return DifferentialForm(self.chart, self.degree,
                                {k: E.add(self.coeffs.get(k, E.ZERO), other.coeffs.get(k, E.ZERO)) for k in keys})

    def scale(self, f) -> "DifferentialForm":
        f = E._coerce(f)
        return DifferentialForm(self.chart, self.degree, {k: E.mul(f, v) for k, v in self.coeffs.items()})

    __rmul__ = scale

    def wedge(self, other: "DifferentialForm") -> "DifferentialForm":
        _check_same(self.chart, other.chart)
        acc: dict[tuple[int, ...], list[ScalarExpr]] = {}
        for i, a in self.coeffs.items():
            for j, b in other.coeffs.items():
                s = _sort_indices(i + j)
                if s is None:
                    continue
                sign, key = s
                t = E.mul(a, b)
                acc.setdefault(key, []).append(t if sign > 0 else E.neg(t))
        return DifferentialForm(self.chart, self.degree + other.degree, {k: esum(v) for k, v in acc.items()})

    def __call__(self, *fields: VectorField) -> ScalarExpr:
        """Contract with ``degree`` vector fields (alternating convention)."""
        if len(fields) != self.degree:
            raise ValueError(f"a {self.degree}-form takes {self.degree} fields")
        for f in fields:
            _check_same(self.chart, f.chart)
        terms = []
        for idx, c in self.coeffs.items():
            for perm in itertools.permutations(range(self.degree)):
                sign = _sort_indices(perm)[0]
                prod = c
                for slot, p in enumerate(perm):
                    prod = E.mul(prod, fields[slot].comps[idx[p]])
                if not prod.is_zero():
                    terms.append(prod if sign > 0 else E.neg(prod))
        return esum(terms)

    def matrix(self) -> list[list[ScalarExpr]]:
        """Antisymmetric coefficient matrix of a 2-form: W[i][j] = w(d_i, d_j)."""
        if self.degree != 2:
            raise ValueError("matrix() is for 2-forms")
        m = self.chart.dim
        W = [[E.ZERO] * m for _ in range(m)]
        for (i, j), c in self.coeffs.items():
            W[i][j] = c
            W[j][i] = E.neg(c)
        return W

    def evaluate_matrix(self, pts) -> np.ndarray:
        """Numeric 2-form matrix of shape ``(N, m, m)``."""
        m = self.chart.dim
        n = _npoints(pts)
        out = np.zeros((n, m, m))
        keys = list(self.coeffs)
        if keys:
            vals = _eval_array([self.coeffs[k] for k in keys], pts)
            for (i, j), v in zip(keys, vals):
                out[:, i, j] = v
                out[:, j, i] = -v
        return out

    def subs(self, mapping) -> "DifferentialForm":
        keys = list(self.coeffs)
        vals = E.substitute_many([self.coeffs[k] for k in keys], mapping)
        return DifferentialForm(self.chart, self.degree, dict(zip(keys, vals)))

    def on_chart(self, chart: Chart) -> "DifferentialForm":
        """Re-home onto a chart whose leading coordinates match this one."""
        if chart.coords[: self.chart.dim] != self.chart.coords:
            raise ChartMismatchError("target chart does not extend this chart")
        return DifferentialForm(chart, self.degree, dict(self.coeffs))

    def __str__(self):
        if not self.coeffs:
            return "0"
        names = self.chart.coords
        return " + ".join(f"({c})*" + "^".join("d" + names[i] for i in idx) for idx, c in self.coeffs.items())


@dataclass(frozen=True, eq=False)
class TensorField:
    """Covariant tensor of rank r with full component table."""

    chart: Chart
    rank: int
    comps: Mapping[tuple[int, ...], ScalarExpr]

    def __post_init__(self):
        clean = {}
        for idx, c in self.comps.items():
            idx = tuple(idx)
            if len(idx) != self.rank:
                raise ValueError("index length differs from rank")
            c = self.chart.parse(c) if not isinstance(c, ScalarExpr) else c
            if not c.is_zero():
                clean[idx] = E.add(clean[idx], c) if idx in clean else c
        object.__setattr__(self, "comps", dict(sorted(clean.items())))

    @classmethod
    def from_form(cls, form: DifferentialForm) -> "TensorField":
        comps: dict[tuple[int, ...], ScalarExpr] = {}
        for idx, c in form.coeffs.items():
            for perm in itertools.permutations(range(form.degree)):
                sign = _sort_indices(perm)[0]
                key = tuple(idx[p] for p in perm)
                comps[key] = c if sign > 0 else E.neg(c)
        return cls(form.chart, form.degree, comps)

    def to_form(self) -> DifferentialForm:
        """Alternating part, assuming the tensor is already antisymmetric."""
        return DifferentialForm(self.chart, self.rank,
                                {idx: c for idx, c in self.comps.items() if list(idx) == sorted(set(idx))})

    def __call__(self, *fields: VectorField) -> ScalarExpr:
        terms = []
        for idx, c in self.comps.items():
            prod = c
            for f, i in zip(fields, idx):
                prod = E.mul(prod, f.comps[i])
            terms.append(prod)
        return esum(terms)

    def __getitem__(self, idx):
        return self.comps.get(tuple(idx), E.ZERO)


@dataclass(frozen=True, eq=False)
class FoliationFrame:
    chart: Chart
    fields: tuple[VectorField, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        for f in self.fields:
            _check_same(self.chart, f.chart)

    @property
    def rank(self) -> int:
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)

    def __len__(self):
        return len(self.fields)

    def evaluate(self, pts) -> np.ndarray:
        """Frame matrix of shape ``(N, m, k)`` (columns are frame vectors)."""
        n = _npoints(pts)
        if not self.fields:
            return np.zeros((n, self.chart.dim, 0))
        vals = _eval_array([c for f in self.fields for c in f.comps], pts)
        return vals.reshape(len(self.fields), self.chart.dim, n).transpose(2, 1, 0)


@dataclass(frozen=True, eq=False)
class DiffeoSpec:
    """A diffeomorphism given by component expressions.

    ``forward`` is written in source coordinates, ``inverse`` in target
    coordinates.  ``inverse_fn`` optionally maps target coordinate arrays to
    source coordinate arrays when no closed-form inverse exists.
    """

    source: Chart
    target: Chart
    forward: tuple[ScalarExpr, ...]
    inverse: tuple[ScalarExpr, ...] | None = None
    inverse_fn: Callable | None = None

    def __post_init__(self):
        fwd = tuple(self.source.parse(c) for c in self.forward)
        if len(fwd) != self.target.dim:
            raise ValueError("forward map needs one component per target coordinate")
        object.__setattr__(self, "forward", fwd)
        if self.inverse is not None:
            inv = tuple(self.target.parse(c) for c in self.inverse)
            if len(inv) != self.source.dim:
                raise ValueError("inverse map needs one component per source coordinate")
            object.__setattr__(self, "inverse", inv)

    @classmethod
    def identity(cls, chart: Chart):
        return cls(chart, chart, tuple(chart.vars()), tuple(chart.vars()))

    @property
    def has_inverse(self) -> bool:
        return self.inverse is not None

    def require_inverse(self) -> tuple[ScalarExpr, ...]:
        if self.inverse is None:
            raise ValueError("this operation needs a closed-form inverse")
        return self.inverse

    def inverted(self) -> "DiffeoSpec":
        return DiffeoSpec(self.target, self.source, self.require_inverse(), self.forward)

    def jacobian(self) -> list[list[ScalarExpr]]:
        """J[j][i] = d psi^j / d x^i (source coordinates)."""
        return [[E.diff(f, x) for x in self.source.coords] for f in self.forward]

    def inverse_jacobian(self) -> list[list[ScalarExpr]]:
        inv = self.require_inverse()
        return [[E.diff(g, y) for y in self.target.coords] for g in inv]

    def to_source(self) -> dict[str, ScalarExpr]:
        """Substitution replacing source coordinates by the inverse map."""
        return dict(zip(self.source.coords, self.require_inverse()))

    def to_target(self) -> dict[str, ScalarExpr]:
        return dict(zip(self.target.coords, self.forward))

    def compose(self, first: "DiffeoSpec") -> "DiffeoSpec":
        """self o first."""
        _check_same(first.target, self.source)
        fwd = E.substitute_many(self.forward, first.to_target())
        inv = None
        if self.inverse is not None and first.inverse is not None:
            inv = E.substitute_many(first.inverse, dict(zip(first.target.coords, self.inverse)))
        return DiffeoSpec(first.source, self.target, tuple(fwd), tuple(inv) if inv else None)

    def map_points(self, pts) -> dict[str, np.ndarray]:
        vals = _eval_array(self.forward, pts)
        return dict(zip(self.target.coords, vals))

    def inverse_points(self, pts) -> dict[str, np.ndarray]:
        if self.inverse is not None:
            vals = _eval_array(self.inverse, pts)
            return dict(zip(self.source.coords, vals))
        if self.inverse_fn is not None:
            return self.inverse_fn(pts)
        raise ValueError("no inverse available")

    def check_inverse(self, samples: int = 50, seed: int = 0, tol: float = 1e-8) -> float:
        """Max deviation of psi(psi^-1(y)) from y over target samples."""
        pts = self.target.sample(samples, seed)
        back = self.map_points(self.inverse_points(pts))
        err = max(float(np.max(np.abs(back[c] - pts[c]))) for c in self.target.coords)
        if err > tol:
            raise ValueError(f"psi o psi^-1 deviates from the identity by {err:.3g}")
        return err


@dataclass(eq=False)
class BiLagrangianStructure:
    chart: Chart
    omega: DifferentialForm
    F1: FoliationFrame
    F2: FoliationFrame
    base: "BiLagrangianStructure | None" = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for obj in (self.omega, self.F1, self.F2):
            _check_same(self.chart, obj.chart)
        if self.omega.degree != 2:
            raise ValueError("omega must be a 2-form")

    @property
    def n(self) -> int:
        return self.chart.dim // 2

    @property
    def frame(self) -> tuple[VectorField, ...]:
        return self.F1.fields + self.F2.fields


# ---------------------------------------------------------------------------
# operations


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y]^j = X(Y^j) - Y(X^j)."""
    _check_same(X.chart, Y.chart)
    return VectorField(X.chart, tuple(E.sub(X.apply(yj), Y.apply(xj)) for xj, yj in zip(X.comps, Y.comps)))


def exterior_derivative(alpha: DifferentialForm) -> DifferentialForm:
    chart = alpha.chart
    if alpha.degree >= chart.dim:
        raise ValueError(f"d of a top-degree ({alpha.degree}) form on a {chart.dim}-dimensional chart")
    acc: dict[tuple[int, ...], list[ScalarExpr]] = {}
    for idx, c in alpha.coeffs.items():
        for k, x in enumerate(chart.coords):
            dc = E.diff(c, x)
            if dc.is_zero():
                continue
            s = _sort_indices((k,) + idx)
            if s is None:
                continue
            sign, key = s
            acc.setdefault(key, []).append(dc if sign > 0 else E.neg(dc))
    return DifferentialForm(chart, alpha.degree + 1, {k: esum(v) for k, v in acc.items()})


def pushforward_field(psi: DiffeoSpec, X: VectorField) -> VectorField:
    """(psi_* X)^j = (d psi^j/dx^i X^i) o psi^-1."""
    _check_same(X.chart, psi.source)
    back = psi.to_source()
    J = psi.jacobian()
    comps = [esum(E.mul(J[j][i], X.comps[i]) for i in range(psi.source.dim)) for j in range(psi.target.dim)]
    return VectorField(psi.target, tuple(E.substitute_many(comps, back)))


def pullback_form(psi: DiffeoSpec, omega: DifferentialForm) -> DifferentialForm:
    """psi^* omega for omega on the target chart of psi."""
    _check_same(omega.chart, psi.target)
    k = omega.degree
    if k > psi.source.dim:
        raise ValueError("form degree exceeds source dimension")
    if k == 0:
        return DifferentialForm(psi.source, 0, {(): E.substitute(c, psi.to_target()) for c in omega.coeffs.values()})
    J = psi.jacobian()
    coeffs_at_psi = dict(zip(omega.coeffs, E.substitute_many(list(omega.coeffs.values()), psi.to_target())))
    out: dict[tuple[int, ...], ScalarExpr] = {}
    for J_idx in itertools.combinations(range(psi.source.dim), k):
        terms = []
        for I_idx, c in coeffs_at_psi.items():
            minor = [[J[i][j] for j in J_idx] for i in I_idx]
            terms.append(E.mul(c, det(minor)))
        out[J_idx] = esum(terms)
    return DifferentialForm(psi.source, k, out)


def push_structure(psi: DiffeoSpec, B: BiLagrangianStructure) -> BiLagrangianStructure:
    """((psi^-1)^* w, psi_* F1, psi_* F2)."""
    omega = pullback_form(psi.inverted(), B.omega)
    F1 = FoliationFrame(psi.target, tuple(pushforward_field(psi, X) for X in B.F1))
    F2 = FoliationFrame(psi.target, tuple(pushforward_field(psi, X) for X in B.F2))
    return BiLagrangianStructure(psi.target, omega, F1, F2)


# symbolic linear algebra ------------------------------------------------------


def det(M: Sequence[Sequence[ScalarExpr]]) -> ScalarExpr:
    """Determinant by Laplace expansion with minor memoisation."""
    n = len(M)
    if n == 0:
        return E.ONE
    memo: dict[tuple[int, ...], ScalarExpr] = {}

    def minor(row: int, cols: tuple[int, ...]) -> ScalarExpr:
        if not cols:
            return E.ONE
        if cols in memo:
            return memo[cols]
        terms = []
        for pos, c in enumerate(cols):
            a = M[row][c]
            if a.is_zero():
                continue
            sub_ = minor(row + 1, cols[:pos] + cols[pos + 1:])
            if sub_.is_zero():
                continue
            t = E.mul(a, sub_)
            terms.append(t if pos % 2 == 0 else E.neg(t))
        memo[cols] = esum(terms)
        return memo[cols]

    return minor(0, tuple(range(n)))


def inverse(M: Sequence[Sequence[ScalarExpr]]) -> list[list[ScalarExpr]]:
    """Symbolic inverse via the adjugate."""
    n = len(M)
    D = det(M)
    if D.is_zero():
        raise RankDeficiencyError("matrix is symbolically singular")
    inv = [[E.ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            sub_ = [[M[r][c] for c in range(n) if c != j] for r in range(n) if r != i]
            cof = det(sub_)
            if (i + j) % 2:
                cof = E.neg(cof)
            inv[j][i] = E.div(cof, D) if not cof.is_zero() else E.ZERO
    return inv


def matvec(M, v) -> list[ScalarExpr]:
    return [esum(E.mul(a, b) for a, b in zip(row, v)) for row in M]


# numerical checks -------------------------------------------------------------


@dataclass
class Check:
    ok: bool
    reason: str = ""
    residual: float = 0.0
    location: dict | None = None
    rank: int | None = None

    def __bool__(self):
        return self.ok


def _loc(pts, i) -> dict:
    return {k: float(np.asarray(v)[i]) for k, v in pts.items()}


def _span_residual(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Relative least-squares residual of b against the columns of A, per sample."""
    if A.shape[2] == 0:
        return np.linalg.norm(b, axis=1) / (1.0 + np.linalg.norm(b, axis=1))
    proj = A @ (np.linalg.pinv(A) @ b[:, :, None])
    r = np.linalg.norm(proj[:, :, 0] - b, axis=1)
    return r / (1.0 + np.linalg.norm(b, axis=1))


def min_singular(A: np.ndarray) -> np.ndarray:
    if A.shape[2] == 0:
        return np.full(A.shape[0], np.inf)
    return np.linalg.svd(A, compute_uv=False)[:, -1]


def frobenius_check(F: FoliationFrame, samples=50, seed: int = 0, tol: float = SPAN_TOL) -> Check:
    """Involutivity: every pairwise bracket lies in the frame span."""
    pts = _points(F.chart, samples, seed)
    A = F.evaluate(pts)
    sv = min_singular(A)
    bad = np.nonzero(sv <= tol)[0]
    if bad.size:
        raise RankDeficiencyError(f"frame rank drops below {F.rank}", _loc(pts, bad[0]))
    worst, where = 0.0, None
    for i, j in itertools.combinations(range(F.rank), 2):
        b = lie_bracket(F.fields[i], F.fields[j]).evaluate(pts).T
        r = _span_residual(A, b)
        k = int(np.argmax(r))
        if r[k] > worst:
            worst, where = float(r[k]), _loc(pts, k)
    ok = worst <= tol
    return Check(ok, "" if ok else "bracket leaves the distribution", worst, None if ok else where)


def is_symplectic(omega: DifferentialForm, samples=50, seed: int = 0, tol: float = SYMBOLIC_TOL,
                  det_floor: float = 1e-10) -> Check:
    chart = omega.chart
    if omega.degree != 2:
        return Check(False, "not a 2-form")
    if chart.dim % 2:
        return Check(False, "odd-dimensional chart")
    # a top-degree form is closed for free
    d_coeffs = exterior_derivative(omega).coeffs if omega.degree < chart.dim else {}
    for idx, c in d_coeffs.items():
        cmp = E.approx_equal(c, E.ZERO, chart.domain, 100, tol)
        if not cmp:
            return Check(False, f"d(omega) has nonzero component {idx}", cmp.max_error, cmp.witness)
    pts = _points(chart, samples, seed)
    dets = np.linalg.det(omega.evaluate_matrix(pts))
    k = int(np.argmin(np.abs(dets)))
    if abs(dets[k]) <= det_floor:
        return Check(False, "degenerate at sample", float(abs(dets[k])), _loc(pts, k))
    return Check(True, "", float(abs(dets[k])))


def _pairing_residual(omega: DifferentialForm, A: np.ndarray, B: np.ndarray, pts) -> tuple[float, int]:
    W = omega.evaluate_matrix(pts)
    val = np.einsum("sai,sab,sbj->sij", A, W, B)
    scale = np.einsum("sai,sab,sbj->sij", np.abs(A), np.abs(W), np.abs(B))
    r = np.abs(val) / (1.0 + scale)
    flat = r.reshape(r.shape[0], -1)
    worst = flat.max(axis=1) if flat.size else np.zeros(r.shape[0])
    k = int(np.argmax(worst)) if worst.size else 0
    return (float(worst[k]) if worst.size else 0.0), k


def is_lagrangian(F: FoliationFrame, omega: DifferentialForm, samples=50, seed: int = 0,
                  tol: float = SPAN_TOL) -> Check:
    _check_same(F.chart, omega.chart)
    n = F.chart.dim // 2
    pts = _points(F.chart, samples, seed)
    A = F.evaluate(pts)
    rank = int(np.min(np.linalg.matrix_rank(A, tol=tol))) if F.rank else 0
    if F.rank != n or rank != n:
        return Check(False, f"rank {rank} != n = {n}", rank=rank)
    worst, k = _pairing_residual(omega, A, A, pts)
    ok = worst <= tol
    return Check(ok, "" if ok else "omega does not vanish on the frame", worst,
                 None if ok else _loc(pts, k), rank=rank)


@dataclass
class BiLagrangianReport:
    symplectic: Check
    involutive1: Check
    involutive2: Check
    lagrangian1: Check
    lagrangian2: Check
    transversal: Check

    @property
    def passed(self) -> bool:
        return all(bool(c) for c in self.checks().values())

    def checks(self) -> dict[str, Check]:
        return {"symplectic": self.symplectic, "F1_involutive": self.involutive1, "F2_involutive": self.involutive2,
                "F1_lagrangian": self.lagrangian1, "F2_lagrangian": self.lagrangian2,
                "transversal": self.transversal}

    def to_dict(self) -> dict:
        out = {"passed": self.passed}
        for name, c in self.checks().items():
            d = {"ok": bool(c)}
            if c.reason:
                d["reason"] = c.reason
            out[name] = d
        return out

    def __bool__(self):
        return self.passed


def _safe_frobenius(F, samples, seed) -> Check:
    try:
        return frobenius_check(F, samples, seed)
    except RankDeficiencyError as exc:
        return Check(False, str(exc), location=exc.location)


def validate_bilagrangian(B: BiLagrangianStructure, samples=50, seed: int = 0) -> BiLagrangianReport:
    pts = _points(B.chart, samples, seed)
    both = np.concatenate([B.F1.evaluate(pts), B.F2.evaluate(pts)], axis=2)
    if both.shape[2] != B.chart.dim:
        trans = Check(False, f"combined frame has {both.shape[2]} fields, need {B.chart.dim}")
    else:
        sv = min_singular(both)
        k = int(np.argmin(sv))
        trans = Check(bool(sv[k] > SPAN_TOL), "" if sv[k] > SPAN_TOL else "foliations not transverse",
                      float(sv[k]), _loc(pts, k))
    return BiLagrangianReport(
        is_symplectic(B.omega, pts),
        _safe_frobenius(B.F1, pts, seed),
        _safe_frobenius(B.F2, pts, seed),
        is_lagrangian(B.F1, B.omega, pts),
        is_lagrangian(B.F2, B.omega, pts),
        trans,
    )


def canonical_form(chart: Chart) -> DifferentialForm:
    """sum_i dq^i ^ dp^i for coordinates ordered (p^1..p^n, q^1..q^n)."""
    n = chart.dim // 2
    return DifferentialForm(chart, 2, {(i, n + i): E.const(-1) for i in range(n)})


def adapted_chart_check(B: BiLagrangianStructure, samples=50, seed: int = 0, tol: float = SPAN_TOL) -> Check:
    """F1 = span d_p, F2 = span d_q pointwise, and omega = sum dq^i ^ dp^i."""
    n = B.n
    pts = _points(B.chart, samples, seed)
    for name, F, off in (("F1", B.F1, slice(n, 2 * n)), ("F2", B.F2, slice(0, n))):
        A = F.evaluate(pts)
        if F.rank != n:
            return Check(False, f"{name} has rank {F.rank}")
        stray = np.max(np.abs(A[:, off, :])) / (1.0 + np.max(np.abs(A))) if A.size else 0.0
        if stray > tol:
            return Check(False, f"{name} is not coordinate-aligned", float(stray))
        if np.min(min_singular(A)) <= tol:
            return Check(False, f"{name} loses rank")
    target = canonical_form(B.chart)
    for i, j in itertools.combinations(range(B.chart.dim), 2):
        cmp = E.approx_equal(B.omega.coeffs.get((i, j), E.ZERO), target.coeffs.get((i, j), E.ZERO),
                             B.chart.domain, 50, SYMBOLIC_TOL, seed)
        if not cmp:
            return Check(False, "omega is not canonical", cmp.max_error, cmp.witness)
    return Check(True)
