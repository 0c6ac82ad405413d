"""Tangent and cotangent prolongations of bi-Lagrangian data.

Coordinates on TM are ``(x, v_x)``; on T*M they are ``(x, xi1..xim)``.
Complete and vertical lifts use the classical coordinate formulas and can
check themselves against their defining action identities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as E
from .expr import Domain, ScalarExpr, esum
from .geometry import (BiLagrangianStructure, Chart, DiffeoSpec, DifferentialForm,
                       FoliationFrame, TensorField, VectorField, _check_same, _eval_array, _points,
                       _span_residual, frobenius_check, inverse, is_symplectic,
                       matvec, pullback_form, push_structure)
from .hess import ConnectionTable

LIFT_TOL = 1e-9
DIAGRAM_TOL = 1e-8
KINDS = ("vertical", "complete")


class LiftIdentityError(ArithmeticError):
    """A lift failed the identity that defines it."""


class NotAdaptedError(ValueError):
    pass


class NotSymplecticError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LiftedChart(Chart):
    base: Chart = None
    kind: str = "tangent"
    fiber: tuple[str, ...] = ()

    def __post_init__(self):
        super().__post_init__()
        if self.kind not in ("tangent", "cotangent"):
            raise ValueError(f"unknown bundle kind {self.kind!r}")
        if self.coords != self.base.coords + tuple(self.fiber) or len(self.fiber) != self.base.dim:
            raise ValueError("lifted coordinates must be base coordinates followed by fiber coordinates")

    @property
    def m(self) -> int:
        return self.base.dim

    def fiber_index(self, i: int) -> int:
        return self.m + i


def _bundle(base: Chart, kind: str, fiber: Sequence[str], prefix: str, fiber_bound: float) -> LiftedChart:
    fiber = tuple(fiber)
    clash = set(fiber) & set(base.coords)
    if clash:
        raise ValueError(f"fiber names {sorted(clash)} collide with base coordinates")
    bounds = dict(base.domain.bounds)
    bounds.update({f: (-fiber_bound, fiber_bound) for f in fiber})
    dom = Domain(bounds, base.domain.periodic)
    return LiftedChart(prefix + base.name, base.coords + fiber, dom, base, kind, fiber)


def tangent_chart(base: Chart, fiber: Sequence[str] | None = None, fiber_bound: float = 1.0) -> LiftedChart:
    return _bundle(base, "tangent", fiber or [f"v_{c}" for c in base.coords], "T", fiber_bound)


def cotangent_chart(base: Chart, fiber: Sequence[str] | None = None, fiber_bound: float = 1.0) -> LiftedChart:
    return _bundle(base, "cotangent", fiber or [f"xi{i + 1}" for i in range(base.dim)], "T*", fiber_bound)


def _require(L: Chart, kind: str):
    if not isinstance(L, LiftedChart) or L.kind != kind:
        raise ValueError(f"this operation needs a {kind} chart")


def _kind(kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"lift kind must be one of {KINDS}, got {kind!r}")
    return kind


# random probes for the self checks --------------------------------------------


def random_scalar(coords: Sequence[str], rng: np.random.Generator) -> ScalarExpr:
    """Small random polynomial plus a sine, used to probe lift identities."""
    xs = [E.var(c) for c in coords]
    terms = [E.const(float(np.round(rng.normal(), 3)))]
    for i, x in enumerate(xs):
        terms.append(E.mul(E.const(float(np.round(rng.normal(), 3))), x))
        for y in xs[i:]:
            terms.append(E.mul(E.const(float(np.round(rng.normal(), 3))), E.mul(x, y)))
    k = int(rng.integers(len(xs)))
    terms.append(E.sin(E.mul(E.const(float(np.round(rng.normal(), 3))), xs[k])))
    return esum(terms)


def random_field(chart: Chart, rng: np.random.Generator) -> VectorField:
    return VectorField(chart, tuple(random_scalar(chart.coords, rng) for _ in chart.coords))


def random_one_form(chart: Chart, rng: np.random.Generator) -> DifferentialForm:
    return DifferentialForm(chart, 1, {(i,): random_scalar(chart.coords, rng) for i in range(chart.dim)})


def _assert_equal(lhs: ScalarExpr, rhs: ScalarExpr, L: Chart, what: str, seed: int):
    cmp = E.approx_equal(lhs, rhs, L.domain, samples=20, tol=LIFT_TOL, seed=seed)
    if not cmp:
        raise LiftIdentityError(f"{what} fails by {cmp.max_error:.3g} at {cmp.witness}")


# tangent bundle lifts ---------------------------------------------------------


def lift_scalar(f: ScalarExpr, kind: str, L: LiftedChart) -> ScalarExpr:
    """f^v = f o pi, f^c = v^i df/dx^i."""
    _require(L, "tangent")
    f = L.base.parse(f)
    if _kind(kind) == "vertical":
        return f
    return esum(E.mul(E.var(v), E.diff(f, x)) for x, v in zip(L.base.coords, L.fiber))


def _on_base(obj, L: LiftedChart):
    _check_same(L.base, obj.chart)


def lift_field(X: VectorField, kind: str, L: LiftedChart, check: bool = True, seed: int = 0) -> VectorField:
    """X^v = X^i d/dv^i and X^c = X^i d/dx^i + v^j dX^i/dx^j d/dv^i."""
    _require(L, "tangent")
    _on_base(X, L)
    m = L.m
    if _kind(kind) == "vertical":
        out = VectorField(L, tuple([E.ZERO] * m) + X.comps)
    else:
        out = VectorField(L, X.comps + tuple(lift_scalar(c, "complete", L) for c in X.comps))
    if check:
        rng = np.random.default_rng(seed)
        for t in range(3):
            f = random_scalar(L.base.coords, rng)
            fc = lift_scalar(f, "complete", L)
            rhs = lift_scalar(X.apply(f), "vertical" if kind == "vertical" else "complete", L)
            _assert_equal(out.apply(fc), rhs, L, f"X^{kind[0]}(f^c) identity", seed + t)
    return out


def _lift_coeffs(coeffs: dict[tuple[int, ...], ScalarExpr], kind: str, L: LiftedChart):
    """Product-rule lift of sum c_I dx^I, using (dx)^v = dx and (dx)^c = dv."""
    if _kind(kind) == "vertical":
        return dict(coeffs)
    out: dict[tuple[int, ...], list[ScalarExpr]] = {}
    m = L.m
    for idx, c in coeffs.items():
        out.setdefault(idx, []).append(lift_scalar(c, "complete", L))
        for s in range(len(idx)):
            key = idx[:s] + (m + idx[s],) + idx[s + 1:]
            out.setdefault(key, []).append(c)
    return {k: esum(v) for k, v in out.items()}


def lift_form(alpha: DifferentialForm, kind: str, L: LiftedChart, check: bool = True,
              seed: int = 0) -> DifferentialForm:
    """Vertical or complete lift of a 1-form."""
    _require(L, "tangent")
    _on_base(alpha, L)
    if alpha.degree != 1:
        raise ValueError("lift_form handles 1-forms; use lift_tensor_complete for higher degree")
    out = DifferentialForm(L, 1, _lift_coeffs(alpha.coeffs, kind, L))
    if check:
        rng = np.random.default_rng(seed)
        for t in range(3):
            Y = random_field(L.base, rng)
            lhs = out(lift_field(Y, "complete", L, check=False))
            rhs = lift_scalar(alpha(Y), kind, L)
            _assert_equal(lhs, rhs, L, f"alpha^{kind[0]}(Y^c) identity", seed + t)
    return out


def lift_tensor_complete(T: DifferentialForm | TensorField, L: LiftedChart, check: bool = True,
                         seed: int = 0) -> DifferentialForm | TensorField:
    """Complete lift of a covariant tensor or form by the product rules.

    The result satisfies T^c(X1^c, .., Xr^c) = (T(X1, .., Xr))^c, which is
    re-checked on random fields when ``check`` is set.
    """
    _require(L, "tangent")
    _on_base(T, L)
    if isinstance(T, DifferentialForm):
        out = DifferentialForm(L, T.degree, _lift_coeffs(T.coeffs, "complete", L))
        r = T.degree
    elif isinstance(T, TensorField):
        out = TensorField(L, T.rank, _lift_coeffs(T.comps, "complete", L))
        r = T.rank
    else:
        raise TypeError(f"unsupported tensor type {type(T).__name__}")
    if check and r:
        rng = np.random.default_rng(seed)
        for t in range(2):
            Xs = [random_field(L.base, rng) for _ in range(r)]
            lhs = out(*[lift_field(X, "complete", L, check=False) for X in Xs])
            _assert_equal(lhs, lift_scalar(T(*Xs), "complete", L), L, "T^c(X^c..) identity", seed + t)
    return out


def lift_order(m: int, split: int | None) -> tuple[list[int], list[int]]:
    """Positions of E_i^c and E_i^v in the lifted frame.

    With a split the order is F1^c, F1^v, F2^c, F2^v so that each lifted
    foliation is a contiguous block.
    """
    blocks = [range(0, split), range(split, m)] if split else [range(m)]
    pos_c, pos_v = [0] * m, [0] * m
    k = 0
    for b in blocks:
        for i in b:
            pos_c[i] = k
            k += 1
        for i in b:
            pos_v[i] = k
            k += 1
    return pos_c, pos_v


def lift_frame(frame: Sequence[VectorField], L: LiftedChart, split: int | None = None) -> tuple[VectorField, ...]:
    pos_c, pos_v = lift_order(len(frame), split)
    out: list[VectorField | None] = [None] * (2 * len(frame))
    for i, X in enumerate(frame):
        out[pos_c[i]] = lift_field(X, "complete", L, check=False)
        out[pos_v[i]] = lift_field(X, "vertical", L, check=False)
    return tuple(out)


def lift_connection_complete(C: ConnectionTable, L: LiftedChart) -> ConnectionTable:
    """Complete lift of a connection, tabulated in the lifted frame."""
    _require(L, "tangent")
    _check_same(L.base, C.chart)
    m = C.dim
    pos_c, pos_v = lift_order(m, C.split)
    M = 2 * m
    G = [[[E.ZERO] * M for _ in range(M)] for _ in range(M)]
    for k in range(m):
        for i in range(m):
            for j in range(m):
                g = C.gamma[k][i][j]
                if g.is_zero():
                    continue
                G[pos_c[k]][pos_c[i]][pos_c[j]] = g
                G[pos_v[k]][pos_c[i]][pos_c[j]] = lift_scalar(g, "complete", L)
                G[pos_v[k]][pos_c[i]][pos_v[j]] = g
                G[pos_v[k]][pos_v[i]][pos_c[j]] = g
    split = 2 * C.split if C.split else None
    return ConnectionTable(L, lift_frame(C.frame, L, C.split), G, split, {"lift": "complete"})


def lift_foliation_complete(F: FoliationFrame, L: LiftedChart, check: bool = True, samples: int = 30,
                            seed: int = 0) -> FoliationFrame:
    """Frame {E^c} followed by {E^v}."""
    _require(L, "tangent")
    _on_base(F, L)
    out = FoliationFrame(L, lift_frame(F.fields, L))
    if check and F.rank:
        c = frobenius_check(out, samples, seed)
        if not c:
            raise LiftIdentityError(f"lifted foliation is not involutive: {c.reason}")
    return out


# cotangent bundle -------------------------------------------------------------


def tautological_and_canonical(L: LiftedChart) -> tuple[DifferentialForm, DifferentialForm]:
    """theta = xi_i dx^i and dtheta = dxi_i ^ dx^i."""
    _require(L, "cotangent")
    m = L.m
    theta = DifferentialForm(L, 1, {(i,): E.var(L.fiber[i]) for i in range(m)})
    dtheta = DifferentialForm(L, 2, {(m + i, i): E.ONE for i in range(m)})
    return theta, dtheta


def _base_pullback(omega: DifferentialForm, L: LiftedChart) -> DifferentialForm:
    _on_base(omega, L)
    return DifferentialForm(L, omega.degree, dict(omega.coeffs))


def omega_tilde(omega: DifferentialForm, L: LiftedChart, samples: int = 30, seed: int = 0) -> DifferentialForm:
    _require(L, "cotangent")
    c = is_symplectic(omega, samples, seed)
    if not c:
        raise NotSymplecticError(f"base form is not symplectic: {c.reason}")
    return _base_pullback(omega, L) + tautological_and_canonical(L)[1]


def adapted_indices(F: FoliationFrame, samples: int = 30, seed: int = 0, tol: float = 1e-10) -> list[int]:
    """Coordinate indices whose fields span F; raises if F is not coordinate-aligned."""
    pts = _points(F.chart, samples, seed)
    A = F.evaluate(pts)
    active = [r for r in range(F.chart.dim) if np.max(np.abs(A[:, r, :]), initial=0.0) > tol]
    if len(active) != F.rank:
        raise NotAdaptedError(f"foliation is not spanned by coordinate fields in chart {F.chart.name}; "
                              "change to adapted coordinates first")
    if F.rank:
        sv = np.linalg.svd(A[:, active, :], compute_uv=False)[:, -1]
        if np.min(sv) <= tol:
            raise NotAdaptedError("foliation frame drops rank on its coordinate block")
    return active


def conormal_foliation(F: FoliationFrame, L: LiftedChart, samples: int = 30, seed: int = 0) -> FoliationFrame:
    """{d/dx^i : i in S} and {d/dxi_j : j not in S} for F spanned by the fields of S."""
    _require(L, "cotangent")
    _on_base(F, L)
    S = adapted_indices(F, samples, seed)
    fields = [L.coordinate_field(L.base.coords[i]) for i in S]
    fields += [L.coordinate_field(L.fiber[j]) for j in range(L.m) if j not in S]
    return FoliationFrame(L, tuple(fields))


def _rehome(exprs, src: Chart, dst: Chart):
    if src.coords == dst.coords:
        return list(exprs)
    return E.substitute_many(list(exprs), dict(zip(src.coords, [E.var(c) for c in dst.coords])))


def cotangent_lift_diffeo(psi: DiffeoSpec) -> DiffeoSpec:
    """(x, xi) -> (psi(x), xi o d(psi^-1) at psi(x))."""
    inv = psi.require_inverse()
    S, T = cotangent_chart(psi.source), cotangent_chart(psi.target)
    m = psi.source.dim
    Jinv = psi.inverse_jacobian()           # d(psi^-1)^i / dy^j, target coordinates
    J = psi.jacobian()                      # d psi^j / dx^i, source coordinates
    at_x = psi.to_target()
    at_y = psi.to_source()
    xi = [E.var(n) for n in S.fiber]
    eta = [E.var(n) for n in T.fiber]
    fwd_fiber = [esum(E.mul(xi[i], E.substitute(Jinv[i][j], at_x)) for i in range(m)) for j in range(m)]
    inv_fiber = [esum(E.mul(eta[j], E.substitute(J[j][i], at_y)) for j in range(m)) for i in range(m)]
    fwd = list(psi.forward) + fwd_fiber
    back = list(inv) + inv_fiber
    return DiffeoSpec(S, T, tuple(fwd), tuple(back))


def tangent_lift_diffeo(psi: DiffeoSpec) -> DiffeoSpec:
    """(x, v) -> (psi(x), Dpsi(x) v)."""
    inv = psi.require_inverse()
    S, T = tangent_chart(psi.source), tangent_chart(psi.target)
    m = psi.source.dim
    J, Jinv = psi.jacobian(), psi.inverse_jacobian()
    v = [E.var(n) for n in S.fiber]
    w = [E.var(n) for n in T.fiber]
    fwd = list(psi.forward) + [esum(E.mul(J[j][i], v[i]) for i in range(m)) for j in range(m)]
    back = list(inv) + [esum(E.mul(Jinv[i][j], w[j]) for j in range(m)) for i in range(m)]
    return DiffeoSpec(S, T, tuple(fwd), tuple(back))


def musical_map(omega: DifferentialForm, L: LiftedChart) -> DiffeoSpec:
    """(x, v) -> (x, xi) with xi_j = omega(v, d_j) = v^i omega_ij."""
    _require(L, "tangent")
    _on_base(omega, L)
    K = cotangent_chart(L.base)
    W = omega.matrix()
    m = L.m
    v = [E.var(n) for n in L.fiber]
    xi = [E.var(n) for n in K.fiber]
    fwd = list(L.base.vars()) + [esum(E.mul(v[i], W[i][j]) for i in range(m)) for j in range(m)]
    WT = [[W[j][i] for j in range(m)] for i in range(m)]
    back = list(K.base.vars()) + matvec(inverse(WT), xi)
    return DiffeoSpec(L, K, tuple(fwd), tuple(back))


def musical_transport(B: BiLagrangianStructure, base_omega: DifferentialForm | None = None) -> BiLagrangianStructure:
    """Push a structure on TM to T*M through v -> omega(v, .)."""
    L = B.chart
    _require(L, "tangent")
    omega = base_omega if base_omega is not None else (B.base.omega if B.base is not None else None)
    if omega is None:
        raise ValueError("musical transport needs the base symplectic form")
    c = is_symplectic(omega, 30, 0)
    if not c:
        raise NotSymplecticError(f"base form is degenerate: {c.reason}")
    phi = musical_map(omega, L)
    out = push_structure(phi, B)
    out.base = B.base
    out.provenance = dict(B.provenance, transport="musical")
    return out


# the three lifted structures --------------------------------------------------


LIFT_NAMES = {1: "(T*M, dtheta, N*F1, N*F2)", 2: "(T*M, omega~, N*F1, N*F2)", 3: "(TM, omega^c, F1^c, F2^c)"}


def build_lifted_structure(B: BiLagrangianStructure, i: int, check: bool = True) -> BiLagrangianStructure:
    if i not in LIFT_NAMES:
        raise ValueError(f"lifted structure index must be 1, 2 or 3, got {i!r}")
    prov = {"lift": i, "name": LIFT_NAMES[i]}
    if i in (1, 2):
        L = cotangent_chart(B.chart)
        F1, F2 = conormal_foliation(B.F1, L), conormal_foliation(B.F2, L)
        omega = tautological_and_canonical(L)[1] if i == 1 else omega_tilde(B.omega, L)
    else:
        L = tangent_chart(B.chart)
        omega = lift_tensor_complete(B.omega, L, check=check)
        F1 = lift_foliation_complete(B.F1, L, check=check)
        F2 = lift_foliation_complete(B.F2, L, check=check)
    return BiLagrangianStructure(L, omega, F1, F2, base=B, provenance=prov)


def lifted_diffeo(psi: DiffeoSpec, i: int) -> DiffeoSpec:
    return cotangent_lift_diffeo(psi) if i in (1, 2) else tangent_lift_diffeo(psi)


def symplectomorphism_residual(psi: DiffeoSpec, omega: DifferentialForm, samples=30, seed: int = 0) -> float:
    """max |psi^* omega - omega| over source samples, omega read on both sides positionally."""
    _check_same(omega.chart, psi.source)
    target_omega = DifferentialForm(psi.target, 2, dict(zip(omega.coeffs, _rehome(omega.coeffs.values(),
                                                                                   psi.source, psi.target))))
    pulled = pullback_form(psi, target_omega)
    pts = _points(psi.source, samples, seed)
    a, b = pulled.evaluate_matrix(pts), omega.evaluate_matrix(pts)
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))


@dataclass
class DiagramReport:
    i: int
    adapted: bool
    inclusion: dict[str, bool | None] = field(default_factory=dict)
    inclusion_residual: dict[str, float | None] = field(default_factory=dict)
    form_residual: float | None = None
    tol: float = DIAGRAM_TOL
    reason: str = ""

    @property
    def forms_agree(self) -> bool:
        return self.form_residual is not None and self.form_residual <= self.tol

    @property
    def commutes(self) -> bool:
        return self.adapted and self.forms_agree and any(bool(v) for v in self.inclusion.values())

    def to_dict(self) -> dict:
        return {"i": self.i, "adapted": self.adapted, "inclusion": self.inclusion,
                "inclusion_residual": self.inclusion_residual, "form_residual": self.form_residual,
                "forms_agree": self.forms_agree, "commutes": self.commutes, "tol": self.tol, "reason": self.reason}


def diagram_commutes(B: BiLagrangianStructure, psi: DiffeoSpec, i: int, samples=30, seed: int = 0,
                     tol: float = DIAGRAM_TOL) -> DiagramReport:
    """Compare L_i(psi) applied to L_i(B) with L_i applied to psi_* B.

    The inclusion hypothesis is tested per instance only; nothing is
    asserted about when it holds in general.
    """
    r = symplectomorphism_residual(psi, B.omega, samples, seed)
    if r > tol:
        raise NotSymplecticError(f"psi does not preserve omega (residual {r:.3g})")
    pushed = push_structure(psi, B)
    lifted = build_lifted_structure(B, i, check=False)
    try:
        lifted_pushed = build_lifted_structure(pushed, i, check=False)
    except NotAdaptedError as exc:
        return DiagramReport(i, False, {"F1": None, "F2": None}, {"F1": None, "F2": None}, None, tol,
                             f"pushed structure is not in adapted coordinates: {exc}")
    Lpsi = lifted_diffeo(psi, i)
    pts = _points(Lpsi.source, samples, seed)
    img = Lpsi.map_points(pts)
    m = Lpsi.source.dim
    J = _eval_array([c for row in Lpsi.jacobian() for c in row], pts).reshape(m, m, -1).transpose(2, 0, 1)
    report = DiagramReport(i, True, tol=tol)
    for name, F, G in (("F1", lifted.F1, lifted_pushed.F1), ("F2", lifted.F2, lifted_pushed.F2)):
        moved = J @ F.evaluate(pts)
        target = G.evaluate(img)
        res = max(float(np.max(_span_residual(target, moved[:, :, k]))) for k in range(moved.shape[2]))
        report.inclusion[name] = res <= tol
        report.inclusion_residual[name] = res
    W_src = lifted.omega.evaluate_matrix(pts)
    W_tgt = lifted_pushed.omega.evaluate_matrix(img)
    pulled = np.transpose(J, (0, 2, 1)) @ W_tgt @ J
    report.form_residual = float(np.max(np.abs(pulled - W_src) / (1.0 + np.abs(W_src))))
    return report
