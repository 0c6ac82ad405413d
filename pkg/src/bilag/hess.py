"""Hess connection of a bi-Lagrangian structure, with torsion/curvature.

Connections are stored in a frame ``E_1..E_m`` (for a structure, the
concatenation of the F1 and F2 frames) as ``nabla_{E_i} E_j = G[k][i][j] E_k``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import expr as E
from .expr import ScalarExpr, esum
from .geometry import (BiLagrangianStructure, Chart, DiffeoSpec, RankDeficiencyError,
                       VectorField, _check_same, _eval_array, _loc, _points, _span_residual, inverse,
                       lie_bracket, matvec, pushforward_field)

HESS_TOL = 1e-8


class SingularPairingError(RankDeficiencyError):
    pass


class FrameAlgebra:
    """Symbolic inverse of a frame plus its structure functions."""

    def __init__(self, chart: Chart, frame: Sequence[VectorField]):
        self.chart = chart
        self.frame = tuple(frame)
        m = chart.dim
        if len(self.frame) != m:
            raise ValueError(f"a frame on a {m}-dimensional chart needs {m} fields, got {len(self.frame)}")
        self.matrix = [[self.frame[c].comps[r] for c in range(m)] for r in range(m)]
        self._brackets: dict[tuple[int, int], list[ScalarExpr]] = {}

    @cached_property
    def inverse(self) -> list[list[ScalarExpr]]:
        return inverse(self.matrix)

    def coords(self, X: VectorField) -> list[ScalarExpr]:
        """Frame components a^k with X = a^k E_k."""
        return matvec(self.inverse, X.comps)

    def bracket(self, i: int, j: int) -> list[ScalarExpr]:
        """Structure functions c^k_ij with [E_i, E_j] = c^k_ij E_k."""
        if (i, j) not in self._brackets:
            if i == j:
                self._brackets[(i, j)] = [E.ZERO] * self.chart.dim
            elif (j, i) in self._brackets:
                self._brackets[(i, j)] = [E.neg(c) for c in self._brackets[(j, i)]]
            else:
                self._brackets[(i, j)] = self.coords(lie_bracket(self.frame[i], self.frame[j]))
        return self._brackets[(i, j)]

    def combine(self, coeffs: Sequence[ScalarExpr]) -> VectorField:
        m = self.chart.dim
        return VectorField(self.chart, tuple(esum(E.mul(coeffs[k], self.frame[k].comps[r]) for k in range(m))
                                             for r in range(m)))


@dataclass(eq=False)
class ConnectionTable:
    chart: Chart
    frame: tuple[VectorField, ...]
    gamma: list[list[list[ScalarExpr]]]
    split: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame = tuple(self.frame)
        m = len(self.frame)
        if m != self.chart.dim:
            raise ValueError("frame size must equal chart dimension")
        if len(self.gamma) != m or any(len(r) != m or any(len(c) != m for c in r) for r in self.gamma):
            raise ValueError("Christoffel table must be m x m x m")

    @cached_property
    def algebra(self) -> FrameAlgebra:
        return FrameAlgebra(self.chart, self.frame)

    @property
    def dim(self) -> int:
        return len(self.frame)

    def G(self, k: int, i: int, j: int) -> ScalarExpr:
        return self.gamma[k][i][j]

    def nabla_frame(self, i: int, j: int) -> list[ScalarExpr]:
        return [self.gamma[k][i][j] for k in range(self.dim)]

    def evaluate(self, pts) -> np.ndarray:
        """Array of shape ``(N, k, i, j)``."""
        m = self.dim
        flat = [self.gamma[k][i][j] for k in range(m) for i in range(m) for j in range(m)]
        vals = _eval_array(flat, pts)
        return vals.reshape(m, m, m, -1).transpose(3, 0, 1, 2)

    def with_gamma(self, gamma) -> "ConnectionTable":
        return ConnectionTable(self.chart, self.frame, gamma, self.split, dict(self.meta))


def zero_table(m: int) -> list[list[list[ScalarExpr]]]:
    return [[[E.ZERO] * m for _ in range(m)] for _ in range(m)]


def pairing(B: BiLagrangianStructure) -> list[list[ScalarExpr]]:
    """P[j][l] = omega(E_j, E_{n+l}) between the F1 and F2 frames."""
    return [[B.omega(X, Y) for Y in B.F2] for X in B.F1]


def hess_connection(B: BiLagrangianStructure, samples=50, seed: int = 0,
                    det_floor: float = 1e-10) -> ConnectionTable:
    """The unique torsion-free connection with nabla omega = 0 preserving F1 and F2.

    Mixed covariant derivatives are projected brackets; the tangential ones
    come from dualising nabla omega = 0 through the F1 x F2 pairing.
    """
    n = B.n
    if B.F1.rank != n or B.F2.rank != n:
        raise ValueError("both foliations need rank n")
    P = pairing(B)
    pts = _points(B.chart, samples, seed)
    Pnum = _eval_array([c for row in P for c in row], pts).reshape(n, n, -1).transpose(2, 0, 1)
    dets = np.linalg.det(Pnum)
    k = int(np.argmin(np.abs(dets)))
    if abs(dets[k]) <= det_floor:
        raise SingularPairingError("omega pairing between F1 and F2 is singular", _loc(pts, k))
    Pinv = inverse(P)
    alg = FrameAlgebra(B.chart, B.frame)
    m = 2 * n
    G = zero_table(m)
    F1, F2 = range(n), range(n, m)

    # mixed pairs: nabla_X Y2 = pr2[X, Y2], nabla_Y X1 = pr1[Y, X1]
    for i in F1:
        for b in F2:
            c = alg.bracket(i, b)
            for k in F2:
                G[k][i][b] = c[k]
            c = alg.bracket(b, i)
            for k in F1:
                G[k][b][i] = c[k]

    # F1 tangential: sum_m G^m_ij P_ml = E_i(P_jl) - omega(E_j, pr2[E_i, E_{n+l}])
    for i in F1:
        for j in F1:
            rhs = []
            for l in range(n):
                c = alg.bracket(i, n + l)
                corr = esum(E.mul(c[kk], P[j][kk - n]) for kk in F2)
                rhs.append(E.sub(B.frame[i].apply(P[j][l]), corr))
            for mm in range(n):
                G[mm][i][j] = esum(E.mul(rhs[l], Pinv[l][mm]) for l in range(n))

    # F2 tangential: sum_m P_lm G^{n+m}_ab = E_a(P_lj) - omega(pr1[E_a, E_l], E_b)
    for a in F2:
        for b in F2:
            j = b - n
            rhs = []
            for l in range(n):
                c = alg.bracket(a, l)
                corr = esum(E.mul(c[kk], P[kk][j]) for kk in F1)
                rhs.append(E.sub(B.frame[a].apply(P[l][j]), corr))
            for mm in range(n):
                G[n + mm][a][b] = esum(E.mul(Pinv[mm][l], rhs[l]) for l in range(n))

    table = ConnectionTable(B.chart, B.frame, G, split=n)
    table.__dict__["algebra"] = alg
    return table


def covariant_derivative(C: ConnectionTable, X: VectorField, Y: VectorField, check_samples: int = 0,
                         seed: int = 0) -> VectorField:
    """nabla_X Y through the frame expansion and the Leibniz rule."""
    _check_same(C.chart, X.chart)
    _check_same(C.chart, Y.chart)
    if X.is_zero():
        return VectorField(C.chart, tuple([E.ZERO] * C.dim))
    alg = C.algebra
    a, b = alg.coords(X), alg.coords(Y)
    if check_samples:
        pts = _points(C.chart, check_samples, seed)
        for V, coef in ((X, a), (Y, b)):
            back = alg.combine(coef).evaluate(pts)
            ref = V.evaluate(pts)
            r = np.max(np.abs(back - ref) / (1.0 + np.abs(ref)))
            if r > HESS_TOL:
                raise RankDeficiencyError(f"frame expansion residual {r:.3g}")
    m = C.dim
    out = []
    for k in range(m):
        terms = [X.apply(b[k])]
        for i in range(m):
            if a[i].is_zero():
                continue
            for j in range(m):
                g = C.gamma[k][i][j]
                if g.is_zero() or b[j].is_zero():
                    continue
                terms.append(E.mul(E.mul(a[i], b[j]), g))
        out.append(esum(terms))
    return alg.combine(out)


def _torsion_terms(C: ConnectionTable, i: int, j: int, k: int) -> list[ScalarExpr]:
    c = C.algebra.bracket(i, j)
    return [C.gamma[k][i][j], E.neg(C.gamma[k][j][i]), E.neg(c[k])]


def _curvature_terms(C: ConnectionTable, i: int, j: int, k: int, mm: int) -> list[ScalarExpr]:
    """Frame coefficient m of R(E_i, E_j)E_k, split into its summands."""
    G, alg, d = C.gamma, C.algebra, C.dim
    terms = [C.frame[i].apply(G[mm][j][k]), E.neg(C.frame[j].apply(G[mm][i][k]))]
    for p in range(d):
        terms.append(E.mul(G[p][j][k], G[mm][i][p]))
        terms.append(E.neg(E.mul(G[p][i][k], G[mm][j][p])))
    c = alg.bracket(i, j)
    for l in range(d):
        terms.append(E.neg(E.mul(c[l], G[mm][l][k])))
    return [t for t in terms if not t.is_zero()]


def torsion(C: ConnectionTable) -> dict[tuple[int, int], VectorField]:
    m = C.dim
    out = {}
    for i, j in itertools.combinations(range(m), 2):
        out[(i, j)] = C.algebra.combine([esum(_torsion_terms(C, i, j, k)) for k in range(m)])
    return out


def curvature(C: ConnectionTable) -> dict[tuple[int, int, int], VectorField]:
    m = C.dim
    out = {}
    for i, j in itertools.combinations(range(m), 2):
        for k in range(m):
            out[(i, j, k)] = C.algebra.combine([esum(_curvature_terms(C, i, j, k, mm)) for mm in range(m)])
    return out


def _scaled_residual(groups: list[list[ScalarExpr]], pts) -> tuple[float, int]:
    """max_g |sum(g)| / (1 + sum |terms of g|) over samples."""
    flat = [t for g in groups for t in g]
    if not flat:
        return 0.0, 0
    vals = _eval_array(flat, pts)
    worst = np.zeros(vals.shape[1])
    pos = 0
    for g in groups:
        if g:
            v = vals[pos:pos + len(g)]
            worst = np.maximum(worst, np.abs(v.sum(axis=0)) / (1.0 + np.abs(v).sum(axis=0)))
        pos += len(g)
    k = int(np.argmax(worst))
    return float(worst[k]), k


def curvature_residual(C: ConnectionTable, samples=50, seed: int = 0) -> float:
    pts = _points(C.chart, samples, seed)
    m = C.dim
    groups = [_curvature_terms(C, i, j, k, mm)
              for i, j in itertools.combinations(range(m), 2) for k in range(m) for mm in range(m)]
    return _scaled_residual(groups, pts)[0]


@dataclass
class FlatnessReport:
    flat: bool
    residual: float
    statement: str

    def __bool__(self):
        return self.flat


def is_flat(C: ConnectionTable, samples=50, seed: int = 0, tol: float = HESS_TOL) -> FlatnessReport:
    r = curvature_residual(C, samples, seed)
    flat = r <= tol
    msg = ("affine: adapted charts exist around the sampled points" if flat
           else "curvature does not vanish at the sampled points")
    return FlatnessReport(flat, r, msg)


def pushforward_connection(psi: DiffeoSpec, C: ConnectionTable) -> ConnectionTable:
    """psi_* nabla_{psi^-1_* X} psi^-1_* Y, expressed in the frame psi_* E_i."""
    _check_same(C.chart, psi.source)
    back = psi.to_source()
    frame = tuple(pushforward_field(psi, X) for X in C.frame)
    m = C.dim
    flat = [C.gamma[k][i][j] for k in range(m) for i in range(m) for j in range(m)]
    moved = iter(E.substitute_many(flat, back))
    G = [[[next(moved) for _ in range(m)] for _ in range(m)] for _ in range(m)]
    return ConnectionTable(psi.target, frame, G, C.split, {"pushed_by": "diffeo"})


@dataclass
class HessReport:
    torsion: float
    parallel: float
    preservation: float
    tol: float = HESS_TOL
    location: dict | None = None

    @property
    def passed(self) -> bool:
        return max(self.torsion, self.parallel, self.preservation) <= self.tol

    def __bool__(self):
        return self.passed

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol,
                "residuals": {"torsion": self.torsion, "nabla_omega": self.parallel,
                              "preservation": self.preservation}}


def hess_verify(C: ConnectionTable, B: BiLagrangianStructure, samples=50, seed: int = 0,
                tol: float = HESS_TOL) -> HessReport:
    """Residuals of torsion, nabla omega and foliation preservation.

    Each residual is scaled by the magnitudes of the terms entering the
    identity, as in :func:`bilag.expr.approx_equal`.
    """
    _check_same(C.chart, B.chart)
    pts = _points(C.chart, samples, seed)
    m = C.dim
    tors = _scaled_residual([_torsion_terms(C, i, j, k)
                             for i, j in itertools.combinations(range(m), 2) for k in range(m)], pts)[0]

    W = [[B.omega(X, Y) for Y in C.frame] for X in C.frame]
    groups = []
    for a in range(m):
        for b, c in itertools.combinations(range(m), 2):
            g = [C.frame[a].apply(W[b][c])]
            g += [E.neg(E.mul(C.gamma[k][a][b], W[k][c])) for k in range(m)]
            g += [E.neg(E.mul(C.gamma[k][a][c], W[b][k])) for k in range(m)]
            groups.append([t for t in g if not t.is_zero()])
    par = _scaled_residual(groups, pts)[0]

    pres = 0.0
    for F in (B.F1, B.F2):
        A = F.evaluate(pts)
        for Y in F:
            for X in C.frame:
                v = covariant_derivative(C, X, Y).evaluate(pts).T
                pres = max(pres, float(np.max(_span_residual(A, v))))
    return HessReport(tors, par, pres, tol)


def hess_pointwise(B: BiLagrangianStructure, samples=50, seed: int = 0):
    """Solve the defining linear conditions for Christoffel values point by point.

    Independent of :func:`hess_connection`: brackets are expanded with a
    dense numeric solve, and the torsion, nabla-omega and preservation
    equations are stacked into one least-squares system per sample.
    Returns ``(gamma, rank_deficit, residual)`` with ``gamma`` of shape
    ``(N, k, i, j)``.
    """
    pts = _points(B.chart, samples, seed)
    frame = B.frame
    m, n = len(frame), B.n
    N = len(next(iter(pts.values())))
    Emat = np.concatenate([B.F1.evaluate(pts), B.F2.evaluate(pts)], axis=2)
    brackets = {}
    for i, j in itertools.combinations(range(m), 2):
        v = lie_bracket(frame[i], frame[j]).evaluate(pts).T
        brackets[(i, j)] = np.linalg.solve(Emat, v[:, :, None])[:, :, 0]
    Wexpr = [[B.omega(X, Y) for Y in frame] for X in frame]
    Wnum = _eval_array([w for row in Wexpr for w in row], pts).reshape(m, m, N)
    dW = _eval_array([frame[a].apply(Wexpr[b][c]) for a in range(m) for b in range(m) for c in range(m)],
                     pts).reshape(m, m, m, N)

    def col(k, i, j):
        return (k * m + i) * m + j

    block = [0] * n + [1] * n
    gammas = np.zeros((N, m, m, m))
    deficit = np.zeros(N, dtype=int)
    resid = np.zeros(N)
    for s in range(N):
        rows, rhs = [], []
        for i, j in itertools.combinations(range(m), 2):
            for k in range(m):
                r = np.zeros(m ** 3)
                r[col(k, i, j)] += 1.0
                r[col(k, j, i)] -= 1.0
                rows.append(r)
                rhs.append(brackets[(i, j)][s, k])
        for a in range(m):
            for b in range(m):
                for c in range(m):
                    r = np.zeros(m ** 3)
                    for k in range(m):
                        r[col(k, a, b)] += Wnum[k, c, s]
                        r[col(k, a, c)] += Wnum[b, k, s]
                    rows.append(r)
                    rhs.append(dW[a, b, c, s])
        for a in range(m):
            for j in range(m):
                for k in range(m):
                    if block[k] != block[j]:
                        r = np.zeros(m ** 3)
                        r[col(k, a, j)] = 1.0
                        rows.append(r)
                        rhs.append(0.0)
        A, y = np.array(rows), np.array(rhs)
        sol, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        gammas[s] = sol.reshape(m, m, m)
        deficit[s] = m ** 3 - rank
        resid[s] = np.linalg.norm(A @ sol - y) / (1.0 + np.linalg.norm(y))
    return gammas, deficit, resid, pts
