"""Circle maps with a flat piece: sampling, analysis, gluing, conjugation.

Maps are handled through their lifts ``F`` with ``F(x + 1) = F(x) + 1``.
A sample stores the lift on a uniform grid of ``[0, 1)`` and, when one is
available, an evaluator that recomputes the lift at arbitrary points.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .. import expr as E
from .field import CherryFieldSpec, as_planar
from .integrate import CROSSED, STATUS_NAMES, integrate_to_section

Evaluator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

MONO_TOL = 1e-10
FLAT_CONSISTENCY = 1e-3
R2_MIN = 0.9


class CircleMapError(ValueError):
    pass


@dataclass(frozen=True)
class FlatPiece:
    """Arc (a, b) with 0 <= a < 1 and a < b < a + 1."""

    a: float
    b: float
    tol: float

    def __post_init__(self):
        if not (0.0 <= self.a < 1.0 and self.a < self.b < self.a + 1.0):
            raise CircleMapError(f"flat piece ({self.a}, {self.b}) is not an arc of the circle")

    @property
    def length(self) -> float:
        return self.b - self.a

    def contains(self, x) -> np.ndarray:
        return np.mod(np.asarray(x) - self.a, 1.0) < self.length

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "length": self.length, "tol": self.tol}


@dataclass(frozen=True)
class ExponentEstimate:
    l1: float
    l2: float
    fit_range: tuple[float, float]
    r2: tuple[float, float]

    @property
    def reliable(self) -> bool:
        return min(self.r2) >= R2_MIN and self.l1 > 0 and self.l2 > 0

    def to_dict(self) -> dict:
        return {"l1": self.l1, "l2": self.l2, "fit_range": list(self.fit_range), "r2": list(self.r2),
                "reliable": self.reliable}


@dataclass
class CircleMapSample:
    x: np.ndarray
    F: np.ndarray
    captured: np.ndarray
    flat: FlatPiece | None = None
    c: float | None = None
    c_lift: float | None = None
    exponents: ExponentEstimate | None = None
    rotation: float | None = None
    rotation_spread: float | None = None
    evaluator: Evaluator | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def f(self) -> np.ndarray:
        return np.mod(self.F, 1.0)

    @property
    def branch(self) -> np.ndarray:
        return np.floor(self.F).astype(int)

    @property
    def grid(self) -> int:
        return self.x.size

    def lift(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Lift and capture flag at arbitrary points, extended by F(x+1) = F(x) + 1."""
        x = np.atleast_1d(np.asarray(x, float))
        k = np.floor(x)
        xr = x - k
        if self.evaluator is not None:
            F, cap = self.evaluator(xr)
        else:
            F = _interp_lift(self.x, self.F, xr)
            cap = self.flat.contains(xr) if self.flat is not None else np.zeros(xr.shape, bool)
        if self.flat is not None and self.c_lift is not None:
            F = np.where(cap, self.c_lift - (xr < self.flat.a), F)
        return F + k, cap

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "f", "captured", "branch"])
        for xi, fi, ci, bi in zip(self.x, self.f, self.captured, self.branch):
            w.writerow([repr(float(xi)), repr(float(fi)), int(ci), int(bi)])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "grid": int(self.grid),
            "flat_piece": self.flat.to_dict() if self.flat else None,
            "c": self.c,
            "exponents": self.exponents.to_dict() if self.exponents else None,
            "rotation_number": self.rotation,
            "rotation_spread": self.rotation_spread,
            "captured_fraction": float(np.mean(self.captured)),
            "meta": self.meta,
        }


def _interp_lift(xg: np.ndarray, Fg: np.ndarray, xq: np.ndarray) -> np.ndarray:
    xe = np.concatenate([xg, [xg[0] + 1.0]])
    Fe = np.concatenate([Fg, [Fg[0] + 1.0]])
    return np.interp(xq, xe, Fe)


def _circular_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Runs of True as (start, length) on a circular index set."""
    n = mask.size
    if mask.all():
        return [(0, n)]
    if not mask.any():
        return []
    start = int(np.flatnonzero(~mask)[0]) + 1
    runs, i = [], 0
    while i < n:
        j = (start + i) % n
        if mask[j]:
            L = 0
            while i < n and mask[(start + i) % n]:
                L += 1
                i += 1
            runs.append((j, L))
        else:
            i += 1
    return runs


# sampling ----------------------------------------------------------------------


def sample_map(evaluator: Evaluator, grid: int, meta: dict | None = None) -> CircleMapSample:
    x = np.arange(grid) / grid
    F, cap = evaluator(x)
    return CircleMapSample(x, np.asarray(F, float), np.asarray(cap, bool), evaluator=evaluator, meta=dict(meta or {}))


def flow_evaluator(X, tmax: float = 500.0, tol: float = 1e-11, sinks=None, capture_radius: float = 1e-3,
                   y0: float = 0.0, y1: float = 1.0) -> Evaluator:
    """Return-map evaluator of a torus field from S^1 x {y0} to S^1 x {y1}."""
    if sinks is None:
        sinks = [X.sink.location] if isinstance(X, CherryFieldSpec) else []
    rhs = as_planar(X) if isinstance(X, CherryFieldSpec) else X

    def ev(xq):
        xq = np.asarray(xq, float)
        r = integrate_to_section(rhs, xq, np.full(xq.shape, y0), y_target=y1, tmax=tmax, tol=tol, sinks=sinks,
                                 capture_radius=capture_radius)
        return r.x, r.status != CROSSED

    return ev


def first_return_map(X, grid: int = 512, tmax: float = 500.0, tol: float = 1e-11, sinks=None,
                     capture_radius: float = 1e-3, analyze: bool = True, fit_range=(1e-4, 1e-3)) -> CircleMapSample:
    """Map S^1 x {0} -> S^1 x {1} along the flow, with the flat piece analysed."""
    if grid < 64:
        raise CircleMapError(f"grid must be at least 64, got {grid}")
    if sinks is None:
        sinks = [X.sink.location] if isinstance(X, CherryFieldSpec) else []
    ev = flow_evaluator(X, tmax, tol, sinks, capture_radius)
    x = np.arange(grid) / grid
    rhs = as_planar(X) if isinstance(X, CherryFieldSpec) else X
    r = integrate_to_section(rhs, x, np.zeros(grid), tmax=tmax, tol=tol, sinks=sinks,
                             capture_radius=capture_radius)
    cap = r.status != CROSSED
    counts = {STATUS_NAMES[k]: int(np.sum(r.status == k)) for k in np.unique(r.status)}
    s = CircleMapSample(x, r.x.copy(), cap, evaluator=ev,
                        meta={"ode_tol": tol, "tmax": tmax, "capture_radius": capture_radius, "status": counts})
    if cap.mean() > 0.95:
        raise CircleMapError("field not generating a Cherry map: more than 95% of the section is captured")
    if not cap.any():
        s.meta["in_L"] = False
        s.meta["note"] = "no flat piece"
        check_monotone(s)
        return s
    if analyze:
        analyze_flat(s, fit_range=fit_range)
        s.F = np.where(s.captured, s.c_lift - (s.x < s.flat.a), s.F)
        s.meta["in_L"] = True
    check_monotone(s)
    return s


def check_monotone(s: CircleMapSample, tol: float = MONO_TOL) -> float:
    """Smallest lift increment between adjacent free grid points (wrap included)."""
    free = np.flatnonzero(~s.captured)
    if free.size < 2:
        return math.inf
    Fv = s.F[free]
    steps = np.diff(np.concatenate([Fv, [Fv[0] + 1.0]]))
    gaps = np.diff(np.concatenate([free, [free[0] + s.grid]]))
    worst = float(np.min(steps))
    s.meta["min_increment"] = worst
    bad = (steps <= tol) & (gaps == 1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise CircleMapError(f"lift not increasing near x={s.x[free[i]]:.6g} (step {steps[i]:.3g})")
    return worst


# flat piece and exponents ------------------------------------------------------


def _refine(lift, x_free: float, x_cap: float, tol: float, per_round: int = 32):
    """Shrink a (free, captured) bracket by multisection; returns the final bracket."""
    lo, hi = x_free, x_cap
    while abs(hi - lo) > tol:
        pts = np.linspace(lo, hi, per_round + 2)[1:-1]
        _, cap = lift(pts)
        k = np.flatnonzero(cap)
        first = int(k[0]) if k.size else per_round
        lo = pts[first - 1] if first > 0 else lo
        hi = pts[first] if first < per_round else hi
    return lo, hi


def _fit(d: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    X, Y = np.log(d), np.log(y)
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    pred = A @ coef
    ss = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - np.sum((Y - pred) ** 2) / ss if ss > 0 else 0.0
    return float(coef[0]), float(r2)


def analyze_flat(s: CircleMapSample, fit_range=(1e-4, 1e-3), n_fit: int = 11,
                 boundary_tol: float = 1e-10) -> tuple[FlatPiece, ExponentEstimate]:
    """Refine the captured arc, read off c, and fit the two exponents."""
    runs = _circular_runs(s.captured)
    if not runs:
        raise CircleMapError("capture set is empty: no flat piece")
    if len(runs) > 1:
        raise CircleMapError(f"capture set has {len(runs)} components; expected one arc")
    start, L = runs[0]
    if L == s.grid:
        raise CircleMapError("whole circle captured")
    n = s.grid
    i_first = start
    h = 1.0 / n
    # left boundary between x[i_first]-h (free) and x[i_first] (captured); same on the right
    xa_free = s.x[i_first] - h
    xa_cap = s.x[i_first]
    xb_cap = s.x[i_first] + (L - 1) * h
    xb_free = xb_cap + h
    lo_a, hi_a = _refine(s.lift, xa_free, xa_cap, boundary_tol)
    lo_b, hi_b = _refine(s.lift, xb_free, xb_cap, boundary_tol)
    a = 0.5 * (lo_a + hi_a)
    b = 0.5 * (lo_b + hi_b)
    shift = math.floor(a)
    a, b = a - shift, b - shift
    lo_a, lo_b = lo_a - shift, lo_b - shift
    flat = FlatPiece(a, b, boundary_tol)
    Fa, _ = s.lift(np.array([lo_a]))
    Fb, _ = s.lift(np.array([lo_b]))
    c_lift = float(Fa[0])
    mismatch = float(abs(Fb[0] - c_lift))
    s.meta["c_from_right"] = float(Fb[0])
    s.meta["flat_image_mismatch"] = mismatch
    if mismatch > FLAT_CONSISTENCY:
        raise CircleMapError(f"flat piece image is not one point: |f(a-) - f(b+)| = {mismatch:.3g}")
    d = np.logspace(np.log10(fit_range[0]), np.log10(fit_range[1]), n_fit)
    Fl, capl = s.lift(a - d)
    Fr, capr = s.lift(b + d)
    if capl.any() or capr.any():
        raise CircleMapError("fit points fall inside the capture set; shrink the fit range")
    yl, yr = np.abs(Fl - c_lift), np.abs(Fr - c_lift)
    if np.any(yl <= 0) or np.any(yr <= 0):
        raise CircleMapError("lift equals c at a fit point; exponent undefined")
    l1, r1 = _fit(d, yl)
    l2, r2 = _fit(d, yr)
    est = ExponentEstimate(l1, l2, (float(fit_range[0]), float(fit_range[1])), (r1, r2))
    s.flat, s.c_lift, s.c, s.exponents = flat, c_lift, float(np.mod(c_lift, 1.0)), est
    return flat, est


# rotation number ---------------------------------------------------------------


@numba.njit(cache=True)
def _iterate(xe, Fe, x0, iterates):
    out = np.empty(x0.size)
    n = xe.size - 1
    for s in range(x0.size):
        x = x0[s]
        for _ in range(iterates):
            k = math.floor(x)
            r = x - k
            j = int(r * n)
            if j >= n:
                j = n - 1
            # uniform grid: locate the cell directly, then correct
            while j > 0 and xe[j] > r:
                j -= 1
            while j < n - 1 and xe[j + 1] <= r:
                j += 1
            w = (r - xe[j]) / (xe[j + 1] - xe[j])
            x = Fe[j] + w * (Fe[j + 1] - Fe[j]) + k
        out[s] = (x - x0[s]) / iterates
    return out


def rotation_number(s: CircleMapSample, iterates: int = 100_000, seeds: int = 10) -> tuple[float, float]:
    """Average lift displacement from ``seeds`` starting points; returns (value, spread)."""
    xe = np.concatenate([s.x, [s.x[0] + 1.0]])
    Fe = np.concatenate([s.F, [s.F[0] + 1.0]])
    if np.any(np.diff(Fe) < -MONO_TOL):
        i = int(np.argmin(np.diff(Fe)))
        raise CircleMapError(f"sample is not monotone near x={xe[i]:.6g}; rotation number undefined")
    x0 = np.arange(seeds) / seeds
    vals = _iterate(xe, Fe, x0, int(iterates))
    s.rotation = float(np.mean(vals))
    s.rotation_spread = float(np.max(vals) - np.min(vals))
    return s.rotation, s.rotation_spread


# synthetic maps -----------------------------------------------------------------


def synthetic_cherry_map(a: float, b: float, c: float, l1: float, l2: float, grid: int = 512,
                         analyze: bool = True, fit_range=(1e-4, 1e-3)) -> CircleMapSample:
    """Flat on [a, b] with value c, then c + g(t) with g(t) = t^l2 / (t^l2 + (1-t)^l1).

    The map behaves like (x - b)^l2 right of b and like (a - x)^l1 left of a.
    """
    if not 0.0 <= a < b < 1.0:
        raise CircleMapError("synthetic maps need 0 <= a < b < 1")
    L = a + 1.0 - b

    def ev(x):
        x = np.asarray(x, float)
        k = np.floor(x)
        r = x - k
        t = np.where(r >= b, (r - b) / L, (r + 1.0 - b) / L)
        t = np.clip(t, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = t ** l2 / (t ** l2 + (1.0 - t) ** l1)
        g = np.where(t <= 0, 0.0, np.where(t >= 1, 1.0, g))
        F = c + g - (r < a)
        flat = (r >= a) & (r <= b)
        F = np.where(flat, c, F)
        return F + k, (r > a) & (r < b)

    s = sample_map(ev, grid, {"synthetic": {"a": a, "b": b, "c": c, "l1": l1, "l2": l2}})
    if analyze:
        analyze_flat(s, fit_range=fit_range)
    return s


def rigid_rotation(rho: float, grid: int = 512) -> CircleMapSample:
    def ev(x):
        x = np.asarray(x, float)
        return x + rho, np.zeros(x.shape, bool)

    return sample_map(ev, grid, {"rigid": rho})


# gluing -------------------------------------------------------------------------


def _same_point(u: float, v: float) -> float:
    d = abs(u - v) % 1.0
    return min(d, 1.0 - d)


def glue_maps(f1: CircleMapSample, f2: CircleMapSample, tol: float = 1e-6, analyze: bool = True) -> CircleMapSample:
    """f1 on [0, b1], f2 on [a2, 1) for overlapping flat pieces with a common image."""
    for name, f in (("f1", f1), ("f2", f2)):
        if f.flat is None or f.c_lift is None:
            raise CircleMapError(f"{name} has no analysed flat piece")
    a1, b1, a2, b2 = f1.flat.a, f1.flat.b, f2.flat.a, f2.flat.b
    if max(b1, b2) >= 1.0:
        raise CircleMapError("gluing needs flat pieces that do not wrap past 0")
    if _same_point(f1.c, f2.c) > tol:
        raise CircleMapError(f"f1(U1) = f2(U2) fails: c1={f1.c:.9g}, c2={f2.c:.9g}")
    if not a1 <= a2:
        raise CircleMapError(f"a1 <= a2 fails: a1={a1:.9g}, a2={a2:.9g}")
    if not a2 <= b1:
        raise CircleMapError(f"a2 <= b1 fails: a2={a2:.9g}, b1={b1:.9g}")
    if not b1 <= b2:
        raise CircleMapError(f"b1 <= b2 fails: b1={b1:.9g}, b2={b2:.9g}")
    shift = round(f1.c_lift - f2.c_lift)

    def ev(x):
        x = np.asarray(x, float)
        F1, c1 = f1.lift(x)
        F2, c2 = f2.lift(x)
        left = x <= b1
        return np.where(left, F1, F2 + shift), np.where(left, c1, c2)

    s = sample_map(ev, f1.grid, {"glued": {"a1": a1, "b1": b1, "a2": a2, "b2": b2}})
    F1_0, _ = f1.lift(np.array([0.0]))
    F2_1, _ = f2.lift(np.array([1.0 - 1e-15]))
    s.meta["seam_jump"] = float(F1_0[0] + 1.0 - (F2_1[0] + shift))
    if analyze:
        analyze_flat(s, fit_range=f1.exponents.fit_range if f1.exponents else (1e-4, 1e-3))
    return s


# conjugation ----------------------------------------------------------------------


class CircleDiffeo:
    """Orientation-preserving circle diffeomorphism given by a lift expression."""

    def __init__(self, forward, inverse=None, var: str = "x", check_grid: int = 4096):
        self.var = var
        self.forward = E.parse(forward, [var]) if isinstance(forward, str) else forward
        self.inverse = E.parse(inverse, [var]) if isinstance(inverse, str) else inverse
        self._fwd = E.compile_many([self.forward])
        self._dfwd = E.compile_many([E.diff(self.forward, var)])
        self._inv = E.compile_many([self.inverse]) if self.inverse is not None else None
        g = np.arange(check_grid) / check_grid
        d = np.broadcast_to(np.asarray(self._dfwd({var: g})[0], float), g.shape)
        if np.min(d) <= 0:
            raise CircleMapError("circle map is not orientation preserving and monotone")
        deg = float(self(np.array([1.0]))[0] - self(np.array([0.0]))[0])
        if abs(deg - 1.0) > 1e-9:
            raise CircleMapError(f"circle map has degree {deg:.6g}, expected 1")

    @classmethod
    def identity(cls, var: str = "x"):
        return cls(E.var(var), E.var(var), var)

    def __call__(self, x):
        """Lift, using F(x + k) = F(x) + k."""
        x = np.atleast_1d(np.asarray(x, float))
        k = np.floor(x)
        v = np.broadcast_to(np.asarray(self._fwd({self.var: x - k})[0], float), x.shape)
        return v + k

    def inv(self, x):
        x = np.atleast_1d(np.asarray(x, float))
        if self._inv is not None:
            k = np.floor(x)
            return np.broadcast_to(np.asarray(self._inv({self.var: x - k})[0], float), x.shape) + k
        phi0 = float(self(np.array([0.0]))[0])
        lo, hi = x - phi0 - 1.0, x - phi0 + 1.0
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            up = self(mid) >= x
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
            if np.max(hi - lo) < 1e-13:
                break
        return 0.5 * (lo + hi)

    def compose(self, first: "CircleDiffeo") -> "CircleDiffeo":
        """self o first (evaluated on lifts, so no closed form is kept)."""
        outer, inner = self, first

        class _Composed(CircleDiffeo):
            def __init__(self):
                self.var = outer.var
                self.forward = self.inverse = None
                self._inv = None

            def __call__(self, x):
                return outer(inner(x))

            def inv(self, x):
                return inner.inv(outer.inv(x))

        return _Composed()


def conjugate_map(phi: CircleDiffeo, f: CircleMapSample, phi_in: CircleDiffeo | None = None,
                  analyze: bool = False) -> CircleMapSample:
    """phi o f o phi^-1 (or phi o f o phi_in^-1 when the two sections differ)."""
    phi_in = phi_in or phi

    def ev(x):
        z = phi_in.inv(np.asarray(x, float))
        F, cap = f.lift(z)
        return phi(F), cap

    s = sample_map(ev, f.grid, {"conjugated": True})
    if f.flat is not None:
        a = float(phi_in(np.array([f.flat.a]))[0])
        b = float(phi_in(np.array([f.flat.b]))[0])
        k = math.floor(a)
        s.flat = FlatPiece(a - k, b - k, f.flat.tol)
        s.c_lift = float(phi(np.array([f.c_lift]))[0])
        s.c = float(np.mod(s.c_lift, 1.0))
        s.exponents = f.exponents
        if analyze:
            analyze_flat(s, fit_range=f.exponents.fit_range if f.exponents else (1e-4, 1e-3))
    return s


def sup_distance(f: CircleMapSample, g: CircleMapSample) -> float:
    """Sup over the grid of the circle distance between f and g."""
    d = np.abs(np.mod(f.F - g.F + 0.5, 1.0) - 0.5)
    return float(np.max(d))
