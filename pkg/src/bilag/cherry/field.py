"""Planar and toroidal vector fields, and the Cherry plug family."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .. import expr as E
from ..expr import Domain
from ..geometry import Chart, VectorField

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
HYPERBOLIC_TOL = 1e-6
ZERO_TOL = 1e-10


class CherryFieldError(ValueError):
    """A parameter set does not produce a sink-saddle Cherry field."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def torus_chart(names=("x", "y")) -> Chart:
    return Chart("T2", tuple(names), Domain.box(names, periodic=tuple(names)))


class PlanarField:
    """A 2-d vector field with a symbolic form and a compiled numeric form."""

    def __init__(self, field: VectorField, periodic: bool | None = None):
        if field.chart.dim != 2:
            raise ValueError("planar fields live on 2-dimensional charts")
        self.field = field
        self.chart = field.chart
        self.periodic = bool(self.chart.domain.periodic) if periodic is None else periodic
        x, y = self.chart.coords
        self._names = (x, y)
        self._f = E.compile_many(field.comps)
        jac = [E.diff(c, v) for c in field.comps for v in (x, y)]
        self._j = E.compile_many(jac)

    def _point(self, x, y):
        if self.periodic:
            x, y = np.mod(x, 1.0), np.mod(y, 1.0)
        return {self._names[0]: x, self._names[1]: y}

    def __call__(self, x, y):
        u, v = self._f(self._point(x, y))
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.broadcast_to(u, shape).astype(float), np.broadcast_to(v, shape).astype(float)

    def jacobian(self, x, y) -> np.ndarray:
        """Array of shape ``(..., 2, 2)``."""
        vals = self._j(self._point(x, y))
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        J = np.stack([np.broadcast_to(np.asarray(v, float), shape) for v in vals], axis=-1)
        return J.reshape(shape + (2, 2))

    def scaled(self, k: float) -> "PlanarField":
        return PlanarField(self.field.scale(E.const(k)), self.periodic)


@dataclass(frozen=True)
class Singularity:
    location: tuple[float, float]
    kind: str
    eigenvalues: tuple[complex, complex]

    def to_dict(self) -> dict:
        return {"location": list(self.location), "type": self.kind,
                "eigenvalues": [[float(np.real(l)), float(np.imag(l))] for l in self.eigenvalues]}


def _kind(ev: np.ndarray) -> str:
    re_ = np.real(ev)
    if np.any(np.abs(re_) <= HYPERBOLIC_TOL):
        return "non-hyperbolic"
    if np.all(re_ < 0):
        return "sink"
    if np.all(re_ > 0):
        return "source"
    return "saddle"


def classify_singularities(X: PlanarField, grid: int = 256, newton_steps: int = 60) -> list[Singularity]:
    """Zeros from grid minima of |X|, polished by Newton, typed by eigenvalues."""
    lo = [X.chart.domain.bounds[c][0] for c in X.chart.coords]
    hi = [X.chart.domain.bounds[c][1] for c in X.chart.coords]
    endpoint = not X.periodic
    gx = np.linspace(lo[0], hi[0], grid, endpoint=endpoint)
    gy = np.linspace(lo[1], hi[1], grid, endpoint=endpoint)
    XX, YY = np.meshgrid(gx, gy, indexing="ij")
    u, v = X(XX, YY)
    norm = np.hypot(u, v)
    if X.periodic:
        nb = [np.roll(np.roll(norm, dx, 0), dy, 1) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]
        is_min = np.all([norm <= n for n in nb], axis=0)
    else:
        pad = np.pad(norm, 1, constant_values=np.inf)
        nb = [pad[1 + dx:grid + 1 + dx, 1 + dy:grid + 1 + dy] for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]
        is_min = np.all([norm <= n for n in nb], axis=0)
    scale = float(np.max(norm)) if np.max(norm) > 0 else 1.0
    seeds = np.argwhere(is_min & (norm < 0.5 * np.median(norm)))
    if len(seeds) == 0:
        return []
    zx, zy = XX[tuple(seeds.T)].astype(float), YY[tuple(seeds.T)].astype(float)
    for _ in range(newton_steps):
        fu, fv = X(zx, zy)
        J = X.jacobian(zx, zy)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        safe = np.where(np.abs(det) > 1e-300, det, np.inf)
        dx = (J[:, 1, 1] * fu - J[:, 0, 1] * fv) / safe
        dy = (-J[:, 1, 0] * fu + J[:, 0, 0] * fv) / safe
        zx, zy = zx - dx, zy - dy
    fu, fv = X(zx, zy)
    ok = np.hypot(fu, fv) <= ZERO_TOL * max(scale, 1.0)
    if not X.periodic:
        ok &= (zx >= lo[0]) & (zx <= hi[0]) & (zy >= lo[1]) & (zy <= hi[1])
    if not np.any(ok):
        raise CherryFieldError("Newton did not converge from any grid seed", {"seeds": int(len(seeds))})
    pts = np.stack([zx[ok], zy[ok]], axis=1)
    if X.periodic:
        pts = np.mod(pts, 1.0)
    found: list[np.ndarray] = []
    for p in pts:
        d = [np.abs(p - q) for q in found]
        if X.periodic:
            d = [np.minimum(e, 1.0 - e) for e in d]
        if all(np.max(e) > 1e-7 for e in d):
            found.append(p)
    found.sort(key=lambda p: (round(p[0], 9), round(p[1], 9)))
    out = []
    for p in found:
        ev = np.linalg.eigvals(X.jacobian(p[0], p[1]))
        ev = ev[np.lexsort((np.imag(ev), np.real(ev)))]
        out.append(Singularity((float(p[0]), float(p[1])), _kind(ev), (complex(ev[0]), complex(ev[1]))))
    return out


@dataclass(frozen=True)
class CherryParams:
    """Plug family: constant slope-``alpha`` flow with a sink-saddle insert.

    In the frame ``e_u`` along the flow and ``e_v`` across it, centred on
    the plug, the field is ``V_u = c0 - phi*(c0 + mu*(eps^2 - u^2))`` and
    ``V_v = -phi*kappa*v`` with ``phi = exp(-(r/s)^4)``.  The zeros sit at
    ``u = -u*`` (sink) and ``u = +u*`` (saddle); ``kappa`` is chosen so the
    saddle has ``|lambda_s| / lambda_u = ell``.  ``twist`` rotates the whole
    field, which keeps its zeros.
    """

    alpha: float = GOLDEN
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.2
    eps: float = 0.04
    mu: float = 60.0
    ell: float = 2.0
    twist: float = 0.0
    scale: float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CherryParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValueError(f"unknown Cherry parameters {unknown}")
        if "center" in known:
            known["center"] = tuple(float(c) for c in known["center"])
        return cls(**known)


@dataclass
class CherryFieldSpec:
    params: CherryParams
    planar: PlanarField
    singularities: list[Singularity]
    kappa: float
    u_star: float
    meta: dict = field(default_factory=dict)

    @property
    def chart(self) -> Chart:
        return self.planar.chart

    @property
    def field(self) -> VectorField:
        return self.planar.field

    def __call__(self, x, y):
        return self.planar(x, y)

    def jacobian(self, x, y):
        return self.planar.jacobian(x, y)

    @property
    def sink(self) -> Singularity:
        return next(s for s in self.singularities if s.kind == "sink")

    @property
    def saddle(self) -> Singularity:
        return next(s for s in self.singularities if s.kind == "saddle")

    @property
    def saddle_ratio(self) -> float:
        ev = np.real(self.saddle.eigenvalues)
        return float(-ev.min() / ev.max())


def _plug_geometry(p: CherryParams) -> tuple[float, float, float]:
    """(s, u*, kappa) for a parameter record."""
    s = p.radius / 2.4
    c0 = math.hypot(1.0, p.alpha)

    def g(u):
        return c0 * (math.exp((u / s) ** 4) - 1.0) + p.mu * (u * u - p.eps * p.eps)

    def dg(u):
        return c0 * 4.0 * u ** 3 / s ** 4 * math.exp((u / s) ** 4) + 2.0 * p.mu * u

    if p.mu == 0:
        # degenerate plug: a single zero at the centre
        return s, 0.0, p.ell
    u_star = brentq(g, 0.0, p.radius)
    kappa = p.ell * dg(u_star)
    return s, u_star, kappa


def cherry_expressions(p: CherryParams, chart: Chart) -> VectorField:
    x, y = (E.var(c) for c in chart.coords)
    a = E.const(p.alpha)
    c0v = math.hypot(1.0, p.alpha)
    c0 = E.const(c0v)
    if p.radius == 0:
        comps = (E.ONE, a)
    else:
        s, _, kappa = _plug_geometry(p)
        du, dv = E.sub(x, E.const(p.center[0])), E.sub(y, E.const(p.center[1]))
        u = E.div(E.add(du, E.mul(a, dv)), c0)
        v = E.div(E.sub(dv, E.mul(a, du)), c0)
        r2 = E.add(E.power(du, 2), E.power(dv, 2))
        phi = E.exp(E.neg(E.power(E.div(r2, E.const(s * s)), 2)))
        Vu = E.sub(c0, E.mul(phi, E.add(c0, E.mul(E.const(p.mu), E.sub(E.const(p.eps ** 2), E.power(u, 2))))))
        Vv = E.neg(E.mul(E.mul(phi, E.const(kappa)), v))
        # X = V_u e_u + V_v e_v with e_u = (1, a)/c0, e_v = (-a, 1)/c0
        comps = (E.div(E.sub(Vu, E.mul(a, Vv)), c0), E.div(E.add(E.mul(a, Vu), Vv), c0))
    if p.twist:
        ct, st = E.const(math.cos(p.twist)), E.const(math.sin(p.twist))
        comps = (E.sub(E.mul(ct, comps[0]), E.mul(st, comps[1])), E.add(E.mul(st, comps[0]), E.mul(ct, comps[1])))
    if p.scale != 1.0:
        comps = tuple(E.mul(E.const(p.scale), c) for c in comps)
    return VectorField(chart, comps)


def make_cherry_field(params: CherryParams | None = None, grid: int = 256) -> CherryFieldSpec:
    p = params or CherryParams()
    if not 0.0 < p.alpha < 1.0:
        raise CherryFieldError("alpha must lie in (0, 1)", {"alpha": p.alpha})
    if p.radius < 0:
        raise CherryFieldError("plug radius must be non-negative", {"radius": p.radius})
    cx, cy = p.center
    if p.radius > 0 and not (p.radius < cx < 1 - p.radius and p.radius < cy < 1 - p.radius):
        raise CherryFieldError("plug disk must lie strictly inside the fundamental domain", p.to_dict())
    if p.radius > 0 and not 0 < p.eps < p.radius / 2.4:
        raise CherryFieldError("zero separation eps must be positive and well inside the plug", p.to_dict())
    if p.scale <= 0:
        raise CherryFieldError("scale must be positive", {"scale": p.scale})
    if p.mu < 0 or p.ell <= 0:
        raise CherryFieldError("mu must be non-negative and ell positive", p.to_dict())
    chart = torus_chart()
    planar = PlanarField(cherry_expressions(p, chart))
    sings = classify_singularities(planar, grid)
    diag = {"params": p.to_dict(), "singularities": [s.to_dict() for s in sings]}
    if any(s.kind == "non-hyperbolic" for s in sings):
        raise CherryFieldError("field has a non-hyperbolic zero", diag)
    if len(sings) != 2:
        raise CherryFieldError(f"expected exactly 2 zeros, found {len(sings)}", diag)
    kinds = sorted(s.kind for s in sings)
    if kinds != ["saddle", "sink"]:
        raise CherryFieldError(f"expected a sink and a saddle, found {kinds}", diag)
    if p.radius > 0:
        _, u_star, kappa = _plug_geometry(p)
    else:
        u_star, kappa = 0.0, 0.0
    return CherryFieldSpec(p, planar, sings, kappa, u_star, {"omega": "dx^dy"})


def constant_field(alpha: float, beta: float = 1.0, chart: Chart | None = None) -> PlanarField:
    """The linear field (beta, alpha) on the torus (test and baseline use)."""
    chart = chart or torus_chart()
    return PlanarField(VectorField(chart, (E.const(beta), E.const(alpha))))


def as_planar(X) -> PlanarField:
    return X.planar if isinstance(X, CherryFieldSpec) else X
