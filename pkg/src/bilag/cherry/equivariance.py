"""Transport of return maps under torus diffeomorphisms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import expr as E
from ..geometry import DiffeoSpec
from .circlemap import CircleDiffeo, CircleMapSample, conjugate_map, first_return_map
from .field import CherryFieldSpec, as_planar

EQUIVARIANCE_TOL = 5e-4


class SectionError(ValueError):
    pass


class TorusDiffeo:
    """Numeric view of a torus diffeomorphism acting on lifts."""

    def __init__(self, psi: DiffeoSpec, newton_steps: int = 50):
        if psi.source.dim != 2 or psi.target.dim != 2:
            raise ValueError("torus diffeomorphisms act on 2-dimensional charts")
        self.psi = psi
        self.names = psi.source.coords
        self._fwd = E.compile_many(psi.forward)
        self._jac = E.compile_many([c for row in psi.jacobian() for c in row])
        self._inv = E.compile_many(psi.inverse) if psi.inverse is not None else None
        self.newton_steps = newton_steps

    def _pt(self, x, y):
        return {self.names[0]: x, self.names[1]: y}

    def __call__(self, x, y):
        u, v = self._fwd(self._pt(x, y))
        shape = np.broadcast(x, y).shape
        return np.broadcast_to(u, shape).astype(float), np.broadcast_to(v, shape).astype(float)

    def jacobian(self, x, y) -> np.ndarray:
        vals = self._jac(self._pt(x, y))
        shape = np.broadcast(x, y).shape
        return np.stack([np.broadcast_to(np.asarray(v, float), shape) for v in vals], -1).reshape(shape + (2, 2))

    def inverse(self, u, v):
        u, v = np.asarray(u, float), np.asarray(v, float)
        if self._inv is not None:
            tn = self.psi.target.coords
            a, b = self._inv({tn[0]: u, tn[1]: v})
            shape = np.broadcast(u, v).shape
            return np.broadcast_to(a, shape).astype(float), np.broadcast_to(b, shape).astype(float)
        x, y = u.copy(), v.copy()
        for _ in range(self.newton_steps):
            fu, fv = self(x, y)
            ru, rv = fu - u, fv - v
            J = self.jacobian(x, y)
            det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
            dx = (J[..., 1, 1] * ru - J[..., 0, 1] * rv) / det
            dy = (-J[..., 1, 0] * ru + J[..., 0, 0] * rv) / det
            x, y = x - dx, y - dy
            if max(np.max(np.abs(dx)), np.max(np.abs(dy))) < 1e-15:
                break
        return x, y

    def section_map(self, y0: float) -> CircleDiffeo:
        """x -> first component of psi(x, y0), as a circle diffeomorphism."""
        xname, yname = self.names
        expr = E.substitute(self.psi.forward[0], {yname: E.const(y0)})
        return CircleDiffeo(expr, None, xname)

    def check_sections(self, sections=(0.0, 1.0), n: int = 257, tol: float = 1e-12):
        x = np.linspace(0.0, 1.0, n)
        for y0 in sections:
            _, v = self(x, np.full(n, y0))
            err = float(np.max(np.abs(v - y0)))
            if err > tol:
                raise SectionError(f"psi does not preserve the section y={y0} (deviation {err:.3g})")


class PushedField:
    """psi_* X evaluated as Dpsi(z) X(z) at z = psi^-1(u)."""

    def __init__(self, X, psi: TorusDiffeo):
        self.X = as_planar(X) if isinstance(X, CherryFieldSpec) else X
        self.psi = psi

    def __call__(self, u, v):
        x, y = self.psi.inverse(u, v)
        a, b = self.X(x, y)
        J = self.psi.jacobian(x, y)
        return J[..., 0, 0] * a + J[..., 0, 1] * b, J[..., 1, 0] * a + J[..., 1, 1] * b


@dataclass
class EquivarianceReport:
    distance: float
    tol: float
    capture_mismatch: int
    grid: int

    @property
    def passed(self) -> bool:
        return self.distance <= self.tol

    def to_dict(self) -> dict:
        return {"sup_distance": self.distance, "tol": self.tol, "passed": self.passed,
                "capture_mismatch": self.capture_mismatch, "grid": self.grid}


def map_distance(direct: CircleMapSample, reference: CircleMapSample) -> tuple[float, int]:
    """Sup circle distance, using the reference's c wherever either side is captured."""
    c = reference.c_lift
    Fd, Fr = direct.F.copy(), reference.F.copy()
    if c is not None:
        Fd = np.where(direct.captured, c, Fd)
        Fr = np.where(reference.captured, c, Fr)
    d = np.abs(np.mod(Fd - Fr + 0.5, 1.0) - 0.5)
    return float(np.max(d)), int(np.sum(direct.captured != reference.captured))


def equivariance_check(X: CherryFieldSpec, psi: DiffeoSpec, grid: int = 512, tmax: float = 500.0,
                       tol: float = 1e-11, base_map: CircleMapSample | None = None,
                       threshold: float = EQUIVARIANCE_TOL) -> EquivarianceReport:
    """Compare the return map of psi_* X with psi o f o psi^-1 on the grid."""
    T = TorusDiffeo(psi)
    T.check_sections()
    f = base_map if base_map is not None else first_return_map(X, grid, tmax, tol)
    conj = conjugate_map(T.section_map(1.0), f, phi_in=T.section_map(0.0))
    sx, sy = X.sink.location
    ps = T(np.array([sx]), np.array([sy]))
    sink = (float(np.mod(ps[0][0], 1.0)), float(np.mod(ps[1][0], 1.0)))
    direct = first_return_map(PushedField(X, T), f.grid, tmax, tol, sinks=[sink], analyze=False)
    # the pushed field's flat image is psi(c); use it for captured grid points
    conj_c = conj.c_lift
    direct.c_lift = conj_c
    dist, mism = map_distance(direct, conj)
    return EquivarianceReport(dist, threshold, mism, f.grid)
