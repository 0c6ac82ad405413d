"""Hess connection of a transverse pair of Cherry fields on the punctured torus."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import BiLagrangianStructure, DifferentialForm, FoliationFrame
from ..hess import ConnectionTable, HessReport, hess_connection, hess_verify
from .circlemap import CircleMapSample, first_return_map
from .equivariance import map_distance
from .field import CherryFieldSpec, Singularity, as_planar, classify_singularities

R_EXCL = 0.05
SING_TOL = 1e-6
TRANSVERSE_MIN = 1e-6
PAIR_TOL = 1e-6
MAP_TOL = 1e-3
COEFF_TOL = 1e-3
COEFF_NAMES = ("G^1_11", "G^1_21", "G^2_12", "G^2_22")
_COEFF_INDEX = ((0, 0, 0), (0, 1, 0), (1, 0, 1), (1, 1, 1))


class PairError(ValueError):
    def __init__(self, message: str, location=None):
        super().__init__(message)
        self.location = location


def _sings(X) -> list[Singularity]:
    return X.singularities if isinstance(X, CherryFieldSpec) else classify_singularities(X)


def _torus_gap(p, q) -> float:
    d = np.abs(np.asarray(p) - np.asarray(q))
    d = np.minimum(d, 1.0 - d)
    return float(np.hypot(*d))


def punctured_grid(sings, n: int = 40, r_excl: float = R_EXCL) -> dict[str, np.ndarray]:
    g = (np.arange(n) + 0.5) / n
    xx, yy = np.meshgrid(g, g, indexing="ij")
    xx, yy = xx.ravel(), yy.ravel()
    keep = np.ones(xx.size, bool)
    for s in sings:
        dx = np.abs(xx - s.location[0])
        dy = np.abs(yy - s.location[1])
        keep &= np.hypot(np.minimum(dx, 1 - dx), np.minimum(dy, 1 - dy)) > r_excl
    return {"x": xx[keep], "y": yy[keep]}


@dataclass
class PairConnection:
    structure: BiLagrangianStructure
    table: ConnectionTable
    report: HessReport
    circle_y: float
    circle_x: np.ndarray
    coefficients: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"hess": self.report.to_dict(), "circle_y": self.circle_y,
                "coefficients": {k: v.tolist() for k, v in self.coefficients.items()},
                "circle_x": self.circle_x.tolist(), "provenance": self.provenance}


def cherry_pair_hess(X, Y, circle_y: float = 0.0, r_excl: float = R_EXCL, n: int = 40, circle_grid: int = 256,
                     tol: float = PAIR_TOL) -> PairConnection:
    """Hess table of (dx^dy, span X, span Y) in the frame (X, Y), restricted to S^1 x {circle_y}.

    With F1 = span X and F2 = span Y the preserved-foliation pattern leaves
    four coefficients: nabla_X X, nabla_Y X along X and nabla_X Y, nabla_Y Y
    along Y.
    """
    PX, PY = as_planar(X) if isinstance(X, CherryFieldSpec) else X, as_planar(Y) if isinstance(Y, CherryFieldSpec) else Y
    if not PX.chart.same_as(PY.chart):
        raise PairError("fields live on different charts")
    sx, sy = _sings(X), _sings(Y)
    if len(sx) != len(sy):
        raise PairError(f"singularity sets differ: {len(sx)} vs {len(sy)} zeros")
    for s in sx:
        gap = min((_torus_gap(s.location, t.location) for t in sy), default=np.inf)
        if gap > SING_TOL:
            raise PairError(f"singularity at {s.location} of X is not a singularity of Y", s.location)
    for s in sx:
        if abs(s.location[1] - circle_y) % 1.0 <= r_excl or 1.0 - abs(s.location[1] - circle_y) % 1.0 <= r_excl:
            raise PairError(f"circle y={circle_y} enters the excluded disk around {s.location}", s.location)
    pts = punctured_grid(sx, n, r_excl)
    ux, uy = PX(pts["x"], pts["y"])
    vx, vy = PY(pts["x"], pts["y"])
    det = ux * vy - uy * vx
    k = int(np.argmin(np.abs(det)))
    if abs(det[k]) <= TRANSVERSE_MIN:
        raise PairError(f"X and Y are not transverse: det = {det[k]:.3g}",
                        (float(pts["x"][k]), float(pts["y"][k])))
    chart = PX.chart
    omega = DifferentialForm.from_terms(chart, [(1, list(chart.coords))])
    B = BiLagrangianStructure(chart, omega, FoliationFrame(chart, [PX.field]), FoliationFrame(chart, [PY.field]),
                              provenance={"omega": "dx^dy", "r_excl": r_excl})
    C = hess_connection(B, samples=pts)
    report = hess_verify(C, B, samples=pts, tol=tol)
    cx = np.arange(circle_grid) / circle_grid
    G = C.evaluate({"x": cx, "y": np.full(cx.size, float(circle_y))})
    coeffs = {name: G[:, k, i, j] for name, (k, i, j) in zip(COEFF_NAMES, _COEFF_INDEX)}
    return PairConnection(B, C, report, float(circle_y), cx, coeffs,
                          {"omega": "dx^dy", "r_excl": r_excl, "samples": int(pts["x"].size)})


@dataclass
class CandidateResult:
    name: str
    status: str
    map_distance: float | None = None
    coefficient_distance: float | None = None
    diagnostic: str = ""

    @property
    def passed(self) -> bool | None:
        if self.status != "compared":
            return None
        return self.coefficient_distance <= COEFF_TOL

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "map_distance": self.map_distance,
                "coefficient_distance": self.coefficient_distance, "passed": self.passed,
                "diagnostic": self.diagnostic}


def well_definedness_sample(candidates, reference, circle_y: float = 0.0, grid: int = 512,
                            tmax: float = 500.0, tol: float = 1e-11,
                            reference_map: CircleMapSample | None = None) -> list[CandidateResult]:
    """Compare restricted connections of pairs that generate the reference Cherry map.

    ``candidates`` is a list of ``(name, X, Y)``.  The return map of a pair is
    the one of its first field.  This only collects evidence at the sampled
    pairs; nothing is claimed about the whole class.
    """
    RX, RY = reference
    ref_map = reference_map if reference_map is not None else first_return_map(RX, grid, tmax, tol)
    ref_conn = cherry_pair_hess(RX, RY, circle_y)
    out = []
    for name, X, Y in candidates:
        try:
            m = first_return_map(X, ref_map.grid, tmax, tol, analyze=False)
        except ValueError as exc:
            out.append(CandidateResult(name, "excluded", diagnostic=f"return map failed: {exc}"))
            continue
        dist, mism = map_distance(m, ref_map)
        if dist > MAP_TOL:
            out.append(CandidateResult(name, "excluded", dist,
                                       diagnostic=f"generates a different map (sup distance {dist:.3g})"))
            continue
        try:
            conn = cherry_pair_hess(X, Y, circle_y)
        except ValueError as exc:
            out.append(CandidateResult(name, "excluded", dist, diagnostic=f"pair rejected: {exc}"))
            continue
        cd = max(float(np.max(np.abs(conn.coefficients[k] - ref_conn.coefficients[k]))) for k in COEFF_NAMES)
        out.append(CandidateResult(name, "compared", dist, cd))
    return out
