"""``bilag-v1`` JSON documents for charts, structures, diffeomorphisms, connections and Cherry inputs."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

from . import expr as E
from .expr import Domain
from .geometry import BiLagrangianStructure, Chart, DiffeoSpec, DifferentialForm, FoliationFrame, VectorField
from .hess import ConnectionTable
from .lifts import LiftedChart

SCHEMA = "bilag-v1"
KINDS = ("structure", "diffeo", "connection", "cherry", "cherry_pair", "synthetic_map", "circle_diffeo")


class SchemaError(ValueError):
    """A document does not follow the schema; ``path`` locates the offending node."""

    def __init__(self, path: str, message: str, span: tuple[int, int] | None = None):
        where = f"{path}: {message}"
        if span is not None:
            where += f" (columns {span[0]}-{span[1]})"
        super().__init__(where)
        self.path = path
        self.span = span


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def doc_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# small validators


def _get(d: Any, key: str, path: str, typ=None):
    if not isinstance(d, dict):
        raise SchemaError(path, "expected an object")
    if key not in d:
        raise SchemaError(f"{path}.{key}", "missing")
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        raise SchemaError(f"{path}.{key}", f"expected {_tname(typ)}")
    return v


def _tname(typ) -> str:
    names = {list: "an array", dict: "an object", str: "a string", (int, float): "a number", int: "an integer"}
    return names.get(typ, str(typ))


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, "expected a number")
    return float(v)


def _expr(chart: Chart, text: Any, path: str) -> E.ScalarExpr:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(text)
    if not isinstance(text, str):
        raise SchemaError(path, "expected an expression string")
    try:
        return chart.parse(text)
    except E.ParseError as exc:
        raise SchemaError(path, str(exc), exc.span) from exc
    except E.UnknownVariableError as exc:
        raise SchemaError(path, f"unknown variable {exc.args[0]!r}") from exc


def _exprs(chart: Chart, items: Any, n: int, path: str) -> list[E.ScalarExpr]:
    if not isinstance(items, list):
        raise SchemaError(path, "expected an array of expressions")
    if len(items) != n:
        raise SchemaError(path, f"expected {n} components, got {len(items)}")
    return [_expr(chart, t, f"{path}[{k}]") for k, t in enumerate(items)]


# ---------------------------------------------------------------------------
# charts


def chart_to_doc(chart: Chart) -> dict:
    doc = {
        "name": chart.name,
        "coords": list(chart.coords),
        "bounds": {c: list(chart.domain.bounds[c]) for c in chart.coords},
        "periodic": sorted(chart.domain.periodic),
    }
    if isinstance(chart, LiftedChart):
        doc["bundle"] = {"kind": chart.kind, "base": chart_to_doc(chart.base)}
    return doc


def chart_from_doc(d: Any, path: str = "$.chart") -> Chart:
    name = _get(d, "name", path, str)
    coords = _get(d, "coords", path, list)
    if not coords or not all(isinstance(c, str) and c.isidentifier() for c in coords):
        raise SchemaError(f"{path}.coords", "expected a non-empty array of identifiers")
    if len(set(coords)) != len(coords):
        raise SchemaError(f"{path}.coords", "duplicate coordinate names")
    raw = d.get("bounds", {})
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}.bounds", "expected an object")
    periodic = d.get("periodic", [])
    if not isinstance(periodic, list) or any(p not in coords for p in periodic):
        raise SchemaError(f"{path}.periodic", "expected an array of chart coordinates")
    bounds = {}
    for c in coords:
        b = raw.get(c, [0.0, 1.0] if c in periodic else [-1.0, 1.0])
        if not isinstance(b, list) or len(b) != 2:
            raise SchemaError(f"{path}.bounds.{c}", "expected [lo, hi]")
        bounds[c] = (_number(b[0], f"{path}.bounds.{c}[0]"), _number(b[1], f"{path}.bounds.{c}[1]"))
    try:
        domain = Domain(bounds, frozenset(periodic))
    except ValueError as exc:
        raise SchemaError(f"{path}.bounds", str(exc)) from exc
    bundle = d.get("bundle")
    if bundle is None:
        return Chart(name, tuple(coords), domain)
    kind = _get(bundle, "kind", f"{path}.bundle", str)
    base = chart_from_doc(_get(bundle, "base", f"{path}.bundle", dict), f"{path}.bundle.base")
    try:
        return LiftedChart(name, tuple(coords), domain, base=base, kind=kind, fiber=tuple(coords[base.dim:]))
    except ValueError as exc:
        raise SchemaError(f"{path}.bundle", str(exc)) from exc


# ---------------------------------------------------------------------------
# fields, forms, frames


def form_to_doc(form: DifferentialForm) -> dict:
    names = form.chart.coords
    return {"degree": form.degree,
            "terms": [{"coeff": E.to_string(c), "wedge": [names[i] for i in idx]} for idx, c in form.coeffs.items()]}


def form_from_doc(chart: Chart, d: Any, path: str) -> DifferentialForm:
    degree = _get(d, "degree", path, int)
    terms = _get(d, "terms", path, list)
    coeffs: dict[tuple[int, ...], E.ScalarExpr] = {}
    for k, t in enumerate(terms):
        tp = f"{path}.terms[{k}]"
        wedge = _get(t, "wedge", tp, list)
        if len(wedge) != degree:
            raise SchemaError(f"{tp}.wedge", f"expected {degree} coordinates")
        idx = []
        for w in wedge:
            if w not in chart.coords:
                raise SchemaError(f"{tp}.wedge", f"unknown coordinate {w!r}")
            idx.append(chart.index(w))
        c = _expr(chart, _get(t, "coeff", tp), f"{tp}.coeff")
        key = tuple(idx)
        if key in coeffs:
            raise SchemaError(f"{tp}.wedge", "repeated wedge term")
        coeffs[key] = c
    try:
        return DifferentialForm(chart, degree, coeffs)
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from exc


def frame_to_doc(fields) -> list[list[str]]:
    return [[E.to_string(c) for c in X.comps] for X in fields]


def frame_from_doc(chart: Chart, items: Any, path: str) -> FoliationFrame:
    if not isinstance(items, list) or not items:
        raise SchemaError(path, "expected a non-empty array of fields")
    return FoliationFrame(chart, [VectorField(chart, _exprs(chart, f, chart.dim, f"{path}[{k}]"))
                                  for k, f in enumerate(items)])


# ---------------------------------------------------------------------------
# documents


def _envelope(kind: str, body: dict) -> dict:
    return {"schema": SCHEMA, "kind": kind, **body}


def structure_to_doc(B: BiLagrangianStructure) -> dict:
    prov = dict(B.provenance)
    if B.base is not None:
        prov["base_hash"] = doc_hash(structure_to_doc(B.base))
    return _envelope("structure", {
        "chart": chart_to_doc(B.chart),
        "omega": form_to_doc(B.omega),
        "F1": frame_to_doc(B.F1.fields),
        "F2": frame_to_doc(B.F2.fields),
        "provenance": prov,
    })


def structure_from_doc(d: dict) -> BiLagrangianStructure:
    chart = chart_from_doc(_get(d, "chart", "$", dict))
    omega = form_from_doc(chart, _get(d, "omega", "$", dict), "$.omega")
    if omega.degree != 2:
        raise SchemaError("$.omega.degree", "omega must be a 2-form")
    F1 = frame_from_doc(chart, _get(d, "F1", "$"), "$.F1")
    F2 = frame_from_doc(chart, _get(d, "F2", "$"), "$.F2")
    prov = d.get("provenance", {})
    if not isinstance(prov, dict):
        raise SchemaError("$.provenance", "expected an object")
    return BiLagrangianStructure(chart, omega, F1, F2, provenance=dict(prov))


def diffeo_to_doc(psi: DiffeoSpec) -> dict:
    body = {"source": chart_to_doc(psi.source), "forward": [E.to_string(c) for c in psi.forward],
            "inverse": None if psi.inverse is None else [E.to_string(c) for c in psi.inverse]}
    if not psi.source.same_as(psi.target) or psi.source.name != psi.target.name:
        body["target"] = chart_to_doc(psi.target)
    return _envelope("diffeo", body)


def diffeo_from_doc(d: dict, chart: Chart | None = None) -> DiffeoSpec:
    """Read a diffeomorphism; ``chart`` is used when the document gives no source chart."""
    if "source" in d:
        src = chart_from_doc(d["source"], "$.source")
    elif chart is not None:
        src = chart
    else:
        raise SchemaError("$.source", "missing")
    tgt = chart_from_doc(d["target"], "$.target") if "target" in d else src
    fwd = _exprs(src, _get(d, "forward", "$"), tgt.dim, "$.forward")
    inv = d.get("inverse")
    inv = None if inv is None else _exprs(tgt, inv, src.dim, "$.inverse")
    return DiffeoSpec(src, tgt, tuple(fwd), None if inv is None else tuple(inv))


def connection_to_doc(C: ConnectionTable) -> dict:
    m = C.dim
    return _envelope("connection", {
        "chart": chart_to_doc(C.chart),
        "frame": frame_to_doc(C.frame),
        "split": C.split,
        "gamma": [[[E.to_string(C.gamma[k][i][j]) for j in range(m)] for i in range(m)] for k in range(m)],
        "convention": "nabla_{E_i} E_j = sum_k gamma[k][i][j] E_k",
    })


def connection_from_doc(d: dict) -> ConnectionTable:
    chart = chart_from_doc(_get(d, "chart", "$", dict))
    m = chart.dim
    frame = frame_from_doc(chart, _get(d, "frame", "$"), "$.frame").fields
    if len(frame) != m:
        raise SchemaError("$.frame", f"expected {m} fields")
    g = _get(d, "gamma", "$", list)
    if len(g) != m:
        raise SchemaError("$.gamma", f"expected {m} rows")
    gamma = []
    for k in range(m):
        if not isinstance(g[k], list) or len(g[k]) != m:
            raise SchemaError(f"$.gamma[{k}]", f"expected {m} rows")
        gamma.append([_exprs(chart, g[k][i], m, f"$.gamma[{k}][{i}]") for i in range(m)])
    split = d.get("split")
    return ConnectionTable(chart, frame, gamma, split)


def cherry_to_doc(params) -> dict:
    return _envelope("cherry", {"params": params.to_dict()})


def cherry_params_from_doc(d: Any, path: str = "$.params"):
    from .cherry.field import CherryParams

    if not isinstance(d, dict):
        raise SchemaError(path, "expected an object")
    for k, v in d.items():
        if k == "center":
            if not isinstance(v, list) or len(v) != 2:
                raise SchemaError(f"{path}.center", "expected [x, y]")
            for i, c in enumerate(v):
                _number(c, f"{path}.center[{i}]")
        else:
            _number(v, f"{path}.{k}")
    try:
        return CherryParams.from_dict(d)
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from exc


def load(path: str | Path) -> dict:
    """Read a document and check the envelope; the body is validated by the typed readers."""
    p = Path(path)
    if not p.is_file():
        raise SchemaError("$", f"no such file: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise SchemaError("$", "expected an object")
    if d.get("schema") != SCHEMA:
        raise SchemaError("$.schema", f"expected {SCHEMA!r}, got {d.get('schema')!r}")
    if d.get("kind") not in KINDS:
        raise SchemaError("$.kind", f"expected one of {list(KINDS)}, got {d.get('kind')!r}")
    return d


def parse_structure_file(path: str | Path):
    """A BiLagrangianStructure or a CherryFieldSpec, depending on the document kind."""
    d = load(path)
    if d["kind"] == "structure":
        return structure_from_doc(d)
    if d["kind"] == "cherry":
        from .cherry.field import make_cherry_field

        return make_cherry_field(cherry_params_from_doc(_get(d, "params", "$", dict)))
    raise SchemaError("$.kind", f"expected 'structure' or 'cherry', got {d['kind']!r}")
