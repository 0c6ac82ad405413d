"""Command-line front end: ``bilag verify|hess|lift|push|diagram|cherry ...``.

Every command prints a JSON report (sorted keys, no timestamps) and exits
0 on pass, 1 on a failed check and 2 on usage or schema errors.  Failed
reports carry a ``reason`` field.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import sys
from pathlib import Path

import numpy as np

from . import io
from .geometry import RankDeficiencyError, push_structure, validate_bilagrangian
from .hess import HESS_TOL, hess_connection, hess_verify, is_flat
from .io import SchemaError, dumps
from .lifts import LIFT_NAMES, LiftIdentityError, NotAdaptedError, NotSymplecticError, build_lifted_structure, \
    diagram_commutes


class UsageError(Exception):
    pass


class Failure(Exception):
    """A check ran and did not pass; ``report`` holds whatever was computed."""

    def __init__(self, reason: str, report: dict | None = None):
        super().__init__(reason)
        self.report = report or {}


FAILURES = (Failure, RankDeficiencyError, NotAdaptedError, NotSymplecticError, LiftIdentityError, ArithmeticError)


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    return x


class Run:
    """Collects the report and the artifacts of one command."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out) if args.out else None
        self.artifacts: dict[str, str] = {}
        self.report: dict = {"command": args.command_name}

    def artifact(self, name: str, text: str):
        self.artifacts[name] = text

    def finish(self, passed: bool, reason: str = "") -> int:
        self.report["passed"] = bool(passed)
        if not passed:
            self.report["reason"] = reason or "check failed"
        self.report["artifacts"] = sorted(self.artifacts)
        csv_body = self.report.pop("_csv", None)
        text = dumps(_json_safe(self.report))
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            for name, body in self.artifacts.items():
                (self.out / name).write_text(body)
            (self.out / f"{self.report['command'].replace(' ', '_')}.json").write_text(text)
        if self.args.format == "csv" and csv_body is not None:
            sys.stdout.write(csv_body)
        else:
            sys.stdout.write(text)
        return 0 if passed else 1


def _pop_csv(run: Run, body: str | None):
    """Attach a table for ``--format csv``; commands without one reject the flag."""
    if run.args.format == "csv" and body is None:
        raise UsageError(f"--format csv is not available for '{run.report['command']}'")
    if body is not None:
        run.report["_csv"] = body


# ---------------------------------------------------------------------------
# geometry commands


def _structure(path):
    d = io.load(path)
    if d["kind"] != "structure":
        raise SchemaError("$.kind", f"expected 'structure', got {d['kind']!r}")
    return io.structure_from_doc(d)


def _diffeo(path, chart=None):
    d = io.load(path)
    if d["kind"] != "diffeo":
        raise SchemaError("$.kind", f"expected 'diffeo', got {d['kind']!r}")
    return io.diffeo_from_doc(d, chart)


def cmd_verify(run: Run) -> int:
    a = run.args
    B = _structure(a.file)
    rep = validate_bilagrangian(B, a.samples, a.seed)
    run.report["report"] = rep.to_dict()
    _pop_csv(run, None)
    return run.finish(rep.passed, "" if rep.passed else _first_failure(rep.to_dict()))


def _first_failure(d: dict) -> str:
    for k, v in sorted(d.items()):
        if isinstance(v, dict) and v.get("ok") is False:
            return f"{k} failed" + (f": {v['reason']}" if v.get("reason") else "")
    return "validation failed"


def cmd_hess(run: Run) -> int:
    a = run.args
    B = _structure(a.file)
    C = hess_connection(B, samples=a.samples, seed=a.seed)
    run.artifact("connection.json", dumps(io.connection_to_doc(C)))
    if run.out is None:
        run.report["connection"] = io.connection_to_doc(C)
    _pop_csv(run, None)
    if not a.check:
        return run.finish(True)
    tol = a.tol if a.tol is not None else HESS_TOL
    rep = hess_verify(C, B, a.samples, a.seed, tol)
    flat = is_flat(C, a.samples, a.seed, tol)
    run.report["check"] = rep.to_dict()
    run.report["flat"] = {"flat": flat.flat, "residual": flat.residual, "statement": flat.statement}
    return run.finish(rep.passed, "" if rep.passed else "Hess residuals exceed tolerance")


def cmd_lift(run: Run) -> int:
    a = run.args
    B = _structure(a.file)
    base_doc = io.load(a.file)
    S = build_lifted_structure(B, a.i)
    doc = io.structure_to_doc(S)
    doc["provenance"]["base_hash"] = io.doc_hash(base_doc)
    rep = validate_bilagrangian(S, a.samples, a.seed)
    run.artifact(f"lift{a.i}.json", dumps(doc))
    if run.out is None:
        run.report["document"] = doc
    run.report["lift"] = {"i": a.i, "name": LIFT_NAMES[a.i]}
    run.report["validation"] = rep.to_dict()
    _pop_csv(run, None)
    return run.finish(rep.passed, "" if rep.passed else _first_failure(rep.to_dict()))


def cmd_push(run: Run) -> int:
    a = run.args
    B = _structure(a.file)
    psi = _diffeo(a.map, B.chart)
    P = push_structure(psi, B)
    doc = io.structure_to_doc(P)
    doc["provenance"]["base_hash"] = io.doc_hash(io.load(a.file))
    doc["provenance"]["map_hash"] = io.doc_hash(io.load(a.map))
    rep = validate_bilagrangian(P, a.samples, a.seed)
    run.artifact("pushed.json", dumps(doc))
    if run.out is None:
        run.report["document"] = doc
    run.report["validation"] = rep.to_dict()
    _pop_csv(run, None)
    return run.finish(rep.passed, "" if rep.passed else _first_failure(rep.to_dict()))


def cmd_diagram(run: Run) -> int:
    a = run.args
    B = _structure(a.file)
    psi = _diffeo(a.map, B.chart)
    kw = {} if a.tol is None else {"tol": a.tol}
    rep = diagram_commutes(B, psi, a.i, a.samples, a.seed, **kw)
    run.report["diagram"] = rep.to_dict()
    _pop_csv(run, None)
    reason = rep.reason or ("lifted foliations are not carried into each other" if not rep.commutes else "")
    return run.finish(rep.commutes, reason)


# ---------------------------------------------------------------------------
# cherry commands


def _cherry_field(d: dict, path: str = "$.params"):
    from .cherry import make_cherry_field

    return make_cherry_field(io.cherry_params_from_doc(d, path))


def _circle_map(path, args):
    """A sampled circle map from a ``cherry`` or ``synthetic_map`` document."""
    from .cherry import first_return_map, synthetic_cherry_map

    d = io.load(path)
    if d["kind"] == "cherry":
        X = _cherry_field(io._get(d, "params", "$", dict))
        return first_return_map(X, args.grid, args.tmax, _ode_tol(args)), X
    if d["kind"] == "synthetic_map":
        vals = {k: io._number(io._get(d, k, "$"), f"$.{k}") for k in ("a", "b", "c", "l1", "l2")}
        return synthetic_cherry_map(vals["a"], vals["b"], vals["c"], vals["l1"], vals["l2"], args.grid), None
    raise SchemaError("$.kind", f"expected 'cherry' or 'synthetic_map', got {d['kind']!r}")


def _ode_tol(args) -> float:
    return args.tol if args.tol is not None else 1e-11


def _map_report(f) -> dict:
    meta = f.metadata()
    meta.pop("meta", None)
    meta["status"] = f.meta.get("status")
    meta["in_L"] = f.meta.get("in_L", f.flat is not None)
    if "min_increment" in f.meta:
        meta["min_increment"] = f.meta["min_increment"]
    return meta


def cherry_sim(run: Run) -> int:
    from .cherry import rotation_number

    a = run.args
    f, X = _circle_map(a.file, a)
    rotation_number(f, a.iterates)
    if X is not None:
        run.report["singularities"] = [s.to_dict() for s in X.singularities]
        run.report["saddle_ratio"] = X.saddle_ratio
        run.report["omega"] = "dx^dy"
    run.report["map"] = _map_report(f)
    run.report["tolerances"] = {"ode": _ode_tol(a), "tmax": a.tmax, "crossing_y": 1e-12, "capture_radius": 1e-3}
    body = f.to_csv()
    run.artifact("map.csv", body)
    _pop_csv(run, body)
    return run.finish(True)


def cherry_glue(run: Run) -> int:
    from .cherry import glue_maps

    a = run.args
    if len(a.files) != 2:
        raise UsageError("cherry glue needs exactly two map documents")
    f1, _ = _circle_map(a.files[0], a)
    f2, _ = _circle_map(a.files[1], a)
    g = glue_maps(f1, f2)
    run.report["inputs"] = [_map_report(f1), _map_report(f2)]
    run.report["glued"] = _map_report(g)
    run.report["seam_jump"] = g.meta.get("seam_jump")
    body = g.to_csv()
    run.artifact("glued.csv", body)
    _pop_csv(run, body)
    return run.finish(True)


def _circle_diffeo(path):
    from .cherry import CircleDiffeo

    d = io.load(path)
    if d["kind"] != "circle_diffeo":
        raise SchemaError("$.kind", f"expected 'circle_diffeo', got {d['kind']!r}")
    var = d.get("var", "x")
    if not isinstance(var, str) or not var.isidentifier():
        raise SchemaError("$.var", "expected an identifier")
    from .geometry import Chart

    ch = Chart.euclidean([var], "S1", 0.0, 1.0)
    fwd = io._expr(ch, io._get(d, "forward", "$"), "$.forward")
    inv = d.get("inverse")
    inv = None if inv is None else io._expr(ch, inv, "$.inverse")
    try:
        return CircleDiffeo(fwd, inv, var)
    except ValueError as exc:
        raise Failure(str(exc)) from exc


def cherry_conj(run: Run) -> int:
    from .cherry import conjugate_map, rotation_number

    a = run.args
    if a.map is None:
        raise UsageError("cherry conj needs --map")
    f, _ = _circle_map(a.file, a)
    phi = _circle_diffeo(a.map)
    g = conjugate_map(phi, f, analyze=f.flat is not None)
    r0 = rotation_number(f, a.iterates)
    r1 = rotation_number(g, a.iterates)
    run.report["input"] = _map_report(f)
    run.report["conjugated"] = _map_report(g)
    run.report["rotation_change"] = abs(r1[0] - r0[0])
    body = g.to_csv()
    run.artifact("conjugated.csv", body)
    _pop_csv(run, body)
    ok = abs(r1[0] - r0[0]) <= 1e-4
    return run.finish(ok, "" if ok else "rotation number changed by more than 1e-4")


def _pair(d: dict):
    from .cherry import CherryParams, make_cherry_field

    if d["kind"] == "cherry":
        p = io.cherry_params_from_doc(io._get(d, "params", "$", dict))
        X = make_cherry_field(p)
        Y = make_cherry_field(CherryParams(**{**p.to_dict(), "center": p.center, "twist": p.twist + 0.5}))
        return X, Y, 0.0, []
    if d["kind"] != "cherry_pair":
        raise SchemaError("$.kind", f"expected 'cherry' or 'cherry_pair', got {d['kind']!r}")
    X = _cherry_field(io._get(d, "X", "$", dict), "$.X")
    Y = _cherry_field(io._get(d, "Y", "$", dict), "$.Y")
    cy = io._number(d.get("circle_y", 0.0), "$.circle_y")
    cands = []
    for k, c in enumerate(d.get("candidates", [])):
        p = f"$.candidates[{k}]"
        name = io._get(c, "name", p, str)
        cands.append((name, _cherry_field(io._get(c, "X", p, dict), f"{p}.X"),
                      _cherry_field(io._get(c, "Y", p, dict), f"{p}.Y")))
    return X, Y, cy, cands


def cherry_connection(run: Run) -> int:
    from .cherry import cherry_pair_hess, first_return_map, well_definedness_sample
    from .cherry.connection import COEFF_NAMES

    a = run.args
    X, Y, cy, cands = _pair(io.load(a.file))
    if a.circle_y is not None:
        cy = a.circle_y
    tol = a.tol if a.tol is not None else 1e-6
    pc = cherry_pair_hess(X, Y, cy, tol=tol)
    run.report["hess"] = pc.report.to_dict()
    run.report["circle_y"] = cy
    run.report["provenance"] = pc.provenance
    run.report["coefficient_sup"] = {k: float(np.max(np.abs(v))) for k, v in pc.coefficients.items()}
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", *COEFF_NAMES])
    for i, x in enumerate(pc.circle_x):
        w.writerow([repr(float(x)), *(repr(float(pc.coefficients[k][i])) for k in COEFF_NAMES)])
    run.artifact("coefficients.csv", buf.getvalue())
    run.artifact("connection.json", dumps(io.connection_to_doc(pc.table)))
    if cands:
        ref = first_return_map(X, a.grid, a.tmax, 1e-11)
        res = well_definedness_sample(cands, (X, Y), cy, a.grid, a.tmax, reference_map=ref)
        run.report["well_definedness"] = {
            "candidates": [r.to_dict() for r in res],
            "note": "sample evidence at the listed pairs only",
        }
    _pop_csv(run, buf.getvalue())
    return run.finish(pc.report.passed, "" if pc.report.passed else "Hess residuals exceed tolerance")


def cherry_equivariance(run: Run) -> int:
    from .cherry import equivariance_check, torus_chart

    a = run.args
    if a.map is None:
        raise UsageError("cherry equivariance needs --map")
    d = io.load(a.file)
    if d["kind"] != "cherry":
        raise SchemaError("$.kind", f"expected 'cherry', got {d['kind']!r}")
    X = _cherry_field(io._get(d, "params", "$", dict))
    psi = _diffeo(a.map, torus_chart())
    rep = equivariance_check(X, psi, a.grid, a.tmax, _ode_tol(a))
    run.report["equivariance"] = rep.to_dict()
    _pop_csv(run, None)
    return run.finish(rep.passed, "" if rep.passed else f"sup distance {rep.distance:.3g} exceeds {rep.tol:g}")


CHERRY = {"sim": cherry_sim, "glue": cherry_glue, "conj": cherry_conj, "connection": cherry_connection,
          "equivariance": cherry_equivariance}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for sample points")
    common.add_argument("--samples", type=int, default=50, help="number of random check points")
    common.add_argument("--tol", type=float, default=None, help="tolerance override (symbolic or ODE)")
    common.add_argument("--grid", type=int, default=512, help="return-map grid size")
    common.add_argument("--tmax", type=float, default=500.0, help="integration time cap")
    common.add_argument("--out", default=None, metavar="DIR", help="write report and artifacts here")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")

    p = argparse.ArgumentParser(prog="bilag", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", parents=[common], help="validate a bi-Lagrangian structure")
    s.add_argument("file")
    s = sub.add_parser("hess", parents=[common], help="Hess connection of a structure")
    s.add_argument("file")
    s.add_argument("--check", action="store_true", help="verify torsion, nabla omega and preservation")
    s = sub.add_parser("lift", parents=[common], help="lifted structure i = 1, 2 or 3")
    s.add_argument("file")
    s.add_argument("--i", type=int, choices=(1, 2, 3), required=True)
    s = sub.add_parser("push", parents=[common], help="push a structure forward by a diffeomorphism")
    s.add_argument("file")
    s.add_argument("--map", required=True)
    s = sub.add_parser("diagram", parents=[common], help="lift/push commutation for one instance")
    s.add_argument("file")
    s.add_argument("--i", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--map", required=True)

    c = sub.add_parser("cherry", help="Cherry flows and maps")
    csub = c.add_subparsers(dest="cherry_command", required=True)
    for name in ("sim", "conj", "connection", "equivariance"):
        s = csub.add_parser(name, parents=[common])
        s.add_argument("file")
        s.add_argument("--iterates", type=int, default=100_000, help="rotation-number iterates")
        s.add_argument("--map", default=None)
        s.add_argument("--circle-y", type=float, default=None)
    s = csub.add_parser("glue", parents=[common])
    s.add_argument("files", nargs="+")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.command_name = args.command if args.command != "cherry" else f"cherry {args.cherry_command}"
    run = Run(args)
    try:
        if args.command == "cherry":
            return CHERRY[args.cherry_command](run)
        return {"verify": cmd_verify, "hess": cmd_hess, "lift": cmd_lift, "push": cmd_push,
                "diagram": cmd_diagram}[args.command](run)
    except (SchemaError, UsageError) as exc:
        run.report["error"] = "schema" if isinstance(exc, SchemaError) else "usage"
        if isinstance(exc, SchemaError):
            run.report["path"] = exc.path
        run.artifacts.clear()
        run.report.pop("_csv", None)
        args.format = "json"
        run.finish(False, str(exc))
        return 2
    except FAILURES as exc:
        run.report.update(getattr(exc, "report", {}))
        run.report.pop("_csv", None)
        args.format = "json"
        loc = getattr(exc, "location", None)
        if loc is not None:
            run.report["location"] = loc
        return run.finish(False, str(exc))
    except ValueError as exc:
        run.report.pop("_csv", None)
        args.format = "json"
        return run.finish(False, str(exc))


if __name__ == "__main__":
    sys.exit(main())
