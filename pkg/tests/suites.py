"""Measurements shared by the module tests and the acceptance suite."""

import numpy as np

from bilag import expr as E
from bilag import models
from bilag.geometry import (Chart, DifferentialForm, _points, lie_bracket, pullback_form, push_structure,
                            validate_bilagrangian)
from bilag.hess import curvature_residual, hess_connection, hess_pointwise, hess_verify
from bilag.lifts import (build_lifted_structure, cotangent_lift_diffeo, lift_connection_complete, lift_field,
                         lift_form, lift_scalar, lift_tensor_complete, random_field, random_one_form, random_scalar,
                         tangent_chart, tautological_and_canonical)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(b)), initial=0.0))


def scalar_vals(f, pts):
    n = len(next(iter(pts.values())))
    return np.broadcast_to(np.asarray(E.evaluate(f, pts), float), (n,))


def form_vals(alpha, pts):
    if alpha.degree == 1:
        return np.stack([scalar_vals(alpha[(i,)], pts) for i in range(alpha.chart.dim)])
    return alpha.evaluate_matrix(pts)


def lift_algebra_errors(inputs=50, points=100, seed=0) -> dict[str, float]:
    """Max relative error of each product rule, the pairing identity and bracket naturality."""
    base = Chart.euclidean(["p", "q"])
    L = tangent_chart(base)
    pts = L.sample(points, seed)
    rng = np.random.default_rng(seed)
    err = dict.fromkeys(["(fg)^v", "(fg)^c", "(fX)^v", "(fX)^c", "(fa)^v", "(fa)^c", "pairing", "bracket"], 0.0)

    def up(name, a, b):
        err[name] = max(err[name], rel_err(a, b))

    def sv(f):
        return scalar_vals(f, pts)

    for _ in range(inputs):
        f, g = random_scalar(base.coords, rng), random_scalar(base.coords, rng)
        X, Y = random_field(base, rng), random_field(base, rng)
        alpha = random_one_form(base, rng)
        omega = DifferentialForm(base, 2, {(0, 1): random_scalar(base.coords, rng)})
        fv, fc = lift_scalar(f, "vertical", L), lift_scalar(f, "complete", L)
        gv, gc = lift_scalar(g, "vertical", L), lift_scalar(g, "complete", L)
        fg = E.mul(f, g)
        up("(fg)^v", sv(lift_scalar(fg, "vertical", L)), sv(fv) * sv(gv))
        up("(fg)^c", sv(lift_scalar(fg, "complete", L)), sv(fc) * sv(gv) + sv(fv) * sv(gc))

        Xv, Xc = lift_field(X, "vertical", L, check=False), lift_field(X, "complete", L, check=False)
        fX = X.scale(f)
        up("(fX)^v", lift_field(fX, "vertical", L, check=False).evaluate(pts), sv(fv) * Xv.evaluate(pts))
        up("(fX)^c", lift_field(fX, "complete", L, check=False).evaluate(pts),
           sv(fc) * Xv.evaluate(pts) + sv(fv) * Xc.evaluate(pts))

        av, ac = lift_form(alpha, "vertical", L, check=False), lift_form(alpha, "complete", L, check=False)
        fa = alpha.scale(f)
        up("(fa)^v", form_vals(lift_form(fa, "vertical", L, check=False), pts), sv(fv) * form_vals(av, pts))
        up("(fa)^c", form_vals(lift_form(fa, "complete", L, check=False), pts),
           sv(fc) * form_vals(av, pts) + sv(fv) * form_vals(ac, pts))

        Yc = lift_field(Y, "complete", L, check=False)
        wc = lift_tensor_complete(omega, L, check=False)
        up("pairing", sv(wc(Xc, Yc)), sv(lift_scalar(omega(X, Y), "complete", L)))
        up("bracket", lie_bracket(Xc, Yc).evaluate(pts),
           lift_field(lie_bracket(X, Y), "complete", L, check=False).evaluate(pts))
    return err


HESS_CASES = {"canonical": models.canonical_r2, "curved": models.curved_r2, "four-d": models.four_d}


def hess_suite(samples=50) -> dict[str, dict[str, float]]:
    """hess_verify residuals and the pointwise uniqueness gap for each reference structure."""
    out = {}
    for name, make in HESS_CASES.items():
        B = make()
        C = hess_connection(B)
        rep = hess_verify(C, B, samples)
        gam, deficit, resid, pts = hess_pointwise(B, samples, seed=1)
        out[name] = {"torsion": rep.torsion, "nabla_omega": rep.parallel, "preservation": rep.preservation,
                     "uniqueness_gap": float(np.max(np.abs(gam - C.evaluate(pts)))),
                     "rank_deficit": int(deficit.max()), "probe_residual": float(resid.max())}
    return out


LIFT_BASES = {"canonical": (models.canonical_r2, models.canonical_r2),
              "curved": (models.curved_r2_adapted, models.curved_r2)}


def lifted_suite(samples=30) -> dict[str, dict]:
    """Per base and index: validation, flatness residual for i=1, Hess(lift) vs lift(Hess) gap for i=3.

    The cotangent lifts of the curved base are built in its adapted chart.
    """
    out = {}
    for name, (cot_base, tan_base) in LIFT_BASES.items():
        for i in (1, 2, 3):
            B = (cot_base if i < 3 else tan_base)()
            Li = build_lifted_structure(B, i)
            row = {"valid": validate_bilagrangian(Li, samples).passed}
            C = hess_connection(Li)
            row["hess_passed"] = hess_verify(C, Li, samples).passed
            row["curvature"] = curvature_residual(C, samples)
            if i == 3:
                lifted = lift_connection_complete(hess_connection(B), Li.chart)
                pts = _points(Li.chart, samples, 0)
                row["lift_gap"] = float(np.max(np.abs(C.evaluate(pts) - lifted.evaluate(pts))))
            out[f"{name}/i={i}"] = row
    return out


def symplecto_suite(samples=30) -> dict[str, dict]:
    """Pushed structures validate and the cotangent lift keeps theta and dtheta."""
    out = {}
    for name in models.SHEARS:
        psi = models.shear(name)
        row = {}
        for bname in ("canonical", "curved"):
            row[f"push_{bname}_valid"] = validate_bilagrangian(
                push_structure(psi, models.STRUCTURES[bname]()), samples).passed
        hat = cotangent_lift_diffeo(psi)
        th_s, dth_s = tautological_and_canonical(hat.source)
        th_t, dth_t = tautological_and_canonical(hat.target)
        pts = _points(hat.source, samples, 0)
        row["dtheta"] = rel_err(form_vals(pullback_form(hat, dth_t), pts), form_vals(dth_s, pts))
        row["theta"] = rel_err(form_vals(pullback_form(hat, th_t), pts), form_vals(th_s, pts))
        out[name] = row
    return out

