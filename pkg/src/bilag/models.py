"""Reference structures and maps used by the tests, the data files and the CLI examples."""

from __future__ import annotations

from .geometry import (BiLagrangianStructure, Chart, DiffeoSpec, DifferentialForm, FoliationFrame, VectorField,
                       canonical_form, push_structure)


def plane(name: str = "R2") -> Chart:
    return Chart.euclidean(["p", "q"], name)


def _dq_dp(chart: Chart) -> DifferentialForm:
    return DifferentialForm.from_terms(chart, [(1, ["q", "p"])])


def canonical_r2() -> BiLagrangianStructure:
    ch = plane()
    return BiLagrangianStructure(ch, _dq_dp(ch), FoliationFrame(ch, [ch.coordinate_field("p")]),
                                 FoliationFrame(ch, [ch.coordinate_field("q")]), provenance={"model": "canonical"})


def curved_r2() -> BiLagrangianStructure:
    """F1 spanned by d/dp, F2 by q p d/dp + d/dq; its Hess connection is not the coordinate one."""
    ch = plane()
    return BiLagrangianStructure(ch, _dq_dp(ch), FoliationFrame(ch, [VectorField.parse(ch, ["1", "0"])]),
                                 FoliationFrame(ch, [VectorField.parse(ch, ["q*p", "1"])]),
                                 provenance={"model": "curved"})


def straightening_map() -> DiffeoSpec:
    """(p, q) -> (p exp(-q^2/2), q); it carries F2 of the curved example to the coordinate foliation."""
    return DiffeoSpec(plane(), Chart.euclidean(["p", "q"], "A"), ("p*exp(-q^2/2)", "q"), ("p*exp(q^2/2)", "q"))


def curved_r2_adapted() -> BiLagrangianStructure:
    """The curved example read in coordinates where both foliations are coordinate foliations."""
    B = push_structure(straightening_map(), curved_r2())
    B.provenance = {"model": "curved-adapted"}
    return B


def four_d() -> BiLagrangianStructure:
    ch = Chart.euclidean(["p1", "p2", "q1", "q2"], "R4")
    F1 = FoliationFrame(ch, [VectorField.parse(ch, ["1", "0", "0", "0"]), VectorField.parse(ch, ["p1", "1", "0", "0"])])
    F2 = FoliationFrame(ch, [VectorField.parse(ch, ["2*q2", "2*q1", "1", "0"]),
                             VectorField.parse(ch, ["2*q1", "0", "0", "1"])])
    return BiLagrangianStructure(ch, canonical_form(ch), F1, F2, provenance={"model": "four-d"})


SHEARS = {
    "quadratic": (("p", "q + p^2"), ("p", "q - p^2")),
    "sine": (("p + sin(q)", "q"), ("p - sin(q)", "q")),
    "cubic": (("p + q^3", "q"), ("p - q^3", "q")),
}


def shear(name: str) -> DiffeoSpec:
    """Area-preserving shears of the plane (symplectic for dq^dp)."""
    fwd, inv = SHEARS[name]
    ch = plane()
    return DiffeoSpec(ch, ch, fwd, inv)


def linear_shear() -> DiffeoSpec:
    ch = plane()
    return DiffeoSpec(ch, ch, ("p + q", "q"), ("p - q", "q"))


STRUCTURES = {"canonical": canonical_r2, "curved": curved_r2, "curved-adapted": curved_r2_adapted, "four-d": four_d}
