import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from bilag import expr as E
from bilag.geometry import (BiLagrangianStructure, Chart, ChartMismatchError, DiffeoSpec, DifferentialForm,
                            FoliationFrame, RankDeficiencyError, VectorField, adapted_chart_check,
                            exterior_derivative, frobenius_check, is_lagrangian, is_symplectic, lie_bracket,
                            pullback_form, pushforward_field, validate_bilagrangian)
from bilag.lifts import cotangent_chart, random_field, random_one_form, tautological_and_canonical

R2 = Chart.euclidean(["p", "q"])
R1 = Chart.euclidean(["x"])


def vf(chart, *comps):
    return VectorField.parse(chart, list(comps))


def same_field(X, Y, samples=30):
    return all(E.approx_equal(a, b, X.chart.domain, samples) for a, b in zip(X.comps, Y.comps))


def same_form(a, b, samples=30):
    keys = set(a.coeffs) | set(b.coeffs)
    return all(E.approx_equal(a[k], b[k], a.chart.domain, samples) for k in keys)


def dq_dp(chart=R2, coeff="1"):
    return DifferentialForm.from_terms(chart, [(coeff, ["q", "p"])])


def test_bracket_examples():
    assert lie_bracket(R2.coordinate_field("p"), R2.coordinate_field("q")).is_zero()
    assert same_field(lie_bracket(vf(R2, "1", "0"), vf(R2, "q", "0")), vf(R2, "0", "0"))
    assert same_field(lie_bracket(vf(R2, "0", "1"), vf(R2, "q*p", "0")), vf(R2, "p", "0"))


def test_bracket_chart_mismatch():
    other = Chart.euclidean(["p", "q"], "other")
    with pytest.raises(ChartMismatchError):
        lie_bracket(R2.coordinate_field("p"), other.coordinate_field("p"))


def test_bracket_matches_sympy():
    rng = np.random.default_rng(4)
    P, Q = sp.symbols("p q")
    for _ in range(10):
        X, Y = random_field(R2, rng), random_field(R2, rng)
        sx = [sp.sympify(E.to_string(c).replace("^", "**"), locals={"p": P, "q": Q}) for c in X.comps]
        sy = [sp.sympify(E.to_string(c).replace("^", "**"), locals={"p": P, "q": Q}) for c in Y.comps]
        ref = [sum(sx[i] * sp.diff(sy[j], v) - sy[i] * sp.diff(sx[j], v) for i, v in enumerate((P, Q)))
               for j in range(2)]
        got = lie_bracket(X, Y)
        pts = R2.sample(10, 1)
        for j in range(2):
            want = sp.lambdify((P, Q), ref[j], "numpy")(pts["p"], pts["q"])
            assert np.allclose(E.evaluate(got.comps[j], pts), want, rtol=1e-10, atol=1e-10)


def test_exterior_derivative_examples():
    L = cotangent_chart(R1)
    theta = DifferentialForm.from_terms(L, [("xi1", ["x"])])
    assert same_form(exterior_derivative(theta), DifferentialForm.from_terms(L, [(1, ["xi1", "x"])]))
    # d(dq^dp) read on T*R2, where a 3-form exists
    T = cotangent_chart(R2)
    assert not exterior_derivative(DifferentialForm.from_terms(T, [(1, ["q", "p"])])).coeffs
    xy = Chart.euclidean(["x", "y"])
    assert same_form(exterior_derivative(DifferentialForm.from_terms(xy, [("x", ["y"])])),
                     DifferentialForm.from_terms(xy, [(1, ["x", "y"])]))


def test_exterior_derivative_top_degree():
    with pytest.raises(ValueError):
        exterior_derivative(DifferentialForm(R1, 1, {(0,): "x"}))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_d_squared_is_zero(seed):
    R3 = Chart.euclidean(["a", "b", "c"])
    alpha = random_one_form(R3, np.random.default_rng(seed))
    dd = exterior_derivative(exterior_derivative(alpha))
    assert all(E.approx_equal(c, E.ZERO, R3.domain, 20) for c in dd.coeffs.values())


def test_pushforward_examples():
    psi = DiffeoSpec(R1, R1, ("2*x",), ("x/2",))
    assert same_field(pushforward_field(psi, R1.coordinate_field("x")), vf(R1, "2"))
    assert same_field(pushforward_field(DiffeoSpec.identity(R2), vf(R2, "q", "p^2")), vf(R2, "q", "p^2"))
    shear = DiffeoSpec(R2, R2, ("p+q", "q"), ("p-q", "q"))
    assert same_field(pushforward_field(shear, R2.coordinate_field("q")), vf(R2, "1", "1"))


def test_pushforward_needs_inverse():
    psi = DiffeoSpec(R2, R2, ("p+q", "q"))
    with pytest.raises(ValueError):
        pushforward_field(psi, R2.coordinate_field("q"))


def test_pullback_examples():
    om = dq_dp()
    assert same_form(pullback_form(DiffeoSpec.identity(R2), om), om)
    psi = DiffeoSpec(R1, R1, ("2*x",), ("x/2",))
    assert same_form(pullback_form(psi, DifferentialForm(R1, 1, {(0,): "1"})), DifferentialForm(R1, 1, {(0,): "2"}))
    shear = DiffeoSpec(R2, R2, ("p", "q+p^2"), ("p", "q-p^2"))
    assert same_form(pullback_form(shear, om), om)


def test_naturality_of_pullback():
    psi = DiffeoSpec(R2, R2, ("p + sin(q)", "q"), ("p - sin(q)", "q"))
    rng = np.random.default_rng(2)
    for _ in range(5):
        a = random_one_form(R2, rng)
        assert same_form(pullback_form(psi, exterior_derivative(a)), exterior_derivative(pullback_form(psi, a)))


def test_pushforward_commutes_with_bracket():
    psi = DiffeoSpec(R2, R2, ("p + q^3", "q"), ("p - q^3", "q"))
    rng = np.random.default_rng(3)
    for _ in range(5):
        X, Y = random_field(R2, rng), random_field(R2, rng)
        lhs = pushforward_field(psi, lie_bracket(X, Y))
        rhs = lie_bracket(pushforward_field(psi, X), pushforward_field(psi, Y))
        pts = R2.sample(30, 0)
        assert np.allclose(lhs.evaluate(pts), rhs.evaluate(pts), rtol=1e-8, atol=1e-8)


def test_frobenius_examples():
    assert frobenius_check(FoliationFrame(R2, [R2.coordinate_field("p")]))
    assert frobenius_check(FoliationFrame(R2, [R2.coordinate_field("p"), R2.coordinate_field("q")]))
    R3 = Chart.euclidean(["x", "y", "z"])
    r = frobenius_check(FoliationFrame(R3, [vf(R3, "1", "0", "y"), vf(R3, "0", "1", "0")]))
    assert not r and r.residual > 0.1


def test_frobenius_rank_deficiency():
    with pytest.raises(RankDeficiencyError) as info:
        frobenius_check(FoliationFrame(R2, [vf(R2, "1", "0"), vf(R2, "2", "0")]))
    assert info.value.location is not None


def test_symplectic_examples():
    assert is_symplectic(dq_dp())
    R4 = Chart.euclidean(["p", "q", "xi1", "xi2"])
    assert is_symplectic(DifferentialForm.from_terms(R4, [(1, ["xi1", "p"]), (1, ["xi2", "q"])]))
    degenerate = is_symplectic(dq_dp(coeff="p"), samples={"p": np.array([0.0, 0.5]), "q": np.array([0.1, 0.2])})
    assert not degenerate
    R3 = Chart.euclidean(["a", "b", "c"])
    odd = is_symplectic(DifferentialForm.from_terms(R3, [(1, ["a", "b"])]))
    assert not odd and "odd" in odd.reason


def test_lagrangian_examples():
    om = dq_dp()
    assert is_lagrangian(FoliationFrame(R2, [R2.coordinate_field("p")]), om)
    both = is_lagrangian(FoliationFrame(R2, [R2.coordinate_field("p"), R2.coordinate_field("q")]), om)
    assert not both and both.rank == 2
    L = cotangent_chart(R2)
    _, dtheta = tautological_and_canonical(L)
    assert is_lagrangian(FoliationFrame(L, [L.coordinate_field("p"), L.coordinate_field("xi2")]), dtheta)


def test_validate_examples(canonical, curved):
    assert validate_bilagrangian(canonical).passed
    same = BiLagrangianStructure(R2, dq_dp(), FoliationFrame(R2, [R2.coordinate_field("p")]),
                                 FoliationFrame(R2, [R2.coordinate_field("p")]))
    rep = validate_bilagrangian(same)
    assert not rep.passed and not rep.transversal
    assert validate_bilagrangian(curved).passed


def test_single_field_is_lagrangian_in_the_plane():
    rng = np.random.default_rng(7)
    om = dq_dp()
    for _ in range(5):
        X = random_field(R2, rng)
        pts = R2.sample(20, 0)
        assert np.max(np.abs(E.evaluate(om(X, X), pts))) == 0.0


def test_adapted_chart_examples(canonical, curved, curved_adapted):
    assert adapted_chart_check(canonical)
    assert not adapted_chart_check(curved)
    doubled = BiLagrangianStructure(R2, dq_dp(coeff="2"), canonical.F1, canonical.F2)
    assert not adapted_chart_check(doubled)


def test_diffeo_inverse_check():
    psi = DiffeoSpec(R2, R2, ("p + sin(q)", "q"), ("p - sin(q)", "q"))
    assert psi.check_inverse() < 1e-12
    wrong = DiffeoSpec(R2, R2, ("p + sin(q)", "q"), ("p + sin(q)", "q"))
    with pytest.raises(ValueError):
        wrong.check_inverse()
