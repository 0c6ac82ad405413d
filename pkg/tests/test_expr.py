import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from bilag import expr as E

x, y = E.var("x"), E.var("y")
SQUARE = E.Domain.box(["x", "y"])


def test_diff_power_rule():
    assert E.approx_equal(E.diff(x ** 2, "x"), 2 * x, SQUARE)


def test_diff_product_rule():
    assert E.approx_equal(E.diff(E.sin(x) * y, "x"), E.cos(x) * y, SQUARE)


def test_diff_constant_is_zero():
    assert E.diff(E.const(3.5), "x").is_zero()


def test_diff_unknown_variable():
    with pytest.raises(E.UnknownVariableError):
        E.diff(x * y, "z", variables=["x", "y"])


def test_eval_examples():
    assert E.evaluate(x + y, {"x": 1, "y": 2}) == 3
    assert E.evaluate(E.sin(x), {"x": 0}) == 0


def test_eval_domain_error_carries_node():
    e = 1 / x
    with pytest.raises(E.DomainError) as info:
        E.evaluate(e, {"x": 0.0})
    assert info.value.node is not None


def test_log_of_nonpositive():
    with pytest.raises(E.DomainError):
        E.evaluate(E.log(x), {"x": -1.0})


def test_approx_equal_examples():
    assert E.approx_equal((x + y) ** 2, x ** 2 + 2 * x * y + y ** 2, SQUARE, 100, 1e-9)
    bad = E.approx_equal(x, x + 1e-3, SQUARE, 100, 1e-9)
    assert not bad and bad.witness is not None and set(bad.witness) == {"x", "y"}
    assert E.approx_equal(E.sin(x) ** 2 + E.cos(x) ** 2, E.ONE, SQUARE)


def test_approx_equal_inconclusive():
    with pytest.raises(E.InconclusiveError):
        E.approx_equal(E.log(x - 2), E.log(x - 2), SQUARE, 50)


def test_periodic_reduction():
    dom = E.Domain.box(["x"], periodic=["x"])
    assert dom.reduce({"x": 1.25})["x"] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        E.Domain({"x": (0.0, 2.0)}, frozenset(["x"]))


def test_parse_and_print():
    e = E.parse("x^2*sin(y) - 3/4 + exp(-x)", ["x", "y"])
    s = E.to_string(e)
    again = E.parse(s, ["x", "y"])
    assert E.approx_equal(e, again, SQUARE, 50, 1e-15)
    assert E.to_string(again) == E.to_string(E.parse(E.to_string(again), ["x", "y"]))


def test_parse_errors_have_span():
    with pytest.raises(E.ParseError) as info:
        E.parse("x + $", ["x"])
    assert info.value.span[0] == 4
    with pytest.raises(E.ParseError):
        E.parse("x + z", ["x"])


def test_pi_literal():
    assert E.evaluate(E.parse("pi"), {}) == pytest.approx(math.pi)


def test_constant_folding_and_absorption():
    assert (x * 0).is_zero()
    assert E.to_string(x * 1 + 0) == "x"
    assert E.evaluate(E.const(2) * 3, {}) == 6


# random expressions -------------------------------------------------------------


def _build(tree, syms):
    """Turn a nested tuple into (ScalarExpr, sympy expr)."""
    if tree[0] == "x":
        return x, syms[0]
    if tree[0] == "y":
        return y, syms[1]
    if tree[0] == "c":
        return E.const(tree[1]), sp.nsimplify(tree[1])
    op = tree[0]
    a = _build(tree[1], syms)
    if op in ("sin", "cos", "exp"):
        arg = (E.mul(E.const(0.5), a[0]), a[1] / 2)
        return getattr(E, op)(arg[0]), getattr(sp, op)(arg[1])
    if op == "pow":
        return E.power(a[0], tree[2]), a[1] ** tree[2]
    b = _build(tree[2], syms)
    if op == "+":
        return E.add(a[0], b[0]), a[1] + b[1]
    if op == "-":
        return E.sub(a[0], b[0]), a[1] - b[1]
    return E.mul(a[0], b[0]), a[1] * b[1]


leaves = st.one_of(st.just(("x",)), st.just(("y",)),
                   st.tuples(st.just("c"), st.sampled_from([-2.0, -0.5, 0.25, 1.0, 3.0])))
trees = st.recursive(
    leaves,
    lambda kids: st.one_of(
        st.tuples(st.sampled_from(["+", "-", "*"]), kids, kids),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), kids),
        st.tuples(st.just("pow"), kids, st.integers(0, 3)),
    ),
    max_leaves=8,
)


@settings(max_examples=200, deadline=None)
@given(trees, st.floats(-1, 1), st.floats(-1, 1))
def test_diff_matches_central_differences(tree, px, py):
    e, _ = _build(tree, sp.symbols("x y"))
    d = E.diff(e, "x")
    h = 1e-4
    fd = (E.evaluate(e, {"x": px + h, "y": py}) - E.evaluate(e, {"x": px - h, "y": py})) / (2 * h)
    exact = E.evaluate(d, {"x": px, "y": py})
    scale = 1 + abs(exact) + abs(E.evaluate(e, {"x": px, "y": py}))
    # O(h^2) truncation with room for third derivatives of the nested exponentials
    assert abs(fd - exact) <= 1e3 * h * h * scale


@settings(max_examples=60, deadline=None)
@given(trees)
def test_diff_matches_sympy(tree):
    sx, sy = sp.symbols("x y")
    e, se = _build(tree, (sx, sy))
    for var, svar in (("x", sx), ("y", sy)):
        mine = E.diff(e, var)
        ref = sp.lambdify((sx, sy), sp.diff(se, svar), "numpy")
        pts = SQUARE.sample(7, 3)
        got = np.broadcast_to(np.asarray(E.evaluate(mine, pts), float), (7,))
        want = np.broadcast_to(np.asarray(ref(pts["x"], pts["y"]), float), (7,))
        assert np.allclose(got, want, rtol=1e-10, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(trees, trees)
def test_approx_equal_symmetric_and_reflexive(t1, t2):
    e1, _ = _build(t1, sp.symbols("x y"))
    e2, _ = _build(t2, sp.symbols("x y"))
    assert E.approx_equal(e1, e1, SQUARE, 20)
    assert bool(E.approx_equal(e1, e2, SQUARE, 20)) == bool(E.approx_equal(e2, e1, SQUARE, 20))


@settings(max_examples=80, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    e, _ = _build(tree, sp.symbols("x y"))
    back = E.parse(E.to_string(e), ["x", "y"])
    assert E.approx_equal(e, back, SQUARE, 20, 1e-12)
