import numpy as np
import pytest
import sympy as sp

from bilag import expr as E
from bilag.geometry import (BiLagrangianStructure, Chart, DiffeoSpec, DifferentialForm, FoliationFrame, VectorField,
                            _points, push_structure)
from bilag.hess import (HESS_TOL, ConnectionTable, SingularPairingError, covariant_derivative, curvature,
                        curvature_residual, hess_connection, hess_pointwise, hess_verify, is_flat,
                        pushforward_connection, torsion, zero_table)


def values(expr, pts):
    n = len(next(iter(pts.values())))
    return np.broadcast_to(np.asarray(E.evaluate(expr, pts), float), (n,))


def table_close(C, D, samples=50, tol=1e-8):
    pts = _points(C.chart, samples, 0)
    return np.max(np.abs(C.evaluate(pts) - D.evaluate(pts))) <= tol


def test_canonical_table_is_zero(canonical):
    C = hess_connection(canonical)
    assert all(g.is_zero() for plane in C.gamma for row in plane for g in row)
    assert all(T.is_zero() for T in torsion(C).values())
    assert all(R.is_zero() for R in curvature(C).values())
    rep = hess_verify(C, canonical)
    assert (rep.torsion, rep.parallel, rep.preservation) == (0.0, 0.0, 0.0)


def _curved_oracle():
    """Solve the characterizing equations of the curved example with sympy."""
    p, q = sp.symbols("p q")
    E1, E2 = sp.Matrix([1, 0]), sp.Matrix([q * p, 1])
    frame = [E1, E2]
    G = sp.symbols("g0:8")
    gam = lambda k, i, j: G[4 * k + 2 * i + j]

    def apply(V, f):
        return V[0] * sp.diff(f, p) + V[1] * sp.diff(f, q)

    def bracket(X, Y):
        return sp.Matrix([apply(X, Y[r]) - apply(Y, X[r]) for r in range(2)])

    Fm = sp.Matrix.hstack(E1, E2)
    c = Fm.solve(bracket(E1, E2))
    w = lambda X, Y: X[1] * Y[0] - X[0] * Y[1]  # dq^dp
    W = [[w(a, b) for b in frame] for a in frame]
    eqs = [gam(k, 0, 1) - gam(k, 1, 0) - c[k] for k in range(2)]
    for a in range(2):
        for b in range(2):
            for cc in range(2):
                eqs.append(apply(frame[a], W[b][cc]) - sum(gam(k, a, b) * W[k][cc] + gam(k, a, cc) * W[b][k]
                                                           for k in range(2)))
    eqs += [gam(1, a, 0) for a in range(2)] + [gam(0, a, 1) for a in range(2)]
    sol = sp.solve(eqs, G, dict=True)
    assert len(sol) == 1
    return [[[sp.simplify(sol[0][gam(k, i, j)]) for j in range(2)] for i in range(2)] for k in range(2)], (p, q)


def test_curved_table_matches_sympy_oracle(curved):
    ref, (p, q) = _curved_oracle()
    # frozen: nabla_E2 E1 = -q E1, nabla_E2 E2 = q E2, everything else zero
    assert ref[0][1][0] == -q and ref[1][1][1] == q
    C = hess_connection(curved)
    pts = _points(curved.chart, 40, 1)
    for k in range(2):
        for i in range(2):
            for j in range(2):
                want = sp.lambdify((p, q), ref[k][i][j], "numpy")(pts["p"], pts["q"])
                assert np.allclose(values(C.gamma[k][i][j], pts), want, atol=1e-12)


def test_curved_is_torsion_free_flat_and_verified(curved):
    C = hess_connection(curved)
    assert hess_verify(C, curved).passed
    assert is_flat(C)
    pts = _points(curved.chart, 30, 2)
    for T in torsion(C).values():
        assert np.max(np.abs(T.evaluate(pts))) < 1e-12


def test_corrupted_table_torsion():
    ch = Chart.euclidean(["p", "q"])
    frame = (ch.coordinate_field("p"), ch.coordinate_field("q"))
    G = zero_table(2)
    G[0][0][1] = E.ONE  # Gamma^1_12 += 1
    C = ConnectionTable(ch, frame, G, split=1)
    T = torsion(C)[(0, 1)]
    assert E.evaluate(T.comps[0], {"p": 0.3, "q": 0.1}) == 1.0 and T.comps[1].is_zero()
    # curvature is evaluated without any expectation
    assert np.isfinite(is_flat(C).residual)


def test_covariant_derivative_examples(canonical, curved):
    C0 = hess_connection(canonical)
    assert covariant_derivative(C0, canonical.chart.coordinate_field("p"),
                                canonical.chart.coordinate_field("q")).is_zero()
    C = hess_connection(curved)
    E1, E2 = curved.frame
    qE1 = VectorField(curved.chart, tuple(E.mul(E.var("q"), c) for c in E1.comps))
    got = covariant_derivative(C, E2, qE1, check_samples=20)
    want = VectorField(curved.chart, tuple(E.mul(E.parse("1 - q^2", ["p", "q"]), c) for c in E1.comps))
    pts = _points(curved.chart, 30, 3)
    assert np.allclose(got.evaluate(pts), want.evaluate(pts), atol=1e-12)
    zero = VectorField(curved.chart, (E.ZERO, E.ZERO))
    assert covariant_derivative(C, zero, E2).is_zero()


def test_covariant_derivative_is_tensorial_in_x(curved):
    C = hess_connection(curved)
    E1, E2 = curved.frame
    f = E.parse("1 + p^2", ["p", "q"])
    fX = VectorField(curved.chart, tuple(E.mul(f, c) for c in E2.comps))
    lhs = covariant_derivative(C, fX, E2)
    rhs = covariant_derivative(C, E2, E2)
    pts = _points(curved.chart, 30, 4)
    assert np.allclose(lhs.evaluate(pts), values(f, pts) * rhs.evaluate(pts), atol=1e-10)


def test_pushforward_identity_and_scaling(canonical, curved):
    C = hess_connection(curved)
    same = pushforward_connection(DiffeoSpec.identity(curved.chart), C)
    assert table_close(C, same, tol=0.0)
    ch = canonical.chart
    stretch = DiffeoSpec(ch, ch, ("2*p", "q"), ("p/2", "q"))
    pushed = pushforward_connection(stretch, hess_connection(canonical))
    assert all(g.is_zero() for plane in pushed.gamma for row in plane for g in row)


@pytest.mark.parametrize("fwd,inv", [(("2*p", "q"), ("p/2", "q")), (("p + q", "q"), ("p - q", "q")),
                                     (("p", "q + p^2"), ("p", "q - p^2"))])
def test_pushed_connection_is_hess_of_pushed_structure(curved, fwd, inv):
    psi = DiffeoSpec(curved.chart, curved.chart, fwd, inv)
    B2 = push_structure(psi, curved)
    pushed = pushforward_connection(psi, hess_connection(curved))
    assert hess_verify(pushed, B2).passed
    assert table_close(pushed, hess_connection(B2))


def test_constant_multiple_of_omega(canonical):
    ch = canonical.chart
    om2 = DifferentialForm.from_terms(ch, [(2, ["q", "p"])])
    B = BiLagrangianStructure(ch, om2, canonical.F1, canonical.F2)
    C = ConnectionTable(ch, canonical.frame, zero_table(2), split=1)
    assert hess_verify(C, B).passed


def test_four_d_example(four_d):
    C = hess_connection(four_d)
    rep = hess_verify(C, four_d)
    assert rep.passed, rep.to_dict()
    n = four_d.n
    for k in range(2 * n):
        for i in range(2 * n):
            for j in range(2 * n):
                if (j < n) != (k < n):
                    assert C.gamma[k][i][j].is_zero()


def test_uniqueness_probe(curved, four_d):
    for B in (curved, four_d):
        gammas, deficit, resid, pts = hess_pointwise(B, samples=50, seed=5)
        assert not deficit.any() and resid.max() < 1e-10
        assert np.max(np.abs(gammas - hess_connection(B).evaluate(pts))) < 1e-8


def test_singular_pairing():
    ch = Chart.euclidean(["p", "q"])
    om = DifferentialForm.from_terms(ch, [("p", ["q", "p"])])
    B = BiLagrangianStructure(ch, om, FoliationFrame(ch, [ch.coordinate_field("p")]),
                              FoliationFrame(ch, [ch.coordinate_field("q")]))
    pts = {"p": np.array([0.0, 0.4]), "q": np.array([0.2, 0.3])}
    with pytest.raises(SingularPairingError):
        hess_connection(B, samples=pts)


def test_curvature_antisymmetry(four_d):
    C = hess_connection(four_d)
    pts = _points(four_d.chart, 20, 6)
    R = curvature(C)
    from bilag.hess import _curvature_terms
    for (i, j, k) in list(R)[:12]:
        for mm in range(C.dim):
            a = sum(values(t, pts) for t in _curvature_terms(C, i, j, k, mm))
            b = sum(values(t, pts) for t in _curvature_terms(C, j, i, k, mm))
            assert np.allclose(a, -b, atol=1e-12)
    assert curvature_residual(C) < HESS_TOL
