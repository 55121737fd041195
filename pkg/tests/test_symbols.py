"""Exactness and convention checks for the symbol calculus."""
import numpy as np
import pytest

from torusdiag import autodiff as ad
from torusdiag import symbols as sym
from util import (node_gap, poly_gap, random_poly, random_selfadjoint_poly,
                  random_trig_component)

GRID = sym.default_grid()


def test_trig_matches_closure_leaf():
    """Same function via coefficient table and via dual-capable closure."""
    coeffs = {(1, 0, 1): [[0.25]], (-1, 0, -1): [[0.25]],
              (1, 0, -1): [[0.25]], (-1, 0, 1): [[0.25]],
              (0, 0, 0): [[2.0]]}
    t = sym.trig(0.0, (1, 1), coeffs)  # cos(x1) cos(theta) + 2

    def fn(x1, x2, th):
        return ad.pack([[ad.cos(x1) * ad.cos(th) + 2.0]])

    c = sym.closure(0.0, (1, 1), fn, x_dep=(True, False))
    assert node_gap(t, c) < 1e-13
    assert node_gap(t.dx(0), c.dx(0)) < 1e-12
    assert node_gap(t.dtheta(), c.dtheta()) < 1e-12
    assert node_gap(t.dx(0).dtheta(), c.dx(0).dtheta()) < 1e-12
    assert c.dx(1).is_zero  # declared x2-independent


def test_fiber_derivative_on_polynomial_symbols():
    """d/dxi on xi-polynomials reproduces the elementary closed forms."""
    # a = xi_1^2  ->  sphere data cos^2(theta) at degree 2
    a = sym.trig(2.0, (1, 1), {(0, 0, 0): [[0.5]], (0, 0, 2): [[0.25]],
                               (0, 0, -2): [[0.25]]})
    d1 = a.dxi(0)
    want = 2 * np.cos(GRID.theta)  # sphere data of 2 xi_1 at degree 1
    assert np.max(np.abs(d1.values(GRID)[:, 0, 0] - want)) < 1e-13
    assert sym.sup_norm(a.dxi(1)) < 1e-13
    assert abs(d1.degree - 1.0) < 1e-12

    # a = xi_1 xi_2 -> sphere data sin(theta)cos(theta)
    b = sym.trig(2.0, (1, 1), {(0, 0, 2): [[-0.25j]], (0, 0, -2): [[0.25j]]})
    assert np.max(np.abs(b.dxi(0).values(GRID)[:, 0, 0]
                         - np.sin(GRID.theta))) < 1e-13
    assert np.max(np.abs(b.dxi(1).values(GRID)[:, 0, 0]
                         - np.cos(GRID.theta))) < 1e-13


def test_fiber_derivative_negative_degree():
    # a = xi_1 / |xi|^2: d a / d xi_1 = (xi_2^2 - xi_1^2)/|xi|^4,
    # i.e. sphere data -cos(2 theta) at degree -2.
    a = sym.trig(-1.0, (1, 1), {(0, 0, 1): [[0.5]], (0, 0, -1): [[0.5]]})
    d = a.dxi(0)
    assert np.max(np.abs(d.values(GRID)[:, 0, 0]
                         + np.cos(2 * GRID.theta))) < 1e-13
    assert abs(d.degree + 2.0) < 1e-12


def test_mixed_partials_commute():
    rng = np.random.default_rng(7)
    a = random_trig_component(rng, 1.0, (2, 2))
    assert node_gap(a.dxi(0).dxi(1), a.dxi(1).dxi(0)) < 1e-11
    assert node_gap(a.dx(0).dxi(0), a.dxi(0).dx(0)) < 1e-11
    assert node_gap(a.dtheta().dx(1), a.dx(1).dtheta()) < 1e-12


def test_compose_associative():
    """Associativity through depth 3 pins the term bookkeeping."""
    rng = np.random.default_rng(11)
    A = random_poly(rng, 2.0, 3, (2, 2))
    B = random_poly(rng, 1.0, 3, (2, 2))
    C = random_poly(rng, 0.0, 3, (2, 2))
    left = sym.compose(sym.compose(A, B, 3), C, 3)
    right = sym.compose(A, sym.compose(B, C, 3), 3)
    assert poly_gap(left, right) < 1e-10


def test_compose_identity_neutral():
    rng = np.random.default_rng(13)
    A = random_poly(rng, 1.0, 2, (2, 2))
    I = sym.identity_poly(2, depth=2)
    assert poly_gap(sym.compose(A, I, 2), A) < 1e-12
    assert poly_gap(sym.compose(I, A, 2), A) < 1e-12


def test_adjoint_involution():
    rng = np.random.default_rng(17)
    A = random_poly(rng, 2.0, 3, (2, 3))
    assert poly_gap(sym.adjoint(sym.adjoint(A, 3), 3), A) < 1e-11


def test_adjoint_antihomomorphism():
    rng = np.random.default_rng(19)
    A = random_poly(rng, 1.0, 2, (2, 2))
    B = random_poly(rng, 1.0, 2, (2, 2))
    lhs = sym.adjoint(sym.compose(A, B, 2), 2)
    rhs = sym.compose(sym.adjoint(B, 2), sym.adjoint(A, 2), 2)
    assert poly_gap(lhs, rhs) < 1e-10


def test_selfadjoint_builder_fixed_point():
    rng = np.random.default_rng(23)
    S = random_selfadjoint_poly(rng, 2.0, 2, 2)
    assert poly_gap(sym.adjoint(S, 2), S) < 1e-12


def test_sub_of_product_matches_composition():
    rng = np.random.default_rng(29)
    for _ in range(3):
        A = random_poly(rng, 2.0, 1, (2, 2))
        B = random_poly(rng, 1.0, 1, (2, 2))
        direct = sym.subprincipal(sym.compose(A, B, 1))
        formula = sym.sub_of_product(A, B)
        assert node_gap(direct, formula) < 1e-10


def test_sub_of_triple_matches_composition():
    rng = np.random.default_rng(31)
    P = random_poly(rng, 1.0, 1, (2, 2))
    Q = random_poly(rng, 1.0, 1, (2, 2))
    R = random_poly(rng, 0.0, 1, (2, 2))
    direct = sym.subprincipal(sym.compose(sym.compose(P, Q, 1), R, 1))
    formula = sym.sub_of_triple(P, Q, R)
    assert node_gap(direct, formula) < 1e-10


def test_subprincipal_of_adjoint_is_dagger():
    rng = np.random.default_rng(37)
    A = random_poly(rng, 1.0, 1, (2, 2))
    lhs = sym.subprincipal(sym.adjoint(A, 1))
    rhs = sym.s_conjT(sym.subprincipal(A))
    assert node_gap(lhs, rhs) < 1e-11


def test_bracket_leibniz():
    """{B, CD} = {B, C} D + {B, C, D} as bidifferential expressions."""
    rng = np.random.default_rng(41)
    B = random_trig_component(rng, 1.0, (2, 2))
    C = random_trig_component(rng, 1.0, (2, 2))
    D = random_trig_component(rng, 0.0, (2, 2))
    lhs = sym.poisson(B, sym.s_matmul(C, D))
    rhs = sym.s_add(sym.s_matmul(sym.poisson(B, C), D),
                    sym.gen_poisson(B, C, D),
                    degree=lhs.degree, shape=lhs.shape)
    assert node_gap(lhs, rhs) < 1e-11


def test_subprincipal_x_independent_collapses():
    """Without x dependence the curvature correction prunes structurally."""
    a0 = sym.trig(2.0, (2, 2), {(0, 0, 1): np.eye(2), (0, 0, -1): np.eye(2)})
    a1 = sym.trig(1.0, (2, 2), {(0, 0, 0): [[0, 1], [1, 0]]})
    A = sym.PolySymbol(2.0, [a0, a1])
    assert sym.subprincipal(A) is a1


def test_depth_budget_enforced():
    def fn(x1, x2, th):
        return ad.pack([[ad.cos(x1 + th)]])

    leaf = sym.closure(0.0, (1, 1), fn, budget=1)
    leaf.dx(0)  # first derivative is fine
    with pytest.raises(sym.DepthBudgetError):
        leaf.dx(0).dx(0)
    A = sym.PolySymbol(0.0, [leaf, sym.zero(-1.0, (1, 1)),
                             sym.zero(-2.0, (1, 1))])
    with pytest.raises(sym.DepthBudgetError):
        sym.compose(A, A, 2)


def test_shape_and_depth_errors():
    rng = np.random.default_rng(43)
    A = random_poly(rng, 1.0, 1, (2, 2))
    B = random_poly(rng, 1.0, 1, (3, 2))
    with pytest.raises(sym.SymbolError):
        sym.compose(A, B, 1)
    with pytest.raises(sym.SymbolError):
        sym.compose(A, A, 5)  # beyond stored depth
    with pytest.raises(sym.SymbolError):
        sym.subprincipal(A.truncated(0))
    with pytest.raises(sym.SymbolError):
        sym.PolySymbol(1.0, [sym.zero(1.0, (2, 2)), sym.zero(1.0, (2, 2))])


def test_residual_inspection_semantics():
    c0 = sym.const(np.eye(2))
    c1 = sym.trig(-1.0, (2, 2), {(1, 0, 0): 1e-3 * np.eye(2),
                                 (-1, 0, 0): 1e-3 * np.eye(2)})
    A = sym.PolySymbol(0.0, [c0, c1, sym.zero(-2.0, (2, 2))])
    assert sym.residual_sup(A, -1) == pytest.approx(1.0)
    assert sym.residual_sup(A, -3) == pytest.approx(1.0)
    assert sym.residual_sup(A, 0) == 0.0
    lead = sym.residual_leading(A, -1)
    assert lead.degree == -1.0 and sym.sup_norm(lead) == pytest.approx(2e-3)
    with pytest.raises(sym.SymbolError):
        sym.residual_leading(A, -5)
    sups = sym.component_sups(A)
    assert [d for d, _ in sups] == [0.0, -1.0, -2.0]
    assert sups[2][1] == 0.0


def test_entry_and_trace():
    rng = np.random.default_rng(47)
    a = random_trig_component(rng, 1.0, (2, 3))
    v = a.values(GRID)
    e = sym.entry(a, 1, 2)
    assert np.max(np.abs(e.values(GRID)[:, 0, 0] - v[:, 1, 2])) < 1e-14
    b = random_trig_component(rng, 1.0, (3, 3))
    tr = sym.s_trace(b)
    assert np.max(np.abs(tr.values(GRID)[:, 0, 0]
                         - np.trace(b.values(GRID), axis1=1, axis2=2))) \
        < 1e-13


def test_stacking_blocks():
    rng = np.random.default_rng(53)
    u = random_trig_component(rng, 0.0, (2, 1))
    w = random_trig_component(rng, 0.0, (2, 1))
    st = sym.s_hstack([u, w])
    vals = st.values(GRID)
    assert vals.shape[1:] == (2, 2)
    assert np.allclose(vals[:, :, :1], u.values(GRID))
    assert np.allclose(vals[:, :, 1:], w.values(GRID))
    d = sym.s_blockdiag([sym.s_trace(sym.s_matmul(sym.s_conjT(u), u)),
                         sym.const([[1.0]])])
    dv = d.values(GRID)
    assert np.allclose(dv[:, 0, 1], 0) and np.allclose(dv[:, 1, 1], 1.0)


def test_homogeneous_extension_scaling():
    """a(x, t xi) = t^rho a(x, xi) for t in {0.5, 2, 7}."""
    rng = np.random.default_rng(67)
    for deg in (2.0, 1.0, 0.0, -1.0):
        a = random_trig_component(rng, deg, (2, 2))
        x1, x2 = rng.uniform(0, 2 * np.pi, (2, 5))
        xi1, xi2 = rng.standard_normal((2, 5))
        base = sym.eval_at(a, x1, x2, xi1, xi2)
        for t in (0.5, 2.0, 7.0):
            scaled = sym.eval_at(a, x1, x2, t * xi1, t * xi2)
            assert np.max(np.abs(scaled - t ** deg * base)) \
                < 1e-11 * max(1.0, 7.0 ** deg)


def test_derivatives_match_finite_differences():
    """x-, theta- and xi-derivatives agree with central differences to
    O(step^2); the only finite differencing in the package lives here."""
    rng = np.random.default_rng(71)
    a = random_trig_component(rng, 1.5, (2, 2), nterms=3)
    pts = sym.Grid(rng.uniform(0, 2 * np.pi, 6), rng.uniform(0, 2 * np.pi, 6),
                   rng.uniform(0, 2 * np.pi, 6))
    h = 1e-5
    for axis, (dx1, dx2) in [(0, (h, 0)), (1, (0, h))]:
        plus = sym.Grid(pts.x1 + dx1, pts.x2 + dx2, pts.theta)
        minus = sym.Grid(pts.x1 - dx1, pts.x2 - dx2, pts.theta)
        fd = (a.values(plus) - a.values(minus)) / (2 * h)
        assert np.max(np.abs(a.dx(axis).values(pts) - fd)) < 1e-8
    plus = sym.Grid(pts.x1, pts.x2, pts.theta + h)
    minus = sym.Grid(pts.x1, pts.x2, pts.theta - h)
    fd = (a.values(plus) - a.values(minus)) / (2 * h)
    assert np.max(np.abs(a.dtheta().values(pts) - fd)) < 1e-8
    # fiber derivative against FD of the homogeneous extension
    xi1 = np.cos(pts.theta) * 1.3
    xi2 = np.sin(pts.theta) * 1.3
    for axis, (e1, e2) in [(0, (h, 0)), (1, (0, h))]:
        fd = (sym.eval_at(a, pts.x1, pts.x2, xi1 + e1, xi2 + e2)
              - sym.eval_at(a, pts.x1, pts.x2, xi1 - e1, xi2 - e2)) / (2 * h)
        got = sym.eval_at(a.dxi(axis), pts.x1, pts.x2, xi1, xi2)
        assert np.max(np.abs(got - fd)) < 1e-8


def test_poly_add_alignment_and_reach():
    rng = np.random.default_rng(73)
    A = random_poly(rng, 2.0, 1, (2, 2))
    B = random_poly(rng, 1.0, 0, (2, 2))
    S = sym.poly_add(A, B)
    assert S.order == 2.0 and S.depth == 1  # both reach degree 1
    assert node_gap(S.comps[0], A.comps[0]) < 1e-14
    want = sym.s_add(A.comps[1], B.comps[0])
    assert node_gap(S.comps[1], want) < 1e-14
    # identity padded to depth keeps the difference deep enough to inspect
    D = sym.poly_sub(sym.identity_poly(2, depth=1).padded(3), A.padded(3))
    assert D.depth == 3
    assert sym.residual_sup(D, -2) > 0.5  # principal of A is O(1) random


def test_torus_periodicity():
    rng = np.random.default_rng(59)
    a = random_trig_component(rng, 1.0, (2, 2))
    shifted = sym.Grid(GRID.x1 + 2 * np.pi, GRID.x2 - 2 * np.pi, GRID.theta)
    assert np.max(np.abs(a.values(GRID) - a.values(shifted))) < 1e-12


def test_dump_component_samples(tmp_path):
    rng = np.random.default_rng(61)
    A = random_poly(rng, 1.0, 1, (2, 2))
    grid = sym.Grid.standard(nx=2, ntheta=4)
    path = tmp_path / "samples.csv"
    sym.dump_component_samples(A, path, grid)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 1 + 2 * len(grid)
    header = lines[0].split(",")
    assert header[:4] == ["x1", "x2", "theta", "degree"]
    first = [float(t) for t in lines[1].split(",")]
    vals = A.comps[0].values(grid)
    assert first[3] == 1.0
    assert abs(first[4] - vals[0, 0, 0].real) < 1e-15
    assert abs(first[5] - vals[0, 0, 0].imag) < 1e-15
