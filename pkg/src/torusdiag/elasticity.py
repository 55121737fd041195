"""Linear elasticity on the flat two-torus in a rotating orthonormal frame.

The Lamé operator acting on vector half-densities has the exact
(constant-coefficient) matrix symbol

    sigma_L(xi) = mu |xi|^2 I + (lambda + mu) xi xi^T,

plus a curvature term that vanishes identically on the flat torus.  Passing
to an orthonormal framing e = R(phi(x)), with R the clockwise rotation
[[cos, sin], [-sin, cos]], conjugates the operator by the multiplication
operator R(phi); the result is computed here as an exact symbol-level
composition R * sigma_L * R^{-1}, which terminates at degree 0.

The framing carries Weitzenboeck torsion.  With Upsilon^a_{bc} =
e_j^a d e^j_c / dx^b, T = antisymmetrization in (b, c), and rho = 1 the
flat half-density weight, the torsion covector is t_a = T_a^{12}; for
e = R(phi) this reduces to t = d phi.  The conjugated operator's
subprincipal symbol is

    i (lambda + 3 mu) t^a xi_a  eps,        eps = [[0, 1], [-1, 0]],

and its principal eigendata are h = mu r^2, (lambda + 2 mu) r^2 with
orthonormal eigenvectors eps p and p, where p = (cos(theta - phi),
sin(theta - phi)) is the fiber direction measured in the rotated frame.
Strong convexity (mu > 0, lambda + mu > 0) keeps the two bands simple,
with margin (lambda + mu) r^2.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import symbols as sym
from . import frames
from . import projections
from . import diagonalizer as dg

__all__ = ["ElasticityError", "Framing", "ElasticitySetup",
           "torsion_covector", "build_lame_symbol", "lame_frame",
           "epsilon_matrix", "subprincipal_formula_node",
           "verify_subprincipal_cancellation", "random_f_choices",
           "lame_flat_setup", "lame_rotated_setup"]

EPS = np.array([[0.0, 1.0], [-1.0, 0.0]])


class ElasticityError(sym.SymbolError):
    pass


def _cos_series_fn(terms):
    """Dual-capable x -> sum of amp*cos(k1 x1 + k2 x2 + phase)."""
    def fn(x1, x2):
        total = 0.0
        for k1, k2, amp, phase in terms:
            total = total + amp * ad.cos(k1 * x1 + k2 * x2 + phase)
        return total
    return fn


class Framing:
    """Orthonormal frame field e = R(angle(x)) on the torus."""

    def __init__(self, matrix, angle_fn=None, name="custom", grid=None):
        self.matrix = matrix
        self.angle_fn = angle_fn
        self.name = name
        grid = grid or sym.default_grid()
        vals = matrix.values(grid)
        gram = vals @ np.conj(np.swapaxes(vals, -1, -2))
        if np.max(np.abs(gram - np.eye(2))) > 1e-12:
            raise ElasticityError("framing is not orthonormal pointwise")

    @property
    def is_constant(self):
        return not any(self.matrix.x_dep)

    @classmethod
    def identity(cls):
        return cls(sym.const(np.eye(2), 0.0), angle_fn=None, name="identity")

    @classmethod
    def rotated(cls, terms=None, name="rotated"):
        """Rotating framing; ``terms`` is a list of (k1, k2, amp, phase)
        cosine-wave contributions to the angle, default cos x1."""
        if terms is None:
            terms = [(1, 0, 1.0, 0.0)]
        terms = [(int(k1), int(k2), float(a), float(p))
                 for k1, k2, a, p in terms]
        fn = _cos_series_fn(terms)
        x_dep = (any(t[0] for t in terms), any(t[1] for t in terms))

        def mat(x1, x2, th):
            f = fn(x1, x2)
            return ad.pack([[ad.cos(f), ad.sin(f)],
                            [-ad.sin(f), ad.cos(f)]])

        node = sym.closure(0.0, (2, 2), mat, x_dep=x_dep, th_dep=False)
        out = cls(node, angle_fn=fn, name=name)
        out.angle_terms = terms
        return out

    @classmethod
    def constant_rotation(cls, angle):
        a = float(angle)
        m = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
        return cls(sym.const(m, 0.0), angle_fn=None, name="constant")


def torsion_covector(framing: Framing):
    """Torsion covector (t_1, t_2) of the framing connection,
    t_a = Upsilon^a_{12} - Upsilon^a_{21} with Upsilon = e^T de (flat
    metric, rho = 1)."""
    E = framing.matrix
    if framing.is_constant:
        z = sym.zero(0.0, (1, 1))
        return (z, z)
    Et = sym.s_conjT(E)
    U = [sym.s_matmul(Et, E.dx(b)) for b in (0, 1)]
    t = []
    for d in (0, 1):
        t.append(sym.s_add(sym.entry(U[0], d, 1),
                           sym.s_scale(-1.0, sym.entry(U[1], d, 0)),
                           degree=0.0, shape=(1, 1)))
    return tuple(t)


class ElasticitySetup:
    """Lamé parameters plus framing; checks strong convexity."""

    def __init__(self, lame_lambda=1.0, lame_mu=1.0, framing=None):
        self.lame_lambda = float(lame_lambda)
        self.lame_mu = float(lame_mu)
        if not (self.lame_mu > 0 and self.lame_lambda + self.lame_mu > 0):
            raise ElasticityError(
                "strong convexity needs mu > 0 and lambda + mu > 0")
        self.framing = framing if framing is not None else Framing.identity()
        self.metric = np.eye(2)  # flat torus throughout
        self.rho = 1.0           # uniform half-density weight
        self.torsion = torsion_covector(self.framing)

    @property
    def simplicity_margin(self):
        """Gap between the two principal bands at |xi| = 1."""
        return self.lame_lambda + self.lame_mu


def _flat_sigma(setup):
    mu, lam = setup.lame_mu, setup.lame_lambda
    diag = (mu + 0.5 * (lam + mu)) * np.eye(2)
    c2 = (lam + mu) * np.array([[0.25, -0.25j], [-0.25j, -0.25]])
    return sym.trig(2.0, (2, 2), {(0, 0, 0): diag, (0, 0, 2): c2,
                                  (0, 0, -2): c2.conj()})


def build_lame_symbol(setup: ElasticitySetup, depth: int = 3,
                      compact: bool = True) -> sym.PolySymbol:
    """Exact symbol of the framed Lamé operator, stored to ``depth``.

    The conjugation by the multiplication operator R(phi) terminates after
    two fiber derivatives of the quadratic flat symbol, so components
    below degree 0 vanish identically (the stored tail evaluates to zero
    at machine precision)."""
    if depth < 1:
        raise ElasticityError("need depth >= 1 to see the subprincipal")
    sigma = _flat_sigma(setup)
    # curvature contribution to the Lamé operator: proportional to the
    # Ricci tensor, identically zero on the flat torus
    ricci = sym.zero(0.0, (2, 2))
    comps = [sigma, sym.zero(1.0, (2, 2)), ricci]
    comps += [sym.zero(2.0 - k, (2, 2)) for k in range(3, depth + 1)]
    L = sym.PolySymbol(2.0, comps[:depth + 1])
    if setup.framing.is_constant and setup.framing.name == "identity":
        return L
    R = sym.PolySymbol(0.0, [setup.framing.matrix] + [
        sym.zero(-float(k), (2, 2)) for k in range(1, depth + 1)])
    Rinv = sym.PolySymbol(0.0, [sym.s_conjT(setup.framing.matrix)] + [
        sym.zero(-float(k), (2, 2)) for k in range(1, depth + 1)])
    out = sym.compose(R, sym.compose(L, Rinv, depth), depth)
    if compact:
        out = sym.PolySymbol(2.0, [sym.compactify(c) for c in out.comps])
    return out


def subprincipal_formula_node(setup: ElasticitySetup):
    """The closed-form subprincipal i (lambda+3mu) t^a xi_a eps."""
    coef = setup.lame_lambda + 3.0 * setup.lame_mu
    t1, t2 = setup.torsion
    xi1 = sym.trig(1.0, (1, 1), {(0, 0, 1): np.array([[0.5]]),
                                 (0, 0, -1): np.array([[0.5]])})
    xi2 = sym.trig(1.0, (1, 1), {(0, 0, 1): np.array([[-0.5j]]),
                                 (0, 0, -1): np.array([[0.5j]])})
    txi = sym.s_add(sym.s_smul(t1, xi1), sym.s_smul(t2, xi2),
                    degree=1.0, shape=(1, 1))
    return sym.s_smul(sym.s_scale(1j * coef, txi), sym.const(EPS, 0.0))


def epsilon_matrix():
    return sym.const(EPS, 0.0)


def lame_frame(setup: ElasticitySetup) -> frames.EigenFrame:
    """Analytic eigendata of the framed principal symbol: bands mu r^2 and
    (lambda + 2 mu) r^2 with eigenvectors eps p and p."""
    mu, lam = setup.lame_mu, setup.lame_lambda
    h1 = sym.trig(2.0, (1, 1), {(0, 0, 0): np.array([[mu]])})
    h2 = sym.trig(2.0, (1, 1), {(0, 0, 0): np.array([[lam + 2.0 * mu]])})
    fn = setup.framing.angle_fn
    if setup.framing.is_constant and fn is None:
        if setup.framing.name == "constant":
            m = setup.framing.matrix.values(sym.default_grid())
            a = float(np.arctan2(m[..., 0, 1].ravel()[0].real,
                                 m[..., 0, 0].ravel()[0].real))
            fn = lambda x1, x2: a + 0.0 * x1  # noqa: E731
        else:
            fn = lambda x1, x2: 0.0 * x1  # noqa: E731
        x_dep = (False, False)
    else:
        x_dep = setup.framing.matrix.x_dep

    def p_fn(x1, x2, th):
        w = th - fn(x1, x2)
        return ad.pack([[ad.cos(w)], [ad.sin(w)]])

    def ep_fn(x1, x2, th):
        w = th - fn(x1, x2)
        return ad.pack([[ad.sin(w)], [-ad.cos(w)]])

    v2 = sym.closure(0.0, (2, 1), p_fn, x_dep=x_dep, th_dep=True)
    v1 = sym.closure(0.0, (2, 1), ep_fn, x_dep=x_dep, th_dep=True)
    return frames.EigenFrame(2.0, {1: h1, 2: h2}, {1: v1, 2: v2})


def random_f_choices(rng, K, count=3, amp=0.5):
    """Seeded trig-polynomial free-function draws, one dict per choice."""
    out = []
    for _ in range(count):
        choice = {}
        for j in (1, 2):
            fs = []
            for k in range(1, K + 1):
                c = rng.normal(scale=amp)
                k1, k2, n = rng.integers(-1, 2, size=3)
                coeffs = {(int(k1), int(k2), int(n)): np.array([[0.5 * c]])}
                key = (-int(k1), -int(k2), -int(n))
                coeffs[key] = coeffs.get(key, 0) + np.array([[0.5 * c]])
                fs.append(sym.trig(-float(k), (1, 1), coeffs))
            choice[j] = fs
        out.append(choice)
    return out


def verify_subprincipal_cancellation(setup: ElasticitySetup, K=2,
                                     f_choices=None, grid=None):
    """Check that every diagonal entry a_j of the conjugated operator has
    vanishing subprincipal symbol, for f = 0 and each supplied free-function
    choice, together with the cancellation's ingredients: (P_j)_sub = 0 and
    {P^(j), v^(j)} = 0."""
    grid = grid or sym.default_grid()
    A = build_lame_symbol(setup, depth=K)
    frame = lame_frame(setup)
    basis = projections.build_projections(A, frame, K, grid=grid)
    report = {}
    report["proj_sub"] = max(
        sym.sup_norm(sym.subprincipal(basis[j]), grid) for j in (1, 2))
    pois = {j: sym.poisson(frame.P[j], frame.v[j]) for j in (1, 2)}
    report["poisson_P1_v1"] = sym.sup_norm(pois[1], grid)
    report["poisson_P2_v2"] = sym.sup_norm(pois[2], grid)
    # the two brackets are linked through eps as well as each being zero
    link = sym.s_add(pois[1],
                     sym.s_scale(-1.0, sym.s_matmul(sym.const(EPS, 0.0),
                                                    pois[2])),
                     degree=-1.0, shape=(2, 1))
    report["poisson_link"] = sym.sup_norm(link, grid)
    report["trace_identity"] = projections.trace_identity_check(
        basis, grid=grid)

    runs = [None] + list(f_choices or [])
    per_run = []
    ledger_max = 0.0
    for choice in runs:
        cols = [dg.build_column(A, basis[j], frame, j, K,
                                free_functions=(choice or {}).get(j),
                                grid=grid)
                for j in (1, 2)]
        diag = dg.assemble(cols, A, basis, grid=grid)
        ledger_max = max(ledger_max, diag.ledger_max)
        per_run.append(max(
            sym.sup_norm(sym.subprincipal(diag.a[j]), grid) for j in (1, 2)))
    report["aj_sub_per_choice"] = per_run
    report["max_aj_sub"] = max(per_run)
    report["ledger_max"] = ledger_max
    report["max"] = max(report["proj_sub"], report["poisson_P1_v1"],
                        report["poisson_P2_v2"], report["poisson_link"],
                        report["trace_identity"], report["max_aj_sub"])
    return report


def lame_flat_setup(lame_lambda=1.0, lame_mu=1.0):
    return ElasticitySetup(lame_lambda, lame_mu, Framing.identity())


def lame_rotated_setup(lame_lambda=1.0, lame_mu=1.0, terms=None):
    return ElasticitySetup(lame_lambda, lame_mu, Framing.rotated(terms))
