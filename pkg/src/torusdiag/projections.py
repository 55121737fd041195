"""Order-by-order construction of the pseudodifferential projection basis.

Given a self-adjoint elliptic operator A (as a PolySymbol) whose principal
symbol has the simple-eigenvalue frame {h^(j), v^(j)}, this module builds
operators P_j of order 0 and depth K with

    (P_j)_prin = P^(j),   P_j = P_j*,   P_j P_l = delta_jl P_j,
    sum_j P_j = Id,       [A, P_j] = 0,

all modulo components of degree below -K.  The construction resolves the
conditions order by order: writing P_j = P^(j) + p_1 + ... + p_K, the
correction p_k is expanded in the frame dyads v_a [v_b]^*.  Its
off-diagonal part is forced by the commutation condition (division by the
eigenvalue gap h^(a) - h^(b), legal by simplicity); its diagonal part by
idempotency.  Self-adjointness and the partition of unity are *verified*
afterwards, never imposed — together with the uniqueness of such bases
modulo smoothing, agreement of the residuals is the honest check that the
scheme and the theory coincide.
"""
from __future__ import annotations

import numpy as np

from . import symbols as sym
from .frames import EigenFrame

__all__ = ["ProjectionError", "ProjectionBasis", "build_projections",
           "verify_basis", "trace_identity_check", "sign_definiteness_probe"]


class ProjectionError(sym.SymbolError):
    """Inadmissible inputs or ill-conditioned solve in the basis build."""


class ProjectionBasis:
    """The m projection symbols plus their construction context."""

    def __init__(self, basis, A, frame, depth, log):
        self.basis = dict(basis)
        self.A = A
        self.frame = frame
        self.depth = depth
        self.log = log  # per-order solvability diagnostics

    @property
    def J(self):
        return self.frame.J

    def __getitem__(self, j):
        return self.basis[j]

    def verify(self, grid=None):
        return verify_basis(self, grid)


def _commutator_component(A, P, k):
    return sym.poly_sub(sym.compose(A, P, k), sym.compose(P, A, k)).comps[k]


def _frame_scalar(vecs, a, node, b):
    """[v^(a)]^* node v^(b) as a 1x1 symbol."""
    return sym.s_matmul(sym.s_matmul(sym.s_conjT(vecs[a]), node), vecs[b])


def build_projections(A: sym.PolySymbol, frame: EigenFrame, K: int, *,
                      grid=None, selfadj_tol=1e-8, gap_floor=1e-8,
                      pair_order="asc", compact=True) -> ProjectionBasis:
    """Build the projection basis to depth K.

    ``pair_order`` only permutes the internal dyad summation ("asc" or
    "desc"); by uniqueness the result may differ only at roundoff, which
    the tests pin down.  With ``compact`` each correction component is
    re-expressed as a trig polynomial, which keeps the derivative trees
    of later orders (and downstream compositions) shallow.
    """
    if not frame.is_analytic:
        raise ProjectionError(
            "projection construction needs an analytic frame")
    if A.depth < K:
        raise sym.SymbolError("operator depth is below the requested K")
    grid = grid or sym.default_grid()
    m = frame.m
    if A.shape != (m, m):
        raise ProjectionError("operator and frame dimensions differ")
    sa = sym.residual_sup(sym.poly_sub(A, sym.adjoint(A, K)), A.order - K - 1,
                          grid)
    if sa > selfadj_tol:
        raise ProjectionError(
            f"operator is not self-adjoint at symbol level (defect {sa:.2e})")

    # frame data in coefficient form where possible: downstream products
    # then stay in coefficient space instead of growing value trees
    vecs = {a: sym.compactify(v) if compact else v
            for a, v in frame.v.items()}

    # gap reciprocals, shared across orders
    hv = frame.eigenvalue_table(grid)
    inv_gap = {}
    for a in frame.J:
        for b in frame.J:
            if a == b:
                continue
            ha, hb = frame.h[a], frame.h[b]
            gap = sym.s_add(ha, sym.s_scale(-1.0, hb))
            worst = np.min(np.abs(hv[:, frame.J.index(a)]
                                  - hv[:, frame.J.index(b)]))
            if worst < gap_floor:
                raise ProjectionError(
                    f"eigenvalue gap ({a},{b}) as small as {worst:.2e}; "
                    "off-diagonal solve would be ill-conditioned")
            recip = sym.s_inv(gap)
            inv_gap[(a, b)] = sym.compactify(recip) if compact else recip

    pairs = [(a, b) for a in frame.J for b in frame.J]
    if pair_order == "desc":
        pairs = pairs[::-1]
    elif pair_order != "asc":
        raise ProjectionError(f"unknown pair_order {pair_order!r}")

    comps = {j: [sym.s_matmul(vecs[j], sym.s_conjT(vecs[j]))
                 if compact else frame.P[j]] for j in frame.J}
    log = []
    for k in range(1, K + 1):
        entry = {"order": k}
        partial = {j: sym.PolySymbol(
            0.0, comps[j] + [sym.zero(-k, (m, m))]) for j in frame.J}
        for j in frame.J:
            E = sym.compose(partial[j], partial[j], k).comps[k]
            D = _commutator_component(A, partial[j], k)
            # solvability: the commutator must have no frame-diagonal part
            solv = max(sym.sup_norm(_frame_scalar(vecs, a, D, a), grid)
                       for a in frame.J)
            entry[f"commutator_diag_{j}"] = solv
            terms = []
            for a, b in pairs:
                dyad = sym.s_matmul(vecs[a], sym.s_conjT(vecs[b]))
                if a == b:
                    coef = _frame_scalar(vecs, a, E, a)
                    if a == j:
                        coef = sym.s_scale(-1.0, coef)
                else:
                    coef = sym.s_scale(
                        -1.0, sym.s_smul(inv_gap[(a, b)],
                                         _frame_scalar(vecs, a, D, b)))
                terms.append(sym.s_smul(coef, dyad))
            p_k = sym.s_add(*terms, degree=-float(k), shape=(m, m))
            comps[j].append(sym.compactify(p_k) if compact else p_k)
        log.append(entry)

    basis = {j: sym.PolySymbol(0.0, comps[j]) for j in frame.J}
    return ProjectionBasis(basis, A, frame, K, log)


def verify_basis(basis: ProjectionBasis, grid=None):
    """Residual sup-norms of the five defining conditions, each tested on
    every stored component (the first unchecked order is -K-1)."""
    grid = grid or sym.default_grid()
    A, frame, K = basis.A, basis.frame, basis.depth
    m = frame.m
    below = -K - 1
    out = {"first_unchecked_order": below}
    prin = out["principal"] = max(
        sym.sup_norm(sym.s_add(
            basis[j].comps[0], sym.s_scale(-1.0, frame.P[j]),
            degree=0.0, shape=(m, m)), grid) for j in frame.J)
    out["self_adjoint"] = max(
        sym.residual_sup(sym.poly_sub(basis[j], sym.adjoint(basis[j], K)),
                         below, grid) for j in frame.J)
    idem = 0.0
    orth = 0.0
    for j in frame.J:
        for l in frame.J:
            prod = sym.compose(basis[j], basis[l], K)
            if j == l:
                idem = max(idem, sym.residual_sup(
                    sym.poly_sub(prod, basis[j]), below, grid))
            else:
                orth = max(orth, sym.residual_sup(prod, below, grid))
    out["idempotent"] = idem
    out["orthogonal"] = orth
    total = basis[frame.J[0]]
    for j in frame.J[1:]:
        total = sym.poly_add(total, basis[j])
    out["partition_of_unity"] = sym.residual_sup(
        sym.poly_sub(total, sym.identity_poly(m, K)), below, grid)
    out["commutation"] = max(
        sym.residual_sup(sym.poly_sub(sym.compose(A, basis[j], K),
                                      sym.compose(basis[j], A, K)),
                         A.order + below, grid) for j in frame.J)
    out["max"] = max(v for k, v in out.items()
                     if k != "first_unchecked_order")
    assert prin == 0.0  # same node by construction
    return out


def trace_identity_check(basis: ProjectionBasis, frame: EigenFrame = None,
                         grid=None) -> float:
    """Grid sup of |{[v^(j)]^*, v^(j)} - i tr((P_j)_sub)| over labels.

    Both sides are degree -1 scalars; their equality ties the frame's
    gauge geometry to the basis subprincipal and is a sharp cross-check of
    the bracket and subprincipal conventions.
    """
    frame = frame or basis.frame
    grid = grid or sym.default_grid()
    worst = 0.0
    for j in frame.J:
        lhs = sym.poisson(sym.s_conjT(frame.v[j]), frame.v[j])
        rhs = sym.s_scale(1j, sym.s_trace(sym.subprincipal(basis[j])))
        worst = max(worst, sym.sup_norm(
            sym.s_add(lhs, sym.s_scale(-1.0, rhs), degree=-1.0,
                      shape=(1, 1)), grid))
    return worst


def sign_definiteness_probe(A: sym.PolySymbol, basis: ProjectionBasis, j,
                            quantizer, *, nvec=64, seed=0) -> float:
    """Minimum of sign(j) * Rayleigh quotients of Op(P_j^* A P_j).

    ``quantizer`` maps a PolySymbol to a dense Hermitian matrix.  The
    theory promises sign-semidefiniteness modulo smoothing, so the minimum
    should approach >= 0 as the quantization cutoff grows; the caller
    compares magnitudes across cutoffs.
    """
    K = basis.depth
    C = sym.compose(sym.compose(sym.adjoint(basis[j], K), A, K),
                    basis[j], K)
    M = quantizer(C)
    rng = np.random.default_rng(seed)
    dim = M.shape[0]
    worst = np.inf
    for _ in range(nvec):
        u = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        q = float(np.real(np.vdot(u, M @ u)) / np.real(np.vdot(u, u)))
        worst = min(worst, np.sign(j) * q)
    return worst
