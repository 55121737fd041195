"""Shared builders for randomized symbol tests."""
import numpy as np

from torusdiag import autodiff as ad
from torusdiag import symbols as sym
from torusdiag.frames import EigenFrame


def random_trig_component(rng, degree, shape, kmax=2, nmax=2, nterms=4,
                          scale=1.0, hermitian=False):
    """Sparse random trig-polynomial component.

    With ``hermitian=True`` the sphere data is Hermitian-matrix valued at
    every point (coefficients paired as C_{-key} = C_key^dagger).
    """
    coeffs = {}
    for _ in range(nterms):
        key = (int(rng.integers(-kmax, kmax + 1)),
               int(rng.integers(-kmax, kmax + 1)),
               int(rng.integers(-nmax, nmax + 1)))
        mat = scale * (rng.standard_normal(shape)
                       + 1j * rng.standard_normal(shape))
        if hermitian:
            mkey = tuple(-k for k in key)
            coeffs[key] = coeffs.get(key, 0) + 0.5 * mat
            coeffs[mkey] = coeffs.get(mkey, 0) + 0.5 * mat.conj().T
        else:
            coeffs[key] = coeffs.get(key, 0) + mat
    return sym.trig(degree, shape, coeffs)


def random_poly(rng, order, depth, shape, **kw):
    comps = [random_trig_component(rng, order - k, shape, **kw)
             for k in range(depth + 1)]
    return sym.PolySymbol(order, comps)


def random_selfadjoint_poly(rng, order, depth, m, **kw):
    """Self-adjoint through the stored depth: (X + X*)/2."""
    X = random_poly(rng, order, depth, (m, m), **kw)
    return sym.poly_scale(0.5, sym.poly_add(X, sym.adjoint(X, depth)))


def random_cos_series(rng, nterms=2, amp=0.4, kmax=1, nmax=1):
    """Random real trig series as a dual-capable closure of (x1, x2, th)."""
    params = [(float(rng.uniform(-amp, amp)),
               int(rng.integers(-kmax, kmax + 1)),
               int(rng.integers(-kmax, kmax + 1)),
               int(rng.integers(-nmax, nmax + 1)),
               float(rng.uniform(0, 2 * np.pi)))
              for _ in range(nterms)]

    def fn(x1, x2, th):
        tot = 0.0
        for a, k1, k2, n, ph in params:
            tot = tot + a * ad.cos(k1 * x1 + k2 * x2 + n * th + ph)
        return tot

    return fn


def random_real_scalar_node(rng, degree, base=0.0, amp=0.3, kmax=1, nmax=1,
                            nterms=3):
    """Real-valued random trig scalar as a 1x1 component node."""
    coeffs = {(0, 0, 0): np.array([[complex(base)]])}
    for _ in range(nterms):
        key = (int(rng.integers(-kmax, kmax + 1)),
               int(rng.integers(-kmax, kmax + 1)),
               int(rng.integers(-nmax, nmax + 1)))
        c = amp * (rng.uniform(-1, 1) + 1j * rng.uniform(-1, 1))
        mkey = tuple(-k for k in key)
        coeffs[key] = coeffs.get(key, 0) + 0.5 * np.array([[c]])
        coeffs[mkey] = coeffs.get(mkey, 0) + 0.5 * np.array([[c]]).conj()
    return sym.trig(degree, (1, 1), coeffs)


def synthetic_frame(rng, order=2.0, signature=(2, 0), amp=0.15, kmax=1):
    """Random smooth orthonormal 2-frame with gapped eigenvalue fields.

    Returns ``(frame, A_prin)`` where A_prin = sum_j h_j P_j.  Signature
    (2, 0) gives labels (1, 2); (1, 1) gives labels (-1, 1).  With
    ``kmax=0`` everything is x-independent (and declared so, which lets
    structural pruning kick in downstream).
    """
    m_plus, m_minus = signature
    assert m_plus + m_minus == 2
    g = random_cos_series(rng, kmax=kmax)
    q = random_cos_series(rng, kmax=kmax)

    def v_lo_fn(x1, x2, th):
        gg, qq = g(x1, x2, th), q(x1, x2, th)
        return ad.pack([[ad.cos(gg)],
                        [ad.sin(gg) * ad.exp(1j * qq)]])

    def v_hi_fn(x1, x2, th):
        gg, qq = g(x1, x2, th), q(x1, x2, th)
        return ad.pack([[-ad.sin(gg) * ad.exp(-1j * qq)],
                        [ad.cos(gg)]])

    dep = (kmax > 0, kmax > 0)
    v_lo = sym.closure(0.0, (2, 1), v_lo_fn, x_dep=dep)
    v_hi = sym.closure(0.0, (2, 1), v_hi_fn, x_dep=dep)
    if m_minus == 0:
        lab_lo, lab_hi = 1, 2
        base_lo, base_hi = 1.2, 3.0
    else:
        lab_lo, lab_hi = -1, 1
        base_lo, base_hi = -2.0, 1.5
    h_lo = random_real_scalar_node(rng, order, base=base_lo, amp=amp,
                                   kmax=kmax)
    h_hi = random_real_scalar_node(rng, order, base=base_hi, amp=amp,
                                   kmax=kmax)
    frame = EigenFrame(order, {lab_lo: h_lo, lab_hi: h_hi},
                       {lab_lo: v_lo, lab_hi: v_hi})
    A_prin = sym.s_add(sym.s_smul(h_lo, frame.P[lab_lo]),
                       sym.s_smul(h_hi, frame.P[lab_hi]),
                       degree=order, shape=(2, 2))
    return frame, A_prin


def random_operator_on_frame(rng, frame, A_prin, K, pert=0.3, kmax=1):
    """Self-adjoint operator with the given (Hermitian-valued) principal
    and random lower-order components, stored to depth K.  Symmetrizing
    the whole expansion matters: an x-dependent principal alone is not
    operator-self-adjoint, its adjoint grows derivative tails."""
    m = frame.m
    order = frame.order
    if K == 0:
        return sym.PolySymbol(order, [A_prin])
    lower = [random_trig_component(rng, order - k, (m, m), scale=pert,
                                   kmax=kmax)
             for k in range(1, K + 1)]
    Y = sym.PolySymbol(order, [A_prin] + lower)
    return sym.poly_scale(0.5, sym.poly_add(Y, sym.adjoint(Y, K)))


def node_gap(a, b, grid=None):
    """Max pointwise entry difference of two components."""
    grid = grid or sym.default_grid()
    return float(np.max(np.abs(a.values(grid) - b.values(grid))))


def poly_gap(A, B, grid=None):
    """Max component-wise sup difference of two expansions."""
    D = sym.poly_sub(A, B)
    return max(s for _, s in sym.component_sups(D, grid))
