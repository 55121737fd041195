"""Eigenframe construction, validation, and gauge behavior."""
import numpy as np
import pytest

from torusdiag import autodiff as ad
from torusdiag import frames as fr
from torusdiag import symbols as sym
from util import random_real_scalar_node, random_trig_component, \
    synthetic_frame

GRID = sym.default_grid()


def test_numeric_matches_analytic_eigendata():
    rng = np.random.default_rng(101)
    frame, A_prin = synthetic_frame(rng, order=2.0, signature=(2, 0))
    num = fr.decompose_principal(A_prin)
    assert num.mode == "numeric" and num.J == (1, 2) == frame.J
    assert np.max(np.abs(num.eigenvalue_table(GRID)
                         - frame.eigenvalue_table(GRID))) < 1e-10
    for j in frame.J:
        d = np.abs(num.P[j].values(GRID) - frame.P[j].values(GRID))
        assert np.max(d) < 1e-10
    total = sum(num.P[j].values(GRID) for j in num.J)
    assert np.max(np.abs(total - np.eye(2))) < 1e-12
    assert abs(fr.simplicity_margin(num) - fr.simplicity_margin(frame)) \
        < 1e-10


def test_mixed_signature_labels():
    rng = np.random.default_rng(103)
    frame, A_prin = synthetic_frame(rng, order=1.0, signature=(1, 1))
    assert frame.J == (-1, 1)
    num = fr.decompose_principal(A_prin)
    assert num.J == (-1, 1)
    assert num.m_plus == 1 and num.m_minus == 1
    hv = num.eigenvalue_table(GRID)
    assert np.all(hv[:, 0] < 0) and np.all(hv[:, 1] > 0)


def test_supplied_frame_validates():
    rng = np.random.default_rng(107)
    frame, A_prin = synthetic_frame(rng)
    out = fr.decompose_principal(A_prin, frame)
    assert out is frame
    assert fr.simplicity_margin(frame) > 1.0
    assert fr.ellipticity_margin(frame) > 0.5


def test_degenerate_principal_rejected():
    A_prin = sym.const(np.eye(2), degree=2.0)  # |xi|^2 I on the sphere
    with pytest.raises(fr.SimplicityError):
        fr.decompose_principal(A_prin)


def test_non_hermitian_rejected():
    rng = np.random.default_rng(109)
    A_prin = random_trig_component(rng, 2.0, (2, 2))  # no Hermitian pairing
    with pytest.raises(fr.FrameError):
        fr.decompose_principal(A_prin)


def test_sign_change_and_misordering_rejected():
    e1 = sym.const([[1.0], [0.0]])
    e2 = sym.const([[0.0], [1.0]])
    crossing = sym.trig(2.0, (1, 1), {(1, 0, 0): [[0.5]], (-1, 0, 0): [[0.5]]})
    five = sym.const([[5.0]], degree=2.0)
    A1 = sym.s_add(sym.s_smul(crossing, sym.s_matmul(e1, sym.s_conjT(e1))),
                   sym.s_smul(five, sym.s_matmul(e2, sym.s_conjT(e2))),
                   degree=2.0, shape=(2, 2))
    bad = fr.EigenFrame(2.0, {1: crossing, 2: five}, {1: e1, 2: e2})
    with pytest.raises(fr.FrameError, match="sign"):
        fr.decompose_principal(A1, bad)
    # swapped labels: h^(1) > h^(2) everywhere
    three = sym.const([[3.0]], degree=2.0)
    one = sym.const([[1.0]], degree=2.0)
    A2 = sym.s_add(sym.s_smul(three, sym.s_matmul(e1, sym.s_conjT(e1))),
                   sym.s_smul(one, sym.s_matmul(e2, sym.s_conjT(e2))),
                   degree=2.0, shape=(2, 2))
    swapped = fr.EigenFrame(2.0, {1: three, 2: one}, {1: e1, 2: e2})
    with pytest.raises(fr.FrameError, match="increasing"):
        fr.decompose_principal(A2, swapped)


def test_gauge_rotate_preserves_projections():
    rng = np.random.default_rng(113)
    frame, _ = synthetic_frame(rng)
    phi = random_real_scalar_node(rng, 0.0, amp=0.8)
    rot = fr.gauge_rotate(frame, 2, phi)
    assert np.max(np.abs(rot.P[2].values(GRID)
                         - frame.P[2].values(GRID))) < 1e-14
    nrm = sym.s_matmul(sym.s_conjT(rot.v[2]), rot.v[2]).values(GRID)
    assert np.max(np.abs(nrm - 1.0)) < 1e-12
    # zero phase is the identity gauge
    same = fr.gauge_rotate(frame, 1, sym.zero(0.0, (1, 1)))
    assert np.max(np.abs(same.v[1].values(GRID)
                         - frame.v[1].values(GRID))) < 1e-15
    # complex-valued phase is refused
    with pytest.raises(fr.FrameError):
        fr.gauge_rotate(frame, 1, sym.trig(0.0, (1, 1), {(1, 0, 0): [[1.0]]}))


def test_continuity_probe_catches_branch_cut():
    def v1_fn(x1, x2, th):
        return ad.pack([[ad.cos(th / 2)], [ad.sin(th / 2)]])

    def v2_fn(x1, x2, th):
        return ad.pack([[-ad.sin(th / 2)], [ad.cos(th / 2)]])

    v1 = sym.closure(0.0, (2, 1), v1_fn, x_dep=(False, False))
    v2 = sym.closure(0.0, (2, 1), v2_fn, x_dep=(False, False))
    h1 = sym.const([[1.0]], degree=2.0)
    h2 = sym.const([[3.0]], degree=2.0)
    frame = fr.EigenFrame(2.0, {1: h1, 2: h2}, {1: v1, 2: v2})
    with pytest.raises(fr.FrameError, match="discontinuous"):
        fr.check_frame_continuity(frame)
    # the smooth synthetic frames pass the same probe
    rng = np.random.default_rng(127)
    good, _ = synthetic_frame(rng)
    assert fr.check_frame_continuity(good) < 0.25


def test_numeric_frame_is_quantization_only():
    rng = np.random.default_rng(131)
    _, A_prin = synthetic_frame(rng)
    num = fr.decompose_principal(A_prin)
    with pytest.raises(sym.DepthBudgetError):
        num.v[1].dx(0)
    col = sym.PolySymbol(0.0, [num.v[1], sym.zero(-1.0, (2, 1))])
    with pytest.raises(sym.DepthBudgetError):
        sym.compose(sym.PolySymbol(2.0, [A_prin, sym.zero(1.0, (2, 2))]),
                    col, 1)
