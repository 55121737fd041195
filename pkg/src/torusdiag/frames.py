"""Eigenvalue/eigenvector frames of an elliptic Hermitian principal symbol.

A frame collects, for each admissible label j in
J = [-m_minus, ..., -1, 1, ..., m_plus], a smooth simple eigenvalue field
h^(j) (scalar symbol of the operator's order, positive iff j > 0), a unit
eigenvector field v^(j) (m x 1, degree 0), and the rank-one eigenprojection
P^(j) = v^(j) [v^(j)]^*.  Labels are ordered so that h^(j) is increasing in
j at every point of the cosphere bundle.

Two modes exist.  ANALYTIC frames carry closed-form eigendata with full
derivative access and feed the symbol-level algebra; NUMERIC frames come
from a pointwise dense eigensolver with deterministic phase fixing and are
admitted only on the quantization side (their leaves carry derivative
budget zero, so any attempt to run symbolic calculus through them fails
fast).
"""
from __future__ import annotations

import weakref

import numpy as np

from . import symbols as sym

__all__ = ["FrameError", "SimplicityError", "EigenFrame",
           "decompose_principal", "gauge_rotate", "simplicity_margin",
           "ellipticity_margin", "check_frame_continuity"]


class FrameError(sym.SymbolError):
    """Inadmissible eigenframe (non-Hermitian input, sign change, gauge
    misuse, detected discontinuity)."""


class SimplicityError(FrameError):
    """Eigenvalue gap below tolerance somewhere on the cosphere grid."""


def _labels(m_plus, m_minus):
    return tuple(range(-m_minus, 0)) + tuple(range(1, m_plus + 1))


class EigenFrame:
    """Container for one principal symbol's spectral decomposition."""

    def __init__(self, order, h, v, mode="analytic"):
        if set(h) != set(v) or not h:
            raise FrameError("eigenvalue and eigenvector labels differ")
        if 0 in h:
            raise FrameError("label 0 is not admissible")
        self.order = float(order)
        self.mode = mode
        self.J = tuple(sorted(h))
        self.m_plus = sum(1 for j in self.J if j > 0)
        self.m_minus = sum(1 for j in self.J if j < 0)
        if self.J != _labels(self.m_plus, self.m_minus):
            raise FrameError(f"labels {self.J} are not contiguous")
        self.m = v[self.J[0]].rows
        self.h = dict(h)
        self.v = dict(v)
        for j in self.J:
            if self.h[j].shape != (1, 1):
                raise FrameError("eigenvalue fields must be 1x1")
            if abs(self.h[j].degree - self.order) > 1e-9:
                raise FrameError("eigenvalue degree must equal the order")
            if self.v[j].shape != (self.m, 1):
                raise FrameError("eigenvector fields must be m x 1")
            if abs(self.v[j].degree) > 1e-9:
                raise FrameError("eigenvector fields must have degree 0")
        if len(self.J) != self.m:
            raise FrameError("need exactly m simple eigenvalue fields")
        self.P = {j: sym.s_matmul(self.v[j], sym.s_conjT(self.v[j]))
                  for j in self.J}

    @property
    def is_analytic(self):
        return self.mode == "analytic"

    def eigenvalue_table(self, grid=None):
        """Real eigenvalue samples as an array of shape (npoints, m),
        columns ordered by label."""
        grid = grid or sym.default_grid()
        cols = [self.h[j].values(grid)[:, 0, 0].real for j in self.J]
        return np.stack(cols, axis=1)

    def __repr__(self):  # pragma: no cover
        return (f"EigenFrame(m={self.m}, m_plus={self.m_plus}, "
                f"m_minus={self.m_minus}, mode={self.mode!r})")


# ---------------------------------------------------------------------------
# numeric mode: pointwise eigensolve with deterministic phase fixing


class _EighField:
    """Shared batched eigendecomposition of a principal symbol's values."""

    def __init__(self, prin):
        self.prin = prin
        self._cache = weakref.WeakKeyDictionary()

    def get(self, grid):
        hit = self._cache.get(grid)
        if hit is None:
            a = self.prin.values(grid)
            w, vv = np.linalg.eigh(0.5 * (a + np.conjugate(a).swapaxes(-1, -2)))
            # fix each column's phase: largest-modulus entry (first on ties)
            # becomes real positive
            idx = np.argmax(np.abs(vv), axis=1)
            lead = np.take_along_axis(vv, idx[:, None, :], axis=1)[:, 0, :]
            phase = lead / np.abs(lead)
            vv = vv / phase[:, None, :]
            hit = (w, vv)
            self._cache[grid] = hit
        return hit


class _NumericEigenvalue(sym.HomogeneousSymbol):
    def __init__(self, field, idx, degree):
        super().__init__(degree, (1, 1))
        self.field = field
        self.idx = idx
        self.x_dep = field.prin.x_dep
        self.th_dep = field.prin.th_dep

    @property
    def budget(self):
        return 0

    def _compute(self, grid):
        w, _ = self.field.get(grid)
        return w[:, self.idx].astype(complex)[:, None, None]


class _NumericEigenvector(sym.HomogeneousSymbol):
    def __init__(self, field, idx, m):
        super().__init__(0.0, (m, 1))
        self.field = field
        self.idx = idx
        self.x_dep = field.prin.x_dep
        self.th_dep = field.prin.th_dep

    @property
    def budget(self):
        return 0

    def _compute(self, grid):
        _, vv = self.field.get(grid)
        return vv[:, :, self.idx][:, :, None]


# ---------------------------------------------------------------------------
# construction and validation


def decompose_principal(A_prin, supplied_frame=None, *, gap_tol=1e-6,
                        grid=None, herm_tol=1e-10, recon_tol=1e-10,
                        continuity=True):
    """Build or validate the spectral frame of a principal symbol.

    With ``supplied_frame`` (an :class:`EigenFrame` with closed-form
    eigendata) the frame is validated against ``A_prin`` — orthonormality,
    reconstruction, label ordering, sign pattern, simplicity, and grid
    continuity — and returned.  Without it, a NUMERIC frame is built by
    pointwise eigensolve; such a frame supports quantization only.
    """
    grid = grid or sym.default_grid()
    m = A_prin.rows
    if A_prin.cols != m:
        raise FrameError("principal symbol must be square")
    vals = A_prin.values(grid)
    scale = max(1.0, float(np.max(np.abs(vals))))
    herm = np.max(np.abs(vals - np.conjugate(vals).swapaxes(-1, -2)))
    if herm > herm_tol * scale:
        raise FrameError(
            f"principal symbol is not Hermitian-valued (defect {herm:.2e})")

    if supplied_frame is not None:
        f = supplied_frame
        if f.m != m:
            raise FrameError("frame dimension does not match the symbol")
        _validate_analytic(f, A_prin, grid, gap_tol, recon_tol)
        if continuity:
            check_frame_continuity(f)
        return f

    # numeric mode
    w = np.linalg.eigvalsh(0.5 * (vals + np.conjugate(vals).swapaxes(-1, -2)))
    neg = np.sum(w < 0, axis=1)
    m_minus = int(neg[0])
    if np.any(neg != m_minus):
        raise FrameError("eigenvalue signature changes across the grid")
    if np.min(np.abs(w)) <= gap_tol:
        raise FrameError("principal symbol is numerically non-elliptic")
    gaps = np.diff(np.sort(w, axis=1), axis=1)
    if gaps.size and np.min(gaps) < gap_tol:
        raise SimplicityError(
            f"eigenvalue gap {np.min(gaps):.2e} below tolerance {gap_tol}")
    field = _EighField(A_prin)
    labels = _labels(m - m_minus, m_minus)
    h = {j: _NumericEigenvalue(field, i, A_prin.degree)
         for i, j in enumerate(labels)}
    v = {j: _NumericEigenvector(field, i, m) for i, j in enumerate(labels)}
    return EigenFrame(A_prin.degree, h, v, mode="numeric")


def _validate_analytic(f, A_prin, grid, gap_tol, recon_tol):
    m = f.m
    V = np.concatenate([f.v[j].values(grid) for j in f.J], axis=2)
    gram = np.conjugate(V).swapaxes(-1, -2) @ V
    ortho = np.max(np.abs(gram - np.eye(m)))
    if ortho > 1e-8:
        raise FrameError(f"eigenvectors not orthonormal (defect {ortho:.2e})")
    hv = f.eigenvalue_table(grid)
    him = max(np.max(np.abs(f.h[j].values(grid).imag)) for j in f.J)
    if him > 1e-10:
        raise FrameError("eigenvalue fields must be real-valued")
    for i, j in enumerate(f.J):
        if np.any(np.sign(hv[:, i]) != np.sign(j)):
            raise FrameError(
                f"eigenvalue field {j} changes sign across the grid")
    if np.any(np.diff(hv, axis=1) <= 0):
        raise FrameError("eigenvalue fields are not increasing in the label")
    if simplicity_margin(f, grid) < gap_tol:
        raise SimplicityError("eigenvalue gap below tolerance")
    recon = V @ (hv[:, :, None] * np.conjugate(V).swapaxes(-1, -2))
    gap = np.max(np.abs(recon - A_prin.values(grid)))
    if gap > recon_tol * max(1.0, np.max(np.abs(hv))):
        raise FrameError(
            f"supplied eigendata does not reconstruct the principal "
            f"symbol (defect {gap:.2e})")


def gauge_rotate(frame: EigenFrame, j, phi) -> EigenFrame:
    """Replace v^(j) by exp(i phi) v^(j) for a real scalar symbol phi.

    The eigenprojections and eigenvalues are untouched; downstream
    quantities that the theory calls gauge-independent can be rechecked
    against the rotated frame.
    """
    if j not in frame.J:
        raise FrameError(f"label {j} not in frame")
    im = np.max(np.abs(phi.values(sym.default_grid()).imag))
    if im > 1e-10:
        raise FrameError("gauge function must be real-valued")
    v = dict(frame.v)
    v[j] = sym.s_smul(sym.s_exp_i(phi), v[j])
    return EigenFrame(frame.order, frame.h, v, mode=frame.mode)


def simplicity_margin(frame: EigenFrame, grid=None) -> float:
    """Min over the grid of the pairwise eigenvalue gaps at |xi| = 1."""
    hv = frame.eigenvalue_table(grid)
    margin = np.inf
    for a in range(hv.shape[1]):
        for b in range(a + 1, hv.shape[1]):
            margin = min(margin, float(np.min(np.abs(hv[:, a] - hv[:, b]))))
    return margin


def ellipticity_margin(frame: EigenFrame, grid=None) -> float:
    """Min over labels and grid of |h^(j)| at |xi| = 1."""
    return float(np.min(np.abs(frame.eigenvalue_table(grid))))


def check_frame_continuity(frame: EigenFrame, nx=6, ntheta=96, jump_tol=0.3):
    """Probe eigenvector fields along closed theta- and x1-loops.

    Smooth fields move O(1/n) per step; a branch flip or antiperiodic
    choice (the classic global-obstruction failure) jumps by O(1).  Returns
    the largest observed step; raises on violation.  A grid check only —
    smoothness between samples remains the caller's responsibility.
    """
    def loop_jump(vv):
        steps = np.max(np.abs(np.diff(vv, axis=0)))
        closing = np.max(np.abs(vv[-1] - vv[0]))  # 2 pi wrap must close
        return float(max(steps, closing))

    worst = 0.0
    xs = 2 * np.pi * np.arange(nx) / nx
    th_loop = 2 * np.pi * np.arange(ntheta + 1) / ntheta
    for x0 in xs:
        g = sym.Grid(np.full_like(th_loop, x0), np.full_like(th_loop, x0),
                     th_loop)
        for j in frame.J:
            worst = max(worst, loop_jump(frame.v[j].values(g)[:, :, 0]))
    x_loop = 2 * np.pi * np.arange(ntheta + 1) / ntheta
    for th0 in (0.0, 1.0, 2.5):
        g = sym.Grid(x_loop, np.zeros_like(x_loop),
                     np.full_like(x_loop, th0))
        for j in frame.J:
            worst = max(worst, loop_jump(frame.v[j].values(g)[:, :, 0]))
    if worst > jump_tol:
        raise FrameError(
            f"eigenvector field jumps by {worst:.3f} along a probe loop; "
            "supplied frame looks discontinuous")
    return worst
