"""Polyhomogeneous matrix symbol calculus on the flat 2-torus.

Symbols live on the punctured cotangent bundle of T^2 and are stored as
finite polyhomogeneous expansions: a symbol of order ``s`` and depth ``K``
keeps the homogeneous components of degrees ``s, s-1, ..., s-K``.  Each
component is determined by its restriction to the unit circle in the fiber,

    a(x, xi) = |xi|^rho * b(x1, x2, theta),      theta = angle of xi,

and is represented as a node in a directed acyclic graph.  Arithmetic and
differentiation build new nodes; derivative nodes are materialized once per
request and shared, with closed-form leaves differentiated by nested dual
numbers (:mod:`torusdiag.autodiff`) and trigonometric-table leaves
differentiated exactly in coefficient space.  Fiber derivatives use the
Euler homogeneity relation together with the tangential angle derivative:

    d a/d xi_1 = |xi|^(rho-1) (rho cos(theta) b - sin(theta) db/dtheta),
    d a/d xi_2 = |xi|^(rho-1) (rho sin(theta) b + cos(theta) db/dtheta).

Operator-level conventions (left quantization throughout):

* composition:   sigma(A B) ~ sum_alpha (1/alpha!) d_xi^alpha sigma_A
  * D_x^alpha sigma_B, with D = -i d/dx;
* adjoint:       sigma(A*) ~ sum_alpha (1/alpha!) d_xi^alpha D_x^alpha
  (sigma_A)^dagger;
* subprincipal:  A_sub = a_{s-1} + (i/2) sum_alpha d^2 a_s / dx^alpha dxi_alpha;
* Poisson:       {B, C} = sum_alpha B_x C_xi - B_xi C_x, and the generalized
  three-slot bracket {B, C, D} = sum_alpha B_x C D_xi - B_xi C D_x.

Every numerical check in this package samples symbols on finite grids; the
calculus itself (derivatives, compositions) is exact up to floating point.
"""
from __future__ import annotations

import csv
import math
import weakref
from math import factorial

import numpy as np

from . import autodiff as ad

__all__ = [
    "SymbolError", "DepthBudgetError", "Grid", "default_grid",
    "HomogeneousSymbol", "ZeroSymbol", "ConstSymbol", "TrigLeaf",
    "ClosureLeaf", "PolySymbol",
    "zero", "const", "trig", "closure", "entry",
    "s_add", "s_scale", "s_smul", "s_matmul", "s_conjT", "s_trace",
    "s_retag", "s_hstack", "s_blockdiag", "s_exp_i", "s_inv",
    "compose", "adjoint", "principal", "subprincipal",
    "poisson", "gen_poisson", "sub_of_product", "sub_of_triple",
    "poly_add", "poly_sub", "poly_scale", "identity_poly",
    "sup_norm", "eval_at", "residual_sup", "residual_leading",
    "component_sups", "dump_component_samples", "compactify",
]


class SymbolError(ValueError):
    """Contract violation in the symbol algebra."""


class DepthBudgetError(SymbolError):
    """Requested derivatives exceed a symbol's derivative budget."""


# ---------------------------------------------------------------------------
# sample grids


class Grid:
    """Flattened sample points on T^2 x S^1 with a per-node value cache.

    Nodes evaluated on a grid memoize their values in ``cache`` (weakly
    keyed, so discarded DAGs free their entries).  All arrays are 1-d and of
    equal length.
    """

    def __init__(self, x1, x2, theta):
        self.x1 = np.ascontiguousarray(np.asarray(x1, dtype=float).ravel())
        self.x2 = np.ascontiguousarray(np.asarray(x2, dtype=float).ravel())
        self.theta = np.ascontiguousarray(np.asarray(theta, dtype=float).ravel())
        if not (len(self.x1) == len(self.x2) == len(self.theta)):
            raise SymbolError("grid arrays must have equal length")
        self.cache = weakref.WeakKeyDictionary()
        # set by :meth:`standard`; lets band-limited leaves synthesize by FFT
        self.tensor_shape = None

    def __len__(self):
        return len(self.x1)

    @classmethod
    def standard(cls, nx: int = 8, ntheta: int = 16) -> "Grid":
        """Uniform tensor grid: ``nx**2`` torus points times ``ntheta``
        fiber angles."""
        x = 2 * np.pi * np.arange(nx) / nx
        th = 2 * np.pi * np.arange(ntheta) / ntheta
        g1, g2, gt = np.meshgrid(x, x, th, indexing="ij")
        out = cls(g1.ravel(), g2.ravel(), gt.ravel())
        out.tensor_shape = (nx, nx, ntheta)
        return out


_DEFAULT_GRID: Grid | None = None


def default_grid() -> Grid:
    """Shared standard check grid (8 x 8 torus points, 16 angles)."""
    global _DEFAULT_GRID
    if _DEFAULT_GRID is None:
        _DEFAULT_GRID = Grid.standard()
    return _DEFAULT_GRID


# ---------------------------------------------------------------------------
# homogeneous components (DAG nodes)


class HomogeneousSymbol:
    """One positively homogeneous matrix-valued symbol component.

    Subclasses implement ``_compute`` (values on a grid) and the derivative
    rules ``_dx``/``_dtheta``.  The public ``dx``/``dtheta``/``dxi`` methods
    memoize the derivative nodes so repeated requests share structure.
    """

    is_zero = False
    x_dep = (True, True)
    th_dep = True

    def __init__(self, degree, shape):
        self.degree = float(degree)
        self.shape = (int(shape[0]), int(shape[1]))
        self._memo: dict = {}

    # -- basic queries ------------------------------------------------------
    @property
    def rows(self):
        return self.shape[0]

    @property
    def cols(self):
        return self.shape[1]

    @property
    def budget(self) -> float:
        """Remaining admissible derivative order."""
        return math.inf

    # -- evaluation ---------------------------------------------------------
    def values(self, grid: Grid) -> np.ndarray:
        """Values on the unit fiber circle, shape ``(len(grid), rows, cols)``."""
        out = grid.cache.get(self)
        if out is None:
            out = np.asarray(self._compute(grid), dtype=complex)
            grid.cache[self] = out
        return out

    def _compute(self, grid):
        raise NotImplementedError

    # -- derivatives --------------------------------------------------------
    def dx(self, axis: int) -> "HomogeneousSymbol":
        """Derivative in the torus coordinate ``x^(axis+1)`` (degree kept)."""
        key = ("dx", axis)
        node = self._memo.get(key)
        if node is None:
            if not self.x_dep[axis]:
                node = ZeroSymbol(self.degree, self.shape)
            else:
                self._require_budget()
                node = self._dx(axis)
            self._memo[key] = node
        return node

    def dtheta(self) -> "HomogeneousSymbol":
        """Tangential (angle) derivative of the sphere data (degree tag kept;
        only meaningful inside the Euler combination of ``dxi``)."""
        node = self._memo.get("dth")
        if node is None:
            if not self.th_dep:
                node = ZeroSymbol(self.degree, self.shape)
            else:
                self._require_budget()
                node = self._dtheta()
            self._memo["dth"] = node
        return node

    def dxi(self, axis: int) -> "HomogeneousSymbol":
        """Fiber derivative via the Euler relation; degree drops by one."""
        key = ("dxi", axis)
        node = self._memo.get(key)
        if node is None:
            if self.is_zero:
                node = ZeroSymbol(self.degree - 1, self.shape)
            else:
                node = self._dxi(axis)
            self._memo[key] = node
        return node

    def _dxi(self, axis):
        radial = _COS_TH if axis == 0 else _SIN_TH
        tangential = _SIN_TH if axis == 0 else _COS_TH
        sign = -1.0 if axis == 0 else 1.0
        return s_retag(
            s_add(s_scale(self.degree, s_smul(radial, self)),
                  s_scale(sign, s_smul(tangential, self.dtheta())),
                  degree=self.degree, shape=self.shape),
            self.degree - 1)

    def _dx(self, axis):
        raise NotImplementedError

    def _dtheta(self):
        raise NotImplementedError

    def _require_budget(self):
        if self.budget < 1:
            raise DepthBudgetError(
                "derivative budget exhausted for this symbol component")

    # convenience
    def sup(self, grid: Grid | None = None) -> float:
        return sup_norm(self, grid)


class ZeroSymbol(HomogeneousSymbol):
    """Structurally zero component; absorbs algebra and derivatives."""

    is_zero = True
    x_dep = (False, False)
    th_dep = False

    def _compute(self, grid):
        return np.zeros((len(grid),) + self.shape, dtype=complex)


class ConstSymbol(HomogeneousSymbol):
    """Component independent of x and theta (a fixed matrix)."""

    x_dep = (False, False)
    th_dep = False

    def __init__(self, matrix, degree=0.0):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
        super().__init__(degree, matrix.shape)
        self.matrix = matrix

    def _compute(self, grid):
        return np.broadcast_to(self.matrix, (len(grid),) + self.shape)


class TrigLeaf(HomogeneousSymbol):
    """Trigonometric-polynomial sphere data.

    ``coeffs`` maps integer keys ``(k1, k2, n)`` to complex ``(rows, cols)``
    matrices:  b(x, theta) = sum C_k exp(i (k1 x1 + k2 x2 + n theta)).
    Derivatives act exactly in coefficient space.
    """

    def __init__(self, degree, shape, coeffs):
        super().__init__(degree, shape)
        self.coeffs = {tuple(int(i) for i in k): np.asarray(v, dtype=complex)
                       for k, v in coeffs.items()}
        for v in self.coeffs.values():
            if v.shape != self.shape:
                raise SymbolError("trig coefficient shape mismatch")
        self.x_dep = (any(k[0] for k in self.coeffs),
                      any(k[1] for k in self.coeffs))
        self.th_dep = any(k[2] for k in self.coeffs)

    def _compute(self, grid):
        shape = grid.tensor_shape
        if shape is not None and len(self.coeffs) > 8:
            # tensor grid: scatter keys (mod the lattice, which matches
            # pointwise evaluation) and synthesize by inverse FFT
            nx1, nx2, nth = shape
            box = np.zeros(shape + self.shape, dtype=complex)
            for (k1, k2, n), mat in self.coeffs.items():
                box[k1 % nx1, k2 % nx2, n % nth] += mat
            vals = np.fft.ifftn(box, axes=(0, 1, 2)) * (nx1 * nx2 * nth)
            return vals.reshape((len(grid),) + self.shape)
        out = np.zeros((len(grid),) + self.shape, dtype=complex)
        for (k1, k2, n), mat in sorted(self.coeffs.items()):
            phase = np.exp(1j * (k1 * grid.x1 + k2 * grid.x2 + n * grid.theta))
            out += phase[:, None, None] * mat
        return out

    def _mapped(self, factor_of_key):
        coeffs = {}
        for key, mat in self.coeffs.items():
            f = factor_of_key(key)
            if f != 0:
                coeffs[key] = f * mat
        return trig(self.degree, self.shape, coeffs)

    def _dx(self, axis):
        return self._mapped(lambda k: 1j * k[axis])

    def _dtheta(self):
        return self._mapped(lambda k: 1j * k[2])

    def _dxi(self, axis):
        # The Euler combination acts exactly on coefficients: the theta
        # factors shift the angular key by +-1, so the whole fiber
        # derivative is again trigonometric data (a single leaf).
        rho = self.degree
        coeffs: dict = {}
        for (k1, k2, n), mat in self.coeffs.items():
            up = 0.5 * (rho - n)
            down = 0.5 * (rho + n)
            if axis == 1:
                up, down = -1j * up, 1j * down
            if up != 0:
                key = (k1, k2, n + 1)
                coeffs[key] = coeffs.get(key, 0) + up * mat
            if down != 0:
                key = (k1, k2, n - 1)
                coeffs[key] = coeffs.get(key, 0) + down * mat
        coeffs = {k: v for k, v in coeffs.items() if np.any(v)}
        return trig(self.degree - 1, self.shape, coeffs)


class ClosureLeaf(HomogeneousSymbol):
    """Closed-form sphere data given by a dual-capable closure.

    ``fn(x1, x2, theta)`` must be written against :mod:`torusdiag.autodiff`
    and return a complex array of shape ``(npoints, rows, cols)``; it is
    evaluated with dual-seeded arguments to produce derivative leaves.
    ``x_dep``/``th_dep`` declare genuine dependencies so that structural
    zeros prune the DAG; ``budget`` bounds the admissible total derivative
    order (a numeric, pointwise-only source would declare 0).
    """

    def __init__(self, degree, shape, fn, x_dep=(True, True), th_dep=True,
                 budget=16, name=""):
        super().__init__(degree, shape)
        self.fn = fn
        self.x_dep = (bool(x_dep[0]), bool(x_dep[1]))
        self.th_dep = bool(th_dep)
        self._budget = int(budget)
        self.name = name
        self._derivs: dict = {}

    @property
    def budget(self):
        return self._budget

    def _compute(self, grid):
        return self.fn(grid.x1, grid.x2, grid.theta)

    def _deriv_node(self, counts):
        node = self._derivs.get(counts)
        if node is None:
            node = _ClosureDeriv(self, counts)
            self._derivs[counts] = node
        return node

    def _dx(self, axis):
        counts = [0, 0, 0]
        counts[axis] = 1
        return self._deriv_node(tuple(counts))

    def _dtheta(self):
        return self._deriv_node((0, 0, 1))


class _ClosureDeriv(HomogeneousSymbol):
    """Materialized mixed partial of a :class:`ClosureLeaf`."""

    def __init__(self, root, counts):
        super().__init__(root.degree, root.shape)
        self.root = root
        self.counts = counts
        self.x_dep = root.x_dep
        self.th_dep = root.th_dep

    @property
    def budget(self):
        return self.root._budget - sum(self.counts)

    def _compute(self, grid):
        axes = (0,) * self.counts[0] + (1,) * self.counts[1] \
            + (2,) * self.counts[2]
        return ad.derivative(self.root.fn, [grid.x1, grid.x2, grid.theta],
                             axes)

    def _bump(self, axis):
        counts = list(self.counts)
        counts[axis] += 1
        return self.root._deriv_node(tuple(counts))

    def _dx(self, axis):
        return self._bump(axis)

    def _dtheta(self):
        return self._bump(2)


# -- composite nodes --------------------------------------------------------


class _Composite(HomogeneousSymbol):
    def __init__(self, degree, shape, children):
        super().__init__(degree, shape)
        self.children = tuple(children)
        self.x_dep = (any(c.x_dep[0] for c in self.children),
                      any(c.x_dep[1] for c in self.children))
        self.th_dep = any(c.th_dep for c in self.children)

    @property
    def budget(self):
        return min(c.budget for c in self.children)


class AddSymbol(_Composite):
    def _compute(self, grid):
        out = self.children[0].values(grid).copy()
        for c in self.children[1:]:
            out += c.values(grid)
        return out

    def _dx(self, axis):
        return s_add(*[c.dx(axis) for c in self.children],
                     degree=self.degree, shape=self.shape)

    def _dtheta(self):
        return s_add(*[c.dtheta() for c in self.children],
                     degree=self.degree, shape=self.shape)


class ScaleSymbol(_Composite):
    def __init__(self, factor, child):
        super().__init__(child.degree, child.shape, (child,))
        self.factor = complex(factor)

    def _compute(self, grid):
        return self.factor * self.children[0].values(grid)

    def _dx(self, axis):
        return s_scale(self.factor, self.children[0].dx(axis))

    def _dtheta(self):
        return s_scale(self.factor, self.children[0].dtheta())


class ScalarMulSymbol(_Composite):
    """Pointwise product of a 1x1 symbol with a matrix symbol."""

    def __init__(self, scal, child):
        if scal.shape != (1, 1):
            raise SymbolError("scalar factor must be 1x1")
        super().__init__(scal.degree + child.degree, child.shape,
                         (scal, child))

    def _compute(self, grid):
        s, c = self.children
        return s.values(grid) * c.values(grid)

    def _dx(self, axis):
        s, c = self.children
        return s_add(s_smul(s.dx(axis), c), s_smul(s, c.dx(axis)),
                     degree=self.degree, shape=self.shape)

    def _dtheta(self):
        s, c = self.children
        return s_add(s_smul(s.dtheta(), c), s_smul(s, c.dtheta()),
                     degree=self.degree, shape=self.shape)


class MatMulSymbol(_Composite):
    def __init__(self, a, b):
        if a.cols != b.rows:
            raise SymbolError(
                f"inner dimension mismatch: {a.shape} @ {b.shape}")
        super().__init__(a.degree + b.degree, (a.rows, b.cols), (a, b))

    def _compute(self, grid):
        a, b = self.children
        return a.values(grid) @ b.values(grid)

    def _dx(self, axis):
        a, b = self.children
        return s_add(s_matmul(a.dx(axis), b), s_matmul(a, b.dx(axis)),
                     degree=self.degree, shape=self.shape)

    def _dtheta(self):
        a, b = self.children
        return s_add(s_matmul(a.dtheta(), b), s_matmul(a, b.dtheta()),
                     degree=self.degree, shape=self.shape)


class ConjTSymbol(_Composite):
    """Pointwise conjugate transpose of the matrix values."""

    def __init__(self, child):
        super().__init__(child.degree, (child.cols, child.rows), (child,))

    def _compute(self, grid):
        return np.conjugate(self.children[0].values(grid)).swapaxes(-1, -2)

    def _dx(self, axis):
        return s_conjT(self.children[0].dx(axis))

    def _dtheta(self):
        return s_conjT(self.children[0].dtheta())


class TraceSymbol(_Composite):
    def __init__(self, child):
        if child.rows != child.cols:
            raise SymbolError("trace requires a square symbol")
        super().__init__(child.degree, (1, 1), (child,))

    def _compute(self, grid):
        tr = np.trace(self.children[0].values(grid), axis1=-2, axis2=-1)
        return tr[:, None, None]

    def _dx(self, axis):
        return s_trace(self.children[0].dx(axis))

    def _dtheta(self):
        return s_trace(self.children[0].dtheta())


class RetagSymbol(_Composite):
    """Same sphere data, different homogeneity degree (Euler bookkeeping)."""

    def __init__(self, child, degree):
        super().__init__(degree, child.shape, (child,))

    def _compute(self, grid):
        return self.children[0].values(grid)

    def _dx(self, axis):
        return s_retag(self.children[0].dx(axis), self.degree)

    def _dtheta(self):
        return s_retag(self.children[0].dtheta(), self.degree)


class InvSymbol(_Composite):
    """Pointwise reciprocal of a nowhere-vanishing 1x1 symbol; degree
    negates.  As with the phase node, derivatives reference this node:
    (1/f)' = -f' / f^2."""

    def __init__(self, child):
        if child.shape != (1, 1):
            raise SymbolError("reciprocal requires a 1x1 symbol")
        super().__init__(-child.degree, (1, 1), (child,))

    def _compute(self, grid):
        vals = self.children[0].values(grid)
        small = np.min(np.abs(vals))
        if small < 1e-12:
            raise SymbolError(
                f"reciprocal of a near-vanishing scalar (min {small:.2e})")
        return 1.0 / vals

    def _chain(self, dchild):
        return s_scale(-1.0, s_smul(dchild, s_smul(self, self)))

    def _dx(self, axis):
        return self._chain(self.children[0].dx(axis))

    def _dtheta(self):
        return self._chain(self.children[0].dtheta())


class ExpISymbol(_Composite):
    """Pointwise unitary phase ``exp(i phi)`` of a real scalar symbol.

    The phase is its own derivative up to the factor ``i phi'``, so the
    derivative nodes reference this node — the DAG stays acyclic because
    evaluation never recurses through derivatives.
    """

    def __init__(self, child):
        if child.shape != (1, 1):
            raise SymbolError("gauge phase requires a 1x1 symbol")
        if abs(child.degree) > 1e-9:
            raise SymbolError("gauge phase requires a degree-0 scalar")
        super().__init__(0.0, (1, 1), (child,))

    def _compute(self, grid):
        return np.exp(1j * self.children[0].values(grid))

    def _dx(self, axis):
        return s_smul(s_scale(1j, self.children[0].dx(axis)), self)

    def _dtheta(self):
        return s_smul(s_scale(1j, self.children[0].dtheta()), self)


class HStackSymbol(_Composite):
    def __init__(self, children):
        rows = children[0].rows
        deg = children[0].degree
        if any(c.rows != rows or abs(c.degree - deg) > 1e-9
               for c in children):
            raise SymbolError("hstack requires equal row counts and degrees")
        cols = sum(c.cols for c in children)
        super().__init__(deg, (rows, cols), children)

    def _compute(self, grid):
        return np.concatenate([c.values(grid) for c in self.children],
                              axis=-1)

    def _dx(self, axis):
        return s_hstack([c.dx(axis) for c in self.children])

    def _dtheta(self):
        return s_hstack([c.dtheta() for c in self.children])


class BlockDiagSymbol(_Composite):
    def __init__(self, children):
        deg = children[0].degree
        if any(abs(c.degree - deg) > 1e-9 for c in children):
            raise SymbolError("block diagonal requires equal degrees")
        n = sum(c.rows for c in children)
        m = sum(c.cols for c in children)
        super().__init__(deg, (n, m), children)

    def _compute(self, grid):
        out = np.zeros((len(grid),) + self.shape, dtype=complex)
        i = j = 0
        for c in self.children:
            out[:, i:i + c.rows, j:j + c.cols] = c.values(grid)
            i += c.rows
            j += c.cols
        return out

    def _dx(self, axis):
        return s_blockdiag([c.dx(axis) for c in self.children])

    def _dtheta(self):
        return s_blockdiag([c.dtheta() for c in self.children])


# -- smart constructors -----------------------------------------------------


def zero(degree, shape) -> ZeroSymbol:
    return ZeroSymbol(degree, shape)


def const(matrix, degree=0.0) -> ConstSymbol:
    return ConstSymbol(matrix, degree)


def trig(degree, shape, coeffs) -> HomogeneousSymbol:
    """Trig-polynomial component; collapses to a constant or zero when the
    coefficient table allows it."""
    cleaned = {tuple(int(i) for i in k): np.asarray(v, dtype=complex)
               for k, v in coeffs.items()
               if np.any(np.asarray(v) != 0)}
    if not cleaned:
        return ZeroSymbol(degree, shape)
    if set(cleaned) == {(0, 0, 0)}:
        return ConstSymbol(cleaned[(0, 0, 0)], degree)
    return TrigLeaf(degree, shape, cleaned)


def closure(degree, shape, fn, x_dep=(True, True), th_dep=True, budget=16,
            name="") -> ClosureLeaf:
    return ClosureLeaf(degree, shape, fn, x_dep, th_dep, budget, name)


def _trig_coeffs(node):
    """Coefficient table for trig-polynomial data, or None if the node is
    not stored in coefficient form (zero is handled by callers)."""
    if isinstance(node, TrigLeaf):
        return node.coeffs
    if isinstance(node, ConstSymbol):
        return {(0, 0, 0): node.matrix}
    return None


# products with more key pairs than this fall back to a lazy node
_FUSE_PAIR_CAP = 4_000_000


def _fuse_product(ca, cb, degree, shape, matmul):
    """Convolve two coefficient tables (key addition, exact arithmetic).

    Keys whose amplitude is negligible against the largest one (1e-17
    relative) are dropped to keep the tables from accumulating dead weight.
    """
    ka = np.array(list(ca.keys()), dtype=np.int64).reshape(len(ca), 3)
    va = np.stack(list(ca.values()))
    kb = np.array(list(cb.keys()), dtype=np.int64).reshape(len(cb), 3)
    vb = np.stack(list(cb.values()))
    kk = (ka[:, None, :] + kb[None, :, :]).reshape(-1, 3)
    if matmul:
        prod = np.einsum("aij,bjk->abik", va, vb)
    else:
        prod = va[:, None, :, :] * vb[None, :, :, :]
    prod = prod.reshape(-1, prod.shape[-2], prod.shape[-1])
    if np.abs(kk).max() < 2048:  # pack keys into one integer for fast dedup
        code = ((kk[:, 0] + 2048) << 24) | ((kk[:, 1] + 2048) << 12) \
            | (kk[:, 2] + 2048)
        ucode, inv = np.unique(code, return_inverse=True)
        uk = np.stack([(ucode >> 24) - 2048,
                       ((ucode >> 12) & 4095) - 2048,
                       (ucode & 4095) - 2048], axis=1)
    else:
        uk, inv = np.unique(kk, axis=0, return_inverse=True)
    out = np.zeros((len(uk),) + prod.shape[1:], dtype=complex)
    np.add.at(out, inv, prod)
    amp = np.abs(out).reshape(len(uk), -1).max(axis=1)
    top = amp.max()
    if top == 0.0:
        return ZeroSymbol(degree, shape)
    keep = np.nonzero(amp > 1e-17 * top)[0]
    return trig(degree, shape, {tuple(int(x) for x in uk[i]): out[i]
                                for i in keep})


def s_add(*terms, degree=None, shape=None) -> HomogeneousSymbol:
    live = [t for t in terms if not t.is_zero]
    if degree is None:
        degree = terms[0].degree
    if shape is None:
        shape = terms[0].shape
    for t in live:
        if abs(t.degree - degree) > 1e-9 or t.shape != tuple(shape):
            raise SymbolError(
                f"cannot add component of degree {t.degree} shape {t.shape} "
                f"at degree {degree} shape {tuple(shape)}")
    fusable = [c for c in (_trig_coeffs(t) for t in live) if c is not None]
    if len(fusable) >= 2:
        merged: dict = {}
        for table in fusable:
            for k, v in table.items():
                prev = merged.get(k)
                merged[k] = v if prev is None else prev + v
        live = [t for t in live if _trig_coeffs(t) is None]
        fused = trig(degree, shape, merged)
        if not fused.is_zero:
            live.append(fused)
    if not live:
        return ZeroSymbol(degree, shape)
    if len(live) == 1:
        return live[0]
    return AddSymbol(degree, shape, live)


def s_scale(factor, sym) -> HomogeneousSymbol:
    if sym.is_zero or factor == 0:
        return ZeroSymbol(sym.degree, sym.shape)
    if factor == 1:
        return sym
    if isinstance(sym, ScaleSymbol):
        return s_scale(factor * sym.factor, sym.children[0])
    table = _trig_coeffs(sym)
    if table is not None:
        return trig(sym.degree, sym.shape,
                    {k: factor * v for k, v in table.items()})
    return ScaleSymbol(factor, sym)


def s_smul(scal, sym) -> HomogeneousSymbol:
    if scal.is_zero or sym.is_zero:
        return ZeroSymbol(scal.degree + sym.degree, sym.shape)
    ca, cb = _trig_coeffs(scal), _trig_coeffs(sym)
    if ca is not None and cb is not None \
            and len(ca) * len(cb) <= _FUSE_PAIR_CAP:
        return _fuse_product(ca, cb, scal.degree + sym.degree, sym.shape,
                             matmul=False)
    return ScalarMulSymbol(scal, sym)


def s_matmul(a, b) -> HomogeneousSymbol:
    if a.cols != b.rows:
        raise SymbolError(f"inner dimension mismatch: {a.shape} @ {b.shape}")
    if a.is_zero or b.is_zero:
        return ZeroSymbol(a.degree + b.degree, (a.rows, b.cols))
    if a.shape == (1, 1):
        return s_smul(a, b)
    if b.shape == (1, 1) and a.shape != (1, 1):
        return s_smul(b, a)
    ca, cb = _trig_coeffs(a), _trig_coeffs(b)
    if ca is not None and cb is not None \
            and len(ca) * len(cb) <= _FUSE_PAIR_CAP:
        return _fuse_product(ca, cb, a.degree + b.degree, (a.rows, b.cols),
                             matmul=True)
    return MatMulSymbol(a, b)


def s_conjT(sym) -> HomogeneousSymbol:
    if sym.is_zero:
        return ZeroSymbol(sym.degree, (sym.cols, sym.rows))
    if isinstance(sym, ConjTSymbol):
        return sym.children[0]
    if isinstance(sym, ConstSymbol):
        return ConstSymbol(sym.matrix.conj().T, sym.degree)
    if isinstance(sym, TrigLeaf):
        return trig(sym.degree, (sym.cols, sym.rows),
                    {(-k1, -k2, -n): v.conj().T
                     for (k1, k2, n), v in sym.coeffs.items()})
    return ConjTSymbol(sym)


def s_trace(sym) -> HomogeneousSymbol:
    if sym.is_zero:
        return ZeroSymbol(sym.degree, (1, 1))
    table = _trig_coeffs(sym)
    if table is not None:
        return trig(sym.degree, (1, 1),
                    {k: np.trace(v).reshape(1, 1) for k, v in table.items()})
    return TraceSymbol(sym)


def s_retag(sym, degree) -> HomogeneousSymbol:
    if sym.degree == degree:
        return sym
    if sym.is_zero:
        return ZeroSymbol(degree, sym.shape)
    if isinstance(sym, RetagSymbol):
        return s_retag(sym.children[0], degree)
    if isinstance(sym, ConstSymbol):
        return ConstSymbol(sym.matrix, degree)
    if isinstance(sym, TrigLeaf):
        return TrigLeaf(degree, sym.shape, sym.coeffs)
    return RetagSymbol(sym, degree)


def s_hstack(children) -> HomogeneousSymbol:
    if all(c.is_zero for c in children):
        return ZeroSymbol(children[0].degree,
                          (children[0].rows, sum(c.cols for c in children)))
    tables = [{} if c.is_zero else _trig_coeffs(c) for c in children]
    if all(t is not None for t in tables):
        rows = children[0].rows
        cols = sum(c.cols for c in children)
        merged: dict = {}
        off = 0
        for c, table in zip(children, tables):
            for k, v in table.items():
                block = merged.setdefault(
                    k, np.zeros((rows, cols), dtype=complex))
                block[:, off:off + c.cols] += v
            off += c.cols
        return trig(children[0].degree, (rows, cols), merged)
    return HStackSymbol(tuple(children))


def s_blockdiag(children) -> HomogeneousSymbol:
    shape = (sum(c.rows for c in children), sum(c.cols for c in children))
    if all(c.is_zero for c in children):
        return ZeroSymbol(children[0].degree, shape)
    tables = [{} if c.is_zero else _trig_coeffs(c) for c in children]
    if all(t is not None for t in tables):
        merged: dict = {}
        ro = co = 0
        for c, table in zip(children, tables):
            for k, v in table.items():
                block = merged.setdefault(
                    k, np.zeros(shape, dtype=complex))
                block[ro:ro + c.rows, co:co + c.cols] += v
            ro += c.rows
            co += c.cols
        return trig(children[0].degree, shape, merged)
    return BlockDiagSymbol(tuple(children))


def s_inv(sym) -> HomogeneousSymbol:
    if sym.is_zero:
        raise SymbolError("cannot invert the zero symbol")
    if isinstance(sym, InvSymbol):
        return sym.children[0]
    if isinstance(sym, ConstSymbol):
        return ConstSymbol(1.0 / sym.matrix, -sym.degree)
    return InvSymbol(sym)


def s_exp_i(phi) -> HomogeneousSymbol:
    if phi.is_zero:
        return ConstSymbol([[1.0]], 0.0)
    return ExpISymbol(phi)


def entry(sym, i, j) -> HomogeneousSymbol:
    """Extract entry (i, j) as a 1x1 symbol."""
    row = np.zeros((1, sym.rows))
    row[0, i] = 1.0
    col = np.zeros((sym.cols, 1))
    col[j, 0] = 1.0
    return s_matmul(s_matmul(const(row), sym), const(col))


_COS_TH = TrigLeaf(0.0, (1, 1), {(0, 0, 1): [[0.5]], (0, 0, -1): [[0.5]]})
_SIN_TH = TrigLeaf(0.0, (1, 1), {(0, 0, 1): [[-0.5j]], (0, 0, -1): [[0.5j]]})


# ---------------------------------------------------------------------------
# polyhomogeneous symbols


class PolySymbol:
    """A finite polyhomogeneous expansion.

    ``comps[k]`` is the homogeneous component of degree ``order - k``; the
    stored depth is ``len(comps) - 1``.  Components that an exact operator
    does not possess are stored as structural zeros, and all algebra below
    treats missing components beyond the stored depth as unknown (results
    are truncated accordingly).
    """

    def __init__(self, order, comps):
        self.order = float(order)
        comps = list(comps)
        if not comps:
            raise SymbolError("a symbol needs at least one component")
        shape = comps[0].shape
        for k, c in enumerate(comps):
            if c.shape != shape:
                raise SymbolError("component shapes differ")
            if abs(c.degree - (order - k)) > 1e-9:
                raise SymbolError(
                    f"component {k} has degree {c.degree}, "
                    f"expected {order - k}")
        self.comps = comps

    # -- queries ------------------------------------------------------------
    @property
    def shape(self):
        return self.comps[0].shape

    @property
    def rows(self):
        return self.comps[0].rows

    @property
    def cols(self):
        return self.comps[0].cols

    @property
    def depth(self):
        return len(self.comps) - 1

    @property
    def budget(self):
        return min(c.budget for c in self.comps)

    def component(self, degree) -> HomogeneousSymbol:
        """Stored component of the given degree (zero if inside the stored
        range but absent; error if beyond the stored depth)."""
        k = self.order - degree
        ki = int(round(k))
        if abs(k - ki) > 1e-9:
            return ZeroSymbol(degree, self.shape)
        if ki < 0:
            return ZeroSymbol(degree, self.shape)
        if ki >= len(self.comps):
            raise SymbolError(
                f"component of degree {degree} lies below the stored depth")
        return self.comps[ki]

    def truncated(self, depth) -> "PolySymbol":
        if depth > self.depth:
            raise SymbolError("cannot truncate beyond stored depth")
        return PolySymbol(self.order, self.comps[:depth + 1])

    def padded(self, depth) -> "PolySymbol":
        """Extend with structural zeros (asserting the operator genuinely
        has no components there, e.g. an exact identity or multiplier)."""
        if depth <= self.depth:
            return self
        comps = list(self.comps)
        comps += [ZeroSymbol(self.order - k, self.shape)
                  for k in range(self.depth + 1, depth + 1)]
        return PolySymbol(self.order, comps)

    def __repr__(self):  # pragma: no cover
        return (f"PolySymbol(order={self.order}, depth={self.depth}, "
                f"shape={self.shape})")


def identity_poly(m, depth=0) -> PolySymbol:
    comps = [const(np.eye(m))]
    comps += [ZeroSymbol(-k, (m, m)) for k in range(1, depth + 1)]
    return PolySymbol(0.0, comps)


def poly_scale(factor, A: PolySymbol) -> PolySymbol:
    return PolySymbol(A.order, [s_scale(factor, c) for c in A.comps])


def poly_add(A: PolySymbol, B: PolySymbol) -> PolySymbol:
    """Sum of two expansions aligned by homogeneity degree.

    Orders may differ by an integer (the shorter one is padded with zeros
    at the top); the result reaches only as deep as both inputs do, since
    unstored components are unknown, not zero.  Pad an exact operator with
    :meth:`PolySymbol.padded` first when its tail really vanishes.
    """
    if A.shape != B.shape:
        raise SymbolError("cannot add symbols of different shapes")
    off = A.order - B.order
    if abs(off - round(off)) > 1e-9:
        raise SymbolError("orders must differ by an integer")
    order = max(A.order, B.order)
    lowest = max(A.order - A.depth, B.order - B.depth)
    comps = []
    k = 0
    while order - k >= lowest - 1e-9:
        deg = order - k
        terms = []
        for s in (A, B):
            ki = int(round(s.order - deg))
            if 0 <= ki < len(s.comps):
                terms.append(s.comps[ki])
        comps.append(s_add(*terms, degree=deg, shape=A.shape)
                     if terms else ZeroSymbol(deg, A.shape))
        k += 1
    return PolySymbol(order, comps)


def poly_sub(A: PolySymbol, B: PolySymbol) -> PolySymbol:
    return poly_add(A, poly_scale(-1.0, B))


# -- calculus ---------------------------------------------------------------

_MINUS_I_POW = (1 + 0j, -1j, -1 + 0j, 1j)


def _xi_multi(sym, a1, a2):
    for _ in range(a1):
        sym = sym.dxi(0)
    for _ in range(a2):
        sym = sym.dxi(1)
    return sym


def _x_multi(sym, a1, a2):
    for _ in range(a1):
        sym = sym.dx(0)
    for _ in range(a2):
        sym = sym.dx(1)
    return sym


def compose(A: PolySymbol, B: PolySymbol, depth: int) -> PolySymbol:
    """Asymptotic left-symbol composition truncated at the given depth.

    Component ``n`` of the result collects every term
    ``(1/alpha!) d_xi^alpha A_i . D_x^alpha B_j`` with
    ``i + j + |alpha| = n``.  Raises if the requested depth exceeds either
    operand's derivative budget or stored depth.
    """
    if A.cols != B.rows:
        raise SymbolError(
            f"inner dimension mismatch: {A.shape} @ {B.shape}")
    depth = int(depth)
    if depth < 0:
        raise SymbolError("depth must be nonnegative")
    if depth > min(A.depth, B.depth):
        raise SymbolError("composition depth exceeds stored depth")
    if depth > A.budget or depth > B.budget:
        raise DepthBudgetError(
            "composition depth exceeds available derivative order")
    order = A.order + B.order
    shape = (A.rows, B.cols)
    comps = []
    for n in range(depth + 1):
        terms = []
        for a1 in range(n + 1):
            for a2 in range(n + 1 - a1):
                o = a1 + a2
                coef = _MINUS_I_POW[o % 4] / (factorial(a1) * factorial(a2))
                for i in range(n - o + 1):
                    j = n - o - i
                    left = _xi_multi(A.comps[i], a1, a2)
                    right = _x_multi(B.comps[j], a1, a2)
                    terms.append(s_scale(coef, s_matmul(left, right)))
        comps.append(s_add(*terms, degree=order - n, shape=shape))
    return PolySymbol(order, comps)


def adjoint(A: PolySymbol, depth: int | None = None) -> PolySymbol:
    """Formal-adjoint symbol, truncated at ``depth`` (default: stored
    depth):  sigma(A*) ~ sum (1/alpha!) d_xi^alpha D_x^alpha sigma_A^dagger.
    """
    if depth is None:
        depth = A.depth
    depth = int(depth)
    if depth > A.depth:
        raise SymbolError("adjoint depth exceeds stored depth")
    if depth > A.budget:
        raise DepthBudgetError(
            "adjoint depth exceeds available derivative order")
    shape = (A.cols, A.rows)
    comps = []
    for n in range(depth + 1):
        terms = []
        for a1 in range(n + 1):
            for a2 in range(n + 1 - a1):
                o = a1 + a2
                i = n - o
                coef = _MINUS_I_POW[o % 4] / (factorial(a1) * factorial(a2))
                node = _xi_multi(_x_multi(s_conjT(A.comps[i]), a1, a2),
                                 a1, a2)
                terms.append(s_scale(coef, node))
        comps.append(s_add(*terms, degree=A.order - n, shape=shape))
    return PolySymbol(A.order, comps)


def principal(A: PolySymbol) -> HomogeneousSymbol:
    """Leading (principal) component."""
    return A.comps[0]


def subprincipal(A: PolySymbol) -> HomogeneousSymbol:
    """Invariant subprincipal component:
    ``a_{s-1} + (i/2) sum_alpha d^2 a_s / dx^alpha dxi_alpha``.
    Requires stored depth >= 1."""
    if A.depth < 1:
        raise SymbolError("subprincipal requires depth >= 1")
    lead = A.comps[0]
    corr = s_add(lead.dx(0).dxi(0), lead.dx(1).dxi(1),
                 degree=A.order - 1, shape=A.shape)
    return s_add(A.comps[1], s_scale(0.5j, corr),
                 degree=A.order - 1, shape=A.shape)


def poisson(B: HomogeneousSymbol, C: HomogeneousSymbol) -> HomogeneousSymbol:
    """Matrix Poisson bracket ``sum_alpha B_x C_xi - B_xi C_x`` (degree drops
    by one)."""
    terms = [s_matmul(B.dx(0), C.dxi(0)),
             s_matmul(B.dx(1), C.dxi(1)),
             s_scale(-1.0, s_matmul(B.dxi(0), C.dx(0))),
             s_scale(-1.0, s_matmul(B.dxi(1), C.dx(1)))]
    return s_add(*terms, degree=B.degree + C.degree - 1,
                 shape=(B.rows, C.cols))


def gen_poisson(B, C, D) -> HomogeneousSymbol:
    """Generalized three-slot bracket
    ``sum_alpha B_x C D_xi - B_xi C D_x``."""
    terms = [s_matmul(s_matmul(B.dx(0), C), D.dxi(0)),
             s_matmul(s_matmul(B.dx(1), C), D.dxi(1)),
             s_scale(-1.0, s_matmul(s_matmul(B.dxi(0), C), D.dx(0))),
             s_scale(-1.0, s_matmul(s_matmul(B.dxi(1), C), D.dx(1)))]
    return s_add(*terms, degree=B.degree + C.degree + D.degree - 1,
                 shape=(B.rows, D.cols))


def sub_of_product(A: PolySymbol, B: PolySymbol) -> HomogeneousSymbol:
    """Subprincipal of a product from the factors:
    ``A_prin B_sub + A_sub B_prin + (i/2) {A_prin, B_prin}``."""
    ap, bp = principal(A), principal(B)
    return s_add(s_matmul(ap, subprincipal(B)),
                 s_matmul(subprincipal(A), bp),
                 s_scale(0.5j, poisson(ap, bp)),
                 degree=A.order + B.order - 1, shape=(A.rows, B.cols))


def sub_of_triple(A: PolySymbol, B: PolySymbol, C: PolySymbol) \
        -> HomogeneousSymbol:
    """Subprincipal of a triple product from the factors; the bracket part
    is ``(i/2)({A,B}C + {A,B,C} + A{B,C})`` on principal symbols."""
    ap, bp, cp = principal(A), principal(B), principal(C)
    terms = [s_matmul(s_matmul(subprincipal(A), bp), cp),
             s_matmul(s_matmul(ap, subprincipal(B)), cp),
             s_matmul(s_matmul(ap, bp), subprincipal(C)),
             s_scale(0.5j, s_matmul(poisson(ap, bp), cp)),
             s_scale(0.5j, gen_poisson(ap, bp, cp)),
             s_scale(0.5j, s_matmul(ap, poisson(bp, cp)))]
    return s_add(*terms, degree=A.order + B.order + C.order - 1,
                 shape=(A.rows, C.cols))


# -- residual inspection ----------------------------------------------------


def sup_norm(sym: HomogeneousSymbol, grid: Grid | None = None) -> float:
    """Grid sup of the entrywise absolute values."""
    if sym.is_zero:
        return 0.0
    if grid is None:
        grid = default_grid()
    return float(np.max(np.abs(sym.values(grid))))


def eval_at(sym: HomogeneousSymbol, x1, x2, xi1, xi2) -> np.ndarray:
    """Evaluate the homogeneous extension at arbitrary covectors:
    ``a(x, xi) = |xi|^degree * b(x, theta)``.  Arrays broadcast; returns
    shape ``(npoints, rows, cols)``."""
    x1, x2, xi1, xi2 = np.broadcast_arrays(
        *[np.atleast_1d(np.asarray(a, dtype=float))
          for a in (x1, x2, xi1, xi2)])
    r = np.hypot(xi1, xi2)
    if np.any(r == 0):
        raise SymbolError("homogeneous symbols are undefined at xi = 0")
    g = Grid(x1, x2, np.arctan2(xi2, xi1))
    return (r ** sym.degree)[:, None, None] * sym.values(g)


def component_sups(A: PolySymbol, grid: Grid | None = None):
    """List of ``(degree, sup_norm)`` over all stored components."""
    return [(c.degree, sup_norm(c, grid)) for c in A.comps]


def residual_sup(A: PolySymbol, below: float,
                 grid: Grid | None = None) -> float:
    """Certificate for the claim that ``A`` lies in order class ``below``:
    the maximum grid sup over stored components of degree > ``below``
    (all of which the claim says vanish).  Returns 0.0 if no stored
    component lies above the claim."""
    sups = [sup_norm(c, grid) for c in A.comps if c.degree > below + 1e-9]
    return max(sups) if sups else 0.0


def residual_leading(A: PolySymbol,
                     claimed_vanishing_through: float) -> HomogeneousSymbol:
    """Leading retained component at or below a claimed vanishing order.

    With the claim that all components of degree above
    ``claimed_vanishing_through`` vanish, this returns the first stored
    component at or below the claim — the leading term of what remains —
    for sup-norm testing.  Raises if no component is stored that deep.
    """
    for c in A.comps:
        if c.degree <= claimed_vanishing_through + 1e-9:
            return c
    raise SymbolError("no components below claimed order stored")


_ANALYSIS_GRIDS: dict = {}


def _analysis_grid(nx: int, nth: int) -> Grid:
    key = (nx, nth)
    g = _ANALYSIS_GRIDS.get(key)
    if g is None:
        g = Grid.standard(nx, nth)
        _ANALYSIS_GRIDS[key] = g
    return g


def compactify(node: HomogeneousSymbol, xband: int = 12, thband: int = 12,
               tol: float = 1e-14, guard: float = 3e-14,
               max_xband: int = 36, max_thband: int = 24):
    """Re-express a component as an explicit trigonometric polynomial.

    The node is sampled on an odd tensor grid resolving x-harmonics up to
    ``xband`` and fiber harmonics up to ``thband``, FFT-analyzed, and
    coefficients below ``tol`` (relative to the peak value) are dropped.
    This is exact for data that is a trig polynomial inside the analysis
    bands, and accurate to the Fourier tail for analytic data.  Content in
    the two outermost analysis bands above ``guard`` (relative) means the
    bands are too small; they are then enlarged and the analysis redone,
    up to the ``max_*`` limits, beyond which the spill raises.  Components
    whose overall scale sits at roundoff (below 1e-12) skip the guard:
    their band structure is noise.

    Replacing a deep derivative/product tree by the single resulting leaf
    keeps repeated composition from sprawling, and the leaf's derivatives
    are exact in coefficient space.
    """
    if isinstance(node, (ZeroSymbol, ConstSymbol, TrigLeaf)):
        return node
    r, c = node.shape
    while True:
        nx = 2 * xband + 1
        nth = 2 * thband + 1
        grid = _analysis_grid(nx, nth)
        vals = np.array(node.values(grid), dtype=complex)
        # analysis grids are process-wide; drop the per-node values they
        # accumulated while walking this tree so large grids stay cheap
        grid.cache.clear()
        vals = np.broadcast_to(vals, (len(grid), r, c))
        scale = float(np.max(np.abs(vals)))
        if scale < 1e-14:
            # roundoff-level content collapses to a genuine zero
            return ZeroSymbol(node.degree, node.shape)
        arr = vals.reshape(nx, nx, nth, r, c)
        coef = np.fft.fftn(arr, axes=(0, 1, 2)) / (nx * nx * nth)
        amp = np.max(np.abs(coef), axis=(-2, -1))
        fx = np.fft.fftfreq(nx, 1.0 / nx).astype(int)
        fth = np.fft.fftfreq(nth, 1.0 / nth).astype(int)
        k1g, k2g, ng = np.meshgrid(fx, fx, fth, indexing="ij")
        outer_x = (np.abs(k1g) >= xband - 1) | (np.abs(k2g) >= xband - 1)
        outer_th = np.abs(ng) >= thband - 1
        if scale > 1e-12:
            spill_x = float(np.max(amp[outer_x]))
            spill_th = float(np.max(amp[outer_th]))
            grow_x = spill_x > guard * scale and xband < max_xband
            grow_th = spill_th > guard * scale and thband < max_thband
            if grow_x or grow_th:
                if grow_x:
                    xband = min(xband + 8, max_xband)
                if grow_th:
                    thband = min(thband + 8, max_thband)
                continue
            if max(spill_x, spill_th) > guard * scale:
                raise SymbolError(
                    f"compactification bands (x {xband}, fiber {thband}) "
                    f"too small: boundary content "
                    f"{max(spill_x, spill_th):.2e} vs scale {scale:.2e}")
        keep = amp > tol * scale
        coeffs = {}
        for i1, i2, i3 in zip(*np.nonzero(keep)):
            coeffs[(int(fx[i1]), int(fx[i2]), int(fth[i3]))] = \
                coef[i1, i2, i3]
        return trig(node.degree, node.shape, coeffs)


def dump_component_samples(A: PolySymbol, path, grid: Grid | None = None):
    """Write per-component grid samples to a delimited text file.

    One row per grid point and component: coordinates, fiber angle,
    component degree, then real/imag parts of every matrix entry in row
    major order.
    """
    if grid is None:
        grid = default_grid()
    r, c = A.shape
    header = ["x1", "x2", "theta", "degree"]
    for i in range(r):
        for j in range(c):
            header += [f"re_{i}{j}", f"im_{i}{j}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for comp in A.comps:
            vals = comp.values(grid)
            for p in range(len(grid)):
                row = [repr(float(grid.x1[p])), repr(float(grid.x2[p])),
                       repr(float(grid.theta[p])), repr(comp.degree)]
                for i in range(r):
                    for j in range(c):
                        row += [repr(float(vals[p, i, j].real)),
                                repr(float(vals[p, i, j].imag))]
                w.writerow(row)
