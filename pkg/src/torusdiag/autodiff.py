"""Forward-mode automatic differentiation with nestable, tagged dual numbers.

Every closed-form leaf of the symbol algebra is written against the math
functions in this module.  Differentiating a leaf amounts to evaluating its
closure with the chosen arguments seeded as duals and reading off the ``eps``
parts; higher and mixed derivatives nest duals.  Each dual carries a level
tag so that simultaneously seeded variables do not suffer perturbation
confusion.  Values may be real or complex numpy arrays.  Derivatives are
always taken with respect to *real* variables (torus coordinates and the
fiber angle), so conjugation commutes with differentiation and is safe to
use inside leaf closures.

No finite differences anywhere: this module is the only primitive source of
derivatives in the package.
"""
from __future__ import annotations

import itertools

import numpy as np

__all__ = ["Dual", "value", "sin", "cos", "exp", "sqrt", "conj", "pack",
           "derivative"]

_TAGS = itertools.count(1)


class Dual:
    """A first-order dual number ``val + eps * delta_tag``.

    ``val`` and ``eps`` are numpy arrays (or scalars), or again ``Dual``
    instances when duals are nested.  Operands with a lower tag are treated
    as constants with respect to a higher-tagged perturbation.
    """

    __slots__ = ("val", "eps", "tag")

    # make numpy defer to the reflected operators instead of broadcasting
    # Dual instances into object arrays
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, val, eps, tag):
        self.val = val
        self.eps = eps
        self.tag = tag

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return Dual(self.val + other.val, self.eps + other.eps,
                            self.tag)
            if other.tag > self.tag:
                return Dual(self + other.val, other.eps, other.tag)
        return Dual(self.val + other, self.eps, self.tag)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.eps, self.tag)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual) else -1 * other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return Dual(self.val * other.val,
                            self.eps * other.val + self.val * other.eps,
                            self.tag)
            if other.tag > self.tag:
                return Dual(self * other.val, self * other.eps, other.tag)
        return Dual(self.val * other, self.eps * other, self.tag)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if other.tag == self.tag:
                q = self.val / other.val
                return Dual(q, (self.eps - q * other.eps) / other.val,
                            self.tag)
            if other.tag > self.tag:
                q = self / other.val
                return Dual(q, -q / other.val * other.eps, other.tag)
        return Dual(self.val / other, self.eps / other, self.tag)

    def __rtruediv__(self, other):
        q = other / self.val
        return Dual(q, -q / self.val * self.eps, self.tag)

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("dual exponents are not supported")
        return Dual(self.val ** p, p * self.val ** (p - 1) * self.eps,
                    self.tag)

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Dual({self.val!r}, {self.eps!r}, tag={self.tag})"


def value(x):
    """Strip all dual layers, returning the plain numeric value."""
    while isinstance(x, Dual):
        x = x.val
    return x


def sin(x):
    if isinstance(x, Dual):
        return Dual(sin(x.val), cos(x.val) * x.eps, x.tag)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(cos(x.val), -sin(x.val) * x.eps, x.tag)
    return np.cos(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.val)
        return Dual(e, e * x.eps, x.tag)
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        s = sqrt(x.val)
        return Dual(s, 0.5 / s * x.eps, x.tag)
    return np.sqrt(x)


def conj(x):
    """Complex conjugation; the differentiation variables are real, so the
    eps part is conjugated as well."""
    if isinstance(x, Dual):
        return Dual(conj(x.val), conj(x.eps), x.tag)
    return np.conjugate(x)


def pack(rows):
    """Stack a nested list of (possibly dual) scalar arrays into a matrix.

    Given ``rows = [[e00, e01], [e10, e11]]`` with entries that are plain
    arrays of shape ``(...,)`` or duals thereof, returns a complex array of
    shape ``(..., nrows, ncols)`` (or a Dual of such), broadcasting entries
    and materializing zero eps parts where needed.
    """
    flat = [e for row in rows for e in row]
    tags = [e.tag for e in flat if isinstance(e, Dual)]
    if not tags:
        shape = np.broadcast_shapes(*(np.shape(e) for e in flat))
        out = np.empty(shape + (len(rows), len(rows[0])), dtype=complex)
        for i, row in enumerate(rows):
            for j, e in enumerate(row):
                out[..., i, j] = e
        return out
    top = max(tags)

    def part(e, which):
        if isinstance(e, Dual) and e.tag == top:
            return e.val if which == 0 else e.eps
        return e if which == 0 else 0.0

    vals = [[part(e, 0) for e in row] for row in rows]
    epss = [[part(e, 1) for e in row] for row in rows]
    return Dual(pack(vals), pack(epss), top)


def _eps_part(x, tag):
    if isinstance(x, Dual) and x.tag == tag:
        return x.eps
    return np.zeros_like(np.asarray(value(x)))


def derivative(fn, args, axes):
    """Mixed partial derivative of ``fn`` at ``args``.

    ``axes`` is a sequence of argument indices; the function is
    differentiated once per entry (repeats allowed, e.g. ``(0, 0, 2)`` for
    two derivatives in the first argument and one in the third).  ``fn`` must
    be composed of the functions in this module; ``args`` are plain real
    arrays.  Returns a plain array.
    """
    seeded = list(args)
    tags = []
    for ax in axes:
        t = next(_TAGS)
        tags.append(t)
        seeded[ax] = Dual(seeded[ax], 1.0, t)
    out = fn(*seeded)
    for t in reversed(tags):
        out = _eps_part(out, t)
    return out
