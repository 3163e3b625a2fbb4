"""Differentiation backends and scalar-generic linear algebra.

The default backend evaluates functions on first-order perturbation
numbers (:class:`Jet`).  Jets nest: seeding a jet whose parts are
themselves jets yields exact second, third, ... derivatives, which is how
the higher operators (tension, Jacobi, bitension) obtain the four
derivative levels they need without hand-expanded product rules.  A jet's
parts may also be numpy arrays, so one evaluation differentiates a whole
grid of points at once.

An independent central finite-difference backend with fixed relative
steps serves as the cross-check oracle; it is deliberately simple and
shares no code path with the jet arithmetic.

Every nesting level carries a unique tag so perturbations from different
differentiation calls cannot be confused.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_LEVELS = itertools.count(1)

# Central-difference steps, relative to max(1, |x|).  The coarser step is
# used when the differentiated function itself differentiates internally,
# keeping roundoff amplification bounded.
FD_STEP_FIRST = 6e-6
FD_STEP_SECOND = 2e-4


def _is_plain(x):
    return not isinstance(x, Jet)


class Jet:
    """A first-order perturbation number ``a + b*eps`` with a level tag.

    ``a`` and ``b`` may be floats, numpy arrays, or jets of *lower* level;
    arithmetic keeps that invariant, which is what makes nesting sound.
    """

    __slots__ = ("level", "a", "b")
    __array_ufunc__ = None  # force ndarray op Jet to defer to our reflected ops

    def __init__(self, level, a, b):
        self.level = level
        self.a = a
        self.b = b

    def __repr__(self):
        return f"Jet[{self.level}]({self.a!r}, {self.b!r})"

    # -- ring operations ------------------------------------------------

    def __add__(self, other):
        if _is_plain(other):
            return Jet(self.level, self.a + other, self.b)
        if other.level == self.level:
            return Jet(self.level, self.a + other.a, self.b + other.b)
        if other.level > self.level:
            return Jet(other.level, self + other.a, other.b)
        return Jet(self.level, self.a + other, self.b)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.level, -self.a, -self.b)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if _is_plain(other):
            return Jet(self.level, self.a * other, self.b * other)
        if other.level == self.level:
            return Jet(self.level, self.a * other.a, self.a * other.b + self.b * other.a)
        if other.level > self.level:
            return Jet(other.level, self * other.a, self * other.b)
        return Jet(self.level, self.a * other, self.b * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _is_plain(other):
            return Jet(self.level, self.a / other, self.b / other)
        if other.level == self.level:
            den = other.a * other.a
            return Jet(self.level, self.a / other.a, (self.b * other.a - self.a * other.b) / den)
        if other.level > self.level:
            return other.__rtruediv__(self)
        return Jet(self.level, self.a / other, self.b / other)

    def __rtruediv__(self, other):
        # other / self with other plain or of lower level
        den = self.a * self.a
        return Jet(self.level, other / self.a, -(other * self.b) / den)

    def __pow__(self, e):
        return powx(self, e)

    # -- comparisons act on the primal value ----------------------------

    def __lt__(self, other):
        return primal(self) < primal(other)

    def __le__(self, other):
        return primal(self) <= primal(other)

    def __gt__(self, other):
        return primal(self) > primal(other)

    def __ge__(self, other):
        return primal(self) >= primal(other)


def primal(x):
    """Strip all perturbation levels, returning the underlying float/array."""
    while isinstance(x, Jet):
        x = x.a
    return x


def _part(y, level):
    """Derivative part of ``y`` at ``level`` (0.0 if y does not carry it)."""
    if isinstance(y, Jet) and y.level == level:
        return y.b
    return 0.0


# ---------------------------------------------------------------------------
# elementary functions on jets / arrays / floats
# ---------------------------------------------------------------------------


def sqrt(x):
    if isinstance(x, Jet):
        s = sqrt(x.a)
        return Jet(x.level, s, x.b * 0.5 / s)
    return np.sqrt(x) if isinstance(x, np.ndarray) else math.sqrt(x)


def exp(x):
    if isinstance(x, Jet):
        e = exp(x.a)
        return Jet(x.level, e, x.b * e)
    return np.exp(x) if isinstance(x, np.ndarray) else math.exp(x)


def log(x):
    if isinstance(x, Jet):
        return Jet(x.level, log(x.a), x.b / x.a)
    return np.log(x) if isinstance(x, np.ndarray) else math.log(x)


def sin(x):
    if isinstance(x, Jet):
        return Jet(x.level, sin(x.a), x.b * cos(x.a))
    return np.sin(x) if isinstance(x, np.ndarray) else math.sin(x)


def cos(x):
    if isinstance(x, Jet):
        return Jet(x.level, cos(x.a), -(x.b * sin(x.a)))
    return np.cos(x) if isinstance(x, np.ndarray) else math.cos(x)


def powx(x, e):
    """General power ``x**e``.

    A varying exponent requires a positive base (computed via exp/log);
    callers guard rank-degenerate points before reaching this.
    """
    if isinstance(e, Jet):
        return exp(e * log(x))
    if isinstance(x, Jet):
        if isinstance(e, (int, float)):
            if e == 0:
                return 1.0
            if e == 1:
                return x
        base = powx(x.a, e)
        return Jet(x.level, base, x.b * (e * powx(x.a, e - 1)))
    if isinstance(x, np.ndarray) or isinstance(e, np.ndarray):
        return np.power(x, e)
    return math.pow(x, e)


# cos(sqrt(s)) and sinc(s) = sin(sqrt(s))/sqrt(s) are entire functions of s,
# which keeps geodesic deformations smooth through zero-length tangents.
# Derivatives of sinc satisfy the ladder
#   D1 = (cos_sqrt - D0) / (2s),   D_{k} = (-D_{k-2}/2 - (2k-1) D_{k-1}) / (2s)
# with D0 = sinc; near s = 0 a truncated power series avoids the 0/0.

_SERIES_CUT = 0.09


def _sinc_series(s, k):
    """Truncated series of the k-th derivative of sin(sqrt(s))/sqrt(s)."""
    acc = 0.0
    for j in range(k, k + 8):
        c = (-1.0) ** j * math.factorial(j) / (math.factorial(j - k) * math.factorial(2 * j + 1))
        acc = acc + c * s ** (j - k)
    return acc


def _sinc_plain(s, k):
    """k-th derivative of sinc at a float/array s >= 0."""
    if isinstance(s, np.ndarray):
        small = s < _SERIES_CUT
        safe = np.where(small, 1.0, s)
        return np.where(small, _sinc_series(s, k), _sinc_ladder(safe, k))
    if s < _SERIES_CUT:
        return _sinc_series(s, k)
    return _sinc_ladder(s, k)


def _sinc_ladder(s, k):
    r = np.sqrt(s) if isinstance(s, np.ndarray) else math.sqrt(s)
    d_prev = (np.cos(r) if isinstance(s, np.ndarray) else math.cos(r))  # cos_sqrt
    d0 = (np.sin(r) if isinstance(s, np.ndarray) else math.sin(r)) / r  # sinc
    if k == 0:
        return d0
    dkm1, dk = d0, (d_prev - d0) / (2.0 * s)
    for j in range(2, k + 1):
        dkm1, dk = dk, (-dkm1 / 2.0 - (2 * j - 1) * dk) / (2.0 * s)
    return dk


def sinc_sqrt(s, k=0):
    """k-th derivative (in s) of sin(sqrt(s))/sqrt(s); smooth at s = 0."""
    if isinstance(s, Jet):
        return Jet(s.level, sinc_sqrt(s.a, k), s.b * sinc_sqrt(s.a, k + 1))
    return _sinc_plain(s, k)


def cos_sqrt(s):
    """cos(sqrt(s)) as a smooth function of s >= 0; d/ds = -sinc/2."""
    if isinstance(s, Jet):
        return Jet(s.level, cos_sqrt(s.a), s.b * (-0.5) * sinc_sqrt(s.a))
    if isinstance(s, np.ndarray):
        small = s < _SERIES_CUT
        safe = np.where(small, 1.0, s)
        series = 1.0 - s / 2.0 + s * s / 24.0 - s * s * s / 720.0 + s * s * s * s / 40320.0
        return np.where(small, series, np.cos(np.sqrt(safe)))
    if s < _SERIES_CUT:
        return 1.0 - s / 2.0 + s * s / 24.0 - s ** 3 / 720.0 + s ** 4 / 40320.0
    return math.cos(math.sqrt(s))


# ---------------------------------------------------------------------------
# differentiation backends
# ---------------------------------------------------------------------------


class ForwardDiff:
    """Forward-mode backend: exact derivatives via nested jets."""

    name = "forward"

    def dvec(self, f, xs, i, order=1):
        """Derivative of vector-valued ``f`` w.r.t. coordinate ``i``."""
        level = next(_LEVELS)
        seeded = list(xs)
        seeded[i] = Jet(level, xs[i], 1.0)
        out = f(tuple(seeded))
        return [_part(c, level) for c in out]

    def dscalar(self, f, xs, i, order=1):
        level = next(_LEVELS)
        seeded = list(xs)
        seeded[i] = Jet(level, xs[i], 1.0)
        return _part(f(tuple(seeded)), level)


class CentralDiff:
    """Independent oracle backend: central differences with fixed steps.

    ``order=2`` selects the coarser step for outer passes whose integrand
    itself differentiates; nestings deeper than two reuse the coarse step
    and are only reached behind wide-tolerance warnings.
    """

    name = "fd"

    def _step(self, x, order):
        rel = FD_STEP_FIRST if order == 1 else FD_STEP_SECOND
        p = primal(x)
        if isinstance(p, np.ndarray):
            return rel * np.maximum(1.0, np.abs(p))
        return rel * max(1.0, abs(p))

    def dvec(self, f, xs, i, order=1):
        h = self._step(xs[i], order)
        plus = list(xs)
        minus = list(xs)
        plus[i] = xs[i] + h
        minus[i] = xs[i] - h
        fp = f(tuple(plus))
        fm = f(tuple(minus))
        return [(p - m) / (2.0 * h) for p, m in zip(fp, fm)]

    def dscalar(self, f, xs, i, order=1):
        h = self._step(xs[i], order)
        plus = list(xs)
        minus = list(xs)
        plus[i] = xs[i] + h
        minus[i] = xs[i] - h
        return (f(tuple(plus)) - f(tuple(minus))) / (2.0 * h)


FORWARD = ForwardDiff()
CENTRAL = CentralDiff()

_BACKENDS = {"forward": FORWARD, "fd": CENTRAL}


def get_backend(backend):
    """Resolve a backend instance from an instance or name."""
    if isinstance(backend, (ForwardDiff, CentralDiff)):
        return backend
    try:
        return _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; expected 'forward' or 'fd'") from None


# ---------------------------------------------------------------------------
# scalar-generic small linear algebra (works on floats, arrays, and jets)
# ---------------------------------------------------------------------------


def dot(u, v):
    acc = u[0] * v[0]
    for a, b in zip(u[1:], v[1:]):
        acc = acc + a * b
    return acc


def scale(c, u):
    return [c * a for a in u]


def vadd(u, v):
    return [a + b for a, b in zip(u, v)]


def vsub(u, v):
    return [a - b for a, b in zip(u, v)]


def matvec(M, v):
    return [dot(row, v) for row in M]


def det_small(M):
    """Determinant by cofactor expansion; intended for dims <= 4."""
    n = len(M)
    if n == 1:
        return M[0][0]
    if n == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    acc = None
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        term = M[0][j] * det_small(minor)
        if j % 2 == 1:
            term = -term
        acc = term if acc is None else acc + term
    return acc


def inv_small(M):
    """Inverse via the adjugate; pivot-free so it evaluates on jets and arrays."""
    n = len(M)
    d = det_small(M)
    if n == 1:
        return [[1.0 / d]]
    cof = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(M) if k != i]
            c = det_small(minor)
            if (i + j) % 2 == 1:
                c = -c
            cof[i][j] = c
    return [[cof[j][i] / d for j in range(n)] for i in range(n)]


def sym_pivots(M):
    """Pivots of the LDL^T factorization, via leading principal minors."""
    n = len(M)
    pivots = []
    prev = 1.0
    for k in range(1, n + 1):
        mk = det_small([row[:k] for row in M[:k]])
        pivots.append(mk / prev)
        prev = mk
    return pivots


def where_mask(mask, x, y):
    """Elementwise select that threads through jet nesting.

    ``mask`` is a plain boolean (array); jets are split into parts and
    recombined so piecewise-defined smooth functions stay differentiable
    on each piece.
    """
    if isinstance(x, Jet) or isinstance(y, Jet):
        if isinstance(x, Jet) and isinstance(y, Jet) and x.level == y.level:
            return Jet(x.level, where_mask(mask, x.a, y.a), where_mask(mask, x.b, y.b))
        if isinstance(x, Jet) and (not isinstance(y, Jet) or y.level < x.level):
            return Jet(x.level, where_mask(mask, x.a, y), where_mask(mask, x.b, 0.0))
        return Jet(y.level, where_mask(mask, x, y.a), where_mask(mask, 0.0, y.b))
    if isinstance(mask, (bool, np.bool_)):
        return x if mask else y
    return np.where(mask, x, y)


def pairwise_sum(values):
    """Deterministic pairwise reduction over the given index order."""
    arr = np.asarray(values, dtype=float)
    n = arr.size
    if n == 0:
        return 0.0
    return float(_pairwise(arr.ravel(), 0, n))


def _pairwise(arr, lo, hi):
    n = hi - lo
    if n <= 8:
        acc = 0.0
        for k in range(lo, hi):
            acc += float(arr[k])
        return acc
    mid = lo + n // 2
    return _pairwise(arr, lo, mid) + _pairwise(arr, mid, hi)
