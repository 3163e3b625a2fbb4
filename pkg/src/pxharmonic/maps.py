"""Smooth maps, exponent fields, and the catalog of named examples.

Maps are stored in coordinates (ambient coordinates for sphere targets)
together with an admissible-domain predicate and, where a closed form is
cheap, an analytic Jacobian provider.  The catalog holds the three maps
with known variable-exponent behavior (inversion of punctured space, the
radial retraction onto the unit sphere, the cylinder projection) plus
generic plumbing entries used to assemble test scenarios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend as bk
from .backend import dot
from . import geometry as geo
from .errors import AdmissibilityError, CatalogError, DomainError

EXPONENT_FLOOR = 2.0


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothMap:
    """A map from a chart into a target space.

    ``fn`` maps a coordinate tuple to a list of ambient components;
    ``jacobian`` (optional) returns the matrix with ambient rows and
    domain columns.  ``admissible`` is the domain predicate; samplers and
    quadrature reject points where it is false.
    """

    chart: geo.MetricChart
    target: geo.TargetSpace
    fn: object
    jacobian: object = None
    admissible: object = None
    name: str = "map"

    def is_admissible(self, x):
        if self.admissible is None:
            return True
        return self.admissible(x)


@dataclass(frozen=True)
class ExponentField:
    """The variable exponent p(x) >= 2 with backend-provided gradient."""

    p_fn: object
    name: str = "p"
    p_min: float = EXPONENT_FLOOR


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    builder: object
    sample_box: object            # callable params -> list of (lo, hi)
    facts: dict = field(default_factory=dict)
    notes: str = ""


# ---------------------------------------------------------------------------
# pointwise operations
# ---------------------------------------------------------------------------


def map_value(phi, x):
    if len(x) != phi.chart.dim:
        raise DomainError(f"point of length {len(x)} for {phi.chart.dim}-dim map domain")
    return phi.fn(x)


def differential_at(phi, x, backend="forward"):
    """Matrix of partials: ambient rows, domain columns."""
    if phi.jacobian is not None:
        return phi.jacobian(x)
    be = bk.get_backend(backend)
    m = phi.chart.dim
    cols = [be.dvec(phi.fn, tuple(x), j) for j in range(m)]
    amb = phi.target.ambient
    return [[cols[j][g] for j in range(m)] for g in range(amb)]


def hs_norm_sq(phi, x, backend="forward"):
    """Squared Hilbert-Schmidt norm g^{ij} h(dphi_i, dphi_j)."""
    J = differential_at(phi, x, backend)
    m = phi.chart.dim
    cols = [[row[j] for row in J] for j in range(m)]
    if phi.target.kind == "space_form":
        y = map_value(phi, x)
        h = lambda u, v: geo.target_inner(phi.target, y, u, v)
    else:
        h = dot
    if phi.chart.kind == "euclidean":
        acc = h(cols[0], cols[0])
        for j in range(1, m):
            acc = acc + h(cols[j], cols[j])
        return acc
    ginv = geo.inverse_metric_at(phi.chart, x)
    acc = None
    for i in range(m):
        for j in range(m):
            term = ginv[i][j] * h(cols[i], cols[j])
            acc = term if acc is None else acc + term
    return acc


def exponent_at(p, x):
    val = p.p_fn(x)
    vp = np.asarray(bk.primal(val))
    if np.min(vp) < p.p_min - 1e-12:
        raise AdmissibilityError(
            f"exponent {p.name} fell below {p.p_min} (min {float(np.min(vp)):.6g})"
        )
    return val


def grad_exponent_at(p, chart, x, backend="forward"):
    """Gradient of p, index-raised: (grad p)^i = g^{ij} d_j p."""
    be = bk.get_backend(backend)
    m = chart.dim
    dp = [be.dscalar(lambda xs: exponent_at(p, xs), tuple(x), j) for j in range(m)]
    if chart.kind == "euclidean":
        return dp
    ginv = geo.inverse_metric_at(chart, x)
    return [dot(row, dp) for row in ginv]


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


def _norm_sq(x):
    return dot(list(x), list(x))


def _identity_entry(params):
    m = int(params.get("dim", 2))
    chart = geo.euclidean_chart(m)
    target = geo.euclidean_target(m)
    phi = SmoothMap(chart, target, lambda x: list(x),
                    jacobian=lambda x: [[1.0 if i == j else 0.0 for j in range(m)] for i in range(m)],
                    name=f"identity{m}")
    return phi, _default_exponent(params), {"dphi_norm": lambda x: math.sqrt(m)}


def _constant_entry(params):
    values = [float(v) for v in params.get("values", (0.0, 0.0))]
    m = int(params.get("dim", 2))
    chart = geo.euclidean_chart(m)
    if params.get("target", "euclidean") == "sphere":
        nrm = math.sqrt(sum(v * v for v in values))
        values = [v / nrm for v in values]
        target = geo.sphere_target(len(values) - 1)
    else:
        target = geo.euclidean_target(len(values))
    amb = len(values)
    phi = SmoothMap(chart, target, lambda x: list(values),
                    jacobian=lambda x: [[0.0] * m for _ in range(amb)],
                    name="constant")
    return phi, _default_exponent(params), {"dphi_norm": lambda x: 0.0}


def _affine_entry(params):
    A = [[float(v) for v in row] for row in params.get("matrix", [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])]
    b = [float(v) for v in params.get("offset", [0.0] * len(A))]
    n, m = len(A), len(A[0])
    chart = geo.euclidean_chart(m)
    target = geo.euclidean_target(n)
    phi = SmoothMap(chart, target,
                    lambda x: [dot(A[g], list(x)) + b[g] for g in range(n)],
                    jacobian=lambda x: [list(row) for row in A],
                    name="affine")
    hs = math.sqrt(sum(v * v for row in A for v in row))
    return phi, _default_exponent(params), {"dphi_norm": lambda x: hs}


def _complex_square_entry(params):
    chart = geo.euclidean_chart(2)
    target = geo.euclidean_target(2)

    def fn(x):
        return [x[0] * x[0] - x[1] * x[1], 2.0 * x[0] * x[1]]

    def jac(x):
        return [[2.0 * x[0], -2.0 * x[1]], [2.0 * x[1], 2.0 * x[0]]]

    phi = SmoothMap(chart, target, fn, jacobian=jac, name="complex_square")
    return phi, _default_exponent(params), {
        "dphi_norm": lambda x: math.sqrt(8.0 * (x[0] ** 2 + x[1] ** 2))
    }


def _inversion_entry(params):
    n = int(params.get("n", 3))
    c = float(params.get("c", 1.0))
    if n < 2:
        raise CatalogError("inversion needs dimension n >= 2")
    if c < 0:
        raise CatalogError("inversion exponent offset c must be >= 0")
    chart = geo.euclidean_chart(n)
    target = geo.euclidean_target(n)
    thresh = math.sqrt(n)

    def fn(x):
        r2 = _norm_sq(x)
        return [xi / r2 for xi in x]

    def jac(x):
        r2 = _norm_sq(x)
        r4 = r2 * r2
        return [[(1.0 if g == j else 0.0) / r2 - 2.0 * x[g] * x[j] / r4
                 for j in range(n)] for g in range(n)]

    def admissible(x):
        return np.asarray(bk.primal(_norm_sq(x))) > thresh

    def p_fn(x):
        return n + c / (2.0 * bk.log(_norm_sq(x)) - math.log(n))

    phi = SmoothMap(chart, target, fn, jacobian=jac, admissible=admissible, name=f"inversion(n={n},c={c:g})")
    p = _maybe_override_exponent(params, ExponentField(p_fn, name=f"inversion_log(n={n},c={c:g})"))
    facts = {
        "dphi_norm": lambda x: math.sqrt(n) / bk.primal(_norm_sq(x)),
        "p_tension": lambda x: [0.0] * n,
    }
    return phi, p, facts


def _radial_entry(params):
    n = int(params.get("n", 3))
    if n < 2:
        raise CatalogError("radial retraction needs ambient dimension n >= 2")
    chart = geo.euclidean_chart(n)
    target = geo.sphere_target(n - 1)

    def fn(x):
        r = bk.sqrt(_norm_sq(x))
        return [xi / r for xi in x]

    def jac(x):
        r2 = _norm_sq(x)
        r = bk.sqrt(r2)
        r3 = r * r2
        return [[(1.0 if g == j else 0.0) / r - x[g] * x[j] / r3
                 for j in range(n)] for g in range(n)]

    def admissible(x):
        return np.asarray(bk.primal(_norm_sq(x))) > 1e-12

    style = params.get("profile", "bounded")
    if style == "bounded":
        lo = float(params.get("base", 2.0))
        span = float(params.get("span", 1.0))
        if lo < EXPONENT_FLOOR or span < 0:
            raise CatalogError("radial exponent profile must satisfy base >= 2, span >= 0")

        def p_fn(x):
            s = _norm_sq(x)
            return lo + span * s / (1.0 + s)

        pname = f"radial_bounded({lo:g}+{span:g})"
    elif style == "constant":
        val = float(params.get("value", 2.0))
        if val < EXPONENT_FLOOR:
            raise CatalogError("constant exponent must be >= 2")

        def p_fn(x):
            return val

        pname = f"const({val:g})"
    else:
        raise CatalogError(f"unknown radial exponent profile {style!r}")

    phi = SmoothMap(chart, target, fn, jacobian=jac, admissible=admissible, name=f"radial(n={n})")
    p = _maybe_override_exponent(params, ExponentField(p_fn, name=pname))
    facts = {
        "dphi_norm": lambda x: math.sqrt(n - 1) / math.sqrt(bk.primal(_norm_sq(x))),
        "p_tension": lambda x: [0.0] * n,
    }
    return phi, p, facts


def _cylinder_entry(params):
    chart = geo.euclidean_chart(3)
    target = geo.euclidean_target(2)

    def rho2(x):
        return x[0] * x[0] + x[1] * x[1]

    def fn(x):
        return [bk.sqrt(rho2(x)), x[2]]

    def jac(x):
        r = bk.sqrt(rho2(x))
        return [[x[0] / r, x[1] / r, 0.0], [0.0, 0.0, 1.0]]

    def admissible(x):
        return np.asarray(bk.primal(rho2(x))) > 4.0

    def p_fn(x):
        return bk.log(rho2(x)) / math.log(2.0)

    phi = SmoothMap(chart, target, fn, jacobian=jac, admissible=admissible, name="cylinder")
    p = _maybe_override_exponent(params, ExponentField(p_fn, name="cylinder_log"))
    facts = {
        "dphi_norm": lambda x: math.sqrt(2.0),
        "p_tension": lambda x: [1.0, 0.0],
    }
    return phi, p, facts


def _wrap_entry(params):
    a = float(params.get("a", 1.0))
    b = float(params.get("b", 0.7))
    chart = geo.euclidean_chart(2)
    target = geo.sphere_target(2)

    def fn(x):
        return [bk.cos(a * x[0]) * bk.cos(b * x[1]),
                bk.sin(a * x[0]) * bk.cos(b * x[1]),
                bk.sin(b * x[1])]

    def jac(x):
        ca, sa = bk.cos(a * x[0]), bk.sin(a * x[0])
        cb, sb = bk.cos(b * x[1]), bk.sin(b * x[1])
        return [[-a * sa * cb, -b * ca * sb],
                [a * ca * cb, -b * sa * sb],
                [0.0, b * cb]]

    phi = SmoothMap(chart, target, fn, jacobian=jac, name=f"wrap(a={a:g},b={b:g})")
    return phi, _default_exponent(params), {
        "dphi_norm": lambda x: math.sqrt(a * a * math.cos(b * bk.primal(x[1])) ** 2 + b * b)
    }


def _ball_affine_entry(params):
    kappa = float(params.get("kappa", -1.0))
    A = [[float(v) for v in row] for row in params.get("matrix", [[0.2, 0.0], [0.05, 0.15]])]
    b = [float(v) for v in params.get("offset", [0.0] * len(A))]
    n, m = len(A), len(A[0])
    chart = geo.euclidean_chart(m)
    target = geo.space_form_target(n, kappa)

    def fn(x):
        return [dot(A[g], list(x)) + b[g] for g in range(n)]

    def admissible(x):
        return geo.codomain_admissible(target, fn(x))

    phi = SmoothMap(chart, target, fn, jacobian=lambda x: [list(row) for row in A],
                    admissible=admissible, name=f"ball_affine(k={kappa:g})")
    return phi, _default_exponent(params), {}


def _default_exponent(params):
    return _maybe_override_exponent(params, ExponentField(lambda x: 2.0, name="const(2)"))


def _maybe_override_exponent(params, default):
    spec = params.get("exponent")
    if spec is None:
        return default
    return build_exponent(spec.get("name", "constant"), spec)


def build_exponent(name, params):
    """Standalone exponent fields for scenario overrides."""
    if name == "constant":
        val = float(params.get("value", 2.0))
        if val < EXPONENT_FLOOR:
            raise CatalogError("constant exponent must be >= 2")
        return ExponentField(lambda x: val, name=f"const({val:g})")
    if name == "well":
        base = float(params.get("base", 2.5))
        amp = float(params.get("amp", 1.0))
        if base < EXPONENT_FLOOR or amp < 0:
            raise CatalogError("well exponent needs base >= 2 and amp >= 0")

        def p_fn(x):
            return base + amp / (1.0 + _norm_sq(x))

        return ExponentField(p_fn, name=f"well({base:g},{amp:g})")
    raise CatalogError(f"unknown exponent field {name!r}")


_SAMPLE_BOXES = {
    "identity": lambda pr: [(-1.0, 1.0)] * int(pr.get("dim", 2)),
    "constant": lambda pr: [(-1.0, 1.0)] * int(pr.get("dim", 2)),
    "affine": lambda pr: [(-1.0, 1.0)] * len(pr.get("matrix", [[1, 0], [0, 1], [1, 1]])[0]),
    "complex_square": lambda pr: [(0.5, 1.5), (0.5, 1.5)],
    "inversion": lambda pr: [(1.2, 2.2)] * int(pr.get("n", 3)),
    "radial": lambda pr: [(0.6, 1.8)] * int(pr.get("n", 3)),
    "cylinder": lambda pr: [(2.2, 3.4), (-0.6, 0.6), (0.0, 1.0)],
    "wrap": lambda pr: [(-1.0, 1.0), (-1.0, 1.0)],
    "ball_affine": lambda pr: [(-1.0, 1.0)] * len(pr.get("matrix", [[0.2, 0.0], [0.05, 0.15]])[0]),
}

_BUILDERS = {
    "identity": _identity_entry,
    "constant": _constant_entry,
    "affine": _affine_entry,
    "complex_square": _complex_square_entry,
    "inversion": _inversion_entry,
    "radial": _radial_entry,
    "cylinder": _cylinder_entry,
    "wrap": _wrap_entry,
    "ball_affine": _ball_affine_entry,
}


@dataclass(frozen=True)
class Scenario:
    """A built catalog entry: chart, map, exponent, and documented facts."""

    phi: SmoothMap
    exponent: ExponentField
    facts: dict
    sample_box: list
    name: str

    @property
    def chart(self):
        return self.phi.chart

    @property
    def target(self):
        return self.phi.target


def catalog_names():
    return sorted(_BUILDERS)


def sample_admissible(phi, box, rng, count, max_tries=1000):
    """Rejection-sample admissible points of phi inside the box."""
    m = len(box)
    pts = []
    tries = 0
    while len(pts) < count:
        if tries >= max_tries * count:
            raise DomainError(f"could not sample {count} admissible points for {phi.name}")
        x = tuple(float(rng.uniform(lo, hi)) for lo, hi in box)
        tries += 1
        if np.all(phi.is_admissible(x)):
            pts.append(x)
    return pts


def catalog_build(name, params=None, analytic=True, check=True, seed=0):
    """Build a named map together with its coupled exponent field.

    With ``check`` enabled, analytic Jacobian providers are compared
    against the forward backend at 50 sampled points before the scenario
    is released; sphere-valued maps are also spot-checked for unit norm.
    """
    params = dict(params or {})
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise CatalogError(f"unknown catalog map {name!r}; known: {', '.join(catalog_names())}") from None
    phi, p, facts = builder(params)
    box = _SAMPLE_BOXES[name](params)
    if not analytic:
        phi = SmoothMap(phi.chart, phi.target, phi.fn, jacobian=None,
                        admissible=phi.admissible, name=phi.name + "[no-jac]")
    if check:
        _registration_check(phi, box, seed)
    return Scenario(phi, p, facts, box, name)


def _registration_check(phi, box, seed, count=50, tol=1e-8):
    rng = np.random.default_rng(seed or 12345)
    pts = sample_admissible(phi, box, rng, count)
    be = bk.get_backend("forward")
    for x in pts:
        y = phi.fn(x)
        if phi.target.kind == "sphere":
            err = abs(dot(y, y) - 1.0)
            if err > 1e-10:
                raise CatalogError(f"{phi.name}: sphere value off the unit sphere by {err:.2e}")
        if phi.jacobian is None:
            continue
        J = phi.jacobian(x)
        amb, m = phi.target.ambient, phi.chart.dim
        cols = [be.dvec(phi.fn, x, j) for j in range(m)]
        scale_ref = 1.0 + max(abs(J[g][j]) for g in range(amb) for j in range(m))
        for g in range(amb):
            for j in range(m):
                if abs(J[g][j] - cols[j][g]) > tol * scale_ref:
                    raise CatalogError(
                        f"{phi.name}: analytic Jacobian disagrees with backend at {x}"
                    )
