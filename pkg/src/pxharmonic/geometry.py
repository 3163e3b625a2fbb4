"""Coordinate charts, metrics, space-form targets, and sphere utilities.

A chart carries the domain metric g as a plain function of coordinates;
Christoffel symbols, inverse metric, and the volume density are derived
from it on demand.  Targets come in three flavors: flat coordinate space,
the unit sphere embedded in ambient coordinates, and a constant-curvature
chart (conformal ball model), which is enough to realize every curvature
sign the stability results distinguish.

All evaluation is polymorphic over floats, numpy arrays, and jets, so the
same formulas serve pointwise, vectorized, and differentiated call sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend as bk
from .backend import dot, matvec
from .errors import DegenerateMetricError, DomainError

# Tolerances pinned for the whole engine.
PD_PIVOT_REL = 1e-12
SPHERE_TANGENT_TOL = 1e-10
RANK_EPS = 1e-9          # |dphi| below this counts as rank-degenerate
EXPONENT_EPS = 1e-6      # margin on p for degenerate-limit rules


# ---------------------------------------------------------------------------
# charts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricChart:
    """A single coordinate chart of the source manifold.

    ``metric_fn`` maps a coordinate tuple to the matrix of components
    g_ij (nested lists).  ``kind`` is one of ``euclidean``, ``conformal``,
    ``general`` and unlocks closed-form shortcuts.
    """

    dim: int
    metric_fn: object
    kind: str = "general"
    name: str = "chart"


def _symmetrized(metric_fn):
    def fn(x):
        g = metric_fn(x)
        n = len(g)
        return [[(g[i][j] + g[j][i]) * 0.5 for j in range(n)] for i in range(n)]

    return fn


def metric_chart(dim, metric_fn, kind="general", name="chart"):
    """Build a chart; the metric is symmetrized up front."""
    if dim < 1:
        raise ValueError("chart dimension must be positive")
    return MetricChart(dim, _symmetrized(metric_fn), kind, name)


def euclidean_chart(dim):
    def metric_fn(x):
        return [[1.0 if i == j else 0.0 for j in range(dim)] for i in range(dim)]

    return MetricChart(dim, metric_fn, "euclidean", f"euclidean{dim}")


def conformal_chart(dim, factor_fn, name="conformal"):
    """Chart with metric exp(2 f(x)) * delta_ij."""

    def metric_fn(x):
        c = bk.exp(2.0 * factor_fn(x))
        return [[c if i == j else 0.0 for j in range(dim)] for i in range(dim)]

    return MetricChart(dim, metric_fn, "conformal", name)


def diagonal_chart(entries):
    """Constant diagonal metric diag(entries)."""
    dim = len(entries)

    def metric_fn(x):
        return [[entries[i] if i == j else 0.0 for j in range(dim)] for i in range(dim)]

    return MetricChart(dim, metric_fn, "general", "diagonal")


def _check_point(chart, x):
    if len(x) != chart.dim:
        raise DomainError(f"point of length {len(x)} in {chart.dim}-dimensional chart")


def metric_at(chart, x):
    _check_point(chart, x)
    return chart.metric_fn(x)


def _pd_or_raise(chart, gmat):
    pivots = [bk.primal(pv) for pv in bk.sym_pivots(gmat)]
    top = max(float(np.max(p)) if isinstance(p, np.ndarray) else p for p in pivots)
    low = min(float(np.min(p)) if isinstance(p, np.ndarray) else p for p in pivots)
    if not low > PD_PIVOT_REL * top:
        raise DegenerateMetricError(
            f"metric on {chart.name} not positive definite (pivots in [{low:g}, {top:g}])"
        )


def inverse_metric_at(chart, x):
    if chart.kind == "euclidean":
        return metric_at(chart, x)
    g = metric_at(chart, x)
    _pd_or_raise(chart, g)
    return bk.inv_small(g)


def volume_density(chart, x):
    """sqrt(det g) at x."""
    if chart.kind == "euclidean":
        _check_point(chart, x)
        return 1.0
    g = metric_at(chart, x)
    d = bk.det_small(g)
    dp = bk.primal(d)
    if not np.all(np.asarray(dp) > 0.0):
        raise DegenerateMetricError(f"metric determinant non-positive on {chart.name}")
    return bk.sqrt(d)


def christoffels_at(chart, x, backend="forward"):
    """Levi-Civita symbols Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)."""
    m = chart.dim
    _check_point(chart, x)
    if chart.kind == "euclidean":
        return [[[0.0] * m for _ in range(m)] for _ in range(m)]
    be = bk.get_backend(backend)

    def flat_metric(xs):
        g = chart.metric_fn(xs)
        return [g[i][j] for i in range(m) for j in range(m)]

    dg = []
    for k in range(m):
        flat = be.dvec(flat_metric, x, k)
        dg.append([[flat[i * m + j] for j in range(m)] for i in range(m)])

    ginv = inverse_metric_at(chart, x)
    gamma = [[[None] * m for _ in range(m)] for _ in range(m)]
    for k in range(m):
        for i in range(m):
            for j in range(m):
                acc = None
                for l in range(m):
                    term = ginv[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j])
                    acc = term if acc is None else acc + term
                gamma[k][i][j] = 0.5 * acc
    return gamma


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TargetSpace:
    """Codomain: flat space, embedded unit sphere, or a space-form chart."""

    kind: str            # "euclidean" | "sphere" | "space_form"
    n: int               # intrinsic dimension
    ambient: int         # number of coordinates a map value carries
    kappa: float = 0.0
    chart: MetricChart = None

    @property
    def name(self):
        if self.kind == "sphere":
            return f"S{self.n}"
        if self.kind == "space_form":
            return f"spaceform(k={self.kappa:g},dim={self.n})"
        return f"R{self.n}"


def euclidean_target(n):
    return TargetSpace("euclidean", n, n)


def sphere_target(n):
    """Unit sphere of dimension n embedded in (n+1)-space."""
    return TargetSpace("sphere", n, n + 1, kappa=1.0)


def space_form_target(dim, kappa):
    """Constant-curvature chart with metric 4 delta / (1 + kappa |y|^2)^2.

    For kappa < 0 this is the ball model (|y|^2 < -1/kappa); for kappa = 0
    it degenerates to 4*delta, a harmlessly rescaled flat metric.
    """

    def factor(y):
        return bk.log(2.0) - bk.log(1.0 + kappa * dot(list(y), list(y)))

    chart = conformal_chart(dim, factor, name=f"spaceform(k={kappa:g})")
    return TargetSpace("space_form", dim, dim, kappa=kappa, chart=chart)


def codomain_admissible(target, y):
    """True where the target chart is defined (always, except ball edge)."""
    if target.kind == "space_form":
        q = 1.0 + target.kappa * dot(list(y), list(y))
        return np.asarray(bk.primal(q)) > 1e-9
    return True


def target_inner(target, y, u, v):
    """Inner product h(u, v) at the target point y."""
    if target.kind == "space_form":
        g = metric_at(target.chart, y)
        return dot(u, matvec(g, v))
    return dot(u, v)


def _assert_tangent(target, y, vecs):
    for v in vecs:
        err = bk.primal(dot(v, y))
        if np.max(np.abs(np.asarray(err))) > SPHERE_TANGENT_TOL:
            raise DomainError("vector not tangent to the sphere within 1e-10")


def curvature_at(target, y, X, Y, Z):
    """Curvature operator R(X,Y)Z of the target at y.

    Space forms obey R(X,Y)Z = kappa * (<Y,Z> X - <X,Z> Y); the sign is
    pinned by the contraction identity
    sum_i <R(v, X_i) X_i, v> = (sum_i |X_i|^2) |v|^2 - sum_i <X_i, v>^2
    on the unit sphere, which the test suite checks directly.
    """
    if target.kind == "euclidean":
        return [0.0] * target.ambient
    if target.kind == "sphere":
        _assert_tangent(target, y, (X, Y, Z))
        kappa = 1.0
        yz = dot(Y, Z)
        xz = dot(X, Z)
    else:
        kappa = target.kappa
        yz = target_inner(target, y, Y, Z)
        xz = target_inner(target, y, X, Z)
    return [kappa * (yz * a - xz * b) for a, b in zip(X, Y)]


def sphere_project(y, w):
    """Tangential projection w - <w,y> y at a unit vector y."""
    c = dot(w, y)
    return [wi - c * yi for wi, yi in zip(w, y)]


def conformal_field(alpha, y):
    """Tangential gradient of y -> <alpha, y> on the unit sphere.

    Returns alpha - <alpha, y> y; these fields satisfy nabla_X v = -<alpha,y> X
    and are the canonical test sections for sphere-target stability.
    """
    unit_err = bk.primal(dot(y, y)) - 1.0
    if np.max(np.abs(np.asarray(unit_err))) > SPHERE_TANGENT_TOL:
        raise DomainError("conformal_field needs a point on the unit sphere")
    c = dot(alpha, y)
    return [a - c * yi for a, yi in zip(alpha, y)]


def sphere_exp(y, v, t=1.0):
    """Geodesic exponential on the unit sphere, renormalized.

    Computed via the entire functions cos(sqrt(s)) and sin(sqrt(s))/sqrt(s)
    of s = t^2 |v|^2, so it stays smooth (and differentiable by jets)
    through |v| = 0.
    """
    w = [t * vi for vi in v]
    s = dot(w, w)
    c = bk.cos_sqrt(s)
    sc = bk.sinc_sqrt(s)
    r = [c * yi + sc * wi for yi, wi in zip(y, w)]
    nrm = bk.sqrt(dot(r, r))
    return [ri / nrm for ri in r]
