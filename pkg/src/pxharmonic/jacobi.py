"""The generalized Jacobi operator, index form, and sphere trace identity.

For a section v along phi, the second-variation operator is

  J_p(v) = - |dphi|^{p-2} trace_g R^N(v, dphi) dphi
           - trace_g nabla^phi ( |dphi|^{p-2} nabla^phi v
                                 + (p-2) |dphi|^{p-4} <nabla^phi v, dphi> dphi )

where the two derivative terms are assembled into a single bundle-valued
1-form and differentiated in one backend pass.  The associated quadratic
form splits into three integrals (curvature, gradient, exponent terms)
whose sum equals the pairing integral of v against J_p(v) for compactly
supported sections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend as bk
from .backend import dot
from . import geometry as geo
from . import maps as mp
from . import quadrature as quad
from .connection import pullback_correct, trace_nabla
from .errors import DegeneratePointError, DomainError, NotPHarmonicError
from .geometry import EXPONENT_EPS, RANK_EPS


@dataclass(frozen=True)
class SectionAlongMap:
    """A field of target tangent vectors along a map (ambient coordinates
    for sphere targets)."""

    phi: object
    fn: object
    d_fn: object = None   # optional analytic derivative: x -> ambient rows x m cols
    name: str = "section"


@dataclass(frozen=True)
class IndexResult:
    value: float
    curvature_term: float
    gradient_term: float
    exponent_term: float


def _check_tangent_section(v, x, vals=None):
    if v.phi.target.kind != "sphere":
        return
    y = v.phi.fn(x)
    w = vals if vals is not None else v.fn(x)
    err = np.asarray(bk.primal(dot(w, y)))
    if np.max(np.abs(err)) > 1e-8:
        raise DomainError(f"section {v.name} not tangent along {v.phi.name} (err {np.max(np.abs(err)):.2e})")


def section_derivative_cols(v, x, backend="forward"):
    """Coordinate derivatives d_i v as a list over directions i."""
    if v.d_fn is not None:
        D = v.d_fn(x)
        m = v.phi.chart.dim
        return [[row[i] for row in D] for i in range(m)]
    be = bk.get_backend(backend)
    m = v.phi.chart.dim
    return [be.dvec(v.fn, tuple(x), i) for i in range(m)]


def pullback_derivative(v, x, i, backend="forward"):
    """Covariant derivative of the section in coordinate direction i."""
    phi = v.phi
    vals = v.fn(x)
    _check_tangent_section(v, x, vals)
    dv = section_derivative_cols(v, x, backend)[i]
    J = mp.differential_at(phi, x, backend)
    col = [row[i] for row in J]
    y = phi.fn(x) if phi.target.kind != "euclidean" else None
    return pullback_correct(phi.target, y, col, vals, dv)


def _nabla_all(v, x, backend):
    """All covariant derivatives nabla_i v plus shared intermediates."""
    phi = v.phi
    vals = v.fn(x)
    J = mp.differential_at(phi, x, backend)
    m = phi.chart.dim
    cols = [[row[i] for row in J] for i in range(m)]
    y = phi.fn(x) if phi.target.kind != "euclidean" else None
    dcols = section_derivative_cols(v, x, backend)
    nablas = [pullback_correct(phi.target, y, cols[i], vals, dcols[i]) for i in range(m)]
    return vals, cols, y, nablas


def _hfun(target, y):
    if target.kind == "space_form":
        return lambda u, w: geo.target_inner(target, y, u, w)
    return dot


def section_pairing(v, phi, p, x, backend="forward"):
    """<nabla^phi v, dphi> = g^{ij} h(nabla_i v, dphi_j).

    The exponent field is accepted for interface uniformity with the
    Jacobi operator; the pairing itself does not depend on it.
    """
    vals, cols, y, nablas = _nabla_all(v, x, backend)
    h = _hfun(phi.target, y)
    m = phi.chart.dim
    if phi.chart.kind == "euclidean":
        acc = h(nablas[0], cols[0])
        for i in range(1, m):
            acc = acc + h(nablas[i], cols[i])
        return acc
    ginv = geo.inverse_metric_at(phi.chart, x)
    acc = None
    for i in range(m):
        for j in range(m):
            t = ginv[i][j] * h(nablas[i], cols[j])
            acc = t if acc is None else acc + t
    return acc


def _degenerate_guard(phi, p, x, backend, floor):
    u2 = mp.hs_norm_sq(phi, x, backend)
    u2min = float(np.min(np.asarray(bk.primal(u2))))
    if u2min > RANK_EPS ** 2:
        return False
    u2max = float(np.max(np.asarray(bk.primal(u2))))
    if u2max > RANK_EPS ** 2:
        raise DegeneratePointError(f"{phi.name}: batch mixes degenerate and regular points")
    pmin = float(np.min(np.asarray(bk.primal(mp.exponent_at(p, x)))))
    if pmin <= floor + EXPONENT_EPS:
        raise DegeneratePointError(
            f"{phi.name}: rank-degenerate point with exponent {pmin:.6g} <= {floor} + eps"
        )
    return True


def jacobi_apply(phi, p, v, x, backend="forward"):
    """Apply the generalized Jacobi operator to the section v at x."""
    if _degenerate_guard(phi, p, x, backend, floor=4.0):
        return [0.0] * phi.target.ambient
    _check_tangent_section(v, x)

    m, amb = phi.chart.dim, phi.target.ambient
    target = phi.target

    def oneform(xs):
        vals, cols, y, nablas = _nabla_all(v, xs, backend)
        u2 = mp.hs_norm_sq(phi, xs, backend)
        pv = mp.exponent_at(p, xs)
        w2 = bk.powx(u2, (pv - 2.0) * 0.5)
        w4 = bk.powx(u2, (pv - 4.0) * 0.5)
        h = _hfun(target, y)
        if phi.chart.kind == "euclidean":
            pairing = h(nablas[0], cols[0])
            for i in range(1, m):
                pairing = pairing + h(nablas[i], cols[i])
        else:
            ginv = geo.inverse_metric_at(phi.chart, xs)
            pairing = None
            for i in range(m):
                for j in range(m):
                    t = ginv[i][j] * h(nablas[i], cols[j])
                    pairing = t if pairing is None else pairing + t
        coef = (pv - 2.0) * w4 * pairing
        out = []
        for j in range(m):
            for g in range(amb):
                out.append(w2 * nablas[j][g] + coef * cols[j][g])
        return out

    t23 = trace_nabla(oneform, phi, x, backend, order=2)

    # curvature term, assembled pointwise
    vals, cols, y, _ = _nabla_all(v, x, backend)
    u2 = mp.hs_norm_sq(phi, x, backend)
    pv = mp.exponent_at(p, x)
    w2 = bk.powx(u2, (pv - 2.0) * 0.5)
    if phi.chart.kind == "euclidean":
        rtr = [0.0] * amb
        for i in range(m):
            rv = geo.curvature_at(target, y, vals, cols[i], cols[i])
            rtr = [a + b for a, b in zip(rtr, rv)]
    else:
        ginv = geo.inverse_metric_at(phi.chart, x)
        rtr = [0.0] * amb
        for i in range(m):
            for j in range(m):
                rv = geo.curvature_at(target, y, vals, cols[i], cols[j])
                rtr = [a + ginv[i][j] * b for a, b in zip(rtr, rv)]

    return [-(w2 * r) - t for r, t in zip(rtr, t23)]


def index_summands_at(phi, p, v, x, backend="forward"):
    """Pointwise integrands of the three index-form summands."""
    if _degenerate_guard(phi, p, x, backend, floor=2.0):
        return 0.0, 0.0, 0.0
    vals, cols, y, nablas = _nabla_all(v, x, backend)
    h = _hfun(phi.target, y)
    m = phi.chart.dim
    u2 = mp.hs_norm_sq(phi, x, backend)
    pv = mp.exponent_at(p, x)
    w2 = bk.powx(u2, (pv - 2.0) * 0.5)
    w4 = bk.powx(u2, (pv - 4.0) * 0.5)

    euclid = phi.chart.kind == "euclidean"
    ginv = None if euclid else geo.inverse_metric_at(phi.chart, x)

    curv = None
    grad2 = None
    pairing = None
    for i in range(m):
        for j in range(m):
            if euclid and i != j:
                continue
            w = 1.0 if euclid else ginv[i][j]
            rv = geo.curvature_at(phi.target, y, vals, cols[i], cols[j])
            c = w * h(vals, rv)
            g2 = w * h(nablas[i], nablas[j])
            pr = w * h(nablas[i], cols[j])
            curv = c if curv is None else curv + c
            grad2 = g2 if grad2 is None else grad2 + g2
            pairing = pr if pairing is None else pairing + pr

    s_curv = -(w2 * curv)
    s_grad = w2 * grad2
    s_exp = (pv - 2.0) * w4 * pairing * pairing
    return s_curv, s_grad, s_exp


def index_integrand_at(phi, p, v, x, backend="forward"):
    s1, s2, s3 = index_summands_at(phi, p, v, x, backend)
    return s1 + s2 + s3


def index_form(phi, p, v, dom, backend="forward"):
    """The index quadratic form I(v, v) over the domain.

    Requires v to vanish on a two-cell collar of the box boundary, which
    is what makes the three-summand form equal the pairing against the
    Jacobi operator.
    """
    rule = quad.build_rule(dom)
    vvals = v.fn(rule.nodes)
    vmag = np.sqrt(np.asarray(bk.primal(dot(vvals, vvals)), dtype=float))
    collar = quad.collar_mask(dom, 2)
    vmag = np.broadcast_to(vmag, collar.shape)
    if np.any(collar) and np.max(vmag[collar]) > 1e-10 * (1.0 + np.max(vmag)):
        raise DomainError("index_form requires the section to vanish on a 2-cell boundary collar")
    s1, s2, s3 = index_summands_at(phi, p, v, rule.nodes, backend)
    i1 = quad.integrate_values(np.broadcast_to(np.asarray(bk.primal(s1), dtype=float), collar.shape), dom, phi.chart)
    i2 = quad.integrate_values(np.broadcast_to(np.asarray(bk.primal(s2), dtype=float), collar.shape), dom, phi.chart)
    i3 = quad.integrate_values(np.broadcast_to(np.asarray(bk.primal(s3), dtype=float), collar.shape), dom, phi.chart)
    return IndexResult(i1 + i2 + i3, i1, i2, i3)


def conformal_section(phi, alpha):
    """The conformal gradient field of <alpha, .> pulled back along phi."""
    if phi.target.kind != "sphere":
        raise DomainError("conformal sections require a sphere target")

    def fn(xs):
        return geo.conformal_field(list(alpha), phi.fn(xs))

    return SectionAlongMap(phi, fn, name=f"conformal({list(alpha)})")


def sphere_trace_identity(phi, p, x, backend="forward", tension_tol=1e-5):
    """Trace over ambient basis directions of <J_p(v_a), v_a> at x.

    For a sphere-valued map with vanishing variable-exponent tension the
    trace collapses to (p(x) - n) |dphi|^{p(x)} with n the sphere
    dimension.  Returns (lhs, rhs, residual).
    """
    if phi.target.kind != "sphere":
        raise DomainError("sphere_trace_identity requires a sphere target")
    from .tension import p_tension_trace_at

    u2 = mp.hs_norm_sq(phi, x, backend)
    degenerate = float(np.min(np.asarray(bk.primal(u2)))) <= RANK_EPS ** 2

    tau = p_tension_trace_at(phi, p, x, backend)
    taumag = np.sqrt(np.asarray(bk.primal(dot(tau, tau)), dtype=float))
    if np.max(taumag) > tension_tol:
        raise NotPHarmonicError(
            f"{phi.name}: |tau_p| = {float(np.max(taumag)):.3e} exceeds {tension_tol:g}"
        )

    n = phi.target.n
    amb = phi.target.ambient
    pv = mp.exponent_at(p, x)
    lhs = None
    for a in range(amb):
        alpha = [1.0 if g == a else 0.0 for g in range(amb)]
        va = conformal_section(phi, alpha)
        jv = jacobi_apply(phi, p, va, x, backend)
        term = dot(jv, va.fn(x))
        lhs = term if lhs is None else lhs + term
    if degenerate:
        rhs = 0.0
    else:
        rhs = (pv - float(n)) * bk.powx(u2, pv * 0.5)
    return lhs, rhs, lhs - rhs
