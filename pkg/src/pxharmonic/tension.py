"""Tension fields: the trace-Laplacian tau, the variable-exponent tension
tau_p in two independently computed forms, and the bitension field.

The two forms of tau_p,

  trace form:    trace_g nabla ( |dphi|^{p-2} dphi )
  expanded form: |dphi|^{p-2} tau(phi) + dphi( grad |dphi|^{p-2} )

agree identically; keeping both implementations is the engine's strongest
internal consistency check on connection bookkeeping.

Rank-degenerate points (|dphi| <= 1e-9) follow the analytic-limit rule:
weighted quantities vanish when the exponent keeps the weight bounded
(p > 2 for tension, p > 4 for the Jacobi operator), otherwise the point
is an error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend as bk
from .backend import dot
from . import geometry as geo
from . import maps as mp
from .connection import pullback_correct, trace_nabla
from .errors import DegeneratePointError
from .geometry import EXPONENT_EPS, RANK_EPS


def _u2_primal_min(u2):
    return float(np.min(np.asarray(bk.primal(u2))))


def _p_primal_min(pv):
    return float(np.min(np.asarray(bk.primal(pv))))


def _degenerate_tension_guard(phi, p, x, backend, floor):
    """Handle |dphi| ~ 0.  Returns the zero vector to use, or None if regular."""
    u2 = mp.hs_norm_sq(phi, x, backend)
    u2min = _u2_primal_min(u2)
    if u2min > RANK_EPS ** 2:
        return None
    u2max = float(np.max(np.asarray(bk.primal(u2))))
    if u2max > RANK_EPS ** 2:
        raise DegeneratePointError(
            f"{phi.name}: batch mixes rank-degenerate and regular points"
        )
    pmin = _p_primal_min(mp.exponent_at(p, x))
    if pmin <= floor + EXPONENT_EPS:
        raise DegeneratePointError(
            f"{phi.name}: rank-degenerate point with exponent {pmin:.6g} <= {floor} + eps"
        )
    return [0.0] * phi.target.ambient


def tension_at(phi, x, backend="forward"):
    """Tension field tau(phi) = trace_g (second fundamental form of phi)."""
    be = bk.get_backend(backend)
    chart = phi.chart
    target = phi.target
    m, amb = chart.dim, target.ambient

    def flat_jac(xs):
        J = mp.differential_at(phi, xs, backend)
        return [J[g][j] for j in range(m) for g in range(amb)]

    J = mp.differential_at(phi, x, backend)
    cols = [[row[j] for row in J] for j in range(m)]
    dd = []  # dd[i][j] = d_i d_j phi (ambient components)
    for i in range(m):
        flat = be.dvec(flat_jac, tuple(x), i, order=2)
        dd.append([[flat[j * amb + g] for g in range(amb)] for j in range(m)])

    euclid = chart.kind == "euclidean"
    ginv = None if euclid else geo.inverse_metric_at(chart, x)
    gamma = None if euclid else geo.christoffels_at(chart, x, backend)

    tau = [0.0] * amb
    for i in range(m):
        for j in range(m):
            if euclid:
                if i != j:
                    continue
                w = 1.0
            else:
                w = ginv[i][j]
            term = dd[i][j]
            if not euclid:
                for k in range(m):
                    term = [t - gamma[k][i][j] * c for t, c in zip(term, cols[k])]
            tau = [a + w * t for a, t in zip(tau, term)]

    if target.kind == "sphere":
        y = phi.fn(x)
        tau = geo.sphere_project(y, tau)
    elif target.kind == "space_form":
        y = phi.fn(x)
        gam = geo.christoffels_at(target.chart, y)
        corr = [0.0] * amb
        for i in range(m):
            for j in range(m):
                w = 1.0 if euclid and i == j else (0.0 if euclid else ginv[i][j])
                if euclid and i != j:
                    continue
                for g in range(amb):
                    acc = 0.0
                    for a in range(amb):
                        for b in range(amb):
                            acc = acc + gam[g][a][b] * cols[i][a] * cols[j][b]
                    corr[g] = corr[g] + w * acc
        tau = [t + c for t, c in zip(tau, corr)]
    return tau


def _weight_fn(phi, p, backend, shift=2.0):
    """x -> |dphi(x)|^{p(x)-shift} as a backend-evaluable scalar function."""

    def w(xs):
        u2 = mp.hs_norm_sq(phi, xs, backend)
        pv = mp.exponent_at(p, xs)
        return bk.powx(u2, (pv - shift) * 0.5)

    return w


def grad_hs_power_at(phi, p, x, backend="forward"):
    """grad of |dphi|^{p(x)-2}, index-raised to a domain tangent vector."""
    zero = _degenerate_tension_guard(phi, p, x, backend, floor=2.0)
    if zero is not None:
        return [0.0] * phi.chart.dim
    be = bk.get_backend(backend)
    chart = phi.chart
    m = chart.dim
    w = _weight_fn(phi, p, backend)
    dw = [be.dscalar(w, tuple(x), j, order=2) for j in range(m)]
    if chart.kind == "euclidean":
        return dw
    ginv = geo.inverse_metric_at(chart, x)
    return [dot(row, dw) for row in ginv]


def p_tension_trace_at(phi, p, x, backend="forward"):
    """tau_p as the g-trace of nabla(|dphi|^{p-2} dphi), one backend pass."""
    zero = _degenerate_tension_guard(phi, p, x, backend, floor=2.0)
    if zero is not None:
        return zero
    m, amb = phi.chart.dim, phi.target.ambient
    w = _weight_fn(phi, p, backend)

    def oneform(xs):
        J = mp.differential_at(phi, xs, backend)
        c = w(xs)
        return [c * J[g][j] for j in range(m) for g in range(amb)]

    return trace_nabla(oneform, phi, x, backend, order=2)


def p_tension_expanded_at(phi, p, x, backend="forward"):
    """tau_p assembled as |dphi|^{p-2} tau + dphi(grad |dphi|^{p-2})."""
    zero = _degenerate_tension_guard(phi, p, x, backend, floor=2.0)
    if zero is not None:
        return zero
    tau = tension_at(phi, x, backend)
    gw = grad_hs_power_at(phi, p, x, backend)
    J = mp.differential_at(phi, x, backend)
    m, amb = phi.chart.dim, phi.target.ambient
    wval = _weight_fn(phi, p, backend)(x)
    out = []
    for g in range(amb):
        acc = wval * tau[g]
        for k in range(m):
            acc = acc + J[g][k] * gw[k]
        out.append(acc)
    return out


def cross_form_residual(phi, p, x, backend="forward"):
    """Norm of (trace form - expanded form); the primary regression guard."""
    a = p_tension_trace_at(phi, p, x, backend)
    b = p_tension_expanded_at(phi, p, x, backend)
    d = [ai - bi for ai, bi in zip(a, b)]
    if phi.target.kind == "space_form":
        y = phi.fn(x)
        n2 = geo.target_inner(phi.target, y, d, d)
    else:
        n2 = dot(d, d)
    return bk.sqrt(n2)


def bitension_at(phi, p, x, backend="forward"):
    """Bitension field: the Jacobi operator applied to the section tau_p."""
    from .jacobi import SectionAlongMap, jacobi_apply

    u2 = mp.hs_norm_sq(phi, x, backend)
    if _u2_primal_min(u2) <= RANK_EPS ** 2:
        u2max = float(np.max(np.asarray(bk.primal(u2))))
        if u2max > RANK_EPS ** 2:
            raise DegeneratePointError(f"{phi.name}: batch mixes degenerate and regular points")
        pmin = _p_primal_min(mp.exponent_at(p, x))
        if pmin <= 2.0 + EXPONENT_EPS:
            raise DegeneratePointError(
                f"{phi.name}: rank-degenerate point with exponent {pmin:.6g} <= 2 + eps"
            )
        # tau_p vanishes identically near a rank-degenerate region and every
        # term of the bitension carries a positive power of |dphi|.
        return [0.0] * phi.target.ambient

    section = SectionAlongMap(phi, lambda xs: p_tension_trace_at(phi, p, xs, backend),
                              name="tension_section")
    return jacobi_apply(phi, p, section, x, backend)


@dataclass(frozen=True)
class TensionReport:
    """Pointwise tension summary used by the CLI csv output."""

    point: tuple
    tau: tuple
    tau_p_trace: tuple
    tau_p_expanded: tuple
    residual: float
    degenerate: bool


def tension_report(phi, p, x, backend="forward"):
    u2 = mp.hs_norm_sq(phi, x, backend)
    degenerate = _u2_primal_min(u2) <= RANK_EPS ** 2
    tau = tension_at(phi, x, backend)
    tr = p_tension_trace_at(phi, p, x, backend)
    ex = p_tension_expanded_at(phi, p, x, backend)
    res = bk.sqrt(dot([a - b for a, b in zip(tr, ex)], [a - b for a, b in zip(tr, ex)]))
    return TensionReport(tuple(x), tuple(tau), tuple(tr), tuple(ex), float(res), bool(degenerate))
