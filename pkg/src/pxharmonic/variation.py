"""Deformation families and finite-difference checks of the variation
identities.

The energy derivative along a deformation is computed by Richardson-
extrapolated central differences in the deformation parameters and
compared against the assembled integral of the matching tension / Jacobi
expression.  Both sides share the same quadrature grid, so the reported
mismatch isolates the variational identity itself.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import backend as bk
from .backend import dot
from . import geometry as geo
from . import maps as mp
from . import quadrature as quad
from .errors import DomainError, NotPHarmonicError
from .jacobi import jacobi_apply
from .tension import bitension_at, p_tension_trace_at

T_MAX = 1e-1


@dataclass(frozen=True)
class DeformationFamily:
    """A one- or two-parameter deformation of a base map.

    ``additive`` shifts values in target coordinates (sphere targets are
    reinterpreted as maps into ambient space); ``geodesic`` walks along
    great circles, staying on the sphere.  In both rules the t-derivative
    at zero is exactly the direction field v.
    """

    phi: object
    v: object
    w: object = None
    rule: str = "additive"

    def __post_init__(self):
        if self.rule not in ("additive", "geodesic"):
            raise DomainError(f"unknown deformation rule {self.rule!r}")
        if self.rule == "geodesic" and self.phi.target.kind != "sphere":
            raise DomainError("geodesic deformations require a sphere target")


def deform(family, t, s=0.0):
    """The deformed map at parameters (t, s)."""
    if abs(t) > T_MAX or abs(s) > T_MAX:
        raise DomainError(f"deformation parameters |t|,|s| must stay within {T_MAX}")
    phi = family.phi
    v = family.v
    w = family.w

    def direction(x):
        d = [t * c for c in v.fn(x)]
        if w is not None and s != 0.0:
            d = [a + s * c for a, c in zip(d, w.fn(x))]
        return d

    if family.rule == "geodesic":
        target = phi.target

        def fn(x):
            return geo.sphere_exp(phi.fn(x), direction(x), 1.0)

        return mp.SmoothMap(phi.chart, target, fn, admissible=phi.admissible,
                            name=f"{phi.name}@geo(t={t:g},s={s:g})")

    if phi.target.kind == "sphere":
        target = geo.euclidean_target(phi.target.ambient)
    else:
        target = phi.target

    def fn(x):
        base = phi.fn(x)
        d = direction(x)
        return [b + c for b, c in zip(base, d)]

    if target.kind == "space_form":
        def admissible(x):
            base_ok = phi.is_admissible(x)
            return np.logical_and(base_ok, geo.codomain_admissible(target, fn(x)))
    else:
        admissible = phi.admissible

    return mp.SmoothMap(phi.chart, target, fn, admissible=admissible,
                        name=f"{phi.name}@add(t={t:g},s={s:g})")


def _require_compact_support(v, dom):
    rule = quad.build_rule(dom)
    vals = v.fn(rule.nodes)
    mag = np.sqrt(np.asarray(bk.primal(dot(vals, vals)), dtype=float))
    collar = quad.collar_mask(dom, 2)
    mag = np.broadcast_to(mag, collar.shape)
    if np.any(collar) and np.max(mag[collar]) > 1e-10 * (1.0 + float(np.max(mag))):
        raise DomainError("variation field must vanish on a 2-cell boundary collar")


def _pair_with_tension(phi, p, v, dom, field_fn, backend):
    rule = quad.build_rule(dom)
    tau = field_fn(rule.nodes)
    vv = v.fn(rule.nodes)
    if phi.target.kind == "space_form":
        y = phi.fn(rule.nodes)
        vals = geo.target_inner(phi.target, y, vv, tau)
    else:
        vals = dot(vv, tau)
    vals = np.broadcast_to(np.asarray(bk.primal(vals), dtype=float), rule.weights.shape)
    return quad.integrate_values(vals, dom, phi.chart)


def _richardson_first(Efn, delta):
    def central(d):
        return (Efn(d) - Efn(-d)) / (2.0 * d)

    coarse = central(delta)
    fine = central(delta / 2.0)
    return (4.0 * fine - coarse) / 3.0


def first_variation_check(phi, p, v, dom, rule="additive", delta=1e-3, backend="forward"):
    """Energy derivative along v versus -int h(v, tau_p); returns
    (lhs, rhs, rel_error)."""
    _require_compact_support(v, dom)
    family = DeformationFamily(phi, v, rule=rule)

    def energy_at(t):
        return quad.energy_p(deform(family, t), p, dom, backend)

    lhs = _richardson_first(energy_at, delta)
    rhs = -_pair_with_tension(phi, p, v, dom,
                              lambda xs: p_tension_trace_at(phi, p, xs, backend), backend)
    rel = abs(lhs - rhs) / (1.0 + abs(rhs))
    return lhs, rhs, rel


def sup_tension_norm(phi, p, dom, backend="forward"):
    rule = quad.build_rule(dom)
    tau = p_tension_trace_at(phi, p, rule.nodes, backend)
    if phi.target.kind == "space_form":
        y = phi.fn(rule.nodes)
        n2 = geo.target_inner(phi.target, y, tau, tau)
    else:
        n2 = dot(tau, tau)
    return float(np.sqrt(np.max(np.asarray(bk.primal(n2), dtype=float))))


def second_variation_check(phi, p, v, w, dom, rule="additive", delta=3e-3, backend="forward"):
    """Mixed energy derivative along (v, w) versus int h(J_p v, w).

    The identity is asserted only at critical maps, so the hypothesis
    |tau_p| ~ 0 on the domain is enforced, not assumed.
    """
    sup_tau = sup_tension_norm(phi, p, dom, backend)
    if sup_tau > 1e-5:
        raise NotPHarmonicError(
            f"second variation requires |tau_p| <= 1e-5 on D (got {sup_tau:.3e})"
        )
    _require_compact_support(v, dom)
    _require_compact_support(w, dom)
    family = DeformationFamily(phi, v, w, rule=rule)

    def energy_at(t, s):
        return quad.energy_p(deform(family, t, s), p, dom, backend)

    def mixed(d):
        return (energy_at(d, d) - energy_at(d, -d) - energy_at(-d, d) + energy_at(-d, -d)) / (4.0 * d * d)

    coarse = mixed(delta)
    fine = mixed(delta / 2.0)
    lhs = (4.0 * fine - coarse) / 3.0

    rule_q = quad.build_rule(dom)
    jv = jacobi_apply(phi, p, v, rule_q.nodes, backend)
    wv = w.fn(rule_q.nodes)
    if phi.target.kind == "space_form":
        y = phi.fn(rule_q.nodes)
        vals = geo.target_inner(phi.target, y, jv, wv)
    else:
        vals = dot(jv, wv)
    vals = np.broadcast_to(np.asarray(bk.primal(vals), dtype=float), rule_q.weights.shape)
    rhs = quad.integrate_values(vals, dom, phi.chart)
    rel = abs(lhs - rhs) / (1.0 + abs(rhs))
    return lhs, rhs, rel


def first_variation_bienergy_check(phi, p, v, dom, rule="additive", delta=1e-3, backend="forward"):
    """Bienergy derivative along v versus -int h(v, tau_{2,p})."""
    _require_compact_support(v, dom)
    if phi.jacobian is None:
        warnings.warn(
            f"{phi.name}: no analytic Jacobian; bienergy variation runs at wide tolerance",
            stacklevel=2,
        )
    family = DeformationFamily(phi, v, rule=rule)

    def bienergy_at(t):
        return quad.bienergy_p(deform(family, t), p, dom, backend)

    lhs = _richardson_first(bienergy_at, delta)
    rhs = -_pair_with_tension(phi, p, v, dom,
                              lambda xs: bitension_at(phi, p, xs, backend), backend)
    rel = abs(lhs - rhs) / (1.0 + abs(rhs))
    return lhs, rhs, rel
