"""Pullback covariant derivatives of sections and 1-forms along a map.

For a section w of the pulled-back target bundle, the covariant
derivative in coordinate direction i is

  flat target:    d_i w
  sphere target:  d_i w + <w, dphi_i> phi      (tangential projection)
  chart target:   (d_i w)^g + Gamma^g_{ab}(phi) dphi_i^a w^b

and the g-trace of the covariant derivative of a bundle-valued 1-form S is
  g^{ij} [ nabla_i (S_j) - Gamma^k_{ij} S_k ].
These two helpers carry all the connection bookkeeping used by the
tension and Jacobi operators.
"""

from __future__ import annotations

from . import backend as bk
from .backend import dot
from . import geometry as geo
from . import maps as mp


def pullback_correct(target, y, dphi_i, w, dw_i):
    """Turn a coordinate derivative d_i w into the covariant one."""
    if target.kind == "euclidean":
        return dw_i
    if target.kind == "sphere":
        c = dot(w, dphi_i)
        return [d + c * yi for d, yi in zip(dw_i, y)]
    gamma = geo.christoffels_at(target.chart, y)
    amb = target.ambient
    out = []
    for g in range(amb):
        acc = dw_i[g]
        for a in range(amb):
            for b in range(amb):
                acc = acc + gamma[g][a][b] * dphi_i[a] * w[b]
        out.append(acc)
    return out


def trace_nabla(oneform_fn, phi, x, backend="forward", order=2):
    """g-trace of the pullback covariant derivative of a 1-form.

    ``oneform_fn(xs)`` returns the flat list [S_1 | ... | S_m] of the m
    bundle-valued slots, each of ``ambient`` components.  Differentiation
    of the whole assembled 1-form happens in a single backend pass per
    direction.
    """
    be = bk.get_backend(backend)
    chart = phi.chart
    target = phi.target
    m = chart.dim
    amb = target.ambient

    svals_flat = oneform_fn(x)
    svals = [[svals_flat[j * amb + g] for g in range(amb)] for j in range(m)]

    J = mp.differential_at(phi, x, backend)
    cols = [[row[j] for row in J] for j in range(m)]
    y = phi.fn(x) if target.kind != "euclidean" else None

    nabla = []
    for i in range(m):
        ds_flat = be.dvec(oneform_fn, tuple(x), i, order=order)
        row = []
        for j in range(m):
            dw = [ds_flat[j * amb + g] for g in range(amb)]
            row.append(pullback_correct(target, y, cols[i], svals[j], dw))
        nabla.append(row)

    euclid = chart.kind == "euclidean"
    ginv = None if euclid else geo.inverse_metric_at(chart, x)
    gamma = None if euclid else geo.christoffels_at(chart, x, backend)

    acc = None
    for i in range(m):
        for j in range(m):
            if euclid:
                if i != j:
                    continue
                term = nabla[i][j]
            else:
                term = [ginv[i][j] * c for c in nabla[i][j]]
                for k in range(m):
                    term = [t - ginv[i][j] * gamma[k][i][j] * s for t, s in zip(term, svals[k])]
            acc = term if acc is None else [a + t for a, t in zip(acc, term)]
    return acc
