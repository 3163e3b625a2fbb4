"""Compact box domains, composite midpoint quadrature, and the energies.

Integration uses the composite midpoint rule on a tensor grid of cell
centers, weighted by the Riemannian volume density.  Cells whose center
violates the domain's radial predicate are dropped; every retained node
therefore satisfies the admissibility predicate, and the weight sum is
exactly the Lebesgue volume of the retained cells.  The final reduction
is a fixed-order pairwise sum over the node index order, so results are
bit-identical regardless of how integrand values were produced.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import backend as bk
from . import geometry as geo
from . import maps as mp
from .errors import DomainError, EmptyDomainError


@dataclass(frozen=True)
class RadialPredicate:
    """Keep nodes with r_low < r < r_high; ``cylinder`` measures r in the
    first two coordinates only."""

    kind: str  # "ball" | "cylinder"
    r_low: float = 0.0
    r_high: float = float("inf")

    def mask(self, nodes):
        if self.kind == "ball":
            r2 = sum(c * c for c in nodes)
        elif self.kind == "cylinder":
            r2 = nodes[0] * nodes[0] + nodes[1] * nodes[1]
        else:
            raise DomainError(f"unknown radial predicate kind {self.kind!r}")
        return (r2 > self.r_low ** 2) & (r2 < self.r_high ** 2)


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box with per-axis resolution and optional predicate."""

    box: tuple       # ((a1,b1), ..., (am,bm))
    resolution: tuple
    predicate: RadialPredicate = None

    def __post_init__(self):
        for (a, b) in self.box:
            if not b > a:
                raise DomainError(f"degenerate box interval [{a}, {b}]")
        if len(self.resolution) != len(self.box):
            raise DomainError("resolution must list one entry per axis")

    @property
    def dim(self):
        return len(self.box)

    def spacing(self):
        return tuple((b - a) / n for (a, b), n in zip(self.box, self.resolution))

    def refined(self, factor=2):
        return Domain(self.box, tuple(n * factor for n in self.resolution), self.predicate)


def domain(box, resolution, predicate=None):
    box = tuple((float(a), float(b)) for a, b in box)
    if isinstance(resolution, int):
        resolution = (resolution,) * len(box)
    return Domain(box, tuple(int(n) for n in resolution), predicate)


@dataclass(frozen=True)
class QuadratureRule:
    kind: str
    nodes: tuple     # tuple of 1-d arrays, one per axis, flattened over cells
    weights: object  # 1-d array of positive cell volumes


@lru_cache(maxsize=128)
def build_rule(dom: Domain) -> QuadratureRule:
    axes = [a + (np.arange(n) + 0.5) * (b - a) / n for (a, b), n in zip(dom.box, dom.resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = tuple(m.ravel() for m in mesh)
    cell = 1.0
    for (a, b), n in zip(dom.box, dom.resolution):
        cell *= (b - a) / n
    if dom.predicate is not None:
        keep = dom.predicate.mask(nodes)
        nodes = tuple(c[keep] for c in nodes)
    if nodes[0].size == 0:
        raise EmptyDomainError("no quadrature cells retained in domain")
    weights = np.full(nodes[0].size, cell)
    return QuadratureRule("midpoint", nodes, weights)


def integrate_values(values, dom, chart):
    """Reduce precomputed node values against weights and volume density."""
    rule = build_rule(dom)
    dens = geo.volume_density(chart, rule.nodes)
    contrib = np.broadcast_to(np.asarray(values, dtype=float) * np.asarray(dens, dtype=float)
                              * rule.weights, rule.weights.shape)
    return bk.pairwise_sum(contrib)


def integrate(f, dom, chart):
    """Integral of f over the domain against the Riemannian volume element."""
    rule = build_rule(dom)
    return integrate_values(f(rule.nodes), dom, chart)


# ---------------------------------------------------------------------------
# compactly supported bump profiles
# ---------------------------------------------------------------------------


def smoothstep(t):
    """C^4 polynomial step: 0 for t <= 0, 1 for t >= 1."""
    tp = bk.primal(t)
    poly = t * t * t * t * t * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + t * 70.0))))
    out = bk.where_mask(tp >= 1.0, 1.0, poly)
    return bk.where_mask(tp <= 0.0, 0.0, out)


def bump_factor(dom, margin_cells=2, rise_fraction=0.25):
    """Scalar profile that is exactly 0 within ``margin_cells`` grid cells
    of the box boundary and exactly 1 on the inner plateau.

    The shoulder rises over a fixed fraction of each axis extent (not a
    fixed number of cells), so integrands built from it stay resolution
    independent and keep the midpoint rule at second order.
    """
    spans = []
    for (a, b), h in zip(dom.box, dom.spacing()):
        margin = margin_cells * h
        extent = b - a
        rise = rise_fraction * extent
        if 2.0 * (margin + rise) > extent:
            rise = max(0.5 * extent - margin, 0.25 * h)
        spans.append((a + margin, b - margin, rise))

    def bump(x):
        acc = None
        for xi, (lo, hi, rise) in zip(x, spans):
            q = smoothstep((xi - lo) / rise) * smoothstep((hi - xi) / rise)
            acc = q if acc is None else acc * q
        return acc

    return bump


def collar_mask(dom, width_cells=2):
    """Boolean mask of retained nodes within ``width_cells`` of the box edge."""
    rule = build_rule(dom)
    mask = np.zeros(rule.nodes[0].shape, dtype=bool)
    for c, (a, b), h in zip(rule.nodes, dom.box, dom.spacing()):
        w = width_cells * h
        mask |= (c < a + w) | (c > b - w)
    return mask


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


def _check_map_domain(phi, dom):
    rule = build_rule(dom)
    ok = phi.is_admissible(rule.nodes)
    if not np.all(ok):
        raise DomainError(f"domain contains nodes outside the admissible region of {phi.name}")
    return rule


def energy_p(phi, p, dom, backend="forward"):
    """The variable-exponent energy: integral of |dphi|^p(x) / p(x)."""
    rule = _check_map_domain(phi, dom)
    u2 = mp.hs_norm_sq(phi, rule.nodes, backend)
    pv = mp.exponent_at(p, rule.nodes)
    vals = np.power(np.asarray(u2, dtype=float), np.asarray(pv, dtype=float) / 2.0) / pv
    return integrate_values(vals, dom, phi.chart)


def bienergy_p(phi, p, dom, backend="forward"):
    """Half the squared tension norm, integrated: (1/2) int |tau_p|^2."""
    from .tension import p_tension_trace_at

    rule = _check_map_domain(phi, dom)
    tau = p_tension_trace_at(phi, p, rule.nodes, backend)
    if phi.target.kind == "space_form":
        y = phi.fn(rule.nodes)
        nrm2 = geo.target_inner(phi.target, y, tau, tau)
    else:
        nrm2 = bk.dot(tau, tau)
    return integrate_values(0.5 * np.asarray(nrm2, dtype=float), dom, phi.chart)
