"""Gradient descent toward critical maps on vertex-centered grids.

The descent direction is the discrete tension field (the L2 gradient of
the energy), assembled from order-2 central stencils with the same
algebra as the pointwise expanded form.  Steps are accepted by an
Armijo backtracking line search against a cell-based discrete energy, so
accepted energies decrease strictly; Dirichlet boundary nodes are never
touched.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import backend as bk
from . import geometry as geo
from . import maps as mp
from .errors import DomainError, StagnationError
from .geometry import RANK_EPS


@dataclass
class GridMap:
    """Map values on a vertex lattice over a box, with a Dirichlet mask."""

    axes: tuple                  # per-axis 1-d arrays of node coordinates
    values: np.ndarray           # shape grid_shape + (ambient,)
    fixed: np.ndarray            # True at Dirichlet (frozen) nodes
    active: np.ndarray           # True at nodes inside the domain predicate
    chart: geo.MetricChart
    target: geo.TargetSpace

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self):
        return tuple(float(a[1] - a[0]) for a in self.axes)

    def interior(self):
        return self.active & ~self.fixed

    def node_coords(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return tuple(mesh)

    def copy(self):
        return GridMap(self.axes, self.values.copy(), self.fixed, self.active,
                       self.chart, self.target)


@dataclass
class FlowStep:
    iteration: int
    energy: float
    residual: float
    step: float
    accepted: bool


@dataclass
class FlowTrace:
    steps: list = field(default_factory=list)
    iterations: int = 0
    final_residual: float = float("nan")
    converged: bool = False


@dataclass(frozen=True)
class FlowConfig:
    tol: float = 1e-6
    max_iters: int = 5000
    eta0: float = None
    armijo: float = 1e-4
    max_halvings: int = 40
    double_after: int = 3


def grid_map(dom, chart, target, init_fn, boundary_fn=None, predicate=None):
    """Sample a vertex lattice over the domain box.

    ``predicate`` (or the domain's own radial predicate) selects active
    nodes; active nodes adjacent to inactive ones or on the box edge are
    frozen as Dirichlet data, taken from ``boundary_fn`` (default: the
    initializer).
    """
    axes = tuple(np.linspace(a, b, n + 1) for (a, b), n in zip(dom.box, dom.resolution))
    for a in axes:
        if a.size < 5:
            raise DomainError("flow grids need at least 5 nodes per axis")
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = tuple(mesh)
    shape = mesh[0].shape

    pred = predicate if predicate is not None else dom.predicate
    if pred is not None:
        active = np.asarray(pred.mask(coords), dtype=bool)
    else:
        active = np.ones(shape, dtype=bool)

    fixed = np.zeros(shape, dtype=bool)
    m = len(axes)
    for ax in range(m):
        sl_lo = [slice(None)] * m
        sl_hi = [slice(None)] * m
        sl_lo[ax] = 0
        sl_hi[ax] = -1
        fixed[tuple(sl_lo)] = True
        fixed[tuple(sl_hi)] = True
        inner = np.zeros(shape, dtype=bool)
        lo = [slice(None)] * m
        hi = [slice(None)] * m
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        inner[tuple(lo)] |= ~active[tuple(hi)]
        inner[tuple(hi)] |= ~active[tuple(lo)]
        fixed |= inner
    fixed &= active

    vals = np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape)
                     for c in init_fn(coords)], axis=-1).copy()
    if boundary_fn is not None:
        bvals = np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape)
                          for c in boundary_fn(coords)], axis=-1)
        vals[fixed] = bvals[fixed]
    if target.kind == "sphere":
        nrm = np.sqrt(np.sum(vals * vals, axis=-1, keepdims=True))
        vals = vals / np.where(nrm > 0.0, nrm, 1.0)
    return GridMap(axes, vals, fixed, active, chart, target)


def _axis_slices(m, ax, shift):
    sl = [slice(None)] * m
    if shift == 0:
        sl[ax] = slice(1, -1)
    elif shift == 1:
        sl[ax] = slice(2, None)
    else:
        sl[ax] = slice(0, -2)
    return tuple(sl)


def _first_derivative(vals, h, ax, m):
    """Order-2 first derivative along an axis, one-sided at the box edge."""
    out = np.empty_like(vals)
    c = _axis_slices(m, ax, 0)
    p = _axis_slices(m, ax, 1)
    n = _axis_slices(m, ax, -1)
    out[c] = (vals[p] - vals[n]) / (2.0 * h)
    first = [slice(None)] * m
    first[ax] = 0
    second = [slice(None)] * m
    second[ax] = 1
    third = [slice(None)] * m
    third[ax] = 2
    out[tuple(first)] = (-3.0 * vals[tuple(first)] + 4.0 * vals[tuple(second)] - vals[tuple(third)]) / (2.0 * h)
    last = [slice(None)] * m
    last[ax] = -1
    last2 = [slice(None)] * m
    last2[ax] = -2
    last3 = [slice(None)] * m
    last3[ax] = -3
    out[tuple(last)] = (3.0 * vals[tuple(last)] - 4.0 * vals[tuple(last2)] + vals[tuple(last3)]) / (2.0 * h)
    return out


def _second_derivative(vals, h, ax, m):
    out = np.zeros_like(vals)
    c = _axis_slices(m, ax, 0)
    p = _axis_slices(m, ax, 1)
    n = _axis_slices(m, ax, -1)
    out[c] = (vals[p] - 2.0 * vals[c] + vals[n]) / (h * h)
    return out


def _mixed_derivative(vals, hi, hj, i, j, m):
    out = np.zeros_like(vals)
    sl = [slice(1, -1) if ax in (i, j) else slice(None) for ax in range(m)]

    def shifted(di, dj):
        s = list(sl)
        s[i] = slice(1 + di, (-1 + di) or None)
        s[j] = slice(1 + dj, (-1 + dj) or None)
        return tuple(s)

    out[tuple(sl)] = (vals[shifted(1, 1)] - vals[shifted(1, -1)]
                      - vals[shifted(-1, 1)] + vals[shifted(-1, -1)]) / (4.0 * hi * hj)
    return out


def discrete_p_tension(gm, p):
    """Discrete tension direction at every node (zero where not interior)."""
    m = len(gm.axes)
    h = gm.spacing
    vals = gm.values
    coords = gm.node_coords()
    euclid = gm.chart.kind == "euclidean"

    d1 = [_first_derivative(vals, h[ax], ax, m) for ax in range(m)]

    if euclid:
        ginv = None
        gamma = None
        u2 = sum(np.sum(d1[ax] * d1[ax], axis=-1) for ax in range(m))
    else:
        ginv_ll = geo.inverse_metric_at(gm.chart, coords)
        gamma_ll = geo.christoffels_at(gm.chart, coords)
        ginv = [[np.asarray(ginv_ll[i][j], dtype=float) for j in range(m)] for i in range(m)]
        gamma = [[[np.asarray(gamma_ll[k][i][j], dtype=float) for j in range(m)] for i in range(m)] for k in range(m)]
        u2 = 0.0
        for i in range(m):
            for j in range(m):
                u2 = u2 + ginv[i][j] * np.sum(d1[i] * d1[j], axis=-1)

    pv = np.asarray(mp.exponent_at(p, coords), dtype=float)
    pv = np.broadcast_to(pv, u2.shape)
    w = np.where(u2 > RANK_EPS ** 2, np.power(np.maximum(u2, RANK_EPS ** 2), (pv - 2.0) / 2.0), 0.0)

    tau = np.zeros_like(vals)
    for i in range(m):
        if euclid:
            tau += _second_derivative(vals, h[i], i, m)
        else:
            for j in range(m):
                dij = _second_derivative(vals, h[i], i, m) if i == j else _mixed_derivative(vals, h[i], h[j], i, j, m)
                tau += ginv[i][j][..., None] * dij
                for k in range(m):
                    tau -= (ginv[i][j] * gamma[k][i][j])[..., None] * d1[k]
    if gm.target.kind == "sphere":
        y = vals
        tau = tau - np.sum(tau * y, axis=-1, keepdims=True) * y

    gw = [_first_derivative(w[..., None], h[ax], ax, m)[..., 0] for ax in range(m)]
    if not euclid:
        gw = [sum(ginv[i][j] * gw[j] for j in range(m)) for i in range(m)]

    out = w[..., None] * tau
    for k in range(m):
        out += gw[k][..., None] * d1[k]

    out[~gm.interior()] = 0.0
    return out


def discrete_energy(gm, p):
    """Cell-based energy: forward differences per axis, metric at centers."""
    m = len(gm.axes)
    h = gm.spacing
    vals = gm.values
    centers = tuple(0.5 * (a[1:] + a[:-1]) for a in gm.axes)
    mesh = np.meshgrid(*centers, indexing="ij")
    ccoords = tuple(mesh)

    # a cell is active iff all its corner nodes are active
    cell_active = np.ones(tuple(len(a) - 1 for a in gm.axes), dtype=bool)
    for corner in itertools.product((0, 1), repeat=m):
        sl = tuple(slice(1, None) if c else slice(0, -1) for c in corner)
        cell_active &= gm.active[sl]

    grads = []
    for ax in range(m):
        acc = None
        for corner in itertools.product((0, 1), repeat=m - 1):
            sl = [None] * m
            ci = 0
            for a2 in range(m):
                if a2 == ax:
                    continue
                sl[a2] = slice(1, None) if corner[ci] else slice(0, -1)
                ci += 1
            lo = list(sl)
            hi = list(sl)
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            diff = (vals[tuple(hi)] - vals[tuple(lo)]) / h[ax]
            acc = diff if acc is None else acc + diff
        grads.append(acc / (2 ** (m - 1)))

    euclid = gm.chart.kind == "euclidean"
    if euclid:
        u2 = sum(np.sum(g * g, axis=-1) for g in grads)
        dens = 1.0
    else:
        ginv_ll = geo.inverse_metric_at(gm.chart, ccoords)
        u2 = 0.0
        for i in range(m):
            for j in range(m):
                u2 = u2 + np.asarray(ginv_ll[i][j], dtype=float) * np.sum(grads[i] * grads[j], axis=-1)
        dens = np.asarray(geo.volume_density(gm.chart, ccoords), dtype=float)

    pv = np.broadcast_to(np.asarray(mp.exponent_at(p, ccoords), dtype=float), u2.shape)
    e = np.power(u2, pv / 2.0) / pv
    cellvol = float(np.prod(h))
    total = np.where(cell_active, e * dens, 0.0) * cellvol
    return float(np.sum(total))


def _retract(gm, step):
    new = gm.values + step
    if gm.target.kind == "sphere":
        w = step
        s = np.sum(w * w, axis=-1, keepdims=True)
        c = np.asarray(bk.cos_sqrt(s[..., 0]))[..., None]
        sc = np.asarray(bk.sinc_sqrt(s[..., 0]))[..., None]
        new = c * gm.values + sc * w
        nrm = np.sqrt(np.sum(new * new, axis=-1, keepdims=True))
        new = new / nrm
    return new


def flow_run(gm0, p, config=None):
    """Backtracking gradient descent; returns the final map and its trace."""
    cfg = config or FlowConfig()
    gm = gm0.copy()
    m = len(gm.axes)
    interior = gm.interior()
    nodew = float(np.prod(gm.spacing))
    trace = FlowTrace()

    eta = cfg.eta0 if cfg.eta0 is not None else 0.5 * min(gm.spacing) ** 2
    energy = discrete_energy(gm, p)
    consecutive = 0

    for it in range(cfg.max_iters):
        tau = discrete_p_tension(gm, p)
        res = float(np.sqrt(np.max(np.sum(tau * tau, axis=-1)[interior]))) if np.any(interior) else 0.0
        trace.final_residual = res
        if res <= cfg.tol:
            trace.converged = True
            break

        gnorm2 = float(np.sum(np.sum(tau * tau, axis=-1)[interior]) * nodew)
        accepted = False
        step = eta
        for _ in range(cfg.max_halvings):
            candidate = gm.copy()
            newvals = _retract(gm, step * tau)
            candidate.values[interior] = newvals[interior]
            e_new = discrete_energy(candidate, p)
            trial = FlowStep(it, e_new, res, step, False)
            if e_new <= energy - cfg.armijo * step * gnorm2 and e_new < energy:
                trial.accepted = True
                trace.steps.append(trial)
                gm = candidate
                energy = e_new
                accepted = True
                break
            trace.steps.append(trial)
            step *= 0.5
        if not accepted:
            raise StagnationError(
                f"line search stalled after {cfg.max_halvings} halvings at iteration {it}",
                trace=trace,
            )
        if step == eta:
            consecutive += 1
            if consecutive >= cfg.double_after:
                eta *= 2.0
                consecutive = 0
        else:
            eta = step
            consecutive = 0
        trace.iterations = it + 1

    return gm, trace
