"""Duhamel operators by space-time quadrature of the heat kernel.

    S[g](x, t)      = int_0^t int p(x, y, t - s) g(y, s) dmu(y) ds
    R[f; u0](x, t)  = S[f](x, t) + int p(x, y, t) u0(y) dmu(y)

In the lag variable tau = t - s the integrand peaks as tau -> 0, where
p(x, ., tau) concentrates at x. The tau range is split into geometrically
shrinking panels toward 0 with Gauss-Legendre rules on each; below the
last panel the kernel acts as the identity, so the remainder is
tau_min * g(x, t) up to O(tau_min^2).
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .expr import EvaluationError
from .fields import Field, FnSpec, as_fnspec, values_of
from .grid import CENTER, DIRICHLET, Grid
from .kernel import Kernel, axis_nodes, composite_gl, gauss_legendre

# |g|-integrals beyond this (times max(1, t)) are reported as divergent.
DIVERGENCE_LIMIT = 1e12


class DivergenceError(ArithmeticError):
    """The absolute Duhamel integral is not finite to working precision."""


class DuhamelValue(NamedTuple):
    value: float
    abs_integral: float


def _as_source(g, grid: Grid | None = None) -> FnSpec:
    if isinstance(g, Field):
        return FnSpec.table(g.grid, g.values)
    if isinstance(g, np.ndarray):
        if grid is None:
            raise TypeError("array data needs its grid; wrap it in a Field")
        return FnSpec.table(grid, values_of(grid, g))
    return as_fnspec(g)


def _tau_panels(t: float, tau_min: float, order: int = 8):
    """Gauss nodes/weights on [tau_min, t] with panels halving toward tau_min."""
    edges = [t]
    while edges[-1] / 2 > tau_min:
        edges.append(edges[-1] / 2)
    edges.append(tau_min)
    edges = np.array(edges[::-1])
    return composite_gl(edges, order)


def _space_integral(kernel: Kernel, xs, tau, g: FnSpec, s, tail: float):
    """int p(x, y, tau) g(y, s) dmu(y) and its |g| version, per-axis tensor rule."""
    nodes, weights = [], []
    ndim = kernel.domain.ndim
    order = 16 if ndim == 1 else 8
    for ax in range(ndim):
        y, w = axis_nodes(kernel, ax, xs[ax], tau, order=order, tail=tail)
        nodes.append(y)
        weights.append(w * kernel.axis_value(ax, float(xs[ax]), y, tau))
    if ndim == 1:
        gv = g(nodes[0], s)
        kw = weights[0]
    else:
        mesh = np.meshgrid(*nodes, indexing="ij")
        gv = g(tuple(mesh), s)
        kw = weights[0]
        for w in weights[1:]:
            kw = np.multiply.outer(kw, w)
    gv = np.broadcast_to(gv, kw.shape)
    return float(np.sum(kw * gv)), float(np.sum(kw * np.abs(gv)))


def S(kernel: Kernel, g, x, t: float, tol: float = 1e-8) -> DuhamelValue:
    """Pointwise Duhamel integral of ``g`` at (x, t).

    Args:
        kernel: heat kernel of the domain.
        g: source; anything ``as_fnspec`` accepts, or a Field.
        x: point (scalar for one-axis domains, tuple otherwise).
        t: time, > 0.
        tol: absolute error target.

    Returns:
        ``(value, abs_integral)``: the signed integral and the integral of |g|.

    Raises:
        DivergenceError: when the |g| integral blows up or does not settle as
            the spatial window grows.
    """
    if not t > 0:
        raise ValueError("S needs t > 0")
    g = _as_source(g)
    xs = x if isinstance(x, tuple) else (x,)
    tau_min = min(t, 1e-2 * math.sqrt(tol))
    taus, wts = _tau_panels(t, tau_min) if tau_min < t else (np.array([]), np.array([]))
    # widen the spatial window until the largest-lag |g| integral settles
    tail = 40.0
    try:
        for _ in range(5):
            a_now = _space_integral(kernel, xs, t, g, 0.0, tail)[1]
            if kernel.domain.is_bounded:
                break
            a_wide = _space_integral(kernel, xs, t, g, 0.0, 2 * tail)[1]
            if not math.isfinite(a_wide) or a_wide > DIVERGENCE_LIMIT * max(1.0, t):
                raise DivergenceError(f"|g| integral {a_wide:.3g} exceeds the divergence threshold")
            if abs(a_wide - a_now) <= max(tol, 1e-10 * a_now):
                break
            tail *= 2
        else:
            raise DivergenceError("the |g| integral grows with the spatial window")
    except EvaluationError as err:
        raise DivergenceError(f"source overflows inside the kernel window: {err}") from err
    val = ab = 0.0
    for tau, w in zip(taus, wts):
        v, a = _space_integral(kernel, xs, tau, g, t - tau, tail)
        val += w * v
        ab += w * a
    g0 = float(np.asarray(g(xs[0] if len(xs) == 1 else xs, t)))
    val += tau_min * g0
    ab += tau_min * abs(g0)
    if not math.isfinite(ab) or ab > DIVERGENCE_LIMIT * max(1.0, t):
        raise DivergenceError(f"|g| integral {ab:.3g} exceeds the divergence threshold")
    return DuhamelValue(val, ab)


def propagate(kernel: Kernel, u0, x, t: float) -> float:
    """int p(x, y, t) u0(y) dmu(y)."""
    u0 = _as_source(u0)
    xs = x if isinstance(x, tuple) else (x,)
    return _space_integral(kernel, xs, t, u0, 0.0, 40.0)[0]


def R(kernel: Kernel, f, u0, x, t: float, tol: float = 1e-8) -> DuhamelValue:
    """S[f](x, t) plus the heat propagation of ``u0``; the |.| part covers f only."""
    s = S(kernel, f, x, t, tol)
    return DuhamelValue(s.value + propagate(kernel, u0, x, t), s.abs_integral)


# -- lattice versions --------------------------------------------------------

class _Sampler:
    """Evaluate a source at sub-cell nodes and arbitrary times."""

    def __init__(self, g, grid: Grid):
        self.grid = grid
        if isinstance(g, (Field, np.ndarray)):
            vals = values_of(grid, g)
            self.interp = RegularGridInterpolator((grid.times, *grid.axes), vals,
                                                  bounds_error=False, fill_value=None)
            self.fn = None
            self.time_dependent = True
        else:
            self.fn = as_fnspec(g)
            self.interp = None
            self.time_dependent = self.fn.time_dependent

    def __call__(self, ys, ts):
        """Values of shape (len(ts), *sub_shape) at the tensor set of ``ys``."""
        ts = np.asarray(ts, dtype=float)
        sub = tuple(len(y) for y in ys)
        if self.fn is not None:
            mesh = np.meshgrid(*ys, indexing="ij") if len(ys) > 1 else [ys[0]]
            pts = tuple(mesh) if len(ys) > 1 else mesh[0]
            if not self.time_dependent:
                v = np.broadcast_to(self.fn(pts, 0.0), sub)
                return np.broadcast_to(v, (len(ts),) + sub)
            tt = ts.reshape((-1,) + (1,) * len(ys))
            return np.broadcast_to(self.fn(pts, tt), (len(ts),) + sub)
        # clip into the lattice so the radial half cell [0, r0] is constant
        clipped = [np.clip(y, a[0], a[-1]) for y, a in zip(ys, self.grid.axes)]
        mesh = np.meshgrid(ts, *clipped, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        return self.interp(pts).reshape((len(ts),) + sub)


def _sub_nodes(grid: Grid, ax: int, m: int, kernel: Kernel):
    cache = grid.meta.setdefault("_subnodes", {})
    key = (ax, m)
    if key not in cache:
        a = grid.axes[ax]
        lo = grid.lattice[ax][0]
        breaks = np.concatenate([[lo], a]) if grid.domain.faces[ax][0] == CENTER else a
        y, w = composite_gl(breaks, m)
        cache[key] = (y, w * kernel.density(ax, y))
    return cache[key]


def _points_per_cell(dx: float, tau: float) -> int:
    return int(np.clip(math.ceil(3.0 * dx / math.sqrt(tau)), 3, 32))


def _apply(kernel: Kernel, grid: Grid, tau: float, G: np.ndarray, subs) -> np.ndarray:
    """Contract sub-node samples G (nk, *sub_shape) against p(x_i, ., tau)."""
    res = G
    for ax in range(grid.ndim):
        y, w = subs[ax]
        A = kernel.axis_value(ax, grid.axes[ax][:, None], y[None, :], tau) * w[None, :]
        res = np.moveaxis(np.tensordot(A, res, axes=([1], [ax + 1])), 0, ax + 1)
    return res


def _zero_dirichlet(grid: Grid, values: np.ndarray) -> np.ndarray:
    for ax, (flo, fhi) in enumerate(grid.domain.faces):
        for end, flag in ((0, flo), (-1, fhi)):
            if flag == DIRICHLET:
                idx = [slice(None)] * values.ndim
                idx[ax + 1] = end
                values[tuple(idx)] = 0.0
    return values


def _tau_rule(grid: Grid):
    """(tau, weight, first target index) triples covering every lag on the lattice."""
    dt = grid.dt
    K = grid.steps
    tau_c = (3.0 * min(grid.dx) / 32.0) ** 2
    rule = []
    # block 0: geometric panels toward the diagonal, identity remainder below tau_c
    if dt > tau_c:
        edges = [dt]
        while edges[-1] / 2 > tau_c:
            edges.append(edges[-1] / 2)
        edges.append(tau_c)
        nodes, wts = composite_gl(np.array(edges[::-1]), 6)
        rule.extend((tau, w, 1) for tau, w in zip(nodes, wts))
    for m in range(1, K):
        n = 6 if m == 1 else 4 if m < 4 else 3
        u, w = gauss_legendre(n)
        a = m * dt
        for ui, wi in zip(u, w):
            rule.append((a + 0.5 * dt * (ui + 1.0), 0.5 * dt * wi, m + 1))
    return rule, min(tau_c, dt)


def S_field(kernel: Kernel, grid: Grid, g) -> Field:
    """S[g] at every lattice node and time level.

    Sources given as functions are evaluated exactly at the quadrature
    points; lattice data are interpolated piecewise-linearly in space and
    time. Data beyond a truncated lattice are treated as zero.
    """
    sampler = _Sampler(g, grid)
    K = grid.steps
    out = np.zeros((K + 1,) + grid.shape)
    rule, tau_tail = _tau_rule(grid)
    for tau, w, k0 in rule:
        ks = np.arange(k0, K + 1)
        subs = [_sub_nodes(grid, ax, _points_per_cell(dx, tau), kernel)
                for ax, dx in enumerate(grid.dx)]
        G = sampler([s[0] for s in subs], grid.times[ks] - tau)
        out[ks] += w * _apply(kernel, grid, tau, G, subs)
    # lags below tau_tail: the kernel is the identity to O(tau), sample at the midpoint lag
    out[1:] += tau_tail * sampler([np.asarray(a) for a in grid.axes], grid.times[1:] - 0.5 * tau_tail)
    out = _zero_dirichlet(grid, out)
    if not np.all(np.isfinite(out)) or np.abs(out).max(initial=0.0) > DIVERGENCE_LIMIT * max(1.0, grid.T):
        raise DivergenceError("Duhamel field is not finite on the lattice")
    return Field(grid, out, meta={"operator": "S"})


def propagate_field(kernel: Kernel, grid: Grid, u0) -> Field:
    """Heat propagation of the initial datum at every lattice time level."""
    sampler = _Sampler(u0, grid)
    out = np.zeros((grid.steps + 1,) + grid.shape)
    init = sampler([np.asarray(a) for a in grid.axes], [0.0])[0]
    out[0] = init
    tau_c = (3.0 * min(grid.dx) / 32.0) ** 2
    for k in range(1, grid.steps + 1):
        t = grid.times[k]
        if t < tau_c:
            out[k] = init
            continue
        subs = [_sub_nodes(grid, ax, _points_per_cell(dx, t), kernel)
                for ax, dx in enumerate(grid.dx)]
        G = sampler([s[0] for s in subs], [0.0])
        out[k] = _apply(kernel, grid, t, G, subs)[0]
    init_boundary = out[0].copy()
    out = _zero_dirichlet(grid, out)
    out[0] = init_boundary
    return Field(grid, out, meta={"operator": "P"})


def R_field(kernel: Kernel, grid: Grid, f, u0) -> Field:
    """S[f] + propagation of u0 on the lattice."""
    vals = S_field(kernel, grid, f).values + propagate_field(kernel, grid, u0).values
    return Field(grid, vals, meta={"operator": "R"})


def h_field(kernel: Kernel, grid: Grid, f, u0) -> Field:
    """The canonical h = R[f; u0] under the standing hypotheses f, u0 >= 0.

    Raises:
        ValueError: if f or u0 takes negative values, or both vanish (h = 0).
    """
    fv = values_of(grid, f)
    uv = values_of(grid, u0)[0]
    if np.any(fv < 0) or np.any(uv < 0):
        raise ValueError("h needs f >= 0 and u0 >= 0")
    if not (np.any(fv > 0) or np.any(uv > 0)):
        raise ValueError("h vanishes identically: f and u0 are both zero")
    h = R_field(kernel, grid, f, u0)
    h.meta["operator"] = "h"
    return h
