"""Dirichlet heat kernels of the model geometries.

Every geometry reduces to one-dimensional Dirichlet kernels:

* the line and the free directions of a box use the Gaussian;
* a half-line uses one image reflection;
* a segment uses the sine eigenseries for t >= t_cross and the method of
  images for t < t_cross, each truncated by its exponential tail bound;
* radial shells of R^3 and H^3 use the substitution w = s(r) e^{kappa t} u,
  which turns the radial heat equation into the 1-D one, with
  s(r) = r, kappa = 0 in R^3 and s(r) = sinh r, kappa = 1 in H^3.

For radial kinds ``x`` and ``y`` are radii and the kernel acts on radial
functions: it is the spherical mean of p(x, ., t) over the sphere of
radius y, symmetric with respect to the Riemannian measure
4 pi s(r)^2 dr. On the full space with x = 0 it coincides with the
pointwise kernel, e.g. (4 pi t)^{-3/2} (rho / sinh rho) e^{-t - rho^2/4t} in H^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import CENTER, Domain, measure_density

_SQRT_4PI = math.sqrt(4.0 * math.pi)
_R_MIN = 1e-30


def gaussian(z, t):
    """(4 pi t)^{-1/2} exp(-z^2 / 4t)."""
    return np.exp(-z * z / (4.0 * t)) / (_SQRT_4PI * np.sqrt(t))


def _image_pair(xi, eta, t):
    """G(xi - eta) - G(xi + eta) for xi, eta >= 0, without cancellation."""
    return -gaussian(xi - eta, t) * np.expm1(-xi * eta / t)


class _Free:
    lo, hi = -math.inf, math.inf

    def __call__(self, x, y, t):
        return gaussian(x - y, t)


class _HalfLine:
    """Dirichlet at ``a``; the domain lies on the side ``sign`` of a."""

    def __init__(self, a: float, sign: int):
        self.a, self.sign = a, sign
        self.lo, self.hi = (a, math.inf) if sign > 0 else (-math.inf, a)

    def __call__(self, x, y, t):
        xi = np.maximum(self.sign * (x - self.a), 0.0)
        eta = np.maximum(self.sign * (y - self.a), 0.0)
        return _image_pair(xi, eta, t)


class _Segment:
    """Dirichlet kernel of (a, b) with dual representation."""

    def __init__(self, a: float, b: float, tol: float, t_cross: float | None):
        self.lo, self.hi = a, b
        self.L = b - a
        self.tol = tol
        self.t_cross = self.L**2 / math.pi**2 if t_cross is None else t_cross

    def modes_needed(self, t: float) -> int:
        c = math.pi**2 * t / self.L**2
        arg = math.log(2.0 / (self.L * self.tol * -math.expm1(-c)))
        return max(1, math.ceil(math.sqrt(max(arg, 0.0) / c)))

    def images_needed(self, t: float) -> int:
        reach = math.sqrt(4.0 * t * max(1.0, math.log(4.0 / (self.tol * _SQRT_4PI * math.sqrt(t)))))
        return max(1, math.ceil((reach + 2.0 * self.L) / (2.0 * self.L)))

    def sine(self, x, y, t):
        x, y, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, t)))
        if x.size == 0:
            return np.zeros(x.shape)
        K = self.modes_needed(float(np.min(t)))
        k = np.arange(1, K + 1)
        w = math.pi / self.L
        xi = (x - self.lo)[..., None]
        eta = (y - self.lo)[..., None]
        terms = np.sin(k * w * xi) * np.sin(k * w * eta) * np.exp(-(k * w) ** 2 * t[..., None])
        return (2.0 / self.L) * terms.sum(axis=-1)

    def images(self, x, y, t):
        x, y, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, t)))
        if x.size == 0:
            return np.zeros(x.shape)
        xi = np.clip(x - self.lo, 0.0, self.L)
        eta = np.clip(y - self.lo, 0.0, self.L)
        out = _image_pair(xi, eta, t)
        K = self.images_needed(float(np.max(t)))
        for k in range(1, K + 1):
            for s in (k, -k):
                shift = 2.0 * s * self.L
                out = out + gaussian(xi - eta + shift, t) - gaussian(xi + eta + shift, t)
        return out

    def __call__(self, x, y, t):
        x, y, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, t)))
        out = np.empty(x.shape)
        short = t < self.t_cross
        if np.any(short):
            out[short] = self.images(x[short], y[short], t[short])
        if np.any(~short):
            out[~short] = self.sine(x[~short], y[~short], t[~short])
        return out


def _shape_fn(kind):
    return np.sinh if kind == "hyperbolic" else (lambda r: r)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Heat kernel p(x, y, t) of a model domain.

    Attributes:
        domain: the geometry (its truncation radius is irrelevant here: the
            kernel is that of the untruncated domain).
        tol: truncation tolerance of the series representations.
        t_cross: crossover time between image and sine series; ``None``
            means L^2 / pi^2 for each segment of length L.
    """

    domain: Domain
    tol: float = 1e-10
    t_cross: float | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.t_cross is not None and not self.t_cross > 0:
            raise ValueError("t_cross must be positive")
        if self.domain.kind == "radial" and self.domain.dim != 3:
            raise NotImplementedError(
                f"closed-form radial kernel is available for n = 3 only (got n = {self.domain.dim})")

    @cached_property
    def factors(self) -> tuple:
        out = []
        for lo, hi in self.domain.bounds:
            fin_lo, fin_hi = math.isfinite(lo), math.isfinite(hi)
            if fin_lo and fin_hi:
                out.append(_Segment(lo, hi, self.tol, self.t_cross))
            elif fin_lo:
                out.append(_HalfLine(lo, +1))
            elif fin_hi:
                out.append(_HalfLine(hi, -1))
            else:
                out.append(_Free())
        return tuple(out)

    @property
    def radial(self) -> bool:
        return self.domain.is_radial

    def _check(self, pts, name):
        for ax, (lo, hi) in enumerate(self.domain.bounds):
            a = np.asarray(pts[ax], dtype=float)
            slack = 1e-12 * max(1.0, abs(lo) if math.isfinite(lo) else 1.0,
                                abs(hi) if math.isfinite(hi) else 1.0)
            if np.any(a < lo - slack) or np.any(a > hi + slack):
                raise ValueError(f"{name} lies outside the closure of the domain")

    def axis_value(self, ax: int, x, y, t):
        """One-axis factor; for radial kinds the full radial kernel."""
        fac = self.factors[ax]
        if not self.radial:
            return fac(x, y, t)
        s = _shape_fn(self.domain.kind)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.domain.faces[0][0] == CENTER:
            x = np.maximum(x, _R_MIN)
            y = np.maximum(y, _R_MIN)
        kappa = 1.0 if self.domain.kind == "hyperbolic" else 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.exp(-kappa * t) * fac(x, y, t) / (4.0 * math.pi * s(x) * s(y))
        return np.where(np.isfinite(val), val, 0.0)

    def density(self, ax: int, y):
        if self.radial:
            return measure_density(self.domain, y)
        return np.ones_like(np.asarray(y, dtype=float))

    def eval(self, x, y, t):
        """p(x, y, t); ``x``/``y`` are arrays (one axis) or per-axis tuples."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("heat kernel needs t > 0")
        xs = x if isinstance(x, tuple) else (x,)
        ys = y if isinstance(y, tuple) else (y,)
        if len(xs) != self.domain.ndim or len(ys) != self.domain.ndim:
            raise ValueError("point dimension does not match the domain")
        self._check(xs, "x")
        self._check(ys, "y")
        out = 1.0
        for ax in range(self.domain.ndim):
            out = out * self.axis_value(ax, xs[ax], ys[ax], t)
        return out

    __call__ = eval


# -- quadrature helpers --------------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def composite_gl(breaks, order: int = 16):
    """Nodes and weights of composite Gauss-Legendre over consecutive breakpoints."""
    breaks = np.asarray(breaks, dtype=float)
    u, w = gauss_legendre(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * u + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def spread(t: float, drift: float = 0.0, tail: float = 40.0) -> tuple[float, float]:
    """Half-width (left, right) of the region where p(x, ., t) is non-negligible."""
    w = math.sqrt(4.0 * t * (tail + drift * t))
    return w, w + 2.0 * drift * t


def axis_nodes(kernel: Kernel, ax: int, centers, t: float, panel: float | None = None,
               order: int = 16, tail: float = 40.0):
    """Quadrature nodes/weights (measure included) on one axis.

    The window covers the non-negligible part of p(c, ., t) for every c in
    ``centers``, clipped to the axis support.
    """
    lo, hi = kernel.factors[ax].lo, kernel.factors[ax].hi
    drift = kernel.domain.drift()
    left, right = spread(t, drift, tail)
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    a = max(lo, float(centers.min()) - left)
    b = min(hi, float(centers.max()) + right)
    if panel is None:
        panel = 0.5 * math.sqrt(t)
    n = max(2, math.ceil((b - a) / panel))
    breaks = np.linspace(a, b, n + 1)
    breaks = np.union1d(breaks, centers[(centers > a) & (centers < b)])
    y, w = composite_gl(breaks, order)
    return y, w * kernel.density(ax, y)


def mass(kernel: Kernel, x, t: float, grid=None) -> float:
    """Integral of p(x, ., t) over the domain.

    With ``grid`` the trapezoid rule on its nodes is used; otherwise an
    adaptive composite Gauss-Legendre rule around ``x``.
    """
    if not t > 0:
        raise ValueError("mass needs t > 0")
    xs = x if isinstance(x, tuple) else (x,)
    if grid is not None:
        w = grid.quadrature_weights()
        pts = grid.coords
        vals = kernel.eval(tuple(np.broadcast_to(np.asarray(c, float), grid.shape) for c in xs)
                           if len(xs) > 1 else np.full(grid.shape, float(xs[0])),
                           pts if len(pts) > 1 else pts[0], t)
        return float(np.sum(vals * w))
    out = 1.0
    for ax, xa in enumerate(xs):
        y, w = axis_nodes(kernel, ax, xa, t)
        out *= float(np.sum(kernel.axis_value(ax, float(xa), y, t) * w))
    return out


def semigroup_residual(kernel: Kernel, x, y, s: float, t: float) -> float:
    """|p(x, y, t) - int p(x, z, s) p(z, y, t - s) dmu(z)| by quadrature."""
    if not 0 < s < t:
        raise ValueError("need 0 < s < t")
    xs = x if isinstance(x, tuple) else (x,)
    ys = y if isinstance(y, tuple) else (y,)
    direct = float(kernel.eval(x, y, t))
    composed = 1.0
    for ax, (xa, ya) in enumerate(zip(xs, ys)):
        z, w = axis_nodes(kernel, ax, [xa, ya], max(s, t - s),
                          panel=0.5 * math.sqrt(min(s, t - s)))
        composed *= float(np.sum(kernel.axis_value(ax, float(xa), z, s)
                                 * kernel.axis_value(ax, z, float(ya), t - s) * w))
    return abs(direct - composed)
