"""Model-geometry domains, uniform space-time lattices and discrete Laplacians.

Supported geometries:

    line        the real line (truncated to [-R, R] for computation)
    interval    a bounded interval (a, b) with Dirichlet ends
    box         a product of up to three intervals; an infinite end is an
                "at-infinity" face, a finite end is a Dirichlet face
    radial      radial functions on R^n restricted to a shell r_in < r < r_out
    hyperbolic  radial functions on hyperbolic 3-space, same shell form

For radial kinds the single coordinate is the (geodesic) radius and the
Laplacian acts on radial functions: w_rr + (n-1)/r w_r in R^n and
w_rr + 2 coth(r) w_r in H^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

DIRICHLET = "dirichlet"
INFINITY = "infinity"
CENTER = "center"

KINDS = ("line", "interval", "box", "radial", "hyperbolic")

# Gaussian tail exp(-d^2 / 4T) below this is treated as invisible.
TAIL_TOL = 1e-12


class DomainError(ValueError):
    """Invalid domain or lattice parameters."""


@dataclass(frozen=True)
class Domain:
    """A model geometry.

    Attributes:
        kind: one of ``KINDS``.
        bounds: per-axis ``(lo, hi)``; ``hi`` (and ``lo`` for line/box axes)
            may be infinite.
        dim: ambient dimension for radial kinds (3 for hyperbolic), else the
            number of axes.
        R_trunc: truncation radius used when the domain is unbounded.
    """

    kind: str
    bounds: tuple[tuple[float, float], ...]
    dim: int = 1
    R_trunc: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if not 1 <= len(self.bounds) <= 3:
            raise DomainError("between one and three axes are supported")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise DomainError(f"empty axis ({lo}, {hi})")
        if self.kind in ("radial", "hyperbolic"):
            (r_in, r_out), = self.bounds
            if r_in < 0:
                raise DomainError("r_in must be >= 0")
            if self.dim < 1:
                raise DomainError("radial dimension must be >= 1")
            if self.kind == "hyperbolic" and self.dim != 3:
                raise DomainError("only hyperbolic 3-space is modelled")
        if self.kind == "interval" and not all(map(math.isfinite, self.bounds[0])):
            raise DomainError("interval ends must be finite; use line or box")
        if self.R_trunc is not None and self.R_trunc <= 0:
            raise DomainError("R_trunc must be positive")

    # -- constructors -------------------------------------------------------

    @classmethod
    def real_line(cls, R_trunc: float | None = None) -> Domain:
        return cls("line", ((-math.inf, math.inf),), 1, R_trunc)

    @classmethod
    def interval(cls, a: float, b: float) -> Domain:
        return cls("interval", ((float(a), float(b)),), 1)

    @classmethod
    def box(cls, *intervals, R_trunc: float | None = None) -> Domain:
        bounds = tuple((float(a), float(b)) for a, b in intervals)
        return cls("box", bounds, len(bounds), R_trunc)

    @classmethod
    def radial_euclidean(cls, n: int, r_in: float = 0.0, r_out: float = math.inf,
                         R_trunc: float | None = None) -> Domain:
        return cls("radial", ((float(r_in), float(r_out)),), int(n), R_trunc)

    @classmethod
    def radial_hyperbolic3(cls, r_in: float = 0.0, r_out: float = math.inf,
                           R_trunc: float | None = None) -> Domain:
        return cls("hyperbolic", ((float(r_in), float(r_out)),), 3, R_trunc)

    # -- classification -----------------------------------------------------

    @property
    def ndim(self) -> int:
        """Number of lattice axes."""
        return len(self.bounds)

    @property
    def is_radial(self) -> bool:
        return self.kind in ("radial", "hyperbolic")

    @property
    def is_bounded(self) -> bool:
        return all(math.isfinite(lo) and math.isfinite(hi) for lo, hi in self.bounds)

    @property
    def faces(self) -> tuple[tuple[str, str], ...]:
        """Boundary flag per axis end: dirichlet, infinity or (radial) center."""
        out = []
        for lo, hi in self.bounds:
            if self.is_radial and lo == 0.0:
                lo_flag = CENTER
            else:
                lo_flag = DIRICHLET if math.isfinite(lo) else INFINITY
            hi_flag = DIRICHLET if math.isfinite(hi) else INFINITY
            out.append((lo_flag, hi_flag))
        return tuple(out)

    @property
    def has_dirichlet(self) -> bool:
        return any(DIRICHLET in f for f in self.faces)

    def with_truncation(self, R: float) -> Domain:
        return Domain(self.kind, self.bounds, self.dim, float(R))

    def lattice_bounds(self, R_trunc: float | None = None) -> tuple[tuple[float, float], ...]:
        """Finite computational box; infinite ends are replaced by +-R."""
        R = self.R_trunc if R_trunc is None else R_trunc
        out = []
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi)):
                if R is None:
                    raise DomainError("unbounded domain needs a truncation radius R_trunc")
                lo = lo if math.isfinite(lo) else -R
                hi = hi if math.isfinite(hi) else R
                if not lo < hi:
                    raise DomainError(f"R_trunc={R} does not reach beyond the finite end")
            out.append((lo, hi))
        return tuple(out)

    def contains(self, other: Domain) -> bool:
        """True when ``other`` is a subset of ``self`` as a point set."""
        if self.is_radial != other.is_radial or self.ndim != other.ndim:
            return False
        if self.is_radial and (self.kind != other.kind or self.dim != other.dim):
            return False
        return all(lo <= olo and ohi <= hi
                   for (lo, hi), (olo, ohi) in zip(self.bounds, other.bounds))

    def drift(self) -> float:
        """Upper bound on the radial drift speed of Brownian motion far out."""
        return 2.0 if self.kind == "hyperbolic" else 0.0


def truncation_radius(T: float, support_radius: float = 0.0, drift: float = 0.0,
                      tol: float = TAIL_TOL) -> float:
    """Radius beyond which data supported in ``|x| <= support_radius`` is invisible.

    Chosen so that exp(-(R - support - drift T)^2 / (4T)) < tol.
    """
    return support_radius + drift * T + math.sqrt(4.0 * T * math.log(1.0 / tol))


def exhaust(domain: Domain, n: int) -> Domain:
    """n-th member of a nested exhaustion of ``domain`` by relatively compact sets.

    Unbounded ends grow linearly (``+-n`` from the finite end, or from the
    origin); Dirichlet ends are inset by a margin ``L 2^-(n+1)`` that halves
    with each step.
    """
    if n < 1:
        raise DomainError("exhaustion index starts at 1")
    new = []
    for (lo, hi), (flo, fhi) in zip(domain.bounds, domain.faces):
        fin_lo, fin_hi = math.isfinite(lo), math.isfinite(hi)
        if fin_lo and fin_hi:
            margin = (hi - lo) * 2.0 ** -(n + 1)
            nlo = lo if flo == CENTER else lo + margin
            nhi = hi - margin
        elif fin_lo:
            nlo, nhi = lo, lo + n
        elif fin_hi:
            nlo, nhi = hi - n, hi
        else:
            nlo, nhi = -float(n), float(n)
        new.append((nlo, nhi))
    if domain.kind == "line":
        return Domain.interval(*new[0])
    return Domain(domain.kind, tuple(new), domain.dim)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice over ``closure(domain) x [0, T]``.

    ``values`` of fields living on a grid have shape ``(steps + 1, *shape)``.
    """

    domain: Domain
    axes: tuple[np.ndarray, ...]
    times: np.ndarray
    lattice: tuple[tuple[float, float], ...]
    R_trunc: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def h(self) -> float:
        """Largest spatial mesh width."""
        return max(self.dx)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def points(self):
        """Node coordinates in the form ``FnSpec`` expects (array or tuple)."""
        return self.coords[0] if self.ndim == 1 else self.coords

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax, (flo, fhi) in enumerate(self.domain.faces):
            idx = [slice(None)] * self.ndim
            if flo != CENTER:
                idx[ax] = 0
                mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @property
    def boundary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask.ravel())

    @property
    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask.ravel())

    @cached_property
    def trusted_mask(self) -> np.ndarray:
        """Nodes far enough from artificial (at-infinity) faces to be trusted.

        A node is untrusted when it lies within the Gaussian tail distance of a
        truncated face, where the lattice solution feels the artificial
        Dirichlet condition.
        """
        d = math.sqrt(4.0 * self.T * math.log(1.0 / TAIL_TOL)) + self.domain.drift() * self.T
        mask = np.ones(self.shape, dtype=bool)
        for ax, ((flo, fhi), (lo, hi)) in enumerate(zip(self.domain.faces, self.lattice)):
            c = self.coords[ax]
            if flo == INFINITY:
                mask &= c >= lo + d
            if fhi == INFINITY:
                mask &= c <= hi - d
        return mask

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights times the Riemannian density on the node set."""
        w = np.ones(self.shape)
        for ax, a in enumerate(self.axes):
            wa = np.full(len(a), a[1] - a[0])
            wa[-1] *= 0.5
            if self.domain.faces[ax][0] != CENTER:
                wa[0] *= 0.5
            shape = [1] * self.ndim
            shape[ax] = len(a)
            w = w * wa.reshape(shape)
        if self.domain.is_radial:
            w = w * measure_density(self.domain, self.axes[0])
        return w

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        return k

    def refine(self, space: int = 2, time: int = 4) -> Grid:
        """Grid with mesh widths divided by ``space`` and ``time``."""
        res = tuple(_refined_resolution(self.domain, n, space) for n in self.shape)
        return build_grid(self.domain, res, self.T, self.steps * time, self.R_trunc)


def _refined_resolution(domain: Domain, n: int, factor: int) -> int:
    if domain.is_radial and domain.faces[0][0] == CENTER:
        # nodes at (j + 1/2) dx: keep the outer face fixed
        return int(round((n - 0.5) * factor + 0.5))
    return (n - 1) * factor + 1


def measure_density(domain: Domain, r):
    """Riemannian measure density of radial shells: |S^{n-1}| r^{n-1} or 4 pi sinh^2 r."""
    r = np.asarray(r, dtype=float)
    if domain.kind == "hyperbolic":
        return 4.0 * np.pi * np.sinh(r) ** 2
    if domain.kind == "radial":
        n = domain.dim
        area = 2.0 * np.pi ** (n / 2) / math.gamma(n / 2)
        return area * r ** (n - 1)
    return np.ones_like(r)


def build_grid(domain: Domain, spatial_resolution, T: float, steps: int,
               R_trunc: float | None = None) -> Grid:
    """Build the uniform lattice.

    Args:
        domain: geometry to discretize.
        spatial_resolution: node count per axis (int or tuple), boundary nodes
            included. Radial shells starting at r = 0 put the first node at
            dx/2 and have no node on the centre.
        T: final time.
        steps: number of time steps.
        R_trunc: truncation radius for unbounded domains (overrides the
            domain's own).

    Raises:
        DomainError: for T <= 0, too few nodes, or a missing truncation radius.
    """
    if not T > 0:
        raise DomainError("T must be positive")
    if steps < 1:
        raise DomainError("need at least one time step")
    R = R_trunc if R_trunc is not None else domain.R_trunc
    lattice = domain.lattice_bounds(R)
    if np.isscalar(spatial_resolution):
        res = (int(spatial_resolution),) * domain.ndim
    else:
        res = tuple(int(n) for n in spatial_resolution)
        if len(res) != domain.ndim:
            raise DomainError("one resolution per axis")
    axes = []
    for (lo, hi), (flo, _), n in zip(lattice, domain.faces, res):
        if flo == CENTER:
            if n < 4:
                raise DomainError("need at least 3 interior nodes per axis")
            dx = hi / (n - 0.5)
            a = (np.arange(n) + 0.5) * dx
            a[-1] = hi
        else:
            if n < 5:
                raise DomainError("need at least 3 interior nodes per axis")
            a = np.linspace(lo, hi, n)
        axes.append(a)
    times = np.linspace(0.0, float(T), int(steps) + 1)
    return Grid(domain, tuple(axes), times, lattice, R)


# -- discrete Laplacian -------------------------------------------------------

def _axis_operator(domain: Domain, a: np.ndarray, radial: bool, center: bool) -> sp.csr_matrix:
    n = len(a)
    dx = a[1] - a[0]
    lower = np.full(n, 1.0 / dx**2)
    upper = np.full(n, 1.0 / dx**2)
    diag = np.full(n, -2.0 / dx**2)
    if radial:
        if np.any(a <= 0.0):
            raise DomainError("radial lattice has a node at r = 0")
        if domain.kind == "hyperbolic":
            c = 2.0 / np.tanh(a)
        else:
            c = (domain.dim - 1) / a
        lower -= c / (2 * dx)
        upper += c / (2 * dx)
    if center:
        # reflection w_{-1} = w_0 across r = 0
        diag[0] += lower[0]
        lower[0] = 0.0
    mat = sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], shape=(n, n), format="lil")
    return mat.tocsr()


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of the discrete Laplacian; rows of boundary nodes are zero."""
    cache = grid.meta.setdefault("_laplacian", {})
    if "L" in cache:
        return cache["L"]
    dom = grid.domain
    ops = []
    for ax, a in enumerate(grid.axes):
        center = dom.faces[ax][0] == CENTER
        ops.append(_axis_operator(dom, a, dom.is_radial, center))
    L = None
    for ax, op in enumerate(ops):
        term = op
        for other in range(grid.ndim):
            if other == ax:
                continue
            eye = sp.identity(len(grid.axes[other]), format="csr")
            term = sp.kron(term, eye, format="csr") if other > ax else sp.kron(eye, term, format="csr")
        L = term if L is None else L + term
    keep = sp.diags(grid.interior_mask.ravel().astype(float))
    L = (keep @ L).tocsr()
    L.eliminate_zeros()
    cache["L"] = L
    return L


def laplacian_apply(grid: Grid, w) -> np.ndarray:
    """Second-order central discrete Laplacian of ``w`` (one time level).

    Values on boundary nodes are zero; interior values use the stencils of
    the geometry (reflection at a radial centre).
    """
    w = np.asarray(w, dtype=float)
    if w.shape != grid.shape:
        raise ValueError(f"field shape {w.shape} does not match grid {grid.shape}")
    return (laplacian_matrix(grid) @ w.ravel()).reshape(grid.shape)


def gradient_sq(grid: Grid, w) -> np.ndarray:
    """|grad w|^2 by central differences on interior nodes (zero on the boundary)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(grid.shape)
    for ax, dx in enumerate(grid.dx):
        d = np.zeros(grid.shape)
        inner = [slice(None)] * grid.ndim
        inner[ax] = slice(1, -1)
        up = [slice(None)] * grid.ndim
        up[ax] = slice(2, None)
        dn = [slice(None)] * grid.ndim
        dn[ax] = slice(None, -2)
        d[tuple(inner)] = (w[tuple(up)] - w[tuple(dn)]) / (2 * dx)
        if grid.domain.faces[ax][0] == CENTER:
            first = [slice(None)] * grid.ndim
            first[ax] = 0
            second = [slice(None)] * grid.ndim
            second[ax] = 1
            d[tuple(first)] = (w[tuple(second)] - w[tuple(first)]) / (2 * dx)
        out += d**2
    return np.where(grid.interior_mask, out, 0.0)
