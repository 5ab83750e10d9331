"""Scalar data of (x, t): functions (``FnSpec``) and sampled lattice values (``Field``)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .expr import Expression, parse_expression
from .grid import Grid


class FnSpec:
    """A scalar function g(x, t) evaluated elementwise on numpy arrays.

    ``x`` is an array for one-axis geometries and a tuple of per-axis arrays
    otherwise. Expressions see the coordinates as ``x, y, z``; on one-axis
    geometries ``r`` is an alias of ``x``.
    """

    def __init__(self, func, label: str = "<fn>", time_dependent: bool = True):
        self.func = func
        self.label = label
        self.time_dependent = time_dependent

    def __repr__(self):
        return f"FnSpec({self.label})"

    def __call__(self, x, t=0.0):
        return np.asarray(self.func(x, t), dtype=float)

    @classmethod
    def const(cls, c: float) -> FnSpec:
        c = float(c)

        def f(x, t):
            shape = np.broadcast_shapes(*(np.shape(a) for a in _axes(x)), np.shape(t))
            return np.full(shape, c)

        return cls(f, label=repr(c), time_dependent=False)

    @classmethod
    def expr(cls, src) -> FnSpec:
        e = src if isinstance(src, Expression) else parse_expression(src)

        def f(x, t):
            axes = _axes(x)
            env = {"t": np.asarray(t, dtype=float)}
            for name, a in zip("xyz", axes):
                env[name] = a
            if len(axes) == 1:
                env["r"] = axes[0]
            env = {k: v for k, v in env.items() if k in e.variables}
            if not env:
                shape = np.broadcast_shapes(*(np.shape(a) for a in axes), np.shape(t))
                return np.broadcast_to(e(), shape)
            val = e(**env)
            shape = np.broadcast_shapes(*(np.shape(a) for a in axes), np.shape(t))
            return np.broadcast_to(val, shape)

        return cls(f, label=str(e), time_dependent="t" in e.variables)

    @classmethod
    def table(cls, grid: Grid, values) -> FnSpec:
        """Piecewise-linear interpolant of lattice values of shape (K+1, *shape)."""
        values = np.asarray(values, dtype=float)
        interp = RegularGridInterpolator((grid.times, *grid.axes), values,
                                         bounds_error=False, fill_value=None)

        def f(x, t):
            axes = _axes(x)
            shape = np.broadcast_shapes(*(np.shape(a) for a in axes), np.shape(t))
            pts = [np.broadcast_to(np.asarray(t, float), shape)] + [np.broadcast_to(a, shape) for a in axes]
            return interp(np.stack([p.ravel() for p in pts], axis=-1)).reshape(shape)

        return cls(f, label="<table>")

    def on_grid(self, grid: Grid) -> np.ndarray:
        """Values at every lattice node and time level, shape (K+1, *shape)."""
        pts = grid.points
        if self.time_dependent:
            t = grid.times.reshape((-1,) + (1,) * grid.ndim)
            return np.array(np.broadcast_to(self(pts, t), (len(grid.times),) + grid.shape))
        v = self(pts, 0.0)
        return np.array(np.broadcast_to(v, (len(grid.times),) + grid.shape))

    def at(self, grid: Grid, t: float) -> np.ndarray:
        return np.array(np.broadcast_to(self(grid.points, t), grid.shape))


def _axes(x):
    if isinstance(x, tuple):
        return x
    return (np.asarray(x, dtype=float),)


def as_fnspec(g) -> FnSpec:
    """Coerce numbers, expression strings and callables to FnSpec."""
    if isinstance(g, FnSpec):
        return g
    if isinstance(g, (int, float)):
        return FnSpec.const(g)
    if isinstance(g, (str, Expression)):
        return FnSpec.expr(g)
    if callable(g):
        return FnSpec(g)
    raise TypeError(f"cannot interpret {type(g).__name__} as a function of (x, t)")


@dataclass(eq=False)
class Field:
    """Lattice values, shape ``(K+1, *grid.shape)``; masked points are excluded from norms."""

    grid: Grid
    values: np.ndarray
    mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (len(self.grid.times),) + self.grid.shape
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} does not match grid {expected}")
        if self.mask is not None:
            self.mask = np.broadcast_to(np.asarray(self.mask, dtype=bool), expected)

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.values.shape, dtype=bool)
        return ~self.mask

    def max_abs(self) -> float:
        v = np.abs(self.values[self.valid])
        return float(v.max()) if v.size else 0.0

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def values_of(grid: Grid, g) -> np.ndarray:
    """Lattice values of a Field, array or anything ``as_fnspec`` accepts."""
    if isinstance(g, Field):
        return g.values
    if isinstance(g, np.ndarray):
        expected = (len(grid.times),) + grid.shape
        return np.array(np.broadcast_to(g, expected), dtype=float)
    return as_fnspec(g).on_grid(grid)
