"""Pointwise bounds for u_t - Lap u + V u^q = f and their side conditions, as Fields.

Writing S = S[h^q V] (or S[chi_u h^q V] for 0 < q < 1), every bound built
from h has the form h phi(-S/h) with phi from :mod:`parabound.phi`:

    q = 1       lower   h exp(-S/h)
    q > 1       lower   h {1 + (q-1) S/h}^{-1/(q-1)}     needs -(q-1) S < h
    0 < q < 1   lower   h {1 - (1-q) S/h}_+^{1/(1-q)}
    q < 0       upper   h {1 - (1-q) S/h}^{1/(1-q)}      needs (1-q) S < h

The h-free versions use S = S[V] (or S[chi_u V]) directly:

    q = 1       lower   exp(-S)
    q > 1       lower   {(q-1) S}^{-1/(q-1)}             needs S > 0
    0 < q < 1   lower   {-(1-q) S}_+^{1/(1-q)}
    q < 0       upper   {-(1-q) S}^{1/(1-q)}             needs S < 0

A side condition that fails masks the bound at that point instead of
raising: observing it fail on a numerical solution is itself a result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Field
from .phi import PhiFamily, phi_power

LOWER = "lower"
UPPER = "upper"
TWO_SIDED = "two-sided"


@dataclass(eq=False)
class BoundSet:
    """A bound on a grid with its per-point condition flags.

    Attributes:
        q: the exponent.
        kind: e.g. ``"thm31-lower"``, ``"thm32-upper"``, ``"thm33-envelope"``.
        bound: the bound (the lower envelope for two-sided kinds); masked
            where a side condition fails.
        upper: the upper envelope of two-sided kinds, else None.
        flags: per-point boolean arrays, True where the named property holds.
        summary: scalar summaries of the conditions over the open cylinder
            (interior nodes, t > 0).
    """

    q: float
    kind: str
    bound: Field
    upper: Field | None = None
    flags: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def direction(self) -> str:
        if self.upper is not None:
            return TWO_SIDED
        return UPPER if self.kind.endswith("upper") else LOWER

    @property
    def grid(self):
        return self.bound.grid


def _cylinder(grid) -> np.ndarray:
    """Interior nodes at t > 0, shape (K+1, *shape)."""
    m = np.broadcast_to(grid.interior_mask, (len(grid.times),) + grid.shape).copy()
    m[0] = False
    return m


def _vals(x):
    return np.asarray(x.values if isinstance(x, Field) else x, dtype=float)


def _check_q(q):
    if q == 0:
        raise ValueError("q = 0 is not admitted")


def _summarize(grid, flags: dict, required: tuple) -> dict:
    cyl = _cylinder(grid)
    out = {}
    for name, arr in flags.items():
        sel = arr[cyl]
        out[name] = {"holds_everywhere": bool(sel.all()), "count_false": int((~sel).sum()),
                     "required": name in required}
    return out


def thm31_bound(q, h: Field, S_hqV, S_chi_hqV=None) -> BoundSet:
    """Bound h phi(-S/h) with S = S[h^q V] (S[chi_u h^q V] for 0 < q < 1).

    Args:
        q: exponent, nonzero.
        h: the Field R[f; u0].
        S_hqV: S[h^q V] on the same grid.
        S_chi_hqV: S[chi_u h^q V]; required exactly when 0 < q < 1.

    Returns:
        A lower bound for q > 0, an upper bound for q < 0. Points with h = 0
        carry the limit value 0 and the ``boundary_limit`` flag.

    Raises:
        ValueError: q = 0, a missing S_chi for 0 < q < 1, or negative h.
    """
    _check_q(q)
    q = float(q)
    grid = h.grid
    H = _vals(h)
    if np.any(H < 0):
        raise ValueError("h must be nonnegative")
    if 0 < q < 1:
        if S_chi_hqV is None:
            raise ValueError("0 < q < 1 needs S[chi_u h^q V]")
        Sv = _vals(S_chi_hqV)
    else:
        Sv = _vals(S_hqV)
    fam = PhiFamily(q)
    zero = H == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(zero, 0.0, -Sv / np.where(zero, 1.0, H))
        B = np.where(zero, 0.0, H * phi_power(fam, s, 1.0))
    flags = {"boundary_limit": zero}
    required = ()
    if q > 1 or q < 0:
        # the strict inequality is 1 + (1-q) s > 0 for the base actually raised
        flags["strict"] = zero | ((1.0 - q) * s + 1.0 > 0.0)
        required = ("strict",)
    elif q < 1:
        flags["positive_part"] = ~zero & ((1.0 - q) * s + 1.0 <= 0.0)
    valid = np.ones_like(zero)
    for name in required:
        valid &= flags[name]
    valid &= np.isfinite(B)
    flags["valid"] = valid
    kind = "thm31-upper" if q < 0 else "thm31-lower"
    bound = Field(grid, np.where(valid, B, np.nan), mask=~valid, meta={"kind": kind})
    return BoundSet(q, kind, bound, flags=flags, summary=_summarize(grid, flags, required))


def thm32_bound(q, S_V, S_chiV=None, grid=None) -> BoundSet:
    """Bounds from S = S[V] alone (S[chi_u V] for 0 < q < 1).

    Raises:
        ValueError: q = 0 or a missing S_chiV for 0 < q < 1.
    """
    _check_q(q)
    q = float(q)
    src = S_chiV if 0 < q < 1 else S_V
    if src is None:
        raise ValueError("0 < q < 1 needs S[chi_u V]")
    grid = grid or src.grid
    Sv = _vals(src)
    flags = {}
    required = ()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if q == 1:
            B = np.exp(-Sv)
        elif q > 1:
            flags["strict"] = Sv > 0
            required = ("strict",)
            B = np.power(np.where(Sv > 0, (q - 1.0) * Sv, np.nan), -1.0 / (q - 1.0))
        elif q > 0:
            base = -(1.0 - q) * Sv
            flags["positive_part"] = base <= 0
            B = np.power(np.maximum(base, 0.0), 1.0 / (1.0 - q))
        else:
            flags["strict"] = Sv < 0
            required = ("strict",)
            B = np.power(np.where(Sv < 0, -(1.0 - q) * Sv, np.nan), 1.0 / (1.0 - q))
    valid = np.isfinite(B)
    for name in required:
        valid &= flags[name]
    flags["valid"] = valid
    kind = "thm32-upper" if q < 0 else "thm32-lower"
    bound = Field(grid, np.where(valid, B, np.nan), mask=~valid, meta={"kind": kind})
    return BoundSet(q, kind, bound, flags=flags, summary=_summarize(grid, flags, required))


def window_constant(q: float) -> float:
    """Threshold c with -S <= c h (q > 1) or S <= c h (q < 0)."""
    q = float(q)
    base = (1.0 - 1.0 / q) ** q
    return base / (q - 1.0) if q > 1 else base / (1.0 - q)


def thm33_window(q, h: Field, S_hqV) -> BoundSet:
    """Existence window and two-sided envelope.

    q > 1 (with V <= 0): window -S <= c h, envelope [h phi(-S/h), q/(q-1) h].
    q < 0 (with V >= 0): window S <= c h, envelope [h/(1 - 1/q), h phi(-S/h)].
    The sign of V is the caller's responsibility.

    Raises:
        ValueError: q in (0, 1].
    """
    q = float(q)
    if 0 <= q <= 1:
        raise ValueError("the existence window needs q > 1 or q < 0")
    grid = h.grid
    H = _vals(h)
    Sv = _vals(S_hqV)
    c = window_constant(q)
    window = (-Sv <= c * H) if q > 1 else (Sv <= c * H)
    base = thm31_bound(q, h, S_hqV)
    side = base.bound.values
    if q > 1:
        lo, hi = side, q / (q - 1.0) * H
    else:
        lo, hi = H / (1.0 - 1.0 / q), side
    flags = dict(base.flags)
    flags["window"] = window
    valid = window & base.flags["valid"]
    flags["valid"] = valid
    required = ("window",) + (("strict",) if "strict" in base.flags else ())
    lower = Field(grid, np.where(valid, lo, np.nan), mask=~valid, meta={"kind": "thm33-lower"})
    upper = Field(grid, np.where(valid, hi, np.nan), mask=~valid, meta={"kind": "thm33-upper"})
    summary = _summarize(grid, flags, required)
    summary["window_constant"] = c
    return BoundSet(q, "thm33-envelope", lower, upper=upper, flags=flags, summary=summary)


def chi_field(u: Field, threshold: float = 0.0) -> Field:
    """Indicator of {u > threshold}."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return Field(u.grid, (_vals(u) > threshold).astype(float), meta={"kind": "chi"})
