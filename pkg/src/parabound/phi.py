"""The family phi' = phi^q, phi(0) = 1, its inverse, and the hphi(v) identity.

With b(s) = (1 - q) s + 1:

    phi(s)   = e^s                      (q = 1)
             = b^{1/(1-q)}              (q != 1)
    phi'(s)  = phi(s)^q = b^{q/(1-q)}
    phi''(s) = q phi(s)^{2q-1} = q b^{(2q-1)/(1-q)}

I_q, the maximal interval where phi is finite, positive and increasing, is
(-inf, 1/(q-1)) for q > 1, the real line for q = 1 and (-1/(1-q), inf) for
q < 1. For 0 < q < 1 phi extends to all of R by taking the positive part
of b. The inverse goes through expm1 so that it keeps full relative
accuracy near w = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import Field
from .grid import Grid, gradient_sq, laplacian_apply


class PhiDomainError(ValueError):
    """Argument outside the closed interval where phi is defined."""


@dataclass
class PhiFamily:
    """The exponent q and its interval I_q = (lo, hi).

    Attributes:
        q: nonzero real exponent.
        eps: arguments within ``eps`` (relative) beyond an endpoint are
            clamped to it; ``clamped`` counts how often that happened.
    """

    q: float
    eps: float = 1e-14
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.q = float(self.q)
        if self.q == 0.0 or not math.isfinite(self.q):
            raise ValueError("q must be a nonzero finite real")

    @property
    def lo(self) -> float:
        return -1.0 / (1.0 - self.q) if self.q < 1 else -math.inf

    @property
    def hi(self) -> float:
        return 1.0 / (self.q - 1.0) if self.q > 1 else math.inf

    @property
    def extended(self) -> bool:
        """True when phi is extended by its positive part to all of R."""
        return 0.0 < self.q < 1.0

    def contains(self, s, closed: bool = False) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if closed:
            return (s >= self.lo) & (s <= self.hi)
        return (s > self.lo) & (s < self.hi)

    def _clamp(self, s, closed: bool = True):
        """Clamp arguments within eps of an endpoint; raise beyond that."""
        s = np.array(s, dtype=float)
        if self.extended or self.q == 1.0:
            return s
        for end, outside in ((self.lo, s < self.lo), (self.hi, s > self.hi)):
            if not math.isfinite(end) or not np.any(outside):
                continue
            slack = self.eps * max(1.0, abs(end))
            near = outside & (np.abs(s - end) <= slack)
            if np.any(outside & ~near):
                raise PhiDomainError(f"argument outside the closure of I_q for q={self.q}")
            self.clamped += int(np.count_nonzero(near))
            s[near] = end
        if not closed and np.any(~self.contains(s)):
            raise PhiDomainError(f"argument at an endpoint of I_q for q={self.q}")
        return s

    def log_phi(self, s):
        """log phi(s) = log1p((1-q)s) / (1-q); -inf where phi vanishes."""
        q = self.q
        s = np.asarray(s, dtype=float)
        if q == 1.0:
            return s
        a = (1.0 - q) * s
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log1p(np.maximum(a, -1.0)) / (1.0 - q)
        return out


def phi(fam: PhiFamily, s):
    """phi(s) on the closure of I_q (all of R when 0 < q < 1).

    Raises:
        PhiDomainError: s beyond the closed interval for q > 1 or q < 0.
    """
    s = fam._clamp(s)
    out = phi_power(fam, s, 1.0)
    return out if out.ndim else float(out)


def phi_inv(fam: PhiFamily, w):
    """Inverse of phi: (w^{1-q} - 1)/(1 - q), log w for q = 1.

    For q < 1 the value at w = 0 is the left endpoint -1/(1-q).

    Raises:
        PhiDomainError: w < 0, or w = 0 with q >= 1.
    """
    q = fam.q
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or (q >= 1 and np.any(w == 0)) or np.any(np.isnan(w)):
        raise PhiDomainError(f"phi_inv needs w > 0 (w >= 0 when q < 1), q={q}")
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    if q == 1.0:
        out = lw
    else:
        out = np.expm1((1.0 - q) * lw) / (1.0 - q)
    return out if out.ndim else float(out)


def phi_derivatives(fam: PhiFamily, s):
    """(phi'(s), phi''(s)) on the open interval I_q.

    Raises:
        PhiDomainError: s at or beyond an endpoint.
    """
    q = fam.q
    s = np.asarray(s, dtype=float)
    if not fam.extended and np.any(~fam.contains(s)):
        raise PhiDomainError(f"derivatives need s inside I_q, q={q}")
    d1 = phi_power(fam, s, q)
    d2 = q * phi_power(fam, s, 2.0 * q - 1.0)
    if fam.extended:
        dead = (1.0 - q) * s + 1.0 <= 0.0
        d1 = np.where(dead, 0.0, d1)
        d2 = np.where(dead, 0.0, d2)
    if d1.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def phi_power(fam: PhiFamily, s, m: float):
    """phi(s)^m = b^{m/(1-q)} (e^{m s} for q = 1), with b clipped at 0."""
    q = fam.q
    s = np.asarray(s, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        if q == 1.0:
            return np.exp(m * s)
        a = (1.0 - q) * s
        b = np.maximum(a + 1.0, 0.0)
        out = np.power(b, m / (1.0 - q))
        # forming b rounds away small s; log1p keeps it when |a| is small
        small = np.abs(a) < 0.5
        if np.any(small):
            out = np.where(small, np.exp(m * np.log1p(np.where(small, a, 0.0)) / (1.0 - q)), out)
        return out


def ode_pair(fam: PhiFamily, s):
    """Both sides of phi' = phi^q from closed forms: (b^{q/(1-q)}, phi(s)^q)."""
    q = fam.q
    s = np.asarray(s, dtype=float)
    if q == 1.0:
        return np.exp(s), np.exp(s)
    b = np.maximum((1.0 - q) * s + 1.0, 0.0)
    return np.power(b, q / (1.0 - q)), np.power(np.power(b, 1.0 / (1.0 - q)), q)


def ratio_gap(fam: PhiFamily, v):
    """v - (phi(v) - 1)/phi'(v), which is >= 0 for q > 0 and <= 0 for q < 0.

    Algebraically this equals q v - 1 + b^{-q/(1-q)}; near v = 0 the
    cancellation is avoided with the binomial series, whose leading term is
    q v^2 / 2.
    """
    q = fam.q
    v = np.asarray(v, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        direct = q * v + np.expm1(-q * fam.log_phi(v))
    scale = max(1.0, abs(1.0 - q), abs(q))
    small = np.abs(v) * scale < 0.05
    if np.any(small):
        vs = v[small] if v.ndim else v
        term = np.ones_like(vs)
        total = np.zeros_like(vs)
        for k in range(1, 40):
            term = term * (-(q + (k - 1) * (1.0 - q)) * vs / k)
            if k >= 2:
                total = total + term
        if v.ndim:
            direct = np.array(direct)
            direct[small] = total
        else:
            direct = total
    return direct if np.ndim(direct) else float(direct)


# -- the identity for d/dt - Laplacian of h phi(v) ---------------------------

def _heat(grid: Grid, w: np.ndarray) -> np.ndarray:
    """Central-difference d/dt - Laplacian at interior time levels 1..K-1."""
    dt = grid.dt
    out = np.zeros_like(w)
    out[1:-1] = (w[2:] - w[:-2]) / (2 * dt)
    for k in range(1, w.shape[0] - 1):
        out[k] -= laplacian_apply(grid, w[k])
    return out


def lemma41_residual(grid: Grid, h: Field, v: Field, fam: PhiFamily) -> Field:
    """Discrete defect of the product rule

        (d_t - Lap)[h phi(v)] = phi'(v) (d_t - Lap)(h v) - phi''(v) |grad v|^2 h
                                + (phi(v) - v phi'(v)) (d_t - Lap) h,

    with central differences in space and time. Values are defined at
    interior nodes and interior time levels; everything else is masked.

    Raises:
        PhiDomainError: v leaves I_q somewhere.
    """
    H = np.asarray(h.values if isinstance(h, Field) else h, dtype=float)
    Vv = np.asarray(v.values if isinstance(v, Field) else v, dtype=float)
    expected = (len(grid.times),) + grid.shape
    if H.shape != expected or Vv.shape != expected:
        raise ValueError("h and v must live on the grid")
    if np.any(H <= 0):
        raise ValueError("h must be positive")
    if not fam.extended and np.any(~fam.contains(Vv)):
        raise PhiDomainError("v leaves I_q")
    P = phi(fam, Vv)
    d1, d2 = phi_derivatives(fam, Vv)
    lhs = _heat(grid, H * P)
    grad2 = np.stack([gradient_sq(grid, Vv[k]) for k in range(len(grid.times))])
    rhs = d1 * _heat(grid, H * Vv) - d2 * grad2 * H + (P - Vv * d1) * _heat(grid, H)
    res = lhs - rhs
    mask = np.ones(expected, dtype=bool)
    mask[1:-1] = ~grid.interior_mask
    res = np.where(mask, 0.0, res)
    return Field(grid, res, mask=mask, meta={"operator": "lemma41"})
