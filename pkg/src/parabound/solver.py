"""Finite-difference solvers for u_t - Lap u + V u^q = f with zero Dirichlet data.

Diffusion uses the theta scheme on the lattice Laplacian; the reaction
V u^q is split off (Lie splitting) and handled node by node, either
explicitly, by a backward-Euler scalar solve, or by the exact flow of
u' = -V u^q with V frozen over the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import Field, values_of
from .grid import Grid, laplacian_apply, laplacian_matrix

REACTIONS = ("explicit", "implicit", "flow")


class SolverError(RuntimeError):
    """A per-node nonlinear solve failed or the solution blew up."""


@dataclass(frozen=True)
class SolverOptions:
    """Time-stepping options.

    Attributes:
        theta: implicitness of the diffusion step, in [0.5, 1].
        reaction: "explicit", "implicit" (backward-Euler scalar Newton) or
            "flow" (exact per-node flow with V frozen over the step).
        delta_pos: positivity floor used when q < 0; None picks
            1e-10 times the data scale.
        newton_tol: relative tolerance of the scalar solves.
        max_newton: iteration cap of the scalar solves.
    """

    theta: float = 1.0
    reaction: str = "implicit"
    delta_pos: float | None = None
    newton_tol: float = 1e-13
    max_newton: int = 100

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0.5, 1]")
        if self.reaction not in REACTIONS:
            raise ValueError(f"reaction must be one of {REACTIONS}")
        if self.delta_pos is not None and self.delta_pos < 0:
            raise ValueError("delta_pos must be >= 0")


class _Diffusion:
    """Factorized theta step (I - theta dt L) u' = (I + (1-theta) dt L) u + dt g."""

    def __init__(self, grid: Grid, theta: float):
        self.grid = grid
        self.theta = theta
        L = laplacian_matrix(grid)
        n = L.shape[0]
        A = sp.identity(n, format="csc") - theta * grid.dt * L.tocsc()
        self.lu = splu(A.tocsc())
        self.L = L
        self.interior = grid.interior_mask.ravel()

    def step(self, u, g_old, g_new, bnd_new):
        dt, th = self.grid.dt, self.theta
        u = u.ravel()
        rhs = u + (1 - th) * dt * (self.L @ u) + dt * (th * g_new.ravel() + (1 - th) * g_old.ravel())
        rhs = np.where(self.interior, rhs, bnd_new.ravel())
        return self.lu.solve(rhs).reshape(self.grid.shape)


def solve_linear(grid: Grid, g=0.0, u0=0.0, boundary=0.0, theta: float = 1.0) -> Field:
    """Theta-scheme solution of w_t - Lap w = g with initial and Dirichlet data.

    Args:
        grid: the lattice.
        g: source (function, Field or lattice array).
        u0: initial datum.
        boundary: Dirichlet values on boundary nodes (also used on the
            artificial faces of truncated domains).
        theta: implicitness; 1 is backward Euler.
    """
    G = values_of(grid, g)
    U0 = values_of(grid, u0)[0]
    B = values_of(grid, boundary)
    diff = _Diffusion(grid, theta)
    out = np.empty((len(grid.times),) + grid.shape)
    out[0] = U0
    for k in range(grid.steps):
        out[k + 1] = diff.step(out[k], G[k], G[k + 1], B[k + 1])
    if not np.all(np.isfinite(out)):
        raise SolverError("linear solve produced non-finite values")
    return Field(grid, out, meta={"solver": "linear", "theta": theta})


# -- scalar reaction steps ----------------------------------------------------

def _flow(w, a, q):
    """Exact solution at time 1 of u' = -a u^q, u(0) = w (a already times dt).

    Returns (u, blown) where ``blown`` marks finite-time blow-up.
    """
    if q == 1:
        return w * np.exp(-a), np.zeros(w.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.power(w, 1.0 - q) - (1.0 - q) * a
        if q < 1:
            # u^{1-q} decreases to 0: extinction
            u = np.power(np.maximum(z, 0.0), 1.0 / (1.0 - q))
            blown = np.zeros(w.shape, dtype=bool)
        else:
            blown = z <= 0
            u = np.power(np.where(blown, 1.0, z), 1.0 / (1.0 - q))
    return u, blown


def _implicit(w, a, q, tol, maxit):
    """Continuous root branch of u + a u^q = w (a = dt V) by safeguarded Newton.

    Returns (u, status) with status 0 = converged, 1 = extinct (no positive
    root on the branch; u set to 0), 2 = no root (blow-up).
    """
    u = np.array(w, dtype=float)
    status = np.zeros(w.shape, dtype=int)
    if q == 1:
        bad = 1 + a <= 0
        status[bad] = 2
        return np.where(bad, w, w / np.where(bad, 1.0, 1 + a)), status
    active = (a != 0) & (w > 0)
    if 0 < q < 1:
        # growth with a concave rate: start right of the root, where F > 0
        grow = active & (a < 0)
        u[grow] = np.maximum(2 * w[grow], np.power(-2 * a[grow], 1.0 / (1.0 - q)))
    elif q < 0:
        # growth with a decreasing rate: the exact flow lies right of the root
        grow = active & (a < 0)
        u[grow] = _flow(w[grow], a[grow], q)[0]
    status[(w <= 0) & (a != 0)] = 1
    u[(w <= 0) & (a != 0)] = 0.0
    for _ in range(maxit):
        if not np.any(active):
            break
        ua, aa, wa = u[active], a[active], w[active]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            F = ua + aa * np.power(ua, q) - wa
            dF = 1 + aa * q * np.power(ua, q - 1)
        stalled = ~(dF > 0) | ~np.isfinite(F)
        new = ua - F / np.where(stalled, 1.0, dF)
        new = np.where(new <= 0, 0.1 * ua, new)
        done = np.abs(new - ua) <= tol * np.maximum(ua, 1e-300)
        idx = np.flatnonzero(active)
        u[idx] = np.where(stalled, ua, new)
        # stalled Newton: extinction when V >= 0 (q < 1), blow-up when V < 0
        st = np.where(aa > 0, 1, 2)
        status[idx[stalled]] = st[stalled]
        u[idx[stalled & (aa > 0)]] = 0.0
        active[idx[done | stalled]] = False
    if np.any(active):
        status[active] = 2
    return u, status


def _data_scale(grid, U0, F):
    scale = max(float(np.abs(U0).max(initial=0.0)), float(np.abs(F).max(initial=0.0)) * grid.T)
    return scale if scale > 0 else 1.0


def solve_semilinear(grid: Grid, V, f, u0, q: float, opts: SolverOptions | None = None) -> Field:
    """Solve u_t - Lap u + V u^q = f, u = 0 on the boundary, u(0) = u0.

    Returns:
        Field whose meta records the reaction treatment, the positivity floor
        and breaches (q < 0), and the explicit stability limit when relevant.

    Raises:
        SolverError: a scalar solve has no root (blow-up) or the solution is
            not finite.
    """
    opts = opts or SolverOptions()
    q = float(q)
    if q == 0:
        raise ValueError("q = 0 is not admitted")
    Vv = values_of(grid, V)
    Fv = values_of(grid, f)
    U0 = values_of(grid, u0)[0]
    if np.any(U0 < 0):
        raise ValueError("u0 must be nonnegative")
    interior = grid.interior_mask
    delta = None
    if q < 0:
        delta = opts.delta_pos if opts.delta_pos is not None else 1e-10 * _data_scale(grid, U0, Fv)
        if delta <= 0:
            raise ValueError("q < 0 needs a positive floor delta_pos")
    diff = _Diffusion(grid, opts.theta)
    zero = np.zeros(grid.shape)
    out = np.empty((len(grid.times),) + grid.shape)
    u = U0.copy()
    if delta is not None:
        u = np.where(interior & (u < delta), delta, u)
    out[0] = U0
    breaches = []
    stab = math.inf
    for k in range(grid.steps):
        w = diff.step(u, Fv[k], Fv[k + 1], zero)
        a = grid.dt * Vv[k + 1][interior]
        wi = w[interior]
        if q < 0 or q % 1:
            wi = np.maximum(wi, 0.0)
        if opts.reaction == "explicit":
            with np.errstate(all="ignore"):
                react = a * np.power(wi, q)
                slope = np.abs(q * Vv[k + 1][interior] * np.power(np.maximum(wi, 1e-300), q - 1))
            lim = float(np.min(1.0 / slope[slope > 0], initial=math.inf))
            stab = min(stab, lim)
            ui = wi - react
        elif opts.reaction == "flow":
            ui, blown = _flow(wi, a, q)
            if np.any(blown):
                raise SolverError(f"reaction blows up within step {k + 1}")
        else:
            ui, status = _implicit(wi, a, q, opts.newton_tol, opts.max_newton)
            if np.any(status == 2):
                raise SolverError(f"per-node solve has no root at step {k + 1} (blow-up)")
        if delta is not None:
            low = ui < 0.5 * delta
            if np.any(low):
                breaches.append((k + 1, int(low.sum()), float(ui.min())))
            ui = np.maximum(ui, delta)
        u = np.zeros(grid.shape)
        u[interior] = ui
        if not np.all(np.isfinite(u)):
            raise SolverError(f"solution is not finite at step {k + 1}")
        out[k + 1] = u
    meta = {"solver": "semilinear", "q": q, "reaction": opts.reaction, "theta": opts.theta,
            "delta_pos": delta, "positivity_breaches": breaches}
    if opts.reaction == "explicit":
        meta["dt_stability_limit"] = stab
        meta["dt_stable"] = grid.dt <= stab
    return Field(grid, out, meta=meta)


def _powq(u, q):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.power(u, q)


def sub_super_pair(h: Field, S_hqV: Field, q: float):
    """(subsolution, supersolution) built from h and S[h^q V].

    q < 0 (V >= 0): super = h, sub = h - lam^q S with lam = 1/(1 - 1/q).
    q > 1 (V <= 0): sub = h, super = h - lam^q S with lam = q/(q - 1).
    """
    q = float(q)
    H = h.values
    S = S_hqV.values
    if q < 0:
        lam = 1.0 / (1.0 - 1.0 / q)
        sub, sup = H - lam**q * S, H
    elif q > 1:
        lam = q / (q - 1.0)
        sub, sup = H, H - lam**q * S
    else:
        raise ValueError("sub/super pair needs q > 1 or q < 0")
    return Field(h.grid, sub, meta={"kind": "sub"}), Field(h.grid, sup, meta={"kind": "super"})


@dataclass
class IterationResult:
    field: Field
    iterations: int
    converged: bool
    sandwich_ok: bool
    violations: list
    monotone: bool

    def __iter__(self):
        return iter((self.field, self.iterations, self.converged))


def monotone_iteration(grid: Grid, V, f, u0, q: float, start: Field, opts: SolverOptions | None = None,
                       sub: Field | None = None, tol: float = 1e-10, k_max: int = 50,
                       eps: float = 0.0) -> IterationResult:
    """Picard iteration u_{k+1} = solve_linear(f - V u_k^q) from a supersolution.

    Args:
        start: the supersolution to start from.
        sub: optional subsolution; the sandwich sub <= u_k <= start is
            checked (within ``eps``) at every iterate, including k = 0.
        tol: stop when max |u_{k+1} - u_k| <= tol * max(1, max |u_k|).
        k_max: iteration cap.
        eps: slack of the sandwich and monotonicity checks.

    Returns:
        IterationResult, which unpacks as (field, iterations, converged).
    """
    opts = opts or SolverOptions()
    q = float(q)
    Vv = values_of(grid, V)
    Fv = values_of(grid, f)
    interior = np.broadcast_to(grid.interior_mask, Vv.shape)
    upper = start.values
    lower = sub.values if sub is not None else None
    violations = []
    monotone = True

    def check(u, k):
        if lower is not None:
            gap = float(np.max(np.where(interior, lower - u, -np.inf)))
            if gap > eps:
                violations.append({"iteration": k, "side": "below-sub", "amount": gap})
        gap = float(np.max(np.where(interior, u - upper, -np.inf)))
        if gap > eps:
            violations.append({"iteration": k, "side": "above-super", "amount": gap})

    u = upper.copy()
    check(u, 0)
    converged = False
    rise = 0.0
    k = 0
    for k in range(1, k_max + 1):
        src = np.where(interior, Fv - Vv * _powq(np.where(interior, u, 1.0), q), 0.0)
        new = solve_linear(grid, src, u0, 0.0, opts.theta).values
        rise = max(rise, float(np.max(new - u)))
        if np.any(new > u + eps + 1e-12 * np.abs(u)):
            monotone = False
        check(new, k)
        step = float(np.max(np.abs(new - u)))
        u = new
        if step <= tol * max(1.0, float(np.max(np.abs(u)))):
            converged = True
            break
    fld = Field(grid, u, meta={"solver": "monotone_iteration", "iterations": k,
                               "converged": converged, "violations": violations,
                               "max_rise": rise})
    return IterationResult(fld, k, converged, not violations, violations, monotone)


def residual(grid: Grid, u, V, f, q: float) -> Field:
    """Discrete u_t - Lap u + V u^q - f (backward difference in time).

    Defined at interior nodes and time levels k >= 1; other points are masked.

    Raises:
        ValueError: u^q undefined somewhere in the open cylinder.
    """
    U = values_of(grid, u)
    Vv = values_of(grid, V)
    Fv = values_of(grid, f)
    q = float(q)
    cyl = np.broadcast_to(grid.interior_mask, U.shape).copy()
    cyl[0] = False
    if q < 0 and np.any(U[cyl] <= 0):
        raise ValueError("u^q needs u > 0 when q < 0")
    if q % 1 and np.any(U[cyl] < 0):
        raise ValueError("u^q needs u >= 0 for fractional q")
    res = np.zeros(U.shape)
    dt = grid.dt
    for k in range(1, len(grid.times)):
        uq = _powq(np.where(grid.interior_mask, U[k], 1.0), q)
        res[k] = (U[k] - U[k - 1]) / dt - laplacian_apply(grid, U[k]) + Vv[k] * uq - Fv[k]
    res = np.where(cyl, res, 0.0)
    return Field(grid, res, mask=~cyl, meta={"operator": "residual"})
