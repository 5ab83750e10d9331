"""Verification of bounds against numerical solutions.

Every verdict is gated by a discretization-error budget eps_num fitted from
two runs of the same problem (mesh widths dx, dt and dx/2, dt/4) to the
model C1 dx^2 + C2 dt. Conditions stated as limits at infinity are checked
as trends over the outermost trusted lattice shells ("proxy" checks).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .bounds import LOWER, TWO_SIDED, UPPER, BoundSet
from .fields import Field, FnSpec, as_fnspec, values_of
from .grid import INFINITY, Domain, Grid, laplacian_apply

PASS, FAIL, NOT_APPLICABLE = "pass", "fail", "not-applicable"

# relative round-off floor of every budget
ROUNDOFF = 1e-12


# -- error model ---------------------------------------------------------------

@dataclass
class EpsModel:
    """eps_num(dx, dt) = C1 dx^2 + C2 dt, plus a round-off floor.

    Attributes:
        C1, C2: fitted constants (>= 0).
        floor: absolute round-off allowance.
        safety: multiplier applied by ``budget``.
        difference: max |u_coarse - u_fine| on common trusted nodes.
        under_resolved: refinement did not behave asymptotically.
        dx, dt: mesh widths of the coarse run.
    """

    C1: float
    C2: float
    floor: float = 0.0
    safety: float = 2.0
    difference: float = 0.0
    under_resolved: bool = False
    dx: float = 0.0
    dt: float = 0.0
    notes: list = field(default_factory=list)

    def predict(self, dx: float, dt: float) -> float:
        """Modelled discretization error at mesh widths (dx, dt)."""
        return self.C1 * dx**2 + self.C2 * dt

    def budget(self, dx, dt: float) -> float:
        """Tolerance used for pass/fail: safety * prediction + floor."""
        dx = max(dx) if isinstance(dx, (tuple, list)) else dx
        return self.safety * self.predict(dx, dt) + self.floor

    @classmethod
    def fixed(cls, eps: float) -> EpsModel:
        """A constant budget (for tests and single-resolution runs)."""
        return cls(0.0, 0.0, floor=float(eps), safety=1.0)

    def __add__(self, other: EpsModel) -> EpsModel:
        """Budget for a difference of two independently discretized quantities."""
        return EpsModel(self.C1 + other.C1, self.C2 + other.C2, self.floor + other.floor,
                        max(self.safety, other.safety), max(self.difference, other.difference),
                        self.under_resolved or other.under_resolved, self.dx or other.dx,
                        self.dt or other.dt, self.notes + other.notes)

    def to_dict(self) -> dict:
        return asdict(self)


def _vals(x):
    return np.asarray(x.values if isinstance(x, Field) else x, dtype=float)


def _on_coarse(coarse: Grid, fine: Grid, U: np.ndarray) -> np.ndarray:
    """Fine-grid values at the coarse lattice nodes and time levels."""
    if coarse.ndim == fine.ndim and all(len(ca) <= len(fa) for ca, fa in zip(coarse.axes, fine.axes)):
        idx = []
        nested = True
        for ca, fa in zip(coarse.axes, fine.axes):
            j = np.searchsorted(fa, ca)
            j = np.clip(j, 0, len(fa) - 1)
            if not np.allclose(fa[j], ca, rtol=0, atol=1e-12 * max(1.0, np.abs(ca).max())):
                nested = False
                break
            idx.append(j)
        tj = np.clip(np.searchsorted(fine.times, coarse.times - 1e-12 * fine.T), 0, len(fine.times) - 1)
        if nested and np.allclose(fine.times[tj], coarse.times, atol=1e-12 * fine.T):
            return U[np.ix_(tj, *idx)]
    method = "cubic" if all(len(a) >= 4 for a in fine.axes) and len(fine.times) >= 4 else "linear"
    interp = RegularGridInterpolator((fine.times, *fine.axes), U, method=method,
                                     bounds_error=False, fill_value=None)
    mesh = np.meshgrid(coarse.times, *coarse.axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return interp(pts).reshape(mesh[0].shape)


def _diff4(grid: Grid, w: np.ndarray) -> np.ndarray:
    """Sum over axes of |fourth differences| at one time level (edges padded)."""
    out = np.zeros(grid.shape)
    for ax, dx in enumerate(grid.dx):
        if grid.shape[ax] < 5:
            continue
        d = np.zeros(grid.shape)
        sl = lambda a, b: tuple(slice(a, b) if i == ax else slice(None) for i in range(grid.ndim))
        n = grid.shape[ax]
        d[sl(2, n - 2)] = (w[sl(0, n - 4)] - 4 * w[sl(1, n - 3)] + 6 * w[sl(2, n - 2)]
                           - 4 * w[sl(3, n - 1)] + w[sl(4, n)]) / dx**4
        for i, j in ((0, 2), (1, 2), (n - 2, n - 3), (n - 1, n - 3)):
            d[sl(i, i + 1)] = d[sl(j, j + 1)]
        out += np.abs(d) * dx**2 / 12.0
    return out


def truncation_estimate(grid: Grid, v, floor: float = 0.0) -> np.ndarray:
    """Per-node size of the scheme's truncation error for the field ``v``.

    2 (dt/2 |v_tt| + sum dx^2/12 |d^4 v|) + floor, shape (K+1, *shape).
    """
    V = _vals(v)
    dt = grid.dt
    tt = np.zeros_like(V)
    if V.shape[0] >= 3:
        tt[2:] = np.abs(V[2:] - 2 * V[1:-1] + V[:-2]) / dt**2
        tt[1] = tt[2]
    space = np.stack([_diff4(grid, V[k]) for k in range(V.shape[0])])
    return 2.0 * (0.5 * dt * tt + space) + floor


def eps_model(coarse: Field, fine: Field, finer: Field | None = None) -> EpsModel:
    """Fit C1 dx^2 + C2 dt from a coarse run and a run at (dx/2, dt/4).

    Both error components shrink by 4 under that refinement, so with
    D = max |u_c - u_f| the coarse error is 4D/3. The split between C1 and
    C2 follows the relative size of the leading truncation terms on the
    fine run. The scenario is flagged under-resolved when values are not
    finite, when D exceeds 10% of the solution scale, or (given a third run)
    when the next refinement changes the solution by more than 1.1 D.
    """
    cg, fg = coarse.grid, fine.grid
    Uc = _vals(coarse)
    Uf = _on_coarse(cg, fg, _vals(fine))
    sel = np.broadcast_to(cg.interior_mask & cg.trusted_mask, Uc.shape).copy()
    sel[0] = False
    if coarse.mask is not None or fine.mask is not None:
        # masked points of a bound carry no value to compare
        sel &= coarse.valid & np.isfinite(Uc) & np.isfinite(Uf)
    scale = max(float(np.nanmax(np.abs(Uf[sel]), initial=0.0)), 1e-300)
    floor = ROUNDOFF * max(1.0, scale) * (1 + cg.steps)
    model = EpsModel(0.0, 0.0, floor=floor, dx=cg.h, dt=cg.dt)
    if not (np.all(np.isfinite(Uc[sel])) and np.all(np.isfinite(Uf[sel]))):
        model.under_resolved = True
        model.notes.append("non-finite values")
        return model
    D = float(np.max(np.abs(Uc - Uf)[sel], initial=0.0))
    model.difference = D
    e_c = 4.0 * D / 3.0
    trunc_x = trunc_t = 0.0
    Vf = _vals(fine)
    Vf = np.where(np.isfinite(Vf), Vf, 0.0)
    fsel = np.broadcast_to(fg.interior_mask & fg.trusted_mask, Vf.shape)
    if Vf.shape[0] >= 3:
        tt = np.abs(Vf[2:] - 2 * Vf[1:-1] + Vf[:-2]) / fg.dt**2
        trunc_t = 0.5 * cg.dt * float(np.max(tt[fsel[2:]], initial=0.0))
    sx = np.stack([_diff4(fg, Vf[k]) for k in range(Vf.shape[0])])
    trunc_x = float(np.max(sx[fsel], initial=0.0)) * (cg.h / fg.h) ** 2
    total = trunc_x + trunc_t
    alpha = trunc_x / total if total > 0 else 0.5
    model.C1 = alpha * e_c / cg.h**2
    model.C2 = (1 - alpha) * e_c / cg.dt
    if D > 0.1 * scale:
        model.under_resolved = True
        model.notes.append(f"coarse/fine difference {D:.3g} exceeds 10% of the solution scale")
    if finer is not None:
        U2 = _on_coarse(cg, finer.grid, _vals(finer))
        D2 = float(np.max(np.abs(Uf - U2)[sel], initial=0.0))
        if D2 > 1.1 * D + floor:
            model.under_resolved = True
            model.notes.append(f"refinement not monotone: {D2:.3g} > 1.1 x {D:.3g}")
    return model


# -- reports -------------------------------------------------------------------

@dataclass
class BoundReport:
    """Outcome of one verification.

    ``max_violation`` is signed: negative values measure how far inside the
    bound the solution stays.
    """

    scenario: str
    kind: str
    direction: str
    status: str
    max_violation: float
    location: dict
    eps_budget: float
    flags: dict = field(default_factory=dict)
    proxies: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    n_points: int = 0
    rows: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _budget(eps, grid: Grid) -> float:
    if isinstance(eps, EpsModel):
        return eps.budget(grid.h, grid.dt)
    return float(eps)


def _cylinder(grid: Grid, trusted: bool = True) -> np.ndarray:
    base = grid.interior_mask & (grid.trusted_mask if trusted else True)
    m = np.broadcast_to(base, (len(grid.times),) + grid.shape).copy()
    m[0] = False
    return m


def _location(grid: Grid, flat_index: int) -> dict:
    k, *idx = np.unravel_index(flat_index, (len(grid.times),) + grid.shape)
    return {"x": [float(grid.axes[a][i]) for a, i in enumerate(idx)], "t": float(grid.times[k])}


# per-point tables keep at most this many time levels (evenly strided, last
# included), fewer when a level has many nodes
TABLE_LEVELS = 64
TABLE_POINTS = 20000


def _rows(grid: Grid, U, B, viol, flags_text, sel):
    rows = []
    K = len(grid.times) - 1
    levels = max(2, min(TABLE_LEVELS, TABLE_POINTS // max(1, int(np.prod(grid.shape)))))
    stride = max(1, -(-K // levels))
    keep = np.zeros(K + 1, dtype=bool)
    keep[::-stride] = True
    sel = sel & keep.reshape((-1,) + (1,) * grid.ndim)
    ks, *ids = np.nonzero(sel)
    for n in range(len(ks)):
        k = ks[n]
        idx = tuple(i[n] for i in ids)
        x = [float(grid.axes[a][i]) for a, i in enumerate(idx)]
        rows.append((x, float(grid.times[k]), float(U[(k,) + idx]), float(B[(k,) + idx]),
                     float(viol[(k,) + idx]), flags_text[(k,) + idx]))
    return rows


def verify_bounds(u: Field, bounds: BoundSet, eps, scenario: str = "") -> BoundReport:
    """Compare a solution with a bound on the open cylinder.

    Lower bounds report max(bound - u), upper bounds max(u - bound), and
    two-sided envelopes the larger of both. Masked bound points and nodes
    near artificial faces are skipped. Pass iff the max violation is within
    the budget.

    Raises:
        ValueError: u and the bound live on different lattices.
    """
    grid = u.grid
    bg = bounds.grid
    if grid is not bg and (grid.shape != bg.shape or len(grid.times) != len(bg.times)
                           or not np.allclose(grid.times, bg.times)):
        raise ValueError("solution and bound live on different grids")
    U = _vals(u)
    lo = bounds.bound.values
    valid = bounds.flags.get("valid", np.ones(U.shape, dtype=bool))
    cyl = _cylinder(grid)
    sel = cyl & valid
    with np.errstate(invalid="ignore"):
        if bounds.direction == LOWER:
            viol = lo - U
            shown = lo
        elif bounds.direction == UPPER:
            viol = U - lo
            shown = lo
        else:
            up = bounds.upper.values
            below, above = lo - U, U - up
            viol = np.maximum(below, above)
            shown = np.where(below >= above, lo, up)
    budget = _budget(eps, grid)
    notes = []
    if np.any(sel):
        v = np.where(sel, viol, -np.inf)
        flat = int(np.argmax(v))
        maxv = float(v.ravel()[flat])
        loc = _location(grid, flat)
        status = PASS if maxv <= budget else FAIL
    else:
        maxv, loc, status = -math.inf, {}, PASS
        notes.append("no unmasked points: vacuous pass")
    masked = cyl & ~valid
    if np.any(masked):
        notes.append(f"{int(masked.sum())} points masked by failed side conditions")
    text = np.full(U.shape, "", dtype=object)
    for name, arr in bounds.flags.items():
        if name == "valid":
            continue
        info = bounds.summary.get(name, {})
        if isinstance(info, dict) and info.get("required"):
            text = np.where(~arr, text + f"{name}-failed|", text)
        else:
            text = np.where(arr, text + f"{name}|", text)
    text = np.where(text == "", "ok", np.char.rstrip(text.astype(str), "|"))
    rows = _rows(grid, U, shown, np.where(sel, viol, np.nan), text, cyl)
    flag_summary = {k: v for k, v in bounds.summary.items()}
    return BoundReport(scenario, bounds.kind, bounds.direction, status, maxv, loc, budget,
                       flags=flag_summary, notes=notes, n_points=int(sel.sum()), rows=rows)


def comparison_oracle(grid: Grid, v: Field, g, side: str, S_g: Field, eps,
                      scenario: str = "", floor: float | None = None) -> BoundReport:
    """Check v >= S[g] (side "super") or v <= S[g] (side "sub").

    The hypotheses are checked first: the discrete residual v_t - Lap v - g
    must have the sign of ``side`` up to the local truncation estimate, and
    v must be >= 0 (super) or <= 0 (sub) on the parabolic boundary within
    the budget. If they fail, the status is "not-applicable".
    """
    if side not in ("super", "sub"):
        raise ValueError("side must be 'super' or 'sub'")
    V = _vals(v)
    G = values_of(grid, g)
    S = _vals(S_g)
    budget = _budget(eps, grid)
    dt = grid.dt
    res = np.zeros(V.shape)
    for k in range(1, V.shape[0]):
        res[k] = (V[k] - V[k - 1]) / dt - laplacian_apply(grid, V[k]) - G[k]
    scale = max(float(np.abs(V).max(initial=0.0)), float(np.abs(G).max(initial=0.0)), 1.0)
    fl = ROUNDOFF * scale / dt if floor is None else floor
    tol = truncation_estimate(grid, V, fl)
    cyl = _cylinder(grid)
    sign = 1.0 if side == "super" else -1.0
    res_defect = np.where(cyl, -sign * res - tol, -np.inf)
    hyp_res = float(res_defect.max(initial=-np.inf))
    parabolic = np.broadcast_to(grid.boundary_mask, V.shape).copy()
    parabolic[0] = True
    bnd_defect = float(np.max(np.where(parabolic, -sign * V, -np.inf)))
    proxies = {"residual_sign_defect": hyp_res, "parabolic_boundary_defect": bnd_defect}
    notes = []
    if hyp_res > 0:
        notes.append(f"{side}solution residual hypothesis fails (defect {hyp_res:.3g})")
    if bnd_defect > budget:
        notes.append(f"parabolic boundary sign hypothesis fails (defect {bnd_defect:.3g})")
    viol = sign * (S - V)
    sel = cyl
    vv = np.where(sel, viol, -np.inf)
    flat = int(np.argmax(vv))
    maxv = float(vv.ravel()[flat])
    if notes:
        status = NOT_APPLICABLE
    else:
        status = PASS if maxv <= budget else FAIL
    text = np.full(V.shape, side, dtype=object)
    rows = _rows(grid, V, S, np.where(sel, viol, np.nan), text, sel)
    return BoundReport(scenario, f"comparison-{side}", LOWER if side == "super" else UPPER,
                       status, maxv, _location(grid, flat), budget, proxies=proxies,
                       notes=notes, n_points=int(sel.sum()), rows=rows)


# -- subsolution weights Z -------------------------------------------------------

@dataclass(frozen=True)
class ZSpec:
    """A function Z with Lap Z >= mu Z, bounded above and -> -inf at infinity."""

    Z: FnSpec
    mu: float
    domain: Domain

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        object.__setattr__(self, "Z", as_fnspec(self.Z))

    def values(self, grid: Grid) -> np.ndarray:
        return np.array(np.broadcast_to(self.Z(grid.points, 0.0), grid.shape), dtype=float)


def _outer_shells(grid: Grid, K: int, trusted: bool):
    """Index arrays (per unbounded end) of the K outermost usable nodes along axis 0."""
    out = []
    faces = grid.domain.faces
    if grid.ndim != 1:
        raise NotImplementedError("shell trends are implemented for one-axis lattices")
    ok = grid.interior_mask & (grid.trusted_mask if trusted else True)
    idx = np.flatnonzero(ok)
    if faces[0][1] == INFINITY and len(idx):
        out.append(idx[-K:])
    if faces[0][0] == INFINITY and len(idx):
        out.append(idx[:K][::-1])
    return out


def _trend(r, y) -> tuple[float, float]:
    """Linear fit of y over r; returns (slope, value extrapolated one span outward)."""
    r = np.asarray(r, float)
    y = np.asarray(y, float)
    if len(r) < 2:
        return 0.0, float(y[-1])
    slope, icpt = np.polyfit(r, y, 1)
    reach = r[-1] + (r[-1] - r[0])
    return float(slope), float(slope * reach + icpt)


def z_check(z: ZSpec, grid: Grid, shells: int = 5, tol: float | None = None,
            scenario: str = "") -> BoundReport:
    """Check Lap Z >= mu Z on the lattice, sup Z < inf and decay at infinity.

    The decay and boundedness checks look at the trend of Z over the
    outermost ``shells`` nodes toward each unbounded end (a proxy).
    """
    Zv = z.values(grid)
    lap = laplacian_apply(grid, Zv)
    interior = grid.interior_mask
    est = _diff4(grid, Zv) * 2.0
    scale = max(float(np.abs(Zv).max(initial=0.0)), 1.0)
    tol_v = est + (ROUNDOFF * scale / min(grid.dx) ** 2 if tol is None else tol)
    defect = np.where(interior, z.mu * Zv - lap - tol_v, -np.inf)
    flat = int(np.argmax(defect))
    sub_ok = bool(defect.max() <= 0)
    maxv = float(np.where(interior, z.mu * Zv - lap, -np.inf).max())
    checks = {"subsolution": sub_ok, "bounded_above": bool(np.all(np.isfinite(Zv)))}
    slopes = []
    for idx in _outer_shells(grid, shells, trusted=False):
        r = np.abs(grid.axes[0][idx])
        slope, _ = _trend(r, Zv[idx])
        slopes.append(slope)
    if slopes:
        checks["bounded_above"] = checks["bounded_above"] and all(s <= 0 for s in slopes)
        checks["decays"] = all(s < -ROUNDOFF * scale for s in slopes)
    else:
        checks["decays"] = True
    status = PASS if all(checks.values()) else FAIL
    k_idx = np.unravel_index(flat, grid.shape)
    loc = {"x": [float(grid.axes[a][i]) for a, i in enumerate(k_idx)], "t": 0.0}
    notes = [] if slopes else ["no unbounded direction: decay checks vacuous"]
    return BoundReport(scenario, "z-subsolution", "lower", status, maxv, loc, 0.0,
                       flags=checks, proxies={"outer_slopes": slopes}, notes=notes,
                       n_points=int(interior.sum()))


def growth_ratio(u: Field, h: Field | None, q: float, z: ZSpec) -> np.ndarray:
    """sup_t of h^q (u^{1-q} - h^{1-q}) / |Z| per node (u^{1-q}/|Z| when h is None).

    Raises:
        ValueError: |Z| < 1e-8 at a node where the ratio is needed.
    """
    grid = u.grid
    U = _vals(u)
    Zv = np.abs(z.values(grid))
    sel = grid.interior_mask
    if np.any(Zv[sel] < 1e-8):
        raise ValueError("|Z| below 1e-8: ratio undefined")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if h is None:
            num = np.power(U[1:], 1.0 - q)
        else:
            H = _vals(h)[1:]
            num = np.power(H, q) * (np.power(U[1:], 1.0 - q) - np.power(H, 1.0 - q))
    num = np.where(np.isfinite(num), num, 0.0)
    return np.where(sel, num.max(axis=0) / np.where(sel, Zv, 1.0), np.nan)


def refined_growth_check(u: Field, h: Field | None, q: float, z: ZSpec, shells: int = 5) -> float:
    """Trend proxy for the limsup at infinity of the Z-weighted growth ratio.

    On the outermost ``shells`` trusted nodes the ratio is fitted linearly
    against s = 1/|Z| and extrapolated to s = 0 (the limit Z -> -inf), so a
    ratio decaying like 1/|Z| extrapolates to 0 and one growing like |Z|
    to a large positive value. Returns min(extrapolation, max ratio on the
    shells); values <= 0 (up to the caller's budget) support the weighted
    comparison path.
    """
    if q >= 0:
        raise ValueError("the weighted growth check applies to q < 0")
    ratio = growth_ratio(u, h, q, z)
    grid = u.grid
    Zabs = np.abs(z.values(grid))
    vals = []
    for idx in _outer_shells(grid, shells, trusted=True):
        s = 1.0 / Zabs[idx]
        y = ratio[idx]
        if len(idx) >= 2 and np.ptp(s) > 0:
            slope, icpt = np.polyfit(s, y, 1)
            ext = float(icpt)
        else:
            ext = float(y[-1])
        vals.append(min(ext, float(np.max(y))))
    if not vals:
        raise ValueError("domain has no unbounded direction")
    return max(vals)


def decay_check(u: Field, shells: int = 5) -> float:
    """Trend proxy for lim sup_t u = 0 at infinity; 0 for bounded domains."""
    grid = u.grid
    U = _vals(u)
    sup_t = np.abs(U[1:]).max(axis=0)
    vals = []
    for idx in _outer_shells(grid, shells, trusted=True):
        r = np.abs(grid.axes[0][idx])
        _, ext = _trend(r, sup_t[idx])
        vals.append(max(0.0, min(ext, float(np.max(sup_t[idx])))))
    return max(vals) if vals else 0.0


# -- serialization -------------------------------------------------------------

CSV_HEADER = ("x1", "x2", "x3", "t", "u", "bound", "violation", "flags")


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_points_csv(path, reports) -> None:
    """One row per verified point of every report (coordinates padded to 3)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rep in reports:
            for x, t, u, b, viol, flags in rep.rows:
                xs = [_fmt(c) for c in x] + [""] * (3 - len(x))
                w.writerow(xs + [_fmt(t), _fmt(u), _fmt(b), _fmt(viol), f"{rep.kind}:{flags}"])


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
