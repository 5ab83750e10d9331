"""Scenario files and the pipeline that turns one into verified reports.

A scenario is a JSON object::

    {
      "name": "thm31-q2-interval",
      "theorem": "3.1",
      "domain": {"kind": "interval", "a": 0, "b": 1},
      "grid": {"resolution": 41, "T": 0.5, "steps": 40},
      "q": 2,
      "V": "1 + 2*sin(2*pi*x)", "f": "1", "u0": "sin(pi*x)",
      "solver": {"reaction": "implicit"},
      "tolerances": {"shells": 5}
    }

``theorem`` selects the check: "3.1" and "3.2" (pointwise bounds with and
without a source), "3.3" (existence window and envelope via monotone
iteration), "3.4" / "3.5" (the Z-weighted variants for q < 0, which also
need "Z" and "mu"), "comparison" (linear solve against the Duhamel
quadrature) and "lemma" (convergence of the product-rule identity, with
"h" and "v" expressions).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import BoundSet, chi_field, thm31_bound, thm32_bound, thm33_window
from .duhamel import DivergenceError, S_field, h_field
from .expr import ExpressionError, parse_expression
from .fields import Field, FnSpec, values_of
from .grid import Domain, DomainError, Grid, build_grid
from .harness import (FAIL, NOT_APPLICABLE, PASS, BoundReport, EpsModel, ZSpec,
                      comparison_oracle, decay_check, eps_model, refined_growth_check,
                      verify_bounds, write_points_csv, write_summary_json, z_check)
from .kernel import Kernel
from .phi import PhiDomainError, PhiFamily, lemma41_residual
from .solver import (SolverError, SolverOptions, monotone_iteration, solve_linear,
                     solve_semilinear, sub_super_pair)

THEOREMS = ("3.1", "3.2", "3.3", "3.4", "3.5", "comparison", "lemma")
UNDER_RESOLVED = "under-resolved"


class ScenarioError(Exception):
    """A scenario failed; the message names the scenario."""


class ConfigError(ScenarioError):
    """The scenario file is malformed or inconsistent with its theorem."""


@dataclass(frozen=True)
class Scenario:
    name: str
    theorem: str
    domain: dict
    grid: dict
    q: float = 1.0
    V: str = "0"
    f: str = "0"
    u0: str = "0"
    Z: str | None = None
    mu: float | None = None
    h: str | None = None
    v: str | None = None
    solver: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    description: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        if not isinstance(d, dict):
            raise ConfigError("scenario must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"{d.get('name', '?')}: unknown keys {sorted(extra)}")
        for key in ("name", "theorem", "domain", "grid"):
            if key not in d:
                raise ConfigError(f"{d.get('name', '?')}: missing key {key!r}")
        d = dict(d)
        for key in ("V", "f", "u0", "Z", "h", "v"):
            if isinstance(d.get(key), (int, float)):
                d[key] = repr(float(d[key]))
        try:
            s = cls(**d)
        except TypeError as err:
            raise ConfigError(f"{d['name']}: {err}") from None
        s.validate()
        return s

    @classmethod
    def load(cls, path) -> Scenario:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"{path}: {err}") from None
        return cls.from_dict(data)

    # -- construction -------------------------------------------------------

    def build_domain(self) -> Domain:
        d = dict(self.domain)
        kind = d.pop("kind", None)
        inf = lambda v: math.inf if v is None else float(v)
        try:
            if kind == "line":
                return Domain.real_line(d.get("R_trunc"))
            if kind == "interval":
                return Domain.interval(d["a"], d["b"])
            if kind == "box":
                ivs = [(-math.inf if a is None else a, inf(b)) for a, b in d["intervals"]]
                return Domain.box(*ivs, R_trunc=d.get("R_trunc"))
            if kind == "radial_euclidean":
                return Domain.radial_euclidean(d.get("n", 3), d.get("r_in", 0.0), inf(d.get("r_out")),
                                               d.get("R_trunc"))
            if kind == "hyperbolic3":
                return Domain.radial_hyperbolic3(d.get("r_in", 0.0), inf(d.get("r_out")),
                                                 d.get("R_trunc"))
        except (KeyError, TypeError, DomainError) as err:
            raise ConfigError(f"{self.name}: bad domain {self.domain}: {err}") from None
        raise ConfigError(f"{self.name}: unknown domain kind {kind!r}")

    def build_grid(self, resolution: int | None = None) -> Grid:
        """Coarse grid; a new resolution rescales the steps to keep dt / dx^2."""
        g = self.grid
        n = int(g["resolution"])
        steps = int(g["steps"])
        if resolution is not None and resolution != n:
            steps = max(1, round(steps * ((resolution - 1) / (n - 1)) ** 2))
            n = int(resolution)
        try:
            return build_grid(self.build_domain(), n, float(g["T"]), steps, g.get("R_trunc"))
        except DomainError as err:
            raise ConfigError(f"{self.name}: {err}") from None

    def fn(self, key: str) -> FnSpec:
        return FnSpec.expr(getattr(self, key))

    def options(self) -> SolverOptions:
        try:
            return SolverOptions(**self.solver)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"{self.name}: solver options: {err}") from None

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        """Parse expressions, sample them, and check the theorem's regime.

        Raises:
            ConfigError: with a diagnostic naming the offending field.
        """
        name = self.name
        if self.theorem not in THEOREMS:
            raise ConfigError(f"{name}: theorem must be one of {THEOREMS}, got {self.theorem!r}")
        for key in ("resolution", "T", "steps"):
            if key not in self.grid:
                raise ConfigError(f"{name}: grid needs {key!r}")
        try:
            q = float(self.q)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: q must be a number") from None
        if q == 0 or not math.isfinite(q):
            raise ConfigError(f"{name}: q must be a nonzero finite number")
        keys = ["V", "f", "u0"] + [k for k in ("Z", "h", "v") if getattr(self, k) is not None]
        for key in keys:
            try:
                parse_expression(str(getattr(self, key)))
            except ExpressionError as err:
                raise ConfigError(f"{name}: {key}: {err}") from None
        self.options()
        domain = self.build_domain()
        grid = self.build_grid()
        samples = {}
        for key in keys:
            try:
                with np.errstate(all="ignore"):
                    vals = values_of(grid, self.fn(key))
            except ExpressionError as err:
                raise ConfigError(f"{name}: {key}: {err}") from None
            if not np.all(np.isfinite(vals[:, grid.interior_mask])):
                raise ConfigError(f"{name}: {key} is not finite on the grid samples")
            samples[key] = vals
        interior = np.broadcast_to(grid.interior_mask, samples["V"].shape)
        f, u0, V = samples["f"], samples["u0"], samples["V"]
        th = self.theorem
        if th in ("3.1", "3.3", "3.4"):
            if np.any(f < 0):
                raise ConfigError(f"{name}: theorem {th} needs f >= 0")
            if not np.any(f[interior] > 0):
                raise ConfigError(f"{name}: theorem {th} needs f not identically zero")
        if th in ("3.1", "3.2", "3.3", "3.4", "3.5") and np.any(u0[0] < 0):
            raise ConfigError(f"{name}: u0 must be nonnegative")
        if th in ("3.2", "3.5") and np.any(f != 0):
            raise ConfigError(f"{name}: theorem {th} is stated for f = 0")
        if th == "3.3":
            if not domain.is_bounded:
                raise ConfigError(f"{name}: the existence window needs a bounded domain")
            if not (q > 1 or q < 0):
                raise ConfigError(f"{name}: the existence window needs q > 1 or q < 0")
            if q > 1 and np.any(V[interior] > 0):
                raise ConfigError(f"{name}: q > 1 existence needs V <= 0")
            if q < 0 and np.any(V[interior] < 0):
                raise ConfigError(f"{name}: q < 0 existence needs V >= 0")
            edge = np.abs(u0[0][grid.boundary_mask])
            if np.any(edge > 1e-12 * max(1.0, float(np.abs(u0[0]).max()))):
                raise ConfigError(f"{name}: u0 must vanish on the boundary")
        if th in ("3.4", "3.5"):
            if q >= 0:
                raise ConfigError(f"{name}: theorem {th} needs q < 0")
            if domain.is_bounded:
                raise ConfigError(f"{name}: theorem {th} needs an unbounded domain")
            if self.Z is None or self.mu is None:
                raise ConfigError(f"{name}: theorem {th} needs Z and mu")
            if not float(self.mu) > 0:
                raise ConfigError(f"{name}: mu must be positive")
        if th == "lemma" and (self.h is None or self.v is None):
            raise ConfigError(f"{name}: the lemma check needs h and v expressions")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- pipeline -----------------------------------------------------------------

@dataclass
class ScenarioResult:
    """All reports of one scenario; ``status`` is pass, fail or under-resolved."""

    name: str
    status: str
    reports: list
    eps: dict
    details: dict = field(default_factory=dict)
    gated: bool = True

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def summary(self) -> dict:
        return {"scenario": self.name, "status": self.status,
                "gate": "eps_model" if self.gated else "ungated",
                "eps": self.eps, "details": self.details,
                "reports": [r.to_dict() for r in self.reports]}


def _hq_source(grid: Grid, h: Field, V, q: float, chi: Field | None = None) -> np.ndarray:
    """Lattice values of chi h^q V; nodes with h = 0 contribute 0."""
    H = h.values
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        src = np.where(H > 0, np.power(np.where(H > 0, H, 1.0), q), 0.0 if q < 0 else np.power(H, q))
        src = src * values_of(grid, V)
    if chi is not None:
        src = src * chi.values
    return np.where(np.isfinite(src), src, 0.0)


def _bounds_31(s: Scenario, grid: Grid, kernel: Kernel, u: Field, h: Field) -> BoundSet:
    q = float(s.q)
    if 0 < q < 1:
        chi = chi_field(u)
        S_chi = S_field(kernel, grid, _hq_source(grid, h, s.fn("V"), q, chi))
        return thm31_bound(q, h, None, S_chi)
    return thm31_bound(q, h, S_field(kernel, grid, _hq_source(grid, h, s.fn("V"), q)))


def _bounds_32(s: Scenario, grid: Grid, kernel: Kernel, u: Field) -> BoundSet:
    q = float(s.q)
    if 0 < q < 1:
        src = values_of(grid, s.fn("V")) * chi_field(u).values
        return thm32_bound(q, None, S_field(kernel, grid, src), grid)
    return thm32_bound(q, S_field(kernel, grid, s.fn("V")), grid=grid)


def evaluate(s: Scenario, grid: Grid) -> dict:
    """Everything one resolution contributes: solution, bounds and raw checks."""
    kernel = Kernel(grid.domain)
    q = float(s.q)
    opts = s.options()
    th = s.theorem
    out = {"grid": grid}
    if th in ("3.1", "3.4"):
        h = h_field(kernel, grid, s.fn("f"), s.fn("u0"))
        u = solve_semilinear(grid, s.fn("V"), s.fn("f"), s.fn("u0"), q, opts)
        out.update(u=u, h=h, bounds=[_bounds_31(s, grid, kernel, u, h)])
    elif th in ("3.2", "3.5"):
        u = solve_semilinear(grid, s.fn("V"), 0.0, s.fn("u0"), q, opts)
        out.update(u=u, h=None, bounds=[_bounds_32(s, grid, kernel, u)])
    elif th == "3.3":
        h = h_field(kernel, grid, s.fn("f"), s.fn("u0"))
        S = S_field(kernel, grid, _hq_source(grid, h, s.fn("V"), q))
        env = thm33_window(q, h, S)
        sub, sup = sub_super_pair(h, S, q)
        tol = float(s.tolerances.get("iteration", 1e-10))
        it = monotone_iteration(grid, s.fn("V"), s.fn("f"), s.fn("u0"), q, sup, opts, sub=sub,
                                tol=tol, k_max=int(s.tolerances.get("max_iterations", 50)))
        out.update(u=it.field, h=h, bounds=[env], iteration=it)
    elif th == "comparison":
        g = s.fn("f")
        out.update(u=solve_linear(grid, g, 0.0, 0.0, opts.theta), S=S_field(kernel, grid, g), bounds=[])
    elif th == "lemma":
        fam = PhiFamily(q)
        h = Field(grid, FnSpec.expr(s.h).on_grid(grid))
        v = Field(grid, FnSpec.expr(s.v).on_grid(grid))
        res = lemma41_residual(grid, h, v, fam)
        out.update(u=None, bounds=[], lemma=float(np.abs(res.values[res.valid]).max(initial=0.0)))
    return out


def _model(coarse: dict, fine: dict, finer: dict | None = None) -> EpsModel:
    model = eps_model(coarse["u"], fine["u"], finer["u"] if finer else None)
    for k, b in enumerate(coarse["bounds"]):
        fb = fine["bounds"][k]
        model = model + eps_model(b.bound, fb.bound)
        if b.upper is not None:
            model = model + eps_model(b.upper, fb.upper)
    if "S" in coarse:
        model = model + eps_model(coarse["S"], fine["S"])
    return model


def _checks(s: Scenario, run: dict, eps, label: str) -> tuple[list, dict]:
    """Reports for one resolution, with the theorem-specific gating."""
    q = float(s.q)
    grid = run["grid"]
    shells = int(s.tolerances.get("shells", 5))
    name = f"{s.name}@{label}"
    reports, details = [], {}
    budget = eps.budget(grid.h, grid.dt) if isinstance(eps, EpsModel) else float(eps)
    th = s.theorem
    if th == "comparison":
        for side in ("super", "sub"):
            reports.append(comparison_oracle(grid, run["u"], s.fn("f"), side, run["S"], eps, name))
        return reports, details
    if th == "lemma":
        return reports, {"residual_max": run["lemma"]}
    u = run["u"]
    for b in run["bounds"]:
        rep = verify_bounds(u, b, eps, name)
        reports.append(rep)
    main = reports[0]
    if th == "3.3":
        it = run["iteration"]
        # sub/super come from quadrature, iterates from finite differences:
        # their mismatch is judged against the same budget
        gap = max((v["amount"] for v in it.violations), default=0.0)
        rise = it.field.meta["max_rise"]
        details.update(iterations=it.iterations, converged=it.converged,
                       sandwich_defect=gap, sandwich_ok=gap <= budget,
                       monotone_defect=rise, monotone=rise <= budget)
        if gap > budget or rise > budget:
            main.status = FAIL
            main.notes.append("iterates leave the sub/super sandwich beyond the budget")
        win = main.flags.get("window", {})
        if isinstance(win, dict) and not win.get("holds_everywhere", True):
            main.notes.append("existence window fails at some points (those points are masked)")
        if not it.converged:
            main.status = FAIL
            main.notes.append(f"monotone iteration did not converge in {it.iterations} steps")
    if q < 0 and th in ("3.1", "3.4"):
        dec = decay_check(u, shells)
        main.proxies["decay_trend"] = dec
        main.proxies["decay_holds"] = dec <= budget
        if th == "3.1" and not dec <= budget:
            main.status = NOT_APPLICABLE
            main.notes.append("decay hypothesis at infinity fails (proxy)")
    if th in ("3.4", "3.5"):
        z = ZSpec(FnSpec.expr(s.Z), float(s.mu), grid.domain)
        zr = z_check(z, grid, shells, scenario=name)
        reports.append(zr)
        trend = refined_growth_check(u, run["h"], q, z, shells)
        weighted = zr.passed and trend <= budget
        if th == "3.4":
            # the same inequality reached through the decay hypothesis
            plain = verify_bounds(u, run["bounds"][0], eps, name)
            plain.proxies.update(main.proxies)
            plain.notes.append("informational: decay-gated route")
            if not main.proxies["decay_holds"]:
                plain.status = NOT_APPLICABLE
            reports.append(plain)
        main.proxies.update(growth_trend=trend, weighted_path=weighted)
        main.kind = main.kind.replace("thm31", "thm34").replace("thm32", "thm35")
        if not weighted:
            main.status = NOT_APPLICABLE
            main.notes.append("weighted growth hypothesis fails (proxy)")
        if th == "3.4":
            details["decay_path_applies"] = bool(main.proxies["decay_holds"])
            details["weighted_path_applies"] = bool(weighted)
            if details["decay_path_applies"] and weighted:
                details["paths_agree"] = plain.status == main.status
    return reports, details


def _status(reports) -> str:
    primary = [r for r in reports if not any(n.startswith("informational") for n in r.notes)]
    if any(r.status == FAIL for r in primary):
        return FAIL
    if any(r.status == NOT_APPLICABLE and not r.kind.startswith("comparison") for r in primary):
        return NOT_APPLICABLE
    return PASS


def run_scenario(s: Scenario, resolution: int | None = None, single: bool = False,
                 out_dir=None, third: bool = False) -> ScenarioResult:
    """Run a scenario at two resolutions and verify every check at both.

    Args:
        resolution: coarse node count (the fine run halves dx, quarters dt).
        single: one run only, gated by the round-off floor ("ungated").
        out_dir: where to write ``<name>.summary.json`` and
            ``<name>.points.csv``.
        third: add a third resolution to test refinement monotonicity.

    Raises:
        ConfigError: invalid scenario.
        ScenarioError: any module error, with the scenario name.
    """
    try:
        coarse_grid = s.build_grid(resolution)
        grids = [coarse_grid] if single else [coarse_grid, coarse_grid.refine()]
        if third and not single:
            grids.append(grids[-1].refine())
        runs = []
        try:
            for g in grids:
                runs.append(evaluate(s, g))
        except (SolverError, DivergenceError, PhiDomainError, FloatingPointError) as err:
            return ScenarioResult(s.name, UNDER_RESOLVED, [], {},
                                  {"error": f"{type(err).__name__}: {err}"}, not single)
        if single:
            model = EpsModel.fixed(0.0)
            u = runs[0]["u"]
            if u is not None:
                model.floor = 1e-12 * max(1.0, u.max_abs()) * (1 + coarse_grid.steps)
            labels = ["single"]
        elif s.theorem == "lemma":
            model = EpsModel.fixed(0.0)
            labels = ["coarse", "fine"]
        else:
            model = _model(runs[0], runs[1], runs[2] if third else None)
            labels = ["coarse", "fine"] + (["finer"] if third else [])
        reports, details = [], {}
        for run, label in zip(runs, labels):
            reps, det = _checks(s, run, model, label)
            reports.extend(reps)
            details[label] = det
        if s.theorem == "lemma":
            details["order_ratio"] = _lemma_ratio(s, coarse_grid)
        status = _status(reports)
        if s.theorem == "lemma":
            lo, hi = s.tolerances.get("ratio_range", (3.5, 4.5))
            status = PASS if lo <= details["order_ratio"] <= hi else FAIL
        if model.under_resolved:
            status = UNDER_RESOLVED
        result = ScenarioResult(s.name, status, reports, model.to_dict(), details, not single)
    except ConfigError:
        raise
    except ScenarioError:
        raise
    except (ValueError, ArithmeticError, ExpressionError, NotImplementedError) as err:
        raise ScenarioError(f"{s.name}: {type(err).__name__}: {err}") from err
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _lemma_ratio(s: Scenario, grid: Grid) -> float:
    """Residual ratio over the second of two spatial halvings (dt tied to dx)."""
    errs = []
    g = grid
    for _ in range(3):
        errs.append(evaluate(s, g)["lemma"])
        g = g.refine(2, 2)
    return errs[1] / errs[2] if errs[2] > 0 else math.inf


def write_outputs(result: ScenarioResult, out_dir) -> tuple[Path, Path]:
    """Write the JSON summary and the per-point CSV of the finest run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = out / f"{result.name}.summary.json"
    cs = out / f"{result.name}.points.csv"
    write_summary_json(js, result.summary())
    labels = [r.scenario.rsplit("@", 1)[-1] for r in result.reports]
    last = labels[-1] if labels else None
    write_points_csv(cs, [r for r, lab in zip(result.reports, labels) if lab == last])
    return js, cs


def bundled_dir() -> Path:
    return Path(__file__).with_name("scenarios")


def bundled(name: str) -> Scenario:
    return Scenario.load(bundled_dir() / f"{name}.json")
