"""Exit criteria of the build, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line so that
``pytest -m acceptance -s`` doubles as a readable report.
"""
import math
import time

import numpy as np
import pytest

from parabound.bounds import thm32_bound
from parabound.duhamel import S, S_field
from parabound.fields import Field
from parabound.grid import Domain, build_grid, exhaust
from parabound.harness import PASS, ZSpec, eps_model, verify_bounds, z_check
from parabound.kernel import Kernel, mass, semigroup_residual
from parabound.phi import PhiFamily, lemma41_residual, ode_pair, ratio_gap
from parabound.scenario import bundled, run_scenario
from parabound.solver import SolverOptions, solve_semilinear

pytestmark = pytest.mark.acceptance

EPS = np.finfo(float).eps
TWO_COTH1 = 2.6260705709986626  # 2 coth(1), mpmath


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


# -- 1. kernel axioms -----------------------------------------------------------

def test_criterion_1_kernel_axioms(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    geoms = {
        "line": (Kernel(Domain.real_line()), (-3.0, 3.0), True),
        "interval": (Kernel(Domain.interval(0, 1)), (0.0, 1.0), False),
        "hyperbolic": (Kernel(Domain.radial_hyperbolic3()), (0.0, 3.0), True),
        "hyperbolic-shell": (Kernel(Domain.radial_hyperbolic3(0.5, 3.0)), (0.5, 3.0), False),
        "hyperbolic-exterior": (Kernel(Domain.radial_hyperbolic3(1.0)), (1.0, 4.0), False),
    }
    sym = massdev = semi = 0.0
    ok = True
    for k, (lo, hi), complete in geoms.values():
        for _ in range(50):
            x, y = rng.uniform(lo, hi, 2)
            t = rng.uniform(1e-3, 2.0)
            a, b = k(x, y, t), k(y, x, t)
            sym = max(sym, abs(a - b) / max(1.0, abs(a)))
        for x in np.linspace(lo, hi, 5)[1:-1]:
            for t in (0.01, 0.3, 1.0):
                m = mass(k, x, t)
                ok &= m <= 1 + 1e-8
                if complete:
                    massdev = max(massdev, abs(m - 1.0))
        for x, y in ((lo + 0.3 * (hi - lo), lo + 0.5 * (hi - lo)), (lo + 0.6 * (hi - lo),) * 2):
            semi = max(semi, semigroup_residual(k, x, y, 0.05, 0.1))
    elapsed = time.perf_counter() - t0
    ok = bool(ok and sym <= 1e-12 and massdev <= 1e-8 and semi <= 1e-6 and elapsed < 5.0)
    _report(capsys, 1, ok, f"symmetry {sym:.1e}, |mass-1| {massdev:.1e}, "
                           f"semigroup {semi:.1e}, {elapsed:.2f} s")
    assert sym <= 1e-12 and massdev <= 1e-8 and semi <= 1e-6
    assert elapsed < 5.0


# -- 2. Duhamel exactness -------------------------------------------------------

def test_criterion_2_duhamel_exactness(capsys):
    line = Kernel(Domain.real_line())
    err = max(abs(S(line, c, x, t).value - c * t)
              for c in (-2.0, 0.5, 3.0) for x in (-1.0, 0.0, 2.5) for t in (0.1, 1.0, 4.0))
    torsion = S(Kernel(Domain.interval(0, 1)), 1.0, 0.5, 20.0).value
    ok = err <= 1e-6 and abs(torsion - 0.125) <= 1e-4
    _report(capsys, 2, ok, f"|S[c] - ct| {err:.1e}, torsion {torsion:.8f}")
    assert err <= 1e-6
    assert abs(torsion - 0.125) <= 1e-4


# -- 3. ODE-exact bounds --------------------------------------------------------

def _flat_line(steps):
    return build_grid(Domain.real_line(), 81, 1.0, steps, R_trunc=20)


def test_criterion_3_ode_exact_bounds(capsys):
    t0 = time.perf_counter()
    line = Kernel(Domain.real_line())
    flow = SolverOptions(reaction="flow")
    literal, gaps, viols = True, {}, {}
    for M in (10.0, 100.0, 1000.0):
        runs = []
        for steps in (20, 80):
            g = _flat_line(steps)
            runs.append(solve_semilinear(g, 1.0, 0.0, M, 2.0, flow))
        eps = eps_model(*runs)
        g, u = runs[0].grid, runs[0]
        bound = thm32_bound(2, S_field(line, g, 1.0))
        rep = verify_bounds(u, bound, eps, f"flat-q2-M{M:g}")
        literal &= rep.passed
        viols[M] = rep.max_violation
        centre = int(np.argmin(np.abs(g.axes[0])))
        gaps[M] = bound.bound.values[-1, centre] - u.values[-1, centre]
    shrink = all(abs(gaps[M] * M - 1.0) <= 0.2 for M in gaps)

    # q = -1, V = -1 from a vanishing seed: sqrt(2t)
    runs = []
    for steps in (40, 160):
        g = _flat_line(steps)
        runs.append(solve_semilinear(g, -1.0, 0.0, 0.0, -1.0,
                                     SolverOptions(reaction="flow", delta_pos=1e-10)))
    eps = eps_model(*runs)
    g, u = runs[0].grid, runs[0]
    up = thm32_bound(-1, S_field(line, g, -1.0))
    cyl = g.interior_mask & g.trusted_mask
    mis = float(np.abs(u.values[1:] - up.bound.values[1:])[:, cyl].max())
    growth_ok = mis <= eps.budget(g.h, g.dt)
    elapsed = time.perf_counter() - t0

    ok = literal and shrink and growth_ok and elapsed < 30.0
    detail = (f"bound<=solution {'holds' if literal else 'violated'} "
              f"(max bound-u {', '.join(f'M={M:g}: {v:.2e}' for M, v in viols.items())}), "
              f"gap*M at t=1 {', '.join(f'{gaps[M] * M:.3f}' for M in gaps)}, "
              f"|u - sqrt(2t)| {mis:.1e}, {elapsed:.1f} s")
    _report(capsys, 3, ok, detail)
    assert shrink and growth_ok and elapsed < 30.0
    # the stated direction: the h-free q = 2 bound lies below the solution
    assert literal, "1/t exceeds the ODE solution 1/(1/M + t) for every finite M"


# -- 4. Theorem 3.1, four cases -------------------------------------------------

THM31 = ("thm31-q2-interval", "thm31-q1-interval", "thm31-qhalf-interval", "thm31-qneg-interval")


def test_criterion_4_thm31_cases(capsys):
    lines, ok = [], True
    for name in THM31:
        res = run_scenario(bundled(name))
        strict = True
        for rep in res.reports:
            info = rep.flags.get("strict")
            if isinstance(info, dict):
                strict &= bool(info.get("holds_everywhere"))
        decay = all(r.proxies.get("decay_holds", True) for r in res.reports)
        good = res.status == PASS and strict and decay
        ok &= good
        lines.append(f"{name} {res.status}{'' if strict else ' (strict fails)'}")
    _report(capsys, 4, ok, "; ".join(lines))
    assert ok


# -- 5. Theorem 3.3 existence ---------------------------------------------------

def test_criterion_5_thm33_existence(capsys):
    lines, ok = [], True
    for name in ("thm33-posq", "thm33-negq-window"):
        res = run_scenario(bundled(name))
        its = [res.details[lab]["iterations"] for lab in ("coarse", "fine")]
        env = all(res.details[lab]["sandwich_ok"] and res.details[lab]["converged"]
                  for lab in ("coarse", "fine"))
        good = res.status == PASS and max(its) <= 50 and env
        ok &= good
        lines.append(f"{name} {res.status}, iterations {its}")
    _report(capsys, 5, ok, "; ".join(lines))
    assert ok


# -- 6. comparison oracles and exhaustion ---------------------------------------

COMPARISON = ("comparison-line", "comparison-interval", "comparison-box",
              "comparison-radial3", "comparison-hyperbolic-shell")


def test_criterion_6_comparison_and_exhaustion(capsys):
    lines, ok = [], True
    for name in COMPARISON:
        res = run_scenario(bundled(name))
        good = res.status == PASS and all(r.passed for r in res.reports) and len(res.reports) == 4
        ok &= good
        lines.append(f"{name} {res.status}")
    tol = 1e-8
    worst = math.inf
    cases = (
        (Domain.real_line(), "1 + exp(-x^2)", 0.0),
        (Domain.interval(0, 1), "1 + x^2", 0.5),
        (Domain.radial_hyperbolic3(), "1 + exp(-r^2)", 0.3),
        (Domain.radial_hyperbolic3(1.0), "1 + exp(-r^2)", 1.5),
    )
    for dom, src, x in cases:
        vals = [S(Kernel(exhaust(dom, n)), src, x, 0.5, tol=tol).value for n in range(1, 7)]
        full = S(Kernel(dom), src, x, 0.5, tol=tol).value
        steps = np.diff(vals + [full])
        worst = min(worst, float(steps.min()))
    mono = worst >= -2 * tol
    ok &= mono
    _report(capsys, 6, ok, "; ".join(lines) + f"; exhaustion min increment {worst:.1e}")
    assert ok


# -- 7. product-rule identity ---------------------------------------------------

def test_criterion_7_product_rule_order(capsys):
    rng = np.random.default_rng(2024)
    ratios, ok = [], True
    for q in (-1.0, 0.5, 1.0, 2.0):
        a = 0.1 * rng.uniform(-1, 1, (3, 3))
        b = 0.1 * rng.uniform(-1, 1, (3, 3))
        errs = []
        for n in (21, 41, 81):
            g = build_grid(Domain.interval(0, 1), n, 0.5, 2 * (n - 1))
            x, t = g.axes[0][None, :], g.times[:, None]
            modes = [((i + 1) * x + j * t) for i in range(3) for j in range(3)]
            h = 2.0 + sum(a.flat[k] * np.cos(m) for k, m in enumerate(modes))
            v = -0.2 + sum(b.flat[k] * np.sin(m) for k, m in enumerate(modes))
            r = lemma41_residual(g, Field(g, h), Field(g, v), PhiFamily(q)).values
            errs.append(float(np.abs(r).max()))
        rr = (errs[0] / errs[1], errs[1] / errs[2])
        ratios.append((q, rr))
        ok &= all(3.5 <= x <= 4.5 for x in rr)
    _report(capsys, 7, ok, ", ".join(f"q={q:g}: {r[0]:.2f}/{r[1]:.2f}" for q, r in ratios))
    assert ok


# -- 8. phi calculus ------------------------------------------------------------

QS = (-2.0, -1.0, -0.5, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0)


def test_criterion_8_phi_calculus(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst_ulps, sign_ok = 0.0, True
    for q in QS:
        fam = PhiFamily(q)
        lo, hi = max(fam.lo, -30.0), min(fam.hi, 30.0)
        s = rng.uniform(lo, hi, 10_000)
        s = s[(s > fam.lo) & (s < fam.hi)]
        a, b = ode_pair(fam, s)
        good = np.isfinite(a) & (a > 0)
        ulps = np.abs(a - b)[good] / np.spacing(a[good])
        worst_ulps = max(worst_ulps, float(ulps.max()))
        g = ratio_gap(fam, s)
        sign_ok &= bool(np.all(g >= 0) if q > 0 else np.all(g <= 0))
    elapsed = time.perf_counter() - t0
    ok = worst_ulps <= 8 and sign_ok and elapsed < 1.0
    _report(capsys, 8, ok, f"max ODE residual {worst_ulps:.0f} ulp, sign checks "
                           f"{'hold' if sign_ok else 'fail'}, {elapsed:.2f} s")
    assert worst_ulps <= 8 and sign_ok
    assert elapsed < 1.0


# -- 9. Z machinery -------------------------------------------------------------

def test_criterion_9_z_machinery(capsys):
    grid = build_grid(Domain.radial_hyperbolic3(1.0), 53, 0.5, 20, R_trunc=14)
    zr = z_check(ZSpec("-r", TWO_COTH1, grid.domain), grid)
    res = run_scenario(bundled("thm34-hyperbolic-exterior"))
    agree = []
    weighted = True
    for lab in ("coarse", "fine"):
        d = res.details[lab]
        weighted &= bool(d.get("weighted_path_applies"))
        if "paths_agree" in d:
            agree.append(d["paths_agree"])
    ok = zr.passed and res.status == PASS and weighted and all(agree)
    _report(capsys, 9, ok, f"z_check {zr.status}, scenario {res.status}, weighted path "
                           f"{'applies' if weighted else 'fails'}, paths agree {agree}")
    assert ok
