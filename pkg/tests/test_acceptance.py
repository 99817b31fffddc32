"""Acceptance criteria 1-10 at their stated tolerances.

Each test prints one ``criterion k: PASS|FAIL`` line; the lines are also
collected in the pytest terminal summary.  Run alone with

    python3 -m pytest tests/test_acceptance.py -v
"""
import math
import time

import numpy as np
import pytest

from skbm import bernstein as bf
from skbm import montecarlo as mc
from skbm import nonlinearity as nlm
from skbm import regularity as rg
from skbm import semilinear as sl
from skbm.cli import load_config, run_pipeline
from skbm.domain import BoxDomain, EigenBasis, Grid, boundary_distance
from skbm.operators import (SpectralField, apply_phi_op, apply_pointwise, green_apply, heat_kernel,
                            jumping_kernel_JD, poisson_sigma_points)

CUBE = BoxDomain.unit_cube()
CENTER = np.array([0.5, 0.5, 0.5])
STABLE1 = bf.stable(1.0)
POWER = nlm.power(1.75)
FAMILIES = {
    "stable": bf.stable(1.0),
    "sum_of_stables": bf.sum_of_stables([1.0, 0.5], [0.3, 0.8]),
    "tempered_stable": bf.tempered_stable(1.2, 1.0),
    "relativistic": bf.relativistic(1.0, 1.0),
}


def _span(v):
    v = np.asarray(v, float)
    return float(v.max() / v.min())


# -- 1: spectral identities ---------------------------------------------------

def test_criterion_01_spectral_identities(verdict):
    t0 = time.perf_counter()
    B = EigenBasis(CUBE, 16)
    c = np.random.default_rng(1).standard_normal(len(B))
    u = SpectralField(B, c)
    errs = []
    for spec in FAMILIES.values():
        back = green_apply(apply_phi_op(u, spec), spec).coefficients
        errs.append(np.max(np.abs(back - c) / np.abs(c)))
        classical = green_apply(green_apply(u, spec), bf.conjugate(spec)).coefficients
        errs.append(np.max(np.abs(classical * B.eigenvalues - c) / np.abs(c)))
    err, dt = max(errs), time.perf_counter() - t0
    ok = verdict(1, err < 1e-12 and dt < 5, f"max rel err {err:.2e}, {dt:.2f} s")
    assert ok


# -- 2: conjugation -----------------------------------------------------------

def test_criterion_02_conjugation(verdict):
    lam = np.geomspace(1e-3, 1e6, 200)
    err = 0.0
    for spec in FAMILIES.values():
        prod = bf.phi_eval(spec, lam) * bf.phi_eval(bf.conjugate(spec), lam)
        err = max(err, float(np.max(np.abs(prod / lam - 1))))
    ok = verdict(2, err < 1e-10, f"max rel err {err:.2e} over {len(FAMILIES)} families")
    assert ok


# -- 3: Laplace inversion -----------------------------------------------------

def test_criterion_03_laplace_inversion(verdict):
    t = np.geomspace(0.1, 10, 25)
    err = 0.0
    for alpha in (0.5, 1.0, 1.5):
        a = alpha / 2
        exact = t ** (a - 1) / math.gamma(a)
        inv = bf.potential_density(bf.stable(alpha), t, method="invert")
        err = max(err, float(np.max(np.abs(inv / exact - 1))))
    ok = verdict(3, err < 1e-6, f"max rel err {err:.2e}")
    assert ok


# -- 4: Keller-Osserman classification ----------------------------------------

def test_criterion_04_ko_classification(verdict):
    t0 = time.perf_counter()
    wrong, cases = [], 0
    for alpha in (0.5, 1.0, 1.5):
        lo, hi = 1 + alpha / 2, 2 / (2 - alpha)
        for p in np.round(np.arange(1.1, 2.91, 0.2), 10):
            if abs(p - lo) < 0.1 or abs(p - hi) < 0.1:
                continue
            cases += 1
            rep = nlm.ko_checks(nlm.power(p), bf.stable(alpha))
            growth = rep.ko1["converges"] == nlm.HOLDS
            integrable = rep.integrability["converges"] == nlm.HOLDS
            if growth != (p > lo) or integrable != (p < hi):
                wrong.append((alpha, p))
    dt = time.perf_counter() - t0
    ok = verdict(4, not wrong and dt < 60,
                 f"{cases} cases, misclassified {wrong}, {dt:.1f} s")
    assert ok


# -- 5: kernel sharp bounds ---------------------------------------------------

def test_criterion_05_kernel_bounds(verdict):
    t0 = time.perf_counter()
    parts = {}
    # jump kernel
    r = np.geomspace(0.01, 1.0, 30)
    parts["jump"] = max(_span(bf.jump_kernel(s, 3, r) * r ** 3 / bf.phi_eval(s, r ** -2.0))
                        for s in FAMILIES.values())
    # P sigma along face-normal lines
    dl = np.geomspace(0.02, 0.3, 15)
    spans = []
    for face in range(6):
        axis, side = face // 2, face % 2
        for tang in ((0.5, 0.5), (0.35, 0.6)):
            x = np.empty((dl.size, 3))
            x[:, [k for k in range(3) if k != axis]] = tang
            x[:, axis] = dl if side == 0 else 1 - dl
            P = poisson_sigma_points(STABLE1, CUBE, x)
            spans.append(_span(P * dl ** 2 * bf.phi_eval(STABLE1, dl ** -2.0)))
    parts["poisson"] = max(spans)
    # Dirichlet heat kernel, Gaussian exponent bracketed by 1/(2t) and 1/(8t)
    g = Grid(CUBE, 8, kind="graded").points()
    X, Y = g[:, None, :], g[None, :, :]
    dx = boundary_distance(CUBE, g)[:, None]
    dy = boundary_distance(CUBE, g)[None, :]
    r2 = np.sum((X - Y) ** 2, axis=-1)
    lo, hi = np.inf, -np.inf
    for t in np.geomspace(1e-3, 0.25, 12):
        p = heat_kernel(CUBE, t, X, Y)
        base = np.log(np.minimum(dx / math.sqrt(t), 1) * np.minimum(dy / math.sqrt(t), 1) * t ** -1.5)
        ok = p > 1e-250
        lp = np.log(p[ok])
        lo = min(lo, float(np.min(lp - base[ok] + r2[ok] / (2 * t))))
        hi = max(hi, float(np.max(lp - base[ok] + r2[ok] / (8 * t))))
    parts["heat"] = math.exp(hi - lo)
    # J_D against the boundary-weighted free kernel
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(50):
        x, y = rng.uniform(0.01, 0.99, (2, 3))
        d = np.linalg.norm(x - y)
        w = min(boundary_distance(CUBE, x[None])[0] * boundary_distance(CUBE, y[None])[0] / d ** 2, 1.0)
        vals.append(jumping_kernel_JD(STABLE1, CUBE, x, y) / (w * bf.jump_kernel(STABLE1, 3, d)))
    parts["J_D"] = _span(vals)
    dt = time.perf_counter() - t0
    good = (parts["jump"] < 10 and parts["poisson"] < 10 and math.isfinite(lo) and math.isfinite(hi)
            and parts["J_D"] < 10 and dt < 180)
    detail = ", ".join(f"{k} {v:.3g}" for k, v in parts.items())
    ok = verdict(5, good, f"max/min {detail}, {dt:.1f} s")
    assert ok


# -- 6: pointwise vs spectral -------------------------------------------------

def test_criterion_06_pointwise_vs_spectral(verdict):
    B = EigenBasis(CUBE, 8)
    rng = np.random.default_rng(6)
    pts = sl.interior_points(CUBE, 10, 0.2)
    worst = 0.0
    for _ in range(2):
        u = SpectralField(B, rng.standard_normal(len(B)) / (1 + B.eigenvalues / 50))
        Lu = apply_phi_op(u, STABLE1)
        scale = np.max(np.abs(Lu(Grid(CUBE, 16).points())))
        ref = Lu(pts)
        for x, v in zip(pts, ref):
            worst = max(worst, abs(apply_pointwise(STABLE1, CUBE, u, x) - v) / scale)
    ok = verdict(6, worst < 0.02, f"max error / sup norm {worst:.2e}")
    assert ok


# -- 7: semilinear ladder -----------------------------------------------------

@pytest.fixture(scope="module")
def reference():
    t0 = time.perf_counter()
    ladder = sl.build_ladder(6, POWER, STABLE1, CUBE, sl.SolverOptions())
    sup = sl.build_supersolution(POWER, STABLE1, CUBE, grid=ladder.disc.grid)
    check = sl.supersolution_check(sup)
    dom = sl.domination_check(ladder, sup)
    large = sl.large_extrapolate(ladder, sup)
    return {"ladder": ladder, "sup": sup, "check": check, "domination": dom, "large": large,
            "seconds": time.perf_counter() - t0}


def test_criterion_07_semilinear_ladder(verdict, reference):
    ladder, large = reference["ladder"], reference["large"]
    u2 = ladder.solutions[1].boundary_profile
    dev = {d: max(abs(v - 2) for v in sl.profile_extremes(u2, d)) for d in (0.1, 0.02)}
    mins = [b["min_ratio"] for b in large["blowup"]]
    sub = {
        "a": ladder.monotonicity["ok"],
        "b": ladder.bounds["ok"],
        "c": ladder.gaps_decreasing,
        "d": dev[0.02] < dev[0.1],
        "e": reference["domination"]["ok"],
        "f": reference["check"]["ok"] and len(reference["check"]["points"]) == 20,
        "g": large["blowup_nondecreasing"] and large["blowup_linear"],
        "runtime": reference["seconds"] < 300,
    }
    failed = [k for k, v in sub.items() if not v]
    detail = (f"failed {failed}; " if failed else "") + \
        f"blow-up min u_J/P at 0.05: {', '.join(f'{m:.3f}' for m in mins)}; " \
        f"|u_2/P - 2| {dev[0.1]:.3f} -> {dev[0.02]:.3f}; {reference['seconds']:.0f} s"
    ok = verdict(7, not failed, detail)
    assert ok


# -- 8: Monte Carlo -----------------------------------------------------------

def test_criterion_08_monte_carlo(verdict):
    t0 = time.perf_counter()
    rep = mc.validate(STABLE1, CUBE, CENTER, 0.1, mc.PathConfig(dt=1e-4, n=10_000, seed=0))
    dt = time.perf_counter() - t0
    g, s = rep["green"], rep["survival"]
    ok = verdict(8, rep["ok"] and dt < 180,
                 f"green z {g['z']:+.2f}, survival z {s['z']:+.2f}, "
                 f"halving stable {g['halving_stable'] and s['halving_stable']}, {dt:.0f} s")
    assert ok


# -- 9: regularity harness ----------------------------------------------------

def test_criterion_09_regularity(verdict, reference):
    t0 = time.perf_counter()
    g = lambda y: np.exp(-np.sum(np.atleast_2d(y) ** 2, axis=1))
    gerr = max(abs(rg.apply_phi_rd(s, 3, g, np.zeros(3))
                   / rg.fourier_radial_oracle(s, 3, lambda xi: math.pi ** 1.5 * math.exp(-xi * xi / 4)) - 1)
               for s in (STABLE1, bf.stable(0.3)))
    suite = rg.lemma_ratio_suite(bf.stable(0.3), alpha=0.8)
    spread = max(m["spread"] for m in suite["members"].values())
    fine = reference["ladder"].solutions[0]
    coarse = sl.solve_moderate(1, POWER, STABLE1, CUBE, sl.SolverOptions(n=fine.grid.n[0] // 2, residual=False))
    beta = 0.9 * 2 * bf.scaling_certificate(STABLE1).delta1
    hf, hc = rg.solution_holder(fine, beta), rg.solution_holder(coarse, beta)
    drift = abs(hf.seminorm - hc.seminorm) / hf.seminorm
    dt = time.perf_counter() - t0
    good = gerr < 0.01 and len({w["scale"] for w in suite["rows"]}) == 4 and spread < 10 and drift <= 0.2 and dt < 120
    ok = verdict(9, good, f"gaussian rel err {gerr:.1e}, ratio spread {spread:.2f}, "
                          f"Hölder drift x2 {drift:.3f}, {dt:.0f} s")
    assert ok


# -- 10: determinism ----------------------------------------------------------

# every stage enabled; grid, ladder and sample sizes reduced so two runs fit in minutes
REDUCED = {"J": 2, "solver": {"n": 16}, "mc": {"paths": 2000, "dt": 1e-3},
           "regularity": {"coarse_n": 12}}


def test_criterion_10_determinism(verdict, tmp_path):
    cfg = load_config(overrides=REDUCED)
    codes, payloads = [], []
    for name in ("first", "second"):
        code, _ = run_pipeline(cfg, tmp_path / name)
        codes.append(code)
        root = tmp_path / name
        payloads.append({p.relative_to(root).as_posix(): p.read_bytes()
                         for p in sorted(root.rglob("*")) if p.suffix in (".csv", ".json")})
    a, b = payloads
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    stages = {k.split("/")[0] for k in a}
    complete = {"ladder", "supersolution", "profiles", "mc", "regularity", "manifest.json"} <= stages
    ok = verdict(10, not differ and complete and codes[0] == codes[1],
                 f"{len(a)} files byte-identical, exit codes {codes}" if not differ
                 else f"differing files {differ}")
    assert ok
