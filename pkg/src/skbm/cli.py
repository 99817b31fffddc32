"""Command line interface and the end-to-end pipeline.

Specs on the command line are ``family:key=value,...`` (list values joined
by ``;``) or a JSON object, e.g. ``stable:alpha=1`` or ``power:p=1.75``.
Domains are side lengths ``1,1,2`` or ``cube[:d]``.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import traceback
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from . import bernstein as bf
from . import montecarlo as mc
from . import nonlinearity as nlm
from . import operators as op
from . import regularity as rg
from . import semilinear as sl
from .domain import BoxDomain
from .errors import ConditionError, DomainError, NumericalError

# -- parsing ------------------------------------------------------------------


def _value(text):
    if ";" in text:
        return [_value(t) for t in text.split(";")]
    try:
        return int(text) if text.lstrip("-").isdigit() else float(text)
    except ValueError:
        return text


def _family_args(text):
    text = text.strip()
    if text.startswith("{"):
        return json.loads(text)
    family, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        params[k.strip()] = _value(v.strip())
    return {"family": family.strip(), "parameters": params}


def parse_spec(text):
    if isinstance(text, dict):
        return bf.BernsteinSpec.from_dict(text)
    data = _family_args(text)
    if data["family"] == "identity":
        return bf.identity()
    return bf.BernsteinSpec.from_dict(data)


def parse_nonlinearity(text):
    if isinstance(text, dict):
        return nlm.Nonlinearity.from_dict(text)
    data = _family_args(text)
    return nlm.Nonlinearity.from_dict(data)


def parse_domain(text):
    if isinstance(text, (list, tuple)):
        return BoxDomain(tuple(float(v) for v in text))
    text = str(text).strip()
    if text.startswith("cube"):
        _, _, d = text.partition(":")
        return BoxDomain.unit_cube(int(d) if d else 3)
    return BoxDomain(tuple(float(v) for v in text.split(",")))


def parse_point(text):
    return np.array([float(v) for v in str(text).split(",")])


# -- deterministic output -----------------------------------------------------

def jsonable(v):
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return v


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(obj), sort_keys=True, indent=1) + "\n")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _emit(obj, report=None):
    if report:
        write_json(report, obj)
    print(json.dumps(jsonable(obj), sort_keys=True, indent=1))


# -- configuration ------------------------------------------------------------

DEFAULT_CONFIG = {
    "phi": "stable:alpha=1",
    "f": "power:p=1.75",
    "domain": [1.0, 1.0, 1.0],
    "N": 16,
    "J": 6,
    "solver": {"n": 36, "gamma": 3.0, "theta": 0.5, "tol": 1e-8, "k_max": 500},
    "supersolution": {"enabled": True},
    "mc": {"enabled": True, "paths": 10000, "dt": 1e-4, "seed": 0, "x": [0.5, 0.5, 0.5],
           "t_survival": 0.1},
    "regularity": {"enabled": True, "phi": "stable:alpha=0.3", "alpha": 0.8, "coarse_n": 18},
    "gates": {"monotone": True, "bounds": True, "gaps_decreasing": True, "domination": True,
              "supersolution": True, "blowup_linear": True, "mc": True, "regularity": True},
}


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def load_config(path=None, overrides=None):
    cfg = DEFAULT_CONFIG
    if path is not None:
        path = Path(path)
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            data = json.loads(path.read_text())
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    unknown = set(cfg) - set(DEFAULT_CONFIG) - {"out"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def config_hash(cfg):
    text = json.dumps(jsonable(cfg), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def manifest(cfg):
    return {
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "versions": {"skbm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "seeds": {"mc": cfg["mc"]["seed"]},
    }


# -- pipeline -----------------------------------------------------------------

class GateFailure(Exception):
    pass


def _solver_options(cfg):
    s = cfg["solver"]
    return sl.SolverOptions(n=s["n"], gamma=s["gamma"], theta=s["theta"], tol=s["tol"],
                            k_max=s["k_max"], N=cfg["N"])


def write_solution(out, sol, N):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    j = sol.j
    sol.field(N).save(out / f"u_{j}_field.json")
    pts = sol.disc.points
    rows = np.column_stack([pts, sol.values.ravel(), sol.poisson.ravel()])
    header = [f"x{k + 1}" for k in range(pts.shape[1])] + ["u", "poisson_sigma"]
    write_csv(out / f"u_{j}_samples.csv", header, rows)
    if sol.residual_points is not None:
        write_csv(out / f"residual_{j}.csv",
                  [f"x{k + 1}" for k in range(pts.shape[1])] + ["residual"],
                  np.column_stack([sol.residual_points, sol.residual_values]))
    write_profile(out.parent / "profiles" / f"boundary_profile_{j}.csv", sol.boundary_profile)


def write_profile(path, rows):
    write_csv(path, ["delta", "face", "min_ratio", "max_ratio"],
              [[r["delta"], r["face"], r["min_ratio"], r["max_ratio"]] for r in rows])


def run_pipeline(cfg, out):
    """Run all stages; returns (exit status, summary).  0 = every enabled gate passed,
    1 = a gate failed, 2 = a stage raised."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "manifest.json", manifest(cfg))
    gates = cfg["gates"]
    status = {}
    stage = "config"
    try:
        spec, nl, domain = parse_spec(cfg["phi"]), parse_nonlinearity(cfg["f"]), parse_domain(cfg["domain"])
        stage = "ko"
        ko = nlm.ko_checks(nl, spec)
        write_json(out / "ko_report.json", ko.to_dict())
        if not ko.all_hold:
            failed = [name for name, key in (("KO1", "ko1"), ("KO2", "ko2"),
                                             ("integrability", "integrability"),
                                             ("boundary divergence", "boundary_blowup"))
                      if list(getattr(ko, key).values())[0] != nlm.HOLDS]
            raise GateFailure("; ".join(f"{name} fails" for name in failed))
        stage = "ladder"
        opts = _solver_options(cfg)
        ladder = sl.build_ladder(cfg["J"], nl, spec, domain, opts)
        for sol in ladder.solutions:
            write_solution(out / "ladder", sol, cfg["N"])
        write_csv(out / "ladder" / "interior_gaps.csv", ["j", "gap"],
                  [[j + 1, g] for j, g in enumerate(ladder.interior_gaps)])
        status.update(monotone=ladder.monotonicity["ok"], bounds=ladder.bounds["ok"],
                      gaps_decreasing=ladder.gaps_decreasing)
        sup = None
        if cfg["supersolution"]["enabled"]:
            stage = "supersolution"
            sup = sl.build_supersolution(nl, spec, domain, ko_report=ko, grid=ladder.disc.grid)
            check = sl.supersolution_check(sup)
            write_json(out / "supersolution" / "summary.json",
                       {**sup.summary(), "check_ok": check["ok"], "min_margin": check["min_margin"],
                        "blowup": sl.supersolution_blowup(sup)})
            write_csv(out / "supersolution" / "check.csv",
                      [f"x{k + 1}" for k in range(domain.d)] + ["operator", "minus_f"],
                      [list(p) + [a, b] for p, a, b in zip(check["points"], check["operator"], check["minus_f"])])
            dom = sl.domination_check(ladder, sup)
            status.update(supersolution=check["ok"], domination=dom["ok"])
        stage = "large"
        large = sl.large_extrapolate(ladder, sup)
        write_json(out / "ladder" / "report.json", ladder.summary())
        write_json(out / "large.json", large)
        write_csv(out / "profiles" / "blowup.csv", ["j", "min_ratio_delta_0.05"],
                  [[b["j"], b["min_ratio"]] for b in large["blowup"]])
        status["blowup_linear"] = large["blowup_linear"] and large["blowup_nondecreasing"]
        if cfg["mc"]["enabled"]:
            stage = "mc"
            m = cfg["mc"]
            pc = mc.PathConfig(dt=m["dt"], n=m["paths"], seed=m["seed"])
            rep = mc.validate(spec, domain, np.asarray(m["x"], float), m["t_survival"], pc)
            write_json(out / "mc" / "validate.json", rep)
            status["mc"] = rep["ok"]
        if cfg["regularity"]["enabled"]:
            stage = "regularity"
            status["regularity"] = _regularity_stage(cfg, out, spec, nl, domain, ladder)
    except GateFailure as exc:
        write_json(out / "error.json", {"stage": stage, "kind": "gate", "message": str(exc)})
        print(f"[{stage}] {exc}", file=sys.stderr)
        return 1, {"stage": stage, "message": str(exc)}
    except (ConditionError, DomainError, NumericalError, ValueError, KeyError, OSError) as exc:
        diag = getattr(exc, "diagnostics", {})
        write_json(out / "error.json", {"stage": stage, "kind": type(exc).__name__, "message": str(exc),
                                        "diagnostics": {k: v for k, v in diag.items()
                                                        if not isinstance(v, np.ndarray)}})
        print(f"[{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2, {"stage": stage, "message": str(exc)}
    enabled = {k: v for k, v in status.items() if gates.get(k, True)}
    write_json(out / "gates.json", {"status": status, "enabled": sorted(enabled)})
    failed = sorted(k for k, v in enabled.items() if not v)
    if failed:
        print(f"[gates] failed: {', '.join(failed)}", file=sys.stderr)
        return 1, {"stage": "gates", "failed": failed, "status": status}
    return 0, {"status": status}


def _regularity_stage(cfg, out, spec, nl, domain, ladder):
    r = cfg["regularity"]
    # fractional Gaussian against the Fourier oracle
    g = lambda x: np.exp(-np.sum(np.atleast_2d(x) ** 2, axis=1))
    val = rg.apply_phi_rd(spec, 3, g, np.zeros(3))
    ref = rg.fourier_radial_oracle(spec, 3, lambda xi: math.pi ** 1.5 * math.exp(-xi * xi / 4))
    write_csv(out / "regularity" / "gaussian.csv", ["quadrature", "fourier", "relative_error"],
              [[val, ref, abs(val / ref - 1)]])
    suite = rg.lemma_ratio_suite(parse_spec(r["phi"]), alpha=r["alpha"])
    write_csv(out / "regularity" / "ratio_suite.csv", ["member", "scale", "norm_u", "norm_phi_u", "ratio"],
              [[w["member"], w["scale"], w["norm_u"], w["norm_phi_u"], w["ratio"]] for w in suite["rows"]])
    # u_1 on the solver grid and on a grid with half the nodes
    cert = bf.scaling_certificate(spec)
    beta = 0.9 * 2 * cert.delta1
    fine = ladder.solutions[0]
    opts = _solver_options(cfg)
    opts.n, opts.residual = r["coarse_n"], False
    coarse = sl.solve_moderate(1, nl, spec, domain, opts)
    hf, hc = rg.solution_holder(fine, beta), rg.solution_holder(coarse, beta)
    stable = abs(hf.seminorm - hc.seminorm) <= 0.2 * hf.seminorm
    write_csv(out / "regularity" / "solution_holder.csv", ["n", "beta", "sup_norm", "seminorm"],
              [[coarse.grid.n[0], beta, hc.sup_norm, hc.seminorm],
               [fine.grid.n[0], beta, hf.sup_norm, hf.seminorm]])
    return bool(abs(val / ref - 1) < 0.01 and suite["ok"] and stable)


# -- subcommands --------------------------------------------------------------

def cmd_bernstein_check(a):
    spec = parse_spec(a.phi)
    lam = np.logspace(-3, 6, 91)
    conj = bf.conjugate(spec)
    prod = np.asarray(bf.phi_eval(spec, lam)) * np.asarray(bf.phi_eval(conj, lam))
    cert = bf.scaling_certificate(spec)
    rep = {"spec": spec.to_dict(), "conjugation_max_rel_error": float(np.max(np.abs(prod / lam - 1))),
           "scaling": {"delta1": cert.delta1, "delta2": cert.delta2, "a1": cert.a1, "a2": cert.a2,
                       "ok": cert.ok, "reason": cert.reason},
           "derivative_ratio_ok": bf.derivative_ratio_check(spec)["ok"]}
    _emit(rep, a.report)
    return 0 if cert.ok else 1


def cmd_ko_check(a):
    rep = nlm.ko_checks(parse_nonlinearity(a.f), parse_spec(a.phi))
    _emit({**rep.to_dict(), "all_hold": rep.all_hold}, a.report)
    return 0 if rep.all_hold else 1


def cmd_op(a):
    spec, domain = parse_spec(a.phi), parse_domain(a.domain)
    if a.action in ("apply", "green"):
        field = op.SpectralField.load(a.input)
        if field.basis.domain != domain:
            raise DomainError("the field lives on a different domain")
        res = op.apply_phi_op(field, spec) if a.action == "apply" else op.green_apply(field, spec)
        res.save(a.out)
        return 0
    # poisson: points CSV in, values CSV out
    pts = np.loadtxt(a.input, delimiter=",", skiprows=1, ndmin=2)
    vals = op.poisson_sigma_points(spec, domain, pts)
    write_csv(a.out, [f"x{k + 1}" for k in range(domain.d)] + ["poisson_sigma"],
              np.column_stack([pts, vals]))
    return 0


def _cli_options(a):
    return sl.SolverOptions(n=a.n, gamma=a.gamma, theta=a.theta, tol=a.tol, k_max=a.k_max, N=a.N)


def cmd_solve(a):
    spec, nl, domain = parse_spec(a.phi), parse_nonlinearity(a.f), parse_domain(a.domain)
    out = Path(a.out)
    opts = _cli_options(a)
    if a.action == "moderate":
        sol = sl.solve_moderate(a.j, nl, spec, domain, opts)
        write_solution(out / "ladder", sol, a.N)
        write_json(out / "solution.json", sol.summary())
        return 0
    ladder = sl.build_ladder(a.J, nl, spec, domain, opts)
    for sol in ladder.solutions:
        write_solution(out / "ladder", sol, a.N)
    sup = sl.build_supersolution(nl, spec, domain, grid=ladder.disc.grid)
    sl.domination_check(ladder, sup)
    large = sl.large_extrapolate(ladder, sup)
    write_json(out / "ladder" / "report.json", ladder.summary())
    write_json(out / "supersolution" / "summary.json", sup.summary())
    write_json(out / "large.json", large)
    ok = ladder.monotonicity["ok"] and ladder.bounds["ok"] and ladder.domination["ok"]
    return 0 if ok else 1


def cmd_mc(a):
    spec = bf.stable(a.alpha)
    domain = parse_domain(a.domain)
    pc = mc.PathConfig(dt=a.dt, n=a.paths, seed=a.seed)
    rep = mc.validate(spec, domain, parse_point(a.x), a.t, pc)
    _emit(rep, a.report)
    return 0 if rep["ok"] else 1


def cmd_regularity(a):
    spec = parse_spec(a.phi)
    if a.suite == "ratio":
        rep = rg.lemma_ratio_suite(spec, alpha=a.alpha, k=a.k)
        rows = [[w["member"], w["scale"], w["norm_u"], w["norm_phi_u"], w["ratio"]] for w in rep["rows"]]
        header = ["member", "scale", "norm_u", "norm_phi_u", "ratio"]
        ok = rep["ok"]
    elif a.suite == "gaussian":
        g = lambda x: np.exp(-np.sum(np.atleast_2d(x) ** 2, axis=1))
        val = rg.apply_phi_rd(spec, 3, g, np.zeros(3))
        ref = rg.fourier_radial_oracle(spec, 3, lambda xi: math.pi ** 1.5 * math.exp(-xi * xi / 4))
        header, rows = ["quadrature", "fourier", "relative_error"], [[val, ref, abs(val / ref - 1)]]
        ok = abs(val / ref - 1) < 0.01
    else:
        raise ValueError(f"unknown suite {a.suite!r}")
    if a.report:
        write_csv(a.report, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(str(v) for v in r))
    return 0 if ok else 1


def cmd_run(a):
    cfg = load_config(a.config)
    if a.seed is not None:
        cfg = _merge(cfg, {"mc": {"seed": a.seed}})
    out = a.out or cfg.get("out", "artifacts")
    code, summary = run_pipeline(cfg, out)
    print(json.dumps(jsonable(summary), sort_keys=True))
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="skbm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bernstein").add_subparsers(dest="action", required=True)
    bc = b.add_parser("check")
    bc.add_argument("--phi", required=True)
    bc.add_argument("--report")
    bc.set_defaults(func=cmd_bernstein_check)

    k = sub.add_parser("ko").add_subparsers(dest="action", required=True)
    kc = k.add_parser("check")
    kc.add_argument("--phi", required=True)
    kc.add_argument("--f", required=True)
    kc.add_argument("--report")
    kc.set_defaults(func=cmd_ko_check)

    o = sub.add_parser("op")
    o.add_argument("action", choices=["apply", "green", "poisson"])
    o.add_argument("--phi", required=True)
    o.add_argument("--domain", default="cube")
    o.add_argument("--in", dest="input", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_op)

    s = sub.add_parser("solve")
    s.add_argument("action", choices=["moderate", "large"])
    s.add_argument("--j", type=int, default=1)
    s.add_argument("--J", type=int, default=6)
    s.add_argument("--phi", default="stable:alpha=1")
    s.add_argument("--f", default="power:p=1.75")
    s.add_argument("--domain", default="cube")
    s.add_argument("--N", type=int, default=16)
    s.add_argument("--n", type=int, default=36)
    s.add_argument("--gamma", type=float, default=3.0)
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--k-max", dest="k_max", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("mc").add_subparsers(dest="action", required=True)
    mv = m.add_parser("validate")
    mv.add_argument("--alpha", type=float, default=1.0)
    mv.add_argument("--domain", default="cube")
    mv.add_argument("--x", default="0.5,0.5,0.5")
    mv.add_argument("--t", type=float, default=0.1)
    mv.add_argument("--paths", type=int, default=10000)
    mv.add_argument("--dt", type=float, default=1e-4)
    mv.add_argument("--seed", type=int, default=0)
    mv.add_argument("--report")
    mv.set_defaults(func=cmd_mc)

    r = sub.add_parser("regularity").add_subparsers(dest="action", required=True)
    rc = r.add_parser("check")
    rc.add_argument("--phi", default="stable:alpha=0.3")
    rc.add_argument("--suite", choices=["ratio", "gaussian"], default="ratio")
    rc.add_argument("--alpha", type=float, default=0.8)
    rc.add_argument("--k", type=int, default=0)
    rc.add_argument("--report")
    rc.set_defaults(func=cmd_regularity)

    rn = sub.add_parser("run")
    rn.add_argument("--config")
    rn.add_argument("--out")
    rn.add_argument("--seed", type=int)
    rn.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConditionError, DomainError, NumericalError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if os.environ.get("SKBM_DEBUG"):
            traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
