"""Moderate solutions, their ladder in j, a boundary blow-up supersolution and
the large-solution limit.

A moderate solution u_j solves phi(-Delta|_D) u = -f(u) in D with
u / P sigma -> j at the boundary.  It is computed from the representation

    u_j = j P sigma - G f(u_j)

by damped Picard iteration on a graded tensor grid, with the Green operator
applied by ``operators.TensorGreen``.  ``nl=None`` stands for f = 0.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.stats import qmc

from . import bernstein as bf
from . import nonlinearity as nlm
from . import operators as op
from .domain import EigenBasis, Grid, boundary_distance
from .errors import ConditionError, DomainError, NumericalError

PROFILE_DELTAS = (0.2, 0.1, 0.05, 0.02)
SUPER_SHELLS = (0.2, 0.1, 0.05, 0.02, 0.01, 0.005)
TANGENTIAL = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass
class SolverOptions:
    """Discretization and iteration controls for the moderate problems."""

    n: int = 36
    gamma: float = 3.0
    theta: float = 0.5
    tol: float = 1e-8
    k_max: int = 500
    N: int = 16
    check_points: int = 10
    residual: bool = True
    interior_delta: float = 0.2
    profile_deltas: tuple = PROFILE_DELTAS
    per_decade: int = 6

    def to_dict(self):
        out = asdict(self)
        out["profile_deltas"] = list(self.profile_deltas)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "profile_deltas" in data:
            data["profile_deltas"] = tuple(data["profile_deltas"])
        return cls(**data)


def _f(nl, t):
    if nl is None:
        return np.zeros_like(np.asarray(t, float))
    return np.asarray(nlm.f_eval(nl, np.maximum(t, 0.0)), float)


# -- sample point sets --------------------------------------------------------

def face_labels(domain):
    return [f"x{k + 1}{side}" for k in range(domain.d) for side in ("-", "+")]


def shell_points(domain, delta, face, tangential=TANGENTIAL):
    """Points at distance ``delta`` from one face, away from edges.

    ``face`` is 2k for {x_k = 0} and 2k+1 for {x_k = L_k}; the tangential
    coordinates run over the given fractions of the side lengths.
    """
    k, high = divmod(face, 2)
    L = np.asarray(domain.sides)
    others = [i for i in range(domain.d) if i != k]
    grids = np.meshgrid(*[np.asarray(tangential) * L[i] for i in others], indexing="ij")
    pts = np.empty((grids[0].size if others else 1, domain.d))
    for i, g in zip(others, grids):
        pts[:, i] = g.ravel()
    pts[:, k] = L[k] - delta if high else delta
    if np.any(np.abs(boundary_distance(domain, pts) - delta) > 1e-12):
        raise DomainError(f"shell at delta={delta} touches an edge for this box")
    return pts


def interior_points(domain, count, delta_min):
    """Deterministic points with delta_D >= delta_min: the center, then Halton points."""
    L = np.asarray(domain.sides)
    if np.any(L <= 2 * delta_min):
        raise DomainError("box too thin for the requested interior margin")
    pts = [0.5 * L]
    if count > 1:
        h = qmc.Halton(domain.d, scramble=False).random(count)[1:]
        pts.extend(delta_min + h * (L - 2 * delta_min))
    return np.asarray(pts[:count])


# -- discretization shared by all j -------------------------------------------

class Discretization:
    """Graded grid, P sigma on its nodes and the Green operator."""

    def __init__(self, spec, domain, opts, weight_exponent):
        self.spec, self.domain, self.opts = spec, domain, opts
        self.grid = Grid(domain, opts.n, kind="graded", gamma=opts.gamma)
        self.points = self.grid.points()
        self.poisson = op.poisson_sigma_points(spec, domain, self.points).reshape(self.grid.shape)
        self.distance = self.grid.distance()
        self.weight_exponent = float(weight_exponent)
        self._green = None

    @property
    def green(self):
        if self._green is None:
            self._green = op.TensorGreen(self.spec, self.grid, per_decade=self.opts.per_decade,
                                         weight_exponent=self.weight_exponent)
        return self._green

    def normal_line(self):
        """P sigma and depths at the first two nodes of a line normal to the face x_1 = 0."""
        c = tuple(m // 2 for m in self.grid.n[1:])
        idx0, idx1 = (0,) + c, (1,) + c
        y = self.grid.nodes[0]
        return (self.poisson[idx0], self.poisson[idx1]), (y[0], y[1])


def data_exponent(nl, disc, j):
    """Boundary exponent beta of f(j P sigma) ~ delta^-beta at the first grid nodes."""
    if nl is None:
        return 0.0
    (p0, p1), (y0, y1) = disc.normal_line()
    f0, f1 = _f(nl, j * p0), _f(nl, j * p1)
    return float(math.log(f0 / f1) / math.log(y1 / y0))


def discretize(nl, spec, domain, opts=None):
    """Build the shared discretization after checking the preconditions."""
    opts = opts or SolverOptions()
    if nl is not None:
        est = nlm.check_F(nl)
        if not est.ok:
            raise ConditionError(f"f fails the growth condition: {est.reason}")
        rep = nlm.ko_checks(nl, spec)
        if rep.integrability["converges"] == nlm.FAILS:
            raise ConditionError("the integrability condition fails for (f, phi)")
    disc = Discretization(spec, domain, opts, 0.0)
    beta = data_exponent(nl, disc, 1)
    disc.weight_exponent = min(max(beta, 0.0), 1.9)
    return disc


# -- moderate solutions -------------------------------------------------------

@dataclass
class ModerateSolution:
    j: int
    nl: object
    spec: object
    disc: Discretization
    values: np.ndarray
    iterations: int
    history: list
    theta: float
    residual_points: np.ndarray = None
    residual_values: np.ndarray = None
    residual_interior: float = float("nan")
    residual_scale: float = float("nan")
    boundary_profile: list = field(default_factory=list)

    @property
    def domain(self):
        return self.disc.domain

    @property
    def grid(self):
        return self.disc.grid

    @property
    def poisson(self):
        return self.disc.poisson

    @property
    def ratio(self):
        return self.values / self.disc.poisson

    def interpolant(self):
        """u at arbitrary points: spline of u / proxy times the proxy."""
        if getattr(self, "_interp", None) is None:
            proxy = lambda x: op.poisson_proxy(self.spec, self.domain, x)
            self._interp = op.GridInterpolant(self.grid, self.values, weight=proxy,
                                              weight_values=proxy(self.disc.points))
        return self._interp

    def ratio_interpolant(self):
        if getattr(self, "_ratio", None) is None:
            self._ratio = op.GridInterpolant(self.grid, self.ratio)
        return self._ratio

    def field(self, N=None):
        """Truncated eigen-expansion of u by quadrature on the graded grid."""
        N = self.disc.opts.N if N is None else N
        return op.expand(self.values, EigenBasis(self.domain, N), self.grid)

    def summary(self):
        return {
            "j": self.j,
            "iterations": self.iterations,
            "theta": self.theta,
            "final_update": self.history[-1] if self.history else 0.0,
            "residual_interior": self.residual_interior,
            "residual_scale": self.residual_scale,
            "min_value": float(self.values.min()),
            "max_ratio": float(self.ratio.max()),
            "boundary_profile": self.boundary_profile,
        }


def solve_moderate(j, nl, spec, domain, opts=None, disc=None):
    """Moderate solution with boundary ratio j."""
    if int(j) != j or j < 1:
        raise ValueError("j must be a positive integer")
    j = int(j)
    opts = opts or SolverOptions()
    if disc is None:
        disc = discretize(nl, spec, domain, opts)
    P = disc.poisson
    if nl is None:
        v, history, theta, k = j * P, [], opts.theta, 0
    else:
        beta = data_exponent(nl, disc, j)
        if beta >= 2.0 - 1e-3:
            raise ConditionError(f"f(j P sigma) ~ delta^-{beta:.3f} is not integrable against delta_D")
        v = np.zeros(P.shape)
        theta, history = opts.theta, []
        for k in range(1, opts.k_max + 1):
            target = j * P - disc.green.apply(_f(nl, v))
            new = np.maximum((1 - theta) * v + theta * target, 0.0)
            step = float(np.max(np.abs(new - v) / (1 + P)))
            history.append(step)
            v = new
            if step < opts.tol:
                break
            # an increasing update signals oscillation of the order-reversing map
            if len(history) > 1 and step > history[-2]:
                theta *= 0.5
        else:
            raise NumericalError(f"moderate solve j={j} did not converge in {opts.k_max} steps",
                                 {"history": history, "theta": theta, "iterate": v})
    sol = ModerateSolution(j, nl, spec, disc, v, k, history, theta)
    sol.boundary_profile = boundary_ratio_profile(sol, opts.profile_deltas)
    if opts.residual and opts.check_points > 0:
        interior_residual(sol, interior_points(domain, opts.check_points, opts.interior_delta))
    return sol


def interior_residual(sol, points):
    """|phi(-Delta) u + f(u)| at points via the pointwise operator."""
    u = sol.interpolant()
    res = np.array([op.apply_pointwise(sol.spec, sol.domain, u, x) for x in points])
    fu = _f(sol.nl, u(points))
    sol.residual_points = points
    sol.residual_values = res + fu
    sol.residual_interior = float(np.max(np.abs(sol.residual_values)))
    sol.residual_scale = float(np.max(fu)) if fu.size else 0.0
    return sol.residual_values


def boundary_ratio_profile(sol, deltas=PROFILE_DELTAS):
    """Rows (delta, face, min_ratio, max_ratio) of u / P sigma on face shells."""
    r = sol.ratio_interpolant()
    rows = []
    labels = face_labels(sol.domain)
    for delta in deltas:
        for face, label in enumerate(labels):
            vals = r(shell_points(sol.domain, delta, face))
            rows.append({"delta": float(delta), "face": label,
                         "min_ratio": float(vals.min()), "max_ratio": float(vals.max())})
    return rows


def profile_extremes(rows, delta):
    sel = [r for r in rows if abs(r["delta"] - delta) < 1e-12]
    if not sel:
        raise KeyError(f"no profile rows at delta={delta}")
    return min(r["min_ratio"] for r in sel), max(r["max_ratio"] for r in sel)


# -- ladder -------------------------------------------------------------------

@dataclass
class ModerateLadder:
    solutions: list
    monotonicity: dict
    bounds: dict
    interior_gaps: list
    gaps_decreasing: bool
    domination: dict = None

    @property
    def J(self):
        return len(self.solutions)

    @property
    def disc(self):
        return self.solutions[0].disc

    def summary(self):
        return {
            "J": self.J,
            "monotonicity": self.monotonicity,
            "bounds": self.bounds,
            "interior_gaps": self.interior_gaps,
            "gaps_decreasing": self.gaps_decreasing,
            "domination": self.domination,
            "solutions": [s.summary() for s in self.solutions],
        }


def build_ladder(J, nl, spec, domain, opts=None, tol=1e-6):
    """u_1, ..., u_J on one discretization with monotonicity and gap reports."""
    if J < 1:
        raise ValueError("J must be >= 1")
    opts = opts or SolverOptions()
    disc = discretize(nl, spec, domain, opts)
    sols = [solve_moderate(j, nl, spec, domain, opts, disc) for j in range(1, J + 1)]
    P = disc.poisson
    scale = 1 + P
    drops = [float(np.max((a.values - b.values) / scale)) for a, b in zip(sols[:-1], sols[1:])]
    mono = {"tolerance": tol, "max_drop": drops, "ok": all(d <= tol for d in drops)}
    lows = [float(np.min(s.values / scale)) for s in sols]
    highs = [float(np.max((s.values - s.j * P) / scale)) for s in sols]
    bounds = {"tolerance": tol, "min_over_scale": lows, "max_excess_over_jP": highs,
              "ok": all(lo >= -tol for lo in lows) and all(h <= tol for h in highs)}
    K = disc.distance >= opts.interior_delta
    gaps = [float(np.max((b.values - a.values)[K])) for a, b in zip(sols[:-1], sols[1:])]
    decreasing = bool(all(g2 < g1 for g1, g2 in zip(gaps[:-1], gaps[1:])))
    return ModerateLadder(sols, mono, bounds, gaps, decreasing)


# -- supersolution ------------------------------------------------------------

def smooth_distance(domain, x, q=4.0):
    """(sum_k d_k^-q)^(-1/q), d_k = x_k (L_k - x_k) / L_k: smooth, comparable to delta_D."""
    x = np.atleast_2d(np.asarray(x, float))
    L = np.asarray(domain.sides)
    dk = np.maximum(x * (L - x) / L, 1e-300)
    return np.sum(dk ** -q, axis=1) ** (-1.0 / q)


class BoundaryProfile:
    """U(x) = psi(Phi(rho(x))) with rho the smooth distance."""

    def __init__(self, nl, spec, domain):
        self.nl, self.spec, self.domain = nl, spec, domain
        self.Phi = bf.renewal_proxy(spec).phi_big
        self._spline = None

    def log_psi(self, s):
        ls = np.log(s)
        if self.nl.family == "power":
            return nlm.ko_log_psi(self.nl, ls)
        if self._spline is None:
            lo = math.log(float(self.Phi(1e-14)))
            hi = math.log(float(self.Phi(max(self.domain.sides))))
            grid = np.linspace(lo - 0.5, hi + 0.5, 401)
            vals = np.array([nlm.ko_log_psi(self.nl, g) for g in grid])
            self._spline = CubicSpline(grid, vals)
        return self._spline(ls)

    def of_distance(self, r):
        return np.exp(self.log_psi(np.asarray(self.Phi(np.asarray(r, float)), float)))

    def __call__(self, x):
        return self.of_distance(smooth_distance(self.domain, x))


@dataclass
class SupersolutionSpec:
    C: float
    eta: float
    lambda_scale: float
    mu_shift: float
    nl: object
    spec: object
    domain: object
    profile: BoundaryProfile
    c_table: list
    interior_sup: float
    grid: Grid = None

    def green_one(self, x):
        """G 1 from its values on ``grid``: exact at nodes, spline in between."""
        if getattr(self, "_green", None) is None:
            gv = op.green_one_points(self.spec, self.domain, self.grid.points())
            weight = lambda y: self.profile.Phi(smooth_distance(self.domain, y))
            self._green = op.GridInterpolant(self.grid, gv, weight=weight)
        return self._green(x)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return self.mu_shift * self.green_one(x) + self.lambda_scale * self.profile(x)

    def on_grid(self, grid):
        key = (id(grid), grid.n)
        if getattr(self, "_grid_key", None) != key:
            self._grid_values = self(grid.points()).reshape(grid.shape)
            self._grid_key = key
        return self._grid_values

    def scaled(self, factor):
        """The same construction with mu and lambda multiplied by ``factor``."""
        out = SupersolutionSpec(self.C, self.eta, factor * self.lambda_scale, factor * self.mu_shift,
                                self.nl, self.spec, self.domain, self.profile, self.c_table,
                                self.interior_sup, self.grid)
        out._green = getattr(self, "_green", None)
        return out

    def summary(self):
        return {"C": self.C, "eta": self.eta, "lambda_scale": self.lambda_scale,
                "mu_shift": self.mu_shift, "interior_sup": self.interior_sup,
                "c_table": self.c_table}


def build_supersolution(nl, spec, domain, shells=SUPER_SHELLS, interior_count=16,
                        safety=1.1, stabilize=0.1, ko_report=None, grid=None):
    """Estimate C, eta, lambda, mu and assemble mu G1 + lambda U.

    ``grid`` (graded) carries the tabulated G 1; the default matches
    ``SolverOptions()``.
    """
    rep = ko_report if ko_report is not None else nlm.ko_checks(nl, spec)
    if rep.ko2["status"] != nlm.HOLDS or rep.boundary_blowup["diverges"] != nlm.HOLDS:
        raise ConditionError("the supersolution needs KO2 and the boundary divergence condition")
    U = BoundaryProfile(nl, spec, domain)
    shells = sorted(shells, reverse=True)
    # per shell: face centres and one off-centre point per face
    shell_vals = {}
    for delta in shells:
        pts = np.vstack([shell_points(domain, delta, face, tangential=(0.5,)) for face in range(2 * domain.d)]
                        + [shell_points(domain, delta, face, tangential=(0.35,))[:1]
                           for face in range(2 * domain.d)])
        ops = np.array([op.apply_pointwise(spec, domain, U, x) for x in pts])
        shell_vals[delta] = (pts, ops, -ops / _f(nl, U(pts)))
    table, running = [], -np.inf
    for delta in reversed(shells):
        running = max(running, float(shell_vals[delta][2].max()))
        table.append({"delta": delta, "shell_max": float(shell_vals[delta][2].max()),
                      "cumulative_max": running})
    table.reverse()
    innermost = table[-1]["cumulative_max"]
    # divergence: the shell maxima keep growing as the shells shrink
    m = [row["shell_max"] for row in table]
    if len(m) >= 3 and m[-1] > 1.5 * m[-2] > 1.5 * 1.5 * m[-3] and m[-1] > 1:
        raise NumericalError("C estimate grows as the shells shrink", {"c_table": table})
    eta = min(shells)
    for row in table:
        if row["cumulative_max"] <= (1 + stabilize) * max(innermost, 1e-300):
            eta = row["delta"]
            break
    C = max(next(r["cumulative_max"] for r in table if r["delta"] == eta), 1.0)
    lam = safety * C ** (1.0 / nl.m)
    inner = interior_points(domain, interior_count, eta)
    inner_ops = np.array([op.apply_pointwise(spec, domain, U, x) for x in inner])
    outside = [inner_ops] + [shell_vals[d][1] for d in shells if d >= eta]
    sup = float(np.max(np.abs(np.concatenate(outside))))
    mu = safety * lam * sup
    if grid is None:
        opts = SolverOptions()
        grid = Grid(domain, opts.n, kind="graded", gamma=opts.gamma)
    return SupersolutionSpec(C, eta, lam, mu, nl, spec, domain, U, table, sup, grid)


def supersolution_check_points(domain, count=20, interior_delta=0.2):
    """Half interior points, half boundary-layer points (distinct from the construction set)."""
    n_in = count // 2
    inner = interior_points(domain, n_in + 1, interior_delta)[1:]
    layer = []
    deltas = (0.1, 0.05, 0.02, 0.01, 0.005)
    faces = 2 * domain.d
    i = 0
    while len(layer) < count - n_in:
        delta = deltas[i % len(deltas)]
        face = (3 * i) % faces
        layer.append(shell_points(domain, delta, face, tangential=(0.45,))[0])
        i += 1
    return np.vstack([inner, np.asarray(layer)])


def supersolution_check(sup, points=None):
    """phi(-Delta) ubar >= -f(ubar) at points; returns a report."""
    if points is None:
        points = supersolution_check_points(sup.domain)
    lhs = np.array([op.apply_pointwise(sup.spec, sup.domain, sup, x) for x in points])
    rhs = -_f(sup.nl, sup(points))
    return {"points": points.tolist(), "operator": lhs.tolist(), "minus_f": rhs.tolist(),
            "ok": bool(np.all(lhs >= rhs)), "min_margin": float(np.min(lhs - rhs))}


def supersolution_blowup(sup, deltas=(0.1, 0.02)):
    """ubar / P sigma at face-centre points of face x_1 = 0."""
    out = []
    for delta in deltas:
        x = shell_points(sup.domain, delta, 0, tangential=(0.5,))
        out.append({"delta": delta,
                    "ratio": float(sup(x)[0] / op.poisson_sigma(sup.spec, sup.domain, x[0]))})
    return out


def domination_check(ladder, sup, tol=0.05):
    """max over the grid and j of (u_j - ubar) / ubar; pass iff <= tol."""
    ub = sup.on_grid(ladder.disc.grid)
    excess = [float(np.max((s.values - ub) / ub)) for s in ladder.solutions]
    report = {"tolerance": tol, "max_relative_excess": excess, "worst": max(excess),
              "ok": max(excess) <= tol}
    ladder.domination = report
    return report


def large_extrapolate(ladder, sup=None, K_delta=0.2, shell_delta=0.05):
    """Interior limit estimate, residual and blow-up table from the ladder."""
    sols = ladder.solutions
    disc = ladder.disc
    K = disc.distance >= K_delta
    uJ = sols[-1]
    gap = float(np.max((uJ.values - sols[-2].values)[K])) if len(sols) > 1 else float("nan")
    blow = []
    for s in sols:
        if any(abs(r["delta"] - shell_delta) < 1e-12 for r in s.boundary_profile):
            lo, _ = profile_extremes(s.boundary_profile, shell_delta)
        else:
            lo, _ = profile_extremes(boundary_ratio_profile(s, (shell_delta,)), shell_delta)
        blow.append({"j": s.j, "min_ratio": lo})
    mins = [b["min_ratio"] for b in blow]
    report = {
        "J": len(sols),
        "cauchy_gap": gap,
        "sup_K_f": float(np.max(_f(uJ.nl, uJ.values[K]))),
        "residual_interior": uJ.residual_interior,
        "blowup": blow,
        "blowup_nondecreasing": bool(all(b >= a for a, b in zip(mins[:-1], mins[1:]))),
        "blowup_linear": bool(all(m >= 0.5 * s.j for m, s in zip(mins, sols))),
    }
    report["residual_relative"] = report["residual_interior"] / report["sup_K_f"]
    if sup is not None:
        ub = sup.on_grid(disc.grid)
        report["below_supersolution"] = bool(np.all(uJ.values <= ub))
        report["max_ratio_to_supersolution"] = float(np.max(uJ.values / ub))
    return report
