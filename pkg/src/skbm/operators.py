"""The operator phi(-Delta|_D) on boxes: spectral backend and kernel backend.

Spectral backend: fields are truncated Dirichlet eigen-expansions and the
operator, its inverse and the semigroup are coefficient multipliers.

Kernel backend: subordinate quantities are time integrals of image-series
heat kernels against the potential density u(t) or the Lévy density mu(t):

    G f(x)     = int_0^inf u(t) P_t f(x) dt
    P sigma(x) = int_0^inf u(t) (-d/dt) P_x(tau_D > t) dt
    J_D(x, y)  = int_0^inf p_D(t, x, y) mu(t) dt
    kappa(x)   = int_0^inf P_x(tau_D <= t) mu(t) dt
"""

import functools
import json
import math

import numpy as np
from scipy import integrate, special
from scipy.ndimage import map_coordinates

from . import bernstein as bf
from . import heat1d
from .domain import BoxDomain, EigenBasis, Grid, boundary_distance, grading_inverse, sine_table
from .errors import DomainError, NumericalError

__all__ = [
    "SpectralField", "Grid", "expand", "apply_phi_op", "green_apply", "semigroup_apply",
    "heat_kernel", "survival", "exit_probability", "jumping_kernel_JD", "killing_kappa",
    "poisson_sigma", "green_one", "apply_pointwise", "TimeRule", "TensorGreen",
    "poisson_sigma_points", "green_one_points", "GridInterpolant", "poisson_proxy",
]


# -- spectral backend ---------------------------------------------------------

class SpectralField:
    """Truncated eigen-expansion sum_n c_n phi_n."""

    def __init__(self, basis, coefficients):
        c = np.asarray(coefficients, dtype=float)
        if c.shape != (len(basis),):
            raise ValueError(f"expected {len(basis)} coefficients, got shape {c.shape}")
        self.basis = basis
        self.coefficients = c

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        return self.basis.evaluate(x) @ self.coefficients

    def on_grid(self, grid):
        """Values on a tensor grid, shaped like the grid."""
        if grid.domain != self.basis.domain:
            raise ValueError("grid and basis live on different domains")
        out = self.basis.to_tensor(self.coefficients)
        for k, (L, y) in enumerate(zip(grid.domain.sides, grid.nodes)):
            out = np.moveaxis(np.tensordot(sine_table(L, self.basis.N, y), out, axes=([1], [k])), 0, k)
        return out

    def __add__(self, other):
        _same_basis(self, other)
        return SpectralField(self.basis, self.coefficients + other.coefficients)

    def __sub__(self, other):
        _same_basis(self, other)
        return SpectralField(self.basis, self.coefficients - other.coefficients)

    def __mul__(self, scalar):
        return SpectralField(self.basis, scalar * self.coefficients)

    __rmul__ = __mul__

    def to_dict(self):
        return {"basis": self.basis.to_dict(), "coefficients": self.coefficients.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(EigenBasis.from_dict(data["basis"]), data["coefficients"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _same_basis(a, b):
    if a.basis != b.basis:
        raise ValueError("fields live on different bases")


def _expansion_nodes(N):
    # products of sines up to frequency 2N: Gauss error is ~1e-16 from 2N + 24 nodes
    return 2 * N + 24


def expand(grid_values, basis, grid=None):
    """Eigen-coefficients <u, phi_n> by tensor quadrature on a grid."""
    if grid is None:
        grid = Grid(basis.domain, _expansion_nodes(basis.N), kind="gauss")
    if grid.domain != basis.domain:
        raise ValueError("grid and basis live on different domains")
    v = np.asarray(grid_values, dtype=float)
    if v.size != grid.size:
        raise ValueError(f"expected {grid.size} samples, got {v.size}")
    out = v.reshape(grid.shape)
    for k, (L, y, w) in enumerate(zip(grid.domain.sides, grid.nodes, grid.weights)):
        S = sine_table(L, basis.N, y) * w[:, None]
        out = np.moveaxis(np.tensordot(S, out, axes=([0], [k])), 0, k)
    return SpectralField(basis, basis.from_tensor(out))


def expand_function(u, basis, grid=None):
    if grid is None:
        grid = Grid(basis.domain, _expansion_nodes(basis.N), kind="gauss")
    return expand(u(grid.points()), basis, grid)


def _phi_of_eigenvalues(spec, basis):
    return np.asarray(bf.phi_eval(spec, basis.eigenvalues), dtype=float)


def apply_phi_op(field, spec):
    """Coefficients multiplied by phi(lambda_n)."""
    return SpectralField(field.basis, field.coefficients * _phi_of_eigenvalues(spec, field.basis))


def green_apply(field, spec):
    """Coefficients divided by phi(lambda_n)."""
    return SpectralField(field.basis, field.coefficients / _phi_of_eigenvalues(spec, field.basis))


def semigroup_apply(field, t):
    if t < 0:
        raise DomainError("t must be nonnegative")
    return SpectralField(field.basis, field.coefficients * np.exp(-field.basis.eigenvalues * t))


# -- box heat quantities ------------------------------------------------------

def _points(domain, x):
    x = domain.as_points(x)
    if not np.all(domain.contains(x)):
        raise DomainError("point outside the closed box")
    return x


def heat_kernel(domain, t, x, y, method="auto"):
    """p_D(t, x, y) as a product of one-dimensional kernels."""
    x, y = _points(domain, x), _points(domain, y)
    out = 1.0
    for k, L in enumerate(domain.sides):
        out = out * heat1d.kernel(t, x[..., k], y[..., k], L, method)
    return out


def exit_probability(domain, t, x):
    """1 - P_x(tau_D > t), accurate also when small."""
    x = _points(domain, x)
    acc = 0.0
    for k, L in enumerate(domain.sides):
        acc = acc + np.log1p(-heat1d.exit_probability(t, x[..., k], L))
    return -np.expm1(acc)


def survival(domain, t, x, method="auto"):
    x = _points(domain, x)
    out = 1.0
    for k, L in enumerate(domain.sides):
        out = out * heat1d.survival(t, x[..., k], L, method)
    return out


def subordinate_survival(spec, domain, x, t, tol=1e-13):
    """P_x(tau > t) for the subordinate killed process: sum_n exp(-t phi(lambda_n)) phi_n(x) <phi_n, 1>.

    Only odd modes contribute; the sum is cut where exp(-t phi(lambda)) < tol.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    x = _points(domain, np.atleast_2d(x))
    L = np.asarray(domain.sides)
    lam_cut = float(bf.phi_inverse(spec, -math.log(tol) / t))
    m = int(math.ceil(math.sqrt(lam_cut) * L.max() / math.pi)) + 1
    k = np.arange(1, m + 1, 2)
    factors, lams = [], []
    for i, Li in enumerate(L):
        # sqrt(2/L) sin(k pi x / L) * sqrt(2/L) * 2 L / (k pi)
        factors.append(4.0 / (k * math.pi) * np.sin(np.multiply.outer(x[:, i], k) * math.pi / Li))
        lams.append((k * math.pi / Li) ** 2)
    lam = sum(np.meshgrid(*lams, indexing="ij"))
    decay = np.exp(-t * np.asarray(bf.phi_eval(spec, lam.ravel()), float)).reshape(lam.shape)
    out = []
    for p in range(x.shape[0]):
        term = decay
        for i in range(domain.d):
            shape = [1] * domain.d
            shape[i] = -1
            term = term * factors[i][p].reshape(shape)
        out.append(term.sum())
    out = np.asarray(out)
    return out if out.size > 1 else float(out[0])


def _flux_box(domain, t, x):
    """-d/dt P_x(tau_D > t) for the box."""
    surv = [heat1d.survival(t, x[..., k], L) for k, L in enumerate(domain.sides)]
    flx = [heat1d.flux(t, x[..., k], L) for k, L in enumerate(domain.sides)]
    total = 0.0
    for i in range(domain.d):
        term = flx[i]
        for k in range(domain.d):
            if k != i:
                term = term * surv[k]
        total = total + term
    return total


def _first_eigenvalue(domain):
    return math.pi ** 2 * sum(L ** -2 for L in domain.sides)


def _log_time_quad(fun, t_lo, t_hi, breaks=(), rtol=1e-8):
    """int_{t_lo}^{t_hi} fun(t) dt in the variable log t, split at ``breaks``."""
    pts = sorted({math.log(t_lo), math.log(t_hi)} | {math.log(b) for b in breaks if t_lo < b < t_hi})
    total, err = 0.0, 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, e = integrate.quad(lambda v: fun(math.exp(v)) * math.exp(v), a, b,
                                epsabs=0.0, epsrel=rtol, limit=400)
        total += val
        err += e
    if not err <= max(10 * rtol * abs(total), 1e-300):
        raise NumericalError("time quadrature did not converge", {"value": total, "error": err})
    return total


def poisson_sigma(spec, domain, x, rtol=1e-8):
    """P^phi_D sigma(x) = int u(t) B(t, x) dt with B the boundary flux."""
    x = _points(domain, np.atleast_2d(x))
    if np.any(boundary_distance(domain, x) <= 0):
        raise DomainError("the Poisson potential is infinite on the boundary")
    t_hi = 60.0 / _first_eigenvalue(domain)
    out = []
    for p in x:
        dl = boundary_distance(domain, p)
        fun = lambda t: bf.potential_density(spec, t) * _flux_box(domain, t, p)
        out.append(_log_time_quad(fun, 1e-4 * dl * dl, t_hi, breaks=(dl * dl, 0.1), rtol=rtol))
    out = np.asarray(out)
    return out if out.size > 1 else float(out[0])


def poisson_proxy(spec, domain, x):
    """sum over faces of 1 / (r^2 phi(r^-2)), r the distance to the face.

    Has the boundary blow-up rate of P sigma, is cheap, and is used to factor
    the singularity out of grid interpolation.
    """
    x = np.atleast_2d(np.asarray(x, float))
    out = np.zeros(len(x))
    for k, L in enumerate(domain.sides):
        for r in (x[:, k], L - x[:, k]):
            r = np.maximum(r, 1e-300)
            out += 1.0 / (r * r * np.asarray(bf.phi_eval(spec, r ** -2.0), float))
    return out


def green_one(spec, domain, x, rtol=1e-8):
    """G^phi_D 1(x) = int u(t) P_x(tau_D > t) dt."""
    x = _points(domain, np.atleast_2d(x))
    t_hi = 60.0 / _first_eigenvalue(domain)
    out = []
    for p in x:
        dl = max(boundary_distance(domain, p), 1e-300)
        t_lo = 1e-6 * dl * dl
        fun = lambda t: bf.potential_density(spec, t) * survival(domain, t, p)
        val = _log_time_quad(fun, t_lo, t_hi, breaks=(dl * dl, 0.1), rtol=rtol)
        out.append(val + float(bf.potential_measure(spec, t_lo)))
    out = np.asarray(out)
    return out if out.size > 1 else float(out[0])


def jumping_kernel_JD(spec, domain, x, y, rtol=1e-6):
    """J_D(x, y) = int p_D(t, x, y) mu(t) dt, split at t = |x - y|^2."""
    x, y = _points(domain, x), _points(domain, y)
    r2 = float(np.sum((x - y) ** 2))
    if r2 == 0:
        raise DomainError("J_D is singular at coincident points")
    t_hi = 60.0 / _first_eigenvalue(domain)
    fun = lambda t: float(heat_kernel(domain, t, x, y)) * float(bf.levy_density(spec, t))
    return _log_time_quad(fun, 1e-4 * r2, t_hi, breaks=(r2, 0.1), rtol=rtol)


def killing_kappa(spec, domain, x, rtol=1e-8):
    """kappa(x) = int P_x(tau_D <= t) mu(t) dt."""
    x = _points(domain, x)
    dl = boundary_distance(domain, x)
    if dl <= 0:
        raise DomainError("kappa is infinite on the boundary")
    t_hi = 60.0 / _first_eigenvalue(domain)
    fun = lambda t: float(exit_probability(domain, t, x)) * float(bf.levy_density(spec, t))
    val = _log_time_quad(fun, 1e-4 * dl * dl, t_hi, breaks=(dl * dl, 0.1), rtol=rtol)
    # beyond t_hi the exit probability is 1 up to exp(-60)
    tail, _ = integrate.quad(lambda t: float(bf.levy_density(spec, t)), t_hi, np.inf, epsrel=1e-10)
    return val + tail


# -- fixed time rules (vectorized kernel backend) -----------------------------

class TimeRule:
    """Composite Gauss-Legendre rule in log t, ``per_decade`` nodes per decade.

    ``weights`` already contain the Jacobian dt = t d(log t).
    """

    def __init__(self, spec, t_lo, t_hi, per_decade=8):
        if not 0 < t_lo < t_hi:
            raise ValueError("need 0 < t_lo < t_hi")
        self.spec = spec
        self.t_lo, self.t_hi = float(t_lo), float(t_hi)
        self.nodes, self.weights = _log_rule(self.t_lo, self.t_hi, per_decade)

    @functools.cached_property
    def potential(self):
        return np.asarray(bf.potential_density(self.spec, self.nodes), dtype=float)

    @functools.cached_property
    def levy(self):
        return np.asarray(bf.levy_density(self.spec, self.nodes), dtype=float)

    @functools.cached_property
    def potential_below(self):
        """U(t_lo): potential mass of (0, t_lo)."""
        return float(bf.potential_measure(self.spec, self.t_lo))


@functools.lru_cache(maxsize=64)
def _log_rule(t_lo, t_hi, per_decade):
    gx, gw = np.polynomial.legendre.leggauss(per_decade)
    a, b = math.log10(t_lo), math.log10(t_hi)
    edges = np.arange(math.floor(a), math.ceil(b) + 1, dtype=float)
    edges = np.unique(np.clip(edges, a, b))
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo < 1e-12:
            continue
        s = 0.5 * (hi - lo) * (gx + 1) + lo
        nodes.append(10.0 ** s)
        weights.append(0.5 * (hi - lo) * gw * math.log(10.0) * 10.0 ** s)
    return np.concatenate(nodes), np.concatenate(weights)


@functools.lru_cache(maxsize=32)
def _time_rule(spec, t_lo, t_hi, per_decade):
    return TimeRule(spec, t_lo, t_hi, per_decade)


def _box_survival_flux(domain, t, x):
    """Survival factors and fluxes per axis at times t (T,) and points x (k, d)."""
    tt = t[:, None]
    S = [heat1d.survival(tt, x[None, :, k], L) for k, L in enumerate(domain.sides)]
    F = [heat1d.flux(tt, x[None, :, k], L) for k, L in enumerate(domain.sides)]
    return S, F


def poisson_sigma_points(spec, domain, x, per_decade=8, chunk=4096):
    """P sigma at many points with a fixed log-time rule."""
    x = _points(domain, np.atleast_2d(x))
    dmin = float(np.min(boundary_distance(domain, x)))
    if dmin <= 0:
        raise DomainError("the Poisson potential is infinite on the boundary")
    rule = _time_rule(spec, 1e-4 * dmin * dmin, 60.0 / _first_eigenvalue(domain), per_decade)
    cw = rule.weights * rule.potential
    out = np.empty(len(x))
    for s in range(0, len(x), chunk):
        S, F = _box_survival_flux(domain, rule.nodes, x[s:s + chunk])
        B = 0.0
        for i in range(domain.d):
            term = F[i]
            for k in range(domain.d):
                if k != i:
                    term = term * S[k]
            B = B + term
        out[s:s + chunk] = cw @ B
    return out


def green_one_points(spec, domain, x, per_decade=8, chunk=4096):
    """G^phi_D 1 at many points with a fixed log-time rule."""
    x = _points(domain, np.atleast_2d(x))
    dmin = max(float(np.min(boundary_distance(domain, x))), 1e-12)
    rule = _time_rule(spec, 1e-6 * dmin * dmin, 60.0 / _first_eigenvalue(domain), per_decade)
    cw = rule.weights * rule.potential
    out = np.empty(len(x))
    for s in range(0, len(x), chunk):
        S, _ = _box_survival_flux(domain, rule.nodes, x[s:s + chunk])
        out[s:s + chunk] = cw @ np.prod(S, axis=0) + rule.potential_below
    return out


def jumping_kernel_points(domain, rule, x, y, subtract_free=False):
    """J_D(x, y_k) for one x and many y with a fixed rule (levy weights).

    With ``subtract_free`` the free-space part is removed analytically, i.e.
    the result is int (p_D - p_free) mu dt; small times must then satisfy
    t <= 0.1 L^2 on every axis.
    """
    cw = rule.weights * rule.levy
    tt = rule.nodes[:, None]
    if not subtract_free:
        prod = 1.0
        for k, L in enumerate(domain.sides):
            prod = prod * heat1d.kernel_rows(rule.nodes, x[k], y[:, k], L)
        return cw @ prod
    # prod(g + R) - prod(g) = sum_i R_i prod_{k<i} g_k prod_{k>i} (g_k + R_k)
    g, R = [], []
    for k, L in enumerate(domain.sides):
        g.append(heat1d.gauss(tt, x[k] - y[None, :, k]))
        R.append(heat1d.kernel_image_remainder(tt, x[k], y[None, :, k], L))
    total = 0.0
    for i in range(domain.d):
        term = R[i]
        for k in range(i):
            term = term * g[k]
        for k in range(i + 1, domain.d):
            term = term * (g[k] + R[k])
        total = total + term
    return cw @ total


# -- pointwise operator -------------------------------------------------------

def _jump_free(spec, d, r):
    if spec.family == "stable":
        alpha = spec.parameters["alpha"]
        return bf.stable_jump_constant(d, alpha) * np.asarray(r, float) ** (-d - alpha)
    return bf.jump_kernel(spec, d, r, rtol=1e-8)


def _sphere_rule(d, n_theta, n_phi, axis):
    """Directions and weights on the unit sphere in R^d (polar axis ``axis``)."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        ang = 2 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return dirs, np.full(n_phi, 2 * math.pi / n_phi)
    c, wc = np.polynomial.legendre.leggauss(n_theta)
    ang = 2 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
    s = np.sqrt(1 - c * c)
    local = np.stack([np.multiply.outer(s, np.cos(ang)), np.multiply.outer(s, np.sin(ang)),
                      np.multiply.outer(c, np.ones(n_phi))], axis=-1).reshape(-1, 3)
    w = np.multiply.outer(wc, np.full(n_phi, 2 * math.pi / n_phi)).ravel()
    perm = {0: [2, 0, 1], 1: [1, 2, 0], 2: [0, 1, 2]}[axis]
    return local[:, perm], w


def _face_rule(domain, x, n):
    """Directions from x grouped by the face where the ray exits.

    Each face is parametrized by tangential offsets a = h sinh(t) from the
    foot of the perpendicular (h the distance to the face plane), with
    Gauss-Legendre in t on either side of the foot.  The angular integrand is
    smooth on each face, so edges and corners of the box cost nothing.
    Returns directions, solid-angle weights and exit distances.
    """
    L = np.asarray(domain.sides)
    d = domain.d
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]), np.array([L[0] - x[0], x[0]])
    g, gw = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1)
    dirs, weights, exits = [], [], []
    for k in range(d):
        others = [i for i in range(d) if i != k]
        for h, sign in ((x[k], -1.0), (L[k] - x[k], 1.0)):
            offs, ows = [], []
            for i in others:
                lo, hi = math.asinh(-x[i] / h), math.asinh((L[i] - x[i]) / h)
                t = np.concatenate([lo * (1 - g), hi * g])
                w = np.concatenate([-lo * 0.5 * gw, hi * 0.5 * gw])
                offs.append(h * np.sinh(t))
                ows.append(w * h * np.cosh(t))
            mesh = np.meshgrid(*offs, indexing="ij")
            wmesh = np.meshgrid(*ows, indexing="ij")
            v = np.empty(mesh[0].shape + (d,))
            for i, a in zip(others, mesh):
                v[..., i] = a
            v[..., k] = sign * h
            v = v.reshape(-1, d)
            r = np.linalg.norm(v, axis=1)
            dirs.append(v / r[:, None])
            weights.append(np.prod([w.ravel() for w in wmesh], axis=0) * h / r ** d)
            exits.append(r)
    return np.vstack(dirs), np.concatenate(weights), np.concatenate(exits)


def apply_pointwise(spec, domain, u, x, rho=None, n_theta=16, n_phi=32, n_face=8,
                    per_decade=6, return_parts=False):
    """phi(-Delta|_D) u (x) from the principal-value representation.

    Inner ball B(x, rho): symmetric second difference against the free jump
    kernel plus the bounded correction (J_D - j).  Outer region: rays from x
    to each face (``_face_rule``), log-graded near rho and cubically graded
    near the exit point.  Plus kappa(x) u(x).  ``u`` must accept an array of points (k, d).
    """
    if spec.family == "identity":
        raise DomainError("the identity spec has no jump representation")
    x = _points(domain, np.asarray(x, float))
    d = domain.d
    dl = boundary_distance(domain, x)
    if dl <= 0:
        raise DomainError("x must be interior")
    rho = min(dl / 2, 0.05) if rho is None else rho
    ux = float(np.asarray(u(x[None, :]))[0])
    L = np.asarray(domain.sides)
    near = int(np.argmin(np.minimum(x, L - x)))
    dirs, wdir = _sphere_rule(d, n_theta, n_phi, near)

    # inner ball, free kernel: r = rho s^2
    gs, gws = np.polynomial.legendre.leggauss(16)
    s = 0.5 * (gs + 1)
    r_in = rho * s * s
    w_in = 0.5 * gws * 2 * rho * s * r_in ** (d - 1) * _jump_free(spec, d, r_in)
    pts_p = x + r_in[:, None, None] * dirs[None]
    pts_m = x - r_in[:, None, None] * dirs[None]
    up = np.asarray(u(pts_p.reshape(-1, d))).reshape(len(r_in), -1)
    um = np.asarray(u(pts_m.reshape(-1, d))).reshape(len(r_in), -1)
    inner = -0.5 * np.einsum("r,d,rd->", w_in, wdir, up + um - 2 * ux)

    t_hi = 60.0 / _first_eigenvalue(domain)
    # inner ball correction int (u(x) - u(y)) (J_D - j) dy; J_D - j is bounded
    dirs_c, wdir_c = _sphere_rule(d, 8, 16, near)
    gc, gwc = np.polynomial.legendre.leggauss(8)
    r_c = 0.5 * rho * (gc + 1)
    w_c = 0.5 * rho * gwc * r_c ** (d - 1)
    ys = (x + r_c[:, None, None] * dirs_c[None]).reshape(-1, d)
    rule_c = _time_rule(spec, 1e-4 * dl * dl, min(t_hi, 0.1 * min(domain.sides) ** 2), per_decade)
    diff = jumping_kernel_points(domain, rule_c, x, ys, subtract_free=True)
    # times above 0.1 L^2: the free kernel is negligible against the full one only
    # for small boxes, so the remaining range is added with both terms explicitly
    if rule_c.t_hi < t_hi:
        rule_l = _time_rule(spec, rule_c.t_hi, t_hi, per_decade)
        r_abs = np.linalg.norm(ys - x, axis=1)
        free = (rule_l.weights * rule_l.levy) @ (
            (4 * math.pi * rule_l.nodes[:, None]) ** (-d / 2)
            * np.exp(-r_abs[None, :] ** 2 / (4 * rule_l.nodes[:, None])))
        diff = diff + jumping_kernel_points(domain, rule_l, x, ys) - free
    uc = np.asarray(u(ys)).reshape(len(r_c), -1)
    correction = np.einsum("r,d,rd->", w_c, wdir_c, (ux - uc) * diff.reshape(len(r_c), -1))

    # outer region
    dirs_o, wdir_o, rmax = _face_rule(domain, x, n_face)
    radii, rweights = _outer_radial(rho, rmax)
    ys = x + radii[..., None] * dirs_o[:, None, :]
    rule_o = _time_rule(spec, 1e-3 * rho * rho, t_hi, per_decade)
    J = jumping_kernel_points(domain, rule_o, x, ys.reshape(-1, d)).reshape(radii.shape)
    uy = np.asarray(u(ys.reshape(-1, d))).reshape(radii.shape)
    outer = np.sum(wdir_o[:, None] * rweights * radii ** (d - 1) * (ux - uy) * J)

    kappa = killing_kappa(spec, domain, x)
    total = inner + correction + outer + kappa * ux
    if return_parts:
        return total, {"inner": inner, "correction": correction, "outer": outer,
                       "kappa": kappa, "u": ux, "rho": rho}
    return total


_RAD_X, _RAD_W = np.polynomial.legendre.leggauss(6)
_END_X, _END_W = np.polynomial.legendre.leggauss(16)


def _outer_radial(rho, rmax):
    """Radial nodes/weights on [rho, rmax] per direction -> arrays (ndir, nr)."""
    rmid = np.maximum(rho, 0.5 * rmax)
    # log-spaced panels on [rho, rmid]: a fixed count of panels per direction
    npan = 8
    span = np.log(rmid / rho)
    edges = np.log(rho) + span[:, None] * np.linspace(0, 1, npan + 1)[None, :]
    a, b = edges[:, :-1], edges[:, 1:]
    v = 0.5 * (b - a)[..., None] * (_RAD_X + 1) + a[..., None]
    r1 = np.exp(v)
    w1 = 0.5 * (b - a)[..., None] * _RAD_W * r1
    r1 = r1.reshape(len(rmax), -1)
    w1 = w1.reshape(len(rmax), -1)
    # cubic grading towards the exit point on [rmid, rmax]
    sig = 0.5 * (_END_X + 1)
    h = (rmax - rmid)[:, None]
    r2 = rmax[:, None] - h * sig ** 3
    w2 = h * 3 * sig ** 2 * 0.5 * _END_W
    return np.concatenate([r1, r2], axis=1), np.concatenate([w1, w2], axis=1)


# -- interpolation of grid fields ---------------------------------------------

class GridInterpolant:
    """Spline interpolation of (values / weight) on a graded grid, times weight(x).

    Interpolation runs in the grading variable s, where graded nodes are
    uniform.  ``weight`` is a callable on points (k, d) returning positive
    values (e.g. the Poisson potential), used to factor out the boundary
    singularity.
    """

    def __init__(self, grid, values, weight=None, weight_values=None, order=5):
        if grid.kind != "graded":
            raise ValueError("interpolation needs a graded grid")
        self.grid = grid
        self.weight = weight
        self.order = order
        v = np.asarray(values, float).reshape(grid.shape)
        if weight is not None:
            wv = weight(grid.points()).reshape(grid.shape) if weight_values is None \
                else np.asarray(weight_values, float).reshape(grid.shape)
            v = v / wv
        self.ratio = v

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        coords = []
        for k, (L, m) in enumerate(zip(self.grid.domain.sides, self.grid.n)):
            s = grading_inverse(np.clip(x[:, k] / L, 0, 1), self.grid.gamma)
            coords.append(s * m - 0.5)
        vals = map_coordinates(self.ratio, coords, order=self.order, mode="nearest")
        if self.weight is not None:
            vals = vals * self.weight(x)
        return vals


# -- tensor Green operator on graded grids ------------------------------------

class TensorGreen:
    """G^phi_D on the nodes of a tensor grid.

    Data are modelled as g = h * sum_k w_k(x_k) with w_k = face_weight(.,
    L_k, beta) and h the per-axis 4-point Lagrange interpolant of its node
    values (constant beyond the end nodes).  The sum keeps h bounded near
    edges and corners, where data singular at the faces behave like a sum of
    face terms.  ``weight_exponent`` beta = 0 models smooth data.  The model
    is resolved on a refined sub-grid per axis when the operator is built.

    Times below t0 use closed-form product integration of the image-series
    kernel against the model; times above t0 use the eigen-expansion of the
    same model, with multiplier int_{t0}^inf u(t) e^{-lambda t} dt.  Mass
    below t_lo is collapsed onto the identity.
    """

    def __init__(self, spec, grid, t0=None, per_decade=6, t_lo=None, weight_exponent=0.0):
        dom = grid.domain
        self.spec, self.grid, self.domain = spec, grid, dom
        self.d = dom.d
        self.beta = float(weight_exponent)
        dmin = min(min(y[0], L - y[-1]) for y, L in zip(grid.nodes, dom.sides))
        self.t0 = 0.01 * min(dom.sides) ** 2 if t0 is None else t0
        self.t_lo = 1e-3 * dmin * dmin if t_lo is None else t_lo
        rule = _time_rule(spec, self.t_lo, self.t0, per_decade)
        self.times = rule.nodes
        self.cw = rule.weights * rule.potential
        self.mass_below = rule.potential_below
        self.modes = [int(math.ceil(math.sqrt(40.0 / self.t0) * L / math.pi)) for L in dom.sides]
        # per axis, plain (w = 1) and weighted short-time weights W and mode
        # projections Q
        self.W, self.Q, self.Ww, self.Qw, self.E = [], [], [], [], []
        for M, y, L in zip(self.modes, grid.nodes, dom.sides):
            for beta, W, Q in ((0.0, self.W, self.Q), (self.beta, self.Ww, self.Qw)):
                if beta == 0 and W is self.Ww:
                    W.append(self.W[-1])
                    Q.append(self.Q[-1])
                    continue
                z, P = heat1d.weighted_refinement(y, L, beta)
                W.append(np.stack([heat1d.product_weights(t, y, z, L) @ P for t in self.times]))
                Q.append(heat1d.projection_weights(M, z, L) @ P)
            self.E.append(sine_table(L, M, y))
        lam = 0.0
        for k, (M, L) in enumerate(zip(self.modes, dom.sides)):
            shape = [1] * self.d
            shape[k] = M
            lam = lam + ((np.arange(1, M + 1) * math.pi / L) ** 2).reshape(shape)
        lam = np.broadcast_to(lam, tuple(self.modes))
        short = np.tensordot(self.cw, np.exp(-np.multiply.outer(self.times, lam)), axes=1)
        self.multiplier = 1.0 / np.asarray(bf.phi_eval(spec, lam), float) - short - self.mass_below

    def weight(self):
        """Model weight sum_k w_k(x_k) at the nodes."""
        w = 0.0
        for k, (y, L) in enumerate(zip(self.grid.nodes, self.domain.sides)):
            shape = [1] * self.d
            shape[k] = -1
            wk = heat1d.face_weight(y, L, self.beta) if self.beta > 0 else np.ones(y.size)
            w = w + wk.reshape(shape)
        return np.broadcast_to(w, self.grid.shape)

    def _tensor_apply(self, h, W, Q):
        # short times: batched mode products, summed over t with weights
        X = h[None]
        for k in range(self.d):
            X = np.moveaxis(X, k + 1, 1)
            sh = X.shape
            X = np.matmul(W[k], X.reshape(sh[0], sh[1], -1))
            X = np.moveaxis(X.reshape((len(self.times), W[k].shape[1]) + sh[2:]), 1, k + 1)
        out = np.tensordot(self.cw, X, axes=1)
        # long times in the eigenbasis
        C = h
        for k in range(self.d):
            C = np.moveaxis(np.tensordot(Q[k], C, axes=([1], [k])), 0, k)
        C = C * self.multiplier
        for k in range(self.d):
            C = np.moveaxis(np.tensordot(self.E[k], C, axes=([1], [k])), 0, k)
        return out + C

    def apply(self, g):
        g = np.asarray(g, float).reshape(self.grid.shape)
        h = g / self.weight()
        out = 0.0
        for i in range(self.d):
            W = [self.Ww[k] if k == i else self.W[k] for k in range(self.d)]
            Q = [self.Qw[k] if k == i else self.Q[k] for k in range(self.d)]
            out = out + self._tensor_apply(h, W, Q)
        return out + self.mass_below * g
