"""Free-space operator phi(-Delta) on R^d and Hölder-norm ratio tests."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from . import bernstein as bf
from .errors import DomainError, NumericalError
from .operators import _sphere_rule

_GX, _GW = np.polynomial.legendre.leggauss(8)


def sphere_area(d):
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def jump_density(spec, d, r):
    """j(r) on R^d; closed form for the stable family."""
    r = np.asarray(r, float)
    if spec.family == "stable":
        a = spec.parameters["alpha"]
        return bf.stable_jump_constant(d, a) * r ** (-d - a)
    return np.asarray(bf.jump_kernel(spec, d, r), float)


def tail_mass(spec, d, R):
    """int_{|z| > R} j(|z|) dz."""
    if spec.family == "stable":
        a = spec.parameters["alpha"]
        return sphere_area(d) * bf.stable_jump_constant(d, a) * R ** (-a) / a
    val, _ = integrate.quad(lambda r: float(jump_density(spec, d, r)) * r ** (d - 1), R, np.inf,
                            epsrel=1e-10, limit=200)
    return sphere_area(d) * val


def _log_panels(a, b, per_decade=4):
    n = max(1, int(math.ceil(per_decade * math.log10(b / a))))
    edges = np.geomspace(a, b, n + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    # Gauss in log r
    la, lb = np.log(lo), np.log(hi)
    v = 0.5 * (lb - la) * (_GX + 1) + la
    r = np.exp(v)
    w = 0.5 * (lb - la) * _GW * r
    return r.ravel(), w.ravel()


def fd_hessian(u, x, h=1e-4):
    """Central-difference Hessian of a callable on points (k, d)."""
    x = np.asarray(x, float)
    d = x.size
    I = np.eye(d) * h
    pts = [x]
    for i in range(d):
        for j in range(i, d):
            pts += [x + I[i] + I[j], x + I[i] - I[j], x - I[i] + I[j], x - I[i] - I[j]]
    vals = np.asarray(u(np.asarray(pts)), float)
    H = np.empty((d, d))
    k = 1
    for i in range(d):
        for j in range(i, d):
            pp, pm, mp, mm = vals[k:k + 4]
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h * h)
            k += 4
    return H


def apply_phi_rd(spec, d, u, x, hess=None, radii=(0.05, 50.0), r_hess=1e-3, rtol=1e-4,
                 n_theta=16, n_phi=32, return_parts=False):
    """phi(-Delta) u (x) on R^d, that is -P.V. int (u(y) - u(x)) j(|y - x|) dy.

    Balls of radius ``r_hess`` use the Hessian (``hess(x)`` or central
    differences); up to radii[0] symmetric second differences; up to radii[1]
    plain differences; beyond, the u(x) part is exact and the u(y) part is
    bounded by max |u| on the outer sphere.  ``u`` accepts points (k, d).
    """
    if spec.family == "identity":
        raise DomainError("the identity spec has no jump representation")
    x = np.asarray(x, float).reshape(d)
    r_in, r_out = radii
    ux = float(np.asarray(u(x[None, :]))[0])
    dirs, wdir = _sphere_rule(d, n_theta, n_phi, 0)
    area = sphere_area(d)

    H = fd_hessian(u, x) if hess is None else np.asarray(hess(x), float)
    mom, _ = integrate.quad(lambda r: float(jump_density(spec, d, r)) * r ** (d + 1), 0.0, r_hess,
                            epsrel=1e-10, limit=200)
    hessian_part = 0.5 * np.trace(H) / d * area * mom

    r, w = _log_panels(r_hess, r_in)
    pts = x + r[:, None, None] * dirs[None]
    up = np.asarray(u(pts.reshape(-1, d))).reshape(len(r), -1)
    um = np.asarray(u((2 * x - pts).reshape(-1, d))).reshape(len(r), -1)
    jr = jump_density(spec, d, r) * r ** (d - 1) * w
    shell = 0.5 * np.einsum("r,k,rk->", jr, wdir, up + um - 2 * ux)

    r, w = _log_panels(r_in, r_out)
    pts = x + r[:, None, None] * dirs[None]
    uy = np.asarray(u(pts.reshape(-1, d))).reshape(len(r), -1)
    jr = jump_density(spec, d, r) * r ** (d - 1) * w
    outer = np.einsum("r,k,rk->", jr, wdir, uy - ux)

    mass = tail_mass(spec, d, r_out)
    tail = -ux * mass
    far = np.asarray(u((x + r_out * dirs).reshape(-1, d)))
    tail_bound = float(np.max(np.abs(far))) * mass
    total = -(hessian_part + shell + outer + tail)
    if tail_bound > rtol * max(abs(total), 1e-300):
        raise NumericalError("u is not negligible at the outer radius",
                             {"tail_bound": tail_bound, "value": total, "r_out": r_out})
    if return_parts:
        return total, {"hessian": hessian_part, "shell": shell, "outer": outer, "tail": tail,
                       "tail_bound": tail_bound}
    return total


def fourier_radial_oracle(spec, d, uhat):
    """phi(-Delta) u (0) for radial u: (2 pi)^-d |S^{d-1}| int phi(xi^2) uhat(xi) xi^(d-1) dxi."""
    f = lambda xi: float(bf.phi_eval(spec, xi * xi)) * uhat(xi) * xi ** (d - 1) if xi > 0 else 0.0
    val, _ = integrate.quad(f, 0.0, np.inf, epsrel=1e-12, limit=400)
    return (2 * math.pi) ** (-d) * sphere_area(d) * val


# -- Hölder norms on pair sets ------------------------------------------------

@dataclass
class PairSet:
    x: np.ndarray
    y: np.ndarray
    level: np.ndarray

    @property
    def separation(self):
        return np.linalg.norm(self.y - self.x, axis=1)

    def scaled(self, s, center=0.0):
        return PairSet(center + s * (self.x - center), center + s * (self.y - center), self.level)


def dyadic_pairs(lo, hi, n_centers=16, levels=11, h_max=1.0):
    """Pairs x, y = c -+ h e / 2 with h = h_max 2^-m, m < levels.

    Centres are unscrambled Halton points of the box [lo, hi]; directions
    cycle through the axes and the main diagonal; pairs leaving the box are
    shifted back inside along e.
    """
    lo, hi = np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))
    d = lo.size
    if np.any(hi - lo < h_max):
        raise DomainError("box smaller than the largest separation")
    c = lo + qmc.Halton(d, scramble=False).random(n_centers + 1)[1:] * (hi - lo)
    dirs = list(np.eye(d)) + ([np.ones(d) / math.sqrt(d)] if d > 1 else [])
    xs, ys, lv = [], [], []
    for m in range(levels):
        h = h_max * 2.0 ** -m
        for i, ci in enumerate(c):
            e = dirs[(i + m) % len(dirs)]
            a, b = ci - 0.5 * h * e, ci + 0.5 * h * e
            shift = np.maximum(lo - np.minimum(a, b), 0) - np.maximum(np.maximum(a, b) - hi, 0)
            xs.append(a + shift)
            ys.append(b + shift)
            lv.append(m)
    return PairSet(np.asarray(xs), np.asarray(ys), np.asarray(lv))


@dataclass
class HolderEstimate:
    k: int
    alpha: float
    sup_norm: float
    seminorm: float
    by_level: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)

    @property
    def norm(self):
        return self.sup_norm + self.seminorm

    def to_dict(self):
        out = asdict(self)
        out["norm"] = self.norm
        return out


def _derivatives(u, pts, k, h):
    """All k-th order partials (central differences) as an array (npts, d^k)."""
    if k == 0:
        return np.asarray(u(pts), float)[:, None]
    d = pts.shape[1]
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        cols.append((_derivatives(u, pts + e, k - 1, h) - _derivatives(u, pts - e, k - 1, h)) / (2 * h))
    return np.concatenate(cols, axis=1)


def holder_seminorm(u, pairs, k=0, alpha=0.5, fd_step=None, values=None):
    """[D^k u]_alpha = max |D^k u(x) - D^k u(y)| / |x - y|^alpha over the pair set.

    ``values`` optionally holds precomputed u at (x, y) for k = 0.  The sup
    part is sum_{i<=k} max |D^i u| over the pair points.
    """
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    sep = pairs.separation
    h = fd_step if fd_step is not None else 0.05 * sep.min()
    pts = np.vstack([pairs.x, pairs.y])
    m = len(pairs.x)
    if k == 0 and values is not None:
        Dk = np.asarray(values, float).reshape(-1, 1)
    else:
        Dk = _derivatives(u, pts, k, h)
    sup = float(np.max(np.linalg.norm(Dk, axis=1)))
    for i in range(k):
        sup += float(np.max(np.linalg.norm(_derivatives(u, pts, i, h), axis=1)))
    ratio = np.linalg.norm(Dk[:m] - Dk[m:], axis=1) / sep ** alpha
    levels = sorted(set(pairs.level.tolist()))
    by = [float(ratio[pairs.level == lv].max()) for lv in levels]
    cum = list(np.maximum.accumulate(by).astype(float))
    return HolderEstimate(k, alpha, sup, float(ratio.max()), by, cum)


# -- ratio suite --------------------------------------------------------------

def bump(x):
    """exp(-1 / (1 - |x|^2)) inside the unit ball, 0 outside."""
    x = np.atleast_2d(x)
    r2 = np.sum(x * x, axis=1)
    out = np.zeros(len(x))
    m = r2 < 1
    out[m] = np.exp(-1.0 / (1.0 - r2[m]))
    return out


def default_family(d=1):
    """Smooth compactly supported test functions."""
    shift = np.zeros(d)
    shift[0] = 0.3
    return {
        "bump": bump,
        "wide_bump": lambda x: bump(np.atleast_2d(x) / 1.5),
        "bump_pair": lambda x: bump(np.atleast_2d(x) - shift) - 0.5 * bump(2 * (np.atleast_2d(x) + shift)),
    }


def target_exponent(k, alpha, delta2):
    """Whether phi(-Delta) maps C^{k, alpha} into a Hölder class, and that target order."""
    two = 2 * delta2
    if k == 0:
        ok, why = alpha > two, "needs alpha > 2 delta2"
    elif k == 1:
        ok, why = alpha < two < 1 + alpha, "needs alpha < 2 delta2 < 1 + alpha"
    elif k == 2:
        ok, why = 1 + alpha < two, "needs 1 + alpha < 2 delta2"
    else:
        ok, why = False, "k must be 0, 1 or 2"
    s = k + alpha - two
    return ok, why, int(math.floor(s)), s - math.floor(s)


def lemma_ratio_suite(spec, family=None, alpha=0.8, k=0, scales=(1.0, 0.5, 0.25, 0.125), d=1,
                      n_centers=16, levels=11, bound=10.0):
    """||phi(-Delta) u_s||_{C^{k', a'}} / ||u_s||_{C^{k, alpha}} for u_s(x) = u(x / s).

    Pair sets are matched: the pair set for scale s is s times the one for
    s = 1 on [-1.5, 1.5]^d.  Passes iff max/min over scales < ``bound`` for
    every family member.
    """
    cert = bf.scaling_certificate(spec)
    ok, why, k2, a2 = target_exponent(k, alpha, cert.delta2)
    report = {"spec": spec.to_dict(), "alpha": alpha, "k": k, "delta2": cert.delta2,
              "target": [k2, a2], "rows": [], "members": {}}
    if not ok or a2 <= 0:
        report.update(skipped=True, reason=why if not ok else "target exponent is an integer", ok=True)
        return report
    family = default_family(d) if family is None else family
    base = dyadic_pairs(-1.5 * np.ones(d), 1.5 * np.ones(d), n_centers, levels, h_max=1.0)
    for name, u in family.items():
        ratios = []
        for s in scales:
            us = (lambda f, s: lambda x: f(np.atleast_2d(x) / s))(u, s)
            pairs = base.scaled(s)
            hu = holder_seminorm(us, pairs, k, alpha)
            if hu.norm == 0:
                ratio, hv = 0.0, None
            else:
                v = lambda pts: np.array([apply_phi_rd(spec, d, us, p, radii=(0.05 * s, 50.0))
                                          for p in np.atleast_2d(pts)])
                if k2 == 0:
                    vals = v(np.vstack([pairs.x, pairs.y]))
                    hv = holder_seminorm(None, pairs, 0, a2, values=vals)
                else:
                    hv = holder_seminorm(v, pairs, k2, a2)
                ratio = hv.norm / hu.norm
            ratios.append(ratio)
            report["rows"].append({"member": name, "scale": s, "norm_u": hu.norm,
                                   "norm_phi_u": hv.norm if hv else 0.0, "ratio": ratio})
        pos = [r for r in ratios if r > 0]
        spread = max(pos) / min(pos) if pos else 1.0
        report["members"][name] = {"max": max(ratios), "min": min(ratios), "spread": spread,
                                   "bounded": spread < bound}
    report["skipped"] = False
    report["ok"] = all(m["bounded"] for m in report["members"].values())
    return report


def solution_holder(solution, beta, K_delta=0.25, n_centers=16, levels=10):
    """Hölder pair-set estimate of a moderate solution on {delta_D >= K_delta}."""
    L = np.asarray(solution.domain.sides)
    lo, hi = K_delta * np.ones_like(L), L - K_delta
    pairs = dyadic_pairs(lo, hi, n_centers, levels, h_max=float(np.min(hi - lo)))
    return holder_seminorm(solution.interpolant(), pairs, 0, beta)
