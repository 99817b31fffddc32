"""Complete Bernstein functions and the densities and kernels derived from them.

A Bernstein function is represented by a :class:`BernsteinSpec`.  Closed forms
are used for the Laplace exponent of every family; the Lévy density and the
potential density fall back to Gaver-Stehfest inversion when no closed form is
known.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, NumericalError

FAMILIES = ("stable", "sum_of_stables", "tempered_stable", "relativistic",
            "custom", "conjugate", "identity")


@dataclass(frozen=True, eq=False)
class BernsteinSpec:
    """A complete Bernstein function with zero drift.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    parameters : dict
        Family parameters: ``alpha`` (stable), ``weights``/``exponents``
        (sum of stables, exponents are the powers of lambda), ``alpha``/``theta``
        (tempered stable), ``alpha``/``mass`` (relativistic), ``base``
        (conjugate of a non-stable spec).
    label : str
        Free text used in reports.
    levy : callable, optional
        Lévy density t -> mu(t) for the custom family.
    """

    family: str
    parameters: dict = field(default_factory=dict)
    label: str = ""
    levy: object = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        p = self.parameters
        if self.family in ("stable", "tempered_stable", "relativistic"):
            if not 0 < p["alpha"] < 2:
                raise ValueError("alpha must lie in (0, 2)")
        if self.family == "tempered_stable" and not p["theta"] > 0:
            raise ValueError("theta must be positive")
        if self.family == "relativistic" and not p["mass"] > 0:
            raise ValueError("mass must be positive")
        if self.family == "sum_of_stables":
            w = np.asarray(p["weights"], float)
            e = np.asarray(p["exponents"], float)
            if w.shape != e.shape or w.size == 0:
                raise ValueError("weights and exponents must have equal length")
            if np.any(w <= 0) or np.any(e <= 0) or np.any(e >= 1):
                raise ValueError("need positive weights and exponents in (0, 1)")
        if self.family == "custom" and not callable(self.levy):
            raise ValueError("custom family needs a callable Lévy density")
        if self.family == "conjugate" and not isinstance(p.get("base"), BernsteinSpec):
            raise ValueError("conjugate family needs a base spec")
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self):
        p = self.parameters
        if self.family == "conjugate":
            return f"conjugate({p['base'].label})"
        if self.family == "custom":
            return "custom"
        if self.family == "identity":
            return "identity"
        items = ",".join(f"{k}={v}" for k, v in p.items())
        return f"{self.family}({items})"

    @property
    def key(self):
        """Hashable identity used for caching."""
        if self.family == "custom":
            return ("custom", id(self.levy))
        if self.family == "conjugate":
            return ("conjugate", self.parameters["base"].key)
        return (self.family,) + tuple(
            (k, tuple(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
            for k, v in sorted(self.parameters.items()))

    def __eq__(self, other):
        return isinstance(other, BernsteinSpec) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __call__(self, lam):
        return phi_eval(self, lam)

    def to_dict(self):
        if self.family == "custom":
            raise ValueError("custom specs hold a Python callable and cannot be serialized")
        params = dict(self.parameters)
        if self.family == "conjugate":
            params["base"] = params["base"].to_dict()
        for k, v in params.items():
            if isinstance(v, np.ndarray):
                params[k] = v.tolist()
        return {"family": self.family, "parameters": params, "label": self.label}

    @classmethod
    def from_dict(cls, data):
        params = dict(data.get("parameters", {}))
        if data["family"] == "conjugate":
            params["base"] = cls.from_dict(params["base"])
        return cls(data["family"], params, data.get("label", ""))


def stable(alpha, label=""):
    return BernsteinSpec("stable", {"alpha": float(alpha)}, label)


def sum_of_stables(weights, exponents, label=""):
    return BernsteinSpec("sum_of_stables", {"weights": [float(w) for w in weights],
                                            "exponents": [float(e) for e in exponents]}, label)


def tempered_stable(alpha, theta, label=""):
    return BernsteinSpec("tempered_stable", {"alpha": float(alpha), "theta": float(theta)}, label)


def relativistic(alpha, mass, label=""):
    return BernsteinSpec("relativistic", {"alpha": float(alpha), "mass": float(mass)}, label)


def custom(levy_density, label="custom"):
    return BernsteinSpec("custom", {}, label, levy=levy_density)


def identity():
    """phi(lambda) = lambda, the Brownian limit (no jumps, potential density 1)."""
    return BernsteinSpec("identity", {}, "identity")


def _check_positive(x, what):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError(f"{what} must be positive")
    return x


def _half(spec):
    return spec.parameters["alpha"] / 2.0


def _custom_integral(spec, lam, kernel):
    # integrate in v = log(lam t) so that the integrand is smooth and O(1) wide
    mu = spec.levy

    def integrand(v):
        x = math.exp(v)
        t = x / lam
        try:
            val = kernel(x) * mu(t) * t
        except (OverflowError, ZeroDivisionError):
            return 0.0
        return val if math.isfinite(val) else 0.0

    total, err = 0.0, 0.0
    for a, b in ((-300.0, 0.0), (0.0, 300.0)):
        val, e = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-12, limit=400)
        total += val
        err += e
    if not err <= 1e-9 * abs(total) + 1e-300:
        raise NumericalError("Lévy integral did not converge",
                             {"lam": lam, "value": total, "error": err})
    return total


def phi_eval(spec, lam):
    """Laplace exponent phi(lam) for lam > 0 (scalar or array)."""
    lam = _check_positive(lam, "lam")
    f = spec.family
    if f == "stable":
        return lam ** _half(spec)
    if f == "identity":
        return lam.copy() if lam.ndim else float(lam)
    if f == "sum_of_stables":
        p = spec.parameters
        return sum(w * lam ** e for w, e in zip(p["weights"], p["exponents"]))
    if f == "tempered_stable":
        a, th = _half(spec), spec.parameters["theta"]
        return th ** a * np.expm1(a * np.log1p(lam / th))
    if f == "relativistic":
        a, m = _half(spec), spec.parameters["mass"]
        return m * np.expm1(a * np.log1p(lam / m ** (1.0 / a)))
    if f == "conjugate":
        return lam / phi_eval(spec.parameters["base"], lam)
    # custom
    kern = lambda x: -math.expm1(-x)
    out = np.vectorize(lambda l: _custom_integral(spec, l, kern), otypes=[float])(lam)
    return out if out.ndim else float(out)


def phi_derivative(spec, lam):
    """Exact derivative phi'(lam)."""
    lam = _check_positive(lam, "lam")
    f = spec.family
    if f == "stable":
        a = _half(spec)
        return a * lam ** (a - 1.0)
    if f == "identity":
        return np.ones_like(lam) if lam.ndim else 1.0
    if f == "sum_of_stables":
        p = spec.parameters
        return sum(w * e * lam ** (e - 1.0) for w, e in zip(p["weights"], p["exponents"]))
    if f == "tempered_stable":
        a, th = _half(spec), spec.parameters["theta"]
        return a * (lam + th) ** (a - 1.0)
    if f == "relativistic":
        a, m = _half(spec), spec.parameters["mass"]
        return a * (lam + m ** (1.0 / a)) ** (a - 1.0)
    if f == "conjugate":
        base = spec.parameters["base"]
        ph = phi_eval(base, lam)
        return (ph - lam * phi_derivative(base, lam)) / ph ** 2
    out = np.vectorize(lambda l: _custom_integral(spec, l, lambda x: x * math.exp(-x)) / l,
                       otypes=[float])(lam)
    return out if out.ndim else float(out)


def _phi_mp(spec, lam):
    """phi in mpmath arithmetic, or None when only a quadrature is available."""
    f = spec.family
    p = spec.parameters
    if f == "stable":
        return lam ** (mpmath.mpf(p["alpha"]) / 2)
    if f == "identity":
        return lam
    if f == "sum_of_stables":
        return sum(mpmath.mpf(w) * lam ** mpmath.mpf(e) for w, e in zip(p["weights"], p["exponents"]))
    if f == "tempered_stable":
        a, th = mpmath.mpf(p["alpha"]) / 2, mpmath.mpf(p["theta"])
        return th ** a * mpmath.expm1(a * mpmath.log1p(lam / th))
    if f == "relativistic":
        a, m = mpmath.mpf(p["alpha"]) / 2, mpmath.mpf(p["mass"])
        return m * mpmath.expm1(a * mpmath.log1p(lam / m ** (1 / a)))
    if f == "conjugate":
        base = _phi_mp(p["base"], lam)
        return None if base is None else lam / base
    return None


def _dphi_mp(spec, lam):
    f = spec.family
    p = spec.parameters
    if f == "stable":
        a = mpmath.mpf(p["alpha"]) / 2
        return a * lam ** (a - 1)
    if f == "identity":
        return mpmath.mpf(1)
    if f == "sum_of_stables":
        return sum(mpmath.mpf(w) * mpmath.mpf(e) * lam ** (mpmath.mpf(e) - 1)
                   for w, e in zip(p["weights"], p["exponents"]))
    if f == "tempered_stable":
        a, th = mpmath.mpf(p["alpha"]) / 2, mpmath.mpf(p["theta"])
        return a * (lam + th) ** (a - 1)
    if f == "relativistic":
        a, m = mpmath.mpf(p["alpha"]) / 2, mpmath.mpf(p["mass"])
        return a * (lam + m ** (1 / a)) ** (a - 1)
    if f == "conjugate":
        base = p["base"]
        ph, dph = _phi_mp(base, lam), _dphi_mp(base, lam)
        if ph is None or dph is None:
            return None
        return (ph - lam * dph) / ph ** 2
    return None


def _has_mp(spec):
    return _phi_mp(spec, mpmath.mpf(1)) is not None


def phi_inverse(spec, y, method="auto"):
    """Solve phi(lam) = y.

    The stable and identity families are inverted in closed form unless
    ``method="bisect"``; every other case uses a bracketing root finder on
    log(lam).
    """
    y = _check_positive(y, "y")
    if y.ndim:
        return np.array([phi_inverse(spec, v, method) for v in y.ravel()]).reshape(y.shape)
    y = float(y)
    if method == "auto" and spec.family == "stable":
        return y ** (1.0 / _half(spec))
    if method == "auto" and spec.family == "identity":
        return y
    logy = math.log(y)
    g = lambda v: math.log(phi_eval(spec, math.exp(v))) - logy
    lo, hi = -1.0, 1.0
    limit = math.log(1e300)
    while g(lo) > 0:
        lo *= 2
        if lo < -limit:
            raise DomainError(f"no bracket for phi^-1({y}) above 1e-300")
    while g(hi) < 0:
        hi *= 2
        if hi > limit:
            raise DomainError(f"no bracket for phi^-1({y}) below 1e300")
    lo, hi = max(lo, -limit), min(hi, limit)
    v = optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(v)


def conjugate(spec):
    """The conjugate Bernstein function lam / phi(lam)."""
    if spec.family == "stable":
        return stable(2.0 - spec.parameters["alpha"])
    if spec.family == "conjugate":
        return spec.parameters["base"]
    if spec.family == "identity":
        raise DomainError("the conjugate of the identity is constant, not a Bernstein function")
    return BernsteinSpec("conjugate", {"base": spec})


# -- Laplace inversion -------------------------------------------------------

MP_DIGITS = 40


@lru_cache(maxsize=None)
def _stehfest_exact(n):
    if n % 2:
        raise ValueError("stage count must be even")
    m = n // 2
    fac = math.factorial
    out = []
    for k in range(1, n + 1):
        s = Fraction(0)
        for j in range((k + 1) // 2, min(k, m) + 1):
            s += Fraction(j ** m * fac(2 * j),
                          fac(m - j) * fac(j) * fac(j - 1) * fac(k - j) * fac(2 * j - k))
        out.append((-1) ** (k + m) * s)
    return tuple(out)


def stehfest_weights(n):
    """Gaver-Stehfest weights V_1..V_n (n even), computed in exact arithmetic."""
    return np.array([float(v) for v in _stehfest_exact(n)])


def invert_laplace(transform, t, stages=(12, 14, 16, 18), tol=1e-3, mp_transform=None):
    """Gaver-Stehfest inversion with the stage count picked per point.

    ``transform`` must accept a 2-D float array of real abscissae.  When
    ``mp_transform`` (scalar mpmath callable) is given the weighted sums are
    formed in extended precision instead; the weights grow like 10^9 at 16
    stages, so double precision caps the accuracy near 1e-6.  For each t the
    pair of successive stage counts that agree best is located and the larger
    of the two is returned.
    """
    t = np.asarray(t, dtype=float)
    tt = _check_positive(np.atleast_1d(t), "t").ravel()
    ln2 = math.log(2.0)
    rows = []
    if mp_transform is None:
        for n in stages:
            s = np.outer(ln2 / tt, np.arange(1, n + 1))
            rows.append(ln2 / tt * (np.asarray(transform(s), float) @ stehfest_weights(n)))
    else:
        with mpmath.workdps(MP_DIGITS):
            mln2 = mpmath.log(2)
            for n in stages:
                weights = [mpmath.mpf(v.numerator) / v.denominator for v in _stehfest_exact(n)]
                row = []
                for tk in tt:
                    a = mln2 / mpmath.mpf(tk)
                    acc = mpmath.fsum(w * mp_transform(k * a) for k, w in enumerate(weights, 1))
                    row.append(float(a * acc))
                rows.append(row)
    rows = np.array(rows)
    gaps = np.abs(np.diff(rows, axis=0)) / np.maximum(np.abs(rows[1:]), 1e-300)
    best = np.argmin(gaps, axis=0)
    cols = np.arange(tt.size)
    worst = gaps[best, cols].max()
    if not worst <= tol:
        raise NumericalError("Gaver-Stehfest inversion stagnated",
                             {"relative_stage_gap": float(worst)})
    out = rows[best + 1, cols].reshape(np.shape(t))
    return out if out.ndim else float(out)


def potential_density(spec, t, method="auto"):
    """Density u(t) of the potential measure (Laplace transform 1/phi)."""
    t = _check_positive(t, "t")
    if method == "auto" and spec.family == "stable":
        a = _half(spec)
        return t ** (a - 1.0) / special.gamma(a)
    if spec.family == "identity":
        return np.ones_like(t) if t.ndim else 1.0
    mp = (lambda s: 1 / _phi_mp(spec, s)) if _has_mp(spec) else None
    return invert_laplace(lambda s: 1.0 / phi_eval(spec, s), t, mp_transform=mp)


def potential_measure(spec, t, method="auto"):
    """Cumulative potential U(t) = int_0^t u(s) ds (transform 1/(lam phi))."""
    t = _check_positive(t, "t")
    if method == "auto" and spec.family == "stable":
        a = _half(spec)
        return t ** a / special.gamma(1.0 + a)
    if spec.family == "identity":
        return t.copy() if t.ndim else float(t)
    mp = (lambda s: 1 / (s * _phi_mp(spec, s))) if _has_mp(spec) else None
    return invert_laplace(lambda s: 1.0 / (s * phi_eval(spec, s)), t, mp_transform=mp)


def levy_density(spec, t, method="auto"):
    """Lévy density mu(t); t mu(t) has Laplace transform phi'."""
    t = _check_positive(t, "t")
    f = spec.family
    if f == "identity":
        raise DomainError("the identity has no jumps")
    if method == "auto":
        if f in ("stable", "tempered_stable", "relativistic"):
            a = _half(spec)
            out = a / special.gamma(1.0 - a) * t ** (-1.0 - a)
            if f == "tempered_stable":
                out = out * np.exp(-spec.parameters["theta"] * t)
            elif f == "relativistic":
                out = out * np.exp(-spec.parameters["mass"] ** (1.0 / a) * t)
            return out
        if f == "sum_of_stables":
            p = spec.parameters
            return sum(w * e / special.gamma(1.0 - e) * t ** (-1.0 - e)
                       for w, e in zip(p["weights"], p["exponents"]))
        if f == "custom":
            out = np.vectorize(spec.levy, otypes=[float])(t)
            return out if out.ndim else float(out)
    mp = (lambda s: _dphi_mp(spec, s)) if _has_mp(spec) else None
    return invert_laplace(lambda s: phi_derivative(spec, s), t, mp_transform=mp) / t


def jump_kernel(spec, d, r, rtol=1e-10):
    """Jump kernel j(r) = int_0^inf (4 pi t)^(-d/2) exp(-r^2/4t) mu(t) dt."""
    r = _check_positive(r, "r")
    if spec.family == "identity":
        raise DomainError("the identity has no jump kernel")

    def one(rr):
        def integrand(t):
            return (4 * math.pi * t) ** (-d / 2) * math.exp(-rr * rr / (4 * t)) * levy_density(spec, t)

        # log-t panels around t = r^2 (below r^2/1000 the Gaussian is < e^-250),
        # then the tail in t
        r2 = rr * rr
        top = 1e4 * max(r2, 1.0)
        edges = np.log([1e-3 * r2, 1e-1 * r2, r2, 10 * r2, max(100 * r2, 1.0), top])
        edges = np.unique(edges)
        total, err = 0.0, 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(lambda v: integrand(math.exp(v)) * math.exp(v), a, b,
                                    epsabs=0.0, epsrel=rtol, limit=200)
            total += val
            err += e
        val, e = integrate.quad(integrand, top, np.inf, epsabs=0.0, epsrel=rtol, limit=200)
        total += val
        err += e
        if not err <= 1e-6 * total:
            raise NumericalError("jump kernel quadrature failed", {"r": rr, "error": err})
        return total

    out = np.vectorize(one, otypes=[float])(r)
    return out if out.ndim else float(out)


def stable_jump_constant(d, alpha):
    """A(d, alpha) with j(r) = A r^(-d-alpha) for phi = lam^(alpha/2)."""
    return (alpha * 2 ** (alpha - 1) * math.pi ** (-d / 2)
            * math.gamma((d + alpha) / 2) / math.gamma(1 - alpha / 2))


@dataclass(frozen=True)
class RenewalProxy:
    """Phi(t) = phi(t^-2)^(-1/2), comparable to the renewal function near 0."""

    spec: BernsteinSpec

    def phi_big(self, t):
        t = _check_positive(t, "t")
        return phi_eval(self.spec, t ** -2.0) ** -0.5

    __call__ = phi_big


def renewal_proxy(spec):
    return RenewalProxy(spec)


# -- scaling diagnostics ------------------------------------------------------

@dataclass
class ScalingCertificate:
    delta1: float
    delta2: float
    a1: float
    a2: float
    t_grid: np.ndarray
    lam_grid: np.ndarray
    ok: bool
    reason: str = ""

    def holds(self, spec, t, lam, rtol=1e-12):
        """Check the sandwich at arbitrary (t, lam) pairs; returns a bool array."""
        t, lam = np.broadcast_arrays(np.asarray(t, float), np.asarray(lam, float))
        ratio = phi_eval(spec, lam * t) / phi_eval(spec, t)
        lo = self.a1 * lam ** self.delta1
        hi = self.a2 * lam ** self.delta2
        return (ratio >= lo * (1 - rtol)) & (ratio <= hi * (1 + rtol))


def local_index(spec, lam):
    """lam phi'(lam) / phi(lam), the limit of the scaling log-ratio as the dilation tends to 1."""
    return lam * phi_derivative(spec, lam) / phi_eval(spec, lam)


def scaling_certificate(spec, t_grid=None, lam_grid=None):
    """Estimate the weak scaling indices at infinity on a grid.

    The log-ratios log(phi(lam t)/phi(t))/log(lam) are averages of the local
    index over [t, lam t]; the local index at every grid product is therefore
    included so that the sandwich also holds between grid points.
    """
    t_grid = np.logspace(0, 6, 25) if t_grid is None else np.asarray(t_grid, float)
    lam_grid = np.logspace(0, 6, 25) if lam_grid is None else np.asarray(lam_grid, float)
    if np.any(t_grid < 1) or np.any(lam_grid < 1):
        raise DomainError("scaling grids must lie in [1, inf)")
    T, LAM = np.meshgrid(t_grid, lam_grid[lam_grid > 1], indexing="ij")
    ratio = phi_eval(spec, LAM * T) / phi_eval(spec, T)
    logr = np.log(ratio) / np.log(LAM)
    prods = np.unique(np.concatenate([t_grid, (T * LAM).ravel()]))
    loc = local_index(spec, prods)
    d1 = float(min(logr.min(initial=np.inf), loc.min()))
    d2 = float(max(logr.max(initial=-np.inf), loc.max()))
    if logr.size:
        a1 = float(min(1.0, (ratio / LAM ** d1).min()))
        a2 = float(max(1.0, (ratio / LAM ** d2).max()))
    else:
        a1 = a2 = 1.0
    ok = 0 < d1 <= d2 < 1
    reason = "" if ok else f"indices ({d1:.4g}, {d2:.4g}) outside (0, 1)"
    return ScalingCertificate(d1, d2, a1, a2, t_grid, lam_grid, ok, reason)


def derivative_ratio_check(spec, lam_grid=None):
    """Table of lam phi'(lam)/phi(lam) by central differences (h = 1e-4 lam)."""
    lam = np.logspace(0, 4, 41) if lam_grid is None else np.asarray(lam_grid, float)
    if np.any(lam < 1):
        raise DomainError("lam_grid must lie in [1, inf)")
    h = 1e-4 * lam
    dphi = (phi_eval(spec, lam + h) - phi_eval(spec, lam - h)) / (2 * h)
    ratio = lam * dphi / phi_eval(spec, lam)
    lower = float(ratio.min())
    ok = bool(lower > 0 and ratio.max() <= 1 + 1e-6)
    return {"lam": lam, "ratio": ratio, "lower_bound": lower, "ok": ok}
