"""Reaction terms f, the transforms F, varphi = int_t^inf F^(-1/2), psi = varphi^-1,
and the growth conditions linking f with a Bernstein function.

Large arguments are handled in log space throughout: psi(s) overflows double
precision long before s reaches the scales probed by the blow-up test.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from . import bernstein as bf
from .errors import ConditionError, DomainError

HOLDS, FAILS, INCONCLUSIVE = "holds", "fails", "inconclusive"


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Reaction term f >= 0 on [0, inf).

    Families: ``power`` (f = t^p), ``power_log`` (f = t^p log(1+t)^q) and
    ``custom`` (callables ``f`` and ``fprime``).  ``m`` and ``M`` are the
    constants in (1+m) f <= t f' <= (1+M) f; they are analytic for the closed
    families and grid estimates for custom ones.
    """

    family: str
    parameters: dict = field(default_factory=dict)
    label: str = ""
    f: object = None
    fprime: object = None
    m: float = float("nan")
    M: float = float("nan")

    def __post_init__(self):
        p = self.parameters
        if self.family == "power":
            if not p["p"] > 1:
                raise ValueError("power family needs p > 1")
            mm = MM = p["p"] - 1.0
        elif self.family == "power_log":
            if not (p["p"] >= 1 and p["q"] >= 0 and p["p"] + p["q"] > 1):
                raise ValueError("power_log family needs p >= 1, q >= 0, p + q > 1")
            mm, MM = p["p"] - 1.0, p["p"] + p["q"] - 1.0
        elif self.family == "custom":
            if not (callable(self.f) and callable(self.fprime)):
                raise ValueError("custom family needs f and fprime callables")
            est = check_F(self)
            mm, MM = est.m, est.M
        else:
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "m", float(mm))
        object.__setattr__(self, "M", float(MM))
        if not self.label:
            items = ",".join(f"{k}={v}" for k, v in p.items())
            object.__setattr__(self, "label", f"{self.family}({items})")

    def __call__(self, t):
        return f_eval(self, t)

    def to_dict(self):
        if self.family == "custom":
            raise ValueError("custom nonlinearities cannot be serialized")
        return {"family": self.family, "parameters": dict(self.parameters), "label": self.label}

    @classmethod
    def from_dict(cls, data):
        return cls(data["family"], dict(data.get("parameters", {})), data.get("label", ""))


def power(p, label=""):
    return Nonlinearity("power", {"p": float(p)}, label)


def power_log(p, q, label=""):
    return Nonlinearity("power_log", {"p": float(p), "q": float(q)}, label)


def custom(f, fprime, label="custom"):
    return Nonlinearity("custom", {}, label, f=f, fprime=fprime)


def _nonneg(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)):
        raise DomainError("the reaction term is only defined on t >= 0")
    return t


def f_eval(nl, t):
    t = _nonneg(t)
    p = nl.parameters
    if nl.family == "power":
        return t ** p["p"]
    if nl.family == "power_log":
        return t ** p["p"] * np.log1p(t) ** p["q"]
    out = np.vectorize(nl.f, otypes=[float])(t)
    return out if out.ndim else float(out)


def f_prime(nl, t):
    t = _nonneg(t)
    p = nl.parameters
    if nl.family == "power":
        return p["p"] * t ** (p["p"] - 1.0)
    if nl.family == "power_log":
        a, q = p["p"], p["q"]
        lg = np.log1p(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * t ** (a - 1) * lg ** q + q * t ** a * lg ** (q - 1) / (1 + t)
        return np.where(t > 0, out, 0.0)
    out = np.vectorize(nl.fprime, otypes=[float])(t)
    return out if out.ndim else float(out)


def log_f_of_log(nl, x):
    """log f(e^x), finite for every real x."""
    x = np.asarray(x, dtype=float)
    p = nl.parameters
    if nl.family == "power":
        return p["p"] * x
    if nl.family == "power_log":
        return p["p"] * x + p["q"] * np.log(np.logaddexp(0.0, x) + 0.0)
    return np.log(f_eval(nl, np.exp(x)))


@dataclass
class FCheck:
    m: float
    M: float
    ok: bool
    t_grid: np.ndarray
    index: np.ndarray
    reason: str = ""


def check_F(nl, t_grid=None):
    """Grid estimate of m and M from t f'(t)/f(t) - 1."""
    t = np.logspace(-6, 12, 181) if t_grid is None else np.asarray(t_grid, float)
    if np.any(t <= 0):
        raise DomainError("t_grid must be positive")
    fv = f_eval(nl, t)
    if np.any(~(fv > 0)):
        raise ConditionError("f must be positive on (0, inf)")
    idx = t * f_prime(nl, t) / fv - 1.0
    m, M = float(idx.min()), float(idx.max())
    ok = m > 0
    return FCheck(m, M, ok, t, idx, "" if ok else f"m = {m:.4g} is not positive")


def big_F(nl, t):
    """F(t) = int_0^t f."""
    t = _nonneg(t)
    if nl.family == "power":
        p = nl.parameters["p"]
        return t ** (p + 1) / (p + 1)
    out = np.vectorize(lambda x: math.exp(log_big_F_of_log(nl, math.log(x))) if x > 0 else 0.0,
                       otypes=[float])(t)
    return out if out.ndim else float(out)


_PANEL_ORDER = 12
_px, _pw = np.polynomial.legendre.leggauss(_PANEL_ORDER)
_PANEL_NODES = (np.arange(64)[:, None] + 0.5 * (_px + 1)).ravel()
_PANEL_WEIGHTS = np.tile(0.5 * _pw, 64)


def log_big_F_of_log(nl, lt):
    """log F(e^lt) without overflow; F(t) = t int_0^1 f(t w) dw."""
    p = nl.parameters
    if nl.family == "power":
        return (p["p"] + 1) * lt - math.log(p["p"] + 1)
    if nl.family == "power_log":
        a, q = p["p"], p["q"]
        # F(t) = t^(a+1) int_0^inf e^(-(a+1)v) log(1 + t e^-v)^q dv  (w = e^-v);
        # the integrand is analytic in a strip, so unit panels of Gauss-Legendre suffice
        v = _PANEL_NODES[: int(math.ceil(42.0 / (a + 1))) * _PANEL_ORDER]
        w = _PANEL_WEIGHTS[: v.size]
        val = np.dot(w, np.exp(-(a + 1) * v) * np.logaddexp(0.0, lt - v) ** q)
        return (a + 1) * lt + math.log(val)
    t = math.exp(lt)
    val, _ = integrate.quad(lambda s: f_eval(nl, s), 0.0, t, epsabs=0.0, epsrel=1e-12, limit=200)
    return math.log(val)


def _varphi_constant(p):
    return 2.0 * math.sqrt(p + 1) / (p - 1)


def ko_log_varphi(nl, t, method="auto"):
    """log varphi(t) for t > 0."""
    if not t > 0:
        raise DomainError("t must be positive")
    lt = math.log(t)
    if method == "auto" and nl.family == "power":
        p = nl.parameters["p"]
        return math.log(_varphi_constant(p)) + 0.5 * (1 - p) * lt
    if not nl.m > 0:
        raise ConditionError("varphi diverges: the lower F-constant is not positive")
    lF0 = log_big_F_of_log(nl, lt)
    # varphi(t) = t F(t)^(-1/2) int_0^inf exp(u - (log F(t e^u) - log F(t))/2) du
    integrand = lambda u: math.exp(u - 0.5 * (log_big_F_of_log(nl, lt + u) - lF0))
    umax = min(60.0 / nl.m, 600.0)
    val, _ = integrate.quad(integrand, 0.0, umax, epsabs=0.0, epsrel=1e-11, limit=400)
    # power-law continuation beyond umax using the local growth exponent of F
    lF1 = log_big_F_of_log(nl, lt + umax)
    k = math.exp(lt + umax + log_f_of_log(nl, lt + umax) - lF1)
    if not k > 2:
        raise ConditionError("varphi tail diverges")
    val += math.exp(umax - 0.5 * (lF1 - lF0)) * 2.0 / (k - 2.0)
    return lt - 0.5 * lF0 + math.log(val)


def ko_varphi(nl, t, method="auto"):
    t = np.asarray(t, dtype=float)
    out = np.vectorize(lambda x: math.exp(ko_log_varphi(nl, x, method)), otypes=[float])(t)
    return out if out.ndim else float(out)


def ko_log_psi(nl, log_s, method="auto"):
    """log psi(e^log_s), psi the inverse of varphi."""
    if method == "auto" and nl.family == "power":
        p = nl.parameters["p"]
        return -2.0 / (p - 1) * (log_s - math.log(_varphi_constant(p)))
    g = lambda lt: ko_log_varphi(nl, math.exp(lt), method) - log_s
    lo, hi = -2.0, 2.0
    while g(lo) < 0:
        lo *= 2
        if lo < -700:
            raise DomainError("psi argument too large")
    while g(hi) > 0:
        hi *= 2
        if hi > 700:
            raise DomainError("psi argument too small")
    return optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=300)


def ko_psi(nl, s, method="auto"):
    s = np.asarray(s, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError("s must be positive")
    out = np.vectorize(lambda x: math.exp(ko_log_psi(nl, math.log(x), method)), otypes=[float])(s)
    return out if out.ndim else float(out)


# -- growth conditions --------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _log_phi_inverse(spec, log_y):
    if spec.family == "stable":
        return log_y / (spec.parameters["alpha"] / 2.0)
    g = lambda v: math.log(bf.phi_eval(spec, math.exp(v))) - log_y
    lo, hi = -2.0, 2.0
    while g(lo) > 0:
        lo = max(2 * lo, -700.0)
        if lo == -700.0 and g(lo) > 0:
            raise DomainError("phi^-1 bracket failed")
    while g(hi) < 0:
        hi = min(2 * hi, 700.0)
        if hi == 700.0 and g(hi) < 0:
            raise DomainError("phi^-1 bracket failed")
    return optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=300)


def _log_block_integral(log_h, a, b):
    """log int_{e^a}^{e^b} h(t) dt by Gauss-Legendre in log t, given log h(log t)."""
    x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
    vals = np.array([log_h(v) for v in x]) + x
    top = vals.max()
    return top + math.log(0.5 * (b - a) * np.dot(_GL_W, np.exp(vals - top)))


def _decide(ratios, eps, last=3):
    r = np.asarray(ratios[-last:])
    if np.all(r < 1 - eps):
        return HOLDS
    if np.all(r > 1 + eps):
        return FAILS
    return INCONCLUSIVE


def _log_g(nl, spec, method):
    # g(t) = 1 / phi^-1(varphi(t)^-2), returned as a function of log t
    return lambda lt: -_log_phi_inverse(spec, -2.0 * ko_log_varphi(nl, math.exp(lt), method))


@dataclass
class KOReport:
    ko1: dict
    ko2: dict
    integrability: dict
    boundary_blowup: dict
    eps: float
    octaves: int

    def to_dict(self):
        def clean(v):
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple, np.ndarray)):
                return [clean(x) for x in v]
            if isinstance(v, (float, np.floating)):
                v = float(v)
                return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
            return v
        return clean({"ko1": self.ko1, "ko2": self.ko2, "integrability": self.integrability,
                      "boundary_blowup": self.boundary_blowup, "eps": self.eps,
                      "octaves": self.octaves})

    @property
    def all_hold(self):
        return (self.ko1["converges"] == HOLDS and self.ko2["status"] == HOLDS
                and self.integrability["converges"] == HOLDS
                and self.boundary_blowup["diverges"] == HOLDS)


def ko_checks(nl, spec, eps=0.05, octaves=2, blocks=24, method="auto"):
    """Decide the four growth conditions by ratio tests on geometric blocks.

    Every block spans ``octaves`` doublings; consecutive block ratios below
    1 - eps mean convergence, above 1 + eps divergence, anything else is
    inconclusive.  Decisions use the last three ratios.
    """
    chk = check_F(nl)
    if not chk.ok:
        raise ConditionError(f"check_F failed: {chk.reason}")
    cert = bf.scaling_certificate(spec)
    if not cert.ok:
        raise ConditionError(f"scaling certificate failed: {cert.reason}")
    width = octaves * math.log(2.0)

    # KO1: int_1^inf g
    log_g = _log_g(nl, spec, method)
    edges = np.arange(blocks + 1) * width
    logC = np.array([_log_block_integral(log_g, edges[i], edges[i + 1]) for i in range(blocks)])
    ratios = np.exp(np.diff(logC))
    ko1_status = _decide(ratios, eps)
    C = np.exp(logC - logC.max())
    q = ratios[-1]
    tail_extra = C[-1] * q / (1 - q) if q < 1 else np.inf
    tails = (np.cumsum(C[::-1])[::-1] + tail_extra) * math.exp(logC.max())
    ko1 = {"converges": ko1_status, "block_ratios": ratios.tolist(),
           "tail_values": tails.tolist(), "block_edges": np.exp(edges).tolist()}

    # KO2: sup_r int_r^inf g / (r g(r)) for r = 2^0..2^16 (dyadic blocks)
    if ko1_status == HOLDS:
        ln2 = math.log(2.0)
        nd = 16 + octaves * blocks
        logD = np.array([_log_block_integral(log_g, i * ln2, (i + 1) * ln2) for i in range(nd)])
        qd = math.exp(logD[-1] - logD[-2])
        top = logD.max()
        D = np.exp(logD - top)
        tail = np.cumsum(D[::-1])[::-1] + (D[-1] * qd / (1 - qd) if qd < 1 else np.inf)
        vals = [tail[i] * math.exp(top - (i * ln2 + log_g(i * ln2))) for i in range(17)]
        ratio_sup = float(max(vals))
        ko2 = {"status": HOLDS if math.isfinite(ratio_sup) else FAILS,
               "ratio_sup": ratio_sup, "ratios": vals}
    else:
        ko2 = {"status": FAILS if ko1_status == FAILS else INCONCLUSIVE,
               "ratio_sup": float("inf"), "ratios": []}

    # integrability: int_0^1 f(1/(s phi(1/s))) ds, blocks towards s = 0
    def log_h(ls):
        arg = -ls - math.log(bf.phi_eval(spec, math.exp(-ls)))
        return float(log_f_of_log(nl, arg))
    logI = np.array([_log_block_integral(log_h, -edges[i + 1], -edges[i]) for i in range(blocks)])
    iratios = np.exp(np.diff(logI))
    int_status = _decide(iratios, eps)
    qi = iratios[-1]
    I = np.exp(logI)
    value = float(I.sum() + (I[-1] * qi / (1 - qi) if qi < 1 else np.inf))
    integrability = {"converges": int_status, "value": value, "block_ratios": iratios.tolist()}

    # boundary blow-up: psi(s) / (s^2 phi^-1(s^-2)) along s = 2^-k
    ks = np.arange(0, 2 * blocks + 1)
    logR = []
    for k in ks:
        ls = -k * math.log(2.0)
        logR.append(ko_log_psi(nl, ls, method) - 2 * ls - _log_phi_inverse(spec, -2 * ls))
    logR = np.array(logR)
    growth = np.exp(logR[octaves:] - logR[:-octaves])
    g_status = _decide(1.0 / growth, eps)
    boundary_blowup = {"diverges": g_status, "log_ratios": logR.tolist(),
                       "s": (2.0 ** -ks).tolist(), "growth": growth.tolist()}
    return KOReport(ko1, ko2, integrability, boundary_blowup, eps, octaves)
