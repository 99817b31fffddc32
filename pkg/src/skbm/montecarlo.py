"""Path simulation of X_t = W^D_{S_t} with a stable subordinator S.

Brownian motion has generator Delta (coordinate variance 2t).  The killed
motion is evaluated on the subordinator's dt-grid: each step draws an
increment dS, moves W by N(0, 2 dS) per coordinate and kills the path if the
endpoint leaves D or the Brownian bridge between the endpoints crosses a face
(probability exp(-a b / dS) for endpoint distances a, b to the face plane).

Paths are split into fixed blocks; block k draws from
``np.random.default_rng(SeedSequence(seed, spawn_key=(k,)))`` so results do
not depend on the number of workers (env ``SKBM_WORKERS``).
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import bernstein as bf
from . import operators as op
from .errors import DomainError, NumericalError

BLOCK = 2500


@dataclass
class PathConfig:
    dt: float = 1e-4
    T: float = None
    n: int = 10_000
    seed: int = 0
    bridge: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.T is not None and not self.T > 0:
            raise ValueError("T must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class OccupationEstimate:
    mean: float
    stderr: float
    paths: int
    killed_fraction: float

    def to_dict(self):
        return asdict(self)


def block_rng(seed, block):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


def _blocks(n):
    return [(k, min(BLOCK, n - k * BLOCK)) for k in range((n + BLOCK - 1) // BLOCK)]


def workers():
    try:
        return max(1, int(os.environ.get("SKBM_WORKERS", "1")))
    except ValueError:
        return 1


def _run_blocks(fn, args_list):
    w = workers()
    if w == 1 or len(args_list) == 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, *zip(*args_list)))


# -- sampling -----------------------------------------------------------------

def sample_stable_subordinator(alpha, dt, steps, rng, size=None):
    """Increments of the (alpha/2)-stable subordinator over ``steps`` steps of length dt.

    Kanter's representation: with U ~ U(0, pi), E ~ Exp(1) and b = alpha/2,
    sin(b U) / sin(U)^(1/b) * (sin((1-b) U) / E)^((1-b)/b) has Laplace
    transform exp(-lam^b); scaling by dt^(1/b) gives exp(-dt lam^b).
    """
    if not 0 < alpha < 2:
        raise DomainError("alpha must lie in (0, 2)")
    b = 0.5 * alpha
    shape = (steps,) if size is None else (steps, size)
    U = rng.uniform(0.0, math.pi, shape)
    E = rng.exponential(1.0, shape)
    X = np.sin(b * U) / np.sin(U) ** (1 / b) * (np.sin((1 - b) * U) / E) ** ((1 - b) / b)
    return dt ** (1 / b) * X


def _crossing(domain, y0, y1, h):
    """Bridge crossing probability of any face between endpoints y0, y1 over time h."""
    L = np.asarray(domain.sides)
    surv = np.ones(y0.shape[0])
    for k, Lk in enumerate(L):
        for a, b in ((y0[:, k], y1[:, k]), (Lk - y0[:, k], Lk - y1[:, k])):
            surv *= 1 - np.exp(-np.maximum(a, 0) * np.maximum(b, 0) / h)
    return 1 - surv


def _inside(domain, y):
    L = np.asarray(domain.sides)
    return np.all((y > 0) & (y < L), axis=1)


def _step(domain, y, h, rng, bridge):
    """Move W over time h (per-path array); returns new positions and a kill mask."""
    y1 = y + rng.standard_normal(y.shape) * np.sqrt(2 * h)[:, None]
    killed = ~_inside(domain, y1)
    u = rng.uniform(size=y.shape[0])
    if bridge:
        killed |= u < _crossing(domain, y, y1, h)
    return y1, killed


def sample_killed_path(domain, x, dt, T, rng, bridge=True):
    """One path of W^D on the grid k dt, k <= T / dt; returns (positions, tau)."""
    x = np.asarray(x, float)
    if not domain.contains(x[None, :], closed=False)[0]:
        raise DomainError("x must be interior")
    steps = int(round(T / dt))
    pos = [x]
    y = x[None, :]
    h = np.array([dt])
    for k in range(1, steps + 1):
        y, killed = _step(domain, y, h, rng, bridge)
        if killed[0]:
            return np.asarray(pos), k * dt
        pos.append(y[0])
    return np.asarray(pos), math.inf


def _exit_block(domain, x, dt, steps, block, seed, bridge):
    rng = block_rng(seed, block[0])
    n = block[1]
    y = np.repeat(np.asarray(x, float)[None, :], n, axis=0)
    tau = np.full(n, math.inf)
    idx = np.arange(n)
    h = np.full(n, dt)
    for k in range(1, steps + 1):
        y, killed = _step(domain, y, h[: len(idx)], rng, bridge)
        tau[idx[killed]] = k * dt
        idx, y = idx[~killed], y[~killed]
        if idx.size == 0:
            break
    return tau


def exit_times(domain, x, config):
    """tau_D of Brownian motion (no subordination) for config.n paths; inf if alive at T."""
    steps = int(round(config.T / config.dt))
    args = [(domain, x, config.dt, steps, b, config.seed, config.bridge) for b in _blocks(config.n)]
    return np.concatenate(_run_blocks(_exit_block, args))


# -- subordinate paths --------------------------------------------------------

def default_horizon(spec, domain, tail=1e-6):
    """T with exp(-T phi(lambda_1)) = tail.

    The tail sits well below the alive-fraction check so that a handful of
    surviving paths in a small run does not trip it.
    """
    lam1 = op._first_eigenvalue(domain)
    return -math.log(tail) / float(bf.phi_eval(spec, lam1))


def _subordinate_block(alpha, domain, x, dt, steps, block, seed, bridge, f, t_survival, levels):
    """Occupation integrals and survival flags on the fine grid dt and, if
    ``levels == 2``, on the coupled coarse grid 2 dt built from the same
    increments (W at the coarse times is the same path)."""
    rng = block_rng(seed, block[0])
    n = block[1]
    occ = np.zeros((levels, n))
    surv = np.zeros((levels, n), bool)
    alive_all = np.zeros((levels, n), bool)
    k_surv = None if t_survival is None else int(round(t_survival / dt))
    # state of the paths still alive at some level
    idx = np.arange(n)
    y = np.repeat(np.asarray(x, float)[None, :], n, axis=0)
    alive = np.ones((levels, n), bool)
    start = y.copy()
    hc = np.zeros(n)
    for k in range(steps):
        if k_surv is not None and k == k_surv:
            surv[:, idx] = alive
        fy = f(y) if f is not None else 1.0
        occ[0, idx] += np.where(alive[0], fy, 0.0) * dt
        if levels == 2 and k % 2 == 0:
            occ[1, idx] += np.where(alive[1], fy, 0.0) * 2 * dt
        h = sample_stable_subordinator(alpha, dt, 1, rng, idx.size)[0]
        y, killed = _step(domain, y, h, rng, bridge)
        alive[0] &= ~killed
        if levels == 2:
            hc += h
            if k % 2 == 1:
                out = ~_inside(domain, y)
                u = rng.uniform(size=idx.size)
                if bridge:
                    out |= u < _crossing(domain, start, y, hc)
                alive[1] &= ~out
                start = y.copy()
                hc[:] = 0.0
        keep = alive.any(axis=0)
        if not keep.all():
            idx, y, alive, start, hc = idx[keep], y[keep], alive[:, keep], start[keep], hc[keep]
            if idx.size == 0:
                break
    else:
        alive_all[:, idx] = alive
        if k_surv is not None and k_surv >= steps:
            surv[:, idx] = alive
    return occ, surv, alive_all


def _simulate(spec, domain, x, config, f=None, t_survival=None, levels=1):
    if spec.family != "stable":
        raise DomainError("path simulation is implemented for the stable family only")
    x = np.asarray(x, float)
    if not domain.contains(x[None, :], closed=False)[0]:
        raise DomainError("x must be interior")
    alpha = spec.parameters["alpha"]
    T = config.T if config.T is not None else default_horizon(spec, domain)
    dt = config.dt
    steps = int(math.ceil(T / dt))
    if levels == 2 and steps % 2:
        steps += 1
    args = [(alpha, domain, x, dt, steps, b, config.seed, config.bridge, f, t_survival, levels)
            for b in _blocks(config.n)]
    res = _run_blocks(_subordinate_block, args)
    occ = np.concatenate([r[0] for r in res], axis=1)
    surv = np.concatenate([r[1] for r in res], axis=1)
    alive = np.concatenate([r[2] for r in res], axis=1)
    return occ, surv, alive, T


def _estimate(samples, killed):
    n = samples.size
    return OccupationEstimate(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n)),
                              n, float(killed))


def estimate_green_potential(spec, domain, x, f=None, config=None, max_alive=1e-3):
    """E_x int_0^inf f(X_t) dt; ``f`` maps points (k, d) to values, None means f = 1."""
    config = config or PathConfig()
    occ, _, alive, T = _simulate(spec, domain, x, config, f)
    frac = float(alive[0].mean())
    if frac > max_alive:
        raise NumericalError(f"horizon T={T:.3g} too short: alive fraction {frac:.3g}",
                             {"T": T, "alive_fraction": frac})
    return _estimate(occ[0], 1 - frac)


def estimate_survival(spec, domain, x, t, config=None):
    """P_x(tau > t) for the subordinate killed process."""
    config = config or PathConfig()
    cfg = PathConfig(config.dt, t + 2 * config.dt, config.n, config.seed, config.bridge)
    _, surv, _, _ = _simulate(spec, domain, x, cfg, None, t)
    s = surv[0].astype(float)
    return _estimate(s, 1 - s.mean())


def coupled_halving(spec, domain, x, t_survival, config=None, f=None, max_alive=1e-3):
    """Green potential and survival on step dt and on 2 dt from the same increments.

    Returns a dict with estimates at both resolutions and the standard error
    of the paired difference.
    """
    config = config or PathConfig()
    occ, surv, alive, T = _simulate(spec, domain, x, config, f, t_survival, levels=2)
    frac = float(alive.mean(axis=1).max())
    if frac > max_alive:
        raise NumericalError(f"horizon T={T:.3g} too short: alive fraction {frac:.3g}",
                             {"T": T, "alive_fraction": frac})
    s = surv.astype(float)
    out = {}
    for name, arr in (("green", occ), ("survival", s)):
        fine, coarse = _estimate(arr[0], 1 - alive[0].mean()), _estimate(arr[1], 1 - alive[1].mean())
        diff = arr[0] - arr[1]
        out[name] = {"fine": fine.to_dict(), "coarse": coarse.to_dict(),
                     "shift": fine.mean - coarse.mean,
                     "shift_stderr": float(diff.std(ddof=1) / math.sqrt(diff.size))}
    out["dt_fine"], out["dt_coarse"], out["T"] = config.dt, 2 * config.dt, T
    return out


def validate(spec, domain, x, t_survival=0.1, config=None):
    """Green potential of 1 and survival at t against deterministic oracles."""
    config = config or PathConfig()
    res = coupled_halving(spec, domain, x, t_survival, config)
    green_ref = float(op.green_one(spec, domain, x))
    surv_ref = float(op.subordinate_survival(spec, domain, x, t_survival))
    report = {"config": config.to_dict(), "x": list(map(float, x)), "t_survival": t_survival,
              "coupled": res}
    for name, ref in (("green", green_ref), ("survival", surv_ref)):
        fine = res[name]["fine"]
        z = (fine["mean"] - ref) / fine["stderr"]
        report[name] = {"oracle": ref, "estimate": fine["mean"], "stderr": fine["stderr"],
                        "z": z, "within_3se": abs(z) <= 3.0,
                        "halving_stable": abs(res[name]["shift"]) <= fine["stderr"]}
    report["ok"] = all(report[k]["within_3se"] and report[k]["halving_stable"]
                       for k in ("green", "survival"))
    return report
