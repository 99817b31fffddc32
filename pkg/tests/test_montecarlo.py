import math

import numpy as np
import pytest
from scipy import stats

from skbm import bernstein as bf
from skbm import montecarlo as mc
from skbm.domain import BoxDomain, EigenBasis
from skbm.errors import DomainError, NumericalError
from skbm.operators import green_one, killing_kappa, subordinate_survival, survival

CUBE = BoxDomain.unit_cube()
LINE = BoxDomain.unit_cube(1)
CENTER = np.array([0.5, 0.5, 0.5])
STABLE1 = bf.stable(1.0)


def _within(est, ref, k=3.0):
    return abs(est.mean - ref) <= k * est.stderr


# -- subordinator increments --------------------------------------------------

@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_subordinator_laplace_transform(alpha):
    rng = mc.block_rng(1, 0)
    dt = 0.5
    s = mc.sample_stable_subordinator(alpha, dt, 100_000, rng)
    assert np.all(s > 0)
    e = np.exp(-s)
    # E exp(-lam dS) = exp(-dt lam^(alpha/2)) at lam = 1
    assert abs(e.mean() - math.exp(-dt)) <= 3 * e.std(ddof=1) / math.sqrt(e.size)


def test_half_stable_increments_are_levy():
    # exp(-dt sqrt(lam)) is the Laplace transform of the Levy law with scale dt^2 / 2
    dt = 1e-2
    s = mc.sample_stable_subordinator(1.0, dt, 100_000, mc.block_rng(2, 0))
    ref = stats.levy(scale=dt * dt / 2)
    for q in (0.25, 0.5, 0.75):
        assert np.quantile(s, q) == pytest.approx(ref.ppf(q), rel=0.02)


def test_subordinator_rejects_bad_alpha():
    with pytest.raises(DomainError):
        mc.sample_stable_subordinator(2.0, 0.1, 3, mc.block_rng(0, 0))


def test_path_config_validation():
    with pytest.raises(ValueError):
        mc.PathConfig(dt=0.0)
    with pytest.raises(ValueError):
        mc.PathConfig(n=0)


def test_block_streams_distinct_and_reproducible():
    a = mc.block_rng(5, 0).random(4)
    np.testing.assert_array_equal(a, mc.block_rng(5, 0).random(4))
    assert not np.allclose(a, mc.block_rng(5, 1).random(4))
    assert not np.allclose(a, mc.block_rng(6, 0).random(4))


# -- killed Brownian motion ---------------------------------------------------

def test_single_killed_path():
    pos, tau = mc.sample_killed_path(LINE, [0.5], 1e-4, 2.0, mc.block_rng(0, 0))
    assert math.isfinite(tau)
    assert pos.shape == (int(round(tau / 1e-4)), 1)
    assert np.all((pos > 0) & (pos < 1))
    with pytest.raises(DomainError):
        mc.sample_killed_path(LINE, [1.0], 1e-4, 1.0, mc.block_rng(0, 0))


def test_killed_survival_matches_images():
    cfg = mc.PathConfig(dt=1e-4, T=0.1, n=10_000, seed=3)
    alive = np.isinf(mc.exit_times(CUBE, CENTER, cfg)).astype(float)
    ref = survival(CUBE, 0.1, CENTER)
    assert abs(alive.mean() - ref) <= 3 * alive.std(ddof=1) / math.sqrt(alive.size)


def test_mean_exit_time_interval():
    cfg = mc.PathConfig(dt=1e-4, T=3.0, n=10_000, seed=4)
    tau = mc.exit_times(LINE, [0.5], cfg)
    assert np.all(np.isfinite(tau))
    # E tau = x (1 - x) / 2 for the generator Delta
    assert abs(tau.mean() - 0.125) <= 3 * tau.std(ddof=1) / math.sqrt(tau.size)


def test_bridge_correction_reduces_bias():
    err = {}
    for bridge in (True, False):
        cfg = mc.PathConfig(dt=2e-3, T=3.0, n=10_000, seed=5, bridge=bridge)
        err[bridge] = abs(mc.exit_times(LINE, [0.5], cfg).mean() - 0.125)
    assert err[True] < err[False]


def test_kappa_from_exit_times():
    # kappa(x) = E_x int_tau^inf mu(t) dt = E_x tail(tau), tail(t) = t^(-1/2) / Gamma(1/2) for alpha = 1
    cfg = mc.PathConfig(dt=1e-4, T=2.0, n=10_000, seed=6)
    tau = mc.exit_times(CUBE, CENTER, cfg)
    tail = np.where(np.isfinite(tau), 1 / (math.sqrt(math.pi) * np.sqrt(tau)), 0.0)
    ref = killing_kappa(STABLE1, CUBE, CENTER)
    assert abs(tail.mean() - ref) <= 3 * tail.std(ddof=1) / math.sqrt(tail.size)


# -- subordinate killed process -----------------------------------------------

def test_subordinate_survival_estimate():
    est = mc.estimate_survival(STABLE1, CUBE, CENTER, 0.1, mc.PathConfig(dt=1e-4, n=10_000, seed=7))
    assert _within(est, subordinate_survival(STABLE1, CUBE, CENTER, 0.1))
    assert 0 <= est.killed_fraction <= 1


def test_green_potential_of_one():
    est = mc.estimate_green_potential(STABLE1, CUBE, CENTER, config=mc.PathConfig(dt=1e-4, n=10_000))
    assert _within(est, green_one(STABLE1, CUBE, CENTER))
    assert est.paths == 10_000


def test_green_potential_of_first_eigenfunction():
    B = EigenBasis(CUBE, 1)
    f = lambda y: B.evaluate(y)[:, 0]
    x = np.array([0.4, 0.55, 0.5])
    est = mc.estimate_green_potential(STABLE1, CUBE, x, f, mc.PathConfig(dt=1e-4, n=10_000, seed=8))
    ref = f(x[None])[0] / math.sqrt(3 * math.pi ** 2)
    assert _within(est, ref)


def test_green_potential_decays_near_face():
    cfg = mc.PathConfig(dt=1e-4, n=4000, seed=9)
    near = mc.estimate_green_potential(STABLE1, CUBE, [0.05, 0.5, 0.5], config=cfg)
    center = mc.estimate_green_potential(STABLE1, CUBE, CENTER, config=cfg)
    assert near.mean + 3 * near.stderr < center.mean - 3 * center.stderr


def test_reproducible_and_worker_independent(monkeypatch):
    cfg = mc.PathConfig(dt=1e-3, n=5000, seed=11)
    a = mc.estimate_green_potential(STABLE1, CUBE, CENTER, config=cfg)
    b = mc.estimate_green_potential(STABLE1, CUBE, CENTER, config=cfg)
    assert a == b
    monkeypatch.setenv("SKBM_WORKERS", "2")
    c = mc.estimate_green_potential(STABLE1, CUBE, CENTER, config=cfg)
    assert c == a


def test_stderr_halves_when_paths_quadruple():
    s1 = mc.estimate_green_potential(STABLE1, CUBE, CENTER, config=mc.PathConfig(dt=1e-3, n=2500)).stderr
    s4 = mc.estimate_green_potential(STABLE1, CUBE, CENTER,
                                     config=mc.PathConfig(dt=1e-3, n=10_000, seed=1)).stderr
    assert 0.8 * 2 <= s1 / s4 <= 1.2 * 2


def test_short_horizon_rejected():
    with pytest.raises(NumericalError):
        mc.estimate_green_potential(STABLE1, CUBE, CENTER, config=mc.PathConfig(dt=1e-3, T=0.05, n=500))


def test_only_stable_family_simulated():
    with pytest.raises(DomainError):
        mc.estimate_green_potential(bf.tempered_stable(1.0, 1.0), CUBE, CENTER,
                                    config=mc.PathConfig(n=10))


def test_coupled_halving_consistent():
    res = mc.coupled_halving(STABLE1, CUBE, CENTER, 0.1, mc.PathConfig(dt=5e-4, n=4000, seed=12))
    for name in ("green", "survival"):
        r = res[name]
        assert r["shift"] == pytest.approx(r["fine"]["mean"] - r["coarse"]["mean"])
        # the paired difference is far less noisy than either estimate
        assert r["shift_stderr"] < r["fine"]["stderr"]
