import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from skbm import bernstein as bf
from skbm import heat1d
from skbm.domain import BoxDomain, EigenBasis, Grid, boundary_distance
from skbm.errors import DomainError
from skbm.operators import (GridInterpolant, SpectralField, TensorGreen, _face_rule, apply_phi_op,
                            apply_pointwise, expand, expand_function, green_apply, green_one,
                            green_one_points, heat_kernel, jumping_kernel_JD, killing_kappa,
                            poisson_proxy, poisson_sigma, poisson_sigma_points, semigroup_apply,
                            subordinate_survival, survival)

CUBE = BoxDomain.unit_cube()
LINE = BoxDomain.unit_cube(1)
STABLE1 = bf.stable(1.0)


def _random_field(basis, seed):
    rng = np.random.default_rng(seed)
    return SpectralField(basis, rng.standard_normal(len(basis)))


# -- spectral backend ---------------------------------------------------------

def test_expand_first_eigenfunction():
    B = EigenBasis(CUBE, 4)
    c = expand_function(lambda y: B.evaluate(y, modes=[(1, 1, 1)])[:, 0], B).coefficients
    i = B.mode_index((1, 1, 1))
    assert c[i] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(np.delete(c, i))) < 1e-10


def test_expand_linear_combination():
    B = EigenBasis(CUBE, 3)
    u = lambda y: 3 * B.evaluate(y, modes=[(1, 2, 1)])[:, 0] - B.evaluate(y, modes=[(2, 2, 2)])[:, 0]
    c = expand_function(u, B).coefficients
    assert c[B.mode_index((1, 2, 1))] == pytest.approx(3.0, abs=1e-12)
    assert c[B.mode_index((2, 2, 2))] == pytest.approx(-1.0, abs=1e-12)
    c[[B.mode_index((1, 2, 1)), B.mode_index((2, 2, 2))]] = 0
    assert np.max(np.abs(c)) < 1e-10


def test_expand_constant_on_interval():
    B = EigenBasis(LINE, 12)
    c = expand_function(lambda y: np.ones(len(y)), B, Grid(LINE, 80)).coefficients
    j = B.indices[:, 0]
    # int_0^1 sqrt(2) sin(j pi y) dy
    oracle = np.where(j % 2 == 1, 2 * math.sqrt(2) / (j * math.pi), 0.0)
    np.testing.assert_allclose(c, oracle, atol=1e-12)


def test_expand_rejects_mismatched_grid():
    B = EigenBasis(CUBE, 2)
    with pytest.raises(ValueError):
        expand(np.zeros(10), B)
    with pytest.raises(ValueError):
        expand(np.zeros(8), B, Grid(BoxDomain((1.0, 1.0, 2.0)), 2))


def test_apply_phi_first_mode_stable():
    B = EigenBasis(CUBE, 2)
    c = np.zeros(len(B))
    c[B.mode_index((1, 1, 1))] = 1.0
    out = apply_phi_op(SpectralField(B, c), STABLE1).coefficients
    assert out[B.mode_index((1, 1, 1))] == pytest.approx(math.sqrt(3 * math.pi ** 2), rel=1e-14)
    assert out[B.mode_index((1, 1, 1))] == pytest.approx(5.4414, abs=1e-4)


def test_apply_phi_zero_field():
    B = EigenBasis(CUBE, 3)
    out = apply_phi_op(SpectralField(B, np.zeros(len(B))), STABLE1)
    assert np.all(out.coefficients == 0)


def test_apply_phi_eigenfunction_identity():
    B = EigenBasis(CUBE, 6)
    rng = np.random.default_rng(3)
    spec = bf.tempered_stable(0.8, 2.0)
    for i in rng.choice(len(B), 5, replace=False):
        c = np.zeros(len(B))
        c[i] = 1.0
        out = apply_phi_op(SpectralField(B, c), spec)
        expect = np.zeros(len(B))
        expect[i] = bf.phi_eval(spec, B.eigenvalues[i])
        np.testing.assert_allclose(out.coefficients, expect, rtol=1e-14)


def test_green_inverts_operator():
    B = EigenBasis(CUBE, 5)
    u = _random_field(B, 0)
    for spec in (STABLE1, bf.relativistic(1.2, 0.5)):
        back = green_apply(apply_phi_op(u, spec), spec)
        np.testing.assert_allclose(back.coefficients, u.coefficients, rtol=1e-12, atol=1e-14)


def test_identity_green_of_one_on_interval():
    # -w'' = 1 with w(0) = w(1) = 0 has w = x(1-x)/2
    B = EigenBasis(LINE, 401)
    one = expand_function(lambda y: np.ones(len(y)), B, Grid(LINE, 1400))
    w = green_apply(one, bf.identity())
    x = np.linspace(0.05, 0.95, 19)[:, None]
    np.testing.assert_allclose(w(x), x[:, 0] * (1 - x[:, 0]) / 2, atol=2e-6)


def test_green_composition_with_conjugate():
    B = EigenBasis(CUBE, 4)
    u = _random_field(B, 1)
    for spec in (bf.stable(0.6), bf.tempered_stable(1.1, 1.0)):
        out = green_apply(green_apply(u, bf.conjugate(spec)), spec)
        np.testing.assert_allclose(out.coefficients, u.coefficients / B.eigenvalues, rtol=1e-12)


def test_conjugate_operator_product_is_laplacian():
    B = EigenBasis(CUBE, 4)
    u = _random_field(B, 2)
    spec = bf.relativistic(0.7, 2.0)
    out = apply_phi_op(apply_phi_op(u, bf.conjugate(spec)), spec)
    np.testing.assert_allclose(out.coefficients, u.coefficients * B.eigenvalues, rtol=1e-12)


def test_semigroup():
    B = EigenBasis(CUBE, 4)
    u = _random_field(B, 4)
    np.testing.assert_array_equal(semigroup_apply(u, 0.0).coefficients, u.coefficients)
    a = semigroup_apply(semigroup_apply(u, 0.01), 0.03)
    np.testing.assert_allclose(a.coefficients, semigroup_apply(u, 0.04).coefficients, rtol=1e-12)
    with pytest.raises(DomainError):
        semigroup_apply(u, -1.0)


def test_semigroup_first_mode_interval():
    B = EigenBasis(LINE, 3)
    out = semigroup_apply(SpectralField(B, [1.0, 0.0, 0.0]), 1 / math.pi ** 2)
    assert out.coefficients[0] == pytest.approx(math.exp(-1), rel=1e-14)


def test_field_on_grid_and_serialization(tmp_path):
    B = EigenBasis(BoxDomain((1.0, 2.0)), 5)
    u = _random_field(B, 5)
    g = Grid(B.domain, (7, 9), kind="graded")
    np.testing.assert_allclose(u.on_grid(g).ravel(), u(g.points()), rtol=1e-12, atol=1e-13)
    u.save(tmp_path / "u.json")
    v = SpectralField.load(tmp_path / "u.json")
    assert v.basis == B
    np.testing.assert_array_equal(v.coefficients, u.coefficients)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 1.9))
def test_inverse_pair_property(seed, alpha):
    B = EigenBasis(BoxDomain((1.0, 0.7)), 6)
    u = _random_field(B, seed)
    spec = bf.stable(alpha)
    back = apply_phi_op(green_apply(u, spec), spec)
    np.testing.assert_allclose(back.coefficients, u.coefficients, rtol=1e-12, atol=1e-14)
    comp = green_apply(green_apply(u, bf.conjugate(spec)), spec)
    np.testing.assert_allclose(comp.coefficients, u.coefficients / B.eigenvalues, rtol=1e-12)


# -- heat quantities ----------------------------------------------------------

def test_heat_kernel_images_match_eigen_series():
    a = heat1d.kernel(0.1, 0.5, 0.5, 1.0, method="images")
    b = heat1d.kernel(0.1, 0.5, 0.5, 1.0, method="eigen")
    assert a == pytest.approx(b, abs=1e-10)
    x, y = np.meshgrid(np.linspace(0.02, 0.98, 9), np.linspace(0.01, 0.9, 7))
    for t in (0.01, 0.05, 0.2):
        np.testing.assert_allclose(heat1d.kernel(t, x, y, 1.0, method="images"),
                                   heat1d.kernel(t, x, y, 1.0, method="eigen"), atol=1e-10)


def test_heat_kernel_symmetry():
    rng = np.random.default_rng(7)
    x, y = rng.uniform(0, 1, (2, 20, 3))
    for t in (1e-3, 0.05, 1.0):
        np.testing.assert_allclose(heat_kernel(CUBE, t, x, y), heat_kernel(CUBE, t, y, x), rtol=1e-13)


def test_heat_kernel_two_sided_estimate():
    g = Grid(LINE, 24, kind="graded")
    y = g.nodes[0]
    X, Y = np.meshgrid(y, y, indexing="ij")
    dx, dy = np.minimum(X, 1 - X), np.minimum(Y, 1 - Y)
    lo, hi = [], []
    for t in np.geomspace(1e-4, 0.05, 12):
        p = heat1d.kernel(t, X, Y, 1.0)
        base = np.log(np.minimum(dx * dy / t, 1.0) * t ** -0.5)
        # away from underflow; the exact Gaussian exponent |x-y|^2/(4t) is bracketed
        ok = p > 1e-250
        lp = np.log(p[ok])
        lo.append(np.min(lp - base[ok] + (X - Y)[ok] ** 2 / (2 * t)))
        hi.append(np.max(lp - base[ok] + (X - Y)[ok] ** 2 / (8 * t)))
    assert min(lo) > math.log(0.05)
    assert max(hi) < math.log(5.0)


def test_chapman_kolmogorov_interval():
    z, w = np.polynomial.legendre.leggauss(200)
    z, w = 0.5 * (z + 1), 0.5 * w
    for s, t, x, y in ((0.01, 0.02, 0.3, 0.6), (0.05, 0.1, 0.1, 0.9), (0.2, 0.01, 0.5, 0.45)):
        lhs = np.sum(w * heat1d.kernel(s, x, z, 1.0) * heat1d.kernel(t, z, y, 1.0))
        assert lhs == pytest.approx(float(heat1d.kernel(s + t, x, y, 1.0)), rel=1e-10)


def test_survival_limits_and_monotone():
    x = np.array([0.3, 0.5, 0.6])
    assert survival(CUBE, 1e-6, x) == pytest.approx(1.0, abs=1e-12)
    t = np.geomspace(1e-4, 1.0, 30)
    s = np.array([survival(CUBE, tt, x) for tt in t])
    assert np.all(np.diff(s) <= 1e-15)
    assert np.all(np.diff(s[t > 2e-3]) < 0)
    assert np.all((s > 0) & (s <= 1))


def test_survival_images_match_eigen():
    x = np.linspace(0.01, 0.99, 15)
    for t in (0.005, 0.05, 0.12, 0.5):
        np.testing.assert_allclose(heat1d.survival(t, x, 1.0, method="images"),
                                   heat1d.survival(t, x, 1.0, method="eigen"), atol=1e-12)


def test_subordinate_survival_identity_is_heat_survival():
    x = np.array([[0.5, 0.5, 0.5], [0.1, 0.3, 0.8]])
    for t in (0.01, 0.1):
        np.testing.assert_allclose(subordinate_survival(bf.identity(), CUBE, x, t),
                                   [survival(CUBE, t, p) for p in x], atol=1e-10)


def test_subordinate_survival_decreases():
    t = np.geomspace(0.01, 1.0, 8)
    s = [subordinate_survival(STABLE1, CUBE, [0.5, 0.5, 0.5], tt) for tt in t]
    assert np.all(np.diff(s) < 0) and 0 < s[-1] < s[0] < 1


# -- jumping kernel and killing -----------------------------------------------

def test_jumping_kernel_deep_interior():
    x, y = np.array([0.45, 0.5, 0.5]), np.array([0.55, 0.5, 0.5])
    j = bf.stable_jump_constant(3, 1.0) * 0.1 ** -4
    r = jumping_kernel_JD(STABLE1, CUBE, x, y) / j
    assert 0.5 <= r <= 1.0
    # larger boxes push the boundary away: the ratio climbs to 1
    ratios = []
    for L in (1.0, 2.0, 4.0):
        c = np.full(3, L / 2)
        D = BoxDomain((L,) * 3)
        ratios.append(jumping_kernel_JD(STABLE1, D, c - [0.05, 0, 0], c + [0.05, 0, 0]) / j)
    assert ratios[0] < ratios[1] < ratios[2] <= 1.0
    assert ratios[2] > 0.999


def test_jumping_kernel_symmetry_and_errors():
    x, y = np.array([0.2, 0.3, 0.4]), np.array([0.6, 0.7, 0.1])
    spec = bf.tempered_stable(1.2, 1.0)
    assert jumping_kernel_JD(spec, CUBE, x, y) == pytest.approx(jumping_kernel_JD(spec, CUBE, y, x),
                                                                rel=1e-10)
    with pytest.raises(DomainError):
        jumping_kernel_JD(spec, CUBE, x, x)


def test_jumping_kernel_linear_at_face():
    y = np.array([0.5, 0.5, 0.5])
    vals = []
    for dl in (0.02, 0.01, 0.005, 0.0025):
        vals.append(jumping_kernel_JD(STABLE1, CUBE, np.array([dl, 0.5, 0.5]), y) / dl)
    vals = np.array(vals)
    assert np.all(vals > 0)
    steps = np.abs(np.diff(vals)) / vals[1:]
    assert np.all(np.diff(steps) < 0)
    assert steps[-1] < 1e-3


def test_kappa_positive_and_increasing_to_face():
    dl = np.array([0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01])
    k = np.array([killing_kappa(STABLE1, CUBE, np.array([d, 0.5, 0.5])) for d in dl])
    assert np.all(k > 0)
    assert np.all(np.diff(k) > 0)
    with pytest.raises(DomainError):
        killing_kappa(STABLE1, CUBE, np.array([0.0, 0.5, 0.5]))


# -- Poisson potential and G1 -------------------------------------------------

def test_poisson_sigma_face_symmetry():
    c = np.full(3, 0.5)
    pts = []
    for k in range(3):
        for v in (0.15, 0.85):
            p = c.copy()
            p[k] = v
            pts.append(p)
    vals = poisson_sigma(STABLE1, CUBE, np.array(pts))
    np.testing.assert_allclose(vals, vals[0], rtol=1e-9)


def test_poisson_sigma_sharp_bound_and_blowup():
    dl = np.geomspace(0.02, 0.3, 10)
    x = np.stack([dl, np.full_like(dl, 0.5), np.full_like(dl, 0.5)], axis=1)
    P = poisson_sigma(STABLE1, CUBE, x)
    r = P * dl ** 2 * bf.phi_eval(STABLE1, dl ** -2.0)
    assert r.max() / r.min() < 10
    assert np.all(np.isfinite(P)) and np.all(P > 0) and np.all(np.diff(P) < 0)
    with pytest.raises(DomainError):
        poisson_sigma(STABLE1, CUBE, np.array([0.0, 0.5, 0.5]))


def test_poisson_sigma_points_match_adaptive():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.03, 0.97, (6, 3))
    for spec in (STABLE1, bf.relativistic(1.5, 1.0)):
        np.testing.assert_allclose(poisson_sigma_points(spec, CUBE, x), poisson_sigma(spec, CUBE, x),
                                   rtol=1e-6)
        np.testing.assert_allclose(green_one_points(spec, CUBE, x), green_one(spec, CUBE, x), rtol=1e-6)


def test_poisson_proxy_comparable():
    dl = np.geomspace(0.005, 0.5, 12)
    x = np.stack([dl, np.full_like(dl, 0.5), np.full_like(dl, 0.5)], axis=1)
    r = poisson_sigma_points(STABLE1, CUBE, x) / poisson_proxy(STABLE1, CUBE, x)
    assert r.max() / r.min() < 10


def _green_of_shell(spec, x, eps):
    """G f_eps(x) for f_eps = (2 / eps^2) 1{delta_D < eps}, in the unit cube."""

    def integrand(v):
        t = math.exp(v)
        S = np.array([heat1d.survival(t, x[k], 1.0) for k in range(3)])
        # mass kept away from the shell: product of 1D masses on (eps, 1 - eps)
        A = np.array([heat1d.segment_moments(t, np.array([x[k]]), [eps], [1 - eps], 1.0)[0][0, 0]
                      for k in range(3)])
        return (np.prod(S) - np.prod(A)) * 2 / eps ** 2 * float(bf.potential_density(spec, t)) * t

    t_hi = 60 / (3 * math.pi ** 2)
    return integrate.quad(integrand, math.log(1e-8), math.log(t_hi), limit=400, epsrel=1e-10,
                          points=[math.log(eps * eps)])[0]


def test_green_of_boundary_shells_approaches_poisson_sigma():
    pts = [(0.5, 0.5, 0.5), (0.3, 0.5, 0.5), (0.5, 0.8, 0.5), (0.2, 0.4, 0.7), (0.6, 0.35, 0.25)]
    eps = (0.1, 0.05, 0.02, 0.01, 0.005)
    for p in pts:
        P = poisson_sigma(STABLE1, CUBE, np.array(p))
        r = np.array([_green_of_shell(STABLE1, np.array(p), e) for e in eps]) / P
        err = np.abs(r - 1)
        assert np.all(np.diff(err) < 0)
        assert err[-1] < 2e-4


def test_green_one_matches_spectral_sum():
    x = np.array([[0.5, 0.5, 0.5], [0.2, 0.6, 0.3]])
    k = np.arange(1, 400, 2)
    K = np.meshgrid(k, k, k, indexing="ij")
    lam = math.pi ** 2 * (K[0] ** 2 + K[1] ** 2 + K[2] ** 2)
    c = 1.0 / bf.phi_eval(STABLE1, lam.astype(float))
    for p, val in zip(x, green_one(STABLE1, CUBE, x)):
        f = [4 / (k * math.pi) * np.sin(k * math.pi * v) for v in p]
        oracle = np.einsum("abc,a,b,c->", c, *f)
        assert val == pytest.approx(oracle, rel=1e-4)


# -- pointwise operator -------------------------------------------------------

def _interior_points(n, lo, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, 1 - lo, (n, 3))


def test_face_rule_weights_cover_sphere():
    for dom, area in ((BoxDomain((1.0, 2.0)), 2 * math.pi), (CUBE, 4 * math.pi),
                      (BoxDomain((1.0, 0.5, 3.0)), 4 * math.pi)):
        for x in (np.asarray(dom.sides) / 2, np.asarray(dom.sides) * 0.1):
            dirs, w, r = _face_rule(dom, x, 12)
            assert w.sum() == pytest.approx(area, rel=1e-8)
            np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, rtol=1e-14)
            # exit points lie on the boundary
            y = x + r[:, None] * dirs
            np.testing.assert_allclose(boundary_distance(dom, np.clip(y, 0, dom.sides)), 0, atol=1e-12)


def test_apply_pointwise_first_eigenfunction():
    B = EigenBasis(CUBE, 1)
    u = lambda y: B.evaluate(y)[:, 0]
    lam = 3 * math.pi ** 2
    for x in _interior_points(10, 0.05):
        val = apply_pointwise(STABLE1, CUBE, u, x)
        assert val == pytest.approx(math.sqrt(lam) * u(x[None])[0], rel=0.02)


def test_apply_pointwise_linear():
    B = EigenBasis(CUBE, 3)
    u1, u2 = _random_field(B, 8), _random_field(B, 9)
    x = np.array([0.3, 0.6, 0.45])
    a = apply_pointwise(STABLE1, CUBE, lambda y: 2 * u1(y) - 3 * u2(y), x)
    b = 2 * apply_pointwise(STABLE1, CUBE, u1, x) - 3 * apply_pointwise(STABLE1, CUBE, u2, x)
    assert a == pytest.approx(b, rel=1e-10)


@pytest.mark.parametrize("spec", [STABLE1, bf.stable(0.5), bf.tempered_stable(1.5, 2.0)],
                         ids=["stable1", "stable05", "tempered"])
def test_apply_pointwise_matches_spectral_band_limited(spec):
    B = EigenBasis(CUBE, 8)
    rng = np.random.default_rng(12)
    u = SpectralField(B, rng.standard_normal(len(B)) / (1 + B.eigenvalues / 50))
    Lu = apply_phi_op(u, spec)
    scale = np.max(np.abs(Lu(Grid(CUBE, 12).points())))
    for x in _interior_points(5, 0.2, seed=1):
        val = apply_pointwise(spec, CUBE, u, x)
        assert abs(val - Lu(x[None])[0]) < 0.02 * scale


def test_apply_pointwise_harmonic_and_green_one():
    # phi(-Delta) P sigma = 0 and phi(-Delta) G 1 = 1 in D
    g = Grid(CUBE, 36, kind="graded")
    wP = lambda y: poisson_proxy(STABLE1, CUBE, y)
    P = GridInterpolant(g, poisson_sigma_points(STABLE1, CUBE, g.points()), weight=wP)
    G1 = GridInterpolant(g, green_one_points(STABLE1, CUBE, g.points()))
    for x in (np.array([0.5, 0.5, 0.5]), np.array([0.3, 0.6, 0.4])):
        val = apply_pointwise(STABLE1, CUBE, P, x)
        assert abs(val) < 2e-3 * float(P(x[None])[0])
        assert apply_pointwise(STABLE1, CUBE, G1, x) == pytest.approx(1.0, abs=1e-2)


def test_apply_pointwise_rejects_boundary_and_identity():
    u = lambda y: np.ones(len(y))
    with pytest.raises(DomainError):
        apply_pointwise(STABLE1, CUBE, u, np.array([0.0, 0.5, 0.5]))
    with pytest.raises(DomainError):
        apply_pointwise(bf.identity(), CUBE, u, np.array([0.5, 0.5, 0.5]))


# -- grid tools ---------------------------------------------------------------

def test_grid_interpolant_smooth_and_weighted():
    D = BoxDomain((1.0, 2.0, 1.5))
    g = Grid(D, 20, kind="graded")
    f = lambda y: np.sin(y[:, 0]) * np.cos(y[:, 1]) + y[:, 2] ** 2
    I = GridInterpolant(g, f(g.points()))
    y = np.random.default_rng(0).uniform(0.05, 1.0, (50, 3)) * np.asarray(D.sides) * 0.95
    np.testing.assert_allclose(I(y), f(y), atol=1e-5)
    w = lambda y: poisson_proxy(STABLE1, D, y)
    Iw = GridInterpolant(g, f(g.points()) * w(g.points()), weight=w)
    np.testing.assert_allclose(Iw(y) / w(y), f(y), atol=1e-5)
    with pytest.raises(ValueError):
        GridInterpolant(Grid(D, 4), np.zeros(64))


def test_tensor_green_matches_spectral():
    B = EigenBasis(CUBE, 3)
    u = SpectralField(B, np.random.default_rng(5).standard_normal(len(B)))
    for spec in (STABLE1, bf.stable(0.4)):
        errs = []
        for n in (24, 36):
            g = Grid(CUBE, n, kind="graded")
            out = TensorGreen(spec, g).apply(u(g.points()))
            oracle = green_apply(u, spec)(g.points()).reshape(g.shape)
            errs.append(np.max(np.abs(out - oracle)) / np.max(np.abs(oracle)))
        # piecewise-linear data model: error falls at least like h^2
        assert errs[1] < 2e-3
        assert errs[0] / errs[1] > 1.5 ** 2


def test_tensor_green_of_one():
    g = Grid(CUBE, 24, kind="graded")
    out = TensorGreen(STABLE1, g).apply(np.ones(g.size)).ravel()
    ref = green_one_points(STABLE1, CUBE, g.points())
    np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-6 * ref.max())
