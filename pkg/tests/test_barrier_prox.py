import numpy as np
import pytest
from hypothesis import given, strategies as st

from ipunfold.barrier_prox import (Affine, Ball, Box, ConstraintError, Hyperslab,
                                   IllPosedCubicError, cubic_root_in_interval,
                                   prox, prox_affine, prox_ball, prox_box,
                                   prox_hyperslab, stationarity_residual)
from oracles import (VARIANTS, bisect_root, brute_force_prox, central_diff,
                     central_diff_scalar, random_instance, rel_err,
                     stationarity_floor)


# --- closed-form examples ---------------------------------------------------

def test_affine_examples():
    r = prox_affine(np.array([1.0, 5.0]), Affine([1.0, 0.0], 1.0), mu=1.0, gamma=2.0)
    np.testing.assert_allclose(r.value, [1 - np.sqrt(2), 5.0], atol=1e-14)
    resid = r.value - np.array([1.0, 5.0]) + 2.0 * np.array([1.0, 0.0]) / (1 - r.value[0])
    np.testing.assert_allclose(resid, 0, atol=1e-14)
    r = prox_affine(np.array([1.0]), Affine([1.0], 1.0), mu=0.5, gamma=0.5)
    np.testing.assert_allclose(r.value, [0.5], atol=1e-15)


def test_affine_vanishing_barrier():
    x = np.array([0.0, 2.0])
    spec = Affine([1.0, 0.0], 1.0)
    for gm in (1e-3, 1e-5, 1e-7):
        r = prox_affine(x, spec, mu=gm, gamma=1.0)
        assert np.linalg.norm(r.value - x) <= 2 * gm


def test_hyperslab_examples():
    spec = Hyperslab([1.0], 0.0, 1.0)
    for gm in (1e-6, 0.3, 50.0):
        np.testing.assert_allclose(prox_hyperslab(np.array([0.5]), spec, gm, 1.0).value, [0.5],
                                   atol=1e-15)
    r = prox_hyperslab(np.array([2.0]), spec, mu=0.5, gamma=1.0)
    oracle = bisect_root(lambda z: z ** 3 - 3 * z ** 2 + z + 0.5, 0.0, 1.0)
    assert r.kappa == pytest.approx(oracle, abs=1e-12)
    assert r.value[0] == pytest.approx(0.7414, abs=1e-4)
    np.testing.assert_allclose(r.value, brute_force_prox(np.array([2.0]), spec, 0.5), atol=1e-9)


def test_hyperslab_barrier_dominated_limit():
    a = np.array([1.0, 2.0])
    spec = Hyperslab(a, -1.0, 3.0)
    x = np.array([4.0, -1.0])
    r = prox_hyperslab(x, spec, mu=1e8, gamma=1.0)
    P = np.eye(2) - np.outer(a, a) / (a @ a)
    expected = 1.0 * a / (a @ a) + P @ x
    np.testing.assert_allclose(r.value, expected, atol=1e-6)


def test_ball_examples():
    spec = Ball([0.0, 0.0], 1.0)
    np.testing.assert_array_equal(prox_ball(np.zeros(2), spec, 0.5, 1.0).value, np.zeros(2))
    r = prox_ball(np.array([2.0, 0.0]), spec, mu=0.5, gamma=1.0)
    # kappa solves z^3 - r z^2 - (alpha + 2 gm) z + alpha r = 0 with r = 2
    oracle = bisect_root(lambda z: z ** 3 - 2 * z ** 2 - 2 * z + 2, 0.0, 1.0)
    assert r.kappa == pytest.approx(oracle, abs=1e-12)
    assert r.kappa == pytest.approx(0.68889, abs=1e-5)
    np.testing.assert_allclose(r.value, [r.kappa, 0.0], atol=1e-14)
    np.testing.assert_allclose(r.value, brute_force_prox(np.array([2.0, 0.0]), spec, 0.5),
                               atol=1e-8)


def test_ball_vanishing_barrier():
    spec = Ball([1.0, -1.0], 4.0)
    x = np.array([1.5, -0.2])
    r = prox_ball(x, spec, mu=1e-9, gamma=1.0)
    np.testing.assert_allclose(r.value, x, atol=1e-8)
    assert r.kappa == pytest.approx(np.linalg.norm(x - spec.center), abs=1e-8)


def test_box_examples():
    box = Box(0.0, 1.0)
    np.testing.assert_allclose(prox_box(np.full(5, 0.5), box, 0.3, 2.0).value, 0.5, atol=1e-15)
    r = prox_box(np.array([2.0, 0.5]), box, mu=0.5, gamma=1.0)
    assert r.value[0] == pytest.approx(0.7413479774958472, abs=1e-12)
    extreme = np.array([-1e6, 1e6, 1e6, -1e6])
    for gm in (1e-16, 1e-8, 1.0):
        v = prox_box(extreme, box, gm, 1.0).value
        assert np.all(v > 0) and np.all(v < 1)


def test_box_handles_images():
    x = np.random.default_rng(0).uniform(-1, 2, (3, 4, 5))
    r = prox_box(x, Box(), 0.01, 1.0)
    assert r.value.shape == x.shape and r.grad_mu.shape == x.shape


def test_cubic_root_examples():
    assert cubic_root_in_interval(1, -6, 11, -6, 1.5, 2.5) == pytest.approx(2.0, abs=1e-12)
    oracle = bisect_root(lambda z: z ** 3 - 3 * z ** 2 + z + 0.5, 0.0, 1.0)
    assert cubic_root_in_interval(1, -3, 1, 0.5, 0.0, 1.0) == pytest.approx(oracle, abs=1e-12)
    assert cubic_root_in_interval(1, 0, -2, 0, 0.0, 1.0, closed_lo=True) == 0.0


def test_cubic_root_ill_posed():
    with pytest.raises(IllPosedCubicError):
        cubic_root_in_interval(1, -6, 11, -6, 0.0, 4.0)   # three roots inside
    with pytest.raises(IllPosedCubicError):
        cubic_root_in_interval(1, -6, 11, -6, 3.5, 4.0)   # none inside


@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(1e-3, 10))
def test_cubic_residual_small(lo, width, shift):
    # cubic with a single root r in (lo, lo + width) and the others far away
    r = lo + 0.5 * width
    c = [1.0, -(r + 2 * (lo + width + shift)), 0.0, 0.0]
    r2 = r3 = lo + width + shift
    c = [1.0, -(r + r2 + r3), r * r2 + r * r3 + r2 * r3, -r * r2 * r3]
    z = cubic_root_in_interval(*c, lo, lo + width)
    scale = sum(abs(v) * max(1.0, abs(z)) ** (3 - i) for i, v in enumerate(c))
    assert lo < z < lo + width
    assert abs(((c[0] * z + c[1]) * z + c[2]) * z + c[3]) <= 1e-12 * scale


def test_invalid_constraints():
    with pytest.raises(ConstraintError):
        Affine([0.0, 0.0], 1.0)
    with pytest.raises(ConstraintError):
        Hyperslab([1.0], 1.0, 1.0)
    with pytest.raises(ConstraintError):
        Ball([0.0], 0.0)
    with pytest.raises(ConstraintError):
        Box(1.0, 0.0)
    with pytest.raises(ValueError):
        prox_box(np.zeros(2), Box(), 0.0, 1.0)


# --- properties ---------------------------------------------------------------

@pytest.mark.parametrize("kind", VARIANTS)
def test_interior_and_stationary(kind):
    rng = np.random.default_rng(20 + VARIANTS.index(kind))
    for _ in range(200):
        x, spec, mu, gamma = random_instance(kind, rng)
        r = prox(x, spec, mu, gamma, want_derivs=False)
        assert np.all(spec.margins(r.value) > 0)
        res = stationarity_residual(x, spec, mu, gamma, r.value)
        floor = 2.0 * stationarity_floor(x, spec, gamma * mu, r.value)
        assert res <= max(1e-9 * (1 + np.linalg.norm(x)), floor)


@pytest.mark.parametrize("kind", ["box", "ball"])
def test_near_boundary_root_keeps_margin_digits(kind):
    # the solution sits just inside a bound; building the margin from the
    # rounded cubic root used to cost up to ~1e8 ulps here
    if kind == "ball":
        x = np.array([4.210159332338463, 0.5992352481743264, 3.9358406206870606,
                      -1.3889010578835153, -3.396480254844418])
        spec = Ball([0.9191347936296642, 0.18762134408204362, 0.4424351000491452,
                     -0.07368468251391956, 0.8125837711053361], 1.3254100950378116)
        mu, gamma = 0.19196272781308066, 0.0010686697141371402
    else:
        x = np.array([-3.0, -0.5, 0.25, 4.0])
        spec = Box(0.0, 1.0)
        mu, gamma = 1e-9, 1.0
    r = prox(x, spec, mu, gamma, want_derivs=False)
    res = stationarity_residual(x, spec, mu, gamma, r.value)
    assert res <= 4.0 * stationarity_floor(x, spec, gamma * mu, r.value)


@pytest.mark.parametrize("kind", VARIANTS)
def test_matches_brute_force_minimizer(kind):
    rng = np.random.default_rng(7 + VARIANTS.index(kind))
    for i in range(40):
        x, spec, mu, gamma = random_instance(kind, rng, n=1 + i % 2)
        r = prox(x, spec, mu, gamma, want_derivs=False)
        np.testing.assert_allclose(r.value, brute_force_prox(x, spec, gamma * mu), atol=1e-6)


@pytest.mark.parametrize("kind", VARIANTS)
def test_derivatives_match_finite_differences(kind):
    rng = np.random.default_rng(100 + VARIANTS.index(kind))
    h = 1e-5
    for _ in range(100):
        x, spec, mu, gamma = random_instance(kind, rng, param_range=(0.2, 3.0))
        r = prox(x, spec, mu, gamma)
        v = rng.standard_normal(x.shape)
        fd = central_diff(lambda z: prox(z, spec, mu, gamma, False).value, x, v, h)
        assert rel_err(r.jac_x.matvec(v), fd) <= 1e-5
        fd = central_diff_scalar(lambda m: prox(x, spec, m, gamma, False).value, mu, h)
        assert rel_err(r.grad_mu, fd) <= 1e-5
        fd = central_diff_scalar(lambda g: prox(x, spec, mu, g, False).value, gamma, h)
        assert rel_err(r.grad_gamma, fd) <= 1e-5


@pytest.mark.parametrize("kind", ["affine", "hyperslab", "ball"])
def test_rank_one_jacobian_transpose(kind):
    rng = np.random.default_rng(5)
    x, spec, mu, gamma = random_instance(kind, rng, n=4, param_range=(0.2, 3.0))
    J = prox(x, spec, mu, gamma).jac_x
    w = rng.standard_normal(4)
    np.testing.assert_allclose(J.rmatvec(w), J.todense().T @ w, atol=1e-12)
    np.testing.assert_allclose(J.matvec(w), J.todense() @ w, atol=1e-12)


def test_hyperslab_sign_lemma():
    rng = np.random.default_rng(3)
    for _ in range(500):
        x, spec, mu, gamma = random_instance("hyperslab", rng)
        r = prox_hyperslab(x, spec, mu, gamma)
        lhs = spec.b_min + spec.b_max - 2 * r.kappa
        rhs = r.kappa - spec.a @ x
        assert lhs * rhs >= 0


def test_ball_radius_consistency():
    rng = np.random.default_rng(4)
    for _ in range(500):
        x, spec, mu, gamma = random_instance("ball", rng)
        r = prox_ball(x, spec, mu, gamma)
        assert abs(np.linalg.norm(r.value - spec.center) - r.kappa) <= 1e-10


def test_want_derivs_false_skips_derivatives():
    r = prox_box(np.array([0.2]), Box(), 0.1, 1.0, want_derivs=False)
    assert r.jac_x is None and r.grad_mu is None and r.grad_gamma is None


@pytest.mark.parametrize("gm", [1e-30, 3e-17, 1e-12])
def test_tiny_barrier_weight_returns_input(gm):
    # roots just outside +-1 can round into the interval at this scale
    x = np.linspace(0.001, 0.999, 101)
    r = prox_box(x, Box(), mu=gm, gamma=1.0)
    # displacement is about gm divided by the distance to the nearest bound
    np.testing.assert_allclose(r.value, x, atol=1e-12 + 2e3 * gm)
    assert np.all((r.value > 0) & (r.value < 1))
    s = prox_hyperslab(np.array([0.3, 0.2]), Hyperslab([1.0, 1.0], 0.0, 1.0), gm, 1.0)
    np.testing.assert_allclose(s.value, [0.3, 0.2], atol=1e-10)
