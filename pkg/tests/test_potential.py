import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layered_ac.potential import (
    HypothesisViolation,
    PotentialDomainError,
    chi,
    eval_W,
    grad_W,
    hess_W,
    make_potential,
    validate_hypotheses,
    well_constants,
)

DEFAULT = make_potential()
SCALAR = make_potential(alpha=0.0, gamma=1.0)
coord = st.floats(-2.0, 2.0, allow_nan=False)
alphas = st.floats(0.0, 3.0)
gammas = st.floats(0.05, 2.0)


def test_values_at_reference_points():
    assert eval_W(DEFAULT, [1.0, 0.0]) == 0.0
    assert eval_W(DEFAULT, [-1.0, 0.0]) == 0.0
    assert eval_W(DEFAULT, [0.0, 0.0]) == pytest.approx(5.0, abs=1e-14)
    assert eval_W(SCALAR, [0.0, 1.0]) == pytest.approx(3.0, abs=1e-14)


def test_gradient_vanishes_at_wells():
    for p in (DEFAULT, SCALAR, make_potential(alpha=1.3, gamma=0.7)):
        np.testing.assert_allclose(grad_W(p, [[1.0, 0.0], [-1.0, 0.0]]), 0.0, atol=1e-14)


def test_hessian_at_wells():
    np.testing.assert_allclose(hess_W(DEFAULT, [1.0, 0.0]), np.diag([40.0, 0.6]), atol=1e-12)
    np.testing.assert_allclose(hess_W(SCALAR, [1.0, 0.0]), np.diag([8.0, 2.0]), atol=1e-12)


def _fd_grad(p, xi, h=1e-6):
    e = np.eye(2) * h
    return np.array([(eval_W(p, xi + e[k]) - eval_W(p, xi - e[k])) / (2 * h) for k in range(2)])


def test_gradient_matches_finite_differences_at_sample_point():
    xi = np.array([0.5, 0.1])
    g = grad_W(DEFAULT, xi)
    fd = _fd_grad(DEFAULT, xi)
    assert np.max(np.abs(g - fd) / np.abs(g)) < 1e-7


def test_derivatives_match_finite_differences_at_random_points():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2.0, 2.0, (100, 2))
    h = 1e-5
    for p in (DEFAULT, SCALAR):
        g = grad_W(p, pts)
        H = hess_W(p, pts)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (eval_W(p, pts + e) - eval_W(p, pts - e)) / (2 * h)
            assert np.max(np.abs(g[:, k] - fd) / (np.abs(g[:, k]) + 1.0)) < 1e-6
            fdh = (grad_W(p, pts + e) - grad_W(p, pts - e)) / (2 * h)
            assert np.max(np.abs(H[:, :, k] - fdh) / (np.abs(H[:, :, k]) + 1.0)) < 1e-6


def test_poly_family_matches_builtin():
    poly = make_potential("poly", coeffs=DEFAULT.poly_coeffs())
    rng = np.random.default_rng(1)
    pts = rng.uniform(-2, 2, (50, 2))
    np.testing.assert_allclose(poly.value(pts), DEFAULT.value(pts), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(poly.grad(pts), DEFAULT.grad(pts), rtol=1e-12, atol=1e-11)
    np.testing.assert_allclose(poly.hess(pts), DEFAULT.hess(pts), rtol=1e-12, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(coord, coord, alphas, gammas)
def test_nonnegative_and_even(x, y, a, g):
    p = make_potential(alpha=a, gamma=g, R=3.0)
    w = eval_W(p, [x, y])
    assert w >= 0.0
    assert eval_W(p, [-x, y]) == w
    assert eval_W(p, [x, -y]) == w


@settings(max_examples=40, deadline=None)
@given(coord, coord)
def test_hessian_symmetric(x, y):
    H = hess_W(DEFAULT, [x, y])
    assert H[0, 1] == H[1, 0]


def test_chi_examples():
    assert chi(DEFAULT, [1.0, 0.0]) == 0.0
    assert chi(DEFAULT, [0.0, 0.0]) == pytest.approx(1.0)
    assert chi(DEFAULT, [2.0, 0.0]) == pytest.approx(1.0)


def test_non_finite_input_rejected():
    with pytest.raises(PotentialDomainError):
        eval_W(DEFAULT, [np.nan, 0.0])
    with pytest.raises(PotentialDomainError):
        grad_W(DEFAULT, [np.inf, 0.0])


def test_well_constants_defaults_and_scalar():
    wc = well_constants(DEFAULT)
    assert wc.lambda_min_plus == pytest.approx(0.6, abs=1e-12)
    assert 0.0 < wc.w_lower <= wc.w_upper
    assert 1e-3 <= wc.delta_bar <= 0.125
    assert well_constants(SCALAR).lambda_min_plus == pytest.approx(2.0, abs=1e-12)


def test_well_constant_sandwich_on_ball():
    p = DEFAULT
    wc = well_constants(p)
    rng = np.random.default_rng(2)
    r = wc.delta_bar * np.sqrt(rng.uniform(0, 1, 500))
    t = rng.uniform(0, 2 * np.pi, 500)
    pts = np.array([1.0, 0.0]) + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    c = chi(p, pts)
    W = eval_W(p, pts)
    assert np.all(wc.w_lower * c ** 2 <= W + 1e-15)
    assert np.all(W <= wc.w_upper * c ** 2 + 1e-15)
    assert np.all(np.linalg.norm(grad_W(p, pts), axis=1) <= 2 * wc.w_upper * c + 1e-15)
    eig = np.linalg.eigvalsh(hess_W(p, pts))
    assert eig.min() >= 2 * wc.w_lower - 1e-12
    assert eig.max() <= 2 * wc.w_upper + 1e-12


def test_well_constants_reject_degenerate_well():
    with pytest.raises(HypothesisViolation):
        well_constants(make_potential(alpha=2.0, gamma=0.0))


@pytest.mark.parametrize("a,g", [(0.0, 1.0), (2.0, 0.3), (1.0, 0.1), (3.0, 2.0)])
def test_hypotheses_hold_for_builtin_family(a, g):
    rep = validate_hypotheses(make_potential(alpha=a, gamma=g), n_samples=81)
    assert rep.all_passed, rep.lines()


def test_zero_gamma_fails_well_hypothesis():
    rep = validate_hypotheses(make_potential(alpha=2.0, gamma=0.0), n_samples=81)
    assert not rep.passed["W1"]
    assert rep.passed["W3"]


def test_misplaced_wells_fail_only_well_hypothesis():
    # W = (xi2^2 - 1)^2 + xi1^2 + xi1^4 has its zeros at (0, +-1), not at (+-1, 0)
    p = make_potential("poly", coeffs=[(0, 2, 1.0), (0, 1, -2.0), (0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0)])
    rep = validate_hypotheses(p, n_samples=81)
    assert not rep.passed["W1"]
    assert rep.passed["W3"]
    assert rep.passed["W2"]
