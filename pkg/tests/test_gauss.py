import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geotasknet.gauss import Frame, Gaussian, affine_transform, floor_eigenvalues, log_pdf, pdf, product, regularize
from oracles import mvn_pdf, random_spd


def test_standard_normal_peak():
    assert pdf(Gaussian([0.0], [[1.0]]), [0.0]) == pytest.approx(0.3989422804, abs=1e-10)


def test_bivariate_standard_normal_peak():
    assert pdf(Gaussian([0.0, 0.0], np.eye(2)), [0.0, 0.0]) == pytest.approx(0.1591549431, abs=1e-10)


def test_pdf_matches_high_precision_formula(rng):
    mpmath.mp.dps = 40
    for _ in range(20):
        mean = rng.standard_normal(3)
        cov = random_spd(rng, 3)
        x = mean + rng.standard_normal(3)
        S = mpmath.matrix(cov.tolist())
        diff = mpmath.matrix((x - mean).tolist())
        quad = (diff.T * S ** -1 * diff)[0]
        ref = mpmath.exp(-quad / 2) / mpmath.sqrt((2 * mpmath.pi) ** 3 * mpmath.det(S))
        got = pdf(Gaussian(mean, cov), x)
        assert abs(got - float(ref)) / float(ref) < 1e-10


def test_log_pdf_agrees_with_pdf(rng):
    g = Gaussian(rng.standard_normal(2), random_spd(rng, 2))
    x = rng.standard_normal(2)
    assert np.exp(log_pdf(g, x)) == pytest.approx(pdf(g, x), rel=1e-12)


@pytest.mark.parametrize("cov", [[[1.0, 0.5], [0.4, 1.0]], [[1.0, 2.0], [2.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]]])
def test_invalid_covariances_rejected(cov):
    with pytest.raises(ValueError):
        Gaussian([0.0, 0.0], cov)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        Gaussian([0.0, 0.0, 0.0], np.eye(2))
    with pytest.raises(ValueError):
        pdf(Gaussian([0.0], [[1.0]]), [0.0, 1.0])


def test_affine_closure():
    g = affine_transform(Gaussian([1.0, 0.0], np.eye(2)), Frame(2 * np.eye(2), [0.0, 1.0]))
    np.testing.assert_allclose(g.mean, [2.0, 1.0])
    np.testing.assert_allclose(g.cov, 4 * np.eye(2))


def test_identity_frame_is_noop(rng):
    g = Gaussian(rng.standard_normal(3), random_spd(rng, 3))
    h = affine_transform(g, Frame.identity(3))
    np.testing.assert_array_equal(h.mean, g.mean)
    np.testing.assert_allclose(h.cov, g.cov, atol=1e-15)


def test_singular_frame_rejected():
    with pytest.raises(ValueError):
        Frame(np.zeros((2, 2)), np.zeros(2))


def test_change_of_variables(rng):
    g = Gaussian(rng.standard_normal(2), random_spd(rng, 2))
    th = rng.uniform(-np.pi, np.pi)
    A = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]) * 1.7
    f = Frame(A, rng.standard_normal(2))
    h = affine_transform(g, f)
    for x in rng.standard_normal((100, 2)):
        expected = mvn_pdf(x, g.mean, g.cov) / abs(np.linalg.det(A))
        assert abs(h.pdf(f.to_global(x)) - expected) / expected < 1e-9


def test_product_of_equal_variances_averages():
    g, _ = product([Gaussian([0.0], [[1.0]]), Gaussian([2.0], [[1.0]])])
    np.testing.assert_allclose(g.mean, [1.0])
    np.testing.assert_allclose(g.cov, [[0.5]])


def test_product_of_one_is_identity(rng):
    g0 = Gaussian(rng.standard_normal(2), random_spd(rng, 2))
    g, ls = product([g0])
    assert g is g0 and ls == 0.0


def test_product_empty_rejected():
    with pytest.raises(ValueError):
        product([])


def _pointwise_ok(gs, rng, n=50):
    g, ls = product(gs)
    d = gs[0].dim
    for x in g.mean + rng.standard_normal((n, d)):
        lhs = np.prod([mvn_pdf(x, h.mean, h.cov) for h in gs])
        rhs = np.exp(ls) * mvn_pdf(x, g.mean, g.cov)
        assert abs(lhs - rhs) / lhs < 1e-9


def test_product_pointwise_identity(rng):
    for _ in range(5):
        _pointwise_ok([Gaussian(rng.standard_normal(2), random_spd(rng, 2)) for _ in range(2)], rng)


def _gaussians(d, n):
    vec = st.lists(st.floats(-3, 3), min_size=d, max_size=d)
    eig = st.lists(st.floats(0.2, 3.0), min_size=d, max_size=d)
    ang = st.floats(-np.pi, np.pi)
    return st.lists(st.tuples(vec, eig, ang), min_size=n, max_size=n)


def _build(spec):
    out = []
    for mean, eig, a in spec:
        d = len(mean)
        R = np.eye(d)
        R[:2, :2] = [[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]]
        out.append(Gaussian(mean, (R * eig) @ R.T))
    return out


@settings(max_examples=50, deadline=None)
@given(_gaussians(2, 3))
def test_product_commutative_and_associative(spec):
    a, b, c = _build(spec)
    abc, _ = product([a, b, c])
    cba, _ = product([c, b, a])
    ab, _ = product([a, b])
    ab_c, _ = product([ab, c])
    for g in (cba, ab_c):
        np.testing.assert_allclose(g.mean, abc.mean, atol=1e-9)
        np.testing.assert_allclose(g.cov, abc.cov, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(_gaussians(2, 3))
def test_product_only_shrinks(spec):
    gs = _build(spec)
    g, _ = product(gs)
    bound = min(np.linalg.eigvalsh(h.cov)[-1] for h in gs)
    assert np.linalg.eigvalsh(g.cov)[-1] <= bound + 1e-12


@settings(max_examples=50, deadline=None)
@given(_gaussians(3, 1), st.floats(-np.pi, np.pi), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.floats(0.5, 2.0))
def test_affine_roundtrip(spec, a, b, scale):
    (g,) = _build(spec)
    A = np.eye(3) * scale
    A[:2, :2] = scale * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    f = Frame(A, b)
    back = affine_transform(affine_transform(g, f), f.inverse())
    np.testing.assert_allclose(back.mean, g.mean, atol=1e-9)
    np.testing.assert_allclose(back.cov, g.cov, atol=1e-9)


def test_regularize_adds_ridge_only_when_needed(rng):
    good = random_spd(rng, 3)
    np.testing.assert_allclose(regularize(good), good)
    fixed = regularize(np.zeros((3, 3)))
    assert np.linalg.eigvalsh(fixed)[0] > 0


def test_floor_eigenvalues():
    out = floor_eigenvalues(np.diag([1e-8, 2.0]), 1e-4)
    np.testing.assert_allclose(np.linalg.eigvalsh(out), [1e-4, 2.0])
